"""Domain packages of the time-series GAN lab."""
