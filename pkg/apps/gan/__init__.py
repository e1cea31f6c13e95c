"""GAN architectures, adversarial losses, Adam and the training loop."""
