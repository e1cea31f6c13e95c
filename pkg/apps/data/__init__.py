"""Sine and ECG corpora, CSV I/O and batching."""
