"""Reverse-mode differentiation over dense float64 arrays."""
