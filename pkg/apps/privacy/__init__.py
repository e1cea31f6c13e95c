"""Presence-disclosure audit of a synthetic corpus."""
