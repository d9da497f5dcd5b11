"""Adaptive randomized HSS compression."""
