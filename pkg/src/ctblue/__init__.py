"""Continuous-time BLUE construction and verification."""
