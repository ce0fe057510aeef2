"""Integration tests for the gprwi package."""
