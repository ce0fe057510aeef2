"""Unit tests for the gprwi package."""
