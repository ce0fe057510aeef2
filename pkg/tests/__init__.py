"""Test suite for the gprwi package."""
