"""Contract tests for the gprwi package."""
