"""Core settings, run configuration, exceptions and the numeric kernel."""
