"""Optimal baseline, benchmark sweeps, reports and the command-line entry point."""
