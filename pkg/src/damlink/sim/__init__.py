"""Modem, scenarios, Monte Carlo runner and command line."""
