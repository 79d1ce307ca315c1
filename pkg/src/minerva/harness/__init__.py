"""Scenario loading, experiment runs, reward settlement and reports."""
