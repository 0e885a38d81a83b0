"""Functional tests package."""
