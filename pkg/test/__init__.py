"""Test package for heterosim."""
