"""Tests for the tether-net capture toolkit."""
