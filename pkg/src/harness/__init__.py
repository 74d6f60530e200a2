"""Batch orchestration, persistence and plot-data export."""
