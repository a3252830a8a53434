"""Operational surface: data, checkpoints, pipeline, sweep and CLI."""
