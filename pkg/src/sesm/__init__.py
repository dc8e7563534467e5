"""Cycle-approximate multi-tenant inference-accelerator simulator with a
threat-model-driven compiler and a bandwidth side-channel attack harness."""

__version__ = "0.1.0"
