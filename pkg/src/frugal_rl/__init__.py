"""Cost-aware reinforcement learning with explicit measurement costs."""

__version__ = "0.1.0"
