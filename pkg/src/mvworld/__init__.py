"""Multi-agent multi-view video world model with an exact gridworld testbed."""

__version__ = "0.1.0"
