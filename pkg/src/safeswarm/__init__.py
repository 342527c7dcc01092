"""Safe, scalable multi-agent particle RL with graph-attention policies."""

__version__ = "0.1.0"
