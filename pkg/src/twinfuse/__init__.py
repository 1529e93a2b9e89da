"""Multi-algorithm, multi-modal twin identification with hierarchical score-level fusion."""

__version__ = "0.1.0"
