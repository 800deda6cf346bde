"""Co-investment network learning from pairwise price/volume evidence."""

__version__ = "0.1.0"
