"""Passage-informed document retrieval and learning-to-rank toolkit."""

__version__ = "0.1.0"
