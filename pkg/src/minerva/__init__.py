"""Hybrid-consensus simulation: a committee-run BFT fastchain whose members are
elected by fruit merit on a proof-of-work fruitchain."""

__version__ = "0.1.0"
