"""Trainer and scorer for trajectory-to-equation decoding.

The package is deliberately decoupled from the data factory: it consumes
the corpus JSONL, the vocabulary JSON, and speaks the scorer wire
protocol, and nothing else.  Swapping the factory out for anything that
emits the same files keeps the trainer working unchanged.
"""

__all__ = ["__version__"]

__version__ = "0.1.0"
