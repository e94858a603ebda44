"""Few-shot object counting by spatial similarity learning, on a small numpy autograd core."""

__version__ = "0.1.0"
