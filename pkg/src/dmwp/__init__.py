"""Diversity-aware training of math word problem solvers with solution buffers."""

__version__ = "0.1.0"
