"""Alternating query/document attention reader for Cloze-style
comprehension, built on a self-contained reverse-mode autodiff core."""

__version__ = "0.1.0"
