"""Expert Merging toolkit: learned-coefficient model merging on tiny transformers."""

__version__ = "0.1.0"
