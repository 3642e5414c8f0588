"""Bar-patched ABC-notation modelling: parsing, task data, a hierarchical encoder-decoder, metrics."""

__version__ = "0.1.0"
