"""Multilingual graph-to-text verbalisation with a graph attention encoder
and a Transformer decoder, written on a small numpy autodiff core."""

__version__ = "0.1.0"
