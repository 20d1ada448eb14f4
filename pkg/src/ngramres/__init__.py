"""Kneser-Ney n-gram models fused at the logits level with a small recurrent LM."""

__version__ = "0.1.0"
