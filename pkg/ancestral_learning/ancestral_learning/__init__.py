"""Learn ancestral causal relations between variable pairs from partially known ones."""

__version__ = "0.1.0"
