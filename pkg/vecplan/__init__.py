"""Learn vectorized planning models from partially observed traces and plan with them."""

__version__ = "0.1.0"
