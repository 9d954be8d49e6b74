"""Two-stream video gesture recognition on a numpy autodiff engine."""

__version__ = "0.1.0"
