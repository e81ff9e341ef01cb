"""Walker motion decoding: RGB-D temporal encoding, CNN classifiers with
channel attention, depth-based human masks, focus auditing, and online trial
simulation with debounced post-processing."""

__version__ = "0.1.0"

from . import data, encoder, errors, focus, masks, metrics, models, simulate, train

__all__ = [
    "__version__",
    "data",
    "encoder",
    "errors",
    "focus",
    "masks",
    "metrics",
    "models",
    "simulate",
    "train",
]
