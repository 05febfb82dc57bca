"""One-class learning for synthetic voice spoofing detection."""

__version__ = "0.1.0"
