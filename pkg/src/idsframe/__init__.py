"""Three-stage network intrusion detection."""
__version__ = "0.1.0"
