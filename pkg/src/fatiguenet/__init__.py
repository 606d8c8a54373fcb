"""Cross-subject sEMG muscle-fatigue detection."""
__version__ = "0.1.0"
