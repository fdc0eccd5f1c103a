"""Local, privacy-preserving clinical acronym disambiguation: corpus tooling,
single-pass and cascaded inference against local model servers, and scoring."""

__version__ = "0.1.0"
