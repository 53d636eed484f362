"""Cross-validated infrastructure verification with a verifier and a tool-generation agent."""

__version__ = "0.1.0"
