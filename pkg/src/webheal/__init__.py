"""Self-healing web proxy: error-driven HTML and JavaScript response rewriting."""

__version__ = "0.1.0"
