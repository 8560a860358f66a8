"""coop-rag: hybrid-retrieval consultation engine with grounded generation.

See README.md for the CLI, HTTP API, and evaluation harness entry points.
"""

__version__ = "0.1.0"
