"""tracelab: requirements-to-code traceability link recovery workbench."""

__version__ = "0.1.0"
