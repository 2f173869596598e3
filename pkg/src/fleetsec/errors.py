"""Shared exception base for the fleetsec package.

Every module defines its own exception classes near the code that raises
them; they all derive from FleetsecError so callers can catch the whole
family at integration boundaries (CLI, simulator).
"""


class FleetsecError(Exception):
    """Base class for all fleetsec errors."""
