"""Shared exception root so callers can catch any library failure at once."""


class PassthruError(Exception):
    """Base class for all errors raised by this package."""
