"""Shared exception types."""


class SizeError(ValueError):
    """Shape / dimension mismatch between operands."""


class ContractError(ValueError):
    """An operation was called outside its documented domain."""


class FormatError(ValueError):
    """A file on disk does not match its expected binary/textual format."""
