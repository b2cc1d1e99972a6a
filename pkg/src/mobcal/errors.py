"""Exception types shared across the pipeline.

InputError maps to CLI exit code 1, InvariantError to exit code 2.
"""


class InputError(Exception):
    """Bad user input: unreadable file, malformed config, unknown id."""


class InvariantError(Exception):
    """An internal consistency guarantee was violated; indicates a bug."""
