"""Error type shared across the package.

Every failure that a caller can act on carries a stable machine-readable
code (``E_BAD_LINE``, ``E_UNKNOWN_TOKEN``, ...). The CLI prints these codes
verbatim and maps them to exit status 2; genuine programming errors keep
raising the usual built-in exceptions.
"""

from __future__ import annotations


class CodedError(Exception):
    """Exception with a stable error code.

    ``code`` is a short upper-case identifier; ``message`` adds context
    (offending line, token, file position).
    """

    def __init__(self, code: str, message: str):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}")
