"""Exception taxonomy.

Three broad families matter to callers: input/validation problems (CLI exit
code 2, HTTP 4xx), I/O and persistence problems (exit code 1), and backend
failures (exit code 3, HTTP 502). Everything raised by this package derives
from CoopRagError so integrations can catch one root.
"""


class CoopRagError(Exception):
    """Root of all errors raised by coop_rag."""


# --- input / validation -----------------------------------------------------


class InputError(CoopRagError):
    """Caller-supplied value violates a documented precondition."""


class EmptyTextError(InputError):
    """Text input was empty or whitespace-only where content is required."""


class MalformedRecordError(InputError):
    """A structured record (JSONL line, config key) failed validation."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number


class DuplicateIdError(InputError):
    """An identifier that must be unique appeared more than once."""

    def __init__(self, duplicate_id: str, message: str | None = None):
        super().__init__(message or f"duplicate id: {duplicate_id!r}")
        self.duplicate_id = duplicate_id


class DimensionMismatchError(InputError):
    """Vector dimensions disagree with the configured/index dimensions."""


class UnknownSessionError(InputError):
    """Referenced session_id (or turn index) does not exist."""


class UnknownChunkError(InputError):
    """Referenced chunk_id is not present in the index."""


class EmptyIndexError(InputError):
    """Operation requires a non-empty index."""


# --- persistence ------------------------------------------------------------


class PersistenceError(CoopRagError):
    """Index or report files are missing, unreadable, or corrupt."""


class MissingManifestError(PersistenceError):
    pass


class ChecksumError(PersistenceError):
    """Stored checksum does not match file contents."""


# --- remote backends --------------------------------------------------------


class BackendError(CoopRagError):
    """A pluggable backend (embedding, generation, vision) failed."""

    def __init__(self, message: str, backend: str = ""):
        super().__init__(message)
        self.backend = backend


class BackendTransportError(BackendError):
    """Network-level failure reaching the backend."""


class BackendStatusError(BackendError):
    """Backend answered with a non-2xx HTTP status."""

    def __init__(self, message: str, backend: str = "", status_code: int = 0):
        super().__init__(message, backend)
        self.status_code = status_code


class BackendResponseError(BackendError):
    """Backend answered 2xx but the payload violates the wire contract."""
