import os
import sys
import tempfile
import logging
import threading
from contextlib import contextmanager
from pathlib import Path

from pythonjsonlogger import jsonlogger

logger = logging.getLogger(__name__)

THREADS_ENV_VAR = "GRAVNET_THREADS"
CONSOLE_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
JSON_FORMAT = '%(asctime)s %(levelname)s %(name)s %(message)s'


class GravnetError(Exception):
    """Base exception for every error raised by this package."""
    pass


class ArgumentError(GravnetError, ValueError):
    """An operation was called with arguments outside its contract."""
    pass


class NumericalDomainError(GravnetError, ArithmeticError):
    """A computation would produce non-finite values."""
    pass


class ConfigurationError(GravnetError):
    """Configuration is inconsistent with the requested operation."""
    pass


class UsageError(GravnetError):
    """Command-line usage problem."""
    pass


class FormatError(GravnetError):
    """Binary file could not be decoded. `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def setup_logging(level: str = "INFO", json_logs: bool = False, log_file: str | None = None) -> logging.Logger:
    """
    Configures the root logger for command-line runs.

    Args:
        level: Logging level name.
        json_logs: Emit console records as JSON (python-json-logger) instead of plain text.
        log_file: Optional path of a file that receives JSON records.

    Returns:
        The configured root logger.
    """
    root = logging.getLogger()
    # Clear any existing handlers to prevent duplicate logging
    if root.handlers:
        root.handlers.clear()

    stream_handler = logging.StreamHandler(sys.stderr)
    if json_logs:
        stream_handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
    else:
        stream_handler.setFormatter(logging.Formatter(CONSOLE_FORMAT))
    root.addHandler(stream_handler)

    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
        root.addHandler(file_handler)

    root.setLevel(level.upper())
    return root


_thread_lock = threading.Lock()
_thread_count: int | None = None


def _threads_from_env() -> int:
    raw = os.getenv(THREADS_ENV_VAR)
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV_VAR}={raw!r}")
        return 1
    return max(1, value)


def get_thread_count() -> int:
    """Returns the global worker cap (GRAVNET_THREADS unless overridden by set_thread_count)."""
    with _thread_lock:
        if _thread_count is None:
            return _threads_from_env()
        return _thread_count


def set_thread_count(count: int | None) -> None:
    """Overrides the global worker cap. None restores the environment default."""
    global _thread_count
    if count is not None and count < 1:
        raise ArgumentError(f"thread count must be >= 1, got {count}")
    with _thread_lock:
        _thread_count = count


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> Path:
    """
    Writes payload to path through a temporary file in the same directory followed by a rename.

    Args:
        path: Destination file.
        payload: Bytes to write.

    Returns:
        The destination path.

    Raises:
        GravnetError: If the file cannot be written.
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    except OSError as e:
        raise GravnetError(f"Failed to create temporary file next to {target}: {e}") from e

    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, target)
    except OSError as e:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise GravnetError(f"Failed to write {target}: {e}") from e

    logger.debug(f"Wrote {len(payload)} bytes to {target}")
    return target


@contextmanager
def thread_count_override(count: int | None):
    """Temporarily replaces the global worker cap, restoring the previous setting on exit."""
    global _thread_count
    if count is not None and count < 1:
        raise ArgumentError(f"thread count must be >= 1, got {count}")
    with _thread_lock:
        previous = _thread_count
        _thread_count = count
    try:
        yield
    finally:
        with _thread_lock:
            _thread_count = previous
