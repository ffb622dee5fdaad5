import atexit
import logging
import os
import queue
import sys
import tempfile
import time
from contextlib import contextmanager
from logging.handlers import QueueHandler, QueueListener, RotatingFileHandler
from typing import Optional

import numpy as np

from version import APP_VERSION


APP_NAME = "SHull"
ENV_LEVEL = "SHULL_LOG_LEVEL"
ENV_CONSOLE = "SHULL_CONSOLE"
ENV_LOG_DIR = "SHULL_LOG_DIR"

MAIN_LOG_BYTES = 5_000_000
MAIN_LOG_COUNT = 7
ERROR_LOG_BYTES = 2_000_000
ERROR_LOG_COUNT = 5
NO_RUN = "-"

FILE_FORMAT = "%(asctime)s | %(levelname)-8s | %(app)s v%(version)s | run=%(run)s | %(name)s:%(lineno)d | %(threadName)s | %(message)s"
CONSOLE_FORMAT = "%(levelname)s | %(name)s | %(message)s"

_listener: Optional[QueueListener] = None
_console: Optional[logging.Handler] = None
_paths: tuple = (None, None)
_run = NO_RUN


class RunContextFilter(logging.Filter):
    """Stamps the application, version and current subcommand on each record."""

    def filter(self, record: logging.LogRecord) -> bool:
        record.app = APP_NAME
        record.version = APP_VERSION
        record.run = _run
        return True


def set_run_context(command: Optional[str]) -> None:
    global _run
    _run = command or NO_RUN


def _log_dir() -> str:
    for path in (
        os.getenv(ENV_LOG_DIR, ""),
        os.path.join(os.path.expanduser("~"), ".shull", "logs"),
        os.path.join(tempfile.gettempdir(), APP_NAME, "Logs"),
    ):
        if not path:
            continue
        try:
            os.makedirs(path, exist_ok=True)
            marker = os.path.join(path, ".write_test")
            with open(marker, "w", encoding="utf-8") as handle:
                handle.write("ok")
            os.remove(marker)
            return path
        except OSError:
            continue
    raise OSError("no writable log directory")


def _file_handlers(level: int) -> list:
    global _paths
    log_dir = _log_dir()
    main_path = os.path.join(log_dir, f"{APP_NAME}.log")
    error_path = os.path.join(log_dir, f"{APP_NAME}.error.log")

    main = RotatingFileHandler(main_path, maxBytes=MAIN_LOG_BYTES, backupCount=MAIN_LOG_COUNT, encoding="utf-8")
    main.setLevel(level)
    errors = RotatingFileHandler(error_path, maxBytes=ERROR_LOG_BYTES, backupCount=ERROR_LOG_COUNT, encoding="utf-8")
    errors.setLevel(logging.ERROR)

    _paths = (main_path, error_path)
    return [main, errors]


def _level_number(level: str) -> int:
    number = logging.getLevelName(level.upper())
    if not isinstance(number, int):
        raise ValueError(f"Unknown log level: {level}")
    return number


def init_logging(level: Optional[str] = None, console: Optional[bool] = None) -> logging.Logger:
    """Route the SHull logger tree through a queue to rotating files and, optionally, stderr."""
    global _listener, _console
    name = level or os.getenv(ENV_LEVEL, "INFO")
    try:
        lvl = _level_number(name)
    except ValueError:
        lvl = logging.INFO
    if console is None:
        console = os.getenv(ENV_CONSOLE, "0") == "1"

    handlers = []
    try:
        handlers.extend(_file_handlers(lvl))
    except OSError as exc:
        sys.stderr.write(f"{APP_NAME}: file logging disabled ({exc})\n")
        console = True
    for handler in handlers:
        handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt="%Y-%m-%d %H:%M:%S"))

    _console = None
    if console:
        _console = logging.StreamHandler(stream=sys.stderr)
        _console.setLevel(lvl)
        _console.setFormatter(logging.Formatter(CONSOLE_FORMAT))
        handlers.append(_console)
    for handler in handlers:
        handler.addFilter(RunContextFilter())

    if _listener is not None:
        _listener.stop()
    records = queue.Queue(-1)
    _listener = QueueListener(records, *handlers, respect_handler_level=True)
    _listener.start()

    base = logging.getLogger(APP_NAME)
    base.setLevel(lvl)
    base.propagate = False
    base.handlers.clear()
    base.addHandler(QueueHandler(records))

    sys.excepthook = _log_uncaught
    atexit.register(_shutdown)
    base.debug("Logging initialized at %s, files %s", logging.getLevelName(lvl), _paths[0])
    return base


def _shutdown() -> None:
    try:
        if _listener is not None:
            _listener.stop()
    finally:
        logging.shutdown()


def _log_uncaught(exc_type, exc_value, exc_traceback) -> None:
    if not issubclass(exc_type, KeyboardInterrupt):
        logging.getLogger(APP_NAME).critical("Uncaught exception", exc_info=(exc_type, exc_value, exc_traceback))
    sys.__excepthook__(exc_type, exc_value, exc_traceback)


def set_level(level: str) -> None:
    lvl = _level_number(level)
    base = logging.getLogger(APP_NAME)
    base.setLevel(lvl)
    if _listener is not None:
        for handler in _listener.handlers:
            if handler.level != logging.ERROR or handler is _console:
                handler.setLevel(lvl)
    base.debug("Logging level changed to %s", logging.getLevelName(lvl))


def get_logger(name: Optional[str] = None) -> logging.Logger:
    if not name:
        return logging.getLogger(APP_NAME)
    return logging.getLogger(f"{APP_NAME}.{name}")


def log_file_paths() -> tuple:
    """(main log, error log); both None while file logging is disabled."""
    return _paths


@contextmanager
def timed(logger: logging.Logger, what: str):
    start = time.perf_counter()
    yield
    logger.info("%s finished in %.3f s", what, time.perf_counter() - start)


@contextmanager
def numpy_warnings_logged(logger: logging.Logger):
    """Report numpy floating-point faults as log warnings instead of RuntimeWarnings."""

    def report(kind: str, flag: int) -> None:
        logger.warning("Floating-point %s in numpy (flag %d)", kind, flag)

    with np.errstate(call=report, divide="call", over="call", invalid="call"):
        yield


init_logging()
