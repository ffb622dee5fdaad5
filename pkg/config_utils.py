import json
import os
import shutil
import tempfile
import uuid
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

from logger_utils import get_logger
from version import CONFIG_VERSION


log = get_logger(__name__)

MAX_BACKUPS = 10
BACKUP_DIR = "backups"
ENV_THREADS = "SHULL_THREADS"


class ConfigError(ValueError):
    """Base error for invalid run configuration or unsafe config writes."""


class UnsupportedConfigVersionError(ConfigError):
    """Raised when a file was written by a newer release."""


def backup_file(path: Path, keep: int = MAX_BACKUPS) -> Path:
    """Copy ``path`` into the sibling backups folder and keep only the newest ``keep`` copies."""
    folder = path.parent / BACKUP_DIR
    folder.mkdir(parents=True, exist_ok=True)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    destination = folder / f"{path.stem}_{stamp}_{uuid.uuid4().hex[:8]}.json"
    shutil.copyfile(path, destination)

    # names sort by UTC stamp
    for stale in sorted(folder.glob(f"{path.stem}_*.json"), reverse=True)[keep:]:
        try:
            stale.unlink()
        except OSError as exc:
            log.warning("Could not remove old backup %s: %s", stale, exc)
    return destination


def _version_of(data: Any, what: str) -> int:
    if not isinstance(data, dict):
        raise ConfigError(f"{what}: JSON root must be an object")
    version = data.get("version", 0)
    if isinstance(version, bool) or not isinstance(version, int):
        raise ConfigError(f"{what}: version must be an integer, got {version!r}")
    return version


def _existing_version(target: Path) -> Optional[int]:
    if not target.exists():
        return None
    try:
        existing = json.loads(target.read_text(encoding="utf-8"))
    except (OSError, UnicodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"Refusing to overwrite invalid file '{target}': {exc}") from exc
    return _version_of(existing, f"Refusing to overwrite invalid file '{target}'")


def atomic_write_json(
    path: str | os.PathLike[str],
    payload: dict[str, Any],
    *,
    keep_backup: bool = True,
) -> None:
    """Replace ``path`` with ``payload`` in one rename, after a read-back check.

    A file written by a newer release, or one that does not parse, is never
    overwritten. The previous contents go to ``backups/`` unless ``keep_backup``
    is false.
    """
    version = _version_of(payload, "Payload")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    current = _existing_version(target)
    if current is not None and current > version:
        raise UnsupportedConfigVersionError(f"'{target}' is v{current}, newer than v{version}")

    text = json.dumps(payload, indent=2, ensure_ascii=False)
    fd, temp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    temp_path = Path(temp_name)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        if json.loads(temp_path.read_text(encoding="utf-8")) != json.loads(text):
            raise ConfigError(f"Verification failed while writing '{target}'")
        if keep_backup and current is not None:
            backup_file(target)
        os.replace(temp_path, target)
    finally:
        temp_path.unlink(missing_ok=True)


def _require_number(data: dict[str, Any], key: str, *, positive: bool = True) -> float:
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{key}' must be a number, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"'{key}' must be positive, got {value!r}")
    return float(value)


def _require_count(data: dict[str, Any], key: str, *, minimum: int = 0) -> Optional[int]:
    value = data[key]
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"'{key}' must be an integer >= {minimum}, got {value!r}")
    return value


@dataclass
class RunDefaults:
    oversample: float = 10.0
    seed: int = 42
    relax_iters: int = 32
    alpha: float = 1.0
    dt: float = 1e-12
    cg_tol: float = 1e-12
    cg_maxit: Optional[int] = None
    lebesgue_samples: int = 10000
    threads: Optional[int] = None

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunDefaults":
        if not isinstance(data, dict):
            raise ConfigError("Run defaults must be an object")
        known = {item.name for item in fields(cls)}
        for key in sorted(set(data) - known):
            log.warning("Ignoring unknown run default '%s'", key)
        values = cls().to_dict()
        values.update({key: data[key] for key in known if key in data})

        result = cls(
            oversample=_require_number(values, "oversample"),
            seed=_require_count(values, "seed"),
            relax_iters=_require_count(values, "relax_iters"),
            alpha=_require_number(values, "alpha"),
            dt=_require_number(values, "dt"),
            cg_tol=_require_number(values, "cg_tol"),
            cg_maxit=_require_count(values, "cg_maxit", minimum=1),
            lebesgue_samples=_require_count(values, "lebesgue_samples", minimum=1),
            threads=_require_count(values, "threads", minimum=1),
        )
        if result.oversample < 2.0:
            raise ConfigError(f"'oversample' must be at least 2, got {result.oversample}")
        if result.seed is None or result.relax_iters is None or result.lebesgue_samples is None:
            raise ConfigError("'seed', 'relax_iters' and 'lebesgue_samples' cannot be null")
        return result


def load_run_defaults(path: str | os.PathLike[str] | None = None) -> RunDefaults:
    if path is None:
        defaults = RunDefaults()
    else:
        target = Path(path)
        try:
            with target.open("r", encoding="utf-8") as handle:
                loaded = json.load(handle)
        except (OSError, UnicodeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"Could not read config '{target}': {exc}") from exc
        version = _version_of(loaded, f"Config '{target}'")
        if version > CONFIG_VERSION:
            raise UnsupportedConfigVersionError(
                f"Config '{target}' is v{version}; this build supports v{CONFIG_VERSION}"
            )
        defaults = RunDefaults.from_dict(loaded.get("defaults", {}))
        log.debug("Loaded run defaults from %s", target)

    env_threads = thread_count_from_env()
    if env_threads is not None:
        defaults.threads = env_threads
    return defaults


def save_run_defaults(path: str | os.PathLike[str], defaults: RunDefaults) -> None:
    atomic_write_json(path, {"version": CONFIG_VERSION, "defaults": defaults.to_dict()})
    log.info("Wrote run defaults %s", path)


def thread_count_from_env() -> Optional[int]:
    raw = os.getenv(ENV_THREADS, "").strip()
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        log.warning("Ignoring %s=%r: not an integer", ENV_THREADS, raw)
        return None
    if value < 1:
        log.warning("Ignoring %s=%r: must be positive", ENV_THREADS, raw)
        return None
    return value


def thread_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env_value = thread_count_from_env()
    if env_value is not None:
        return env_value
    return max(1, os.cpu_count() or 1)
