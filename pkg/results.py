"""
Result persistence: atomic file writes, CSV tables and the run manifest.

Every command writes its tables through these helpers so that a rerun with
the same configuration reproduces byte-identical CSV files.
"""
import json
import logging
import os
import tempfile
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from errors import DataError

logger = logging.getLogger(__name__)

PACKAGE_NAME = "gsi-softimpute"
MANIFEST_NAME = "manifest.json"
FLOAT_FORMAT = "%.10g"


def tool_version():
    try:
        return version(PACKAGE_NAME)
    except PackageNotFoundError:
        return "0.1.0"


def atomic_write_text(path, text):
    """Write text to a temporary file next to path, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(handle, "w", newline="") as stream:
            stream.write(text)
        os.replace(temp_name, path)
    except OSError as exc:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise DataError(f"could not write {path}: {exc}") from exc
    logger.debug(f"Wrote {path}")
    return path


def write_csv(frame, path, columns=None):
    """Write a DataFrame with a fixed column order and float format."""
    if columns is not None:
        frame = frame.reindex(columns=list(columns))
    text = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, text)


def write_json(payload, path):
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


@dataclass
class RunManifest:
    command: str
    config: dict
    tool_version: str = field(default_factory=tool_version)
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    stage_seconds: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    @contextmanager
    def stage(self, name):
        """Time a pipeline stage; repeated names accumulate."""
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.stage_seconds[name] = self.stage_seconds.get(name, 0.0) + elapsed
            logger.info(f"Stage {name} finished in {elapsed:.2f}s")

    def to_dict(self):
        return {
            "command": self.command,
            "config": self.config,
            "tool_version": self.tool_version,
            "started_at": self.started_at,
            "stage_seconds": self.stage_seconds,
            "diagnostics": self.diagnostics,
            "outputs": sorted(self.outputs),
        }

    def save(self, out_dir):
        return write_json(self.to_dict(), Path(out_dir) / MANIFEST_NAME)


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"could not read manifest {path}: {exc}") from exc
