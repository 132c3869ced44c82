__all__ = ["RunManifest", "version_string"]

import subprocess
from datetime import datetime
from functools import cache
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field

from src._compat import UTC
from src.logging_ import logger

BASE_DIR = Path(__file__).resolve().parents[2]
FALLBACK_VERSION = "0.1.0"


@cache
def version_string() -> str:
    """
    `git describe --always --dirty` of the source tree, or the package version outside a checkout.
    """
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=BASE_DIR,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
        return result.stdout.strip() or FALLBACK_VERSION
    except (OSError, subprocess.SubprocessError):
        return FALLBACK_VERSION


def _now() -> str:
    return datetime.now(UTC).isoformat()


class RunManifest(BaseModel):
    """Record of one command run, written next to its outputs."""

    command: str
    "Subcommand name"
    config_paths: list[str] = []
    "Configuration documents that were read"
    seed: int | None = None
    version: str = Field(default_factory=version_string)
    "Source version (git describe)"
    started_at: str = Field(default_factory=_now)
    finished_at: str | None = None
    outputs: list[str] = []
    "Files written by the run"
    options: dict[str, Any] = {}
    "Effective options and pipeline flags"
    failures: dict[str, str] = {}
    "Inputs that failed, with the reason"

    def add_output(self, path: Path) -> None:
        self.outputs.append(str(path))

    def write(self, path: Path) -> Path:
        """
        Write to `path` when it is a directory (as manifest.json) or next to the file `path`
        (as <name>.manifest.json).
        """
        path = Path(path)
        target = path / "manifest.json" if path.is_dir() else path.with_name(path.name + ".manifest.json")
        self.finished_at = _now()
        target.write_text(self.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info(f"Manifest written to {target}")
        return target
