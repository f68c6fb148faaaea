import hashlib
import json
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from . import __version__
from .config import RunConfig
from .formats import atomic_write, read_bytes
from .models import RunManifest


def sha256_file(path: Union[str, Path]) -> str:
    return hashlib.sha256(read_bytes(path)).hexdigest()


def hash_artifacts(paths: Iterable[Path], root: Path) -> Dict[str, str]:
    """sha256 per artifact, keyed by path relative to ``root`` when it lies below it."""
    hashes = {}
    for path in sorted(Path(p) for p in paths):
        try:
            key = path.relative_to(root).as_posix()
        except ValueError:
            key = path.as_posix()
        hashes[key] = sha256_file(path)
    return hashes


class ManifestRecorder:
    """Collects artifacts written by one command and emits the run manifest.

    The config snapshot and the artifact hashes are the reproducible part; the start
    time and elapsed seconds only describe the run.
    """

    def __init__(self, command: str, config: RunConfig, output_dir: Path):
        self.command = command
        self.config = config
        self.output_dir = Path(output_dir)
        self.artifacts: List[Path] = []
        self.notes: List[str] = []
        self.started_at = datetime.now(timezone.utc).isoformat()
        self._start = time.perf_counter()

    def add(self, path: Path) -> Path:
        self.artifacts.append(Path(path))
        return path

    def note(self, text: str) -> None:
        self.notes.append(text)

    def build(self) -> RunManifest:
        return RunManifest(
            command=self.command,
            config=self.config.model_dump(mode="json"),
            artifacts=hash_artifacts(self.artifacts, self.output_dir),
            tool_version=__version__,
            started_at=self.started_at,
            elapsed_seconds=round(time.perf_counter() - self._start, 6),
            notes=self.notes,
        )

    def write(self, path: Optional[Path] = None) -> Path:
        path = path or self.output_dir / f"manifest_{self.command}.json"
        manifest = self.build()
        text = json.dumps(asdict(manifest), indent=2, sort_keys=True)
        atomic_write(path, (text + "\n").encode("utf-8"))
        return path


def read_manifest(path: Union[str, Path]) -> RunManifest:
    data = json.loads(read_bytes(path).decode("utf-8"))
    return RunManifest(**data)
