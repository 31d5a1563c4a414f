import hashlib
import json
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from exceptions import DataError


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunManifest(BaseModel):
    """What a command ran with and what it produced."""

    model_config = ConfigDict(extra="forbid")

    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: int
    inputs: List[str] = Field(default_factory=list)
    outputs: List[str] = Field(default_factory=list)
    started_at: str = Field(default_factory=_now)
    finished_at: Optional[str] = None
    checksums: Dict[str, str] = Field(default_factory=dict)
    status: str = "ok"
    checks: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[str] = None


class ManifestService:
    """Creates and writes run manifests with sha256 checksums of every output."""

    @staticmethod
    def sha256(path: Path) -> str:
        digest = hashlib.sha256()
        with Path(path).open("rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
        return digest.hexdigest()

    def start(self, command: str, config: Dict[str, Any], seed: int, inputs: Iterable[Path] = ()) -> RunManifest:
        return RunManifest(command=command, config=config, seed=seed, inputs=[str(p) for p in inputs])

    def finish(
        self,
        manifest: RunManifest,
        path: Path,
        outputs: Iterable[Path] = (),
        status: str = "ok",
        error: Optional[str] = None,
    ) -> Path:
        """Checksum the outputs and write the manifest atomically."""
        outputs = [Path(p) for p in outputs]
        manifest.outputs = [str(p) for p in outputs]
        manifest.checksums = {str(p): self.sha256(p) for p in outputs if p.is_file()}
        manifest.finished_at = _now()
        manifest.status = status
        manifest.error = error
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)
        logger.info(f"Manifest written to {path} ({len(manifest.checksums)} checksummed outputs)")
        return path

    def load(self, path: Path) -> RunManifest:
        path = Path(path)
        try:
            return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as e:
            raise DataError(f"{path}: not a run manifest ({e.error_count()} errors)") from e

    @staticmethod
    def recorded(manifest: RunManifest, path: Path) -> Optional[str]:
        """Checksum the manifest holds for ``path``, matched on the resolved path."""
        target = Path(path).resolve()
        return next((digest for name, digest in manifest.checksums.items() if Path(name).resolve() == target), None)

    def verify(self, manifest: RunManifest, paths: Optional[Iterable[Path]] = None) -> List[str]:
        """Recorded outputs whose current checksum differs, restricted to ``paths`` when given."""
        wanted = None if paths is None else {Path(p).resolve() for p in paths}
        return [
            name for name, digest in manifest.checksums.items()
            if (wanted is None or Path(name).resolve() in wanted)
            and (not Path(name).is_file() or self.sha256(Path(name)) != digest)
        ]
