"""
Run manifests
Each experiment directory holds one manifest.json: command, effective config, seed,
tool version, timestamps and sha256 digests of every output file.
"""
import hashlib
import logging
import shutil
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from .. import __version__
from ..errors import DatasetError, OutputExistsError
from ..models.schemas import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def prepare_out_dir(out_dir: Path, force: bool = False) -> Path:
    """Create `out_dir`; a non-empty directory is only reused (and cleared) with force"""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise OutputExistsError(
                f"{out_dir} is not empty; pass --force to overwrite", details={"out_dir": str(out_dir)}
            )
        logger.warning(f"Overwriting {out_dir}")
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


class ManifestRecorder:
    """Collects outputs during a run and writes the manifest when it finishes"""

    def __init__(self, command: str, out_dir: Path, config: Dict[str, Any], seed: Optional[int] = None):
        self.out_dir = Path(out_dir)
        self.manifest = RunManifest(
            command=command,
            config=config,
            seed=seed,
            tool_version=__version__,
            started_at=datetime.now(timezone.utc),
        )

    def finish(self, outputs: Optional[Iterable[Path]] = None) -> Path:
        """Digest `outputs` (default: every file under out_dir) and write manifest.json"""
        if outputs is None:
            outputs = sorted(p for p in self.out_dir.rglob("*") if p.is_file() and p.name != MANIFEST_NAME)
        self.manifest.outputs = {
            Path(p).relative_to(self.out_dir).as_posix(): file_digest(Path(p)) for p in outputs
        }
        self.manifest.finished_at = datetime.now(timezone.utc)
        path = self.out_dir / MANIFEST_NAME
        path.write_text(self.manifest.model_dump_json(indent=2) + "\n")
        logger.info(f"Manifest written to {path} ({len(self.manifest.outputs)} outputs)")
        return path


def load_manifest(path: Path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        return RunManifest.model_validate_json(path.read_text())
    except (OSError, ValueError) as e:
        raise DatasetError(f"cannot load manifest {path}: {e}") from e


def verify_manifest(out_dir: Path) -> Dict[str, bool]:
    """Per-output flag telling whether the file on disk still matches its recorded digest"""
    out_dir = Path(out_dir)
    manifest = load_manifest(out_dir)
    return {
        name: (out_dir / name).is_file() and file_digest(out_dir / name) == digest
        for name, digest in manifest.outputs.items()
    }
