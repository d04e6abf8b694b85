# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Persistence of stage artifacts and run manifests.

Matrices are written as CSV with a header row plus a one-line JSON sidecar.
Each pipeline stage records a manifest holding the sha256 of every input and
output file, which downstream stages use to detect stale artifacts.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from sped_causal import __version__
from sped_causal.data import FLOAT_FORMAT

LOG = logging.getLogger(__name__)

MANIFEST_TEMPLATE = "manifest-{stage}.json"


class ArtifactError(Exception):
    """An artifact is missing or unreadable."""


class StaleArtifactError(ArtifactError):
    """An artifact no longer matches the hash recorded in its manifest."""


def sidecar_path(path: Union[Path, str]) -> Path:
    """Location of the JSON metadata sidecar of a CSV matrix."""
    return Path(path).with_suffix(".json")


def write_json(path: Union[Path, str], payload: Any, indent: Optional[int] = 2) -> Path:
    """Write JSON with sorted keys so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, sort_keys=True, indent=indent, allow_nan=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def read_json(path: Union[Path, str]) -> Any:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"Artifact {path} does not exist")
    return json.loads(path.read_text(encoding="utf-8"))


@dataclass
class MatrixArtifact:
    """A matrix read back from CSV with its sidecar metadata."""

    values: np.ndarray
    columns: List[str]
    index: Optional[List[str]] = None
    meta: Dict[str, Any] = field(default_factory=dict)


def write_frame(path: Union[Path, str], frame: pd.DataFrame) -> Path:
    """Write a tidy table with the package-wide float format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n", encoding="utf-8"
    )
    return path


def write_matrix(
    path: Union[Path, str],
    matrix: np.ndarray,
    columns: Sequence[str],
    meta: Optional[Mapping[str, Any]] = None,
    index: Optional[Sequence[str]] = None,
    index_name: str = "unit_id",
) -> Path:
    """Write a matrix as CSV plus a one-line JSON sidecar.

    :param path: the CSV file to write
    :param matrix: n x k matrix
    :param columns: k column names
    :param meta: metadata for the sidecar (seed, K, catalogue, ...)
    :param index: optional row labels, written as the first column
    :param index_name: header of the row label column
    :return: the CSV path
    """
    matrix = np.asarray(matrix)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    frame = pd.DataFrame(matrix, columns=list(columns))
    if index is not None:
        frame.insert(0, index_name, [str(i) for i in index])
    write_frame(path, frame)
    sidecar = dict(meta or {})
    sidecar["index_name"] = index_name if index is not None else None
    write_json(sidecar_path(path), sidecar, indent=None)
    return Path(path)


def read_matrix(path: Union[Path, str]) -> MatrixArtifact:
    """Read a matrix written by write_matrix.

    :raises ArtifactError: if the CSV or its sidecar is missing
    """
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"Artifact {path} does not exist")
    meta = read_json(sidecar_path(path))
    index_name = meta.pop("index_name", None)
    frame = pd.read_csv(path, encoding="utf-8", dtype={index_name: str} if index_name else None)
    index = None
    if index_name:
        index = list(frame.pop(index_name))
    return MatrixArtifact(
        values=frame.to_numpy(dtype=np.float64),
        columns=list(frame.columns),
        index=index,
        meta=meta,
    )


def file_digest(path: Union[Path, str]) -> str:
    """sha256 of a file, or of every file below a directory in sorted order."""
    path = Path(path)
    digest = hashlib.sha256()
    if path.is_dir():
        for child in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(child.relative_to(path).as_posix().encode("utf-8"))
            digest.update(file_digest(child).encode("ascii"))
        return digest.hexdigest()
    if not path.exists():
        raise ArtifactError(f"Artifact {path} does not exist")
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Record of one stage run: configuration, seed and file hashes."""

    stage: str
    version: str
    seed: int
    config: Dict[str, Any]
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: Union[Path, str]) -> Path:
        return write_json(Path(out_dir) / MANIFEST_TEMPLATE.format(stage=self.stage), asdict(self))

    @classmethod
    def load(cls, path: Union[Path, str]) -> "RunManifest":
        return cls(**read_json(path))


def _key(path: Path, out_dir: Path) -> str:
    try:
        return path.resolve().relative_to(out_dir.resolve()).as_posix()
    except ValueError:
        return path.as_posix()


class StageRecorder:
    """Record input and output hashes of a pipeline stage.

    Input hashes are taken on entry. On a clean exit the inputs are hashed
    again and the manifest is written; an input that changed while the stage
    ran makes the outputs stale.
    """

    def __init__(
        self,
        out_dir: Union[Path, str],
        stage: str,
        seed: int,
        run_config: Mapping[str, Any],
        inputs: Iterable[Union[Path, str]] = (),
    ):
        self.out_dir = Path(out_dir)
        self.stage = stage
        self.seed = seed
        self.run_config = dict(run_config)
        self.inputs = [Path(p) for p in inputs]
        self.outputs: List[Path] = []
        self.input_hash: Dict[str, str] = {}

    def __enter__(self):
        """Record all input hashes on entry."""
        for path in self.inputs:
            self.input_hash[_key(path, self.out_dir)] = file_digest(path)
        return self

    def add_output(self, *paths: Union[Path, str]) -> None:
        for path in paths:
            path = Path(path)
            self.outputs.append(path)
            if path.suffix == ".csv" and sidecar_path(path).exists():
                self.outputs.append(sidecar_path(path))

    def __exit__(self, exc_type, exc_value, exc_traceback):
        """Write the manifest unless the stage failed."""
        if exc_type is not None:
            return False
        for path in self.inputs:
            key = _key(path, self.out_dir)
            if file_digest(path) != self.input_hash[key]:
                raise StaleArtifactError(f"Input {path} changed while stage {self.stage} ran")
        outputs = {}
        for path in sorted(set(self.outputs)):
            outputs[_key(path, self.out_dir)] = file_digest(path)
        manifest = RunManifest(
            stage=self.stage,
            version=__version__,
            seed=self.seed,
            config=self.run_config,
            inputs=dict(sorted(self.input_hash.items())),
            outputs=outputs,
        )
        path = manifest.write(self.out_dir)
        LOG.info("Stage %s wrote %d artifacts, manifest %s", self.stage, len(outputs), path)
        return False


def verify_upstream(out_dir: Union[Path, str], stage: str) -> RunManifest:
    """Check that the outputs of an upstream stage still match its manifest.

    :param out_dir: the run directory holding the upstream manifest
    :param stage: name of the upstream stage
    :return: the upstream manifest
    :raises ArtifactError: if the upstream manifest is missing
    :raises StaleArtifactError: if a recorded output changed or disappeared
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_TEMPLATE.format(stage=stage)
    if not manifest_path.is_file():
        raise ArtifactError(f"Stage {stage} has not been run in {out_dir}")
    manifest = RunManifest.load(manifest_path)
    for key, recorded in manifest.outputs.items():
        path = Path(key) if Path(key).is_absolute() else out_dir / key
        if not path.exists():
            raise StaleArtifactError(f"Artifact {path} recorded by stage {stage} is missing")
        if file_digest(path) != recorded:
            LOG.error("Artifact %s does not match the %s manifest", path, stage)
            raise StaleArtifactError(
                f"Artifact {path} changed since stage {stage} ran; rerun {stage}"
            )
    return manifest
