"""Experiment manifest and append-only run log.

The manifest is one JSON document per experiment. Each pipeline stage
records its effective configuration, seed and every input and output path
with a SHA-256 content hash. Every command invocation also appends one
record to ``runs.jsonl`` next to the manifest, whether it succeeded or not.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from . import __version__


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_paths(paths: Iterable) -> dict[str, str]:
    return {str(p): file_sha256(p) for p in paths if p is not None and Path(p).is_file()}


@dataclass
class ExperimentManifest:
    experiment_id: str = ""
    source_domains: list[str] = field(default_factory=list)
    target_domain: str = ""
    seed: int | None = None
    stages: dict = field(default_factory=dict)
    tool_version: str = __version__

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        path = Path(path)
        if not path.exists():
            return cls(experiment_id=path.parent.name)
        data = json.loads(path.read_text())
        return cls(**data)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)

    def record_stage(
        self,
        stage: str,
        config: Mapping,
        seed: int | None,
        inputs: Iterable = (),
        outputs: Iterable = (),
        **extra,
    ) -> dict:
        entry = {
            "config": dict(config),
            "seed": seed,
            "inputs": hash_paths(inputs),
            "outputs": hash_paths(outputs),
            **extra,
        }
        self.stages[stage] = entry
        return entry


@dataclass
class RunRecord:
    command: str
    argv: list[str]
    start: float
    end: float
    exit_status: int
    artifacts: dict = field(default_factory=dict)
    message: str = ""


def append_run(log_path, record: RunRecord) -> None:
    log_path = Path(log_path)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    with open(log_path, "a") as fh:
        fh.write(json.dumps(asdict(record), sort_keys=True) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def read_runs(log_path) -> list[RunRecord]:
    path = Path(log_path)
    if not path.exists():
        return []
    return [RunRecord(**json.loads(line)) for line in path.read_text().splitlines() if line.strip()]


def now() -> float:
    return time.time()
