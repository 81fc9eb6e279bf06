"""Run manifests: what ran, with what inputs, producing which bytes.

A manifest is one JSON object per run with stable field names.  Output
files are referenced by SHA-256 digest so a rerun can be checked for
bit-identity without keeping the originals around.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time

from . import MODULE_VERSIONS
from .config import RunConfig, snapshot

__all__ = ["RunManifest", "start_manifest", "write_manifest", "file_digest"]


def file_digest(path) -> dict:
    sha = hashlib.sha256()
    size = 0
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            sha.update(chunk)
            size += len(chunk)
    return {"path": os.path.basename(str(path)),
            "sha256": sha.hexdigest(), "bytes": size}


@dataclasses.dataclass
class RunManifest:
    """Mutable while a run is in flight; serialized once at the end."""

    subcommand: str
    config: dict[str, str]
    master_seed: int
    module_versions: dict[str, str]
    beta_audit: dict[str, float] = dataclasses.field(default_factory=dict)
    notes: dict[str, float] = dataclasses.field(default_factory=dict)
    outputs: list[dict] = dataclasses.field(default_factory=list)
    wall_time_s: float = 0.0
    started_unix: float = 0.0

    def add_output(self, path) -> None:
        self.outputs.append(file_digest(path))

    def note(self, key: str, value: float) -> None:
        """Record a scalar diagnostic (e.g. a torus image-bias bound)."""
        self.notes[key] = float(value)


def start_manifest(subcommand: str, cfg: RunConfig) -> RunManifest:
    return RunManifest(subcommand=subcommand, config=snapshot(cfg),
                       master_seed=cfg.master_seed,
                       module_versions=dict(MODULE_VERSIONS),
                       started_unix=time.time())


def write_manifest(man: RunManifest, path) -> None:
    man.wall_time_s = time.time() - man.started_unix
    payload = {
        "subcommand": man.subcommand,
        "config": man.config,
        "master_seed": man.master_seed,
        "module_versions": man.module_versions,
        "beta_audit": man.beta_audit,
        "notes": man.notes,
        "outputs": man.outputs,
        "wall_time_s": man.wall_time_s,
        "started_unix": man.started_unix,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")
