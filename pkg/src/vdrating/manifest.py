"""Experiment manifests, provenance stamps and atomic output writes."""

from __future__ import annotations

import hashlib
import json
import os
import platform
import tempfile
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy

from . import __version__, kernels
from .model import ModelSpec
from .optimizer import SearchConfig
from .quadrature import QuadConfig

# keys that never influence results and are left out of the digest
_UNHASHED = ("out",)


@dataclass
class ExperimentManifest:
    """Everything needed to rerun one CLI command.

    ``sim`` holds simulation settings (tps, nsim, walk_step, theta), ``inputs``
    maps input names to paths, and ``options`` carries command-specific
    settings. ``jobs`` is deliberately absent: results never depend on it.
    """

    command: str
    seed: int = 0
    spec: ModelSpec | None = None
    sim: dict[str, Any] | None = None
    search: SearchConfig = field(default_factory=SearchConfig)
    quad: QuadConfig = field(default_factory=QuadConfig)
    inputs: dict[str, str] = field(default_factory=dict)
    out: str = "."
    options: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "seed": int(self.seed),
            "spec": self.spec.to_dict() if self.spec is not None else None,
            "sim": self.sim,
            "search": self.search.to_dict(),
            "quad": self.quad.to_dict(),
            "inputs": dict(self.inputs),
            "out": self.out,
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentManifest":
        spec = d.get("spec")
        return cls(
            command=d["command"],
            seed=int(d.get("seed", 0)),
            spec=ModelSpec.from_dict(spec) if spec else None,
            sim=d.get("sim"),
            search=SearchConfig(**d.get("search", {})),
            quad=QuadConfig(**d.get("quad", {})),
            inputs=dict(d.get("inputs", {})),
            out=d.get("out", "."),
            options=dict(d.get("options", {})),
        )

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ExperimentManifest":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return hashlib.sha256(dumps(d).encode()).hexdigest()[:16]


def versions() -> dict[str, str]:
    return {"vdrating": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version(), "kernel": kernels.BACKEND}


def provenance(manifest: ExperimentManifest) -> dict[str, Any]:
    return {"seed": int(manifest.seed), "manifest_digest": manifest.digest(),
            "versions": versions()}


def provenance_comment(manifest: ExperimentManifest) -> str:
    """One ``#`` line for CSV outputs."""
    p = provenance(manifest)
    v = ",".join(f"{k}-{val}" for k, val in sorted(p["versions"].items()))
    return f"# seed={p['seed']} manifest={p['manifest_digest']} versions={v}\n"


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_atomic(path: str, text: str) -> None:
    """Write via a temporary file in the same directory and rename over ``path``."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
