"""Run artifacts: CSV tables with round-trip-exact floats, JSON-lines
records, and the manifest that ties every output of a run together."""

from __future__ import annotations

import hashlib
import json
import math
import os
from typing import Iterable


def fmt_value(x) -> str:
    """Text form of a cell; floats use %.17g so they re-read bit-exactly."""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def write_csv(path: str, header: list[str], rows: Iterable[Iterable]) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_value(x) for x in row) + "\n")
    return path


def write_jsonl(path: str, records: Iterable[dict]) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def build_id(resolved_config: dict) -> str:
    blob = json.dumps(resolved_config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def write_manifest(output_dir: str, resolved_config: dict, seed: int,
                   outputs: list[str], extra: dict | None = None) -> str:
    import numpy

    from . import __version__
    from ._kernels import backend_name

    manifest = {
        "config": resolved_config,
        "seed": seed,
        "build_id": build_id(resolved_config),
        "versions": {"spinvmc": __version__, "numpy": numpy.__version__,
                     "kernel_backend": backend_name()},
        "outputs": [os.path.basename(p) for p in outputs],
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(output_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return path
