"""CSV export and run manifests."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if np.isnan(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    if v is None:
        return ""
    return v


def write_rows(path, header, rows) -> Path:
    """Write a headed CSV; floats use ``repr`` so output is exact and stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])
    return path


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, seed: int, files, config: dict | None = None) -> Path:
    """List every emitted file with its size and content hash."""
    out = Path(out_dir)
    entries = []
    for f in sorted({Path(f).resolve() for f in files}):
        entries.append({"path": str(f.relative_to(out.resolve())) if f.is_relative_to(out.resolve())
                        else str(f), "bytes": f.stat().st_size, "sha256": sha256(f)})
    doc = {"command": command, "seed": seed, "files": entries}
    if config is not None:
        doc["config"] = config
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
