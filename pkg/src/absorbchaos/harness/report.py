"""Flat CSV tables plus a JSON manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
from dataclasses import dataclass, field

import numpy as np

from .. import __version__

__all__ = ["ExperimentReport", "config_hash", "table_to_csv"]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def table_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


@dataclass
class ExperimentReport:
    """Manifest, named tables ``name -> (header, rows)`` and per-check outcomes."""

    manifest: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @classmethod
    def start(cls, kind: str, config: dict, seed: int) -> "ExperimentReport":
        return cls(manifest={
            "kind": kind,
            "seed": int(seed),
            "config": _jsonable(config),
            "config_hash": config_hash(config),
            "code_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        })

    def add_table(self, name: str, header, rows) -> None:
        self.tables[name] = (list(header), [list(r) for r in rows])

    def table_csv(self, name: str) -> str:
        return table_to_csv(*self.tables[name])

    @property
    def passed(self) -> bool:
        return all(v.get("passed", False) for v in self.summary.values())

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        for name in self.tables:
            with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as fh:
                fh.write(self.table_csv(name))
        man = dict(self.manifest)
        man["tables"] = sorted(self.tables)
        if self.summary:
            man["summary"] = _jsonable(self.summary)
            man["passed"] = self.passed
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(man, fh, indent=2, sort_keys=True)
            fh.write("\n")
