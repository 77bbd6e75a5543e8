"""Stage reports, bound checks, and bit-stable report bundles."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from fractions import Fraction
from typing import Any


def _jsonable(x):
    if isinstance(x, Fraction):
        return {"num": str(x.numerator), "den": str(x.denominator)}
    if isinstance(x, float):
        return x
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if hasattr(x, "__dataclass_fields__"):
        return _jsonable(asdict(x))
    if isinstance(x, (int, str, bool)) or x is None:
        return x
    return repr(x)


@dataclass
class BoundCheck:
    """One recorded inequality with both sides, re-verifiable from the report."""

    name: str
    lhs: Any
    rhs: Any
    ok: bool
    kind: str = "sampled"  # "exact" for rational/integer comparisons
    note: str = ""

    @staticmethod
    def exact_le(name: str, lhs, rhs, note: str = "") -> "BoundCheck":
        return BoundCheck(name, lhs, rhs, bool(lhs <= rhs), kind="exact", note=note)

    @staticmethod
    def sampled_le(name: str, lhs: float, rhs: float, note: str = "") -> "BoundCheck":
        return BoundCheck(name, float(lhs), float(rhs), bool(lhs <= rhs), note=note)


@dataclass
class StageReport:
    n: int
    q_n: int
    data: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    def add(self, check: BoundCheck) -> BoundCheck:
        self.checks.append(check)
        return check

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.ok]

    def to_json(self) -> str:
        return json.dumps(_jsonable({"n": self.n, "q_n": self.q_n,
                                     "passed": self.passed,
                                     "data": self.data,
                                     "checks": self.checks}), sort_keys=True)


@dataclass
class ReportBundle:
    """Manifest plus emitted files; the manifest hash covers every artifact."""

    out_dir: str
    manifest: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)  # name -> text

    def add_jsonl(self, name: str, records: list):
        self.files[name] = "\n".join(
            r.to_json() if hasattr(r, "to_json") else json.dumps(_jsonable(r), sort_keys=True)
            for r in records
        ) + "\n"

    def add_csv(self, name: str, header: list, rows: list):
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
        self.files[name] = "\n".join(lines) + "\n"

    def write(self) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        hashes = {}
        for name, text in sorted(self.files.items()):
            path = os.path.join(self.out_dir, name)
            with open(path, "w") as fh:
                fh.write(text)
            hashes[name] = hashlib.sha256(text.encode()).hexdigest()
        manifest = dict(self.manifest)
        manifest["files"] = hashes
        body = json.dumps(_jsonable(manifest), sort_keys=True, indent=1)
        manifest["bundle_hash"] = hashlib.sha256(body.encode()).hexdigest()
        out = json.dumps(_jsonable(manifest), sort_keys=True, indent=1)
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as fh:
            fh.write(out)
        return manifest["bundle_hash"]
