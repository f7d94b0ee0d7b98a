"""Report assembly: text summaries, bound lines and deterministic CSV output."""

from __future__ import annotations

import csv
import io
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

BOUND_COLUMNS = ("name", "measured", "relation", "bound", "ok", "required")
RELATIONS = {
    "<=": lambda a, b: a <= b,
    "<": lambda a, b: a < b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}


def fmt(v) -> str:
    """Round-trip float formatting used in every CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(v)


def check(measured: float, relation: str, bound: float) -> bool:
    return bool(RELATIONS[relation](measured, bound))


@dataclass
class BoundLine:
    name: str
    measured: float
    relation: str
    bound: float
    required: bool = True

    @property
    def ok(self) -> bool:
        return check(self.measured, self.relation, self.bound)

    def row(self) -> list[str]:
        return [self.name, fmt(self.measured), self.relation, fmt(self.bound), fmt(self.ok), fmt(self.required)]

    def __str__(self):
        tag = "ok" if self.ok else ("FAIL" if self.required else "not met (diagnostic)")
        return f"{self.name}: {self.measured:.6g} {self.relation} {self.bound:.6g}  [{tag}]"


@dataclass
class Table:
    columns: Sequence[str]
    rows: list = field(default_factory=list)


@dataclass
class Report:
    scenario: str
    command: str
    provenance: dict = field(default_factory=dict)
    lines: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)

    def say(self, text: str = ""):
        self.lines.append(text)

    def bound(self, name: str, measured: float, relation: str, bound: float, required: bool = True) -> BoundLine:
        b = BoundLine(name, float(measured), relation, float(bound), required)
        self.bounds.append(b)
        return b

    def table(self, name: str, columns: Sequence[str]) -> Table:
        t = Table(tuple(columns))
        self.tables[name] = t
        return t

    @property
    def ok(self) -> bool:
        return all(b.ok for b in self.bounds if b.required)

    def text(self) -> str:
        out = [f"closinglab {self.command}: {self.scenario}", ""]
        out.extend(self.lines)
        if self.bounds:
            out += ["", "bounds (measured relation bound):"]
            out.extend("  " + str(b) for b in self.bounds)
        out += ["", "provenance:"]
        out.extend(f"  {k}: {v}" for k, v in self.provenance.items())
        return "\n".join(out) + "\n"

    def write(self, directory: Path) -> list[Path]:
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        p = directory / f"{self.command}_report.txt"
        p.write_text(self.text())
        written.append(p)
        if self.bounds:
            written.append(write_csv(directory / f"{self.command}_bounds.csv", BOUND_COLUMNS,
                                     [b.row() for b in self.bounds]))
        for name, t in self.tables.items():
            written.append(write_csv(directory / f"{self.command}_{name}.csv", t.columns, t.rows))
        return written


def write_csv(path: Path, columns: Sequence[str], rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    path.write_text(buf.getvalue())
    return path


def read_bounds(path: Path) -> list[dict]:
    """Parse a bounds CSV back into typed rows."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["measured"] = float(r["measured"])
        r["bound"] = float(r["bound"])
        r["ok"] = r["ok"] == "true"
        r["required"] = r["required"] == "true"
    return rows


def provenance(version: str, scenario, **extra) -> dict:
    d = {
        "tool_version": version,
        "scenario_source": scenario.source,
        "scenario_sha256": scenario.digest,
        "seed": scenario.seed,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    d.update(extra)
    return d
