"""Scenario files: YAML documents describing a map, a twist, a flow box and run parameters.

Schema (version 1)::

    schema: 1
    name: toy_contraction
    segment: {lo: -1.0, hi: 0.9, marked_point: 0.0}
    map:
      kind: branches            # branches | iet | contracted_rotation
      branches:
        - {domain: [-1.0, 0.9], kind: affine, slope: 0.05, offset: -0.001}
    twist: {delta: 0.1, order: 5}
    flowbox: {epsilon: 0.1, delta: 0.01, order: 2, step_fraction: 1.0e-4}
    experiment: {q: 0.5, kappa_target: 0.1, ...}
    seed: 0

Branch kinds: ``affine`` (slope, offset), ``power`` (value, scale, center,
exponent) and ``composite`` (pieces: list of affine/power entries applied
in order).  An ``iet`` map lists lengths, permutation (1-based) and flips.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .errors import ClosingLabError, ScenarioError
from .flowbox import OdeOptions
from .iet import Iet
from .models import contracted_rotation
from .segment_map import Affine, Branch, Composite, Power, ReturnMap, Segment
from .twist import TwistFamily, make_twist

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FlowBoxSpec:
    epsilon: float = 0.1
    delta: float = 0.01
    order: int = 2
    ode: OdeOptions = field(default_factory=OdeOptions)
    lambdas: tuple = (0.0, 0.25, 0.5, 1.0)
    y_count: int = 81
    tolerance: float = 1e-6
    cr_order: int = 2

    @property
    def rectangle(self) -> tuple[float, float]:
        return -10 * self.delta, 10 * self.delta


@dataclass(frozen=True)
class Experiment:
    q: float | None = None
    kappa_target: float = 0.1
    n_max: int = 64
    grid: int = 4097
    depth: int = 1000
    tol: float = 1e-10
    direction: str = "below"
    lambda_grid: int = 101
    drift_lambdas: tuple = (0.0, 0.25, 0.5, 1.0)
    starts: tuple = ()
    n_orbit: int = 10_000
    bins: int = 256
    dyadic_min_width: float = 0.05
    L: float | None = None
    K: float | None = None
    sub_segment: tuple | None = None
    majorant_K: float | None = None
    birkhoff_c: float | None = None
    birkhoff_n: tuple = (1, 50)
    sweep_param: str | None = None
    sweep_values: tuple = ()


@dataclass
class Scenario:
    name: str
    description: str
    map: Any  # ReturnMap | Iet
    twist: TwistFamily | None
    flowbox: FlowBoxSpec | None
    experiment: Experiment
    seed: int
    source: str
    digest: str

    @property
    def is_iet(self) -> bool:
        return isinstance(self.map, Iet)

    @property
    def segment(self) -> Segment:
        return self.map.segment


def _num(d: dict, key: str, where: str, default=None, required: bool = False) -> float | None:
    if key not in d or d[key] is None:
        if required:
            raise ScenarioError(f"{where}: missing required field '{key}'")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}.{key}: expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ScenarioError(f"{where}.{key}: must be finite, got {v!r}")
    return float(v)


def _primitive(spec: dict, where: str):
    kind = spec.get("kind", "affine")
    if kind == "affine":
        return Affine(_num(spec, "slope", where, required=True), _num(spec, "offset", where, 0.0))
    if kind == "power":
        return Power(
            _num(spec, "value", where, 0.0),
            _num(spec, "scale", where, 1.0),
            _num(spec, "center", where, 0.0),
            _num(spec, "exponent", where, 2.0),
        )
    if kind == "composite":
        pieces = spec.get("pieces")
        if not isinstance(pieces, list) or not pieces:
            raise ScenarioError(f"{where}: composite branch needs a non-empty 'pieces' list")
        return Composite(tuple(_primitive(p, f"{where}.pieces[{i}]") for i, p in enumerate(pieces)))
    raise ScenarioError(f"{where}: unknown branch kind {kind!r}")


def _segment(d: dict | None, where: str = "segment") -> Segment:
    if not isinstance(d, dict):
        raise ScenarioError(f"{where}: expected a mapping with lo, hi, marked_point")
    return Segment(
        _num(d, "lo", where, required=True),
        _num(d, "hi", where, required=True),
        _num(d, "marked_point", where, 0.0),
    )


def _build_map(doc: dict):
    spec = doc.get("map")
    if not isinstance(spec, dict):
        raise ScenarioError("map: missing or not a mapping")
    kind = spec.get("kind", "branches")
    if kind == "branches":
        seg = _segment(doc.get("segment"))
        raw = spec.get("branches")
        if not isinstance(raw, list) or not raw:
            raise ScenarioError("map.branches: expected a non-empty list")
        branches = []
        for i, b in enumerate(raw):
            where = f"map.branches[{i}]"
            dom = b.get("domain")
            if not (isinstance(dom, list) and len(dom) == 2):
                raise ScenarioError(f"{where}.domain: expected [l, r]")
            branches.append(Branch((float(dom[0]), float(dom[1])), _primitive(b, where)))
        return ReturnMap(seg, branches)
    if kind == "iet":
        return Iet(spec.get("lengths", []), spec.get("permutation", []), spec.get("flips"))
    if kind == "contracted_rotation":
        return contracted_rotation(
            int(spec.get("p", 13)),
            int(spec.get("q", 21)),
            _num(spec, "slope_stay", "map", 0.5),
            _num(spec, "slope_wrap", "map", 0.8),
        )
    raise ScenarioError(f"map.kind: unknown kind {kind!r}")


def _tuple(v, where: str) -> tuple:
    if v is None:
        return ()
    if not isinstance(v, (list, tuple)):
        raise ScenarioError(f"{where}: expected a list")
    return tuple(v)


def _experiment(d: dict | None) -> Experiment:
    d = dict(d or {})
    known = set(Experiment.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ScenarioError(f"experiment: unknown fields {sorted(unknown)}")
    for key in ("drift_lambdas", "starts", "birkhoff_n", "sub_segment", "sweep_values"):
        if key in d:
            d[key] = _tuple(d[key], f"experiment.{key}")
    for key, v in d.items():
        if isinstance(v, float) and not math.isfinite(v):
            raise ScenarioError(f"experiment.{key}: must be finite")
    return Experiment(**d)


def _flowbox(d: dict | None, twist_delta: float | None) -> FlowBoxSpec | None:
    if d is None:
        return None
    where = "flowbox"
    ode = OdeOptions(
        d.get("method", "rk4"),
        _num(d, "step_fraction", where, 1e-4),
        _num(d, "rtol", where, 1e-12),
        _num(d, "atol", where, 1e-14),
    )
    spec = FlowBoxSpec(
        epsilon=_num(d, "epsilon", where, 0.1),
        delta=_num(d, "delta", where, twist_delta if twist_delta is not None else 0.01),
        order=int(d.get("order", 2)),
        ode=ode,
        lambdas=_tuple(d.get("lambdas", [0.0, 0.25, 0.5, 1.0]), "flowbox.lambdas"),
        y_count=int(d.get("y_count", 81)),
        tolerance=_num(d, "tolerance", where, 1e-6),
        cr_order=int(d.get("cr_order", 2)),
    )
    if not (spec.epsilon > 0 and spec.delta > 0):
        raise ScenarioError("flowbox: epsilon and delta must be positive")
    a, b = spec.rectangle
    if not (a <= -9 * spec.delta and b >= 9 * spec.delta):
        raise ScenarioError("flowbox: rectangle does not contain the twist support with margin")
    return spec


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ScenarioError(f"{source}: parse error{where}: {getattr(e, 'problem', e)}") from e
    if not isinstance(doc, dict):
        raise ScenarioError(f"{source}: top level must be a mapping")
    if doc.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ScenarioError(f"{source}: unsupported schema version {doc.get('schema')!r}")
    try:
        P = _build_map(doc)
        twist = None
        tw = doc.get("twist")
        if tw is not None:
            delta = _num(tw, "delta", "twist", required=True)
            c = P.segment.c
            if not delta < c / 8:
                raise ScenarioError(f"twist: δ < c/8 violated (delta={delta}, c={c}, c/8={c / 8})")
            twist = make_twist(P.segment, delta, int(tw.get("order", 5)))
        fb = _flowbox(doc.get("flowbox"), twist.delta if twist else None)
        exp = _experiment(doc.get("experiment"))
    except ScenarioError:
        raise
    except (ClosingLabError, TypeError, ValueError, AttributeError) as e:
        raise ScenarioError(f"{source}: invalid scenario: {e}") from e
    if exp.q is not None and not P.segment.contains(exp.q):
        raise ScenarioError(f"experiment.q = {exp.q} lies outside the segment")
    return Scenario(
        name=str(doc.get("name", Path(source).stem)),
        description=str(doc.get("description", "")).strip(),
        map=P,
        twist=twist,
        flowbox=fb,
        experiment=exp,
        seed=int(doc.get("seed", 0)),
        source=source,
        digest=hashlib.sha256(text.encode()).hexdigest()[:16],
    )


def bundled_names() -> list[str]:
    root = resources.files("closinglab") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Load a scenario file, or a bundled scenario by name."""
    p = Path(path_or_name)
    if p.suffix in (".yaml", ".yml") or p.exists():
        text = p.read_text()  # FileNotFoundError propagates as the I/O error
        return parse_scenario(text, str(p))
    name = str(path_or_name)
    res = resources.files("closinglab") / "scenarios" / f"{name}.yaml"
    if not res.is_file():
        raise FileNotFoundError(
            f"no scenario file or bundled scenario named {name!r} (bundled: {', '.join(bundled_names())})"
        )
    return parse_scenario(res.read_text(), f"bundled:{name}")
