"""Numerical laboratory for closing recurrent orbits of return maps by small twists."""

__version__ = "0.1.0"

from .errors import (
    CertificateFailure,
    ClosingLabError,
    HypothesisViolation,
    LeftDomain,
    SaddleHit,
    ScenarioError,
    SearchFailure,
)
from .segment_map import (
    Affine,
    Branch,
    Composite,
    Power,
    ReturnMap,
    Segment,
    contraction_certificate,
    iterate,
    propagate_contraction,
)
from .iet import Iet, keane_check, rotation
from .twist import TwistFamily, closing_search, drift_bound_check, make_twist
from .flowbox import calibrate_eta, make_flowbox, transit_map
from .scenario import Scenario, load_scenario

__all__ = [
    "Affine", "Branch", "CertificateFailure", "ClosingLabError", "Composite", "HypothesisViolation",
    "Iet", "LeftDomain", "Power", "ReturnMap", "SaddleHit", "Scenario", "ScenarioError", "SearchFailure",
    "Segment", "TwistFamily", "calibrate_eta", "closing_search", "contraction_certificate",
    "drift_bound_check", "iterate", "keane_check", "load_scenario", "make_flowbox", "make_twist",
    "propagate_contraction", "rotation", "transit_map",
]
