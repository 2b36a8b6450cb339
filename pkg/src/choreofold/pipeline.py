"""End-to-end runs for the four bifurcation cases.

Each case starts from a choreographic seed, locates the doubly degenerate
zero crossing, follows the bifurcated branch through its fold and compares
the fold data with the reduced model.  ``c-y`` first branches off
``alpha-plus`` at a simple crossing to obtain its own parent family.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .continuation import (
    Branch,
    ContinuationControls,
    FoldReport,
    ReferenceFamily,
    continue_branch,
    continue_family,
    default_theta,
    fit_kappa_linear,
    locate_fold,
    relative_action_curve,
    switch_branch,
    turning_point,
)
from .families import Family, FamilyTracker, SeedKind, choreography_seed
from .orbit import Orbit, resample, solve_orbit
from .reduction import a3_coefficient, a3_integrals, fit_A3A4, fold_prediction
from .spectrum import BifurcationPoint, ScanRow, locate_bifurcation, make_tracker, scan_eigenvalue

log = logging.getLogger(__name__)

# resolution adequacy: relative coefficient mass in the top eighth of modes
TAIL_TOL = 1e-10


@dataclass(frozen=True)
class CaseConfig:
    name: str
    family: str  # "lj" or "homogeneous"
    seed: str  # SeedKind value
    seed_parameter: float
    modes: int
    bracket: tuple[float, float]
    scan: tuple[float, float, int]
    parent: str | None = None  # case whose family the seed branches off
    pitchfork_bracket: tuple[float, float] | None = None
    max_points: int = 80

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CaseConfig":
        d = dict(d)
        for k in ("bracket", "scan", "pitchfork_bracket"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


CASES: dict[str, CaseConfig] = {
    "alpha-plus": CaseConfig("alpha-plus", "lj", SeedKind.LJ_HIGH.value, 16.0, 128, (16.85, 16.9), (16.855, 16.905, 11)),
    "alpha-minus": CaseConfig("alpha-minus", "lj", SeedKind.LJ_LOW.value, 16.0, 64, (14.8, 14.87), (14.74, 14.92, 19)),
    "c-y": CaseConfig(
        "c-y", "lj", SeedKind.LJ_HIGH.value, 17.235, 128, (17.21, 17.26), (17.2, 17.27, 15),
        parent="alpha-plus", pitchfork_bracket=(17.1, 17.17),
    ),
    "homogeneous": CaseConfig("homogeneous", "homogeneous", SeedKind.NEWTONIAN.value, 1.0, 128, (0.98, 1.01), (0.9, 1.08, 19)),
}


def make_family(kind: str) -> Family:
    if kind == "lj":
        return Family.lennard_jones()
    if kind == "homogeneous":
        return Family.homogeneous()
    raise ValueError(f"unknown family {kind!r}")


def solve_seed(kind, parameter: float, modes: int, family: Family, *, tail_tol: float = TAIL_TOL, max_modes: int = 512) -> Orbit:
    """Converged choreography of ``family`` at ``parameter``.

    The seed is first solved at 64 modes, then refined at ``modes``; the
    mode count is doubled while the top modes carry more than ``tail_tol``
    of the coefficient mass.
    """
    kind = SeedKind(kind)
    if family.parameter.value == "period":
        seed = choreography_seed(kind, parameter, modes=min(64, modes))
    else:
        seed = family.orbit_at(choreography_seed(kind, family.period, modes=min(64, modes)).coeffs, parameter, max(512, 8 * min(64, modes)))
    rep = solve_orbit(seed, "choreography", tol=1e-11)
    if not rep.converged:
        raise RuntimeError(f"seed {kind.value} at {parameter} did not converge: {rep.message}")
    o = rep.orbit
    target = modes
    while True:
        if target != o.modes:
            rep = solve_orbit(resample(o, target), "choreography", tol=1e-11)
            if not rep.converged:
                raise RuntimeError(f"refinement to {target} modes failed: {rep.message}")
            o = rep.orbit
        if o.tail_mass() < tail_tol or 2 * target > max_modes:
            return o
        log.info("tail mass %.1e at M=%d; doubling", o.tail_mass(), target)
        target *= 2


def _tracker_for(cfg: CaseConfig) -> tuple[FamilyTracker, float | None]:
    """Tracker for the case family and, for a derived family, its pitchfork parameter."""
    family = make_family(cfg.family)
    if cfg.parent is None:
        return FamilyTracker(family, solve_seed(cfg.seed, cfg.seed_parameter, cfg.modes, family)), None
    parent = CASES[cfg.parent]
    ptr = FamilyTracker(family, solve_seed(parent.seed, parent.seed_parameter, cfg.modes, family))
    pbp = locate_bifurcation(ptr, cfg.pitchfork_bracket, degeneracy=1, window=0.01)
    orbit = switch_branch(pbp, cfg.seed_parameter)
    return FamilyTracker(family, orbit, max_step=0.01), pbp.parameter


@dataclass
class CaseResult:
    config: CaseConfig
    bifurcation: BifurcationPoint
    A3_0: float
    A3_1: float
    A3_integral: float
    scan: list[ScanRow]
    kappa_line: tuple[float, float]
    branch: Branch
    fold: FoldReport
    A3_fit: float
    A4_fit: float
    pitchfork: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def r0(self) -> float:
        return fold_prediction(self.A3_fit, self.A4_fit).r0

    def table_row(self) -> dict:
        return {
            "case": self.config.name,
            "bifurcation": self.bifurcation.parameter,
            "degeneracy": self.bifurcation.degeneracy,
            "pitchfork": self.pitchfork,
            "symmetry": self.bifurcation.symmetry_tag.value if self.bifurcation.symmetry_tag else None,
            "fold": self.fold.parameter,
            "kappa0": self.fold.kappa0,
            "deltaS0": self.fold.deltaS0,
            "A3_fit": self.A3_fit,
            "A3_integral": self.A3_integral,
            "A4": self.A4_fit,
            "r0": self.r0,
            "kappa_intercept": self.kappa_line[0],
            "kappa_slope": self.kappa_line[1],
        }


def _crossing_tracker(tracker: FamilyTracker, p_star: float, lo: float, hi: float):
    """Tracked pair that vanishes at ``p_star`` and changes sign on [lo, hi].

    Selected at the crossing, where kappa ~ 0, so the window never clips it;
    other pairs inside the window may also cross on [lo, hi].
    """
    cands = [kt for kt in make_tracker(tracker, p_star, 2, window=0.05) if kt.kappa(lo) * kt.kappa(hi) < 0]
    if not cands:
        raise RuntimeError(f"no crossing pair between {lo} and {hi}")
    return min(cands, key=lambda kt: abs(kt.kappa(p_star)))


def linear_window(scan, p_star: float, p_fold: float) -> list[ScanRow]:
    """Scan rows inside ``|p - p*| <= |p_fold - p*|`` (kappa in [kappa0, -kappa0])."""
    half = abs(p_fold - p_star) * (1 + 1e-9)
    rows = [r for r in scan if abs(r.parameter - p_star) <= half]
    if len(rows) < 3:
        rows = sorted(scan, key=lambda r: abs(r.parameter - p_star))[:3]
    return rows


def run_case(cfg: CaseConfig | str, *, tracker: FamilyTracker | None = None) -> CaseResult:
    cfg = CASES[cfg] if isinstance(cfg, str) else cfg
    tr, pitchfork = (tracker, None) if tracker is not None else _tracker_for(cfg)
    bp = locate_bifurcation(tr, cfg.bracket, degeneracy=2)
    a0, a1 = a3_integrals(bp)
    tag = bp.symmetry_tag
    a3 = a3_coefficient(a0, a1, tag)
    lo, hi, n = cfg.scan
    params = np.linspace(lo, hi, n)
    kt = _crossing_tracker(tr, bp.parameter, float(params[0]), float(params[-1]))
    scan = scan_eigenvalue(kt, params)
    ref = ReferenceFamily(tr, scan)
    branch = continue_branch(
        bp, ref, ContinuationControls(max_points=cfg.max_points, param_bounds=(lo, hi)), theta=default_theta(a0, a1)
    )
    fold = locate_fold(branch, ref)
    # denser scan inside the comparison window for the first-order kappa map
    half = abs(fold.parameter - bp.parameter)
    window = np.linspace(bp.parameter - half, bp.parameter + half, 7)
    dense = scan_eigenvalue(kt, window)
    line = fit_kappa_linear(dense)
    A3f, A4f = fit_A3A4(fold.kappa0, fold.deltaS0)
    scan = sorted(scan + dense, key=lambda r: r.parameter)
    return CaseResult(cfg, bp, a0, a1, a3, scan, line, branch, fold, A3f, A4f, pitchfork)


def model_errors(res: CaseResult) -> np.ndarray:
    """``|dS - dS_model| / |dS0|`` over points with linear kappa in [kappa0, -kappa0]."""
    rows = relative_action_curve(res.branch, res.A3_fit, res.A4_fit, res.kappa_line)
    k0 = abs(res.fold.kappa0)
    return np.array([abs(r.dS - r.dS_model) / abs(res.fold.deltaS0) for r in rows if abs(r.kappa_linear) <= k0])


def merge_point(modes: int = 64) -> float:
    """Period where the higher- and lower-action LJ eights meet."""
    family = Family.lennard_jones()
    o = solve_seed(SeedKind.LJ_LOW, 16.0, modes, family)
    pts = continue_family(
        o, family, -0.1, ContinuationControls(max_points=60, ds_max=0.3),
        stop=lambda p: len(p) > 4 and p[-1].parameter > p[-2].parameter and p[-1].parameter > 15.0,
    )
    return turning_point(pts)[0]
