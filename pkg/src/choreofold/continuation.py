"""Pseudo-arclength continuation of bifurcated branches and fold analysis.

Unknowns are the reduced coefficients ``y`` (``x = P y`` for an orthonormal
subspace basis ``P``) together with the family parameter ``p``.  Lengths
are measured in the L2(0, T) norm of the orbit at the bifurcation point,
plus the plain parameter difference.  Each corrector step solves the bordered
system

    [ J      F_p   G^T ] [dy]   [-F]
    [ G      0     0   ] [dp] = [ 0]
    [ W t_y  t_p   0   ] [mu]   [-N]

where ``G`` holds the rotation/time-shift generators (gauge) and ``N`` is the
arclength condition along the tangent ``t`` of the previous point.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import interpolate, linalg, signal, sparse

from .outputs import atomic_open, num
from .families import Family, FamilyTracker
from .orbit import (
    Orbit,
    SolveReport,
    action,
    action_gradient,
    action_jacobian,
    com_free_subspace,
    choreography_subspace,
    gauge_rows,
    is_planar,
    residual_norm,
)
from .potentials import DomainError
from .reduction import branch_radii, delta_S_pm, fold_prediction
from .spectrum import BifurcationPoint, ScanRow, l2_inner

log = logging.getLogger(__name__)


class ContinuationError(RuntimeError):
    pass


class Side(str, enum.Enum):
    TOWARD_Q = "TowardQ"
    FOLD_SIDE = "FoldSide"


@dataclass(frozen=True)
class ContinuationControls:
    ds: float | None = None  # first step; default from the seed amplitude
    ds_min: float = 1e-7
    ds_max: float | None = None  # default: predicted fold amplitude / 8
    max_points: int = 80
    tol: float = 1e-11
    max_iter: int = 8
    param_bounds: tuple[float, float] | None = None
    fold_extension: float = 2.6  # continue the fold side to this multiple of r_fold
    other_extension: float = 1.2  # and the opposite side to this multiple
    max_amplitude: float | None = None  # hard cap on |r| (L2 units)


# --- reference family -----------------------------------------------------------------


class ReferenceFamily:
    """Unbifurcated family: action by re-solving, kappa by spline over a scan."""

    def __init__(self, tracker: FamilyTracker, scan: Sequence[ScanRow]):
        rows = sorted(scan, key=lambda r: r.parameter)
        if len(rows) < 4:
            raise ValueError("kappa spline needs at least 4 scan rows")
        self.tracker = tracker
        self.scan = rows
        self._spline = interpolate.CubicSpline([r.parameter for r in rows], [r.kappa for r in rows])
        self._actions: dict[float, float] = {}

    @property
    def family(self) -> Family:
        return self.tracker.family

    def action(self, p: float) -> float:
        p = float(p)
        if p not in self._actions:
            self._actions[p] = action(self.tracker.orbit(p))
        return self._actions[p]

    def kappa(self, p: float) -> float:
        lo, hi = self.scan[0].parameter, self.scan[-1].parameter
        if not lo - 1e-12 <= p <= hi + 1e-12:
            raise ValueError(f"parameter {p} outside the kappa scan [{lo}, {hi}]")
        return float(self._spline(p))


# --- branch data ----------------------------------------------------------------------


@dataclass(frozen=True)
class BranchPoint:
    parameter: float
    orbit: Orbit = field(repr=False)
    S: float
    S_ref: float
    kappa_ref: float
    amplitude: float  # signed projection <x - q*, phi_theta>
    side: Side = Side.TOWARD_Q
    arclength: float = 0.0

    @property
    def dS(self) -> float:
        return self.S - self.S_ref


@dataclass
class Branch:
    family: Family
    points: list[BranchPoint]
    fold_index: int | None = None
    theta: float = 0.0
    message: str = ""

    @property
    def side(self) -> Side:
        """Side of the last point (a branch holds both sides once joined)."""
        return self.points[-1].side

    def parameters(self) -> np.ndarray:
        return np.array([p.parameter for p in self.points])

    def amplitudes(self) -> np.ndarray:
        return np.array([p.amplitude for p in self.points])

    def dS(self) -> np.ndarray:
        return np.array([p.dS for p in self.points])

    def kappas(self) -> np.ndarray:
        return np.array([p.kappa_ref for p in self.points])


# --- geometry -------------------------------------------------------------------------


class _Frame:
    """Subspace basis, L2 metric and anchor point shared by one run."""

    def __init__(self, family: Family, anchor: Orbit, subspace: str = "full", planar: bool | None = None):
        if planar is None:
            planar = is_planar(anchor)
        if subspace == "full":
            P = com_free_subspace(anchor.modes, planar)
        elif subspace == "choreography":
            P = choreography_subspace(anchor.modes, planar)
        else:
            raise ValueError(f"unknown subspace {subspace!r}")
        self.P = sparse.csr_matrix(P)
        self.PT = self.P.T.tocsr()
        D = anchor.ortho_scale()
        self.w = np.asarray(self.PT.multiply(D[None, :]).power(2).sum(axis=1)).ravel()  # L2 weight per column
        self.family = family
        self.anchor = anchor
        self.y_star = self.PT @ anchor.flat()
        self.p_star = family.parameter_of(anchor)
        self.samples = anchor.samples

    @classmethod
    def at(cls, bp: BifurcationPoint, subspace: str = "full") -> "_Frame":
        planar = is_planar(bp.orbit) and all(_z_part(f) <= 1e-10 for f in (bp.phi1, bp.phi2))
        return cls(bp.family, bp.orbit, subspace, planar)

    def x(self, y: np.ndarray) -> np.ndarray:
        return self.P @ y

    def orbit(self, y: np.ndarray, p: float) -> Orbit:
        return self.family.orbit_at((self.P @ y).reshape(9, -1), p, self.samples)

    def reduce(self, coeffs: np.ndarray) -> np.ndarray:
        return self.PT @ np.asarray(coeffs).ravel()

    def norm(self, dy: np.ndarray, dp: float) -> float:
        return float(np.sqrt(np.sum(self.w * dy * dy) + dp * dp))

    def amplitude(self, y: np.ndarray, phi_red: np.ndarray) -> float:
        return float(np.sum(self.w * (y - self.y_star) * phi_red))


def _z_part(c: np.ndarray) -> float:
    c = np.asarray(c).reshape(3, 3, -1)
    return float(np.max(np.abs(c[:, 2, :])) / max(1e-300, np.max(np.abs(c))))


def _phi_theta(bp: BifurcationPoint, theta: float) -> np.ndarray:
    return np.cos(theta) * bp.phi1 + np.sin(theta) * bp.phi2


def default_theta(A3_0: float, A3_1: float) -> float:
    """Branch direction nearest to ``phi2`` among the six extremal angles of
    the cubic term ``-(A3_0 sin 3t + A3_1/3 cos 3t) r^3 / 6``."""
    psi = math.atan2(-A3_1 / 3.0, -A3_0)
    cands = [(math.pi / 2 - psi + k * math.pi) / 3 for k in range(-3, 7)]
    return min(cands, key=lambda t: abs(math.remainder(t - math.pi / 2, 2 * math.pi)))


# --- corrector --------------------------------------------------------------------------


@dataclass
class _State:
    y: np.ndarray
    p: float
    orbit: Orbit
    residual: float
    tangent: tuple[np.ndarray, float] | None = None


def _bordered(fr: _Frame, o: Orbit, G: np.ndarray, wt: np.ndarray, t_p: float) -> np.ndarray:
    n, m = fr.w.size, G.shape[0]
    K = np.zeros((n + m + 1, n + m + 1))
    K[:n, :n] = fr.PT @ (fr.PT @ action_jacobian(o)).T
    K[:n, n] = fr.PT @ fr.family.gradient_dparam(o)
    K[:n, n + 1 :] = G.T
    K[n, :n] = wt
    K[n, n] = t_p
    K[n + 1 :, :n] = G
    return K


def _correct(
    fr: _Frame,
    y_pred: np.ndarray,
    p_pred: float,
    t_y: np.ndarray,
    t_p: float,
    anchor: tuple[np.ndarray, float],
    ds: float,
    tol: float,
    max_iter: int,
) -> tuple[_State | None, int]:
    y, p = y_pred.copy(), float(p_pred)
    y0, p0 = anchor
    G = gauge_rows(fr.x(y_pred), fr.P)
    n = y.size
    wt = fr.w * t_y
    last = math.inf
    for it in range(max_iter + 1):
        o = fr.orbit(y, p)
        try:
            g = action_gradient(o)
        except DomainError:
            return None, it
        res = residual_norm(o, g)
        N = float(wt @ (y - y0) + t_p * (p - p0) - ds)
        # a stalled residual within 100 tol is the roundoff floor
        floor = it > 2 and res > 0.9 * last and res < 100 * tol
        if (res < tol or floor) and abs(N) < 1e-12 * max(1.0, abs(ds)):
            # tangent: null vector of the gradient map, oriented along t
            K = _bordered(fr, o, G, wt, t_p)
            e = np.zeros(K.shape[0])
            e[n] = 1.0
            try:
                tv = linalg.solve(K, e)
            except (linalg.LinAlgError, ValueError):
                return _State(y, p, o, res), it
            nrm = fr.norm(tv[:n], tv[n])
            return _State(y, p, o, res, (tv[:n] / nrm, tv[n] / nrm)), it
        if it == max_iter or not np.isfinite(res) or (it > 2 and res > 0.9 * last):
            return None, it
        last = res
        K = _bordered(fr, o, G, wt, t_p)
        rhs = np.zeros(K.shape[0])
        rhs[:n] = -(fr.PT @ g)
        rhs[n] = -N
        rhs[n + 1 :] = -(G @ (y - y_pred))
        try:
            sol = linalg.solve(K, rhs)
        except (linalg.LinAlgError, ValueError):
            return None, it
        y = y + sol[:n]
        p = p + sol[n]
    return None, max_iter


# --- seeding ---------------------------------------------------------------------------------


def branch_seed(
    bp: BifurcationPoint,
    theta: float = math.pi / 2,
    h: float | None = None,
    *,
    subspace: str = "full",
    tol: float = 1e-11,
    max_iter: int = 12,
    retries: int = 4,
    _frame: _Frame | None = None,
) -> SolveReport:
    """Nearby nonsymmetric solution at L2 amplitude ``h`` along ``phi(theta)``.

    The parameter is a free unknown, fixed by requiring the projection onto
    ``phi(theta) = cos(theta) phi1 + sin(theta) phi2`` to equal ``h``; the
    unbifurcated family has zero projection, so it cannot be reached.  A
    solution within ``|h|/10`` of the bifurcation orbit is rejected and the
    step retried with twice the amplitude; ``h = 0`` returns the orbit itself.
    """
    fr = _frame or _Frame.at(bp, subspace)
    if h is None:
        h = 1e-3 * math.sqrt(l2_inner(bp.orbit, bp.orbit.coeffs, bp.orbit.coeffs))
    phi_red = fr.reduce(_phi_theta(bp, theta))
    phi_red /= math.sqrt(np.sum(fr.w * phi_red * phi_red))
    for _ in range(retries):
        y_pred = fr.y_star + h * phi_red
        st, it = _correct(fr, y_pred, fr.p_star, phi_red, 0.0, (fr.y_star, fr.p_star), h, tol, max_iter)
        if st is None:
            h *= 0.5
            continue
        dist = fr.norm(st.y - fr.y_star, 0.0)
        if h != 0 and dist < abs(h) / 10:
            h *= 2
            continue
        return SolveReport(st.orbit, st.residual, it, True, f"h={h!r}")
    raise ContinuationError(
        "branch seed collapsed or failed; try a larger h or the opposite parameter side"
    )


# --- continuation ----------------------------------------------------------------------------


def _make_point(fr: _Frame, st: _State, ref: ReferenceFamily | None, phi_red: np.ndarray) -> BranchPoint:
    S = action(st.orbit)
    if ref is None:
        S_ref, kap = math.nan, math.nan
    else:
        S_ref, kap = ref.action(st.p), ref.kappa(st.p)
    return BranchPoint(st.p, st.orbit, S, S_ref, kap, fr.amplitude(st.y, phi_red))


def _march(fr: _Frame, prev: _State, cur: _State, ctl: ContinuationControls, ds0: float, status: list[str]):
    """Yield successive converged states beyond ``cur``, moving away from ``prev``."""
    ds_max = ctl.ds_max or 10 * ds0
    ds = ctl.ds or ds0
    while True:
        dy, dp = cur.y - prev.y, cur.p - prev.p
        nrm = fr.norm(dy, dp)
        t_y, t_p = dy / nrm, dp / nrm
        if cur.tangent is not None:
            sgn = 1.0 if np.sum(fr.w * cur.tangent[0] * t_y) + cur.tangent[1] * t_p >= 0 else -1.0
            t_y, t_p = sgn * cur.tangent[0], sgn * cur.tangent[1]
        accepted = None
        while ds >= ctl.ds_min:
            y_pred, p_pred = cur.y + ds * t_y, cur.p + ds * t_p
            st, it = _correct(fr, y_pred, p_pred, t_y, t_p, (cur.y, cur.p), ds, ctl.tol, ctl.max_iter)
            if st is not None:
                ny, np_ = st.y - cur.y, st.p - cur.p
                step = fr.norm(ny, np_)
                cos = (np.sum(fr.w * ny * t_y) + np_ * t_p) / step
                # guard against jumping onto a neighbouring branch
                if step < 2 * ds and cos > 0.8:
                    accepted = (st, it)
                    break
            ds *= 0.5
        if accepted is None:
            status.append("step underflow")
            return
        st, it = accepted
        if ctl.param_bounds and not ctl.param_bounds[0] <= st.p <= ctl.param_bounds[1]:
            status.append("parameter bound reached")
            return
        prev, cur = cur, st
        yield st
        if it <= 3:
            ds = min(ds_max, 1.5 * ds)
        elif it >= 6:
            ds *= 0.7


def _continue_side(
    fr: _Frame,
    phi_red: np.ndarray,
    start: _State,
    ref: ReferenceFamily | None,
    ctl: ContinuationControls,
    stop: Callable[[list[BranchPoint]], bool],
    ds0: float,
) -> tuple[list[BranchPoint], str]:
    """Pseudo-arclength from the bifurcation point through ``start``."""
    pts = [_make_point(fr, start, ref, phi_red)]
    status: list[str] = []
    if stop(pts):
        return pts, "stop condition met"
    for st in _march(fr, _State(fr.y_star, fr.p_star, fr.anchor, 0.0), start, ctl, ds0, status):
        try:
            pts.append(_make_point(fr, st, ref, phi_red))
        except (RuntimeError, ValueError) as exc:
            return pts, f"reference family unavailable: {exc}"
        if stop(pts):
            return pts, "stop condition met"
        if len(pts) >= ctl.max_points:
            return pts, "point budget reached"
    return pts, status[-1] if status else "stopped"


def _fold_index(pts: Sequence) -> int | None:
    """Index of the most prominent interior extremum of the parameter.

    ``pts`` holds points with a ``parameter`` attribute or plain values.
    Extrema less prominent than ``1e-6 * max|p|`` are taken as step noise.
    """
    p = np.array([getattr(q, "parameter", q) for q in pts], dtype=float)
    if p.size < 3:
        return None
    floor = 1e-6 * max(1.0, float(np.max(np.abs(p))))
    best, best_prom = None, 0.0
    for sgn in (1.0, -1.0):
        idx, props = signal.find_peaks(sgn * p, prominence=floor)
        for i, prom in zip(idx, props["prominences"]):
            if prom > best_prom:
                best, best_prom = int(i), float(prom)
    return best


def continue_branch(
    bp: BifurcationPoint,
    reference: ReferenceFamily | None = None,
    controls: ContinuationControls = ContinuationControls(),
    *,
    theta: float = math.pi / 2,
    h: float | None = None,
    subspace: str = "full",
) -> Branch:
    """Both halves of the bifurcated branch through ``bp`` along ``phi(theta)``.

    Seeds at amplitudes ``+h`` and ``-h`` are continued outward.  The half
    that turns back in the parameter is continued past its fold to
    ``fold_extension`` times the fold amplitude, the other half to
    ``other_extension`` times; points are returned ordered by amplitude.
    """
    fr = _Frame.at(bp, subspace)
    if h is None:
        h = 2e-3 * math.sqrt(l2_inner(bp.orbit, bp.orbit.coeffs, bp.orbit.coeffs))
    phi_red = fr.reduce(_phi_theta(bp, theta))
    phi_red /= math.sqrt(np.sum(fr.w * phi_red * phi_red))
    cap = controls.max_amplitude or math.inf

    def seed_pair(h):
        out = {}
        for sign in (1.0, -1.0):
            rep = branch_seed(bp, theta, sign * h, subspace=subspace, tol=controls.tol, _frame=fr)
            out[sign] = _State(fr.reduce(rep.orbit.coeffs), fr.family.parameter_of(rep.orbit), rep.orbit, rep.residual_norm)
        # p(r) ~ p* + alpha r + beta r^2 through the two seeds predicts the fold
        alpha = (out[1.0].p - out[-1.0].p) / (2 * h)
        beta = (out[1.0].p + out[-1.0].p - 2 * fr.p_star) / (2 * h * h)
        return out, (-alpha / (2 * beta) if beta != 0 else math.inf)

    seeds, r_guess = seed_pair(h)
    if abs(r_guess) < 5 * h:
        h = abs(r_guess) / 10
        seeds, r_guess = seed_pair(h)
    first = 1.0 if r_guess > 0 else -1.0
    if controls.ds_max is None and math.isfinite(r_guess):
        controls = replace(controls, ds_max=max(abs(h), abs(r_guess) / 8))

    halves = {}
    fold_amp = None
    for sign in (first, -first):

        def stop(pts, fa=fold_amp):
            a = abs(pts[-1].amplitude)
            if a > cap:
                return True
            i = _fold_index(pts)
            if i is not None:
                return a > controls.fold_extension * abs(pts[i].amplitude)
            return a > controls.other_extension * (fa if fa is not None else abs(r_guess))

        pts, msg = _continue_side(fr, phi_red, seeds[sign], reference, controls, stop, abs(h))
        halves[sign] = (pts, msg)
        i = _fold_index(pts)
        if i is not None and fold_amp is None:
            fold_amp = abs(pts[i].amplitude)
        log.info("half %+g: %d points (%s)", sign, len(pts), msg)
    neg = list(reversed(halves[-1.0][0]))
    pos = halves[1.0][0]
    pts = neg + pos
    i = _fold_index(pts)
    fold_amp = abs(pts[i].amplitude) if i is not None else None
    fold_sign = math.copysign(1.0, pts[i].amplitude) if i is not None else 0.0
    scale = bp.orbit.ortho_scale()
    labeled, s = [], 0.0
    for k, q in enumerate(pts):
        if k:
            a = pts[k - 1]
            dx = (q.orbit.flat() - a.orbit.flat()) * scale
            s += math.hypot(float(np.linalg.norm(dx)), q.parameter - a.parameter)
        beyond = fold_amp is not None and q.amplitude * fold_sign > fold_amp
        side = Side.FOLD_SIDE if beyond else Side.TOWARD_Q
        labeled.append(replace(q, side=side, arclength=s))
    msgs = "; ".join(f"{'+' if s > 0 else '-'}: {halves[s][1]}" for s in (1.0, -1.0))
    return Branch(bp.family, labeled, i, theta, msgs)


# --- whole families and branch switching -----------------------------------------------------


@dataclass(frozen=True)
class FamilyPoint:
    parameter: float
    orbit: Orbit = field(repr=False)
    S: float


def continue_family(
    orbit: Orbit,
    family: Family,
    direction: float,
    controls: ContinuationControls = ContinuationControls(),
    *,
    subspace: str = "choreography",
    stop: Callable[[list[FamilyPoint]], bool] | None = None,
) -> list[FamilyPoint]:
    """Pseudo-arclength continuation of a solution family through folds.

    ``orbit`` must be a converged solution; the first step is a natural
    parameter step of signed size ``direction``.
    """
    from .orbit import solve_orbit

    fr = _Frame(family, orbit, subspace)
    p0 = fr.p_star
    rep = solve_orbit(family.with_parameter(orbit, p0 + direction), fr.P.toarray(), tol=controls.tol)
    if not rep.converged:
        raise ContinuationError(f"first family step failed: {rep.message}")
    prev = _State(fr.y_star, p0, orbit, 0.0)
    cur = _State(fr.reduce(rep.orbit.coeffs), p0 + direction, rep.orbit, rep.residual_norm)
    pts = [FamilyPoint(p0, orbit, action(orbit)), FamilyPoint(cur.p, cur.orbit, action(cur.orbit))]
    ds0 = fr.norm(cur.y - prev.y, cur.p - prev.p)
    status: list[str] = []
    for st in _march(fr, prev, cur, controls, ds0, status):
        pts.append(FamilyPoint(st.p, st.orbit, action(st.orbit)))
        if len(pts) >= controls.max_points or (stop is not None and stop(pts)):
            break
    return pts


def _local_arclength(points: Sequence, i: int) -> np.ndarray:
    """Arclength of points ``i-1, i, i+1`` measured from point ``i``."""
    trio = points[i - 1 : i + 2]
    scale = points[0].orbit.ortho_scale()
    s = [0.0]
    for a, c in zip(trio[:-1], trio[1:]):
        dx = (c.orbit.flat() - a.orbit.flat()) * scale
        s.append(s[-1] + math.hypot(float(np.linalg.norm(dx)), c.parameter - a.parameter))
    return np.array(s) - s[1]


def _vertex(s: np.ndarray, values) -> tuple[float, np.ndarray]:
    cp = np.polyfit(s, values, 2)
    if cp[0] == 0:
        raise ContinuationError("degenerate fold fit")
    sf = -cp[1] / (2 * cp[0])
    return float(np.polyval(cp, sf)), sf


def turning_point(points: Sequence[FamilyPoint | BranchPoint]) -> tuple[float, int]:
    """Extremal parameter by a 3-point quadratic fit in arclength."""
    i = _fold_index(points)
    if i is None:
        raise ContinuationError("no parameter turning point")
    pf, _ = _vertex(_local_arclength(points, i), [q.parameter for q in points[i - 1 : i + 2]])
    return pf, i


def switch_branch(
    bp: BifurcationPoint,
    target: float,
    controls: ContinuationControls = ContinuationControls(),
    *,
    subspace: str = "choreography",
    h: float | None = None,
) -> Orbit:
    """Follow the branch leaving a simple (d = 1) crossing to parameter ``target``.

    Both signs of the seed amplitude are tried; the half whose parameter
    moves toward ``target`` is continued until it brackets ``target`` and
    the orbit there is re-solved at fixed parameter.
    """
    from .orbit import solve_orbit

    fr = _Frame.at(bp, subspace)
    if h is None:
        h = 1e-3 * math.sqrt(l2_inner(bp.orbit, bp.orbit.coeffs, bp.orbit.coeffs))
    phi_red = fr.reduce(bp.phi1)
    phi_red /= math.sqrt(np.sum(fr.w * phi_red * phi_red))
    toward = math.copysign(1.0, target - fr.p_star)
    for sign in (1.0, -1.0):
        rep = branch_seed(bp, 0.0, sign * h, subspace=subspace, tol=controls.tol, _frame=fr)
        start = _State(fr.reduce(rep.orbit.coeffs), fr.family.parameter_of(rep.orbit), rep.orbit, rep.residual_norm)
        if (start.p - fr.p_star) * toward <= 0 and abs(start.p - fr.p_star) > 1e-12:
            continue
        status: list[str] = []
        prev_state = start
        for st in _march(fr, _State(fr.y_star, fr.p_star, fr.anchor, 0.0), start, controls, abs(h), status):
            if (st.p - target) * toward >= 0:
                near = st if abs(st.p - target) < abs(prev_state.p - target) else prev_state
                fixed = solve_orbit(fr.family.with_parameter(near.orbit, target), fr.P.toarray(), tol=controls.tol)
                if not fixed.converged:
                    raise ContinuationError(f"branch re-solve at {target} failed: {fixed.message}")
                return fixed.orbit
            prev_state = st
        raise ContinuationError(f"branch did not reach {target}: {status[-1] if status else 'stopped'}")
    raise ContinuationError("no branch half moves toward the target parameter")


# --- fold and curves ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldReport:
    parameter: float
    kappa0: float
    deltaS0: float
    amplitude: float


def fold_from_table(s, p, dS, amplitude, kappa, i: int | None = None) -> FoldReport:
    """Fold by 3-point quadratic fits in arclength ``s`` around the turning point."""
    s, p, dS = (np.asarray(v, dtype=float) for v in (s, p, dS))
    amplitude, kappa = np.asarray(amplitude, dtype=float), np.asarray(kappa, dtype=float)
    if i is None:
        i = _fold_index(p)
        if i is None:
            raise ContinuationError("branch has no parameter turning point")
    sl = slice(i - 1, i + 2)
    ss = s[sl] - s[i]
    pf, sf = _vertex(ss, p[sl])
    at = lambda v: float(np.polyval(np.polyfit(ss, v[sl], 2), sf))  # noqa: E731
    return FoldReport(pf, at(kappa), at(dS), at(amplitude))


def locate_fold(b: Branch, reference: ReferenceFamily | None = None) -> FoldReport:
    """Turning point of the parameter by a 3-point quadratic fit in arclength.

    ``dS0`` is the quadratic fit of ``S - S_ref`` at the same arclength and
    ``kappa0`` the reference eigenvalue at the fold parameter (the fitted
    branch value when no reference family is given).
    """
    i = _fold_index(b.points) if b.fold_index is None else b.fold_index
    if i is None:
        raise ContinuationError("branch has no parameter turning point")
    s = np.array([q.arclength for q in b.points])
    rep = fold_from_table(s, b.parameters(), b.dS(), b.amplitudes(), b.kappas(), i)
    if reference is not None:
        rep = replace(rep, kappa0=reference.kappa(rep.parameter))
    return rep


def fit_kappa_linear(scan: Sequence[ScanRow]) -> tuple[float, float]:
    """Least-squares ``kappa = intercept + slope * parameter``."""
    p = np.array([r.parameter for r in scan], dtype=float)
    k = np.array([r.kappa for r in scan], dtype=float)
    if p.size < 3:
        raise ValueError("need at least 3 scan points")
    if np.ptp(p) == 0:
        raise ValueError("degenerate abscissae")
    A = np.column_stack([np.ones_like(p), p])
    (c0, c1), *_ = np.linalg.lstsq(A, k, rcond=None)
    return float(c0), float(c1)


def model_delta_S(kappa: float, A3: float, A4: float, side: Side) -> float:
    """Model relative action with the discriminant clipped at the fold."""
    radii = branch_radii(kappa, A3, A4)
    if radii is None:
        return fold_prediction(A3, A4).deltaS0
    dm, dp = delta_S_pm(kappa, A3, A4)
    return dp if Side(side) is Side.FOLD_SIDE else dm


@dataclass(frozen=True)
class CurveRow:
    parameter: float
    kappa: float
    kappa_linear: float
    dS: float
    dS_model: float
    side: Side
    is_fold: bool


def relative_action_curve(b: Branch, A3: float, A4: float, kappa_line: tuple[float, float]) -> list[CurveRow]:
    c0, c1 = kappa_line
    rows = []
    for i, q in enumerate(b.points):
        kl = c0 + c1 * q.parameter
        rows.append(CurveRow(q.parameter, q.kappa_ref, kl, q.dS, model_delta_S(kl, A3, A4, q.side), q.side, i == b.fold_index))
    return rows


BRANCH_COLUMNS = ("parameter", "kappa_ref", "S", "S_ref", "dS", "side", "is_fold", "amplitude", "arclength")


def write_branch_csv(b: Branch, path, header_lines=()) -> None:
    with atomic_open(path) as fh:
        for h in header_lines:
            fh.write(f"# {h}\n")
        fh.write(",".join(BRANCH_COLUMNS) + "\n")
        for i, q in enumerate(b.points):
            fh.write(
                f"{num(q.parameter)},{num(q.kappa_ref)},{num(q.S)},{num(q.S_ref)},{num(q.dS)},"
                f"{q.side.value},{int(i == b.fold_index)},{num(q.amplitude)},{num(q.arclength)}\n"
            )


def read_branch_csv(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    cols = lines[0].strip().split(",")
    for ln in lines[1:]:
        vals = ln.strip().split(",")
        d = dict(zip(cols, vals))
        for k in cols:
            if k == "side":
                d[k] = Side(d[k])
            elif k == "is_fold":
                d[k] = bool(int(d[k]))
            else:
                d[k] = float(d[k])
        rows.append(d)
    return rows


def branch_from_rows(rows: Sequence[dict], family=None) -> Branch:
    """Orbit-free branch rebuilt from ``read_branch_csv`` rows."""
    pts = [
        BranchPoint(r["parameter"], None, r["S"], r["S_ref"], r["kappa_ref"], r["amplitude"], r["side"], r.get("arclength", 0.0))
        for r in rows
    ]
    fi = next((i for i, r in enumerate(rows) if r.get("is_fold")), None)
    return Branch(family, pts, fi, None, "read from table")


def write_curve_rows(rows: Sequence[CurveRow], path, header_lines=()) -> None:
    with atomic_open(path) as fh:
        for h in header_lines:
            fh.write(f"# {h}\n")
        fh.write("parameter,kappa_ref,kappa_linear,dS,dS_model,side,is_fold\n")
        for r in rows:
            fh.write(f"{num(r.parameter)},{num(r.kappa)},{num(r.kappa_linear)},{num(r.dS)},{num(r.dS_model)},{r.side.value},{int(r.is_fold)}\n")
