"""Spectrum of the Hessian operator ``H(q) = -d^2/dt^2 - d^2U/dq^2``.

``H`` is discretized in the L2(0, T)-orthonormal Fourier basis, so its matrix
is the Hessian of the discrete action after a diagonal rescaling and its
eigenvectors are eigenfunctions normalized by ``int_0^T phi_i . phi_j dt``.
"""

from __future__ import annotations

import enum
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .outputs import atomic_open, num
from .families import Family, FamilyTracker
from .orbit import KERNEL_LABELS, Orbit, action_jacobian, kernel_coeffs, orbit_from_dict, orbit_to_dict
from .potentials import directional_derivative

log = logging.getLogger(__name__)


class SpectrumError(RuntimeError):
    pass


class ModeTag(str, enum.Enum):
    TRANSLATION = "translation"
    ROTATION = "rotation"
    TIME_SHIFT = "time_shift"
    NONTRIVIAL = "nontrivial"


class SymmetryTag(str, enum.Enum):
    D3 = "D3"
    C3 = "C3"


def assemble_hessian(o: Orbit) -> np.ndarray:
    """Matrix of ``H(q)`` in the orthonormal Fourier basis."""
    D = o.ortho_scale()
    H = action_jacobian(o) / np.outer(D, D)
    return 0.5 * (H + H.T)


def to_ortho(o: Orbit, coeffs: np.ndarray) -> np.ndarray:
    return np.asarray(coeffs).ravel() * o.ortho_scale()


def from_ortho(o: Orbit, vec: np.ndarray) -> np.ndarray:
    return (np.asarray(vec) / o.ortho_scale()).reshape(9, -1)


def l2_inner(o: Orbit, f: np.ndarray, g: np.ndarray) -> float:
    """``int_0^T f . g dt`` for coefficient arrays of two 9-vector functions."""
    return float(to_ortho(o, f) @ to_ortho(o, g))


def trivial_threshold(o: Orbit) -> float:
    return 1e-6 * max(1.0, (2 * np.pi / o.period) ** 2)


@dataclass(frozen=True)
class SpectrumReport:
    """Lowest-|eigenvalue| eigenpairs of ``H(q)``.

    ``vectors[:, i]`` holds eigenfunction ``i`` in the orthonormal basis;
    :meth:`function` converts it to natural Fourier amplitudes.
    """

    orbit: Orbit
    eigenvalues: np.ndarray
    vectors: np.ndarray = field(repr=False)
    tags: tuple[ModeTag, ...]

    def function(self, i: int) -> np.ndarray:
        return from_ortho(self.orbit, self.vectors[:, i])

    @property
    def trivial(self) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.tags) if t is not ModeTag.NONTRIVIAL], dtype=int)

    @property
    def nontrivial(self) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.tags) if t is ModeTag.NONTRIVIAL], dtype=int)

    def groups(self, tol: float = 1e-6) -> list[list[int]]:
        """Nontrivial eigenvalues clustered within ``tol`` of each other."""
        idx = sorted(self.nontrivial, key=lambda i: self.eigenvalues[i])
        out: list[list[int]] = []
        for i in idx:
            if out and abs(self.eigenvalues[i] - self.eigenvalues[out[-1][-1]]) < tol:
                out[-1].append(i)
            else:
                out.append([i])
        return out


def _kernel_basis(o: Orbit) -> tuple[np.ndarray, list[ModeTag]]:
    gens = kernel_coeffs(o)
    vecs, tags = [], []
    for label in KERNEL_LABELS:
        v = to_ortho(o, gens[label])
        if np.linalg.norm(v) > 1e-12:
            vecs.append(v)
            tags.append(ModeTag(label.split("_")[0] if label != "time_shift" else "time_shift"))
    return np.array(vecs).T, tags


def eigen_spectrum(o: Orbit, count: int = 20, *, hessian: np.ndarray | None = None) -> SpectrumReport:
    """Eigenpairs of ``H(q)`` with the ``count`` smallest magnitudes.

    Trivial symmetry modes are recognised by a small eigenvalue together with
    an overlap of at least 0.99 with the span of the analytic kernel
    (translations, rotations ``n x q(t)``, time shift ``qdot(t)``); that
    block is then rotated onto the kernel generators class by class so each
    returned trivial vector carries a single tag.
    """
    if count < 10:
        raise ValueError("count must be at least 10")
    H = assemble_hessian(o) if hessian is None else hessian
    scale = max(1.0, (2 * np.pi / o.period) ** 2)
    window = 0.5 * scale
    n = H.shape[0]
    while True:
        try:
            w, V = linalg.eigh(H, subset_by_value=(-window, window), driver="evr")
        except linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
            raise SpectrumError(f"eigensolver failed on {n}x{n} Hessian: {exc}") from exc
        if len(w) >= count + 8 or window > 1e6:
            break
        window *= 4
    order = np.argsort(np.abs(w))
    w, V = w[order], V[:, order]

    K, ktags = _kernel_basis(o)
    K = K / np.linalg.norm(K, axis=0)
    tags = [ModeTag.NONTRIVIAL] * len(w)
    # Near-zero eigenvalues form one cluster in which LAPACK may mix trivial
    # and physical modes; split it by projecting the analytic kernel in.
    cluster = [i for i in range(len(w)) if abs(w[i]) < trivial_threshold(o)]
    if cluster:
        W = V[:, cluster]
        proj = W @ (W.T @ K)
        basis, btags = [], []
        for j in range(K.shape[1]):
            if np.linalg.norm(proj[:, j]) ** 2 < 0.99:
                continue
            v = proj[:, j].copy()
            for bvec in basis:
                v -= (bvec @ v) * bvec
            nv = np.linalg.norm(v)
            if nv > 0.3 and len(basis) < len(cluster):
                basis.append(v / nv)
                btags.append(ktags[j])
        nb = len(basis)
        if nb:
            B = np.array(basis).T
            V[:, cluster[:nb]] = B
            w[cluster[:nb]] = np.einsum("ij,ij->j", B, H @ B)
            for i, t in zip(cluster, btags):
                tags[i] = t
        rest = cluster[nb:]
        if rest:
            R = W - (B @ (B.T @ W) if nb else 0.0)
            U, sv, _ = np.linalg.svd(R, full_matrices=False)
            R = U[:, : len(rest)]
            wr, vr = np.linalg.eigh(R.T @ H @ R)
            V[:, rest] = R @ vr
            w[rest] = wr
    order = np.lexsort((np.arange(len(w)), np.abs(w)))[:count]
    return SpectrumReport(o, w[order].copy(), V[:, order].copy(), tuple(tags[i] for i in order))


def kappa_check(o: Orbit, phi: np.ndarray) -> float:
    """``int_0^T [phi_dot . phi_dot + (phi d/dq)^2 (-U)] dt`` by the action quadrature."""
    phi = np.asarray(phi).reshape(9, -1)
    b = o.basis
    vals = b.values @ phi.T
    dots = b.derivs @ phi.T / o.period
    kin = np.sum(dots * dots, axis=1)
    pot = directional_derivative(o.potential, o.positions(), [vals, vals])
    return float(o.period * np.mean(kin + pot))


# --- tracking along a family ------------------------------------------------------


def _select_by_overlap(report: SpectrumReport, ref: np.ndarray) -> tuple[list[int], float]:
    """Pick ``ref.shape[1]`` nontrivial eigenvectors best overlapping ``ref``."""
    d = ref.shape[1]
    nt = report.nontrivial
    ov = np.sum((ref.T @ report.vectors[:, nt]) ** 2, axis=0)
    pick = [int(nt[i]) for i in np.argsort(-ov)[:d]]
    sub = report.vectors[:, pick]
    quality = float(np.min(linalg.svdvals(ref.T @ sub)) ** 2)
    return sorted(pick, key=lambda i: report.eigenvalues[i]), quality


@dataclass
class TrackedMode:
    parameter: float
    kappa: float
    eigenvalues: np.ndarray
    vectors: np.ndarray
    orbit: Orbit
    overlap: float

    @property
    def degeneracy(self) -> int:
        return self.vectors.shape[1]


class KappaTracker:
    """Follows one (possibly degenerate) eigenvalue of a family by overlap.

    New parameters are reached from the nearest tracked one in steps of at
    most ``max_step`` so the eigenvector overlap stays meaningful.
    """

    def __init__(self, tracker: FamilyTracker, mode: TrackedMode, count: int = 24, max_step: float | None = None):
        self.tracker = tracker
        self.count = count
        if max_step is None:
            max_step = 0.02 if tracker.family.symbol == "T" else 0.005
        self.max_step = max_step
        self._modes = {mode.parameter: mode}

    @property
    def family(self) -> Family:
        return self.tracker.family

    @property
    def modes(self) -> list[TrackedMode]:
        return [self._modes[p] for p in sorted(self._modes)]

    def nearest(self, p: float) -> TrackedMode:
        return self._modes[min(self._modes, key=lambda c: abs(c - p))]

    def mode(self, p: float, min_overlap: float = 0.5) -> TrackedMode:
        p = float(p)
        if p in self._modes:
            return self._modes[p]
        near = self.nearest(p)
        nsteps = max(1, int(np.ceil(abs(p - near.parameter) / self.max_step)))
        for k in range(1, nsteps + 1):
            pk = p if k == nsteps else near.parameter + (p - near.parameter) * k / nsteps
            near = self._step(near, pk, min_overlap)
        return near

    def _step(self, near: TrackedMode, p: float, min_overlap: float) -> TrackedMode:
        o = self.tracker.orbit(p)
        rep = eigen_spectrum(o, self.count)
        pick, q = _select_by_overlap(rep, near.vectors)
        if q < min_overlap:
            raise SpectrumError(
                f"lost eigenvalue tracking at {self.family.symbol}={p:.8f}: overlap {q:.3f}"
            )
        vals = rep.eigenvalues[pick]
        mode = TrackedMode(p, float(np.mean(vals)), vals, rep.vectors[:, pick], o, q)
        self._modes[p] = mode
        return mode

    def kappa(self, p: float) -> float:
        return self.mode(p).kappa


def initial_modes(o: Orbit, p: float, degeneracy: int, window: float, count: int = 24) -> list[TrackedMode]:
    """Nontrivial eigen-groups of size ``degeneracy`` with |kappa| < window."""
    rep = eigen_spectrum(o, count)
    out = []
    for g in rep.groups():
        vals = rep.eigenvalues[g]
        if len(g) == degeneracy and abs(np.mean(vals)) < window:
            out.append(TrackedMode(p, float(np.mean(vals)), vals, rep.vectors[:, g], o, 1.0))
    return out


@dataclass
class ScanRow:
    parameter: float
    kappa: float
    degeneracy: int


def scan_eigenvalue(ktracker: KappaTracker, params) -> list[ScanRow]:
    """Tracked eigenvalue over ``params`` (visited in sorted order)."""
    rows = []
    for p in sorted(float(v) for v in params):
        m = ktracker.mode(p)
        rows.append(ScanRow(p, m.kappa, m.degeneracy))
    return rows


def write_scan_csv(rows: list[ScanRow], path, header_lines=()) -> None:
    with atomic_open(path) as fh:
        for h in header_lines:
            fh.write(f"# {h}\n")
        fh.write("parameter,kappa,degeneracy\n")
        for r in rows:
            fh.write(f"{num(r.parameter)},{num(r.kappa)},{r.degeneracy}\n")


# --- bifurcation points -------------------------------------------------------------


@dataclass(frozen=True)
class BifurcationPoint:
    family: Family
    parameter: float
    orbit: Orbit
    phi1: np.ndarray
    phi2: np.ndarray
    eigenvalues: np.ndarray
    degeneracy: int
    symmetry_tag: SymmetryTag | None = None
    gauge_free: bool = False

    @property
    def kappa(self) -> float:
        return float(np.mean(self.eigenvalues))


def bifurcation_to_dict(bp: BifurcationPoint) -> dict:
    return {
        "family": bp.family.to_dict(),
        "parameter": bp.parameter,
        "degeneracy": bp.degeneracy,
        "symmetry_tag": bp.symmetry_tag.value if bp.symmetry_tag else None,
        "gauge_free": bp.gauge_free,
        "eigenvalues": [float(v) for v in bp.eigenvalues],
        "orbit": orbit_to_dict(bp.orbit),
        "phi1": [row.tolist() for row in bp.phi1],
        "phi2": [row.tolist() for row in bp.phi2],
    }


def bifurcation_from_dict(d: dict) -> BifurcationPoint:
    tag = SymmetryTag(d["symmetry_tag"]) if d.get("symmetry_tag") else None
    return BifurcationPoint(
        Family.from_dict(d["family"]),
        float(d["parameter"]),
        orbit_from_dict(d["orbit"]),
        np.array(d["phi1"], dtype=float),
        np.array(d["phi2"], dtype=float),
        np.array(d["eigenvalues"], dtype=float),
        int(d["degeneracy"]),
        tag,
        bool(d.get("gauge_free", False)),
    )


def make_tracker(tracker: FamilyTracker, p0: float, degeneracy: int, *, window: float = 0.05, count: int = 24) -> list[KappaTracker]:
    o = tracker.orbit(p0)
    return [KappaTracker(tracker, m, count) for m in initial_modes(o, p0, degeneracy, window, count)]


def locate_bifurcation(
    tracker: FamilyTracker,
    bracket: tuple[float, float],
    *,
    degeneracy: int = 2,
    window: float = 0.05,
    tol: float = 1e-8,
) -> BifurcationPoint:
    """Parameter where a nontrivial eigen-group of the given size crosses zero.

    Candidate groups with ``|kappa| < window`` at the left end are tracked to
    the right end; the one changing sign is refined by Brent's method until
    ``|kappa| < tol``.
    """
    lo, hi = map(float, bracket)
    cands = make_tracker(tracker, lo, degeneracy, window=window)
    chosen = None
    for kt in cands:
        try:
            k_lo, k_hi = kt.kappa(lo), kt.kappa(hi)
        except SpectrumError as exc:
            log.info("candidate dropped: %s", exc)
            continue
        if k_lo * k_hi < 0:
            chosen = kt
            break
    if chosen is None:
        raise SpectrumError(f"no sign change of a {degeneracy}-fold eigenvalue in [{lo}, {hi}]")
    kt = chosen
    # steps no larger than the bracket keep the overlap tracking continuous
    p_star = optimize.brentq(kt.kappa, lo, hi, xtol=1e-13, maxiter=200)
    mode = kt.mode(p_star)
    if abs(mode.kappa) > tol:
        # polish with secant steps on the tracked value
        p_star = optimize.newton(kt.kappa, p_star, x1=p_star * (1 + 1e-9), tol=1e-14, maxiter=20)
        mode = kt.mode(p_star)
    vecs = mode.vectors
    phi = [from_ortho(mode.orbit, vecs[:, i]) for i in range(vecs.shape[1])]
    phi1 = phi[0]
    phi2 = phi[1] if len(phi) > 1 else np.zeros_like(phi1)
    bp = BifurcationPoint(tracker.family, float(p_star), mode.orbit, phi1, phi2, mode.eigenvalues, vecs.shape[1])
    return select_phi2(bp) if degeneracy == 2 else bp


# --- symmetry of the degenerate pair --------------------------------------------------


@dataclass(frozen=True)
class SymmetryOp:
    """``(g f)(tau) = R Pi f(sigma * tau + shift)`` on 9-vector functions."""

    signs: tuple[float, float, float]
    perm: tuple[int, int, int]
    sigma: int
    shift: float

    def apply(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.asarray(coeffs).reshape(3, 3, -1)
        m = (c.shape[-1] - 1) // 2
        c = c[list(self.perm)] * np.asarray(self.signs)[None, :, None]
        c = c.copy()
        if self.sigma < 0:
            c[..., m + 1 :] *= -1
        n = np.arange(1, m + 1)
        cp, sp = np.cos(2 * np.pi * n * self.shift), np.sin(2 * np.pi * n * self.shift)
        cc, ss = c[..., 1 : m + 1].copy(), c[..., m + 1 :].copy()
        c[..., 1 : m + 1] = cc * cp + ss * sp
        c[..., m + 1 :] = -cc * sp + ss * cp
        return c.reshape(9, -1)


def _shift_residuals(c: np.ndarray, target: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    m = (c.shape[-1] - 1) // 2
    n = np.arange(1, m + 1)
    ang = 2 * np.pi * np.outer(shifts, n)
    cp, sp = np.cos(ang)[:, None, :], np.sin(ang)[:, None, :]
    cc, ss = c[None, :, 1 : m + 1], c[None, :, m + 1 :]
    r_c = cc * cp + ss * sp - target[None, :, 1 : m + 1]
    r_s = -cc * sp + ss * cp - target[None, :, m + 1 :]
    r0 = c[:, 0] - target[:, 0]
    return np.sum(r_c**2, axis=(1, 2)) + np.sum(r_s**2, axis=(1, 2)) + np.sum(r0**2)


def symmetry_group(o: Orbit, tol: float = 1e-7) -> list[SymmetryOp]:
    """Space-time symmetries of the orbit among axis reflections, body
    permutations, time reversal and time shifts."""
    c = o.coeffs
    scale = float(np.sum(c**2))
    shifts = np.arange(720) / 720
    ops = []
    for sx, sy, sz in itertools.product((1.0, -1.0), repeat=3):
        for perm in itertools.permutations(range(3)):
            for sigma in (1, -1):
                base = SymmetryOp((sx, sy, sz), perm, sigma, 0.0).apply(c)
                res = _shift_residuals(base, c, shifts)
                k = int(np.argmin(res))
                f = lambda s: float(_shift_residuals(base, c, np.array([s]))[0])
                r = optimize.minimize_scalar(f, bounds=(shifts[k] - 1 / 720, shifts[k] + 1 / 720), method="bounded", options={"xatol": 1e-14})
                if r.fun / scale < tol**2:
                    ops.append(SymmetryOp((sx, sy, sz), perm, sigma, float(r.x) % 1.0))
    return ops


def representation(o: Orbit, phi1: np.ndarray, phi2: np.ndarray, ops: list[SymmetryOp]) -> list[np.ndarray]:
    """2x2 matrices ``<phi_i, g phi_j>`` of each symmetry on the pair."""
    basis = [phi1, phi2]
    mats = []
    for g in ops:
        imgs = [g.apply(p) for p in basis]
        mats.append(np.array([[l2_inner(o, basis[i], imgs[j]) for j in range(2)] for i in range(2)]))
    return mats


def symmetry_score(bp: "BifurcationPoint", phi: np.ndarray, ops: list[SymmetryOp] | None = None) -> float:
    """Largest ``<phi, g phi> / <phi, phi>`` over symmetries that do not act as
    the identity on the degenerate pair."""
    o = bp.orbit
    ops = symmetry_group(o) if ops is None else ops
    u = np.array([l2_inner(o, bp.phi1, phi), l2_inner(o, bp.phi2, phi)])
    u /= np.linalg.norm(u)
    best = -1.0
    for m in representation(o, bp.phi1, bp.phi2, ops):
        if np.allclose(m, np.eye(2), atol=1e-4):
            continue
        best = max(best, float(u @ m @ u))
    return best


def _fix_sign(phi: np.ndarray) -> np.ndarray:
    flat = phi.ravel()
    return phi if flat[np.argmax(np.abs(flat))] >= 0 else -phi


def select_phi2(bp: BifurcationPoint) -> BifurcationPoint:
    """Rotate the degenerate basis so ``phi2`` is the more symmetric member.

    A reflection-type element (2x2 representation with determinant -1)
    makes the pair D3; ``phi2`` is then its fixed direction.  Without one the
    pair is C3 and the basis is returned unchanged and flagged gauge-free.
    """
    if bp.degeneracy != 2:
        raise ValueError("phi2 selection needs a doubly degenerate pair")
    o = bp.orbit
    ops = symmetry_group(o)
    mats = representation(o, bp.phi1, bp.phi2, ops)
    refl = [m for m in mats if np.linalg.det(m) < -0.5 and abs(np.trace(m)) < 0.5]
    if not refl:
        return BifurcationPoint(bp.family, bp.parameter, o, _fix_sign(bp.phi1), _fix_sign(bp.phi2), bp.eigenvalues, 2, SymmetryTag.C3, True)
    m = 0.5 * (refl[0] + refl[0].T)
    w, v = np.linalg.eigh(m)
    fixed, odd = v[:, np.argmax(w)], v[:, np.argmin(w)]
    phi2 = fixed[0] * bp.phi1 + fixed[1] * bp.phi2
    phi1 = odd[0] * bp.phi1 + odd[1] * bp.phi2
    return BifurcationPoint(bp.family, bp.parameter, o, _fix_sign(phi1), _fix_sign(phi2), bp.eigenvalues, 2, SymmetryTag.D3, False)


def rotate_pair(bp: BifurcationPoint, angle: float) -> BifurcationPoint:
    c, s = np.cos(angle), np.sin(angle)
    phi1 = c * bp.phi1 + s * bp.phi2
    phi2 = -s * bp.phi1 + c * bp.phi2
    return BifurcationPoint(bp.family, bp.parameter, bp.orbit, phi1, phi2, bp.eigenvalues, bp.degeneracy, bp.symmetry_tag, bp.gauge_free)
