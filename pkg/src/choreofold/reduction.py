"""Quartic reduced action of a three-fold-type bifurcation.

Near the bifurcation the action restricted to the degenerate eigenplane,
written in polar coordinates ``r1 = r cos(theta)``, ``r2 = r sin(theta)``, is

    dS(r, theta) = kappa/2 r^2 + A3/3! r^3 sin(3 theta) + A4/4! r^4.

This module evaluates its critical points, the fold where the bifurcation
branch turns back, the cusp of the relative action, and the cubic coefficient
from integrals over a computed bifurcation point.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .outputs import atomic_open, num
from .orbit import Orbit
from .potentials import DomainError, directional_derivative
from .spectrum import BifurcationPoint, SymmetryTag


@dataclass(frozen=True)
class ReducedModel:
    kappa: float
    A3: float
    A4: float
    A3_0: float | None = None
    A3_1: float | None = None
    symmetry_tag: SymmetryTag | None = None

    def __post_init__(self):
        if self.A3 == 0 or self.A4 == 0:
            raise DomainError("reduced model needs A3 != 0 and A4 != 0")


@dataclass(frozen=True)
class FoldPrediction:
    kappa0: float
    deltaS0: float
    r0: float
    theta_set: tuple[float, float, float]


def _require(A3: float, A4: float) -> None:
    if A3 == 0 or A4 == 0:
        raise DomainError("A3 and A4 must be nonzero")


# --- coefficients -----------------------------------------------------------------


def _grid_values(o: Orbit, phi: np.ndarray) -> np.ndarray:
    return o.basis.values @ np.asarray(phi).reshape(9, -1).T


def a3_integrals(bp: BifurcationPoint) -> tuple[float, float]:
    """``A3^(j) = C(3, j) int_0^T (phi1 d/dq)^j (phi2 d/dq)^(3-j) L dt`` for j = 0, 1.

    The kinetic part of ``L`` is quadratic, so only ``-U`` contributes.
    """
    o = bp.orbit
    q = o.positions()
    f1, f2 = _grid_values(o, bp.phi1), _grid_values(o, bp.phi2)
    out = []
    for j in (0, 1):
        dirs = [f1] * j + [f2] * (3 - j)
        integrand = directional_derivative(o.potential, q, dirs)
        out.append(comb(3, j) * o.period * float(np.mean(integrand)))
    return out[0], out[1]


def a4_first_term(bp: BifurcationPoint) -> float:
    """``int_0^T (phi2 d/dq)^4 L dt`` -- only the local part of A4.

    Diagnostic only: the full coefficient also needs a sum over every
    nonzero eigenpair of the Hessian, which is not attempted.
    """
    o = bp.orbit
    f2 = _grid_values(o, bp.phi2)
    return o.period * float(np.mean(directional_derivative(o.potential, o.positions(), [f2] * 4)))


def a3_coefficient(A3_0: float, A3_1: float, symmetry_tag) -> float:
    """Cubic coefficient of the reduced action (reported as a magnitude)."""
    tag = SymmetryTag(symmetry_tag)
    if tag is SymmetryTag.D3:
        return abs(A3_0)
    return float(np.sqrt(A3_1**2 + (3 * A3_0) ** 2) / 3.0)


def fit_A3A4(kappa0: float, deltaS0: float) -> tuple[float, float]:
    """Invert ``kappa0 = 3 A3^2 / (8 A4)`` and ``dS0 = 9 A3^4 / (128 A4^3)``.

    Eliminating A3 gives ``kappa0^2 = 2 A4 dS0``, so ``A4 = kappa0^2/(2 dS0)``
    and ``A3 = sqrt(8 kappa0 A4 / 3)``; both inputs must share a sign.
    """
    if deltaS0 == 0 or kappa0 == 0 or not np.isfinite(kappa0) or not np.isfinite(deltaS0):
        raise DomainError("need finite nonzero kappa0 and deltaS0")
    if kappa0 * deltaS0 < 0:
        raise DomainError("kappa0 and deltaS0 must have the same sign")
    A4 = kappa0**2 / (2.0 * deltaS0)
    A3 = float(np.sqrt(8.0 * kappa0 * A4 / 3.0))
    return A3, A4


# --- fold and branches -------------------------------------------------------------


def theta_set(A3: float, A4: float) -> tuple[float, float, float]:
    _require(A3, A4)
    if A3 * A4 < 0:
        return tuple(np.pi / 6 + 2 * n * np.pi / 3 for n in (1, 2, 3))
    return tuple(np.pi / 6 + (2 * n + 1) * np.pi / 3 for n in (1, 2, 3))


def fold_prediction(A3: float, A4: float) -> FoldPrediction:
    _require(A3, A4)
    return FoldPrediction(
        kappa0=3 * A3**2 / (8 * A4),
        deltaS0=9 * A3**4 / (128 * A4**3),
        r0=abs(3 * A3 / (2 * A4)),
        theta_set=theta_set(A3, A4),
    )


def branch_radii(kappa: float, A3: float, A4: float) -> tuple[float, float] | None:
    """``(r_-, r_+)`` along the theta set, or ``None`` past the fold."""
    _require(A3, A4)
    b = abs(3 * A3 / A4)
    disc = (3 * A3 / A4) ** 2 - 24 * kappa / A4
    if disc < -1e-12 * b**2:
        return None
    root = np.sqrt(max(disc, 0.0))  # rounding at the fold itself
    return 0.5 * (b - root), 0.5 * (b + root)


def _relative_action(kappa: float, r: float, A3: float, A4: float) -> float:
    return kappa / 2 * r**2 - abs(A3) / 6 * np.sign(A4) * r**3 + A4 / 24 * r**4


def delta_S_pm(kappa: float, A3: float, A4: float) -> tuple[float, float]:
    """Relative actions of the bifurcation (minus) and fold (plus) solutions."""
    radii = branch_radii(kappa, A3, A4)
    if radii is None:
        raise DomainError(f"kappa={kappa!r} lies past the fold")
    return tuple(_relative_action(kappa, r, A3, A4) for r in radii)


def cusp_expansion(kappa: float, A3: float, A4: float) -> tuple[float, float]:
    """Expansion of ``delta_S_pm`` about the fold in ``k = 24 (kappa0 - kappa) / A4``."""
    _require(A3, A4)
    kappa0 = 3 * A3**2 / (8 * A4)
    k = 24 * (kappa0 - kappa) / A4
    if k < 0:
        if k > -1e-14 * max(1.0, abs(24 * kappa0 / A4)):
            k = 0.0
        else:
            raise DomainError("kappa lies past the fold (k < 0)")
    singular = abs(A3) / 48 * np.sign(A4) * k**1.5
    smooth = A4 / 64 * (9 * A3**4 / (2 * A4**4) - 3 * A3**2 / A4**2 * k - k**2 / 6)
    return smooth + singular, smooth - singular


def fold_condition(A3: float, A4: float, threshold: float = 0.5) -> tuple[float, bool]:
    """``r0 = |3 A3 / (2 A4)|`` and whether it is below ``threshold`` (advisory)."""
    if A4 == 0:
        raise DomainError("A4 must be nonzero")
    r0 = abs(3 * A3 / (2 * A4))
    return r0, r0 < threshold


# --- surfaces ------------------------------------------------------------------------


def reduced_action(r1, r2, kappa: float, A3: float, A4: float):
    """``dS(r1, r2)``; ``r^3 sin(3 theta) = 3 r1^2 r2 - r2^3``."""
    r1, r2 = np.asarray(r1, dtype=float), np.asarray(r2, dtype=float)
    rr = r1**2 + r2**2
    return kappa / 2 * rr + A3 / 6 * (3 * r1**2 * r2 - r2**3) + A4 / 24 * rr**2


def reduced_gradient(r1, r2, kappa: float, A3: float, A4: float) -> np.ndarray:
    rr = r1**2 + r2**2
    g1 = kappa * r1 + A3 * r1 * r2 + A4 / 6 * rr * r1
    g2 = kappa * r2 + A3 / 2 * (r1**2 - r2**2) + A4 / 6 * rr * r2
    return np.array([g1, g2])


def reduced_hessian(r1, r2, kappa: float, A3: float, A4: float) -> np.ndarray:
    rr = r1**2 + r2**2
    h11 = kappa + A3 * r2 + A4 / 6 * (rr + 2 * r1**2)
    h22 = kappa - A3 * r2 + A4 / 6 * (rr + 2 * r2**2)
    h12 = A3 * r1 + A4 / 3 * r1 * r2
    return np.array([[h11, h12], [h12, h22]])


@dataclass(frozen=True)
class CriticalPoint:
    label: str  # "center", "bifurcation" or "fold"
    r1: float
    r2: float
    kind: str  # "maximum", "minimum", "saddle" or "degenerate"


def _classify(h: np.ndarray) -> str:
    w = np.linalg.eigvalsh(h)
    scale = max(1e-300, np.max(np.abs(w)))
    if np.min(np.abs(w)) < 1e-9 * scale or np.max(np.abs(w)) == 0:
        return "degenerate"
    if np.all(w < 0):
        return "maximum"
    if np.all(w > 0):
        return "minimum"
    return "saddle"


def critical_points(kappa: float, A3: float, A4: float) -> list[CriticalPoint]:
    """Center, three bifurcation and (when they exist) three fold solutions.

    At ``kappa == 0`` the three bifurcation solutions merge with the center
    and are listed once, as a single bifurcation point at the origin.
    """
    _require(A3, A4)
    pts = [CriticalPoint("center", 0.0, 0.0, _classify(reduced_hessian(0.0, 0.0, kappa, A3, A4)))]
    radii = branch_radii(kappa, A3, A4)
    if radii is None:
        return pts
    # the sign rule of theta_set covers either sign of A3; a negative r_- is
    # the same line traversed through the origin
    thetas = np.array(theta_set(A3, A4))
    r_minus, r_plus = radii
    if r_minus == 0.0:
        pts.append(CriticalPoint("bifurcation", 0.0, 0.0, "degenerate"))
    else:
        for th in thetas:
            x, y = r_minus * np.cos(th), r_minus * np.sin(th)
            pts.append(CriticalPoint("bifurcation", x, y, _classify(reduced_hessian(x, y, kappa, A3, A4))))
    if r_plus != r_minus:
        for th in thetas:
            x, y = r_plus * np.cos(th), r_plus * np.sin(th)
            pts.append(CriticalPoint("fold", x, y, _classify(reduced_hessian(x, y, kappa, A3, A4))))
    return pts


@dataclass(frozen=True)
class SurfaceGrid:
    A3: float
    A4: float
    kappa: float
    r1: np.ndarray
    r2: np.ndarray
    values: np.ndarray  # values[i, j] = dS(r1[j], r2[i])
    critical: list[CriticalPoint]


def surface_grid(A3: float, A4: float, kappa: float, extent: float, resolution: int = 101) -> SurfaceGrid:
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    ax = np.linspace(-extent, extent, resolution)
    R1, R2 = np.meshgrid(ax, ax)
    return SurfaceGrid(A3, A4, kappa, ax, ax, reduced_action(R1, R2, kappa, A3, A4), critical_points(kappa, A3, A4))


def write_surface_csv(grid: SurfaceGrid, path, header_lines=()) -> None:
    with atomic_open(path) as fh:
        for h in header_lines:
            fh.write(f"# {h}\n")
        fh.write(f"# A3={num(grid.A3)} A4={num(grid.A4)} kappa={num(grid.kappa)}\n")
        for cp in grid.critical:
            fh.write(f"# critical {cp.label} {cp.kind} r1={num(cp.r1)} r2={num(cp.r2)}\n")
        fh.write("r1,r2,dS\n")
        for i, y in enumerate(grid.r2):
            for j, x in enumerate(grid.r1):
                fh.write(f"{num(x)},{num(y)},{num(grid.values[i, j])}\n")


def write_curve_csv(A3: float, A4: float, kappas, path, header_lines=()) -> None:
    """Model ``(kappa, dS_minus, dS_plus)`` table; rows past the fold are skipped."""
    with atomic_open(path) as fh:
        for h in header_lines:
            fh.write(f"# {h}\n")
        fh.write("kappa,dS_minus,dS_plus\n")
        for k in kappas:
            radii = branch_radii(k, A3, A4)
            if radii is None:
                continue
            dm, dp = delta_S_pm(k, A3, A4)
            fh.write(f"{num(k)},{num(dm)},{num(dp)}\n")
