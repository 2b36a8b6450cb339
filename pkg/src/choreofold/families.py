"""One-parameter orbit families and choreographic seeds.

A family maps a scalar parameter to the potential and period of the
Euler-Lagrange problem: either the period ``T`` varies at fixed potential, or
the homogeneous exponent ``a`` varies at fixed period.
"""

from __future__ import annotations

import bisect
import enum
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from .orbit import (
    Orbit,
    SolveReport,
    action_gradient,
    action_gradient_dperiod,
    choreography_subspace,
    coeffs_from_samples,
    solve_orbit,
)
from .potentials import Potential, PotentialKind, grad_U

log = logging.getLogger(__name__)

# Published Newtonian figure-eight (unit masses, G = 1): bodies at +-X1 and
# the origin, the middle body moving with V3.
EIGHT_X1 = np.array([0.97000436, -0.24308753])
EIGHT_V3 = np.array([-0.93240737, -0.86473146])
EIGHT_PERIOD = 6.32591398


class SeedKind(str, enum.Enum):
    NEWTONIAN = "newtonian-eight"
    LJ_HIGH = "lj-high"
    LJ_LOW = "lj-low"


# Size factors applied to the Newtonian curve; chosen inside the Newton
# basins of the two LJ figure-eights at T ~ 16.
_LJ_SCALE = {SeedKind.LJ_HIGH: 1.65, SeedKind.LJ_LOW: 2.0}


def newtonian_initial_state() -> np.ndarray:
    """Planar state ``(x1,y1,x2,y2,x3,y3, vx1,...,vy3)`` of the eight."""
    pos = np.concatenate([EIGHT_X1, -EIGHT_X1, [0.0, 0.0]])
    vel = np.concatenate([-EIGHT_V3 / 2, -EIGHT_V3 / 2, EIGHT_V3])
    return np.concatenate([pos, vel])


def planar_rhs(potential: Potential):
    idx = [0, 1, 3, 4, 6, 7]

    def rhs(t, y):
        q = np.zeros(9)
        q[idx] = y[:6]
        return np.concatenate([y[6:], -grad_U(potential, q)[idx]])

    return rhs


def integrate_planar(potential: Potential, state0: np.ndarray, t_eval: np.ndarray, rtol: float = 1e-13):
    """Shooting integrator for planar three-body motion (test oracle)."""
    sol = solve_ivp(
        planar_rhs(potential),
        (0.0, float(t_eval[-1])),
        state0,
        method="DOP853",
        rtol=rtol,
        atol=rtol,
        t_eval=t_eval,
    )
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y.T


@lru_cache(maxsize=4)
def _newtonian_curve(modes: int) -> np.ndarray:
    n = max(256, 4 * modes + 4)
    t = np.arange(n + 1) * EIGHT_PERIOD / n
    y = integrate_planar(Potential.homogeneous(1.0), newtonian_initial_state(), t)[:-1]
    pos = np.zeros((n, 3, 3))
    pos[:, :, :2] = y[:, :6].reshape(n, 3, 2)
    # order bodies so that body k+1 lags body k by T/3
    pos = pos[:, [0, 2, 1], :]
    c = coeffs_from_samples(pos.reshape(n, 9), modes)
    # project onto exact choreographies; the integrated curve is only close
    P = choreography_subspace(modes, planar=True)
    c = (P @ (P.T @ c.ravel())).reshape(9, -1)
    c.setflags(write=False)
    return c


def choreography_seed(kind, T: float, modes: int = 64, samples: int | None = None) -> Orbit:
    """Choreographic initial guess with period ``T``.

    The Newtonian seed is the published figure-eight rescaled by Kepler's
    law to period ``T``; the LJ seeds are the same curve at fixed sizes.
    """
    kind = SeedKind(kind)
    samples = samples or max(512, 8 * modes)
    curve = _newtonian_curve(modes)
    if kind is SeedKind.NEWTONIAN:
        return Orbit(Potential.homogeneous(1.0), T, curve * (T / EIGHT_PERIOD) ** (2.0 / 3.0), samples)
    return Orbit(Potential.lennard_jones(), T, curve * _LJ_SCALE[kind], samples)


class ParameterKind(str, enum.Enum):
    PERIOD = "period"
    EXPONENT = "exponent"


@dataclass(frozen=True)
class Family:
    """Parameterized Euler-Lagrange problem.

    ``PERIOD`` families vary ``T`` at a fixed potential; ``EXPONENT`` families
    vary the homogeneous exponent ``a`` at the fixed period ``period``.
    """

    name: str
    parameter: ParameterKind
    potential: Potential | None = None
    period: float | None = None

    @classmethod
    def lennard_jones(cls, name: str = "lj") -> "Family":
        return cls(name, ParameterKind.PERIOD, potential=Potential.lennard_jones())

    @classmethod
    def homogeneous(cls, period: float = 2 * np.pi, name: str = "homogeneous") -> "Family":
        return cls(name, ParameterKind.EXPONENT, period=period)

    @property
    def symbol(self) -> str:
        return "T" if self.parameter is ParameterKind.PERIOD else "a"

    def orbit_at(self, coeffs: np.ndarray, p: float, samples: int) -> Orbit:
        if self.parameter is ParameterKind.PERIOD:
            return Orbit(self.potential, p, coeffs, samples)
        return Orbit(Potential.homogeneous(p), self.period, coeffs, samples)

    def parameter_of(self, o: Orbit) -> float:
        if self.parameter is ParameterKind.PERIOD:
            return o.period
        if o.potential.kind is not PotentialKind.HOMOGENEOUS:
            raise ValueError("exponent family needs a homogeneous potential")
        return o.potential.a

    def with_parameter(self, o: Orbit, p: float) -> Orbit:
        return self.orbit_at(o.coeffs, p, o.samples)

    def gradient_dparam(self, o: Orbit) -> np.ndarray:
        if self.parameter is ParameterKind.PERIOD:
            return action_gradient_dperiod(o)
        a = o.potential.a
        h = 1e-5 * max(1.0, abs(a))
        up = action_gradient(self.with_parameter(o, a + h))
        dn = action_gradient(self.with_parameter(o, a - h))
        return (up - dn) / (2 * h)

    def to_dict(self) -> dict:
        d = {"name": self.name, "parameter": self.parameter.value}
        if self.potential is not None:
            d["potential"] = self.potential.to_dict()
        if self.period is not None:
            d["period"] = self.period
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Family":
        pot = Potential.from_dict(d["potential"]) if "potential" in d else None
        return cls(d["name"], ParameterKind(d["parameter"]), pot, d.get("period"))


class FamilyTracker:
    """Solutions of one family, solved on demand and cached by parameter.

    New parameters are reached by natural-parameter stepping from the
    nearest cached solution, at most ``max_step`` at a time.
    """

    def __init__(self, family: Family, orbit: Orbit, subspace="choreography", *, max_step: float = 0.05, tol: float = 1e-11):
        self.family = family
        self.subspace = subspace
        self.max_step = max_step
        self.tol = tol
        rep = self._solve(orbit)
        if not rep.converged:
            raise RuntimeError(f"family seed did not converge: {rep.message} (res {rep.residual_norm:.2e})")
        p = family.parameter_of(rep.orbit)
        self._params = [p]
        self._orbits = {p: rep.orbit}

    def _solve(self, o: Orbit) -> SolveReport:
        return solve_orbit(o, self.subspace, tol=self.tol)

    @property
    def params(self) -> list[float]:
        return list(self._params)

    def nearest(self, p: float) -> Orbit:
        i = bisect.bisect_left(self._params, p)
        cands = [self._params[j] for j in (i - 1, i) if 0 <= j < len(self._params)]
        best = min(cands, key=lambda c: abs(c - p))
        return self._orbits[best]

    def orbit(self, p: float) -> Orbit:
        p = float(p)
        if p in self._orbits:
            return self._orbits[p]
        start = self.nearest(p)
        p0 = self.family.parameter_of(start)
        nsteps = max(1, int(np.ceil(abs(p - p0) / self.max_step)))
        o = start
        for k in range(1, nsteps + 1):
            pk = p0 + (p - p0) * k / nsteps
            rep = self._solve(self.family.with_parameter(o, pk))
            if not rep.converged:
                raise RuntimeError(
                    f"{self.family.name}: no solution at {self.family.symbol}={pk:.6f} ({rep.message})"
                )
            o = rep.orbit
            self._store(pk, o)
        return o

    def _store(self, p: float, o: Orbit) -> None:
        if p not in self._orbits:
            bisect.insort(self._params, p)
            self._orbits[p] = o
