"""Pair potentials and exact derivatives of the three-body potential energy.

Coordinates are 9-vectors ``(x1, y1, z1, x2, y2, z2, x3, y3, z3)`` with unit
masses.  Every function broadcasts over leading axes, so a whole time grid of
configurations with shape ``(N, 9)`` can be processed in one call.

Mixed directional derivatives of order up to four are computed exactly by
composing the pair potential with the squared distance
``s(eps) = |d + sum_i eps_i delta_i|**2``, which is a quadratic polynomial in
the expansion parameters.  Faa di Bruno's formula then reduces to a sum over
set partitions whose blocks have size one or two.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from math import factorial
from typing import Sequence

import numpy as np

PAIRS: tuple[tuple[int, int], ...] = ((0, 1), (0, 2), (1, 2))
MAX_ORDER = 4


class DomainError(ValueError):
    """Raised for coincident bodies or non-positive distances."""


class PotentialKind(str, enum.Enum):
    LENNARD_JONES = "lj"
    HOMOGENEOUS = "homogeneous"
    ZERO = "zero"


@dataclass(frozen=True)
class Potential:
    """Pair interaction ``u(r)``.

    ``LENNARD_JONES``: ``u = r**-12 - r**-6``;
    ``HOMOGENEOUS``: ``u = -1 / (a * r**a)``;
    ``ZERO``: ``u = 0``.
    """

    kind: PotentialKind
    a: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PotentialKind(self.kind))
        if self.kind is PotentialKind.HOMOGENEOUS:
            if self.a is None or not self.a > 0:
                raise ValueError("homogeneous potential needs exponent a > 0")
            object.__setattr__(self, "a", float(self.a))
        elif self.a is not None:
            raise ValueError(f"{self.kind.value} potential takes no exponent")

    @classmethod
    def lennard_jones(cls) -> "Potential":
        return cls(PotentialKind.LENNARD_JONES)

    @classmethod
    def homogeneous(cls, a: float) -> "Potential":
        return cls(PotentialKind.HOMOGENEOUS, a)

    @classmethod
    def zero(cls) -> "Potential":
        return cls(PotentialKind.ZERO)

    def power_terms(self) -> list[tuple[float, float]]:
        """``u(r) = sum(c * r**-p for c, p in terms)``."""
        if self.kind is PotentialKind.LENNARD_JONES:
            return [(1.0, 12.0), (-1.0, 6.0)]
        if self.kind is PotentialKind.HOMOGENEOUS:
            return [(-1.0 / self.a, self.a)]
        return []

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value}
        if self.a is not None:
            d["a"] = self.a
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Potential":
        return cls(PotentialKind(d["kind"]), d.get("a"))


@dataclass(frozen=True)
class PairJet:
    """``u(r)`` and its first four derivatives with respect to ``r``."""

    value: np.ndarray | float
    d1: np.ndarray | float
    d2: np.ndarray | float
    d3: np.ndarray | float
    d4: np.ndarray | float

    def as_array(self) -> np.ndarray:
        return np.stack(np.broadcast_arrays(self.value, self.d1, self.d2, self.d3, self.d4))


def _check_positive(r: np.ndarray) -> None:
    if np.any(~(r > 0)):
        raise DomainError("pair distance must be positive (coincident bodies?)")


def pair_jet(p: Potential, r) -> PairJet:
    """Analytic jet of the pair potential at distance ``r`` (scalar or array)."""
    r = np.asarray(r, dtype=float)
    _check_positive(r)
    out = np.zeros((MAX_ORDER + 1,) + r.shape)
    for c, power in p.power_terms():
        coef = c
        for k in range(MAX_ORDER + 1):
            out[k] += coef * r ** (-power - k)
            coef *= -power - k
    if r.ndim == 0:
        return PairJet(*(float(v) for v in out))
    return PairJet(*out)


def _pair_vectors(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    bodies = q.reshape(q.shape[:-1] + (3, 3))
    d = np.stack([bodies[..., i, :] - bodies[..., j, :] for i, j in PAIRS], axis=-2)
    s = np.einsum("...k,...k->...", d, d)
    _check_positive(s)
    return d, s


def potential_energy(p: Potential, q) -> np.ndarray | float:
    """``U = sum over pairs of u(r_ij)``."""
    q = np.asarray(q, dtype=float)
    _, s = _pair_vectors(q)
    u = pair_jet(p, np.sqrt(s)).value
    return np.sum(u, axis=-1)


def lagrangian_density(p: Potential, q, qdot) -> np.ndarray | float:
    """``L = |qdot|**2 / 2 - U(q)``."""
    qdot = np.asarray(qdot, dtype=float)
    return 0.5 * np.einsum("...k,...k->...", qdot, qdot) - potential_energy(p, q)


def grad_U(p: Potential, q) -> np.ndarray:
    """Exact gradient of ``U`` with respect to the 9 coordinates."""
    q = np.asarray(q, dtype=float)
    d, s = _pair_vectors(q)
    r = np.sqrt(s)
    jet = pair_jet(p, r)
    f = (np.asarray(jet.d1) / r)[..., None] * d  # dU/dd for each pair
    g = np.zeros(q.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(PAIRS):
        g[..., i, :] += f[..., k, :]
        g[..., j, :] -= f[..., k, :]
    return g.reshape(q.shape)


def hess_U(p: Potential, q) -> np.ndarray:
    """Exact 9x9 Hessian of ``U``."""
    q = np.asarray(q, dtype=float)
    d, s = _pair_vectors(q)
    r = np.sqrt(s)
    jet = pair_jet(p, r)
    d1, d2 = np.asarray(jet.d1), np.asarray(jet.d2)
    nhat = d / r[..., None]
    outer = nhat[..., :, None] * nhat[..., None, :]
    eye = np.eye(3)
    block = d2[..., None, None] * outer + (d1 / r)[..., None, None] * (eye - outer)
    h = np.zeros(q.shape[:-1] + (3, 3, 3, 3))
    for k, (i, j) in enumerate(PAIRS):
        b = block[..., k, :, :]
        h[..., i, :, i, :] += b
        h[..., j, :, j, :] += b
        h[..., i, :, j, :] -= b
        h[..., j, :, i, :] -= b
    return h.reshape(q.shape[:-1] + (9, 9))


def _series_mul(a: np.ndarray, b: np.ndarray, order: int) -> np.ndarray:
    out = np.zeros_like(a)
    for i in range(order + 1):
        for j in range(order + 1 - i):
            out[i + j] += a[i] * b[j]
    return out


def squared_distance_jet(p: Potential, s) -> np.ndarray:
    """Derivatives ``g^(k)(s)``, k = 0..4, of ``g(s) = u(sqrt(s))``.

    Built by composing the Taylor series of ``r(s + sigma) - r`` in ``sigma``
    with the pair jet in ``r``.
    """
    s = np.asarray(s, dtype=float)
    _check_positive(s)
    r = np.sqrt(s)
    jet = pair_jet(p, r).as_array()
    order = MAX_ORDER
    # r(s + sigma) = r * sum binom(1/2, k) (sigma / s)**k
    dr = np.zeros((order + 1,) + s.shape)
    binom = 1.0
    for k in range(1, order + 1):
        binom *= (0.5 - (k - 1)) / k
        dr[k] = r * binom / s**k
    g = np.zeros_like(dr)
    g[0] = jet[0]
    power = np.zeros_like(dr)
    power[0] = 1.0
    for m in range(1, order + 1):
        power = _series_mul(power, dr, order)
        g += jet[m] / factorial(m) * power
    for k in range(order + 1):
        g[k] *= factorial(k)
    return g


@lru_cache(maxsize=None)
def _partitions(n: int) -> tuple[tuple[tuple[int, ...], ...], ...]:
    """Set partitions of ``range(n)`` into blocks of size one or two."""

    def rec(items):
        if not items:
            yield ()
            return
        first, rest = items[0], items[1:]
        for tail in rec(rest):
            yield ((first,),) + tail
        for k, other in enumerate(rest):
            for tail in rec(rest[:k] + rest[k + 1 :]):
                yield ((first, other),) + tail

    return tuple(rec(tuple(range(n))))


def directional_derivative(p: Potential, q, dirs: Sequence) -> np.ndarray | float:
    """Mixed directional derivative of ``-U`` at ``q`` along ``dirs``.

    ``dirs`` holds ``n`` direction 9-vectors (1 <= n <= 4, repeats allowed),
    each broadcastable against ``q``.  The result is the potential part of
    ``(phi_1 d/dq)...(phi_n d/dq) L``; the kinetic term of ``L`` only
    contributes at order two and is left to the caller.
    """
    n = len(dirs)
    if not 1 <= n <= MAX_ORDER:
        raise TypeError(f"need between 1 and {MAX_ORDER} directions, got {n}")
    q = np.asarray(q, dtype=float)
    dirs = [np.broadcast_to(np.asarray(w, dtype=float), q.shape) for w in dirs]
    d, s = _pair_vectors(q)
    gjet = squared_distance_jet(p, s)  # (5, ..., 3)
    deltas = [_pair_vectors_raw(w) for w in dirs]  # each (..., 3 pairs, 3)
    lin = [2.0 * np.einsum("...k,...k->...", d, dl) for dl in deltas]
    quad = {}
    for i in range(n):
        for j in range(i + 1, n):
            quad[i, j] = 2.0 * np.einsum("...k,...k->...", deltas[i], deltas[j])
    total = np.zeros(s.shape)
    for part in _partitions(n):
        term = gjet[len(part)].copy()
        for block in part:
            term *= lin[block[0]] if len(block) == 1 else quad[block]
        total += term
    return -np.sum(total, axis=-1)


def _pair_vectors_raw(w: np.ndarray) -> np.ndarray:
    bodies = w.reshape(w.shape[:-1] + (3, 3))
    return np.stack([bodies[..., i, :] - bodies[..., j, :] for i, j in PAIRS], axis=-2)
