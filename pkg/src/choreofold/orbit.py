"""Periodic three-body orbits as truncated Fourier series.

A coordinate is stored in natural amplitudes over scaled time ``tau = t/T``::

    q_c(tau) = c_0 + sum_n (c_n cos(2 pi n tau) + s_n sin(2 pi n tau))

with the per-coordinate layout ``[c_0, c_1..c_M, s_1..s_M]``.  The action is
the rectangle rule on ``N`` uniform samples, which is exact for the kinetic
term and spectrally accurate for the potential term.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import linalg

from .potentials import DomainError, Potential, grad_U, hess_U, potential_energy

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class FourierBasis:
    modes: int
    samples: int
    tau: np.ndarray = field(repr=False)
    freqs: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    derivs: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return 2 * self.modes + 1


@lru_cache(maxsize=32)
def fourier_basis(modes: int, samples: int) -> FourierBasis:
    if samples < 2 * modes + 1:
        raise ValueError("need samples >= 2*modes + 1")
    tau = np.arange(samples) / samples
    n = np.arange(1, modes + 1)
    ang = 2 * np.pi * np.outer(tau, n)
    cos, sin = np.cos(ang), np.sin(ang)
    values = np.hstack([np.ones((samples, 1)), cos, sin])
    w = 2 * np.pi * n
    derivs = np.hstack([np.zeros((samples, 1)), -w * sin, w * cos])
    freqs = np.concatenate([[0], n, n]).astype(float)
    weights = np.concatenate([[1.0], np.full(2 * modes, 0.5)])
    for arr in (tau, values, derivs, freqs, weights):
        arr.setflags(write=False)
    return FourierBasis(modes, samples, tau, freqs, weights, values, derivs)


@dataclass(frozen=True)
class Orbit:
    """T-periodic trajectory of the three bodies.

    ``coeffs`` has shape ``(9, 2M+1)``.
    """

    potential: Potential
    period: float
    coeffs: np.ndarray
    samples: int

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != 9 or c.shape[1] % 2 != 1:
            raise ValueError(f"coefficients must have shape (9, 2M+1), got {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "period", float(self.period))
        if not self.period > 0:
            raise ValueError("period must be positive")
        if self.samples < 2 * self.modes + 1:
            raise ValueError("too few samples for the retained modes")

    @property
    def modes(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def basis(self) -> FourierBasis:
        return fourier_basis(self.modes, self.samples)

    @property
    def times(self) -> np.ndarray:
        return self.basis.tau * self.period

    def flat(self) -> np.ndarray:
        return self.coeffs.ravel()

    def with_coeffs(self, x: np.ndarray) -> "Orbit":
        return replace(self, coeffs=np.asarray(x, dtype=float).reshape(9, -1))

    def positions(self) -> np.ndarray:
        """Samples ``q(t_k)``, shape ``(N, 9)``."""
        return self.basis.values @ self.coeffs.T

    def velocities(self) -> np.ndarray:
        return self.basis.derivs @ self.coeffs.T / self.period

    def evaluate(self, t) -> np.ndarray:
        """``q(t)`` at arbitrary times."""
        tau = np.atleast_1d(np.asarray(t, dtype=float)) / self.period
        n = np.arange(1, self.modes + 1)
        ang = 2 * np.pi * np.outer(tau, n)
        vals = np.hstack([np.ones((tau.size, 1)), np.cos(ang), np.sin(ang)])
        return vals @ self.coeffs.T

    def ortho_scale(self) -> np.ndarray:
        """Factors mapping natural amplitudes to L2(0, T)-orthonormal ones."""
        return np.tile(np.sqrt(self.period * self.basis.weights), 9)

    def tail_mass(self, fraction: float = 0.125) -> float:
        """Relative coefficient mass in the top ``fraction`` of modes."""
        m = self.modes
        k = max(1, int(round(m * fraction)))
        c = self.coeffs
        top = np.concatenate([c[:, m + 1 - k : m + 1], c[:, 2 * m + 1 - k :]], axis=1)
        total = np.sum(c[:, 1:] ** 2)
        return float(np.sqrt(np.sum(top**2) / total)) if total > 0 else 0.0

    def min_distance(self) -> float:
        q = self.positions().reshape(-1, 3, 3)
        return float(
            min(np.min(np.linalg.norm(q[:, i] - q[:, j], axis=1)) for i, j in ((0, 1), (0, 2), (1, 2)))
        )


def action(o: Orbit) -> float:
    """Discretized action ``S = int_0^T (|qdot|^2/2 - U) dt``."""
    v = o.velocities()
    kin = 0.5 * np.sum(v * v, axis=1)
    pot = potential_energy(o.potential, o.positions())
    return float(o.period * np.mean(kin - pot))


def energy_samples(o: Orbit) -> np.ndarray:
    v = o.velocities()
    return 0.5 * np.sum(v * v, axis=1) + potential_energy(o.potential, o.positions())


def _kinetic_diag(o: Orbit) -> np.ndarray:
    b = o.basis
    return np.tile((2 * np.pi * b.freqs) ** 2 * b.weights / o.period, 9)


def action_gradient(o: Orbit) -> np.ndarray:
    """Exact gradient of :func:`action` with respect to the flat coefficients."""
    b = o.basis
    gu = grad_U(o.potential, o.positions())  # (N, 9)
    pot = (b.values.T @ gu).T * (o.period / b.samples)  # (9, nb)
    return _kinetic_diag(o) * o.flat() - pot.ravel()


def action_gradient_dperiod(o: Orbit) -> np.ndarray:
    """Partial derivative of :func:`action_gradient` with respect to ``T``."""
    b = o.basis
    gu = grad_U(o.potential, o.positions())
    pot = (b.values.T @ gu).T / b.samples
    return -_kinetic_diag(o) / o.period * o.flat() - pot.ravel()


def residual_norm(o: Orbit, grad: np.ndarray | None = None) -> float:
    """L2 norm of the projected Euler-Lagrange residual."""
    g = action_gradient(o) if grad is None else grad
    return float(np.linalg.norm(g / o.ortho_scale()))


def _weighted_products(values: np.ndarray, modes: int) -> np.ndarray:
    """Matrices ``mean_k(g_k f_b(tau_k) f_b'(tau_k))`` for each sampled ``g``.

    ``values`` has shape ``(..., N)``; the result ``(..., 2M+1, 2M+1)``.
    Uses product-to-sum identities on the discrete Fourier coefficients, so it
    equals the rectangle-rule quadrature exactly.
    """
    nsamp = values.shape[-1]
    G = np.fft.fft(values, axis=-1) / nsamp
    C = G.real
    S = -G.imag
    n = np.arange(0, modes + 1)
    diff = (n[:, None] - n[None, :]) % nsamp
    summ = (n[:, None] + n[None, :]) % nsamp
    cc = 0.5 * (C[..., diff] + C[..., summ])
    ss = 0.5 * (C[..., diff] - C[..., summ])
    # <g cos(n) sin(m)> = (S_{m+n} + S_{m-n}) / 2 ; rows n (cos), cols m (sin)
    cs = 0.5 * (S[..., summ] + S[..., (n[None, :] - n[:, None]) % nsamp])
    # the constant function is cos(0); its "sin" partner does not exist
    nb = 2 * modes + 1
    out = np.empty(values.shape[:-1] + (nb, nb))
    cos_idx = np.arange(0, modes + 1)
    sin_idx = np.arange(modes + 1, nb)
    out[..., cos_idx[:, None], cos_idx[None, :]] = cc
    out[..., sin_idx[:, None], sin_idx[None, :]] = ss[..., 1:, 1:]
    out[..., cos_idx[:, None], sin_idx[None, :]] = cs[..., :, 1:]
    out[..., sin_idx[:, None], cos_idx[None, :]] = np.swapaxes(cs[..., :, 1:], -1, -2)
    return out


def potential_block_matrix(o: Orbit, field_values: np.ndarray) -> np.ndarray:
    """Galerkin matrix of a sampled 9x9 matrix field, in natural amplitudes.

    ``field_values`` has shape ``(N, 9, 9)``; returns the
    ``(9(2M+1), 9(2M+1))`` matrix of ``int_0^T f_b A_cd f_b' dt``.
    """
    nb = o.basis.size
    iu = np.triu_indices(9)
    blocks = _weighted_products(field_values[:, iu[0], iu[1]].T, o.modes) * o.period
    out = np.empty((9, nb, 9, nb))
    for k, (c, d) in enumerate(zip(*iu)):
        out[c, :, d, :] = blocks[k]
        out[d, :, c, :] = blocks[k].T
    return out.reshape(9 * nb, 9 * nb)


def action_jacobian(o: Orbit) -> np.ndarray:
    """Hessian of :func:`action` in natural amplitudes (exactly symmetric)."""
    hu = hess_U(o.potential, o.positions())
    J = -potential_block_matrix(o, hu)
    J[np.diag_indices_from(J)] += _kinetic_diag(o)
    return 0.5 * (J + J.T)


# --- subspaces and gauge ---------------------------------------------------


def com_free_subspace(modes: int, planar: bool = False) -> np.ndarray:
    """Orthonormal basis of coefficient vectors with zero centre of mass."""
    nb = 2 * modes + 1
    axes = (0, 1) if planar else (0, 1, 2)
    body_vecs = np.array([[1.0, -1.0, 0.0], [1.0, 1.0, -2.0]])
    body_vecs /= np.linalg.norm(body_vecs, axis=1, keepdims=True)
    cols = []
    for ax in axes:
        for b in range(nb):
            for v in body_vecs:
                col = np.zeros((3, 3, nb))
                col[:, ax, b] = v
                cols.append(col.ravel())
    return np.array(cols).T


def choreography_subspace(modes: int, planar: bool = True) -> np.ndarray:
    """Orthonormal basis of choreographies ``q_{k+1}(t) = q_k(t + T/3)``.

    Modes divisible by three are excluded, which puts the centre of mass at
    the origin.
    """
    nb = 2 * modes + 1
    axes = (0, 1) if planar else (0, 1, 2)
    cols = []
    for ax in axes:
        for n in range(1, modes + 1):
            if n % 3 == 0:
                continue
            for c0, s0 in ((1.0, 0.0), (0.0, 1.0)):
                col = np.zeros((3, 3, nb))
                for k in range(3):
                    phi = 2 * np.pi * n * k / 3
                    col[k, ax, n] = c0 * np.cos(phi) + s0 * np.sin(phi)
                    col[k, ax, modes + n] = -c0 * np.sin(phi) + s0 * np.cos(phi)
                cols.append(col.ravel() / np.sqrt(3.0))
    return np.array(cols).T


def time_derivative_coeffs(coeffs: np.ndarray) -> np.ndarray:
    """Coefficients of ``dq/dtau``."""
    c = np.asarray(coeffs)
    m = (c.shape[-1] - 1) // 2
    n = 2 * np.pi * np.arange(1, m + 1)
    out = np.zeros_like(c)
    out[..., 1 : m + 1] = n * c[..., m + 1 :]
    out[..., m + 1 :] = -n * c[..., 1 : m + 1]
    return out


def rotation_generator_coeffs(coeffs: np.ndarray, axis: int) -> np.ndarray:
    """Coefficients of ``e_axis x q`` applied to every body."""
    c = np.asarray(coeffs).reshape(3, 3, -1)
    e = np.zeros(3)
    e[axis] = 1.0
    out = np.cross(e[None, :, None], c, axisa=1, axisb=1, axisc=1)
    return out.reshape(9, -1)


def translation_coeffs(modes: int, axis: int) -> np.ndarray:
    out = np.zeros((3, 3, 2 * modes + 1))
    out[:, axis, 0] = 1.0
    return out.reshape(9, -1)


KERNEL_LABELS = ("translation_x", "translation_y", "translation_z", "rotation_x", "rotation_y", "rotation_z", "time_shift")


def kernel_coeffs(o: Orbit) -> dict[str, np.ndarray]:
    """Analytic generators of the trivial symmetries, as coefficient arrays."""
    out = {}
    for ax, name in enumerate(("x", "y", "z")):
        out["translation_" + name] = translation_coeffs(o.modes, ax)
    for ax, name in enumerate(("x", "y", "z")):
        out["rotation_" + name] = rotation_generator_coeffs(o.coeffs, ax)
    out["time_shift"] = time_derivative_coeffs(o.coeffs)
    return out


def gauge_rows(x: np.ndarray, P: np.ndarray, keep: float = 0.5) -> np.ndarray:
    """Orthonormal reduced-space rows spanning the rotation and time-shift
    generators that lie inside the subspace ``P``."""
    c = x.reshape(9, -1)
    gens = [rotation_generator_coeffs(c, ax).ravel() for ax in range(3)]
    gens.append(time_derivative_coeffs(c).ravel())
    rows = []
    for g in gens:
        norm = np.linalg.norm(g)
        if norm < 1e-12:
            continue
        red = P.T @ g
        if np.linalg.norm(red) >= keep * norm:
            rows.append(red / norm)
    if not rows:
        return np.zeros((0, P.shape[1]))
    q, r = np.linalg.qr(np.array(rows).T)
    good = np.abs(np.diag(r)) > 1e-8
    return q[:, good].T


# --- Newton solver -----------------------------------------------------------


@dataclass
class SolveReport:
    orbit: Orbit
    residual_norm: float
    iterations: int
    converged: bool
    message: str = ""


def _bordered_solve(J: np.ndarray, G: np.ndarray, rhs: np.ndarray, shift: float = 0.0) -> np.ndarray:
    n, m = J.shape[0], G.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = J
    if shift:
        K[np.arange(n), np.arange(n)] += shift
    K[:n, n:] = G.T
    K[n:, :n] = G
    sol = linalg.solve(K, np.concatenate([rhs, np.zeros(m)]), assume_a="sym")
    return sol[:n]


def subspace_basis(kind, modes: int, planar: bool) -> np.ndarray:
    if isinstance(kind, np.ndarray):
        return kind
    if kind == "choreography":
        return choreography_subspace(modes, planar)
    if kind == "full":
        return com_free_subspace(modes, planar)
    raise ValueError(f"unknown subspace {kind!r}")


def is_planar(o: Orbit, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(o.coeffs.reshape(3, 3, -1)[:, 2, :])) <= tol)


def solve_orbit(
    seed: Orbit,
    subspace="choreography",
    *,
    planar: bool | None = None,
    tol: float = 1e-10,
    max_iter: int = 40,
) -> SolveReport:
    """Newton iteration on ``action_gradient = 0`` inside a linear subspace.

    The rotation and time-shift kernels are removed by bordering the Newton
    matrix with the generators at the current iterate.  A failed line search
    falls back to Levenberg-style diagonal damping.  Collisions and
    divergence give a non-converged report.
    """
    if planar is None:
        planar = is_planar(seed)
    P = subspace_basis(subspace, seed.modes, planar)
    y = P.T @ seed.flat()
    orbit = seed.with_coeffs(P @ y)
    try:
        g = action_gradient(orbit)
    except DomainError as exc:
        return SolveReport(seed, math.inf, 0, False, f"collision in seed: {exc}")
    res = residual_norm(orbit, g)
    it = 0
    damping = 0.0
    while res >= tol and it < max_iter:
        it += 1
        J = P.T @ action_jacobian(orbit) @ P
        G = gauge_rows(orbit.flat(), P)
        scale = max(1.0, float(np.max(np.abs(np.diag(J)))))
        accepted = False
        for attempt in range(8):
            try:
                step = _bordered_solve(J, G, -(P.T @ g), shift=damping * scale)
            except (linalg.LinAlgError, ValueError):
                damping = max(1e-8, damping * 10)
                continue
            alpha = 1.0
            while alpha > 1e-3:
                trial = orbit.with_coeffs(P @ (y + alpha * step))
                try:
                    g_trial = action_gradient(trial)
                    res_trial = residual_norm(trial, g_trial)
                except DomainError:
                    res_trial = math.inf
                if res_trial < res:
                    break
                alpha *= 0.5
            if res_trial < res:
                accepted = True
                break
            damping = max(1e-8, damping * 10)
        if not accepted:
            return SolveReport(orbit, res, it, False, "no descent direction found")
        damping = damping / 10 if damping > 1e-8 else 0.0
        y = y + alpha * step
        orbit, g, res = trial, g_trial, res_trial
        log.debug("newton it=%d res=%.3e alpha=%.3g", it, res, alpha)
        if not np.isfinite(res) or res > 1e8:
            return SolveReport(orbit, res, it, False, "diverged")
    converged = res < tol
    return SolveReport(orbit, res, it, converged, "" if converged else "iteration limit")


def resample(o: Orbit, modes: int, samples: int | None = None) -> Orbit:
    """Truncate or zero-pad the Fourier series; retained modes are exact."""
    if samples is None:
        samples = 8 * modes
    m = o.modes
    k = min(m, modes)
    out = np.zeros((9, 2 * modes + 1))
    out[:, : k + 1] = o.coeffs[:, : k + 1]
    out[:, modes + 1 : modes + 1 + k] = o.coeffs[:, m + 1 : m + 1 + k]
    return Orbit(o.potential, o.period, out, samples)


def coeffs_from_samples(samples: np.ndarray, modes: int) -> np.ndarray:
    """Real Fourier coefficients (layout above) of uniformly sampled data.

    ``samples`` has shape ``(N, ...)``; the result ``(..., 2M+1)``.
    """
    n = samples.shape[0]
    F = np.fft.rfft(samples, axis=0) / n
    F = np.moveaxis(F, 0, -1)
    out = np.zeros(F.shape[:-1] + (2 * modes + 1,))
    out[..., 0] = F[..., 0].real
    out[..., 1 : modes + 1] = 2 * F[..., 1 : modes + 1].real
    out[..., modes + 1 :] = -2 * F[..., 1 : modes + 1].imag
    return out


def shift_time(o: Orbit, dtau: float) -> Orbit:
    """Orbit ``q(t + dtau*T)``."""
    m = o.modes
    n = np.arange(1, m + 1)
    c, s = o.coeffs[:, 1 : m + 1], o.coeffs[:, m + 1 :]
    cp, sp = np.cos(2 * np.pi * n * dtau), np.sin(2 * np.pi * n * dtau)
    out = o.coeffs.copy()
    out[:, 1 : m + 1] = c * cp + s * sp
    out[:, m + 1 :] = -c * sp + s * cp
    return o.with_coeffs(out)


def choreography_defect(o: Orbit) -> float:
    """Max deviation from ``q_{k+1}(t) = q_k(t + T/3)``."""
    shifted = shift_time(o, 1.0 / 3.0).coeffs.reshape(3, 3, -1)
    c = o.coeffs.reshape(3, 3, -1)
    return float(max(np.max(np.abs(shifted[k] - c[(k + 1) % 3])) for k in range(3)))


# --- serialization -------------------------------------------------------------


def orbit_to_dict(o: Orbit) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "potential": o.potential.to_dict(),
        "period": o.period,
        "modes": o.modes,
        "samples": o.samples,
        "coefficients": [row.tolist() for row in o.coeffs],
    }


def orbit_from_dict(d: dict) -> Orbit:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported orbit format {d.get('format_version')!r}")
    coeffs = np.array(d["coefficients"], dtype=float)
    if coeffs.shape != (9, 2 * d["modes"] + 1):
        raise ValueError("coefficient array does not match the declared modes")
    return Orbit(Potential.from_dict(d["potential"]), d["period"], coeffs, d["samples"])


def save_orbit(o: Orbit, path) -> None:
    from .outputs import atomic_write_text

    # json uses repr() for floats: shortest round-tripping decimal
    atomic_write_text(path, json.dumps(orbit_to_dict(o), indent=1))


def load_orbit(path) -> Orbit:
    return orbit_from_dict(json.loads(Path(path).read_text()))
