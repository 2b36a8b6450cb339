"""End-to-end acceptance: one test per criterion, each printing a PASS/FAIL line.

Criteria 1-6 run the four preset cases (several minutes); 7-10 are fast.
"""

import math

import numpy as np
import pytest

from choreofold.continuation import relative_action_curve
from choreofold.families import Family, SeedKind, choreography_seed
from choreofold.orbit import action, action_gradient
from choreofold.pipeline import model_errors, merge_point, run_case, solve_seed
from choreofold.potentials import Potential, directional_derivative, grad_U, hess_U, pair_jet, potential_energy
from choreofold.reduction import (
    a3_coefficient,
    a3_integrals,
    critical_points,
    cusp_expansion,
    delta_S_pm,
    fit_A3A4,
    fold_prediction,
    reduced_gradient,
)
from choreofold.spectrum import ModeTag, eigen_spectrum, kappa_check, l2_inner, rotate_pair

from conftest import ACCEPTANCE

CASES = ("alpha-plus", "alpha-minus", "c-y", "homogeneous")

# published values per case
BIFURCATION = {"alpha-plus": 16.878, "alpha-minus": 14.836, "c-y": 17.235, "homogeneous": 0.9966}
BIF_TOL = {"alpha-plus": 0.005, "alpha-minus": 0.005, "c-y": 0.005, "homogeneous": 0.002}
FOLD = {"alpha-plus": 16.875, "alpha-minus": 14.797, "c-y": 17.234, "homogeneous": 1.027}
FOLD_TOL = {"alpha-plus": 0.005, "alpha-minus": 0.005, "c-y": 0.005, "homogeneous": 0.01}
KAPPA0 = {"alpha-plus": 6.6e-5, "alpha-minus": -1.2e-2, "c-y": -2.4e-4, "homogeneous": 1.5e-2}
DS0 = {"alpha-plus": 3.0e-9, "alpha-minus": -8.5e-6, "c-y": -5.1e-9, "homogeneous": 3.8e-3}
A3_FIT = {"alpha-plus": 0.011, "alpha-minus": 0.544, "c-y": 0.059, "homogeneous": 0.036}
A3_INT = {"alpha-plus": 0.011, "alpha-minus": 0.466, "c-y": 0.056, "homogeneous": 0.037}
A4 = {"alpha-plus": 0.736, "alpha-minus": -8.97, "c-y": -5.49, "homogeneous": 0.031}
SLOPE = {"alpha-plus": -0.0199, "alpha-minus": 0.309, "c-y": 0.0389, "homogeneous": 0.506}


def rel(x, ref):
    return abs(x - ref) / abs(ref)


class Checks:
    """Collects named sub-checks and records one line per criterion."""

    def __init__(self, n):
        self.n, self.failed, self.notes = n, [], []

    def __call__(self, ok, note):
        self.notes.append(note)
        if not ok:
            self.failed.append(note)

    def finish(self):
        detail = "; ".join(("FAIL " if n in self.failed else "") + n for n in self.notes)
        ACCEPTANCE[self.n] = (not self.failed, detail)
        print(f"criterion {self.n}: {'PASS' if not self.failed else 'FAIL'} {detail}")
        assert not self.failed, "; ".join(self.failed)


@pytest.fixture(scope="module")
def runs():
    """Case name -> result, or the exception that stopped the run."""
    out = {}
    for name in CASES:
        try:
            out[name] = run_case(name)
        except Exception as exc:  # reported per criterion instead of erroring all
            out[name] = exc
    return out


@pytest.fixture
def results(runs):
    """Successful runs; failed runs are recorded as failed sub-checks."""
    return {k: v for k, v in runs.items() if not isinstance(v, Exception)}


def failed_runs(c, runs):
    for name, v in runs.items():
        if isinstance(v, Exception):
            c(False, f"{name} run failed: {v}")


@pytest.fixture(scope="module")
def lj_pair():
    fam = Family.lennard_jones()
    return solve_seed(SeedKind.LJ_HIGH, 16.0, 64, fam), solve_seed(SeedKind.LJ_LOW, 16.0, 64, fam)


def test_criterion_1_lj_family(lj_pair):
    c = Checks(1)
    hi, lo = lj_pair
    c(hi.period == lo.period == 16.0, "both found at T=16")
    c(action(hi) > action(lo), f"S(a+)={action(hi):.6f} > S(a-)={action(lo):.6f}")
    T = merge_point()
    c(abs(T - 14.479) <= 0.01, f"merge T={T:.5f} (14.479 +- 0.01)")
    c.finish()


def test_criterion_2_bifurcations(runs, results):
    c = Checks(2)
    failed_runs(c, runs)
    for name, r in results.items():
        p = r.bifurcation.parameter
        c(abs(p - BIFURCATION[name]) <= BIF_TOL[name], f"{name} bifurcation {p:.6f} ({BIFURCATION[name]} +- {BIF_TOL[name]})")
        c(r.bifurcation.degeneracy == 2, f"{name} d={r.bifurcation.degeneracy}")
    if "c-y" in results:
        pf = results["c-y"].pitchfork
        c(pf is not None and abs(pf - 17.132) <= 0.01, f"c-y pitchfork {pf} (17.132 +- 0.01)")
    c.finish()


def test_criterion_3_folds(runs, results):
    c = Checks(3)
    failed_runs(c, runs)
    for name, r in results.items():
        f = r.fold
        c(abs(f.parameter - FOLD[name]) <= FOLD_TOL[name], f"{name} fold {f.parameter:.6f} ({FOLD[name]} +- {FOLD_TOL[name]})")
        c(rel(f.kappa0, KAPPA0[name]) <= 0.2, f"{name} kappa0 {f.kappa0:.4g} vs {KAPPA0[name]:.2g}")
        c(rel(f.deltaS0, DS0[name]) <= 0.2, f"{name} dS0 {f.deltaS0:.4g} vs {DS0[name]:.2g}")
    c.finish()


def test_criterion_4_coefficients(runs, results):
    c = Checks(4)
    failed_runs(c, runs)
    for name, r in results.items():
        c(rel(r.A3_integral, A3_INT[name]) <= 0.15, f"{name} A3 integral {r.A3_integral:.5g} vs {A3_INT[name]}")
        c(rel(r.A3_fit, A3_FIT[name]) <= 0.10, f"{name} A3 fit {r.A3_fit:.5g} vs {A3_FIT[name]}")
        c(rel(r.A4_fit, A4[name]) <= 0.10, f"{name} A4 fit {r.A4_fit:.5g} vs {A4[name]}")
        c(rel(r.A3_fit, r.A3_integral) <= 0.20, f"{name} A3 fit/integral {r.A3_fit:.5g}/{r.A3_integral:.5g}")
    c.finish()


def test_criterion_5_model_curves(runs, results):
    c = Checks(5)
    failed_runs(c, runs)
    for name, r in results.items():
        err = model_errors(r)
        worst = float(err.max()) if err.size else math.inf
        # informational: the same error relative to the local |dS|
        k0, s0 = abs(r.fold.kappa0), abs(r.fold.deltaS0)
        local = max(
            (abs(q.dS - q.dS_model) / max(abs(q.dS), s0)
             for q in relative_action_curve(r.branch, r.A3_fit, r.A4_fit, r.kappa_line) if abs(q.kappa_linear) <= k0),
            default=math.inf,
        )
        c(err.size >= 3 and worst <= 0.2, f"{name} max |dS-model|/|dS0| = {worst:.3f} over {err.size} points (vs local |dS|: {local:.3f})")
    c.finish()


def test_criterion_6_kappa_slopes(runs, results):
    c = Checks(6)
    failed_runs(c, runs)
    for name, r in results.items():
        s = r.kappa_line[1]
        c(rel(s, SLOPE[name]) <= 0.10, f"{name} slope {s:.5g} vs {SLOPE[name]}")
    c.finish()


def _configs(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        q = rng.uniform(-1.2, 1.2, 9)
        b = q.reshape(3, 3)
        r = [np.linalg.norm(b[i] - b[j]) for i, j in ((0, 1), (0, 2), (1, 2))]
        if 0.8 < min(r) and max(r) < 2.5:
            out.append(q)
    return out


def test_criterion_7_derivative_oracles():
    c = Checks(7)
    p = Potential.lennard_jones()
    rng = np.random.default_rng(7)
    worst = {"grad": 0.0, "hess": 0.0, "jet3": 0.0, "jet4": 0.0}
    for q in _configs(100):
        h = 1e-5
        g = grad_U(p, q)
        fd = np.array([(potential_energy(p, q + h * e) - potential_energy(p, q - h * e)) / (2 * h) for e in np.eye(9)])
        worst["grad"] = max(worst["grad"], np.linalg.norm(fd - g) / np.linalg.norm(g))
        H = hess_U(p, q)
        fdH = np.array([(grad_U(p, q + h * e) - grad_U(p, q - h * e)) / (2 * h) for e in np.eye(9)])
        worst["hess"] = max(worst["hess"], np.linalg.norm(fdH - H) / np.linalg.norm(H))
        w = rng.normal(size=9)
        w /= np.linalg.norm(w)

        def d3(h):
            f = [-potential_energy(p, q + k * h * w) for k in (-2, -1, 1, 2)]
            return (f[3] - 2 * f[2] + 2 * f[1] - f[0]) / (2 * h**3)

        def d4(h):
            f = [-potential_energy(p, q + k * h * w) for k in (-2, -1, 0, 1, 2)]
            return (f[0] - 4 * f[1] + 6 * f[2] - 4 * f[3] + f[4]) / h**4

        b = q.reshape(3, 3)
        r = np.array([np.linalg.norm(b[i] - b[j]) for i, j in ((0, 1), (0, 2), (1, 2))])
        for k, fd_k, hk, key in ((3, d3, 4e-3, "jet3"), (4, d4, 1e-2, "jet4")):
            est = (4 * fd_k(hk / 2) - fd_k(hk)) / 3
            exact = directional_derivative(p, q, [w] * k)
            scale = max(abs(exact), 1e-2 * float(np.max(np.abs(pair_jet(p, r).as_array()[k]))))
            worst[key] = max(worst[key], abs(est - exact) / scale)
    c(worst["grad"] <= 1e-7, f"grad_U rel {worst['grad']:.1e}")
    c(worst["hess"] <= 1e-6, f"hess_U rel {worst['hess']:.1e}")
    c(worst["jet3"] <= 1e-5, f"order-3 jet rel {worst['jet3']:.1e}")
    c(worst["jet4"] <= 1e-4, f"order-4 jet rel {worst['jet4']:.1e}")

    seed = choreography_seed(SeedKind.LJ_HIGH, 16.0, modes=6)
    o = seed.with_coeffs(seed.coeffs + 1e-2 * np.random.default_rng(3).normal(size=seed.coeffs.shape))
    x, g = o.flat(), action_gradient(o)
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = 1e-6 * max(1.0, abs(x[i]))
        fd[i] = (action(o.with_coeffs(x + e)) - action(o.with_coeffs(x - e))) / (2 * e[i])
    err = np.linalg.norm(fd - g) / np.linalg.norm(g)
    c(err <= 1e-6, f"action_gradient rel {err:.1e}")
    c.finish()


def test_criterion_8_spectrum():
    c = Checks(8)
    eight = solve_seed(SeedKind.NEWTONIAN, 1.0, 64, Family.homogeneous(2 * math.pi))
    rep = eigen_spectrum(eight, 24)
    tags = [rep.tags[i] for i in rep.trivial]
    c(
        len(tags) == 7 and tags.count(ModeTag.TRANSLATION) == 3 and tags.count(ModeTag.ROTATION) == 3
        and tags.count(ModeTag.TIME_SHIFT) == 1,
        f"trivial tags {[t.value for t in tags]}",
    )
    n = len(rep.eigenvalues)
    G = np.array([[l2_inner(eight, rep.function(i), rep.function(j)) for j in range(n)] for i in range(n)])
    dev = float(np.max(np.abs(G - np.eye(n))))
    c(dev <= 1e-10, f"orthonormality {dev:.1e}")
    kerr = max(abs(kappa_check(eight, rep.function(i)) - rep.eigenvalues[i]) / abs(rep.eigenvalues[i]) for i in rep.nontrivial)
    c(kerr <= 1e-7, f"kappa_check rel {kerr:.1e}")
    c.finish()


def test_criterion_9_reduced_algebra():
    c = Checks(9)
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(500):
        A3 = rng.choice([-1, 1]) * 10 ** rng.uniform(-3, 1)
        A4 = rng.choice([-1, 1]) * 10 ** rng.uniform(-3, 1)
        p = fold_prediction(A3, A4)
        A3f, A4f = fit_A3A4(p.kappa0, p.deltaS0)
        worst = max(
            worst,
            rel(p.kappa0, 3 * A3**2 / (8 * A4)),
            rel(p.deltaS0, 9 * A3**4 / (128 * A4**3)),
            rel(p.r0, abs(3 * A3 / (2 * A4))),
            rel(A3f, abs(A3)),
            rel(A4f, A4),
        )
    c(worst <= 1e-12, f"closed forms rel {worst:.1e}")
    A3, A4 = 0.518, -8.40
    c(delta_S_pm(0.0, A3, A4)[0] == 0.0, "dS_-(0) == 0")
    k0 = fold_prediction(A3, A4).kappa0
    ks = 10.0 ** -np.arange(2, 7)
    diffs = [abs(np.subtract(*cusp_expansion(k0 - k * A4 / 24, A3, A4))) for k in ks]
    slope = np.polyfit(np.log(ks), np.log(diffs), 1)[0]
    c(abs(slope - 1.5) <= 0.01, f"cusp slope {slope:.4f}")
    census = []
    for f in (0.5, 0.0, -0.5):
        cps = critical_points(f * k0, A3, A4)
        census.append(len(cps))
        g = max(float(np.max(np.abs(reduced_gradient(q.r1, q.r2, f * k0, A3, A4)))) for q in cps)
        c(g <= 1e-10, f"gradient at critical points {g:.1e}")
    c(census == [7, 5, 7], f"census {census}")
    c.finish()


def test_criterion_10_gauge_invariance(runs, results):
    c = Checks(10)
    if "alpha-minus" not in results:
        failed_runs(c, {"alpha-minus": runs["alpha-minus"]})
        c.finish()
    bp = results["alpha-minus"].bifurcation
    ref = a3_coefficient(*a3_integrals(bp), "C3")
    rng = np.random.default_rng(10)
    worst = max(rel(a3_coefficient(*a3_integrals(rotate_pair(bp, a)), "C3"), ref) for a in rng.uniform(0, 2 * math.pi, 20))
    c(worst <= 1e-6, f"A3 spread {worst:.1e} over 20 rotations")
    c(rel(ref, results["alpha-minus"].A3_integral) <= 1e-6, "aligned D3 value equals the invariant")
    c.finish()
