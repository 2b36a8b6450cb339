import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choreofold.continuation import (
    Branch,
    BranchPoint,
    ContinuationControls,
    ContinuationError,
    ReferenceFamily,
    Side,
    _fold_index,
    branch_from_rows,
    branch_seed,
    continue_branch,
    default_theta,
    fit_kappa_linear,
    fold_from_table,
    locate_fold,
    model_delta_S,
    read_branch_csv,
    write_branch_csv,
)
from choreofold.families import FamilyTracker, SeedKind
from choreofold.orbit import action, residual_norm
from choreofold.pipeline import make_family, solve_seed
from choreofold.reduction import a3_integrals, fold_prediction
from choreofold.spectrum import ScanRow, l2_inner, locate_bifurcation, make_tracker, scan_eigenvalue


def parabola_table(pf=2.0, c=-3.0, n=21, s0=0.37):
    """Branch samples with p(s) = pf + c (s - s0)^2 and linear companions."""
    s = np.linspace(-1.0, 1.0, n)
    p = pf + c * (s - s0) ** 2
    return s, p, 5 * (s - s0) ** 2 + 0.1, 2 * s, 0.5 - (s - s0) ** 2


class TestFoldFromTable:
    def test_exact_parabola(self):
        s, p, dS, a, k = parabola_table()
        rep = fold_from_table(s, p, dS, a, k)
        assert rep.parameter == pytest.approx(2.0, abs=1e-12)
        assert rep.deltaS0 == pytest.approx(0.1, abs=1e-12)
        assert rep.amplitude == pytest.approx(0.74, abs=1e-12)
        assert rep.kappa0 == pytest.approx(0.5, abs=1e-12)

    def test_monotone_has_no_fold(self):
        s = np.linspace(0, 1, 9)
        with pytest.raises(ContinuationError):
            fold_from_table(s, s, s, s, s)

    def test_explicit_index(self):
        s, p, dS, a, k = parabola_table()
        i = int(np.argmin(np.abs(s - 0.37)))
        assert fold_from_table(s, p, dS, a, k, i).parameter == pytest.approx(2.0, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-0.6, 0.6), st.floats(0.5, 5.0), st.sampled_from([1.0, -1.0]), st.integers(0, 2**31))
    def test_noise_robust_index(self, s0, c, sign, seed):
        s = np.linspace(-1, 1, 41)
        p = 10 + sign * c * (s - s0) ** 2
        p = p + 1e-9 * np.random.default_rng(seed).normal(size=s.size)
        i = _fold_index(p)
        assert i is not None and abs(s[i] - s0) <= 0.05 + 1e-12

    def test_short_table(self):
        assert _fold_index([1.0, 2.0]) is None


class TestKappaLine:
    @settings(max_examples=50, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(1, 20))
    def test_exact_line(self, c0, c1, p0):
        rows = [ScanRow(p, c0 + c1 * p, 2) for p in np.linspace(p0, p0 + 0.1, 7)]
        a, b = fit_kappa_linear(rows)
        assert a + b * p0 == pytest.approx(c0 + c1 * p0, abs=1e-10)
        assert b == pytest.approx(c1, abs=1e-8)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            fit_kappa_linear([ScanRow(1.0, k, 2) for k in (0.1, 0.2, 0.3)])
        with pytest.raises(ValueError):
            fit_kappa_linear([ScanRow(1.0, 0.1, 2), ScanRow(2.0, 0.2, 2)])


class TestModelCurve:
    def test_side_selection_and_clipping(self):
        A3, A4 = 0.518, -8.40
        p = fold_prediction(A3, A4)
        assert model_delta_S(0.0, A3, A4, Side.TOWARD_Q) == 0.0
        assert model_delta_S(0.0, A3, A4, "FoldSide") == pytest.approx(-9 * A3**4 / (8 * A4**3))
        assert model_delta_S(2 * p.kappa0, A3, A4, Side.FOLD_SIDE) == p.deltaS0

    def test_default_theta(self):
        # A3_1 = 0: extremal directions sin(3t) = +-1; nearest to pi/2
        assert default_theta(0.3, 0.0) == pytest.approx(math.pi / 2)
        for a0, a1 in ((0.1, 0.2), (-0.4, 0.05), (0.0, -1.0)):
            t = default_theta(a0, a1)
            # stationary direction of the cubic angular factor
            assert 3 * a0 * math.cos(3 * t) - a1 * math.sin(3 * t) == pytest.approx(0, abs=1e-12)
            assert abs(math.remainder(t - math.pi / 2, 2 * math.pi)) <= math.pi / 6 + 1e-12


def synthetic_branch():
    s, p, dS, a, k = parabola_table(n=9)
    i = _fold_index(p)
    pts = [
        BranchPoint(float(p[j]), None, float(dS[j] + 3), 3.0, float(k[j]), float(a[j]),
                    Side.FOLD_SIDE if j > i else Side.TOWARD_Q, float(s[j] + 1))
        for j in range(len(s))
    ]
    return Branch(None, pts, i, 0.0, "synthetic")


class TestBranchTable:
    def test_csv_round_trip(self, tmp_path):
        b = synthetic_branch()
        write_branch_csv(b, tmp_path / "b.csv", ["hdr"])
        back = branch_from_rows(read_branch_csv(tmp_path / "b.csv"))
        assert back.fold_index == b.fold_index
        assert np.array_equal(back.parameters(), b.parameters())
        assert np.array_equal(back.dS(), b.dS())
        assert [q.side for q in back.points] == [q.side for q in b.points]
        assert [q.arclength for q in back.points] == [q.arclength for q in b.points]

    def test_locate_from_table(self):
        rep = locate_fold(synthetic_branch())
        assert rep.parameter == pytest.approx(2.0, abs=1e-12)


# --- the lower-action LJ eight at its d = 2 crossing ---------------------------------------


@pytest.fixture(scope="module")
def alpha_minus():
    fam = make_family("lj")
    tr = FamilyTracker(fam, solve_seed(SeedKind.LJ_LOW, 16.0, 64, fam))
    bp = locate_bifurcation(tr, (14.8, 14.87), degeneracy=2)
    return tr, bp, default_theta(*a3_integrals(bp))


@pytest.fixture(scope="module")
def alpha_minus_branch(alpha_minus):
    tr, bp, theta = alpha_minus
    kt = next(k for k in make_tracker(tr, 14.74, 2, window=0.05) if k.kappa(14.74) * k.kappa(14.92) < 0)
    ref = ReferenceFamily(tr, scan_eigenvalue(kt, np.linspace(14.74, 14.92, 19)))
    ctl = ContinuationControls(max_points=60, param_bounds=(14.74, 14.92))
    return ref, ctl, continue_branch(bp, ref, ctl, theta=theta)


class TestSeeds:
    def test_zero_amplitude_returns_bifurcation_orbit(self, alpha_minus):
        _, bp, theta = alpha_minus
        rep = branch_seed(bp, theta, 0.0)
        assert rep.converged
        assert np.max(np.abs(rep.orbit.coeffs - bp.orbit.coeffs)) < 1e-9

    def test_seed_leaves_family(self, alpha_minus):
        _, bp, theta = alpha_minus
        h = 2e-3 * math.sqrt(l2_inner(bp.orbit, bp.orbit.coeffs, bp.orbit.coeffs))
        rep = branch_seed(bp, theta, h)
        d = rep.orbit.coeffs - bp.orbit.coeffs
        assert rep.converged and residual_norm(rep.orbit) < 1e-9
        assert math.sqrt(l2_inner(bp.orbit, d, d)) > h / 10

    def test_threefold_directions_equal_action(self, alpha_minus):
        _, bp, theta = alpha_minus
        h = 2e-3 * math.sqrt(l2_inner(bp.orbit, bp.orbit.coeffs, bp.orbit.coeffs))
        S = [action(branch_seed(bp, theta + 2 * math.pi * n / 3, h).orbit) for n in range(3)]
        assert max(S) - min(S) < 1e-9 * abs(S[0])


class TestAlphaMinusBranch:
    def test_has_fold_on_one_side(self, alpha_minus_branch):
        _, _, b = alpha_minus_branch
        assert b.fold_index is not None
        sides = [q.side for q in b.points]
        assert Side.FOLD_SIDE in sides and Side.TOWARD_Q in sides
        assert np.all(np.diff([q.arclength for q in b.points]) > 0)
        assert np.all(np.diff(b.amplitudes()) > 0)

    def test_fold_consistent_with_model_signs(self, alpha_minus, alpha_minus_branch):
        _, bp, _ = alpha_minus
        ref, _, b = alpha_minus_branch
        rep = locate_fold(b, ref)
        assert rep.parameter < bp.parameter
        # quartic picture: kappa0 and dS0 share the sign of A4
        assert rep.kappa0 * rep.deltaS0 > 0
        for q in b.points:
            assert residual_norm(q.orbit) < 1e-8

    def test_half_step_reproduces_fold(self, alpha_minus, alpha_minus_branch):
        _, bp, theta = alpha_minus
        ref, ctl, b = alpha_minus_branch
        ds = max(abs(np.diff(b.amplitudes())))
        fine = continue_branch(bp, ref, replace(ctl, ds_max=ds / 2, max_points=120), theta=theta)
        f1, f2 = locate_fold(b, ref), locate_fold(fine, ref)
        assert f2.parameter == pytest.approx(f1.parameter, abs=1e-5)
        assert f2.deltaS0 == pytest.approx(f1.deltaS0, rel=2e-2)
