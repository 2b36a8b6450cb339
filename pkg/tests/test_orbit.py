import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choreofold.families import Family, SeedKind, choreography_seed, integrate_planar
from choreofold.orbit import (
    Orbit,
    action,
    action_gradient,
    choreography_defect,
    energy_samples,
    load_orbit,
    orbit_from_dict,
    orbit_to_dict,
    resample,
    residual_norm,
    save_orbit,
    shift_time,
    solve_orbit,
    time_derivative_coeffs,
)
from choreofold.pipeline import solve_seed
from choreofold.potentials import DomainError, Potential, potential_energy


@pytest.fixture(scope="module")
def eight():
    """Newtonian figure-eight at T = 2 pi."""
    return solve_seed(SeedKind.NEWTONIAN, 1.0, 64, Family.homogeneous(2 * math.pi))


@pytest.fixture(scope="module")
def lj_pair():
    fam = Family.lennard_jones()
    return solve_seed(SeedKind.LJ_HIGH, 16.0, 64, fam), solve_seed(SeedKind.LJ_LOW, 16.0, 64, fam)


def rotate(o: Orbit, R: np.ndarray) -> Orbit:
    c = o.coeffs.reshape(3, 3, -1)
    return o.with_coeffs(np.einsum("ij,bjk->bik", R, c).reshape(9, -1))


class TestAction:
    def test_free_circular_motion(self):
        m = 4
        c = np.zeros((9, 2 * m + 1))
        c[0, 1] = 1.0  # x1 = cos t
        c[1, m + 1] = 1.0  # y1 = sin t
        c[3, 0], c[6, 0] = 10.0, -10.0
        o = Orbit(Potential.zero(), 2 * math.pi, c, 64)
        assert action(o) == pytest.approx(math.pi, rel=1e-14)

    def test_collision_on_grid(self):
        o = Orbit(Potential.lennard_jones(), 1.0, np.zeros((9, 5)), 16)
        with pytest.raises(DomainError):
            action(o)

    def test_doubling_samples(self, eight):
        o2 = Orbit(eight.potential, eight.period, eight.coeffs, 2 * eight.samples)
        assert abs(action(o2) - action(eight)) < 1e-10 * abs(action(eight))

    def test_eight_against_shooting_integrator(self, eight):
        """Positions and action agree with DOP853 integration of the same initial state."""
        t = eight.times
        q0 = eight.evaluate(0.0)[0]
        v0 = (eight.basis.derivs @ eight.coeffs.T / eight.period)[0]
        idx = [0, 1, 3, 4, 6, 7]
        y = integrate_planar(eight.potential, np.concatenate([q0[idx], v0[idx]]), np.append(t, eight.period))[:-1]
        pos = eight.positions()[:, idx]
        assert np.max(np.abs(y[:, :6] - pos)) < 1e-8
        kin = 0.5 * np.sum(y[:, 6:] ** 2, axis=1)
        q = np.zeros((len(t), 9))
        q[:, idx] = y[:, :6]
        S_ode = eight.period * np.mean(kin - potential_energy(eight.potential, q))
        assert S_ode == pytest.approx(action(eight), rel=1e-8)

    def test_lj_high_resolution_doubled(self, lj_pair):
        assert lj_pair[0].modes == 128 and lj_pair[1].modes == 64

    def test_energy_conserved(self, eight, lj_pair):
        for o in (eight, *lj_pair):
            E = energy_samples(o)
            assert np.ptp(E) <= 1e-8 * np.max(np.abs(E))


class TestGradient:
    def test_finite_difference(self):
        rng = np.random.default_rng(3)
        seed = choreography_seed(SeedKind.LJ_HIGH, 16.0, modes=6)
        o = seed.with_coeffs(seed.coeffs + 1e-2 * rng.normal(size=seed.coeffs.shape))
        g = action_gradient(o)
        x = o.flat()
        fd = np.empty_like(x)
        for i in range(x.size):
            h = 1e-6 * max(1.0, abs(x[i]))
            e = np.zeros_like(x)
            e[i] = h
            fd[i] = (action(o.with_coeffs(x + e)) - action(o.with_coeffs(x - e))) / (2 * h)
        assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)

    def test_stationary_and_time_shift(self, eight):
        g = action_gradient(eight)
        assert residual_norm(eight) < 1e-10
        d = time_derivative_coeffs(eight.coeffs).ravel()
        assert abs(g @ d) < 1e-10 * np.linalg.norm(d)


class TestSolver:
    def test_exact_seed_is_fixed_point(self, eight):
        rep = solve_orbit(eight, "choreography", tol=1e-10)
        assert rep.converged and rep.iterations <= 2
        assert np.max(np.abs(rep.orbit.coeffs - eight.coeffs)) < 1e-10

    def test_lj_pair(self, lj_pair):
        hi, lo = lj_pair
        assert action(hi) > action(lo)
        lo = resample(lo, hi.modes)
        assert np.linalg.norm(hi.coeffs - lo.coeffs) > 1e-2 * np.linalg.norm(lo.coeffs)

    def test_choreography_preserved(self, eight, lj_pair):
        for o in (eight, *lj_pair):
            assert choreography_defect(o) < 1e-10

    def test_tail_mass(self, eight, lj_pair):
        for o in (eight, *lj_pair):
            assert o.tail_mass() < 1e-10

    def test_full_space_from_choreography(self, lj_pair):
        rep = solve_orbit(lj_pair[0], "full", tol=1e-10)
        assert rep.converged
        assert np.max(np.abs(rep.orbit.coeffs - lj_pair[0].coeffs)) < 1e-8

    def test_collision_reported(self):
        o = Orbit(Potential.lennard_jones(), 16.0, np.zeros((9, 9)), 64)
        rep = solve_orbit(o, "full")
        assert not rep.converged and "collision" in rep.message

    def test_seed_is_choreographic(self):
        for kind in SeedKind:
            assert choreography_defect(choreography_seed(kind, 16.0, modes=16)) < 1e-8

    def test_upsampled_resolve(self, eight):
        rep = solve_orbit(resample(eight, 96), "choreography", tol=1e-10)
        assert rep.converged
        assert abs(action(rep.orbit) - action(eight)) < 1e-10 * abs(action(eight))


class TestResample:
    def test_identity(self, eight):
        assert np.array_equal(resample(eight, eight.modes, eight.samples).coeffs, eight.coeffs)

    def test_round_trip(self, eight):
        back = resample(resample(eight, 100), eight.modes, eight.samples)
        assert np.array_equal(back.coeffs, eight.coeffs)


class TestSerialization:
    def test_bit_exact(self, tmp_path, lj_pair):
        p = tmp_path / "o.json"
        save_orbit(lj_pair[0], p)
        o = load_orbit(p)
        assert np.array_equal(o.coeffs, lj_pair[0].coeffs)
        assert (o.period, o.samples, o.potential) == (lj_pair[0].period, lj_pair[0].samples, lj_pair[0].potential)

    def test_format_fields(self, eight):
        d = json.loads(json.dumps(orbit_to_dict(eight)))
        assert set(d) == {"format_version", "potential", "period", "modes", "samples", "coefficients"}
        assert len(d["coefficients"]) == 9 and len(d["coefficients"][0]) == 2 * d["modes"] + 1
        assert np.array_equal(orbit_from_dict(d).coeffs, eight.coeffs)

    def test_bad_shape(self, eight):
        d = orbit_to_dict(eight)
        d["modes"] += 1
        with pytest.raises(ValueError):
            orbit_from_dict(d)


class TestGaugeInvariance:
    @settings(max_examples=25, deadline=None)
    @given(st.floats(0, 1))
    def test_time_shift(self, eight, dtau):
        assert action(shift_time(eight, dtau)) == pytest.approx(action(eight), rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0, 2 * math.pi), st.floats(0, math.pi))
    def test_rotation(self, eight, a, b):
        Rz = np.array([[math.cos(a), -math.sin(a), 0], [math.sin(a), math.cos(a), 0], [0, 0, 1]])
        Rx = np.array([[1, 0, 0], [0, math.cos(b), -math.sin(b)], [0, math.sin(b), math.cos(b)]])
        assert action(rotate(eight, Rz @ Rx)) == pytest.approx(action(eight), rel=1e-12)
