"""Stereographic geometry: frozen examples, round trips, chord identity, measure."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from prte import geom
from prte.errors import NorthPoleSingularity, ParameterOutOfRange


def random_directions(rng, n, d, pole_gap=1e-6):
    """Uniform directions on S^{d-1}, resampled away from the north pole."""
    out = np.empty((n, d))
    have = 0
    while have < n:
        x = rng.standard_normal((2 * n, d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        x = x[1.0 - x[:, -1] > pole_gap]
        take = min(n - have, len(x))
        out[have : have + take] = x[:take]
        have += take
    return out


class TestProjection:
    def test_south_pole_maps_to_origin(self):
        """The projection pole is e_d, so -e_d lands at v = 0."""
        assert np.allclose(geom.project([0.0, -1.0], 2), [0.0])
        assert np.allclose(geom.project([0.0, 0.0, -1.0], 3), [0.0, 0.0])
        assert np.allclose(geom.unproject([0.0], 2), [0.0, -1.0])
        assert np.allclose(geom.unproject([0.0, 0.0], 3), [0.0, 0.0, -1.0])

    def test_equator_fixed_point(self):
        """Equatorial direction (1, 0, 0) projects to the unit plane point (1, 0)."""
        assert np.allclose(geom.project([1.0, 0.0, 0.0], 3), [1.0, 0.0])
        assert np.allclose(geom.unproject([1.0, 0.0], 3), [1.0, 0.0, 0.0])
        assert np.allclose(geom.project([1.0, 0.0], 2), [1.0])

    def test_north_pole_rejected(self):
        with pytest.raises(NorthPoleSingularity):
            geom.project([0.0, 0.0, 1.0], 3)
        with pytest.raises(NorthPoleSingularity):
            geom.project([np.sqrt(2e-13 - 1e-26), 1.0 - 1e-13], 2)

    def test_non_unit_direction_rejected(self):
        with pytest.raises(ParameterOutOfRange):
            geom.project([0.5, 0.5, 0.5], 3)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-30.0, 30.0), st.floats(-30.0, 30.0))
    def test_round_trip_from_plane(self, x, y):
        """unproject then project is the identity on the plane."""
        v = np.array([x, y])
        theta = geom.unproject(v, 3)
        assert abs(np.linalg.norm(theta) - 1.0) < 1e-12
        back = geom.project(theta, 3)
        assert np.allclose(back, v, rtol=1e-9, atol=1e-9), f"round trip failed at v={v}"

    def test_round_trip_from_sphere(self):
        rng = np.random.default_rng(7)
        for d in (2, 3):
            theta = random_directions(rng, 500, d)
            back = geom.unproject(geom.project(theta, d), d)
            err = np.abs(back - theta).max()
            assert err < 1e-10, f"d={d}: sphere round trip error {err:.2e}"


class TestChordIdentity:
    def test_frozen_example(self):
        """Between the south pole (v=0) and the equator point (1,0) the gap is 1."""
        assert np.isclose(geom.chord_gap(np.zeros(2), np.array([1.0, 0.0])), 1.0)

    def test_matches_inner_product(self):
        """1 - theta.theta' = 2|v-v'|^2 / (<v>^2 <v'>^2) at 1e-12 on random pairs."""
        rng = np.random.default_rng(11)
        for d in (2, 3):
            theta = random_directions(rng, 10_000, d)
            thetap = random_directions(rng, 10_000, d)
            lhs = 1.0 - np.sum(theta * thetap, axis=1)
            rhs = geom.chord_gap(geom.project(theta, d), geom.project(thetap, d))
            err = np.abs(lhs - rhs).max()
            assert err < 1e-12, f"d={d}: chord identity error {err:.2e}"

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(-20.0, 20.0), st.floats(-20.0, 20.0), st.floats(-20.0, 20.0), st.floats(-20.0, 20.0)
    )
    def test_chord_symmetric(self, a, b, c, e):
        v, vp = np.array([a, b]), np.array([c, e])
        assert geom.chord_gap(v, vp) == pytest.approx(geom.chord_gap(vp, v), rel=1e-14)


class TestJacobian:
    def test_value_at_origin(self):
        """dtheta/dv at the south pole: 2^{d-1}."""
        assert geom.jacobian_to_sphere(np.zeros(1), 2) == pytest.approx(2.0)
        assert geom.jacobian_to_sphere(np.zeros(2), 3) == pytest.approx(4.0)

    def test_recovers_circle_length(self):
        """Midpoint sum over [-L, L) plus the exact truncation tail gives 2*pi."""
        L, n = 24.0, 4096
        h = 2 * L / n
        v = (-L + h * (np.arange(n) + 0.5))[:, None]
        grid_part = geom.jacobian_to_sphere(v, 2).sum() * h
        tail = 4.0 * np.arctan(1.0 / L)  # int_{|v|>L} 2/(1+v^2) dv
        assert abs(grid_part + tail - 2 * np.pi) < 1e-6

    def test_recovers_sphere_area(self):
        """Same check for d = 3; the tail over the box complement is 4*pi minus a closed 1-D integral."""
        L, n = 12.0, 512
        h = 2 * L / n
        ax = -L + h * (np.arange(n) + 0.5)
        vx, vy = np.meshgrid(ax, ax, indexing="ij")
        v = np.stack([vx, vy], axis=-1)
        grid_part = geom.jacobian_to_sphere(v, 3).sum() * h * h

        def inner(x):
            # int_{-L}^{L} 4 (1 + x^2 + y^2)^{-2} dy in closed form
            a2 = 1.0 + x * x
            return 4.0 * (
                L / (a2 * (a2 + L * L)) + np.arctan(L / np.sqrt(a2)) / a2**1.5
            )

        box_exact, quad_err = integrate.quad(inner, -L, L, epsabs=1e-12, epsrel=1e-12)
        tail = 4 * np.pi - box_exact
        assert quad_err < 1e-9
        assert abs(grid_part + tail - 4 * np.pi) < 1e-6

    def test_truncated_mass_monotone_in_width(self):
        """The truncated plane carries strictly more of the sphere measure as L grows."""
        totals = []
        for L in (8.0, 12.0, 16.0, 24.0):
            n = int(2 * L / 0.0125)
            v = (-L + 0.0125 * (np.arange(n) + 0.5))[:, None]
            totals.append(geom.jacobian_to_sphere(v, 2).sum() * 0.0125)
        assert all(a < b for a, b in zip(totals, totals[1:]))
        assert totals[-1] < 2 * np.pi
