import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import interior_point
from curvflow.catalog import (ConfigError, chart_from_config, clifford_torus, ellipsoid, in_sphere,
                              minimal_clifford_torus_in_S3, pad_ambient, product_of_spheres, sphere, user_chart)
from curvflow.geometry import (DegenerateChartError, GeometryError, UndefinedPlaneError, forms_batch, frame_at,
                               fundamental_forms, implicit_alpha, implicit_frame, intrinsic_sectional_curvature,
                               ricci_matrix, ricci_quadratic, sectional_curvature, sphere_relative_forms)

unit = st.floats(0.0, 1.0)


def ellipsoid_gauss_curvature(x, a):
    """Closed-form Gaussian curvature of x^2/a^2 + y^2/b^2 + z^2/c^2 = 1."""
    return 1.0 / (np.prod(a) ** 2 * np.sum(x**2 / a**4) ** 2)


@pytest.mark.parametrize("n,r", [(2, 1.0), (3, 0.5), (4, 2.0)])
def test_round_sphere_invariants(rng, n, r):
    ch = sphere(n, r)
    fp, ff = forms_batch(ch, np.stack([interior_point(ch, rng) for _ in range(5)]))
    np.testing.assert_allclose(ff.hs_norm_sq, n / r**2, rtol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(ff.mean_curvature, axis=-1), 1 / r, rtol=1e-10)
    np.testing.assert_allclose(ricci_matrix(ff.alpha), np.broadcast_to((n - 1) / r**2 * np.eye(n), (5, n, n)),
                               atol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(fp.x, axis=-1), r, rtol=1e-12)


@given(unit, unit)
def test_frames_are_orthonormal_and_split_the_ambient_space(s, t):
    ch = ellipsoid([1.0, 1.3, 0.7])
    u = ch.bounds[:, 0] + (0.05 + 0.9 * np.array([s, t])) * (ch.bounds[:, 1] - ch.bounds[:, 0])
    fp = frame_at(ch, u)
    E = np.vstack([fp.tangent, fp.normal])
    np.testing.assert_allclose(E @ E.T, np.eye(ch.m), atol=1e-10)
    # tangent rows span the image of the jacobian
    J = ch.jacobian(u)
    np.testing.assert_allclose(fp.normal @ J, 0.0, atol=1e-10)


def test_gauss_equation_matches_ellipsoid_closed_form(rng):
    a = np.array([1.0, 1.2, 1.5])
    ch = ellipsoid(a)
    for _ in range(20):
        u = interior_point(ch, rng, margin=0.05)
        fp = frame_at(ch, u)
        ff = fundamental_forms(ch, fp)
        K = sectional_curvature(ff, [1.0, 0.0], [0.0, 1.0])
        assert K == pytest.approx(ellipsoid_gauss_curvature(fp.x, a), rel=1e-10)


def test_intrinsic_route_agrees_with_gauss_equation(rng):
    ch = product_of_spheres([(2, 1.0), (1, 0.5)])
    for _ in range(10):
        u = interior_point(ch, rng)
        fp = frame_at(ch, u)
        ff = fundamental_forms(ch, fp)
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        k_ext = sectional_curvature(ff, Q[:, 0], Q[:, 1])
        k_int = intrinsic_sectional_curvature(ch, u, Q[:, 0], Q[:, 1], fp)
        assert k_int == pytest.approx(k_ext, abs=1e-8)


def test_flat_torus_has_zero_curvature(rng):
    ch = clifford_torus(1.0, 2.0)
    fp, ff = forms_batch(ch, np.stack([interior_point(ch, rng) for _ in range(4)]))
    np.testing.assert_allclose(ricci_matrix(ff.alpha), 0.0, atol=1e-12)
    np.testing.assert_allclose(ff.hs_norm_sq, 1.0 + 0.25, rtol=1e-12)


def test_ricci_quadratic_is_a_sum_of_sectional_curvatures(rng):
    ch = ellipsoid([1.0, 1.5, 2.0, 0.8])
    u = interior_point(ch, rng)
    ff = fundamental_forms(ch, frame_at(ch, u))
    v = rng.standard_normal(3)
    v /= np.linalg.norm(v)
    assert ricci_quadratic(ff, v) == pytest.approx(v @ ricci_matrix(ff.alpha) @ v, abs=1e-12)


def test_sectional_curvature_rejects_degenerate_planes():
    ff = fundamental_forms(sphere(2), frame_at(sphere(2), [1.0, 1.0]))
    with pytest.raises(UndefinedPlaneError):
        sectional_curvature(ff, [1.0, 0.0], [1.0, 0.0])
    with pytest.raises(UndefinedPlaneError):
        sectional_curvature(ff, [0.0, 0.0], [1.0, 0.0])
    with pytest.raises(GeometryError):
        sectional_curvature(ff, [2.0, 0.0], [0.0, 1.0])


def test_pole_of_the_sphere_chart_is_degenerate():
    with pytest.raises(DegenerateChartError):
        frame_at(sphere(2), [0.0, 0.3])


def test_level_set_route_gives_the_same_second_fundamental_form(rng):
    ch = ellipsoid([1.0, 1.2, 1.5])
    u = interior_point(ch, rng)
    fp = frame_at(ch, u)
    ff = fundamental_forms(ch, fp)
    N, P = implicit_frame(ch, fp.x)
    np.testing.assert_allclose(P @ fp.tangent.T, fp.tangent.T, atol=1e-12)
    amb = implicit_alpha(ch, fp.x, fp.tangent[0], fp.tangent[1])
    np.testing.assert_allclose(amb, ff.alpha[0, 1] @ fp.normal, atol=1e-10)


def test_finite_difference_chart_tracks_the_analytic_one(rng):
    ch = ellipsoid([1.0, 1.2, 1.5])
    fd = user_chart(ch.f, 2, 3, ch.bounds, ch.periodic)
    u = interior_point(ch, rng)
    np.testing.assert_allclose(fd.jacobian(u), ch.jacobian(u), atol=1e-7)
    np.testing.assert_allclose(fd.hessian(u), ch.hessian(u), atol=1e-6)


def test_padding_the_ambient_space_keeps_the_invariants(rng):
    ch = ellipsoid([1.0, 1.2, 1.5])
    pad = pad_ambient(ch, 5)
    u = interior_point(ch, rng)
    a = fundamental_forms(ch, frame_at(ch, u))
    b = fundamental_forms(pad, frame_at(pad, u))
    assert b.hs_norm_sq == pytest.approx(a.hs_norm_sq, rel=1e-12)
    np.testing.assert_allclose(ricci_matrix(b.alpha), ricci_matrix(a.alpha), atol=1e-12)


def test_equatorial_sphere_is_totally_geodesic_in_s3(rng):
    ch = in_sphere(sphere(2), N=3)
    fp, ff = forms_batch(ch, np.stack([interior_point(ch, rng) for _ in range(4)]))
    srf = sphere_relative_forms(ch, fp, ff)
    np.testing.assert_allclose(srf.beta, 0.0, atol=1e-12)


def test_minimal_clifford_torus_has_zero_sphere_mean_curvature(rng):
    ch = minimal_clifford_torus_in_S3()
    fp, ff = forms_batch(ch, np.stack([interior_point(ch, rng) for _ in range(4)]))
    srf = sphere_relative_forms(ch, fp, ff)
    np.testing.assert_allclose(srf.beta_mean, 0.0, atol=1e-12)
    # |beta|^2 = 2 for this torus, and it sits at distance 1 from the origin
    np.testing.assert_allclose(np.sum(srf.beta**2, axis=(-3, -2, -1)), 2.0, rtol=1e-12)


def test_not_in_unit_sphere_is_refused():
    with pytest.raises(GeometryError):
        in_sphere(sphere(2, 2.0))
    fp = frame_at(sphere(2, 2.0), [1.0, 1.0])
    with pytest.raises(GeometryError):
        sphere_relative_forms(sphere(2, 2.0), fp)


@pytest.mark.parametrize("doc", [
    {"kind": "sphere", "n": 2, "r": 1.0},
    {"kind": "product", "factors": [{"kind": "sphere", "n": 1}, {"kind": "sphere", "n": 2}]},
    {"kind": "clifford_torus", "r1": 1.0, "r2": 2.0},
    {"kind": "ellipsoid", "semiaxes": [1.0, 2.0, 3.0]},
    {"kind": "minimal_clifford_torus"},
    {"kind": "in_sphere", "inner": {"kind": "sphere", "n": 2}, "N": 3},
])
def test_every_config_kind_builds(doc):
    ch = chart_from_config(doc)
    assert ch.n >= 2 and ch.m > ch.n


@pytest.mark.parametrize("doc", [
    {"n": 2},
    {"kind": "torus"},
    {"kind": "sphere"},
    {"kind": "sphere", "n": "two"},
    {"kind": "product", "factors": []},
    {"kind": "in_sphere", "inner": {"kind": "sphere", "n": 2, "r": 3.0}},
    [1, 2],
])
def test_bad_configs_raise_config_errors(doc):
    with pytest.raises(ConfigError):
        chart_from_config(doc)


def test_sphere_sectional_curvature_scales_with_radius(rng):
    for r in (0.5, 1.0, 2.0):
        ch = sphere(3, r)
        ff = fundamental_forms(ch, frame_at(ch, interior_point(ch, rng)))
        Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        assert sectional_curvature(ff, Q[:, 0], Q[:, 2]) == pytest.approx(1 / r**2, rel=1e-10)
        assert math.isclose(float(ff.hs_norm_sq), 3 / r**2, rel_tol=1e-10)
