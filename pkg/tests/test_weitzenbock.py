import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import interior_point, random_orthogonal
from curvflow.catalog import clifford_torus, ellipsoid, in_sphere, minimal_clifford_torus_in_S3, product_of_spheres, sphere
from curvflow.exterior import ExteriorDomainError, MultiVector, wedge_columns
from curvflow.frames import OptimizerSettings, haar_orthogonal
from curvflow.geometry import GeometryError, forms_batch, frame_at, fundamental_forms, ricci_matrix, shape_operators, sphere_relative_forms
from curvflow.grid import GridSpec
from curvflow.weitzenbock import (FrameSelection, _hpq_parts, _hpq_value, Hpq_form, PotentialField, WeitzenboeckDomainError, evaluate_field, hpq,
                                  identity_chain, is_decomposable, lawson_simons_margin, negative_part_norm,
                                  potential_field, primitive_curvature_sum, refined_extremum, rhat0, hodge_potential,
                                  minimal_sphere_margin, harmonic_map_potential, weitzenbock_extrinsic, weitzenbock_operator,
                                  weitzenbock_primitive)


def forms_at(chart, rng, k=1):
    U = np.stack([interior_point(chart, rng) for _ in range(k)])
    return forms_batch(chart, U)


def h1_direct(alpha, v, p):
    """(p/2) H_p^1(v) from shape operators alone; delta^2 vanishes on 1-vectors."""
    A = shape_operators(alpha)
    Av = A @ v
    quad = Av @ v
    return 0.5 * p * (np.sum(Av**2) + (p - 2) * np.sum(quad**2) - v @ ricci_matrix(alpha) @ v)


def sampled_extreme(fn, n, rng, count=4000, mode="max"):
    Os = haar_orthogonal(rng, n, count)
    vals = np.array([fn(O) for O in Os])
    return vals.max() if mode == "max" else vals.min()


# ---------------------------------------------------------------- operator


@pytest.mark.parametrize("chart", [sphere(3), ellipsoid([1.0, 1.2, 1.5, 0.8]), product_of_spheres([(2, 1.0), (2, 0.7)]),
                                   clifford_torus(1.0, 2.0)], ids=lambda c: c.name)
def test_operator_matches_curvature_sum_on_decomposables(rng, chart):
    ff = fundamental_forms(chart, frame_at(chart, interior_point(chart, rng)))
    n = chart.n
    for q in range(1, n + 1):
        R = weitzenbock_operator(ff, q)
        for _ in range(10):
            O = random_orthogonal(rng, n)
            V = wedge_columns(O, q)
            sel = FrameSelection(O, q)
            assert V @ R @ V == pytest.approx(weitzenbock_primitive(ff, sel), abs=1e-10)
            assert weitzenbock_extrinsic(ff, sel) == pytest.approx(weitzenbock_primitive(ff, sel), abs=1e-10)


def test_operator_is_symmetric_and_hodge_symmetric(rng):
    ch = ellipsoid([1.0, 1.2, 1.5, 0.8, 1.1])
    ff = fundamental_forms(ch, frame_at(ch, interior_point(ch, rng)))
    for q in range(1, 5):
        R = weitzenbock_operator(ff, q)
        np.testing.assert_allclose(R, R.T, atol=1e-12)
    # the spectra of R^q and R^{n-q} coincide
    n = 4
    for q in (1, 2):
        a = np.linalg.eigvalsh(weitzenbock_operator(ff, q))
        b = np.linalg.eigvalsh(weitzenbock_operator(ff, n - q))
        np.testing.assert_allclose(a, b, atol=1e-10)


def test_operator_does_not_depend_on_the_normal_spanning_set(rng):
    ch = ellipsoid([1.0, 1.2, 1.5, 0.8])
    fp = frame_at(ch, interior_point(ch, rng))
    ff = fundamental_forms(ch, fp)
    # normal parts of the ambient basis vectors form a tight frame of the normal space
    Z = fp.normal.T
    np.testing.assert_allclose(weitzenbock_operator(ff, 2, Z), weitzenbock_operator(ff, 2), atol=1e-12)


def test_weitzenbock_on_top_degree_vanishes(rng):
    ch = ellipsoid([1.0, 1.2, 1.5])
    ff = fundamental_forms(ch, frame_at(ch, interior_point(ch, rng)))
    np.testing.assert_allclose(weitzenbock_operator(ff, 2), 0.0, atol=1e-12)


# ----------------------------------------------------------- H_p^q form


@given(st.floats(0.0, 3.0), st.floats(0.0, 2 * np.pi))
def test_degree_one_form_matches_shape_operator_formula(p, theta):
    ch = ellipsoid([1.0, 1.2, 1.5])
    ff = fundamental_forms(ch, frame_at(ch, [1.0, 2.0]))
    v = np.array([np.cos(theta), np.sin(theta)])
    got = 0.5 * p * Hpq_form(ff, MultiVector(1, 2, v), p)
    assert got == pytest.approx(h1_direct(ff.alpha, v, p), abs=1e-12)


def test_form_rejects_non_primitive_inputs():
    ch = sphere(4)
    ff = fundamental_forms(ch, frame_at(ch, [1.0, 1.0, 1.0, 1.0]))
    e = np.eye(4)
    mixed = wedge_columns(e[:, [0, 1]], 2) + wedge_columns(e[:, [2, 3]], 2)
    V = MultiVector(2, 4, mixed / np.linalg.norm(mixed))
    assert not is_decomposable(V)
    with pytest.raises(ExteriorDomainError):
        Hpq_form(ff, V, 1.0)
    with pytest.raises(ExteriorDomainError):
        Hpq_form(ff, MultiVector(2, 4, 2 * wedge_columns(e, 2)), 1.0)
    assert is_decomposable(MultiVector(2, 4, wedge_columns(random_orthogonal(np.random.default_rng(1), 4), 2)))


def test_frame_selection_validates_orthogonality():
    with pytest.raises(WeitzenboeckDomainError):
        FrameSelection(np.ones((3, 3)), 1)
    with pytest.raises(WeitzenboeckDomainError):
        FrameSelection(np.eye(3), 4)


# ----------------------------------------------------------- potentials


@pytest.mark.parametrize("n,q,p,r", [(2, 1, 1.0, 1.0), (3, 1, 0.5, 2.0), (3, 2, 2.0, 0.5), (4, 2, 1.0, 1.0),
                                     (4, 3, 0.5, 1.0), (4, 1, 2.0, 2.0)])
def test_sphere_potential_closed_form(rng, n, q, p, r):
    _, ff = forms_at(sphere(n, r), rng, 3)
    res = hpq(ff, p, q)
    np.testing.assert_allclose(res.value, p * q * (p * q - n) / (2 * r**2), atol=1e-10)


def test_clifford_torus_potential_is_one_quarter(rng):
    _, ff = forms_at(clifford_torus(), rng, 4)
    np.testing.assert_allclose(hpq(ff, 1.0, 1).value, 0.25, atol=1e-10)
    np.testing.assert_allclose(rhat0(ff, 1).value, 0.0, atol=1e-12)


def test_optimizer_beats_random_sampling(rng):
    ch = ellipsoid([1.0, 1.2, 1.5, 0.8])
    ff = fundamental_forms(ch, frame_at(ch, interior_point(ch, rng)))
    Ms, R = _hpq_parts(ff, 2)
    for p in (0.5, 1.0, 3.0):
        res = hpq(ff, p, 2)
        sampled = sampled_extreme(lambda O: 0.5 * p * _hpq_value(Ms, R, wedge_columns(O, 2), p), 3, rng)
        assert res.value >= sampled - 1e-12
        assert res.value - sampled < 0.05 * max(1.0, abs(sampled))
    low = rhat0(ff, 1)
    sampled = sampled_extreme(lambda O: primitive_curvature_sum(ff.alpha, O, 1), 3, rng, mode="min")
    assert low.value <= sampled + 1e-12


def test_degree_one_p2_is_the_top_eigenvalue(rng):
    _, ff = forms_at(ellipsoid([1.0, 1.2, 1.5, 0.8]), rng, 3)
    res = hpq(ff, 2.0, 1)
    A = shape_operators(ff.alpha)
    top = np.linalg.eigvalsh(np.sum(A @ A, axis=-3) - ricci_matrix(ff.alpha))[:, -1]
    np.testing.assert_allclose(res.value, top, atol=1e-12)
    # no sampled direction exceeds it
    O = haar_orthogonal(rng, 3, 200)
    samp = max(h1_direct(ff.alpha[0], o[:, 0], 2.0) for o in O)
    assert res.value[0] >= samp - 1e-12


def test_zero_moment_potential_vanishes(rng):
    _, ff = forms_at(ellipsoid([1.0, 1.2, 1.5]), rng, 2)
    np.testing.assert_array_equal(hpq(ff, 0.0, 1).value, 0.0)


def test_hodge_symmetry_of_rhat0(rng):
    # n = 5: degrees 2 and 3 both go through the frame optimizer
    _, ff = forms_at(ellipsoid([1.0, 1.2, 1.5, 0.8, 1.1, 0.9]), rng, 2)
    np.testing.assert_allclose(rhat0(ff, 2).value, rhat0(ff, 3).value, atol=1e-7)


def test_results_do_not_depend_on_batching(rng):
    ch = ellipsoid([1.0, 1.2, 1.5])
    U = np.stack([interior_point(ch, rng) for _ in range(4)])
    _, ff = forms_batch(ch, U)
    together = hpq(ff, 1.0, 1, point_ids=np.arange(4)).value
    single = [hpq(forms_batch(ch, U[i:i + 1])[1], 1.0, 1, point_ids=[i]).value[0] for i in range(4)]
    np.testing.assert_array_equal(together, single)


def test_potentials_reject_bad_degrees(rng):
    _, ff = forms_at(sphere(2), rng)
    with pytest.raises(WeitzenboeckDomainError):
        hpq(ff, 1.0, 3)
    with pytest.raises(WeitzenboeckDomainError):
        rhat0(ff, 0)


def test_hodge_potential_on_the_round_sphere(rng):
    # R-hat_0^q = q(n-q), |alpha|^2 = n, |H| = 1 on the unit sphere
    for n in (2, 3, 4):
        _, ff = forms_at(sphere(n), rng, 2)
        for q in range(1, n):
            np.testing.assert_allclose(hodge_potential(ff, q), q * (n - q), atol=1e-9)


def test_harmonic_map_potential(rng):
    _, ff = forms_at(sphere(3), rng, 2)
    np.testing.assert_allclose(harmonic_map_potential(ff), 1.0, atol=1e-12)
    _, ff = forms_at(clifford_torus(), rng, 2)
    np.testing.assert_allclose(harmonic_map_potential(ff), -1.0, atol=1e-12)


# ------------------------------------------------------ sphere criteria


def test_lawson_simons_on_totally_geodesic_sphere(rng):
    ch = in_sphere(sphere(2), N=3)
    fp, ff = forms_at(ch, rng, 3)
    srf = sphere_relative_forms(ch, fp, ff)
    np.testing.assert_allclose(lawson_simons_margin(srf, 1), 1.0, atol=1e-12)


def test_lawson_simons_and_minimal_margin_on_minimal_torus(rng):
    ch = minimal_clifford_torus_in_S3()
    fp, ff = forms_at(ch, rng, 3)
    srf = sphere_relative_forms(ch, fp, ff)
    np.testing.assert_allclose(lawson_simons_margin(srf, 1), -1.0, atol=1e-9)
    margin, resid = minimal_sphere_margin(srf, 1)
    np.testing.assert_allclose(margin, -0.5, atol=1e-9)
    assert resid < 1e-12
    chain = identity_chain(srf, haar_orthogonal(rng, 2, (3, 5)), 1)
    assert np.ptp(chain, axis=-1).max() < 1e-12


def test_minimal_margin_refuses_non_minimal(rng):
    ch = in_sphere(product_of_spheres([(1, 0.6), (1, 0.8)]))
    fp, ff = forms_at(ch, rng)
    srf = sphere_relative_forms(ch, fp, ff)
    with pytest.raises(GeometryError):
        minimal_sphere_margin(srf, 1)


# ---------------------------------------------------------- fields


def test_negative_part_norm_of_constant_field():
    pts = np.zeros((4, 2))
    f = PotentialField("x", pts, np.full(4, 0.5), np.full(4, -3.0))
    assert f.volume == 2.0
    # (sum w |v|^1)^(1/1) with n = 2
    assert negative_part_norm(f, 0.0) == pytest.approx(6.0)
    assert negative_part_norm(f, -3.0) == 0.0
    assert negative_part_norm(f, 1.0, exponent=2) == pytest.approx(np.sqrt(2.0 * 16.0))


def test_potential_field_validates_inputs():
    with pytest.raises(ValueError):
        PotentialField("x", np.zeros((2, 1)), np.array([1.0, 0.0]), np.zeros(2))
    with pytest.raises(ValueError):
        PotentialField("x", np.zeros((2, 1)), np.ones(2), np.array([0.0, np.nan]))


def test_potential_field_and_refinement_on_ellipsoid():
    ch = ellipsoid([1.0, 1.0, 1.5])
    grid = GridSpec.for_chart(ch, 16)
    field = potential_field(ch, grid, "thm5A", q=1)
    assert field.values.shape == (grid.size,)
    lo, where = refined_extremum(ch, grid, field, "min")
    assert lo <= field.values.min() + 1e-15
    assert field.to_csv().splitlines()[0] == "u1,u2,weight,value"
    with pytest.raises(ValueError):
        evaluate_field(ch, "nope", grid.points()[:2])
    with pytest.raises(GeometryError):
        evaluate_field(ch, "lawson_simons", grid.points()[:2])


def test_optimizer_settings_change_nothing_for_exact_cases(rng):
    _, ff = forms_at(sphere(3), rng, 2)
    a = hpq(ff, 1.0, 1, OptimizerSettings(seed=1)).value
    b = hpq(ff, 1.0, 1, OptimizerSettings(seed=7, n_starts=3)).value
    np.testing.assert_allclose(a, b, atol=1e-10)
