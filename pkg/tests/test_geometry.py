"""Geometry of the oscillating ellipsoid and the manufactured forcing.

The forcing oracle is independent of the library's ambient-derivative
formulas: it parametrises Gamma(t) by spherical angles (which the flow
preserves) and evaluates the Laplace-Beltrami operator in the metric
tensor form (1/sqrt g) d_i(sqrt g g^ij d_j u) by central differences.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from esfem.geometry import (
    GeometryError,
    SurfaceSpec,
    closest_point,
    coefficient_A,
    coefficient_A_prime,
    exact_solution,
    exact_solution_surface_gradient,
    flow_map,
    level_set,
    manufactured_rhs_f,
    material_velocity,
    normal_projection_curvature,
    surface_operators,
)

from conftest import random_surface_points

SPEC = SurfaceSpec()


# -- parametric oracle ------------------------------------------------------

def _param_point(theta, phi, t):
    return np.stack([np.sqrt(SPEC.a(t)) * np.sin(theta) * np.cos(phi),
                     np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)


def _metric(theta, phi, t):
    ra = np.sqrt(SPEC.a(t))
    xt = np.stack([ra * np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), -np.sin(theta)], -1)
    xp = np.stack([-ra * np.sin(theta) * np.sin(phi), np.sin(theta) * np.cos(phi), np.zeros_like(theta)], -1)
    return np.stack([np.stack([np.sum(xt * xt, -1), np.sum(xt * xp, -1)], -1),
                     np.stack([np.sum(xp * xt, -1), np.sum(xp * xp, -1)], -1)], -2)


def _param_grad(u, theta, phi, t, h):
    return np.stack([(u(theta + h, phi, t) - u(theta - h, phi, t)) / (2 * h),
                     (u(theta, phi + h, t) - u(theta, phi - h, t)) / (2 * h)], -1)


def _flux(u, theta, phi, t, h):
    g = _metric(theta, phi, t)
    ginv = np.linalg.inv(g)
    sq = np.sqrt(np.linalg.det(g))
    return sq[..., None] * np.einsum("...ij,...j->...i", ginv, _param_grad(u, theta, phi, t, h))


def oracle_laplace_beltrami(u, theta, phi, t, h=1e-4):
    sq = np.sqrt(np.linalg.det(_metric(theta, phi, t)))
    d_theta = (_flux(u, theta + h, phi, t, h)[..., 0] - _flux(u, theta - h, phi, t, h)[..., 0]) / (2 * h)
    d_phi = (_flux(u, theta, phi + h, t, h)[..., 1] - _flux(u, theta, phi - h, t, h)[..., 1]) / (2 * h)
    return (d_theta + d_phi) / sq


def oracle_grad_sq(u, theta, phi, t, h=1e-5):
    ginv = np.linalg.inv(_metric(theta, phi, t))
    du = _param_grad(u, theta, phi, t, h)
    return np.einsum("...i,...ij,...j->...", du, ginv, du)


def oracle_f(theta, phi, t, h=1e-4, ht=1e-5):
    def u(th, ph, tt):
        x = _param_point(th, ph, tt)
        return np.exp(-6 * tt) * x[..., 0] * x[..., 1]

    uv = u(theta, phi, t)
    material = (u(theta, phi, t + ht) - u(theta, phi, t - ht)) / (2 * ht)

    def log_area(tt):
        return 0.5 * np.log(np.linalg.det(_metric(theta, phi, tt)))

    div_v = (log_area(t + ht) - log_area(t - ht)) / (2 * ht)
    lap = oracle_laplace_beltrami(u, theta, phi, t, h)
    diffusion = coefficient_A(uv) * lap + coefficient_A_prime(uv) * oracle_grad_sq(u, theta, phi, t)
    return material + uv * div_v - diffusion


# -- level set and flow -----------------------------------------------------

@pytest.mark.parametrize("x, t, expected", [
    ((1, 0, 0), 0.0, 0.0),
    ((0, 0, 2), 0.37, 3.0),
    ((np.sqrt(1.25), 0, 0), 0.25, 0.0),
])
def test_level_set_values(x, t, expected):
    assert level_set(SPEC, np.array(x, float), t) == pytest.approx(expected, abs=1e-15)


def test_a_period_and_amplitude():
    assert SPEC.a(0.25) == pytest.approx(1.25, abs=1e-15)
    assert SPEC.a(0.75) == pytest.approx(0.75, abs=1e-15)
    assert SPEC.a_prime(0.0) == pytest.approx(0.5 * np.pi)
    with pytest.raises(GeometryError):
        SurfaceSpec(amplitude=1.0)


def test_flow_map_examples():
    assert np.allclose(flow_map(SPEC, [1, 0, 0], 0.25), [np.sqrt(1.25), 0, 0], atol=1e-15)
    assert np.allclose(flow_map(SPEC, [0, 1, 0], 0.613), [0, 1, 0], atol=0)
    assert np.allclose(flow_map(SPEC, [1, 0, 0], 1.0), [1, 0, 0], atol=1e-15)


def test_flow_map_rejects_points_off_reference_surface():
    with pytest.raises(GeometryError):
        flow_map(SPEC, [1.1, 0, 0], 0.5)


def test_flow_map_lands_on_surface(rng):
    X, _, _ = random_surface_points(rng, 1000)
    for t in rng.uniform(0, 1, 10):
        assert np.abs(level_set(SPEC, flow_map(SPEC, X, t), t)).max() < 1e-14


def test_velocity_examples():
    assert np.allclose(material_velocity(SPEC, [1, 0, 0], 0.0), [np.pi / 4, 0, 0], atol=1e-15)
    assert np.allclose(material_velocity(SPEC, [0, 0.3, 0.7], 0.4), 0.0)
    assert np.allclose(material_velocity(SPEC, [1, 0, 0], 0.25), 0.0, atol=1e-15)


def test_velocity_is_flow_derivative(rng):
    X, _, _ = random_surface_points(rng, 200)
    h = 1e-6
    for t in (0.1, 0.33, 0.8):
        fd = (flow_map(SPEC, X, t + h) - flow_map(SPEC, X, t - h)) / (2 * h)
        assert np.abs(fd - material_velocity(SPEC, flow_map(SPEC, X, t), t)).max() < 1e-8


# -- normal, projection, curvature -----------------------------------------

def test_unit_sphere_normal_and_curvature():
    d = normal_projection_curvature(SPEC, [1.0, 0, 0], 0.0)
    assert np.allclose(d.normal, [1, 0, 0]) and d.mean_curvature == pytest.approx(2.0)
    d = normal_projection_curvature(SPEC, [0, 0, 1.0], 0.0)
    assert np.allclose(d.normal, [0, 0, 1]) and np.allclose(d.projection, np.diag([1, 1, 0]))


def test_curvature_matches_normal_divergence():
    p = np.array([np.sqrt(1.25), 0, 0])
    h = 1e-5
    div = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        nu_p = normal_projection_curvature(SPEC, p + e, 0.25).normal
        nu_m = normal_projection_curvature(SPEC, p - e, 0.25).normal
        div += (nu_p[i] - nu_m[i]) / (2 * h)
    d = normal_projection_curvature(SPEC, p, 0.25)
    assert np.allclose(d.normal, [1, 0, 0])
    assert d.mean_curvature == pytest.approx(div, abs=1e-6)


def test_point_data_invariants(rng):
    x, _, _ = random_surface_points(rng, 100, t=0.6)
    d = normal_projection_curvature(SPEC, x, 0.6)
    assert np.allclose(np.linalg.norm(d.normal, axis=1), 1, atol=1e-12)
    assert np.abs(d.projection @ d.projection - d.projection).max() < 1e-12
    assert np.abs(np.einsum("nij,nj->ni", d.projection, d.normal)).max() < 1e-12


def test_normal_undefined_at_origin():
    with pytest.raises(GeometryError):
        normal_projection_curvature(SPEC, [0.0, 0, 0], 0.0)


# -- closest point ----------------------------------------------------------

def test_closest_point_examples():
    assert np.allclose(closest_point(SPEC, [2.0, 0, 0], 0.0), [1, 0, 0], atol=1e-14)
    assert np.allclose(closest_point(SPEC, [0, 1.1, 0], 0.25), [0, 1, 0], atol=1e-14)
    p = flow_map(SPEC, np.array([0.6, 0.0, 0.8]), 0.3)
    assert np.allclose(closest_point(SPEC, p, 0.3), p, atol=1e-14)


def test_closest_point_is_orthogonal_projection(rng):
    x, _, _ = random_surface_points(rng, 300, t=0.25)
    d = normal_projection_curvature(SPEC, x, 0.25)
    q = x + rng.uniform(-0.1, 0.1, (300, 1)) * d.normal
    p = closest_point(SPEC, q, 0.25)
    assert np.abs(level_set(SPEC, p, 0.25)).max() < 1e-13
    # q - p is normal at p
    nu = normal_projection_curvature(SPEC, p, 0.25).normal
    r = q - p
    assert np.abs(r - np.sum(r * nu, axis=1)[:, None] * nu).max() < 1e-12
    assert np.abs(closest_point(SPEC, p, 0.25) - p).max() < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.5),
       st.floats(0, 1))
def test_closest_point_idempotent(v, t):
    p = closest_point(SPEC, np.array(v), t)
    assert abs(level_set(SPEC, p, t)) < 1e-12
    assert np.allclose(closest_point(SPEC, p, t), p, atol=1e-10)


# -- coefficient and exact solution ----------------------------------------

def test_coefficient_values():
    assert coefficient_A(0.0) == 0.5
    assert coefficient_A(10.0) > 0.999
    eps = 1e-6
    fd = (coefficient_A(2 + eps) - coefficient_A(2 - eps)) / (2 * eps)
    assert coefficient_A_prime(2.0) == pytest.approx(fd, abs=1e-9)


def test_coefficient_bounds():
    s = np.linspace(-100, 100, 20001)
    a = coefficient_A(s)
    # 1 - exp(-s^2/4)/2 rounds to exactly 1.0 once |s| > ~12
    assert a.min() >= 0.5 and a.max() <= 1.0
    assert coefficient_A(np.linspace(-10, 10, 2001)).max() < 1.0


def test_exact_solution_values():
    r = 1 / np.sqrt(2)
    assert exact_solution([1.0, 0, 0], 0.0) == 0.0
    assert exact_solution([r, r, 0], 0.0) == pytest.approx(0.5)
    assert exact_solution([r, r, 0], 1.0) == pytest.approx(0.00123938, abs=5e-9)


def test_surface_gradient_matches_parametric_derivatives(rng):
    x, theta, phi = random_surface_points(rng, 50, t=0.4, theta_margin=0.3)
    g = exact_solution_surface_gradient(SPEC, x, 0.4)
    h = 1e-6
    for dth, dph in ((h, 0), (0, h)):
        tangent = (_param_point(theta + dth, phi + dph, 0.4) - _param_point(theta - dth, phi - dph, 0.4)) / (2 * h)
        du = (exact_solution(_param_point(theta + dth, phi + dph, 0.4), 0.4)
              - exact_solution(_param_point(theta - dth, phi - dph, 0.4), 0.4)) / (2 * h)
        assert np.allclose(np.sum(g * tangent, axis=1), du, atol=1e-8)


# -- manufactured forcing ---------------------------------------------------

def test_forcing_at_north_pole():
    assert manufactured_rhs_f(SPEC, [0, 0, 1.0], 0.0) == pytest.approx(0.0, abs=1e-15)


def test_forcing_matches_parametric_oracle(rng):
    worst = 0.0
    for t in np.linspace(0.0, 0.95, 20):
        theta = rng.uniform(0.3, np.pi - 0.3, 200)
        phi = rng.uniform(0, 2 * np.pi, 200)
        x = _param_point(theta, phi, t)
        worst = max(worst, np.abs(manufactured_rhs_f(SPEC, x, t) - oracle_f(theta, phi, t)).max())
    assert worst < 1e-5


def test_linear_function_laplace_beltrami(rng):
    c = np.array([0.3, -1.2, 0.7])
    t = 0.3
    _, theta, phi = random_surface_points(rng, 100, t=t, theta_margin=0.3)
    x = _param_point(theta, phi, t)
    _, lap, nu = surface_operators(SPEC, x, t, np.tile(c, (100, 1)), np.zeros((3, 3)))
    H = normal_projection_curvature(SPEC, x, t).mean_curvature
    assert np.allclose(lap, -H * (nu @ c), atol=1e-14)
    oracle = oracle_laplace_beltrami(lambda th, ph, tt: _param_point(th, ph, tt) @ c, theta, phi, t)
    assert np.abs(lap - oracle).max() < 1e-6


def test_forcing_with_constant_coefficient(rng):
    one = lambda s: np.ones_like(np.asarray(s, float))
    zero = lambda s: np.zeros_like(np.asarray(s, float))
    t = 0.7
    _, theta, phi = random_surface_points(rng, 50, t=t, theta_margin=0.3)
    x = _param_point(theta, phi, t)
    f1 = manufactured_rhs_f(SPEC, x, t, one, zero)
    u = lambda th, ph, tt: np.exp(-6 * tt) * _param_point(th, ph, tt)[..., 0] * _param_point(th, ph, tt)[..., 1]
    fa = manufactured_rhs_f(SPEC, x, t)
    # the coefficient only enters through A(u) lap u + A'(u) |grad u|^2
    lap = oracle_laplace_beltrami(u, theta, phi, t)
    gsq = oracle_grad_sq(u, theta, phi, t)
    uv = exact_solution(x, t)
    expected = (coefficient_A(uv) - 1) * lap + coefficient_A_prime(uv) * gsq
    assert np.abs((f1 - fa) - expected).max() < 1e-6
