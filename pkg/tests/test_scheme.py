import math

import numpy as np
import pytest

from curveflow.curve import PolygonalCurve, frames, perimeter
from curveflow.errors import ConfigError, CurvatureSignViolation, SingularNodalNormal
from curveflow.scheme import (
    FlowParams,
    PerSegment,
    arc_derivative,
    check_curvature_sign,
    half_step_normal,
    kappa_power,
    lambda_discrete,
    mass_lumped_inner,
    power_mean,
    power_mean_inequality_holds,
    power_mean_pairs,
    project_curvature,
    residual,
)
from curveflow.shapes import ShapeSpec, generate, regular_polygon
from oracles import brute_inner, brute_lambda, brute_residual, perturbed_ellipse

SQUARE = PolygonalCurve(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]))
REGIMES = [(1, -1), (2, -1), (1 / 3, -1), (-1, 1), (-2, 1), (-1 / 3, 1)]


def test_params_gate():
    with pytest.raises(ConfigError):
        FlowParams(1.0, 1.0, 0.1)
    with pytest.raises(ConfigError):
        FlowParams(0.0, -1.0, 0.1)
    with pytest.raises(ConfigError):
        FlowParams(1.0, -1.0, 0.0)
    assert FlowParams(1.0, -1.0, 0.1).with_tau(0.2).tau == 0.2


def test_inner_of_ones_is_perimeter():
    c = generate(ShapeSpec("ellipse", 32))
    assert math.isclose(mass_lumped_inner(1.0, 1.0, c), perimeter(c), rel_tol=1e-14)


def test_inner_nodal_ramp_on_square():
    u = np.arange(4.0)
    # one-sided limit pairs on the four unit edges: (0,1) (1,2) (2,3) (3,0)
    hand = 0.5 * ((0 + 1) + (1 + 4) + (4 + 9) + (9 + 0))
    assert mass_lumped_inner(u, u, SQUARE) == hand
    assert mass_lumped_inner(u, u, SQUARE) == brute_inner(u, u, SQUARE.nodes)


def test_inner_with_constant_per_segment_factor():
    c = generate(ShapeSpec("ellipse", 20))
    u = np.linspace(-1, 2, 20)
    got = mass_lumped_inner(u, PerSegment(np.full(20, 2.5)), c)
    assert math.isclose(got, 2.5 * mass_lumped_inner(u, 1.0, c), rel_tol=1e-14)


def test_inner_random_against_brute_force():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(3, 40))
        nodes = perturbed_ellipse(rng, n, scale=0.05)
        c = PolygonalCurve(nodes)
        u = rng.standard_normal((n, 2))
        v = rng.standard_normal(n)
        s = PerSegment(rng.standard_normal((n, 2)))
        assert math.isclose(mass_lumped_inner(u, s, c), brute_inner(u, s.values, nodes, v_per_edge=True),
                            rel_tol=1e-12, abs_tol=1e-13)
        assert math.isclose(mass_lumped_inner(v, v, c), brute_inner(v, v, nodes), rel_tol=1e-13)


def test_inner_length_mismatch():
    with pytest.raises(ValueError):
        mass_lumped_inner(np.ones(3), 1.0, SQUARE)


def test_arc_derivative():
    t, _, _ = frames(SQUARE)
    assert np.allclose(arc_derivative(SQUARE, SQUARE).values, t)
    assert np.all(arc_derivative(np.full(4, 3.0), SQUARE).values == 0.0)
    ramp = np.array([0.0, 1.0, 2.0, 3.0])
    assert np.array_equal(arc_derivative(ramp, SQUARE).values, [1.0, 1.0, 1.0, -3.0])


def test_half_step_normal():
    c = generate(ShapeSpec("ellipse", 16))
    _, n, _ = frames(c)
    assert np.allclose(half_step_normal(c, c), n, atol=1e-15)
    assert np.allclose(half_step_normal(c, c.scaled(2.0)), 1.5 * n, atol=1e-14)
    rng = np.random.default_rng(2)
    new = PolygonalCurve(c.nodes + 0.01 * rng.standard_normal(c.nodes.shape))
    ho = np.roll(c.nodes, -1, axis=0) - c.nodes
    hn = np.roll(new.nodes, -1, axis=0) - new.nodes
    s = ho + hn
    direct = np.column_stack([-s[:, 1], s[:, 0]]) / (2 * np.hypot(ho[:, 0], ho[:, 1]))[:, None]
    assert np.allclose(half_step_normal(c, new), direct, atol=1e-15)


def test_lambda_constant_fields():
    c = generate(ShapeSpec("ellipse", 24))
    assert math.isclose(lambda_discrete(np.full(24, 2.0), c, FlowParams(1, -1, 1)), -2.0, rel_tol=1e-14)
    for alpha, beta in REGIMES:
        assert math.isclose(lambda_discrete(np.ones(24), c, FlowParams(alpha, beta, 1)), beta, rel_tol=1e-14)


def test_lambda_random_against_brute_force():
    rng = np.random.default_rng(5)
    c = generate(ShapeSpec("ellipse", 30))
    for alpha, beta in REGIMES:
        kappa = rng.uniform(0.2, 3.0, 30)
        got = lambda_discrete(kappa, c, FlowParams(alpha, beta, 1))
        assert math.isclose(got, brute_lambda(kappa, c.nodes, alpha, beta), rel_tol=1e-13)


def test_curvature_sign_assumption():
    check_curvature_sign([-1.0, 2.0], 1.0)
    check_curvature_sign([0.0, 2.0], 2.0)
    with pytest.raises(CurvatureSignViolation):
        check_curvature_sign([0.0, 2.0], -1.0)
    with pytest.raises(CurvatureSignViolation):
        check_curvature_sign([-0.1, 2.0], 1 / 3)
    with pytest.raises(CurvatureSignViolation):
        lambda_discrete(np.array([1.0, -1.0, 1.0, 1.0]), SQUARE, FlowParams(2, -1, 1))
    off = FlowParams(2, -1, 1, curvature_sign_mode="off")
    assert np.isfinite(lambda_discrete(np.array([1.0, -1.0, 1.0, 1.0]), SQUARE, off))


def test_kappa_power():
    k = np.array([0.0, 0.5, 2.0])
    assert np.array_equal(kappa_power(k, 1 / 3)[0:1], [0.0])
    assert np.allclose(kappa_power(k[1:], -1 / 3), k[1:] ** (-1 / 3), rtol=1e-15)
    assert np.array_equal(kappa_power(np.array([-2.0]), 2.0), [4.0])


def test_regular_polygon_residual_vanishes():
    c = regular_polygon(64)
    kappa = project_curvature(c)
    assert np.ptp(kappa) < 1e-12
    for alpha, beta in REGIMES:
        res = residual(c, kappa, c, FlowParams(alpha, beta, 1e-3))
        assert res.max_abs() < 1e-12


def test_residual_velocity_term_scales_with_inverse_tau():
    rng = np.random.default_rng(3)
    old = generate(ShapeSpec("ellipse", 16))
    new = PolygonalCurve(old.nodes + 0.01 * rng.standard_normal(old.nodes.shape))
    kappa = rng.uniform(0.5, 1.5, 16)
    r1 = residual(new, kappa, old, FlowParams(1, -1, 0.1)).scalar_block
    r2 = residual(new, kappa, old, FlowParams(1, -1, 0.2)).scalar_block
    r_inf = residual(new, kappa, old, FlowParams(1, -1, 1e300)).scalar_block
    assert np.allclose(r2 - r_inf, 0.5 * (r1 - r_inf), rtol=1e-12, atol=1e-14)


def test_residual_random_against_brute_force():
    rng = np.random.default_rng(7)
    for alpha, beta in REGIMES:
        n = int(rng.integers(5, 25))
        old = perturbed_ellipse(rng, n, scale=0.02)
        new = old + 0.01 * rng.standard_normal(old.shape)
        kappa = rng.uniform(0.3, 2.0, n)
        tau = 10.0 ** rng.uniform(-4, -1)
        res = residual(PolygonalCurve(new), kappa, PolygonalCurve(old), FlowParams(alpha, beta, tau))
        s, v = brute_residual(new, kappa, old, alpha, beta, tau)
        assert np.allclose(res.scalar_block, s, rtol=1e-11, atol=1e-11 * np.abs(s).max())
        assert np.allclose(res.vector_block, v, rtol=1e-11, atol=1e-11 * np.abs(v).max())
        flat = res.flat().reshape(-1, 3)
        assert np.array_equal(flat[:, 2], res.scalar_block)


def test_projected_curvature_of_regular_polygons():
    values = []
    for n in (16, 64, 256):
        k = project_curvature(regular_polygon(n))
        assert np.ptp(k) < 1e-12 * k.mean()
        values.append(k[0])
    assert values[0] > values[1] > values[2] > 1.0
    assert abs(values[2] - 1.0) < 1e-4


def test_projected_curvature_singular():
    # node 2 folds edge (0,0)->(1,0) back onto itself: the weighted normals cancel
    fold = PolygonalCurve(np.array([[0.0, 1.0], [0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(SingularNodalNormal):
        project_curvature(fold)


def test_projected_curvature_second_order_on_ellipse():
    errs = []
    for n in (32, 64, 128):
        c = generate(ShapeSpec("ellipse", n))
        theta = np.arctan2(c.nodes[:, 1], c.nodes[:, 0] / 3.0)
        exact = 3.0 / (9.0 * np.sin(theta) ** 2 + np.cos(theta) ** 2) ** 1.5
        errs.append(np.abs(project_curvature(c) - exact).max())
    rates = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(r > 1.8 for r in rates), rates


def test_power_mean_pairs():
    assert power_mean_pairs(1) == [] and power_mean_pairs(-1) == []
    for alpha in (2.0, 1 / 3, -2.0, -1 / 3):
        for _, p, q in power_mean_pairs(alpha):
            assert p < q
    assert power_mean([1, 1], [2.0, 2.0], 3.0) == pytest.approx(2.0)


def test_power_mean_inequality_random():
    rng = np.random.default_rng(13)
    for alpha in (2.0, 1 / 3, -2.0, -1 / 3):
        for var, p, q in power_mean_pairs(alpha):
            for _ in range(200):
                w = rng.uniform(0, 1, 8)
                k = rng.uniform(0.01, 5, 8)
                vals = kappa_power(k, alpha) if var == "kappa^alpha" else k
                assert power_mean_inequality_holds(w, vals, p, q)
    with pytest.raises(ValueError):
        power_mean_inequality_holds([1.0], [1.0], 2.0, 1.0)
