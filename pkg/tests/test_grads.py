"""Backward kernels of the canonical algebra vs central finite differences."""

import numpy as np
import pytest

from statconv.canonical import CanonicalForm, evaluate, max2, weighted_sum
from statconv.grads import (
    central_diff,
    finite_diff_check,
    max2_backward,
    pack,
    relu_backward,
    sum_backward,
    unpack,
)
from statconv.canonical import _theta_beta


def random_form(rng, m, noise_floor=0.2):
    return CanonicalForm(rng.normal(scale=2.0),
                         rng.normal(scale=1.0, size=m),
                         noise_floor + abs(rng.normal(scale=1.0)))


def max2_with_cache(a, b):
    out, t = max2(a, b)
    theta, beta = _theta_beta(a, b)
    return out, t, theta, beta


# ---------------------------------------------------------------------------
# weighted sum


def test_sum_backward_identity():
    d = CanonicalForm(2.0, [1.0], 1.0)
    out = weighted_sum([d], [1.0])
    for r in range(3):
        basis = np.zeros(3)
        basis[r] = 1.0
        (g,), _ = sum_backward([d], [1.0], out, basis)
        assert g[r] == pytest.approx(1.0)


def test_sum_backward_noise_closed_form():
    # w=2 on noise 3: out noise 6, exact partial w^2 * a_r / out_noise = 2
    d = CanonicalForm(0.0, [1.0], 3.0)
    out = weighted_sum([d], [2.0])
    delta = np.array([0.0, 0.0, 1.0])
    (g,), _ = sum_backward([d], [2.0], out, delta)
    assert g[-1] == pytest.approx(2.0)


def test_sum_backward_vs_finite_differences():
    rng = np.random.default_rng(11)
    ds = [random_form(rng, 2) for _ in range(3)]
    ws = list(rng.normal(size=3))
    report = finite_diff_check("sum", (ds, ws), h=1e-5)
    assert not report.degenerate
    assert report.max_rel_error <= 1e-6


def test_sum_backward_zero_output_noise():
    d = CanonicalForm(1.0, [1.0], 0.0)
    out = weighted_sum([d], [1.0])
    (g,), (gw,) = sum_backward([d], [1.0], out, np.array([0.0, 0.0, 1.0]))
    assert g[-1] == 0.0 and gw == 0.0


# ---------------------------------------------------------------------------
# two-input max


def test_max2_backward_deterministic_dominance():
    a = CanonicalForm(5.0, [], 0.0)
    b = CanonicalForm(0.0, [], 0.0)
    jac = max2_backward(a, b, *max2_with_cache(a, b))
    assert jac.degenerate
    np.testing.assert_array_equal(jac.wrt_a, np.eye(2))
    np.testing.assert_array_equal(jac.wrt_b, np.zeros((2, 2)))


def test_max2_backward_symmetric_pair():
    # i.i.d.-in-distribution pair on disjoint basis: Phi(0) = 0.5 both sides
    a = CanonicalForm(1.0, [1.0, 0.0], 0.3)
    b = CanonicalForm(1.0, [0.0, 1.0], 0.3)
    jac = max2_backward(a, b, *max2_with_cache(a, b))
    assert jac.wrt_a[0, 0] == pytest.approx(0.5)
    assert jac.wrt_b[0, 0] == pytest.approx(0.5)


def test_max2_backward_swap_symmetry():
    rng = np.random.default_rng(5)
    a, b = random_form(rng, 3), random_form(rng, 3)
    jab = max2_backward(a, b, *max2_with_cache(a, b))
    jba = max2_backward(b, a, *max2_with_cache(b, a))
    np.testing.assert_array_equal(jab.wrt_a, jba.wrt_b)
    np.testing.assert_array_equal(jab.wrt_b, jba.wrt_a)


def test_max2_backward_vs_finite_differences():
    rng = np.random.default_rng(17)
    checked = 0
    while checked < 5:
        a, b = random_form(rng, 3), random_form(rng, 3)
        report = finite_diff_check("max2", (a, b), h=1e-5)
        if report.degenerate:
            continue
        assert report.max_rel_error <= 1e-4, \
            f"worst partial {report.labels[int(report.rel_errors.argmax())]}"
        checked += 1


def test_max2_backward_chain_rule_through_evaluate():
    rng = np.random.default_rng(23)
    a, b = random_form(rng, 3), random_form(rng, 3)
    x = rng.standard_normal(3)
    out, t, theta, beta = max2_with_cache(a, b)
    jac = max2_backward(a, b, out, t, theta, beta)
    delta = np.concatenate(([1.0], x, [0.0]))  # d evaluate / d out params
    analytic = jac.wrt_a.T @ delta

    def f(av):
        res, _ = max2(unpack(av), b)
        return evaluate(res, x)

    numeric = central_diff(f, pack(a), h=1e-5)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)


# ---------------------------------------------------------------------------
# relu (max against constant zero)


def test_relu_backward_saturated_positive():
    d = CanonicalForm(10.0, [], 1.0)
    J = relu_backward(d, *max2_with_cache(d, CanonicalForm(0.0, [], 0.0)))
    np.testing.assert_allclose(J, np.eye(2), atol=1e-8)


def test_relu_backward_saturated_negative():
    d = CanonicalForm(-10.0, [], 1.0)
    J = relu_backward(d, *max2_with_cache(d, CanonicalForm(0.0, [], 0.0)))
    np.testing.assert_allclose(J, np.zeros((2, 2)), atol=1e-8)


def test_relu_backward_vs_finite_differences():
    d = CanonicalForm(0.0, [1.0], 0.5)
    report = finite_diff_check("relu", (d,), h=1e-5)
    assert not report.degenerate
    assert report.max_rel_error <= 1e-4


# ---------------------------------------------------------------------------
# harness behaviour


def test_finite_diff_check_flags_degenerate_max():
    a = CanonicalForm(1.0, [1.0], 0.0)
    report = finite_diff_check("max2", (a, a), h=1e-5)
    assert report.degenerate
    assert report.max_rel_error == 0.0


def test_finite_diff_check_step_domain():
    d = CanonicalForm(1.0, [1.0], 0.5)
    with pytest.raises(ValueError):
        finite_diff_check("relu", (d,), h=1e-2)
    with pytest.raises(ValueError):
        finite_diff_check("nope", (d,))


def test_max2_twenty_seed_suite():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        a, b = random_form(rng, 3), random_form(rng, 3)
        report = finite_diff_check("max2", (a, b), h=1e-5)
        if report.degenerate:
            continue
        worst = max(worst, report.max_rel_error)
    assert worst <= 1e-4
