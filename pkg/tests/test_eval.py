import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from densities import random_density_pair
from levysbtm.eval import (
    BoundViolationError,
    DegenerateSampleError,
    EmptySampleError,
    check_l2_kl_bound,
    convergence_study,
    fit_order,
    histogram,
    kde,
    kl_divergence_binned,
    kl_from_probs,
    marginal_tv,
    tv_distance,
)


def test_histogram_probabilities_and_right_closed_edge():
    x = np.array([0.0, 0.5, 1.0, 1.0])
    h = histogram(x, [0.0], [1.0], 4)
    assert h.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert h.probs[-1] == 0.5


def test_tv_identical_and_disjoint():
    a = np.random.default_rng(0).normal(size=500)
    assert tv_distance(a, a) == 0.0
    assert tv_distance(np.zeros(10), np.ones(10), 10) == 2.0


def test_tv_empty_input():
    with pytest.raises(EmptySampleError):
        tv_distance(np.array([]), np.ones(3))


def test_tv_same_law_noise_floor():
    vals = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        vals.append(tv_distance(rng.normal(size=4000), rng.normal(size=4000), 50))
    assert np.mean(np.array(vals) <= 0.15) >= 0.99


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0), st.floats(-5, 5))
def test_tv_symmetric_and_affine_invariant(seed, scale, shift):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(200, 2)), rng.normal(0.3, 1.2, size=(150, 2))
    t = tv_distance(a, b, 12)
    assert t == tv_distance(b, a, 12)
    assert 0.0 <= t <= 2.0
    assert tv_distance(scale * a + shift, scale * b + shift, 12) == pytest.approx(t, abs=1e-12)


def test_marginal_tv_per_coordinate():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(1000, 2))
    b = a.copy()
    b[:, 1] += 10
    m = marginal_tv(a, b, 20)
    assert m[0] == 0.0 and m[1] == 2.0


def test_kde_single_sample_is_kernel():
    grid = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(kde(np.array([0.0]), 1.0, grid), norm.pdf(grid), rtol=1e-13)


def test_kde_integrates_to_one_and_fits_normal():
    x = np.random.default_rng(2).normal(size=4000)
    grid = np.linspace(-6, 6, 601)
    f = kde(x, "scott", grid)
    assert np.trapezoid(f, grid) == pytest.approx(1.0, abs=1e-3)
    assert np.max(np.abs(f - norm.pdf(grid))) <= 0.05


def test_kde_bimodal():
    grid = np.linspace(-2, 2, 401)
    f = kde(np.array([-1.0, 1.0]), 0.1, grid)
    peaks = grid[1:-1][(f[1:-1] > f[:-2]) & (f[1:-1] > f[2:])]
    np.testing.assert_allclose(peaks, [-1.0, 1.0], atol=0.011)


def test_kde_degenerate_samples():
    with pytest.raises(DegenerateSampleError):
        kde(np.zeros(10), "scott", np.zeros(1))


def test_kl_closed_forms():
    assert kl_from_probs([1.0, 0.0], [0.5, 0.5], 1e-12) == pytest.approx(math.log(2), rel=1e-14)
    a = np.random.default_rng(3).normal(size=300)
    assert kl_divergence_binned(a, a) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_pinsker_on_random_histograms(seed):
    rng = np.random.default_rng(seed)
    pa, pb = rng.dirichlet(np.ones(20)), rng.dirichlet(np.ones(20))
    kl = kl_from_probs(pa, pb, 1e-300)
    tv = np.abs(pa - pb).sum()
    assert kl >= 0.0
    assert tv**2 / 4 <= kl / 2 + 1e-12


def test_l2_kl_bound_trivial_and_tilted():
    x = np.linspace(0, 1, 200, endpoint=False)
    p = np.ones_like(x)
    lhs, rhs, holds = check_l2_kl_bound(p, p, 2.0, 1 / 200)
    assert lhs == 0.0 and rhs == 0.0 and holds
    q = 1 + 0.1 * np.sin(2 * np.pi * x)
    assert check_l2_kl_bound(p, q, 2 * q.max(), 1 / 200)[2]


def test_l2_kl_bound_rejects_tau_violation():
    with pytest.raises(BoundViolationError):
        check_l2_kl_bound(np.array([3.0]), np.array([1.0]), 2.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_l2_kl_bound_property(seed):
    p, q, cell = random_density_pair(np.random.default_rng(seed))
    tau = 1.01 * max(p.max(), q.max())
    assert check_l2_kl_bound(p, q, tau, cell)[2]


def test_fit_order_needs_three_and_detects_degenerate():
    with pytest.raises(ValueError):
        fit_order([0.1, 0.05], [1.0, 0.5])
    assert fit_order([0.1, 0.05, 0.025], [0.0, 0.0, 0.0]).degenerate
    assert fit_order([0.1, 0.05, 0.025], [4.0, 2.0, 1.0]).slope == pytest.approx(1.0, abs=1e-12)


def test_convergence_study_zero_velocity_is_degenerate():
    res = convergence_study([0.02, 0.01, 0.005], T=0.2, n_particles=100, zero_velocity=True)
    assert res.degenerate and all(e == 0.0 for e in res.errors)


def test_convergence_study_error_doubles():
    res = convergence_study([0.02, 0.01, 0.005, 0.0025], n_particles=500)
    ratios = [a / b for a, b in zip(res.errors, res.errors[1:])]
    assert all(1.6 <= r <= 2.4 for r in ratios)
