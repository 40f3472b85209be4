import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from follmerlab.coefficients import (
    BASE,
    complexity_estimate,
    compute_base_constants,
    compute_bayes_constants,
    compute_manifold_constants,
    log_prefactor,
    rectified_kernel_sups,
    theoretical_w2_bound,
)
from follmerlab.config import load_target
from follmerlab.errors import DomainError
from follmerlab.targets import GaussianTailTarget, cosine_tail, zero_tail


def gaussian_1d(a, c):
    return GaussianTailTarget([[a]], [[c]], tail=zero_tail())


def test_invariant_target_has_unit_kernel_and_zero_constants():
    coeffs = compute_base_constants(load_target("gaussian_iso"))
    assert coeffs.K == pytest.approx(1.0)
    for name in ("K0", "K1", "K2", "K3", "K4", "K5", "K6", "K7", "K9"):
        assert getattr(coeffs, name) == pytest.approx(0.0, abs=1e-12), name


@given(a=st.floats(0.1, 10.0), c=st.floats(0.1, 10.0))
@settings(max_examples=40, deadline=None)
def test_scalar_kernel_sups_match_monotone_endpoints(a, c):
    # a / (a t^2 + c (1 - t^2)) is monotone in t, so its sup sits at t = 0 or t = 1.
    coeffs = compute_base_constants(gaussian_1d(a, c))
    assert coeffs.K == pytest.approx(max(1.0, a / c), rel=1e-12)
    assert coeffs.K2 == pytest.approx(abs(a - c) / min(a, c), rel=1e-12)


def test_dense_path_agrees_with_eigenbasis_path():
    target = GaussianTailTarget(np.diag([0.5, 2.0]), np.diag([1.0, 1.5]),
                                tail=cosine_tail(0.3, 1.2))
    fast = compute_base_constants(target)
    dense = compute_base_constants(target, dense=True)
    for name, value in fast.values().items():
        assert dense.values()[name] == pytest.approx(value, rel=1e-9, abs=1e-12), name


def test_cosine_tail_constants_follow_sup_norms():
    target = load_target("cosine_tail")
    coeffs = compute_base_constants(target)
    # A = 1.5 I, C = I: K = 1.5, and the cosine remainder has
    # |grad h| <= a w sqrt(d) and |hess h| <= a w^2.
    a, w, d = 0.3, 1.5, 2
    g, hh = a * w * math.sqrt(d), a * w * w
    assert coeffs.K == pytest.approx(1.5)
    assert coeffs.K0 == pytest.approx(1.5 * g)
    assert coeffs.K1 == pytest.approx(1.5**2 * (hh + g * g))
    assert coeffs.is_valid()


def test_bound_matches_independent_formula():
    coeffs = compute_base_constants(load_target("gaussian_narrow_1d"))
    h, eps, M0 = 0.05, 0.01, 0.25
    lp = 0.5 * (coeffs.K1 + coeffs.K2 + coeffs.K8)
    expected = math.exp(lp) * (math.sqrt(3) * (coeffs.K5 * math.sqrt(M0) + coeffs.K9) * h
                               + 2 * eps)
    assert theoretical_w2_bound(coeffs, h, eps, M0).value == pytest.approx(expected, rel=1e-12)
    assert log_prefactor(coeffs) == pytest.approx(lp)


@given(h1=st.floats(0.0, 1.0), h2=st.floats(0.0, 1.0), eps=st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_bound_is_affine_in_step_and_eps(h1, h2, eps):
    coeffs = compute_base_constants(load_target("gaussian_narrow_1d"))
    b = lambda h, e: theoretical_w2_bound(coeffs, h, e, 0.25).value  # noqa: E731
    assert b(0.0, 0.0) == 0.0
    lo, hi = sorted((h1, h2))
    assert b(lo, eps) <= b(hi, eps) + 1e-15
    assert b(h1, eps) == pytest.approx(b(h1, 0.0) + b(0.0, eps), rel=1e-12, abs=1e-15)


def test_bound_overflow_keeps_finite_log():
    coeffs = compute_manifold_constants(1.0, 0.01)
    report = theoretical_w2_bound(coeffs, 0.1, 0.0, 1.0)
    assert report.value == math.inf
    assert math.isfinite(report.log_value)


def test_bound_rejects_bad_arguments():
    coeffs = compute_base_constants(load_target("gaussian_narrow_1d"))
    with pytest.raises(DomainError):
        theoretical_w2_bound(coeffs, 1.5, 0.0, 1.0)
    with pytest.raises(DomainError):
        theoretical_w2_bound(coeffs, 0.1, -1.0, 1.0)
    with pytest.raises(DomainError):
        coeffs.with_k8(-1.0)


@pytest.mark.parametrize("eps0", [0.5, 0.1, 0.02])
def test_complexity_estimate_is_the_smallest_admissible_n(eps0):
    coeffs = compute_base_constants(load_target("gaussian_narrow_1d"))
    M0 = 0.25
    est = complexity_estimate(coeffs, M0, eps0)
    # Independent closed form: the bound is exp(L) sqrt(3) (K5 sqrt(M0) + K9) / N.
    rate = math.exp(log_prefactor(coeffs)) * math.sqrt(3) * (coeffs.K5 * math.sqrt(M0)
                                                              + coeffs.K9)
    assert est.N == max(1, math.ceil(rate / eps0 - 1e-12))
    assert theoretical_w2_bound(coeffs, 1.0 / est.N, 0.0, M0).value <= eps0


def test_complexity_of_invariant_target_is_one_step():
    coeffs = compute_base_constants(load_target("gaussian_iso"))
    assert complexity_estimate(coeffs, 2.0, 1e-6).N == 1


def test_manifold_constants_reject_bad_delta_and_recompute_k9():
    with pytest.raises(DomainError):
        compute_manifold_constants(1.0, 0.0)
    with pytest.raises(DomainError):
        compute_manifold_constants(-1.0, 0.5)
    coeffs = compute_manifold_constants(2.0, 0.3)
    s2 = 1 - 0.7**2
    assert coeffs.K0 == pytest.approx(2.0 / s2)
    assert coeffs.K1 == pytest.approx(3 * (2.0 / s2) ** 2)
    assert coeffs.K9 == pytest.approx(coeffs.k9_recomputed())


def test_bayes_constants_have_trivial_envelope():
    coeffs = compute_bayes_constants(load_target("bayes_linear"))
    assert coeffs.K == 1.0
    assert coeffs.K2 == coeffs.K3 == coeffs.K4 == 0.0
    assert coeffs.K9 == pytest.approx(coeffs.k9_recomputed())
    assert coeffs.variant != BASE


@given(a=st.floats(0.05, 20.0))
@settings(max_examples=30, deadline=None)
def test_rectified_kernel_sups_dominate_a_fine_grid(a):
    k_hat, k2_hat = rectified_kernel_sups(np.array([a]))
    t = np.linspace(0.0, 1.0, 20001)
    ahat = a * t * t + (1 - t) ** 2
    assert k_hat >= np.max(a / ahat) * (1 - 1e-3)
    assert k2_hat >= np.max(np.abs(((a + 1) * t - 1) / ahat)) * (1 - 1e-3)
    # Endpoints: t = 0 gives a and 1, t = 1 gives 1 and 1.
    assert k_hat >= max(a, 1.0) - 1e-12
