import csv
import itertools
import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad
from scipy.stats import norm

from follmerlab.coefficients import compute_base_constants
from follmerlab.config import load_target
from follmerlab.errors import DomainError
from follmerlab.metrics import (
    ProbeSpec,
    mc_floor,
    regularity_audit,
    sliced_w2,
    w2_empirical_to_gaussian_1d,
    w2_exact,
    w2_gaussian_closed_form,
)
from follmerlab.scorefield import VelocityField


def brute_force_w2(a, b):
    n = a.shape[0]
    best = min(sum(float(np.sum((a[i] - b[p[i]]) ** 2)) for i in range(n))
               for p in itertools.permutations(range(n)))
    return math.sqrt(best / n)


coords = st.floats(-5.0, 5.0, allow_nan=False, allow_infinity=False)


@given(n=st.integers(1, 6), d=st.integers(1, 3), data=st.data())
@settings(max_examples=60, deadline=None)
def test_exact_w2_matches_permutation_search(n, d, data):
    a = data.draw(arrays(float, (n, d), elements=coords))
    b = data.draw(arrays(float, (n, d), elements=coords))
    result = w2_exact(a, b)
    assert result.W2 == pytest.approx(brute_force_w2(a, b), rel=1e-9, abs=1e-9)
    assert sorted(result.assignment) == list(range(n))


def test_exact_w2_on_seven_points():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((7, 2)), rng.standard_normal((7, 2)) + 1.0
    assert w2_exact(a, b).W2 == pytest.approx(brute_force_w2(a, b), rel=1e-12)


@given(n=st.integers(2, 40), shift=arrays(float, (2,), elements=coords), seed=st.integers(0, 99))
@settings(max_examples=30, deadline=None)
def test_exact_w2_of_a_translate_is_the_shift(n, shift, seed):
    a = np.random.default_rng(seed).standard_normal((n, 2))
    assert w2_exact(a, a + shift).W2 == pytest.approx(float(np.linalg.norm(shift)), abs=1e-9)


@given(n=st.integers(2, 40), seed=st.integers(0, 99))
@settings(max_examples=30, deadline=None)
def test_sliced_w2_never_exceeds_exact_w2(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, 3)), 1.5 * rng.standard_normal((n, 3))
    assert sliced_w2(a, b, projections=32, seed=seed).value <= w2_exact(a, b).W2 + 1e-12


def test_exact_w2_rejects_bad_batches():
    with pytest.raises(DomainError):
        w2_exact(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(DomainError):
        w2_exact(np.zeros((3, 2)), np.zeros((3, 1)))
    with pytest.raises(DomainError):
        w2_exact(np.zeros((9, 2)), np.zeros((9, 2)), cap=8)
    with pytest.raises(DomainError):
        sliced_w2(np.zeros((3, 2)), np.zeros((3, 2)), projections=4)


def test_gaussian_closed_form_one_dimension():
    assert w2_gaussian_closed_form([1.0], [[4.0]], [-1.0], [[1.0]]) == pytest.approx(
        math.sqrt(4.0 + 1.0))


def test_gaussian_closed_form_matches_sqrtm_formula():
    rng = np.random.default_rng(3)
    L1, L2 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    S1, S2 = L1 @ L1.T + 0.1 * np.eye(3), L2 @ L2.T + 0.1 * np.eye(3)
    m1, m2 = rng.standard_normal(3), rng.standard_normal(3)
    r = scipy.linalg.sqrtm(S1).real
    tr = np.trace(S1 + S2 - 2 * scipy.linalg.sqrtm(r @ S2 @ r).real)
    expected = math.sqrt(float(np.sum((m1 - m2) ** 2) + tr))
    assert w2_gaussian_closed_form(m1, S1, m2, S2) == pytest.approx(expected, rel=1e-9)
    assert w2_gaussian_closed_form(m1, S1, m1, S1) == pytest.approx(0.0, abs=1e-6)


def test_empirical_to_gaussian_matches_quantile_integral():
    x = np.array([-1.3, 0.2, 0.4, 2.5, -0.1])
    mean, sd = 0.3, 1.7
    xs = np.sort(x)
    n = xs.size
    total = 0.0
    for i in range(n):
        total += quad(lambda u: (xs[i] - (mean + sd * norm.ppf(u))) ** 2, i / n, (i + 1) / n,
                      limit=200)[0]
    assert w2_empirical_to_gaussian_1d(x, mean, sd * sd) == pytest.approx(math.sqrt(total),
                                                                          rel=1e-7)


def test_empirical_to_gaussian_shrinks_with_sample_size():
    q = norm.ppf((np.arange(4000) + 0.5) / 4000)
    assert w2_empirical_to_gaussian_1d(q, 0.0, 1.0) < 0.01
    assert w2_empirical_to_gaussian_1d(q, 0.5, 1.0) == pytest.approx(0.5, abs=0.01)


def test_mc_floor_formula():
    assert mc_floor(4.0, 100) == pytest.approx(6.0 * 0.2)
    assert mc_floor(4.0, 100, c=3.0) == pytest.approx(0.6)


# regularity audit -------------------------------------------------------------


def test_audit_passes_with_computed_constants_and_writes_csv(tmp_path):
    target = load_target("gaussian_offset_1d")
    coeffs = compute_base_constants(target)
    spec = ProbeSpec(times=(0.0, 0.25, 0.5, 0.9), n_points=16, budget_steps=16)
    report = regularity_audit(VelocityField(target), coeffs, spec)
    assert report.passed
    assert report.pass_rate() == 1.0
    path = tmp_path / "audit.csv"
    report.write_csv(path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "|x|", "lhs", "rhs", "margin", "pass", "check"]
    assert len(rows) == len(report.rows) + 1


def test_audit_flags_undersized_constants():
    target = load_target("gaussian_offset_1d")
    coeffs = compute_base_constants(target)
    tiny = replace(coeffs, K0=0.0, K1=0.0, K2=0.0, K5=0.0, K6=0.0, K7=0.0)
    spec = ProbeSpec(times=(0.25, 0.5), n_points=8, budget_steps=8)
    report = regularity_audit(VelocityField(target), tiny, spec)
    assert not report.passed
    checks = {r.check for r in report.failures}
    assert len(checks) >= 2
