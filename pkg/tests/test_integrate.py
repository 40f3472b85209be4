import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from follmerlab.errors import ConfigurationError, DomainError
from follmerlab.integrate import (
    ADVERSARIAL_SINUSOID,
    FIXED_RANDOM_FIELD,
    PerturbationModel,
    Schedule,
    custom_schedule,
    euler_gaussian_law,
    euler_run,
    exact_flow_map,
    exp_euler_prob_ode_run,
    initial_batch,
    log_uniform_schedule,
    make_field,
    pi_half_sum,
    uniform_schedule,
)
from follmerlab.scorefield import VelocityField
from follmerlab.targets import GaussianTarget


def scalar_follmer_velocity(m, s, c, t, x):
    """Follmer velocity of N(m, s) with reference N(0, c), from Gaussian conditioning."""
    e1 = m + (x - t * m) * t * s / (t * t * s + (1 - t * t) * c)
    return (e1 - t * x) / (1 - t * t)


# schedules -----------------------------------------------------------------


def test_schedule_validation():
    with pytest.raises(DomainError):
        Schedule(np.array([0.0]), 0.0, "custom")
    with pytest.raises(DomainError):
        Schedule(np.array([0.1, 1.0]), 0.0, "custom")
    with pytest.raises(DomainError):
        Schedule(np.array([0.0, 0.5, 0.5, 1.0]), 0.0, "custom")
    with pytest.raises(DomainError):
        Schedule(np.array([0.0, 0.9]), 0.0, "custom")
    with pytest.raises(DomainError):
        uniform_schedule(0)
    with pytest.raises(DomainError):
        log_uniform_schedule(4, t1=2.0)


@given(N=st.integers(1, 500), delta=st.floats(0.0, 0.5))
@settings(max_examples=40, deadline=None)
def test_uniform_schedule_is_equispaced(N, delta):
    s = uniform_schedule(N, delta)
    assert s.N == N
    assert s.times[-1] == 1.0 - delta
    np.testing.assert_allclose(s.steps, (1.0 - delta) / N, rtol=1e-9)
    assert s.max_step == pytest.approx((1.0 - delta) / N)


@given(N=st.integers(2, 400))
@settings(max_examples=30, deadline=None)
def test_log_uniform_schedule_is_equispaced_in_log_time(N):
    s = log_uniform_schedule(N)
    assert s.times[0] == 0.0 and s.times[-1] == 1.0
    assert s.times[1] == pytest.approx(1.0 / N)
    logs = np.diff(np.log(s.times[1:]))
    np.testing.assert_allclose(logs, math.log(N) / (N - 1), rtol=1e-9)


def test_schedule_digest_tracks_the_grid():
    a, b = uniform_schedule(16), uniform_schedule(16)
    assert a.digest() == b.digest()
    assert a.digest() != uniform_schedule(17).digest()
    assert a.digest() != log_uniform_schedule(16).digest()
    assert custom_schedule([0.0, 0.3, 0.9]).delta == pytest.approx(0.1)


@pytest.mark.parametrize("N", [16, 256, 4096])
def test_pi_half_sum_is_a_left_riemann_sum_of_arcsin(N):
    s = uniform_schedule(N)
    t = s.times
    # 1 / sqrt(1 - t^2) increases, so the left sum up to t_{N-1} sits below arcsin(t_{N-1}).
    value = pi_half_sum(s)
    assert value <= math.asin(t[-2]) + 1e-15
    assert value > 0.0
    brute = sum((t[k + 1] - t[k]) / math.sqrt(1 - t[k] ** 2) for k in range(N - 1))
    assert value == pytest.approx(brute, rel=1e-12)


def test_pi_half_sum_converges():
    gaps = [math.pi / 2 - pi_half_sum(uniform_schedule(N)) for N in (64, 256, 1024, 4096)]
    assert all(g > 0 for g in gaps)
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    # The gap is dominated by the missing last interval, about sqrt(2 h).
    assert gaps[-1] < 2.0 * math.sqrt(2.0 / 4096)


# Euler sampler ---------------------------------------------------------------


@pytest.mark.parametrize("m,s,c", [(0.5, 1.5, 1.0), (-1.0, 0.25, 2.0)])
def test_euler_matches_scalar_recursion(m, s, c):
    target = GaussianTarget([m], [[s]], C=[[c]])
    field_ = VelocityField(target)
    schedule = uniform_schedule(32)
    x0 = initial_batch(64, [[c]], seed=5)
    out = euler_run(field_, schedule, initial=x0).points[:, 0]
    expected = []
    for x in x0[:, 0]:
        for k in range(schedule.N):
            t, h = schedule.times[k], schedule.steps[k]
            x = x + h * scalar_follmer_velocity(m, s, c, t, x)
        expected.append(x)
    np.testing.assert_allclose(out, expected, rtol=1e-11, atol=1e-12)


def test_gaussian_law_matches_affine_recursion():
    m, s, c = 0.5, 1.5, 1.0
    target = GaussianTarget([m], [[s]], C=[[c]])
    schedule = uniform_schedule(20)
    mean, cov = euler_gaussian_law(VelocityField(target), schedule)
    # Each Euler step is x -> alpha x + beta; read alpha and beta off two points.
    mu, var = 0.0, c
    for k in range(schedule.N):
        t, h = schedule.times[k], schedule.steps[k]
        f0 = h * scalar_follmer_velocity(m, s, c, t, 0.0)
        f1 = h * scalar_follmer_velocity(m, s, c, t, 1.0)
        alpha, beta = 1.0 + f1 - f0, f0
        mu, var = alpha * mu + beta, alpha * alpha * var
    assert mean[0] == pytest.approx(mu, rel=1e-12)
    assert cov[0, 0] == pytest.approx(var, rel=1e-12)


def test_gaussian_law_dense_path_matches_diagonal_path():
    target = GaussianTarget([0.3, -0.2], np.diag([0.5, 2.0]), C=np.diag([1.0, 1.5]))
    field_ = VelocityField(target)
    schedule = uniform_schedule(12)
    mean_d, cov_d = euler_gaussian_law(field_, schedule)
    mean_f, cov_f = euler_gaussian_law(field_, schedule, cov0=field_.reference_cov + 1e-300)
    np.testing.assert_allclose(mean_d, mean_f, rtol=1e-10)
    np.testing.assert_allclose(cov_d, cov_f, rtol=1e-10, atol=1e-14)


def test_euler_is_deterministic_across_worker_counts():
    target = GaussianTarget([0.5, 0.0], np.diag([1.5, 0.5]))
    field_ = VelocityField(target, mode="quadrature", m=1024, seed=3)
    schedule = uniform_schedule(8)
    one = euler_run(field_, schedule, n=200, seed=9, workers=1).points
    many = euler_run(field_, schedule, n=200, seed=9, workers=3).points
    np.testing.assert_array_equal(one, many)


def test_seed_lineage_and_provenance_are_recorded():
    field_ = VelocityField(GaussianTarget([0.0], [[2.0]]))
    run = euler_run(field_, uniform_schedule(4), n=10, seed=11)
    assert run.seeds["initial"] == 11
    assert run.batch.provenance["N"] == 4
    assert run.diagnostics["max_speed"].shape == (4,)


def test_euler_error_against_exact_map_is_first_order():
    target = GaussianTarget([0.5], [[0.25]])
    field_ = VelocityField(target)
    x0 = initial_batch(256, [[1.0]], seed=1)
    exact = exact_flow_map(field_, x0)
    np.testing.assert_allclose(exact[:, 0], 0.5 * x0[:, 0] + 0.5, rtol=1e-12)
    errs = []
    for N in (32, 64, 128, 256):
        y = euler_run(field_, uniform_schedule(N), initial=x0).points
        errs.append(float(np.sqrt(np.mean((y - exact) ** 2))))
    slope = np.polyfit(np.log([32, 64, 128, 256]), np.log(errs), 1)[0]
    assert -1.15 < slope < -0.85


def test_exact_map_runge_kutta_agrees_with_closed_form():
    target = GaussianTarget([0.5], [[0.25]])
    field_ = VelocityField(target)
    x0 = initial_batch(16, [[1.0]], seed=2)
    ode = exact_flow_map(field_, x0, t_end=1.0 - 1e-9)
    np.testing.assert_allclose(ode, exact_flow_map(field_, x0), atol=1e-6)


def test_prob_ode_requires_follmer_field_and_starts_at_the_mean():
    target = GaussianTarget([0.7], [[0.5]])
    with pytest.raises(DomainError):
        exp_euler_prob_ode_run(make_field(target, "rectified"), log_uniform_schedule(8), n=4)
    field_ = make_field(target, "prob-ode")
    x0 = initial_batch(8, [[1.0]], seed=0)
    one = exp_euler_prob_ode_run(field_, log_uniform_schedule(1), initial=x0).points
    np.testing.assert_allclose(one, x0 + 0.7)
    with pytest.raises(ConfigurationError):
        make_field(target, "langevin")


# perturbations ---------------------------------------------------------------


@pytest.mark.parametrize("mode", [FIXED_RANDOM_FIELD, ADVERSARIAL_SINUSOID])
def test_perturbation_has_the_calibrated_size(mode):
    target = GaussianTarget([0.5, -0.5], np.diag([1.5, 0.5]))
    field_ = VelocityField(target)
    schedule = uniform_schedule(16)
    model = PerturbationModel(0.1, mode=mode, seed=4, frequency=1.5,
                              calibration_samples=32768).calibrate(field_, schedule)
    report = model.self_test(schedule)
    assert report["passed"], report
    doubled = model.with_eps(0.2)
    x = np.random.default_rng(0).standard_normal((5, 2))
    t = float(schedule.times[3])
    np.testing.assert_allclose(doubled(t, x), 2.0 * model(t, x), rtol=1e-12)
    assert doubled.K8 == pytest.approx(2.0 * model.K8)
    with pytest.raises(DomainError):
        model(0.123456, x)


@pytest.mark.parametrize("mode", [FIXED_RANDOM_FIELD, ADVERSARIAL_SINUSOID])
def test_perturbation_jacobian_matches_finite_differences(mode):
    target = GaussianTarget([0.5, -0.5], np.diag([1.5, 0.5]))
    field_ = VelocityField(target)
    schedule = uniform_schedule(8)
    model = PerturbationModel(0.3, mode=mode, seed=2, calibration_samples=4096)
    model.calibrate(field_, schedule)
    t = float(schedule.times[5])
    x = np.random.default_rng(1).standard_normal((4, 2))
    jac = model.jacobian(t, x)
    step = 1e-6
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        fd = (model(t, x + e) - model(t, x - e)) / (2 * step)
        np.testing.assert_allclose(jac[:, :, j], fd, atol=1e-7)
    # The Jacobian budget dominates the operator norm of the Jacobian.
    assert np.max(np.linalg.norm(jac, ord=2, axis=(1, 2))) <= model.K8 + 1e-12


def test_perturbation_requires_calibration_and_valid_arguments():
    with pytest.raises(DomainError):
        PerturbationModel(-0.1)
    with pytest.raises(ConfigurationError):
        PerturbationModel(0.1, mode="gremlin")
    model = PerturbationModel(0.1)
    with pytest.raises(ConfigurationError):
        model(0.0, np.zeros((1, 1)))
    with pytest.raises(ConfigurationError):
        model.with_eps(0.2)
