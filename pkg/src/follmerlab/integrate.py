"""Time schedules, Euler samplers and the velocity-perturbation model.

The Euler sampler moves a particle batch from the reference law (t = 0) towards
the target (t = 1) with ``Y <- Y + (t_{n+1} - t_n) V(t_n, Y)``. The exponential
Euler sampler integrates the same transport in logarithmic time ``s = ln(1/t)``.
A :class:`PerturbationModel` adds a controlled error field to V to emulate an
imperfectly learned velocity with a prescribed root-mean-square error.
"""

from __future__ import annotations

import copy
import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from . import streams
from .errors import ConfigurationError, DomainError, NonFiniteStateError, UnsupportedFamilyError
from .linalg import psd_sqrt
from .scorefield import FOLLMER, QUADRATURE, RECTIFIED, VelocityField
from .targets import SampleBatch

UNIFORM = "uniform"
LOG_UNIFORM = "log_uniform"
CUSTOM = "custom"

FIXED_RANDOM_FIELD = "fixed_random_field"
ADVERSARIAL_SINUSOID = "adversarial_sinusoid"

SELF_TEST_RTOL = 0.02
CALIBRATION_NODES = 65
SELF_TEST_TIMES = 17


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Strictly increasing time grid 0 = t_0 < ... < t_N = 1 - delta."""

    times: np.ndarray
    delta: float
    kind: str

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise DomainError("a schedule needs at least two time points")
        if t[0] != 0.0:
            raise DomainError("schedules start at t = 0")
        if not np.all(np.diff(t) > 0):
            raise DomainError("schedule times must be strictly increasing")
        if not 0.0 <= self.delta < 1.0:
            raise DomainError("delta must lie in [0, 1)")
        if t[-1] != 1.0 - self.delta:
            raise DomainError("schedule must end exactly at 1 - delta")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @property
    def N(self):
        return self.times.size - 1

    @property
    def steps(self):
        return np.diff(self.times)

    @property
    def max_step(self):
        return float(self.steps.max())

    def digest(self):
        """Short SHA-256 digest of the grid bytes and delta."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.times, dtype="<f8").tobytes())
        h.update(np.float64(self.delta).astype("<f8").tobytes())
        h.update(self.kind.encode())
        return h.hexdigest()[:16]

    def as_dict(self):
        return {"kind": self.kind, "N": self.N, "delta": self.delta, "digest": self.digest(),
                "max_step": self.max_step}


def uniform_schedule(N, delta=0.0):
    """Uniform grid t_n = n (1 - delta) / N."""
    if int(N) != N or N < 1:
        raise DomainError("step count N must be a positive integer")
    N = int(N)
    end = 1.0 - float(delta)
    times = np.arange(N + 1, dtype=float) * (end / N)
    times[-1] = end
    return Schedule(times, float(delta), UNIFORM)


def log_uniform_schedule(N, delta=0.0, t1=None):
    """t_0 = 0 followed by N geometric points from t_1 to 1 - delta.

    Uniform in s = ln(1/t), the natural grid of the exponential Euler sampler.
    ``t1`` defaults to (1 - delta) / N.
    """
    if int(N) != N or N < 1:
        raise DomainError("step count N must be a positive integer")
    N = int(N)
    end = 1.0 - float(delta)
    t1 = end / N if t1 is None else float(t1)
    if not 0.0 < t1 <= end:
        raise DomainError("first positive time t1 must lie in (0, 1 - delta]")
    if N == 1:
        times = np.array([0.0, end])
    else:
        times = np.concatenate([[0.0], np.geomspace(t1, end, N)])
        times[-1] = end
    return Schedule(times, float(delta), LOG_UNIFORM)


def custom_schedule(times, delta=None):
    times = np.asarray(times, dtype=float)
    delta = 1.0 - float(times[-1]) if delta is None else float(delta)
    return Schedule(times, delta, CUSTOM)


def pi_half_sum(schedule):
    """sum_{k <= N-2} (t_{k+1} - t_k) / sqrt(1 - t_k^2), a Riemann sum of the pi/2 integral."""
    t = schedule.times
    h = np.diff(t)[: max(schedule.N - 1, 0)]
    return float(np.sum(h / np.sqrt(1.0 - t[: h.size] ** 2)))


# ---------------------------------------------------------------------------
# Initial batches
# ---------------------------------------------------------------------------


def initial_batch(n, cov, seed, method="philox"):
    """n draws from N(0, cov).

    ``method="philox"`` uses the keyed pseudo-random stream; ``"sobol"`` uses
    scrambled Sobol points (rounded up to a power of two, then truncated), which
    lowers the sampling noise of moment estimates.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = cov.shape[0]
    if method == "philox":
        z = streams.standard_normals(int(n), d, seed, streams.ROLE_INITIAL)
    elif method == "sobol":
        z = streams.sobol_normals(int(n), d, seed, streams.ROLE_INITIAL)[: int(n)]
    else:
        raise ConfigurationError(f"unknown initial sampling method '{method}'")
    return z @ psd_sqrt(cov)


def reference_batch(field, n, seed, method="philox"):
    """Initial batch of a flow: N(0, C) for Föllmer, N(0, I) for rectified."""
    return initial_batch(n, field.reference_cov, seed, method)


# ---------------------------------------------------------------------------
# Perturbation model
# ---------------------------------------------------------------------------


@dataclass
class PerturbationModel:
    """Additive velocity error with a prescribed root-mean-square size.

    The field is ``eps * f(t, x) / r_t`` with r_t chosen on each grid time so that
    its mean square under the exact marginal of the flow is eps^2.

    * ``fixed_random_field``: f = (1 - t) u0 + t g(x) with u0 a random unit vector
      and g a random Fourier-feature field; its Jacobian is eps t grad g / r_t.
    * ``adversarial_sinusoid``: f = e cos(w t e^T (x - t E[X])) with e the leading
      covariance direction of the target, signed along E[X]. Near the bulk the
      field pushes every particle the same way, which transports mass coherently
      and makes the W2 error grow as fast as possible in eps.

    Attributes:
        eps: Root-mean-square error target.
        mode: One of the two modes above.
        seed: Seed of the random features.
        features: Number of Fourier features (random mode).
        frequency: Frequency scale w (both modes).
        calibration_samples: Monte Carlo size used for r_t and for the self-test.
    """

    eps: float
    mode: str = FIXED_RANDOM_FIELD
    seed: int = 0
    features: int = 64
    frequency: float = 1.0
    calibration_samples: int = 65536
    jacobian_budget: float = field(default=0.0, init=False)
    _scales: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.eps < 0:
            raise DomainError("perturbation eps must be nonnegative")
        if self.mode not in (FIXED_RANDOM_FIELD, ADVERSARIAL_SINUSOID):
            raise ConfigurationError(f"unknown perturbation mode '{self.mode}'")
        self._field = None

    # ------------------------------------------------------------------
    def _setup(self, field_):
        d = field_.dim
        rng = streams.philox(self.seed, streams.ROLE_PERTURBATION)
        if self.mode == FIXED_RANDOM_FIELD:
            u0 = rng.standard_normal(d)
            self._u0 = u0 / np.linalg.norm(u0)
            self._omega = rng.standard_normal((self.features, d)) * self.frequency
            self._phase = rng.uniform(0.0, 2.0 * np.pi, self.features)
            self._amp = rng.standard_normal((self.features, d)) * math.sqrt(2.0 / (self.features * d))
            # ||grad g|| <= sum_k |amp_k| |omega_k|.
            self._glip = float(np.sum(np.linalg.norm(self._amp, axis=1)
                                      * np.linalg.norm(self._omega, axis=1)))
        else:
            target = field_.target
            mean = np.asarray(target.mean(), dtype=float)
            try:
                cov = target.covariance()
            except AttributeError:
                x = target.sample(self.calibration_samples, self.seed)
                cov = np.cov(x, rowvar=False).reshape(d, d)
            vals, vecs = np.linalg.eigh(np.atleast_2d(cov))
            e = vecs[:, -1]
            if e @ mean < 0:
                e = -e
            self._e = e
            self._mean = mean
        self._field = field_

    def _raw(self, t, x):
        if self.mode == FIXED_RANDOM_FIELD:
            g = np.cos(x @ self._omega.T + self._phase) @ self._amp
            return (1.0 - t) * self._u0[None, :] + t * g
        phase = self.frequency * t * ((x - t * self._mean) @ self._e)
        return np.cos(phase)[:, None] * self._e[None, :]

    def _marginal_samples(self, t, key):
        """Samples of the exact flow marginal at sampler time t."""
        f = self._field
        target = f.target
        n = self.calibration_samples
        x1 = target.sample(n, int(self.seed * 1000003 + key))
        z = streams.standard_normals(n, f.dim, self.seed, streams.ROLE_PERTURBATION, key)
        ref = psd_sqrt(f.reference_cov)
        if f.kind == FOLLMER:
            return t * x1 + math.sqrt(max(0.0, 1.0 - t * t)) * z @ ref
        return t * x1 + (1.0 - t) * z

    def calibrate(self, field_, schedule):
        """Fix r_t on the grid times and the Jacobian budget K8.

        r_t is estimated by Monte Carlo on at most ``CALIBRATION_NODES`` evenly
        spread grid times and linearly interpolated in between; r_t is smooth
        in t, and the self-test checks the interpolated values with fresh samples.

        Returns:
            self, for chaining.
        """
        self._setup(field_)
        grid = np.asarray(schedule.times[:-1], dtype=float)
        idx = np.unique(np.round(np.linspace(0, grid.size - 1,
                                             min(grid.size, CALIBRATION_NODES))).astype(int))
        nodes = grid[idx]
        r_nodes = np.empty(nodes.size)
        for j, t in enumerate(nodes):
            x = self._marginal_samples(float(t), 2 * j + 1)
            r_nodes[j] = math.sqrt(float(np.mean(np.sum(self._raw(float(t), x) ** 2, axis=1))))
        if np.any(r_nodes <= 0.0):
            raise ConfigurationError("perturbation field vanishes on the calibration grid")
        r_grid = np.interp(grid, nodes, r_nodes)
        self._scales = {float(t): float(r) for t, r in zip(grid, r_grid)}
        slope = self._glip if self.mode == FIXED_RANDOM_FIELD else self.frequency
        self._k8_unit = float(slope / r_grid.min())
        self.jacobian_budget = self.eps * self._k8_unit
        return self

    def with_eps(self, eps):
        """Calibrated copy with a different eps; r_t does not depend on eps."""
        if self._field is None:
            raise ConfigurationError("perturbation model must be calibrated before use")
        if eps < 0:
            raise DomainError("perturbation eps must be nonnegative")
        out = copy.copy(self)
        out.eps = float(eps)
        out.jacobian_budget = out.eps * self._k8_unit
        return out

    @property
    def K8(self):
        return self.jacobian_budget

    def __call__(self, t, x):
        if self._field is None:
            raise ConfigurationError("perturbation model must be calibrated before use")
        r = self._scales.get(float(t))
        if r is None:
            raise DomainError(f"perturbation is calibrated only on the schedule grid (t={t})")
        return (self.eps / r) * self._raw(float(t), x)

    def jacobian(self, t, x):
        """Analytic Jacobian of the perturbation, shape (n, d, d)."""
        r = self._scales[float(t)]
        if self.mode == FIXED_RANDOM_FIELD:
            s = -np.sin(x @ self._omega.T + self._phase)  # (n, F)
            jac = np.einsum("nk,ki,kj->nij", s, self._amp, self._omega)
            return (self.eps * t / r) * jac
        phase = self.frequency * t * ((x - t * self._mean) @ self._e)
        coef = -(self.eps / r) * self.frequency * t * np.sin(phase)
        return coef[:, None, None] * np.outer(self._e, self._e)[None]

    def self_test(self, schedule=None, times=SELF_TEST_TIMES):
        """Fresh Monte Carlo check that E|u|^2 = eps^2 within 2%.

        Evaluated on ``times`` grid times spread evenly over the calibrated grid.

        Returns:
            dict with the worst relative deviation and pass/fail.
        """
        if self._field is None:
            raise ConfigurationError("perturbation model must be calibrated before use")
        if self.eps == 0.0:
            return {"max_rel_dev": 0.0, "passed": True, "times": []}
        grid = sorted(self._scales) if schedule is None else list(schedule.times[:-1])
        pick = np.unique(np.round(np.linspace(0, len(grid) - 1, min(len(grid), times))).astype(int))
        worst = 0.0
        probed = []
        for j in pick:
            t = float(grid[j])
            x = self._marginal_samples(t, 2 * int(j) + 2 + 1_000_000)
            ms = float(np.mean(np.sum(self(t, x) ** 2, axis=1)))
            worst = max(worst, abs(ms / self.eps**2 - 1.0))
            probed.append(t)
        return {"max_rel_dev": worst, "passed": bool(worst <= SELF_TEST_RTOL), "times": probed}


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunResult:
    """Output of a sampler run.

    Attributes:
        batch: Final particles with seed and provenance.
        diagnostics: Per-step arrays "t", "h", "max_speed" and, for quadrature
            fields, "min_ess".
        wall_clock: Seconds spent integrating.
        seeds: Seed lineage (initial batch, quadrature, perturbation).
        schedule: The grid used.
    """

    batch: SampleBatch
    diagnostics: dict
    wall_clock: float
    seeds: dict
    schedule: Schedule

    @property
    def points(self):
        return self.batch.points


def _evaluate(fn, t, x, t_index, workers):
    if workers <= 1 or x.shape[0] < 2 * workers:
        return fn(t, x, t_index)
    chunks = np.array_split(np.arange(x.shape[0]), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda idx: fn(t, x[idx], t_index), chunks))
    return np.concatenate(parts, axis=0)


def _check_finite(y, step):
    bad = ~np.isfinite(y)
    if np.any(bad):
        raise NonFiniteStateError(step, int(np.argmax(np.any(bad, axis=1))))


def euler_run(field, schedule, n=None, seed=0, perturbation=None, initial=None, workers=1,
              initial_method="philox"):
    """Forward Euler integration of the flow from its reference law.

    Args:
        field: Velocity field (Föllmer or rectified).
        schedule: Time grid.
        n: Particle count (ignored when ``initial`` is given).
        seed: Seed of the initial batch.
        perturbation: Optional calibrated :class:`PerturbationModel` added to V.
        initial: Optional (n, d) initial batch, to couple several runs.
        workers: Threads used for the velocity evaluations within a step.
        initial_method: "philox" or "sobol" initial draws.

    Raises:
        NonFiniteStateError: If a step produces a non-finite coordinate.
    """
    y = reference_batch(field, n, seed, initial_method) if initial is None else np.array(
        initial, dtype=float, copy=True)
    t = schedule.times
    diag = {"t": t[:-1].copy(), "h": schedule.steps.copy(), "max_speed": np.zeros(schedule.N)}
    quad = field.mode == QUADRATURE
    if quad:
        diag["min_ess"] = np.zeros(schedule.N)
    start = time.perf_counter()
    for k in range(schedule.N):
        tk = float(t[k])
        v = _evaluate(field.velocity, tk, y, k, workers)
        if perturbation is not None:
            v = v + perturbation(tk, y)
        diag["max_speed"][k] = float(np.max(np.linalg.norm(v, axis=1))) if y.size else 0.0
        if quad:
            diag["min_ess"][k] = field.last_min_ess
        y = y + (t[k + 1] - t[k]) * v
        _check_finite(y, k)
    elapsed = time.perf_counter() - start
    seeds = {"initial": int(seed), "quadrature": field.seed,
             "perturbation": None if perturbation is None else perturbation.seed}
    prov = {"source": "euler", "flow": field.kind, "mode": field.mode,
            "schedule": schedule.digest(), "N": schedule.N,
            "eps": 0.0 if perturbation is None else perturbation.eps}
    return RunResult(SampleBatch(y, int(seed), prov), diag, elapsed, seeds, schedule)


def exp_euler_prob_ode_run(field, schedule, n=None, seed=0, initial=None, workers=1,
                           initial_method="philox"):
    """Exponential Euler integration of the probability-flow ODE in log time.

    The first step is one Euler step X_{t_1} = X_0 + t_1 V(0, X_0), where V(0, .)
    is the target mean. Each later step applies
    ``X <- X + (t_n / t_{n-1} - 1) (S(t_{n-1}, X) + X)`` with the Föllmer score S,
    which is the exponential Euler update in s = ln(1/t).

    Raises:
        DomainError: If t_1 = 0 or the field is not a Föllmer field.
    """
    if field.kind != FOLLMER:
        raise DomainError("the probability-flow sampler uses the Föllmer score")
    t = schedule.times
    if schedule.N < 1 or t[1] <= 0.0:
        raise DomainError("exponential Euler needs t_1 > 0")
    y = reference_batch(field, n, seed, initial_method) if initial is None else np.array(
        initial, dtype=float, copy=True)
    diag = {"t": t[:-1].copy(), "h": schedule.steps.copy(), "max_speed": np.zeros(schedule.N),
            "s": np.concatenate([[np.inf], np.log(1.0 / t[1:])])}
    start = time.perf_counter()
    v0 = _evaluate(field.velocity, 0.0, y, 0, workers)
    diag["max_speed"][0] = float(np.max(np.linalg.norm(v0, axis=1)))
    y = y + t[1] * v0
    _check_finite(y, 0)
    for k in range(1, schedule.N):
        tk = float(t[k])
        s = _evaluate(field.score, tk, y, k, workers)
        drift = s + y
        factor = t[k + 1] / t[k] - 1.0
        diag["max_speed"][k] = float(np.max(np.linalg.norm(drift, axis=1))) / tk
        y = y + factor * drift
        _check_finite(y, k)
    elapsed = time.perf_counter() - start
    prov = {"source": "exp_euler", "flow": "prob-ode", "mode": field.mode,
            "schedule": schedule.digest(), "N": schedule.N, "eps": 0.0}
    return RunResult(SampleBatch(y, int(seed), prov), diag, elapsed,
                     {"initial": int(seed), "quadrature": field.seed}, schedule)


@dataclass(frozen=True)
class LipschitzEstimate:
    """Largest displacement amplification over the probed pairs."""

    value: float
    ratios: np.ndarray
    eta: float


def lipschitz_probe_run(field, schedule, pair_count, displacement, seed=0):
    """Push pairs (x, x + eta u) through the Euler map; return max |dY| / (eta |u|)."""
    if not displacement > 0:
        raise DomainError("displacement scale must be positive")
    x = reference_batch(field, pair_count, seed)
    u = streams.standard_normals(pair_count, field.dim, seed, streams.ROLE_PROBE)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    both = np.concatenate([x, x + displacement * u])
    out = euler_run(field, schedule, initial=both).points
    dy = np.linalg.norm(out[pair_count:] - out[:pair_count], axis=1)
    ratios = dy / displacement
    return LipschitzEstimate(float(ratios.max()), ratios, float(displacement))


# ---------------------------------------------------------------------------
# Exact references for Gaussian and mixture targets
# ---------------------------------------------------------------------------


def _diagonal_parts(field):
    """(mean, variances, reference variances) if the single Gaussian is diagonal."""
    if not field.is_affine:
        return None
    S = field._S[0]
    R = field.reference_cov
    if np.count_nonzero(S - np.diag(np.diag(S))) or np.count_nonzero(R - np.diag(np.diag(R))):
        return None
    return field._m[0], np.diag(S).copy(), np.diag(R).copy()


def euler_gaussian_law(field, schedule, mean0=None, cov0=None):
    """Propagate a Gaussian law exactly through the Euler map of an affine field.

    For V(t, x) = M_t x + b_t each step maps N(mu, P) to
    N(mu + h (M mu + b), (I + h M) P (I + h M)^T). Diagonal targets with a diagonal
    reference covariance use a per-coordinate recursion.

    Returns:
        (mean, covariance) of the Euler output.
    """
    if not field.is_affine:
        raise UnsupportedFamilyError("exact law propagation needs a single-Gaussian target")
    d = field.dim
    mean = np.zeros(d) if mean0 is None else np.array(mean0, dtype=float)
    cov = field.reference_cov.copy() if cov0 is None else np.array(cov0, dtype=float)
    t = schedule.times
    parts = _diagonal_parts(field)
    if parts is not None and np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        m, s, r = parts
        var = np.diag(cov).copy()
        from .scorefield import _path_coefficients

        for k in range(schedule.N):
            a, da, _, b2, bbd, _ = _path_coefficients(field.kind, float(t[k]))
            p = a * a * s + b2 * r
            slope = (da * a * s + bbd * r) / p
            h = t[k + 1] - t[k]
            mean = mean + h * (slope * (mean - a * m) + da * m)
            var = (1.0 + h * slope) ** 2 * var
        return mean, np.diag(var)
    eye = np.eye(d)
    for k in range(schedule.N):
        M, b = field.affine_coefficients(float(t[k]))
        h = t[k + 1] - t[k]
        step = eye + h * M
        mean = mean + h * (M @ mean + b)
        cov = step @ cov @ step.T
    return mean, 0.5 * (cov + cov.T)


def exact_flow_map(field, x0, t_end=1.0, rtol=1e-10, atol=1e-12):
    """Image of x0 (taken at t = 0) under the exact flow up to ``t_end``.

    A single Gaussian target whose covariance commutes with the reference
    covariance has the closed-form Föllmer map x -> S^{1/2} C^{-1/2} x + m at
    t_end = 1. Other closed-form fields are integrated with an adaptive
    high-order Runge-Kutta method.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if field.mode != "closed_form":
        raise UnsupportedFamilyError("exact flow maps need a closed-form velocity")
    if field.is_affine and field.kind == FOLLMER and t_end == 1.0:
        S, Cref = field._S[0], field.reference_cov
        if np.allclose(S @ Cref, Cref @ S, atol=1e-12):
            T = psd_sqrt(S) @ np.linalg.inv(psd_sqrt(Cref))
            return x0 @ T.T + field._m[0]
    n, d = x0.shape

    def rhs(t, y):
        return field.velocity(float(t), y.reshape(n, d)).ravel()

    sol = solve_ivp(rhs, (0.0, float(t_end)), x0.ravel(), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise ConfigurationError(f"exact flow integration failed: {sol.message}")
    return sol.y[:, -1].reshape(n, d)


def make_field(target, flow, mode="closed_form", m=4096, seed=0):
    """Build the velocity field behind a flow name (prob-ode uses the Föllmer field)."""
    kind = RECTIFIED if flow == RECTIFIED else FOLLMER
    if flow not in (FOLLMER, RECTIFIED, "prob-ode", "prob_ode"):
        raise ConfigurationError(f"unknown flow '{flow}'")
    return VelocityField(target, kind=kind, mode=mode, m=m, seed=seed)


def run_flow(field, flow, schedule, n=None, seed=0, perturbation=None, initial=None, workers=1):
    """Dispatch to the Euler or exponential Euler sampler by flow name."""
    if flow in ("prob-ode", "prob_ode"):
        if perturbation is not None:
            raise ConfigurationError("perturbations are defined for the Euler sampler only")
        return exp_euler_prob_ode_run(field, schedule, n, seed, initial=initial, workers=workers)
    return euler_run(field, schedule, n, seed, perturbation=perturbation, initial=initial,
                     workers=workers)
