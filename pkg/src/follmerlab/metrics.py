"""Wasserstein-2 distances and the empirical regularity audit.

``w2_exact`` solves the empirical optimal-assignment problem with squared
Euclidean cost, ``w2_gaussian_closed_form`` is the Bures formula for two
Gaussians, and ``sliced_w2`` averages one-dimensional distances over random
directions for batches too large for the exact solver. ``regularity_audit``
checks the velocity growth, Lipschitz and time-derivative bounds of a field
point by point against a :class:`CoefficientSet`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import streams
from .coefficients import RECTIFIED as RECTIFIED_VARIANT
from .errors import DomainError
from .linalg import check_spd, op_norm, psd_sqrt
from .targets import halton_ball

EXACT_CAP = 4096
_COST_CHUNK_ELEMENTS = 8_000_000


@dataclass(frozen=True)
class TransportPlanResult:
    """Optimal assignment between two equal-size batches.

    Attributes:
        cost: Total squared distance of the optimal assignment.
        assignment: ``assignment[i]`` is the index in batch B matched to point i of batch A.
        W2: sqrt(cost / n).
        method: "assignment" (shortest augmenting path) or "sorted" (d = 1).
    """

    cost: float
    assignment: np.ndarray
    W2: float
    method: str = "assignment"


def _as_batch(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DomainError(f"{name} must be an (n, d) array")
    return x


def squared_cost_matrix(a, b):
    """Pairwise squared distances, summed over coordinates per entry.

    Differences are formed explicitly (no |a|^2 + |b|^2 - 2ab expansion) and
    reduced with numpy's pairwise summation, in row chunks.
    """
    n, d = a.shape
    m = b.shape[0]
    out = np.empty((n, m))
    rows = max(1, _COST_CHUNK_ELEMENTS // max(1, m * d))
    for lo in range(0, n, rows):
        hi = min(n, lo + rows)
        diff = a[lo:hi, None, :] - b[None, :, :]
        out[lo:hi] = np.sum(diff * diff, axis=2)
    return out


def assignment_cost(a, b, assignment):
    """Total squared distance of a given assignment (for feasibility comparisons)."""
    diff = _as_batch(a, "batch A") - _as_batch(b, "batch B")[np.asarray(assignment)]
    return float(np.sum(diff * diff))


def w2_exact(batch_a, batch_b, cap=EXACT_CAP):
    """Exact empirical W2 between two batches of equal size.

    Raises:
        DomainError: On mismatched sizes or dimensions, or when n exceeds ``cap``
            (use ``sliced_w2`` for larger batches).
    """
    a, b = _as_batch(batch_a, "batch A"), _as_batch(batch_b, "batch B")
    if a.shape[0] != b.shape[0]:
        raise DomainError(f"batch sizes differ ({a.shape[0]} vs {b.shape[0]})")
    if a.shape[1] != b.shape[1]:
        raise DomainError(f"batch dimensions differ ({a.shape[1]} vs {b.shape[1]})")
    n = a.shape[0]
    if n == 0:
        raise DomainError("batches are empty")
    if n > cap:
        raise DomainError(f"n={n} exceeds the exact-solver cap {cap}; use sliced_w2 instead")
    if a.shape[1] == 1:
        ia, ib = np.argsort(a[:, 0], kind="stable"), np.argsort(b[:, 0], kind="stable")
        assignment = np.empty(n, dtype=np.intp)
        assignment[ia] = ib
        method = "sorted"
    else:
        # Translating either batch only adds row and column constants to the cost
        # matrix, so centering leaves the optimal assignment unchanged and keeps the
        # solver away from cost matrices dominated by a mean offset (3x faster).
        _, assignment = linear_sum_assignment(
            squared_cost_matrix(a - a.mean(axis=0), b - b.mean(axis=0)))
        method = "assignment"
    cost = assignment_cost(a, b, assignment)
    return TransportPlanResult(cost, assignment, math.sqrt(max(cost, 0.0) / n), method)


def w2_gaussian_closed_form(m1, S1, m2, S2):
    """W2 between N(m1, S1) and N(m2, S2).

    Raises:
        DomainError: If a covariance is not symmetric positive semi-definite.
    """
    m1, m2 = np.atleast_1d(np.asarray(m1, float)), np.atleast_1d(np.asarray(m2, float))
    S1 = check_spd(np.atleast_2d(S1), "S1", allow_singular=True)
    S2 = check_spd(np.atleast_2d(S2), "S2", allow_singular=True)
    r1 = psd_sqrt(S1)
    cross = psd_sqrt(r1 @ S2 @ r1)
    tr = float(np.trace(S1) + np.trace(S2) - 2.0 * np.trace(cross))
    return math.sqrt(float(np.sum((m1 - m2) ** 2)) + max(tr, 0.0))


def w2_empirical_to_gaussian_1d(samples, mean, var):
    """Exact W2 between the empirical law of 1-D samples and N(mean, var).

    The optimal coupling is monotone: the i-th order statistic is matched with
    the Gaussian quantiles on [(i-1)/n, i/n], and each bin integral has a
    closed form in the normal density and distribution function.
    """
    from scipy.special import ndtri
    from scipy.stats import norm

    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise DomainError("samples are empty")
    if var < 0:
        raise DomainError("variance must be nonnegative")
    sd = math.sqrt(var)
    z = ndtri(np.linspace(0.0, 1.0, n + 1))
    phi = norm.pdf(z)
    with np.errstate(invalid="ignore"):
        zphi = np.where(np.isfinite(z), z * phi, 0.0)
    w = 1.0 / n
    first = mean * w + sd * (phi[:-1] - phi[1:])
    second = (mean * mean * w + 2.0 * mean * sd * (phi[:-1] - phi[1:])
              + var * (w + zphi[:-1] - zphi[1:]))
    total = float(np.sum(x * x * w - 2.0 * x * first + second))
    return math.sqrt(max(total, 0.0))


@dataclass(frozen=True)
class SlicedResult:
    """Sliced W2 estimate: mean of 1-D distances over random directions."""

    value: float
    stderr: float
    projections: int


def sliced_w2(batch_a, batch_b, projections=64, seed=0):
    """Average 1-D W2 over ``projections`` random unit directions.

    Raises:
        DomainError: If fewer than 16 projections are requested or sizes differ.
    """
    if projections < 16:
        raise DomainError("sliced W2 needs at least 16 projections")
    a, b = _as_batch(batch_a, "batch A"), _as_batch(batch_b, "batch B")
    if a.shape != b.shape:
        raise DomainError("sliced W2 needs batches of equal shape")
    d = a.shape[1]
    if d == 1:
        return SlicedResult(w2_exact(a, b, cap=np.inf).W2, 0.0, int(projections))
    theta = streams.standard_normals(int(projections), d, seed, streams.ROLE_PROBE, 7)
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    pa = np.sort(a @ theta.T, axis=0)
    pb = np.sort(b @ theta.T, axis=0)
    per_dir = np.sqrt(np.mean((pa - pb) ** 2, axis=0))
    return SlicedResult(float(per_dir.mean()), float(per_dir.std(ddof=1) / math.sqrt(projections)),
                        int(projections))


DEFAULT_FLOOR_C = 6.0


def mc_floor(M0, n, c=DEFAULT_FLOOR_C):
    """Monte Carlo floor c sqrt(M0 / n) of an empirical W2 between n-point batches.

    The default c = 6 (twice a safety factor of 3) keeps two independent 2048-point
    batches of a bundled 2D target below the floor.
    """
    return float(c * math.sqrt(M0 / n))


# ---------------------------------------------------------------------------
# Regularity audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeSpec:
    """Where the regularity audit evaluates the field.

    Attributes:
        times: Probe times; the time-derivative check skips t = 1.
        radius: Radius of the Halton probe ball.
        n_points: Number of Halton points (the origin is added).
        budget_steps: Step count of the uniform grid used for the Jacobian budget check.
        budget: Budget B; defaults to (K1 + K2 + K8) / 2, the integral of the
            Jacobian bound over [0, 1].
        points: Explicit probe points overriding the Halton ball.
    """

    times: tuple = tuple(np.round(np.linspace(0.0, 0.99, 34), 6))
    radius: float = 3.0
    n_points: int = 64
    budget_steps: int = 64
    budget: Optional[float] = None
    points: Optional[np.ndarray] = None

    def probe_points(self, dim):
        if self.points is not None:
            return np.atleast_2d(np.asarray(self.points, dtype=float))
        return halton_ball(self.n_points, dim, self.radius, include_origin=True)


@dataclass(frozen=True)
class AuditRow:
    check: str
    t: float
    norm_x: float
    lhs: float
    rhs: float

    @property
    def margin(self):
        return self.rhs - self.lhs

    @property
    def passed(self):
        return bool(self.lhs <= self.rhs * (1.0 + 1e-9) + 1e-12)


@dataclass(frozen=True)
class AuditReport:
    """Per-probe rows plus the Jacobian budget check.

    Attributes:
        rows: One row per (check, time, probe point).
        budget_sum: sum_n h_n max_x ||grad V~(t_n, x)|| on the budget grid.
        budget: The budget B it is compared with.
        variant: Constant variant the bounds were taken from.
    """

    rows: list
    budget_sum: float
    budget: float
    variant: str
    extra: dict = field(default_factory=dict)

    @property
    def budget_passed(self):
        return bool(self.budget_sum <= self.budget * (1.0 + 1e-9) + 1e-12)

    @property
    def failures(self):
        return [r for r in self.rows if not r.passed]

    @property
    def passed(self):
        return not self.failures and self.budget_passed

    def pass_rate(self):
        return (sum(r.passed for r in self.rows) / len(self.rows)) if self.rows else 1.0

    def summary(self):
        by_check = {}
        for r in self.rows:
            s = by_check.setdefault(r.check, {"rows": 0, "failed": 0, "min_margin": math.inf})
            s["rows"] += 1
            s["failed"] += int(not r.passed)
            s["min_margin"] = min(s["min_margin"], r.margin)
        return {"passed": self.passed, "checks": by_check, "budget_sum": self.budget_sum,
                "budget": self.budget, "budget_passed": self.budget_passed,
                "pass_rate": self.pass_rate()}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "|x|", "lhs", "rhs", "margin", "pass", "check"])
            for r in self.rows:
                w.writerow([repr(r.t), repr(r.norm_x), repr(r.lhs), repr(r.rhs), repr(r.margin),
                            int(r.passed), r.check])


def _bounds(coeffs, t, nx):
    if coeffs.variant == RECTIFIED_VARIANT:
        growth = coeffs.K0 + coeffs.K2 * nx
        lip = coeffs.K1 * t + coeffs.K2
        timed = coeffs.K5 * nx + coeffs.K7
    else:
        growth = coeffs.K0 + coeffs.K2 * t * nx
        lip = (coeffs.K1 + coeffs.K2) * t
        timed = (coeffs.K5 * nx + coeffs.K6 / math.sqrt(1.0 - t * t) + coeffs.K7) if t < 1 else None
    return growth, lip, timed


def regularity_audit(field, coeffs, probe_spec=None, perturbation=None):
    """Check the three velocity bounds at every probe point and the Jacobian budget.

    Args:
        field: Velocity field with analytic or finite-difference derivatives.
        coeffs: Constants the bounds are taken from.
        probe_spec: Probe times and points.
        perturbation: Optional calibrated perturbation whose Jacobian enters the
            budget check (the learned field is V + perturbation).
    """
    spec = ProbeSpec() if probe_spec is None else probe_spec
    pts = spec.probe_points(field.dim)
    nx = np.linalg.norm(pts, axis=1)
    rows = []
    for t in spec.times:
        t = float(t)
        v = np.linalg.norm(field.velocity(t, pts), axis=1)
        jac = op_norm(field.jacobian(t, pts))
        dt = np.linalg.norm(field.time_derivative(t, pts), axis=1) if t < 1.0 else None
        for i in range(pts.shape[0]):
            growth, lip, timed = _bounds(coeffs, t, float(nx[i]))
            rows.append(AuditRow("growth", t, float(nx[i]), float(v[i]), growth))
            rows.append(AuditRow("lipschitz", t, float(nx[i]), float(jac[i]), lip))
            if dt is not None and timed is not None:
                rows.append(AuditRow("time_derivative", t, float(nx[i]), float(dt[i]), timed))
    # Jacobian budget on a uniform grid.
    from .integrate import uniform_schedule

    sched = uniform_schedule(spec.budget_steps)
    if perturbation is not None:
        perturbation.calibrate(field, sched)
    total = 0.0
    for k in range(sched.N):
        t = float(sched.times[k])
        jac = field.jacobian(t, pts)
        if perturbation is not None:
            jac = jac + perturbation.jacobian(t, pts)
        total += float(sched.steps[k]) * float(np.max(op_norm(jac)))
    k8 = perturbation.K8 if perturbation is not None else coeffs.K8
    if spec.budget is not None:
        budget = float(spec.budget)
    elif coeffs.variant == RECTIFIED_VARIANT:
        budget = 0.5 * coeffs.K1 + coeffs.K2 + 0.5 * k8
    else:
        budget = 0.5 * (coeffs.K1 + coeffs.K2 + k8)
    return AuditReport(rows, total, budget, coeffs.variant)
