"""Target distributions, their Gaussian-tail decompositions and oracles.

Every target exposes its dimension ``dim``, a reference covariance ``C`` (the
law N(0, C) the Föllmer flow starts from), a log density, and, where the family
allows it, exact sampling and moments. Targets whose density factors as
``exp(-x^T A^{-1} x / 2 + h(x))`` with bounded derivatives of ``h`` provide a
:class:`GaussianTailTarget` view through ``tail_decomposition()``; the velocity
quadrature and the regularity constants work from that view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp, ndtri
from scipy.stats import qmc

from . import streams
from .errors import ConfigurationError, DomainError, UnsupportedFamilyError
from .linalg import as_matrix, check_spd, commutator_norm, op_norm, psd_sqrt, shared_eigenbasis

GRID_MAX_DIM = 3
WEIGHT_TOL = 1e-12


# ---------------------------------------------------------------------------
# Small value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SupNorms:
    """Cached sup-norms of the tail remainder ``h``.

    Attributes:
        sqrtC_grad_h: sup |C^{1/2} grad h|.
        C_hess_h: sup ||C hess h|| (spectral norm).
        grad_h: sup |grad h|.
        hess_h: sup ||hess h||.
        source: "analytic" for proven upper bounds, "probed" for grid maxima,
            "declared" for user-supplied values.
    """

    sqrtC_grad_h: float
    C_hess_h: float
    grad_h: float
    hess_h: float
    source: str = "analytic"

    def as_dict(self):
        return {
            "sqrtC_grad_h": self.sqrtC_grad_h,
            "C_hess_h": self.C_hess_h,
            "grad_h": self.grad_h,
            "hess_h": self.hess_h,
            "source": self.source,
        }


@dataclass(frozen=True)
class MomentSummary:
    """Second-moment summary used by every bound.

    Attributes:
        M2: Second moment E|X|^2 of the target.
        TrC: Trace of the reference covariance.
        M0: max(TrC, M2).
        stderr: Standard error of M2 when estimated by Monte Carlo.
        method: "exact", "grid" or "monte_carlo".
    """

    M2: float
    TrC: float
    M0: float
    stderr: Optional[float] = None
    method: str = "exact"


@dataclass(frozen=True)
class SampleBatch:
    """A batch of points together with how it was produced."""

    points: np.ndarray
    seed: int
    provenance: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class AssumptionReport:
    """Result of probing the tail decomposition on a point grid."""

    max_sqrtC_grad_h: float
    max_C_hess_h: float
    commutator: float
    cached: SupNorms
    passed: bool
    offending_point: Optional[np.ndarray]
    n_probes: int
    failures: tuple = ()


# ---------------------------------------------------------------------------
# Probe grids
# ---------------------------------------------------------------------------


def halton_ball(n, d, radius, include_origin=True):
    """Deterministic low-discrepancy points in the ball of given radius.

    A (d+1)-dimensional Halton sequence supplies the radius (first coordinate)
    and a Gaussian direction (remaining coordinates through the normal
    quantile function), so the construction works in any dimension.

    Args:
        n: Number of points, including the origin when requested.
        d: Dimension.
        radius: Ball radius.
        include_origin: Prepend the origin.

    Returns:
        Array of shape (n, d).
    """
    n_rand = n - 1 if include_origin else n
    engine = qmc.Halton(d + 1, scramble=False)
    engine.fast_forward(1)
    u = engine.random(max(n_rand, 0))
    rad = radius * u[:, 0] ** (1.0 / d)
    z = ndtri(np.clip(u[:, 1:], 1e-12, 1.0 - 1e-12))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    pts = rad[:, None] * z / norms
    if include_origin:
        pts = np.vstack([np.zeros((1, d)), pts])
    return pts


def _as_points(x, dim):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("non-finite evaluation point")
    return arr, single


# ---------------------------------------------------------------------------
# Tail remainders h
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailFunction:
    """A scalar field h with gradient and Hessian oracles.

    All callables take an (n, d) array; ``h`` returns (n,), ``grad`` (n, d) and
    ``hess`` (n, d, d). ``sup`` maps a reference covariance C to a
    :class:`SupNorms` of proven upper bounds, or is None when only probing is
    possible.
    """

    h: Callable
    grad: Callable
    hess: Callable
    sup: Optional[Callable] = None
    kind: str = "custom"
    params: dict = field(default_factory=dict)


def zero_tail():
    """h = 0."""

    def sup(c):
        return SupNorms(0.0, 0.0, 0.0, 0.0, "analytic")

    return TailFunction(
        h=lambda x: np.zeros(x.shape[0]),
        grad=lambda x: np.zeros_like(x),
        hess=lambda x: np.zeros(x.shape + (x.shape[1],)),
        sup=sup,
        kind="zero",
    )


def linear_tail(b):
    """h(x) = b^T x, which shifts a Gaussian envelope."""
    b = np.asarray(b, dtype=float)

    def sup(c):
        return SupNorms(
            float(np.linalg.norm(psd_sqrt(c) @ b)), 0.0, float(np.linalg.norm(b)), 0.0, "analytic"
        )

    return TailFunction(
        h=lambda x: x @ b,
        grad=lambda x: np.broadcast_to(b, x.shape).copy(),
        hess=lambda x: np.zeros(x.shape + (x.shape[1],)),
        sup=sup,
        kind="linear",
        params={"b": b.tolist()},
    )


def cosine_tail(amplitude, frequency):
    """h(x) = a * sum_k cos(w x_k): a bounded, non-Gaussian, multimodal remainder."""
    a = float(amplitude)
    w = float(frequency)

    def grad(x):
        return -a * w * np.sin(w * x)

    def hess(x):
        diag = -a * w * w * np.cos(w * x)
        out = np.zeros(x.shape + (x.shape[1],))
        idx = np.arange(x.shape[1])
        out[:, idx, idx] = diag
        return out

    def sup(c):
        d = c.shape[0]
        g = abs(a * w) * np.sqrt(d)
        hh = abs(a) * w * w
        cn = float(op_norm(c))
        return SupNorms(float(np.sqrt(cn) * g), float(cn * hh), float(g), float(hh), "analytic")

    return TailFunction(
        h=lambda x: a * np.cos(w * x).sum(axis=1),
        grad=grad,
        hess=hess,
        sup=sup,
        kind="cosine",
        params={"amplitude": a, "frequency": w},
    )


# ---------------------------------------------------------------------------
# Dense-grid oracle for low-dimensional densities
# ---------------------------------------------------------------------------


class GridOracle:
    """Tensor-product trapezoid grid for a density in d <= 3.

    Args:
        log_density: Callable on (n, d) arrays returning (n,) unnormalized log densities.
        lo: Lower box corner (d,).
        hi: Upper box corner (d,).
        points_per_axis: Grid resolution per axis.
    """

    def __init__(self, log_density, lo, hi, points_per_axis):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        d = lo.size
        if d > GRID_MAX_DIM:
            raise UnsupportedFamilyError(f"grid oracle limited to d <= {GRID_MAX_DIM}, got {d}")
        axes = [np.linspace(lo[k], hi[k], points_per_axis) for k in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
        w1 = []
        for ax in axes:
            step = ax[1] - ax[0]
            w = np.full(ax.size, step)
            w[0] = w[-1] = 0.5 * step
            w1.append(w)
        wmesh = np.meshgrid(*w1, indexing="ij")
        weights = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
        logp = np.asarray(log_density(nodes), dtype=float)
        shift = np.max(logp)
        dens = np.exp(logp - shift) * weights
        total = dens.sum()
        self.nodes = nodes
        self.spacing = np.array([ax[1] - ax[0] for ax in axes])
        self.lo, self.hi = lo, hi
        self.log_normalizer = float(np.log(total) + shift)
        self.probs = dens / total
        self.points_per_axis = points_per_axis

    def mean(self):
        return self.probs @ self.nodes

    def covariance(self):
        mu = self.mean()
        centered = self.nodes - mu
        return (centered * self.probs[:, None]).T @ centered

    def second_moment(self):
        return float(self.probs @ np.sum(self.nodes**2, axis=1))

    def sample(self, n, rng):
        idx = rng.choice(self.nodes.shape[0], size=n, p=self.probs)
        jitter = (rng.random((n, self.nodes.shape[1])) - 0.5) * self.spacing
        return np.clip(self.nodes[idx] + jitter, self.lo, self.hi)


# ---------------------------------------------------------------------------
# Target families
# ---------------------------------------------------------------------------


class Target:
    """Common interface; concrete families override what they support."""

    family = "abstract"
    name = "target"
    dim: int
    C: np.ndarray

    def log_density(self, x):
        raise UnsupportedFamilyError(f"family '{self.family}' has no log density")

    def sample(self, n, seed):
        raise UnsupportedFamilyError(f"family '{self.family}' is not directly sampleable")

    def exact_moments(self):
        """Return (mean, second moment) or None when no closed form exists."""
        return None

    def mean(self):
        exact = self.exact_moments()
        if exact is None:
            raise UnsupportedFamilyError(f"family '{self.family}' has no closed-form mean")
        return exact[0]

    def gaussian_components(self):
        """Return (weights, means, covariances) when the target is a Gaussian mixture."""
        raise UnsupportedFamilyError(f"family '{self.family}' is not a Gaussian mixture")

    def tail_decomposition(self):
        raise UnsupportedFamilyError(f"family '{self.family}' has no Gaussian-tail decomposition")

    def quadrature_decomposition(self):
        """Gaussian-tail view used as the importance-sampling proposal.

        The quadrature identity holds for any envelope commuting with C, so
        families may pick one whose Gaussian factor is closer to the target than
        the envelope used for the regularity constants. Defaults to the latter.
        """
        return self.tail_decomposition()

    def has_components(self):
        try:
            self.gaussian_components()
        except UnsupportedFamilyError:
            return False
        return True

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"


class GaussianTailTarget(Target):
    """Density proportional to exp(-|x|_A^2 / 2 + h(x)).

    Args:
        A: Envelope covariance (SPD), commuting with ``C``.
        C: Reference covariance (SPD).
        tail: The remainder h with derivative oracles.
        sup_norms: Cached sup-norms; computed analytically from ``tail.sup`` when
            omitted, or probed on a Halton grid when no analytic bound exists.
        name: Label used in reports.
        grid_box: Optional (lo, hi) box for the grid oracle; defaults to a
            7-standard-deviation box of the envelope.
        mean_hint: Optional closed-form mean, used by the integrators at t = 0.
    """

    family = "gaussian_tail"

    def __init__(self, A, C, tail=None, sup_norms=None, name="gaussian_tail", grid_box=None,
                 grid_points=None, exact_moments=None):
        self.A = check_spd(A, "A")
        self.C = check_spd(C, "C")
        if self.A.shape != self.C.shape:
            raise DomainError("A and C must have the same shape")
        self.dim = self.A.shape[0]
        self.q, self.a_eig, self.c_eig = shared_eigenbasis(self.A, self.C)
        self.A_inv = np.linalg.inv(self.A)
        self.tail = tail if tail is not None else zero_tail()
        self.name = name
        self._grid_box = grid_box
        self._grid_points = grid_points
        self._grid = None
        self._exact_moments = exact_moments
        if sup_norms is None:
            if self.tail.sup is not None:
                sup_norms = self.tail.sup(self.C)
            else:
                sup_norms = probe_sup_norms(self)
        self.sup_norms = sup_norms

    # oracles -------------------------------------------------------------
    def h(self, x):
        x, single = _as_points(x, self.dim)
        out = self.tail.h(x)
        return out[0] if single else out

    def grad_h(self, x):
        x, single = _as_points(x, self.dim)
        out = self.tail.grad(x)
        return out[0] if single else out

    def hess_h(self, x):
        x, single = _as_points(x, self.dim)
        out = self.tail.hess(x)
        return out[0] if single else out

    def log_density(self, x):
        x, single = _as_points(x, self.dim)
        quad = np.einsum("ni,ij,nj->n", x, self.A_inv, x)
        out = -0.5 * quad + self.tail.h(x)
        return out[0] if single else out

    def tail_decomposition(self):
        return self

    def exact_moments(self):
        return self._exact_moments

    # grid oracle ---------------------------------------------------------
    def grid(self):
        if self.dim > GRID_MAX_DIM:
            raise UnsupportedFamilyError(
                f"family '{self.family}' is sampleable by grid inversion only for d <= {GRID_MAX_DIM}"
            )
        if self._grid is None:
            if self._grid_box is None:
                half = 7.0 * np.sqrt(np.diag(self.A))
                lo, hi = -half, half
            else:
                lo, hi = self._grid_box
            pts = self._grid_points or (401 if self.dim <= 2 else 101)
            self._grid = GridOracle(self.log_density, lo, hi, pts)
        return self._grid

    def sample(self, n, seed):
        return self.grid().sample(n, streams.philox(seed, streams.ROLE_ORACLE))


class GaussianMixtureTarget(Target):
    """Finite Gaussian mixture sum_i w_i N(m_i, S_i).

    Args:
        weights: Positive weights summing to one within 1e-12.
        means: Array (K, d).
        covs: Array (K, d, d) of SPD covariances.
        C: Reference covariance, identity by default.
        name: Label used in reports.
    """

    family = "mixture"

    def __init__(self, weights, means, covs, C=None, name="mixture"):
        w = np.asarray(weights, dtype=float).ravel()
        if np.any(w <= 0):
            raise DomainError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise DomainError(f"mixture weights sum to {w.sum():.15f}, expected 1")
        m = np.atleast_2d(np.asarray(means, dtype=float))
        if m.shape[0] != w.size:
            raise DomainError("one mean per mixture weight is required")
        d = m.shape[1]
        s = np.asarray(covs, dtype=float)
        if s.ndim == 2 and w.size == 1:
            s = s[None]
        if s.shape != (w.size, d, d):
            raise DomainError(f"covariances must have shape {(w.size, d, d)}, got {s.shape}")
        s = np.stack([check_spd(si, f"covariance {i}") for i, si in enumerate(s)])
        self.weights, self.means, self.covs = w, m, s
        self.dim = d
        self.C = check_spd(np.eye(d) if C is None else as_matrix(C, d, "C"), "C")
        self.name = name
        self._chol = np.linalg.cholesky(s)
        self._prec = np.linalg.inv(s)
        self._logdet = np.linalg.slogdet(s)[1]

    def gaussian_components(self):
        return self.weights, self.means, self.covs

    def _component_terms(self, x):
        diff = x[None, :, :] - self.means[:, None, :]
        pd = np.einsum("kij,knj->kni", self._prec, diff)
        quad = np.einsum("kni,kni->kn", diff, pd)
        logc = (
            np.log(self.weights)[:, None]
            - 0.5 * quad
            - 0.5 * self._logdet[:, None]
            - 0.5 * self.dim * np.log(2.0 * np.pi)
        )
        return logc, pd

    def log_density(self, x):
        x, single = _as_points(x, self.dim)
        logc, _ = self._component_terms(x)
        out = logsumexp(logc, axis=0)
        return out[0] if single else out

    def score(self, x):
        """Gradient of the log density, shape (n, d)."""
        x, single = _as_points(x, self.dim)
        logc, pd = self._component_terms(x)
        r = np.exp(logc - logsumexp(logc, axis=0))
        out = -np.einsum("kn,kni->ni", r, pd)
        return out[0] if single else out

    def score_hessian(self, x):
        """Hessian of the log density, shape (n, d, d)."""
        x, single = _as_points(x, self.dim)
        logc, pd = self._component_terms(x)
        r = np.exp(logc - logsumexp(logc, axis=0))
        g = -pd
        gbar = np.einsum("kn,kni->ni", r, g)
        out = (
            -np.einsum("kn,kij->nij", r, self._prec)
            + np.einsum("kn,kni,knj->nij", r, g, g)
            - np.einsum("ni,nj->nij", gbar, gbar)
        )
        return out[0] if single else out

    def sample(self, n, seed):
        rng = streams.philox(seed, streams.ROLE_ORACLE)
        comp = rng.choice(self.weights.size, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[comp] + np.einsum("nij,nj->ni", self._chol[comp], z)

    def exact_moments(self):
        mean = self.weights @ self.means
        m2 = float(
            self.weights @ (np.sum(self.means**2, axis=1) + np.trace(self.covs, axis1=1, axis2=2))
        )
        return mean, m2

    def covariance(self):
        mean = self.weights @ self.means
        second = np.einsum("k,kij->ij", self.weights, self.covs) + np.einsum(
            "k,ki,kj->ij", self.weights, self.means, self.means
        )
        return second - np.outer(mean, mean)

    def envelope_scale(self):
        """Smallest eigenvalue over all component covariances."""
        return float(min(np.linalg.eigvalsh(s)[0] for s in self.covs))

    def tail_decomposition(self):
        """Gaussian-tail view with envelope A = (min eigenvalue over components) * I.

        When every component covariance equals that multiple of the identity, the
        remainder h = log-sum-exp of linear terms has globally bounded derivatives and
        the sup-norms are analytic. Otherwise they are probed on the Halton grid,
        which is a convention flagged by ``sup_norms.source == "probed"``.
        """
        lam = self.envelope_scale()
        A = lam * np.eye(self.dim)
        a_inv = 1.0 / lam
        iso = all(np.allclose(s, A, rtol=0.0, atol=1e-12 * max(1.0, lam)) for s in self.covs)
        sup = None
        if iso:
            means = self.means

            def sup(c):
                root_c = psd_sqrt(c)
                g = float(np.max(np.linalg.norm(means, axis=1))) * a_inv
                sg = float(np.max(np.linalg.norm(means @ root_c, axis=1))) * a_inv
                diffs = means[:, None, :] - means[None, :, :]
                diam = float(np.max(np.linalg.norm(diffs, axis=2)))
                hh = 0.25 * diam**2 * a_inv**2
                return SupNorms(sg, float(op_norm(c)) * hh, g, hh, "analytic")

        return self._envelope_view(A, sup, "envelope")

    def quadrature_decomposition(self):
        """Gaussian-tail view whose envelope matches the target covariance.

        The covariance is used as is when it commutes with C; otherwise its mean
        eigenvalue times the identity. The remainder then stays close to linear
        over the bulk of the posterior, which keeps importance weights balanced.
        """
        cov = self.covariance()
        if commutator_norm(cov, self.C) > 1e-10:
            cov = float(np.trace(cov)) / self.dim * np.eye(self.dim)
        return self._envelope_view(cov, None, "moment_envelope", sup_norms=SupNorms(
            np.inf, np.inf, np.inf, np.inf, "unbounded"))

    def _envelope_view(self, A, sup, label, sup_norms=None):
        a_inv = np.linalg.inv(A)

        def h(x):
            quad = np.einsum("ni,ij,nj->n", x, a_inv, x)
            return logsumexp(self._component_terms(x)[0], axis=0) + 0.5 * quad

        def grad(x):
            return self.score(x) + x @ a_inv

        def hess(x):
            return self.score_hessian(x) + a_inv

        tail = TailFunction(h=h, grad=grad, hess=hess, sup=sup, kind=f"mixture_{label}")
        mean, m2 = self.exact_moments()
        return GaussianTailTarget(
            A, self.C, tail, sup_norms=sup_norms, name=f"{self.name}:{label}",
            exact_moments=(mean, m2)
        )


class GaussianTarget(GaussianMixtureTarget):
    """Single Gaussian N(mean, cov).

    Its tail decomposition uses A = cov and the linear remainder h = m^T cov^{-1} x.
    """

    family = "gaussian"

    def __init__(self, mean, cov, C=None, name="gaussian"):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        d = mean.size
        cov = as_matrix(cov, d, "cov")
        super().__init__([1.0], mean[None], cov[None], C=C, name=name)

    @property
    def mean_vector(self):
        return self.means[0]

    @property
    def cov(self):
        return self.covs[0]

    def tail_decomposition(self):
        b = self._prec[0] @ self.means[0]
        mean, m2 = self.exact_moments()
        return GaussianTailTarget(
            self.cov, self.C, linear_tail(b), name=f"{self.name}:tail", exact_moments=(mean, m2)
        )


class BoundedSupportTarget(Target):
    """Target supported in a ball of diameter R (uniform ball or weighted atoms).

    Args:
        kind: "ball" (uniform on the ball of radius R/2) or "atoms".
        diameter: R.
        delta: Early-stopping parameter used with this target.
        atoms: Array (K, d) of support points (kind="atoms").
        weights: Atom weights, uniform by default.
        center: Ball centre, origin by default.
        dim: Dimension (kind="ball").
        C: Reference covariance, identity by default.
    """

    def __init__(self, kind, diameter, delta=0.01, atoms=None, weights=None, center=None, dim=None,
                 C=None, name=None):
        if kind not in ("ball", "atoms"):
            raise DomainError(f"unknown bounded-support kind '{kind}'")
        if diameter <= 0:
            raise DomainError("diameter must be positive")
        if not 0.0 < delta < 1.0:
            raise DomainError("delta must lie in (0, 1)")
        self.kind = kind
        self.family = kind
        self.R = float(diameter)
        self.delta = float(delta)
        if kind == "atoms":
            if atoms is None:
                raise ConfigurationError("atoms target requires atom locations")
            self.atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
            k, d = self.atoms.shape
            w = np.full(k, 1.0 / k) if weights is None else np.asarray(weights, dtype=float)
            if np.any(w <= 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
                raise DomainError("atom weights must be positive and sum to 1")
            self.weights = w
        else:
            if dim is None and center is None:
                raise ConfigurationError("ball target requires dim or center")
            d = int(dim) if dim is not None else np.asarray(center).size
        self.dim = d
        self.center = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        self.C = check_spd(np.eye(d) if C is None else as_matrix(C, d, "C"), "C")
        self.name = name or kind
        if kind == "atoms":
            radius = np.max(np.linalg.norm(self.atoms - self.center, axis=1))
            if radius > 0.5 * self.R * (1.0 + 1e-12):
                raise DomainError(
                    f"atoms reach distance {radius:.6g} from the centre, beyond R/2 = {self.R / 2:.6g}"
                )

    @property
    def radius(self):
        return 0.5 * self.R

    def log_density(self, x):
        if self.kind == "atoms":
            return super().log_density(x)
        x, single = _as_points(x, self.dim)
        inside = np.linalg.norm(x - self.center, axis=1) <= self.radius
        out = np.where(inside, 0.0, -np.inf)
        return out[0] if single else out

    def sample(self, n, seed):
        rng = streams.philox(seed, streams.ROLE_ORACLE)
        if self.kind == "atoms":
            return self.atoms[rng.choice(self.weights.size, size=n, p=self.weights)].copy()
        z = rng.standard_normal((n, self.dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        r = self.radius * rng.random(n) ** (1.0 / self.dim)
        return self.center + r[:, None] * z

    def exact_moments(self):
        if self.kind == "atoms":
            return self.weights @ self.atoms, float(self.weights @ np.sum(self.atoms**2, axis=1))
        d = self.dim
        m2 = float(self.center @ self.center + self.radius**2 * d / (d + 2.0))
        return self.center.copy(), m2

    def gaussian_components(self):
        if self.kind != "atoms":
            raise UnsupportedFamilyError("the uniform ball is not a Gaussian mixture")
        k = self.weights.size
        return self.weights, self.atoms, np.zeros((k, self.dim, self.dim))


# ---------------------------------------------------------------------------
# Bayesian posterior
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ForwardOperator:
    """Forward map G with derivative oracles and sup-norms.

    ``fn`` maps (n, d) to (n, m); ``jac`` to (n, m, d); ``hess`` to (n, m, d, d).
    ``linear`` holds (H, b) when G(x) = Hx + b. ``vjp(x, w)``, when given,
    returns the rows J(x)^T w without forming the Jacobian.
    """

    fn: Callable
    jac: Callable
    hess: Callable
    out_dim: int
    sup_G: float
    sup_dG: float
    sup_d2G: float
    kind: str
    linear: Optional[tuple] = None
    vjp: Optional[Callable] = None

    def jac_t(self, x, w):
        """J(x)^T w per row, shape (n, d)."""
        if self.vjp is not None:
            return self.vjp(x, w)
        if self.linear is not None:
            return w @ self.linear[0]
        return np.einsum("nij,ni->nj", self.jac(x), w)


def linear_operator(H, b=None, probe_radius=1.0, kind="linear"):
    """G(x) = Hx + b; |G| is measured on the ball of radius ``probe_radius``."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    m, d = H.shape
    b = np.zeros(m) if b is None else np.asarray(b, dtype=float)
    hnorm = float(op_norm(H))
    return ForwardOperator(
        fn=lambda x: x @ H.T + b,
        jac=lambda x: np.broadcast_to(H, (x.shape[0], m, d)).copy(),
        hess=lambda x: np.zeros((x.shape[0], m, d, d)),
        out_dim=m,
        sup_G=hnorm * probe_radius + float(np.linalg.norm(b)),
        sup_dG=hnorm,
        sup_d2G=0.0,
        kind=kind,
        linear=(H, b),
    )


def identity_operator(d, probe_radius=1.0):
    return linear_operator(np.eye(d), probe_radius=probe_radius, kind="identity")


def constant_operator(value, d):
    value = np.atleast_1d(np.asarray(value, dtype=float))
    op = linear_operator(np.zeros((value.size, d)), value, kind="constant")
    return op


def tanh_operator(d):
    """Componentwise G(x) = tanh(x)."""
    # sup |tanh''| = 4 / (3 sqrt 3), attained where tanh^2 = 1/3.
    d2 = 4.0 / (3.0 * np.sqrt(3.0))

    def jac(x):
        out = np.zeros((x.shape[0], d, d))
        idx = np.arange(d)
        out[:, idx, idx] = 1.0 - np.tanh(x) ** 2
        return out

    def hess(x):
        t = np.tanh(x)
        out = np.zeros((x.shape[0], d, d, d))
        idx = np.arange(d)
        out[:, idx, idx, idx] = -2.0 * t * (1.0 - t * t)
        return out

    return ForwardOperator(
        fn=np.tanh, jac=jac, hess=hess, out_dim=d, sup_G=float(np.sqrt(d)), sup_dG=1.0,
        sup_d2G=d2, kind="tanh", vjp=lambda x, w: (1.0 - np.tanh(x) ** 2) * w,
    )


class BayesPosteriorTarget(Target):
    """Posterior proportional to exp(-|x|_C^2 / 2 - |G(x) - y|_Sigma^2 / 2).

    Args:
        C: Prior covariance (also the reference covariance of the flow).
        forward: Forward operator with derivative oracles and sup-norms.
        Sigma: Observation noise covariance (m x m, SPD).
        y: Observation (m,).
        name: Label used in reports.
        grid_sigmas: Half-width of the grid-oracle box in prior standard deviations.
    """

    family = "bayes_posterior"

    def __init__(self, C, forward, Sigma, y, name="bayes_posterior", grid_sigmas=6.0,
                 grid_points=None):
        self.C = check_spd(C, "C")
        self.dim = self.C.shape[0]
        self.forward = forward
        self.Sigma = check_spd(as_matrix(Sigma, forward.out_dim, "Sigma"), "Sigma")
        self.Sigma_inv = np.linalg.inv(self.Sigma)
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.y.size != forward.out_dim:
            raise DomainError("observation dimension does not match the forward operator")
        self.C_inv = np.linalg.inv(self.C)
        self.name = name
        self.grid_sigmas = float(grid_sigmas)
        self._grid_points = grid_points
        self._grid = None

    def h(self, x):
        x, single = _as_points(x, self.dim)
        r = self.forward.fn(x) - self.y
        out = -0.5 * np.einsum("ni,ij,nj->n", r, self.Sigma_inv, r)
        return out[0] if single else out

    def grad_h(self, x):
        x, single = _as_points(x, self.dim)
        r = self.forward.fn(x) - self.y
        out = -self.forward.jac_t(x, r @ self.Sigma_inv)
        return out[0] if single else out

    def hess_h(self, x):
        x, single = _as_points(x, self.dim)
        r = self.forward.fn(x) - self.y
        jac = self.forward.jac(x)
        wr = r @ self.Sigma_inv
        out = -np.einsum("nki,kl,nlj->nij", jac, self.Sigma_inv, jac) - np.einsum(
            "nk,nkij->nij", wr, self.forward.hess(x)
        )
        return out[0] if single else out

    def log_density(self, x):
        x, single = _as_points(x, self.dim)
        out = -0.5 * np.einsum("ni,ij,nj->n", x, self.C_inv, x) + self.h(x)
        return out[0] if single else out

    @property
    def is_linear(self):
        return self.forward.linear is not None

    def posterior_gaussian(self):
        """Exact Gaussian posterior for a linear forward operator."""
        if not self.is_linear:
            raise UnsupportedFamilyError("posterior is Gaussian only for a linear forward operator")
        H, b = self.forward.linear
        prec = self.C_inv + H.T @ self.Sigma_inv @ H
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        mean = cov @ (H.T @ self.Sigma_inv @ (self.y - b))
        return GaussianTarget(mean, cov, C=self.C, name=f"{self.name}:posterior")

    def gaussian_components(self):
        return self.posterior_gaussian().gaussian_components()

    def exact_moments(self):
        if self.is_linear:
            return self.posterior_gaussian().exact_moments()
        return None

    def sup_norm_bounds(self):
        """Upper bounds on the derivatives of h from the sup-norms of G."""
        f = self.forward
        s_inv = float(op_norm(self.Sigma_inv))
        resid = f.sup_G + float(np.linalg.norm(self.y))
        g = f.sup_dG * s_inv * resid
        hh = s_inv * (f.sup_dG**2 + resid * f.sup_d2G)
        cn = float(op_norm(self.C))
        return SupNorms(float(np.sqrt(cn) * g), float(cn * hh), float(g), float(hh), "analytic")

    def tail_decomposition(self):
        tail = TailFunction(
            h=lambda x: self.h(x), grad=lambda x: self.grad_h(x), hess=lambda x: self.hess_h(x),
            sup=lambda c: self.sup_norm_bounds(), kind=f"bayes_{self.forward.kind}",
        )
        exact = self.exact_moments()
        return GaussianTailTarget(self.C, self.C, tail, name=f"{self.name}:tail",
                                  exact_moments=exact)

    def grid(self):
        if self.dim > GRID_MAX_DIM:
            raise UnsupportedFamilyError(
                f"family '{self.family}' is sampleable by grid inversion only for d <= {GRID_MAX_DIM}"
            )
        if self._grid is None:
            half = self.grid_sigmas * np.sqrt(np.diag(self.C))
            pts = self._grid_points or (401 if self.dim <= 2 else 101)
            self._grid = GridOracle(self.log_density, -half, half, pts)
        return self._grid

    def sample(self, n, seed):
        if self.is_linear:
            return self.posterior_gaussian().sample(n, seed)
        return self.grid().sample(n, streams.philox(seed, streams.ROLE_ORACLE))


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def log_density(target, x):
    """Unnormalized log density of ``target`` at ``x`` (single point or batch)."""
    return target.log_density(x)


def moments(target, budget=None, seed=0):
    """Second-moment summary of ``target``.

    Closed-form families return exact values. Other families need a Monte Carlo
    budget and report the standard error of M2.

    Raises:
        ConfigurationError: If a Monte Carlo estimate is required and ``budget`` is 0 or None.
    """
    trc = float(np.trace(target.C))
    exact = target.exact_moments()
    if exact is not None:
        m2 = float(exact[1])
        return MomentSummary(m2, trc, max(trc, m2), None, "exact")
    if not budget:
        raise ConfigurationError("Monte Carlo moments require a positive sample budget")
    x = sample_target_oracle(target, int(budget), seed).points
    sq = np.sum(x * x, axis=1)
    m2 = float(sq.mean())
    se = float(sq.std(ddof=1) / np.sqrt(sq.size)) if sq.size > 1 else float("inf")
    return MomentSummary(m2, trc, max(trc, m2), se, "monte_carlo")


def sample_target_oracle(target, n, seed):
    """Draw ``n`` i.i.d. target samples; deterministic for a fixed seed.

    Raises:
        UnsupportedFamilyError: If the family cannot be sampled (the message names it).
    """
    if n < 0:
        raise DomainError("sample count must be nonnegative")
    try:
        pts = target.sample(int(n), int(seed))
    except UnsupportedFamilyError as exc:
        raise UnsupportedFamilyError(f"cannot sample family '{target.family}': {exc}") from exc
    return SampleBatch(np.asarray(pts, dtype=float), int(seed),
                       {"source": "target_oracle", "family": target.family, "name": target.name})


def default_probe_grid(tail, n=512):
    radius = 6.0 * np.sqrt(float(op_norm(tail.A)))
    return halton_ball(n, tail.dim, radius, include_origin=True)


def _probe_values(tail, pts):
    root_c = psd_sqrt(tail.C)
    g = tail.tail.grad(pts)
    hs = tail.tail.hess(pts)
    sg = np.linalg.norm(g @ root_c, axis=1)
    ch = op_norm(np.einsum("ij,njk->nik", tail.C, hs))
    return g, hs, sg, ch


def probe_sup_norms(tail, pts=None):
    """Grid maxima of the four tail norms (a lower estimate of the true sup)."""
    pts = default_probe_grid(tail) if pts is None else pts
    g, hs, sg, ch = _probe_values(tail, pts)
    return SupNorms(
        float(sg.max()), float(ch.max()), float(np.linalg.norm(g, axis=1).max()),
        float(op_norm(hs).max()), "probed",
    )


def validate_assumptions(target, probe_grid=None, rtol=1e-9):
    """Probe the Gaussian-tail assumption on a grid.

    Args:
        target: Any target with a tail decomposition.
        probe_grid: (n, d) points; defaults to a Halton ball of radius 6 sqrt(||A||) plus the origin.
        rtol: Relative slack when comparing probed maxima with the cached sup-norms.

    Returns:
        AssumptionReport with the probed maxima, the commutator norm and pass/fail.
    """
    tail = target.tail_decomposition()
    pts = default_probe_grid(tail) if probe_grid is None else np.atleast_2d(probe_grid)
    if pts.shape[0] == 0:
        raise DomainError("probe grid is empty")
    _, _, sg, ch = _probe_values(tail, pts)
    cached = tail.sup_norms
    failures = []
    offending = None
    bad_g = sg > cached.sqrtC_grad_h * (1.0 + rtol) + 1e-14
    bad_h = ch > cached.C_hess_h * (1.0 + rtol) + 1e-14
    if np.any(bad_g):
        failures.append("sqrtC_grad_h")
        offending = pts[int(np.argmax(np.where(bad_g, sg, -np.inf)))]
    if np.any(bad_h):
        failures.append("C_hess_h")
        if offending is None:
            offending = pts[int(np.argmax(np.where(bad_h, ch, -np.inf)))]
    comm = commutator_norm(tail.A, tail.C)
    if comm > 1e-10:
        failures.append("commutator")
    if not (np.isfinite(cached.sqrtC_grad_h) and np.isfinite(cached.C_hess_h)):
        failures.append("non_finite_sup_norm")
    return AssumptionReport(
        float(sg.max()), float(ch.max()), comm, cached, not failures, offending, pts.shape[0],
        tuple(failures),
    )


def forward_diffuse(x0, s, C, seed, key=0):
    """Sample the forward transition X_s | x0 ~ N((1-s) x0, s(2-s) C).

    Args:
        x0: (n, d) starting points.
        s: Forward time in [0, 1].
        C: Reference covariance.
        seed: Stream seed.
        key: Extra stream key to separate independent forward draws.
    """
    if not 0.0 <= s <= 1.0:
        raise DomainError("forward time must lie in [0, 1]")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    z = streams.standard_normals(x0.shape[0], x0.shape[1], seed, streams.ROLE_FORWARD, key)
    return (1.0 - s) * x0 + np.sqrt(s * (2.0 - s)) * z @ psd_sqrt(C)
