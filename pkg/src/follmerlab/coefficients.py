"""Dimension-free regularity constants, W2 error bounds and step-count estimates.

The constants describe how fast the Föllmer velocity of a Gaussian-tail target
can grow in space, vary across space and change in time:

* ``|V(t, x)| <= K0 + K2 t |x|``
* ``||grad V(t, .)|| <= (K1 + K2) t``
* ``|d/dt V(t, x)| <= K5 |x| + K6 / sqrt(1 - t^2) + K7``

They depend only on the envelope pair (A, C) and the sup-norms of the tail
remainder h, never on the dimension. Every sup over t is taken on a uniform
1001-point grid of [0, 1] in the shared eigenbasis of (A, C), where each
matrix expression reduces to one rational function of t per eigen-direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import ConfigurationError, DomainError
from .linalg import op_norm, shared_eigenbasis

BASE = "base"
MANIFOLD = "manifold"
BAYES = "bayes"
RECTIFIED = "rectified"

T_GRID_POINTS = 1001
_SQRT3 = math.sqrt(3.0)
_C4_SQUARE = (1.0 + math.sqrt(6.0)) ** 2 / (4.0 * (1.0 + math.sqrt(2.0)))
_K5_CROSS = 2.0 * (1.0 + math.sqrt(2.0))

CONSTANT_NAMES = ("K", "K0", "K1", "K2", "K3", "K4", "K5", "K6", "K7", "K8", "K9",
                  "C1", "C2", "C3", "C4")


@dataclass(frozen=True)
class CoefficientSet:
    """The regularity constants of one target and flow.

    Attributes:
        K, K0 ... K7, K9, C1 ... C4: Constants of the velocity bounds (see module docs).
        K8: Jacobian budget of the velocity perturbation; 0 when no perturbation is active.
        variant: "base", "manifold" (early-stopped bounded support), "bayes"
            (posterior with A = C) or "rectified" (1-rectified flow).
        R: Support diameter (manifold variant).
        delta: Early-stopping parameter (manifold variant).
        diagnostics: Extra values such as the closed-form and numerical candidates
            for C1 and C2, and which constants were probed rather than derived.
    """

    K: float
    K0: float
    K1: float
    K2: float
    K3: float
    K4: float
    K5: float
    K6: float
    K7: float
    K9: float
    C1: float
    C2: float
    C3: float
    C4: float
    K8: float = 0.0
    variant: str = BASE
    R: Optional[float] = None
    delta: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def with_k8(self, k8):
        """Copy with the perturbation Jacobian budget set to ``k8``."""
        if not k8 >= 0.0:
            raise DomainError("K8 must be nonnegative")
        return replace(self, K8=float(k8))

    def values(self):
        """Ordered mapping name -> value of every constant."""
        return {name: float(getattr(self, name)) for name in CONSTANT_NAMES}

    def as_dict(self):
        out = self.values()
        out["variant"] = self.variant
        if self.R is not None:
            out["R"] = self.R
        if self.delta is not None:
            out["delta"] = self.delta
        out["diagnostics"] = dict(self.diagnostics)
        return out

    def is_valid(self):
        """True when every constant is finite and nonnegative."""
        vals = np.array(list(self.values().values()))
        return bool(np.all(np.isfinite(vals)) and np.all(vals >= 0.0))

    def k9_recomputed(self):
        """Recompute K9 from K6 and K7 with the formula of this variant."""
        if self.variant == BAYES:
            return self.diagnostics["sqrt_norm_C"] * self.K1 * math.pi + self.K7
        return 0.25 * self.K6 * math.pi + self.K7


@dataclass(frozen=True)
class BoundReport:
    """A theoretical W2 bound with its inputs and an optional empirical comparison.

    Attributes:
        value: The bound, possibly ``inf`` when its exponential prefactor overflows.
        log_value: Natural log of the bound (finite whenever the inputs are).
        h: Step size.
        eps: Root-mean-square velocity error.
        M0: max(Tr C, E|X|^2).
        coeffs: The constants used.
        empirical: Measured W2, if supplied.
        mc_error: Declared Monte Carlo error of ``empirical``.
        slack: value - empirical, when an empirical value is present.
    """

    value: float
    log_value: float
    h: float
    eps: float
    M0: float
    coeffs: CoefficientSet
    empirical: Optional[float] = None
    mc_error: float = 0.0
    slack: Optional[float] = None

    def with_empirical(self, empirical, mc_error=0.0):
        emp = float(empirical)
        return replace(self, empirical=emp, mc_error=float(mc_error), slack=self.value - emp)

    @property
    def holds(self):
        """Whether the empirical value respects the bound up to the declared error."""
        if self.empirical is None:
            return None
        return bool(self.empirical <= self.value + self.mc_error)

    def as_dict(self):
        return {
            "value": self.value, "log_value": self.log_value, "h": self.h, "eps": self.eps,
            "M0": self.M0, "empirical": self.empirical, "mc_error": self.mc_error,
            "slack": self.slack, "holds": self.holds, "variant": self.coeffs.variant,
        }


@dataclass(frozen=True)
class ComplexityEstimate:
    """Step count guaranteeing a W2 accuracy through the theoretical bound.

    Attributes:
        N: Smallest step count whose bound is at most ``eps0`` (None if the bound is infinite).
        h: The implied step size 1/N.
        c: Rate constant with N = ceil(c sqrt(M0) / eps0).
        M0: Second-moment proxy used.
        trace_C: Trace of C when supplied; with C = I it is the dimension.
    """

    N: Optional[int]
    h: Optional[float]
    c: float
    M0: float
    eps0: float
    trace_C: Optional[float] = None


@dataclass(frozen=True)
class LipschitzBounds:
    """Lipschitz constants of the exact flow map, the learned flow map, and the
    special bound for a target exp(-kappa |x|^2 / 2 + h) with |grad h| <= L and
    ||hess h|| <= L1."""

    flow_bound: float
    learned_bound: float
    gtail_special: Optional[float] = None


# ---------------------------------------------------------------------------
# Sup expressions of the base constants
# ---------------------------------------------------------------------------


def _t_grid():
    return np.linspace(0.0, 1.0, T_GRID_POINTS)


def _scalar_sups(a, c, t):
    """Sups over the t grid of every scalar expression, in the eigen-directions."""
    tt = t[:, None] ** 2
    abar = a * tt + c * (1.0 - tt)
    a_c = a - c
    abar2 = abar * abar
    dk = a * (c - a_c * tt) / abar2
    db = -2.0 * t[:, None] * a * a / abar2
    return {
        "K": float(np.max(np.abs(a / abar))),
        "K2": float(np.max(np.abs(a_c / abar))),
        "K3": float(np.max(np.abs(2.0 * a * a_c / abar2))),
        "K4": float(np.max(np.abs(2.0 * c * a_c / abar2))),
        "dK": float(np.max(np.abs(dk))),
        "dB": float(np.max(np.abs(db))),
    }


def _dense_sups(A, C, t):
    """Same sups with every matrix formed and inverted explicitly."""
    best = dict.fromkeys(("K", "K2", "K3", "K4", "dK", "dB"), 0.0)
    a_c = A - C
    for tk in t:
        abar = A * tk * tk + C * (1.0 - tk * tk)
        inv = np.linalg.inv(abar)
        inv2 = inv @ inv
        a_inv = A @ inv
        # d/dt of A abar^{-1} t and of A abar^{-1}(1 - t^2), with d abar / dt = 2t(A - C).
        dabar_inv = -inv @ (2.0 * tk * a_c) @ inv
        dk = a_inv + tk * A @ dabar_inv
        db = -2.0 * tk * a_inv + (1.0 - tk * tk) * A @ dabar_inv
        cand = {
            "K": op_norm(a_inv),
            "K2": op_norm(a_c @ inv),
            "K3": op_norm(2.0 * A @ a_c @ inv2),
            "K4": op_norm(2.0 * C @ a_c @ inv2),
            "dK": op_norm(dk),
            "dB": op_norm(db),
        }
        for key, val in cand.items():
            best[key] = max(best[key], float(val))
    return best


def _finite_max(values):
    vals = [float(v) for v in values if v is not None and np.isfinite(v)]
    return max(vals) if vals else None


def c1_c2_closed_forms(a, c, hess_h):
    """Closed-form candidates of the tabulated C1 and C2 expressions.

    The expressions involve tau = 1 - 1 / (2 ||C|| ||hess h||); candidates that
    need tau are dropped when tau is negative or undefined, and any non-finite
    candidate (for example when A = C) is dropped.

    Returns:
        (list of C1 candidates, list of C2 candidates), each possibly containing None.
    """
    na, nc = float(np.max(np.abs(a))), float(np.max(np.abs(c)))
    n_ac = float(np.max(np.abs(a - c)))
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = 1.0 - 1.0 / (2.0 * nc * hess_h) if hess_h > 0 else -np.inf
        c1 = [float(np.max(np.abs(a - 2.0 * c))) / na, na / (8.0 * nc)]
        c2 = [2.0]
        if 0.0 <= tau < 1.0:
            denom = (nc + n_ac * tau) ** 2
            c1.append(na * float(np.max(np.abs((a - c) * tau - c))) / denom)
            c2.append(2.0 * na * na * math.sqrt(tau) / denom)
        if n_ac > 0:
            c2.append(9.0 * na * na / (8.0 * nc * nc) * math.sqrt(nc / (3.0 * n_ac)))
    return c1, c2


def _assemble(K, K0, K1, K2, K3, K4, C1, C2, norm_c, variant, diagnostics, **extra):
    """Substitute the seven primary values into the derived constants."""
    sqrt_k1 = math.sqrt(K1)
    K5 = max(3.0 * K1 * C1, _K5_CROSS * K0 * sqrt_k1 * C1) + K2 + K4
    K6 = 2.0 * K1 / K * math.sqrt(norm_c) * C2
    C3 = 2.0 * K1 * C2 * (sqrt_k1 + K0)
    C4 = (2.0 * _SQRT3 * K0 * K1 * C2 + 0.5 * K0**1.5 * sqrt_k1 * C2
          + _C4_SQUARE * K0 * K0 * sqrt_k1 * C2)
    K7 = max(C3, C4) + K0 * K3 / K
    K9 = 0.25 * K6 * math.pi + K7
    return CoefficientSet(K=K, K0=K0, K1=K1, K2=K2, K3=K3, K4=K4, K5=K5, K6=K6, K7=K7, K9=K9,
                          C1=C1, C2=C2, C3=C3, C4=C4, variant=variant,
                          diagnostics=diagnostics, **extra)


def compute_base_constants(target, dense=False):
    """Base constants of a Gaussian-tail target.

    Args:
        target: A target with a Gaussian-tail view (anything with
            ``tail_decomposition()``), or the view itself.
        dense: Recompute every sup with explicit matrix inverses instead of the
            eigenbasis scalars (a cross-check; slower).

    Returns:
        CoefficientSet with ``variant == "base"``. The diagnostics hold the
        closed-form and numerical candidates of C1 and C2 and the source of the
        sup-norms ("analytic" or "probed").

    Raises:
        UnsupportedConfigurationError: If A and C do not commute.
    """
    tail = target.tail_decomposition()
    A, C = tail.A, tail.C
    q, a, c = shared_eigenbasis(A, C)
    t = _t_grid()
    sups = _dense_sups(A, C, t) if dense else _scalar_sups(a, c, t)
    sn = tail.sup_norms
    if not (np.isfinite(sn.sqrtC_grad_h) and np.isfinite(sn.C_hess_h)):
        raise ConfigurationError("sup-norms of the tail remainder must be finite")
    norm_c = float(np.max(c))
    K = sups["K"]
    K0 = K * math.sqrt(norm_c) * sn.sqrtC_grad_h
    K1 = K * K * (sn.C_hess_h + sn.sqrtC_grad_h**2)
    c1_closed, c2_closed = c1_c2_closed_forms(a, c, sn.hess_h)
    C1 = max(_finite_max(c1_closed) or 0.0, sups["dK"])
    C2 = max(_finite_max(c2_closed) or 0.0, sups["dB"])
    diag = {
        "C1_closed_form": _finite_max(c1_closed),
        "C1_numeric": sups["dK"],
        "C2_closed_form": _finite_max(c2_closed),
        "C2_numeric": sups["dB"],
        "sup_norm_source": sn.source,
        "K_upper": max(1.0, float(np.max(a / c))),
        "path": "dense" if dense else "eigenbasis",
        "target": tail.name,
    }
    return _assemble(K, K0, K1, sups["K2"], sups["K3"], sups["K4"], C1, C2, norm_c, BASE, diag)


def manifold_sigma2(delta):
    return 1.0 - (1.0 - delta) ** 2


def compute_manifold_constants(R, delta):
    """Constants of an early-stopped target with support diameter R.

    Uses C = I and the envelope A = sigma^2 I with sigma^2 = 1 - (1 - delta)^2.
    The Hessian sup-norm entering C1* and C2* is taken as K1* - K0*^2 = 2 R^2 / sigma^4,
    the value consistent with the tabulated K1*.

    Raises:
        DomainError: If R <= 0 or delta is outside (0, 1).
    """
    if not R > 0:
        raise DomainError("diameter R must be positive")
    if not 0.0 < delta < 1.0:
        raise DomainError("early-stopping delta must lie in (0, 1)")
    s2 = manifold_sigma2(delta)
    q = (1.0 - delta) ** 2
    ratio = R / s2
    K0 = ratio
    K1 = 3.0 * ratio**2
    K2 = 1.0 / s2
    K3 = 2.0 / s2
    K4 = 2.0 / s2**2
    hess = 2.0 * R * R / s2**2
    tau = 1.0 - 1.0 / (2.0 * hess)
    c1 = [s2 * abs(q * tau - 1.0) / abs(1.0 + q * tau) ** 2, abs(-q - 1.0) / abs(s2), abs(s2) / 8.0]
    c2 = [2.0, 9.0 * s2**2 / (8.0 * _SQRT3 * (1.0 - delta))]
    if tau >= 0.0:
        c2.append(2.0 * s2**2 * math.sqrt(tau) / abs(1.0 + q * tau) ** 2)
    C1 = max(c1)
    C2 = max(c2)
    K5 = 9.0 * C1 * R * R / s2**2 + 2.0 / s2**2 + 1.0 / s2
    K6 = 6.0 * C2 * R * R / s2**2
    C3 = 2.0 * K1 * C2 * (math.sqrt(K1) + K0)
    C4 = (2.0 * _SQRT3 * K0 * K1 * C2 + 0.5 * K0**1.5 * math.sqrt(K1) * C2
          + _C4_SQUARE * K0 * K0 * math.sqrt(K1) * C2)
    K7 = 6.0 * (_SQRT3 + 1.0) * ratio**3 * C2 + 2.0 * R / s2**2
    K9 = 0.25 * K6 * math.pi + K7
    diag = {"sigma2": s2, "hess_h": hess, "C1_candidates": c1, "C2_candidates": c2}
    return CoefficientSet(K=1.0, K0=K0, K1=K1, K2=K2, K3=K3, K4=K4, K5=K5, K6=K6, K7=K7, K9=K9,
                          C1=C1, C2=C2, C3=C3, C4=C4, variant=MANIFOLD, R=float(R),
                          delta=float(delta), diagnostics=diag)


def compute_bayes_constants(target):
    """Constants of a Bayesian posterior with prior covariance C.

    With A = C the envelope kernels are trivial (K = 1, K2 = K3 = K4 = 0) and the
    remaining constants follow from the sup-norms of the forward operator G, the
    noise covariance and the observation.

    Raises:
        ConfigurationError: If any sup-norm of G is missing or non-finite.
    """
    f = target.forward
    for name in ("sup_G", "sup_dG", "sup_d2G"):
        val = getattr(f, name, None)
        if val is None or not np.isfinite(val):
            raise ConfigurationError(f"forward operator is missing a finite {name}")
    norm_c = float(op_norm(target.C))
    s_inv = float(op_norm(target.Sigma_inv))
    s_inv2 = float(op_norm(target.Sigma_inv @ target.Sigma_inv))
    resid = f.sup_G + float(np.linalg.norm(target.y))
    K0 = norm_c * s_inv * f.sup_dG * resid
    K1 = norm_c * (s_inv * (f.sup_dG**2 + resid * f.sup_d2G) + s_inv2 * f.sup_dG**2 * resid**2)
    sqrt_c = math.sqrt(norm_c)
    sqrt_k1 = math.sqrt(K1)
    K5 = max(3.0 * K1, _K5_CROSS * K0 * sqrt_k1)
    K6 = 4.0 * sqrt_c * K1
    C3 = 4.0 * K1 * (sqrt_k1 + K0)
    C4 = (4.0 * _SQRT3 * K0 * K1 + K0**1.5 * sqrt_k1
          + (1.0 + math.sqrt(6.0)) ** 2 / (2.0 * (1.0 + math.sqrt(2.0))) * K0 * K0 * sqrt_k1)
    K7 = max(C3, C4)
    K9 = sqrt_c * K1 * math.pi + K7
    diag = {"sqrt_norm_C": sqrt_c, "forward": f.kind, "residual_bound": resid}
    return CoefficientSet(K=1.0, K0=K0, K1=K1, K2=0.0, K3=0.0, K4=0.0, K5=K5, K6=K6, K7=K7, K9=K9,
                          C1=1.0, C2=2.0, C3=C3, C4=C4, variant=BAYES, diagnostics=diag)


# ---------------------------------------------------------------------------
# 1-rectified flow
# ---------------------------------------------------------------------------


def rectified_kernel_sups(a, t=None):
    """Sups of |A hatA_t^{-1}| and |(I - (1 - t) hatA_t^{-1}) / t| with hatA_t = A t^2 + (1-t)^2 I.

    The second expression equals ((a + 1) t - 1) / hatA_t per eigen-direction,
    which stays bounded at t = 0.
    """
    t = _t_grid() if t is None else t
    tt = t[:, None]
    ahat = a * tt * tt + (1.0 - tt) ** 2
    k_hat = float(np.max(np.abs(a / ahat)))
    k2_hat = float(np.max(np.abs(((a + 1.0) * tt - 1.0) / ahat)))
    return k_hat, k2_hat


def compute_rectified_constants(target, field=None, calibration=None):
    """Constants of the 1-rectified velocity bounds.

    ``Khat``, ``Khat0``, ``Khat1`` and ``Khat2`` follow from the tail envelope and
    the unweighted sup-norms of grad h and hess h. The time-derivative constants
    have no closed form, so ``Khat5`` and ``Khat7`` are calibrated on a probe set
    (the smallest values making ``|dV/dt| <= Khat5 |x| + Khat7`` hold there) and
    ``Khat6`` is 0. The calibration is flagged in the diagnostics.

    Args:
        target: Target with a Gaussian-tail view.
        field: Rectified velocity field used for the calibration; without it the
            time-derivative constants are left at 0 and flagged as missing.
        calibration: Optional (times, points) probe set; defaults to 41 times in
            [0, 0.975] and a Halton ball of radius 3 sqrt(||A|| + 1).
    """
    tail = target.tail_decomposition()
    _, a, _ = shared_eigenbasis(tail.A, np.eye(tail.dim))
    k_hat, k2_hat = rectified_kernel_sups(a)
    sn = tail.sup_norms
    K0 = k_hat * sn.grad_h
    K1 = k_hat * k_hat * (sn.hess_h + sn.grad_h**2)
    K5 = K7 = 0.0
    source = "missing"
    if field is not None:
        from .targets import halton_ball

        if calibration is None:
            times = np.linspace(0.0, 0.975, 41)
            radius = 3.0 * math.sqrt(float(np.max(a)) + 1.0)
            pts = halton_ball(256, tail.dim, radius, include_origin=True)
        else:
            times, pts = calibration
        K5, K7 = _calibrate_time_derivative(field, times, pts)
        source = "probed"
    diag = {"time_derivative_source": source, "sup_norm_source": sn.source}
    return CoefficientSet(K=k_hat, K0=K0, K1=K1, K2=k2_hat, K3=0.0, K4=0.0, K5=K5, K6=0.0, K7=K7,
                          K9=K7, C1=0.0, C2=0.0, C3=0.0, C4=0.0, variant=RECTIFIED,
                          diagnostics=diag)


def _calibrate_time_derivative(field, times, pts):
    norms = np.linalg.norm(pts, axis=1)
    inner = norms <= 1.0
    k7 = 0.0
    k5 = 0.0
    for t in times:
        dv = np.linalg.norm(field.time_derivative(float(t), pts), axis=1)
        if np.any(inner):
            k7 = max(k7, float(dv[inner].max()))
        if np.any(~inner):
            k5 = max(k5, float(np.max(dv[~inner] / norms[~inner])))
    return k5, k7


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------


def log_prefactor(coeffs, include_k8=True):
    """Log of the exponential error-amplification factor of a variant."""
    k8 = coeffs.K8 if include_k8 else 0.0
    if coeffs.variant == MANIFOLD:
        return 3.0 * coeffs.R**2 / (2.0 * coeffs.delta**2) + 1.0 / (2.0 * coeffs.delta) + 0.5 * k8
    if coeffs.variant == RECTIFIED:
        return 0.5 * coeffs.K1 + coeffs.K2 + 0.5 * k8
    return 0.5 * (coeffs.K1 + coeffs.K2 + k8)


def _safe_exp_times(log_a, b):
    if b == 0.0:
        return 0.0, -math.inf
    log_v = log_a + math.log(b)
    return (math.exp(log_v) if log_v < 700.0 else math.inf), log_v


def theoretical_w2_bound(coeffs, h, eps, M0):
    """W2 error bound of the Euler sampler with step ``h`` and velocity error ``eps``.

    ``exp(L) * (sqrt(3) (K5 sqrt(M0) + K9) h + 2 eps)`` where L is
    ``(K1 + K2 + K8) / 2`` for the base and Bayes variants,
    ``3 R^2 / (2 delta^2) + 1 / (2 delta) + K8 / 2`` for the manifold variant and
    ``Khat1 / 2 + Khat2 + K8 / 2`` for the rectified flow. The value is ``inf``
    when the prefactor overflows; ``log_value`` stays finite.
    """
    if not 0.0 <= h <= 1.0:
        raise DomainError("step size must lie in [0, 1]")
    if eps < 0 or M0 < 0:
        raise DomainError("eps and M0 must be nonnegative")
    step = _SQRT3 * (coeffs.K5 * math.sqrt(M0) + coeffs.K9) * h + 2.0 * eps
    value, log_v = _safe_exp_times(log_prefactor(coeffs), step)
    return BoundReport(value=value, log_value=log_v, h=float(h), eps=float(eps), M0=float(M0),
                       coeffs=coeffs)


def complexity_estimate(coeffs, M0, eps0, trace_C=None):
    """Smallest N with theoretical_w2_bound(1/N, 0) <= eps0.

    Starts from N = ceil(c sqrt(M0) / eps0) with
    c = exp(L) sqrt(3) (K5 + K9 / sqrt(M0)) and corrects for rounding so that
    bound(1/N) <= eps0 < bound(1/(N-1)).
    """
    if not eps0 > 0:
        raise DomainError("target accuracy eps0 must be positive")
    if not M0 > 0:
        raise DomainError("M0 must be positive")
    lp = log_prefactor(coeffs)
    rate = _SQRT3 * (coeffs.K5 + coeffs.K9 / math.sqrt(M0))
    if rate == 0.0:
        return ComplexityEstimate(1, 1.0, 0.0, float(M0), float(eps0), trace_C)
    log_c = lp + math.log(rate)
    log_n = log_c + 0.5 * math.log(M0) - math.log(eps0)
    c = math.exp(log_c) if log_c < 700 else math.inf
    if log_n > 60.0:
        return ComplexityEstimate(None, None, c, float(M0), float(eps0), trace_C)

    def bound(n):
        return theoretical_w2_bound(coeffs, 1.0 / n, 0.0, M0).value

    n = max(1, int(math.ceil(math.exp(log_n))))
    while bound(n) > eps0:
        n += 1
    while n > 1 and bound(n - 1) <= eps0:
        n -= 1
    return ComplexityEstimate(n, 1.0 / n, c, float(M0), float(eps0), trace_C)


def gtail_lipschitz(kappa, L, L1):
    """(1 / sqrt(kappa)) exp((L^2 + L1) / (2 kappa)) for a strongly log-concave envelope."""
    if not kappa > 0:
        raise DomainError("kappa must be positive")
    return math.exp((L * L + L1) / (2.0 * kappa)) / math.sqrt(kappa)


def lipschitz_bounds(coeffs, kappa=None, L=None, L1=None):
    """Lipschitz constants of the exact and the learned (perturbed) flow maps."""
    flow = math.exp(min(log_prefactor(replace(coeffs, K8=0.0)), 700.0))
    learned = math.exp(min(log_prefactor(coeffs), 700.0))
    special = None
    if kappa is not None:
        special = gtail_lipschitz(kappa, 0.0 if L is None else L, 0.0 if L1 is None else L1)
    return LipschitzBounds(flow, learned, special)


def constants_table(coeffs):
    """Rows (name, value) for printing or CSV export."""
    rows = list(coeffs.values().items())
    rows.append(("variant", coeffs.variant))
    return rows
