"""Velocity fields of the Föllmer flow and the 1-rectified flow.

Both flows move particles along Gaussian paths: at time t the law is the
target pushed through ``X_t = alpha(t) X_1 + beta(t) R^{1/2} Z`` with
``Z ~ N(0, I)``. For a Föllmer flow ``alpha = t``, ``beta^2 = 1 - t^2`` and
``R = C``; for the rectified flow ``alpha = t``, ``beta = 1 - t`` and ``R = I``.
For Gaussian-mixture targets every marginal is again a mixture, so the velocity
``E[alpha' X_1 + beta' R^{1/2} Z | X_t = x]`` and its derivatives have closed
forms. For general Gaussian-tail targets the Föllmer velocity is computed by
self-normalized importance sampling from the Gaussian factor of the posterior
of X_1 given X_t.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import streams
from .errors import (
    ConfigurationError,
    DomainError,
    NumericalDegeneracyError,
    UnsupportedFamilyError,
)
from .linalg import check_spd

FOLLMER = "follmer"
RECTIFIED = "rectified"
CLOSED_FORM = "closed_form"
QUADRATURE = "quadrature"

MIN_QUADRATURE_BUDGET = 1000
ESS_THRESHOLD = 50.0
B_REGULARIZATION = 1e-12
_CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class KernelMatrices:
    """Envelope kernels at time t.

    Attributes:
        t: Time in [0, 1].
        Abar: A t^2 + C (1 - t^2).
        K: t A Abar^{-1}.
        B: (1 - t^2) A Abar^{-1}.
    """

    t: float
    Abar: np.ndarray
    K: np.ndarray
    B: np.ndarray


def kernel_matrices(A, C, t):
    """Form the envelope kernels densely."""
    if not 0.0 <= t <= 1.0:
        raise DomainError("t must lie in [0, 1]")
    abar = A * t * t + C * (1.0 - t * t)
    a_abar = A @ np.linalg.inv(abar)
    return KernelMatrices(float(t), abar, t * a_abar, (1.0 - t * t) * a_abar)


@dataclass(frozen=True)
class QuadratureResult:
    """Modified-score estimate with its importance-sampling diagnostics."""

    value: np.ndarray
    ess: np.ndarray
    m: int
    regularized: bool


@dataclass(frozen=True)
class DerivativeResult:
    """A derivative together with how it was obtained."""

    value: np.ndarray
    method: str
    step: Optional[np.ndarray]


@dataclass(frozen=True)
class AveragedVelocity:
    """Time-averaged velocity with an adaptive-quadrature error estimate."""

    value: np.ndarray
    error: float
    intervals: int


# ---------------------------------------------------------------------------
# Gaussian paths
# ---------------------------------------------------------------------------


def _path_coefficients(kind, t):
    """Return alpha, alpha', alpha'', beta^2, beta beta', (beta beta')'."""
    if kind == FOLLMER:
        return t, 1.0, 0.0, 1.0 - t * t, -t, -1.0
    if kind == RECTIFIED:
        return t, 1.0, 0.0, (1.0 - t) ** 2, -(1.0 - t), 1.0
    raise DomainError(f"unknown flow kind '{kind}'")


def forward_marginal_params(target, s):
    """Component parameters of the forward-diffusion marginal at forward time s.

    Returns:
        (weights, means (K, d), covariances (K, d, d)) with means (1-s) m_i and
        covariances (1-s)^2 S_i + s(2-s) C.
    """
    if not 0.0 <= s <= 1.0:
        raise DomainError("forward time s must lie in [0, 1]")
    w, m, S = target.gaussian_components()
    cov = (1.0 - s) ** 2 * S + s * (2.0 - s) * target.C
    return w, (1.0 - s) * m, cov


def _as_batch(x, dim):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got {x.shape}")
    return x, single


def _softmax0(logits):
    top = logits.max(axis=0, keepdims=True)
    e = np.exp(logits - top)
    return e / e.sum(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# Velocity field
# ---------------------------------------------------------------------------


class VelocityField:
    """Evaluator for V(t, x), its Jacobian and its time derivative.

    Args:
        target: Target distribution.
        kind: "follmer" or "rectified".
        mode: "closed_form" (Gaussian, mixture, atoms, linear Bayes) or
            "quadrature" (any Gaussian-tail target; Föllmer only).
        m: Importance-sample budget per evaluation (quadrature mode).
        seed: Seed of the quadrature streams.
        ess_threshold: Minimum effective sample size accepted per evaluation.

    Times are sampler times: t = 0 is the Gaussian reference law, t = 1 the target.
    Quadrature draws are scrambled-Sobol normals keyed by (seed, t_index) and
    shared by all particles, so V is a smooth deterministic function of x for a
    fixed t_index.
    """

    def __init__(self, target, kind=FOLLMER, mode=CLOSED_FORM, m=4096, seed=0,
                 ess_threshold=ESS_THRESHOLD):
        if kind not in (FOLLMER, RECTIFIED):
            raise DomainError(f"unknown flow kind '{kind}'")
        if mode not in (CLOSED_FORM, QUADRATURE):
            raise DomainError(f"unknown evaluation mode '{mode}'")
        self.target = target
        self.kind = kind
        self.mode = mode
        self.dim = target.dim
        self.seed = int(seed)
        self.ess_threshold = float(ess_threshold)
        self.reference_cov = target.C.copy() if kind == FOLLMER else np.eye(self.dim)
        self.last_min_ess = None
        self._z_cache = {}
        if mode == CLOSED_FORM:
            try:
                w, means, covs = target.gaussian_components()
            except UnsupportedFamilyError as exc:
                raise UnsupportedFamilyError(
                    f"closed_form mode needs a Gaussian, mixture, atoms or linear-Bayes target: {exc}"
                ) from exc
            self._w = np.asarray(w, dtype=float)
            self._m = np.asarray(means, dtype=float)
            self._S = np.asarray(covs, dtype=float)
            self._logw = np.log(self._w)
            self.m = None
        else:
            if kind != FOLLMER:
                raise UnsupportedFamilyError("quadrature mode is implemented for the Föllmer flow only")
            if int(m) < MIN_QUADRATURE_BUDGET:
                raise ConfigurationError(
                    f"quadrature budget m={m} is below the minimum {MIN_QUADRATURE_BUDGET}"
                )
            self.m = int(m)
            self.tail = target.quadrature_decomposition()
            self._q = self.tail.q
            self._a = self.tail.a_eig
            self._c = self.tail.c_eig

    # ------------------------------------------------------------------
    @property
    def is_affine(self):
        return self.mode == CLOSED_FORM and self._w.size == 1

    def target_mean(self):
        exact = self.target.exact_moments()
        if exact is None:
            raise UnsupportedFamilyError("target mean has no closed form")
        return np.asarray(exact[0], dtype=float)

    # ---------------- closed form -------------------------------------
    def _mixture_state(self, t):
        a, da, dda, b2, bbd, dbbd = _path_coefficients(self.kind, t)
        R = self.reference_cov
        P = a * a * self._S + b2 * R
        try:
            chol = np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise DomainError(f"marginal covariance is singular at t={t}") from exc
        eye = np.eye(self.dim)
        Pinv = np.linalg.solve(P, np.broadcast_to(eye, P.shape))
        Pinv = 0.5 * (Pinv + np.swapaxes(Pinv, -1, -2))
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
        D = da * a * self._S + bbd * R
        return {
            "a": a, "da": da, "dda": dda, "b2": b2, "bbd": bbd, "dbbd": dbbd,
            "P": P, "Pinv": Pinv, "logdet": logdet, "D": D,
        }

    def _mixture_eval(self, t, x, need=("v",)):
        st = self._mixture_state(t)
        a, da = st["a"], st["da"]
        e = x[None, :, :] - a * self._m[:, None, :]
        Pe = np.matmul(e, st["Pinv"])
        if self._w.size == 1:
            r = np.ones((1, x.shape[0]))
            quad = None
        else:
            quad = np.sum(e * Pe, axis=-1)
            logits = self._logw[:, None] - 0.5 * st["logdet"][:, None] - 0.5 * quad
            r = _softmax0(logits)
        u = da * self._m[:, None, :] + np.matmul(Pe, st["D"])
        out = {"state": st, "e": e, "Pe": Pe, "r": r, "u": u}
        out["v"] = np.einsum("kn,kni->ni", r, u)
        return out

    def _mixture_jacobian(self, t, x):
        ev = self._mixture_eval(t, x)
        st, r, u, Pe = ev["state"], ev["r"], ev["u"], ev["Pe"]
        DP = np.matmul(st["D"], st["Pinv"])
        jac = np.einsum("kn,kij->nij", r, DP)
        if self._w.size > 1:
            g = -Pe
            gbar = np.einsum("kn,kni->ni", r, g)
            jac = jac + np.einsum("kn,kni,knj->nij", r, u, g - gbar[None])
        return jac

    def _mixture_time_derivative(self, t, x):
        ev = self._mixture_eval(t, x)
        st, r, u, Pe = ev["state"], ev["r"], ev["u"], ev["Pe"]
        a, da, dda, bbd, dbbd = st["a"], st["da"], st["dda"], st["bbd"], st["dbbd"]
        R = self.reference_cov
        Pdot = 2.0 * a * da * self._S + 2.0 * bbd * R
        Ddot = (da * da + a * dda) * self._S + dbbd * R
        PdPe = np.matmul(Pe, Pdot)  # rows are (Pdot P^{-1} e)^T
        # d/dt (P^{-1} e) = P^{-1} (-Pdot P^{-1} e - alpha' m)
        dPe = np.matmul(-PdPe - da * self._m[:, None, :], st["Pinv"])
        udot = dda * self._m[:, None, :] + np.matmul(Pe, Ddot) + np.matmul(dPe, st["D"])
        dv = np.einsum("kn,kni->ni", r, udot)
        if self._w.size > 1:
            tr = np.einsum("kij,kji->k", st["Pinv"], Pdot)
            ldot = (
                -0.5 * tr[:, None]
                + da * np.einsum("ki,kni->kn", self._m, Pe)
                + 0.5 * np.sum(PdPe * Pe, axis=-1)
            )
            lbar = np.sum(r * ldot, axis=0, keepdims=True)
            rdot = r * (ldot - lbar)
            dv = dv + np.einsum("kn,kni->ni", rdot, u)
        return dv

    def affine_coefficients(self, t):
        """Return (M, b) with V(t, x) = M x + b for single-Gaussian targets."""
        if not self.is_affine:
            raise UnsupportedFamilyError("velocity is affine only for single-Gaussian closed-form fields")
        st = self._mixture_state(t)
        DP = st["D"][0] @ st["Pinv"][0]
        b = st["da"] * self._m[0] - st["a"] * DP @ self._m[0]
        return DP, b

    # ---------------- quadrature --------------------------------------
    def _base_normals(self, t_index):
        key = int(t_index)
        z = self._z_cache.get(key)
        if z is None:
            z = streams.sobol_normals(self.m, self.dim, self.seed, streams.ROLE_QUADRATURE, key)
            if len(self._z_cache) > 8:
                self._z_cache.clear()
            self._z_cache[key] = z
        return z

    def _tilde_expectation(self, t, x, t_index):
        """Importance-sampling estimate of E_w[grad h(X_1)] given X_t = x.

        Returns (E in original coordinates, ess per particle, regularized flag).
        """
        a, c = self._a, self._c
        abar = a * t * t + c * (1.0 - t * t)
        kfac = t * a / abar
        bt = (1.0 - t * t) * a / abar
        regularized = bool(np.min(bt) < 1e-10)
        sd = np.sqrt(c * (bt + B_REGULARIZATION))
        z = self._base_normals(t_index)
        mz = z.shape[0]
        q = self._q
        tail = self.tail.tail
        xe = x @ q
        out = np.empty_like(x)
        ess = np.empty(x.shape[0])
        chunk = max(1, _CHUNK_ELEMENTS // (mz * self.dim))
        zs = z * sd
        for lo in range(0, x.shape[0], chunk):
            hi = min(lo + chunk, x.shape[0])
            mu = kfac * xe[lo:hi]
            pts_e = mu[:, None, :] + zs[None, :, :]
            pts = (pts_e.reshape(-1, self.dim)) @ q.T
            logw = tail.h(pts).reshape(hi - lo, mz)
            logw = logw - logw.max(axis=1, keepdims=True)
            w = np.exp(logw)
            w /= w.sum(axis=1, keepdims=True)
            grads = tail.grad(pts).reshape(hi - lo, mz, self.dim)
            out[lo:hi] = np.einsum("nm,nmi->ni", w, grads)
            ess[lo:hi] = 1.0 / np.sum(w * w, axis=1)
        return out, ess, regularized

    def _check_ess(self, t, t_index, ess):
        self.last_min_ess = float(ess.min())
        if ess.min() < self.ess_threshold:
            raise NumericalDegeneracyError(
                f"importance-sampling ESS {ess.min():.1f} below {self.ess_threshold:g} at t={t}",
                {"t": float(t), "t_index": int(t_index), "min_ess": float(ess.min()),
                 "particle": int(np.argmin(ess)), "m": self.m},
            )

    def _quadrature_velocity(self, t, x, t_index):
        expect, ess, _ = self._tilde_expectation(t, x, t_index)
        self._check_ess(t, t_index, ess)
        a, c = self._a, self._c
        abar = a * t * t + c * (1.0 - t * t)
        q = self._q
        v_e = (a * c / abar) * (expect @ q) + (t * (a - c) / abar) * (x @ q)
        return v_e @ q.T

    def modified_score(self, t, x, t_index=0):
        """Quadrature estimate of the modified score K_t C E_w[grad h]."""
        if self.mode != QUADRATURE:
            raise UnsupportedFamilyError("modified_score requires quadrature mode")
        x, single = _as_batch(x, self.dim)
        expect, ess, reg = self._tilde_expectation(t, x, t_index)
        self._check_ess(t, t_index, ess)
        a, c = self._a, self._c
        abar = a * t * t + c * (1.0 - t * t)
        val = ((t * a / abar) * c * (expect @ self._q)) @ self._q.T
        return QuadratureResult(val[0] if single else val, ess, self._base_normals(t_index).shape[0], reg)

    # ---------------- public evaluation -------------------------------
    def velocity(self, t, x, t_index=0):
        """V(t, x) for a single point (d,) or a batch (n, d)."""
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"time {t} outside [0, 1]")
        x, single = _as_batch(x, self.dim)
        if self.mode == CLOSED_FORM:
            v = self._mixture_eval(t, x)["v"]
        else:
            v = self._quadrature_velocity(t, x, t_index)
        return v[0] if single else v

    __call__ = velocity

    def score(self, t, x, t_index=0):
        """Föllmer score S(t, x) = C grad log p_t(x)."""
        if self.kind != FOLLMER:
            raise DomainError("score is defined for the Föllmer flow")
        x, single = _as_batch(x, self.dim)
        if self.mode == CLOSED_FORM:
            ev = self._mixture_eval(t, x)
            grad = -np.einsum("kn,kni->ni", ev["r"], ev["Pe"])
            s = grad @ self.target.C
        else:
            s = t * self._quadrature_velocity(t, x, t_index) - x
        return s[0] if single else s

    def jacobian(self, t, x, t_index=0):
        """Spatial Jacobian dV_i/dx_j, shape (n, d, d) or (d, d)."""
        return self.jacobian_result(t, x, t_index).value

    def jacobian_result(self, t, x, t_index=0):
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"time {t} outside [0, 1]")
        x, single = _as_batch(x, self.dim)
        if self.mode == CLOSED_FORM:
            jac = self._mixture_jacobian(t, x)
            res = DerivativeResult(jac, "analytic", None)
        else:
            eta = 1e-5 * (1.0 + np.linalg.norm(x, axis=1))
            if np.any(eta < 1e-300):
                raise ConfigurationError("finite-difference step underflow")
            n, d = x.shape
            eye = np.eye(d)
            plus = (x[:, None, :] + eta[:, None, None] * eye[None]).reshape(-1, d)
            minus = (x[:, None, :] - eta[:, None, None] * eye[None]).reshape(-1, d)
            vp = self._quadrature_velocity(t, plus, t_index).reshape(n, d, d)
            vm = self._quadrature_velocity(t, minus, t_index).reshape(n, d, d)
            # vp[n, j, :] is V at x + eta e_j; the Jacobian column j is its difference.
            jac = np.swapaxes((vp - vm) / (2.0 * eta[:, None, None]), 1, 2)
            res = DerivativeResult(jac, "central_difference", eta)
        if single:
            return DerivativeResult(res.value[0], res.method,
                                    None if res.step is None else res.step[:1])
        return res

    def time_derivative(self, t, x, t_index=0):
        """Partial time derivative of V, shape like x."""
        return self.time_derivative_result(t, x, t_index).value

    def time_derivative_result(self, t, x, t_index=0):
        if not 0.0 <= t < 1.0:
            raise DomainError("time derivative requires t in [0, 1)")
        x, single = _as_batch(x, self.dim)
        if self.mode == CLOSED_FORM:
            res = DerivativeResult(self._mixture_time_derivative(t, x), "analytic", None)
        else:
            eta = min(1e-4, (1.0 - t) / 10.0)
            if eta < 1e-13:
                raise ConfigurationError("temporal finite-difference step underflow")
            if t - eta < 0.0:
                v1 = self._quadrature_velocity(t + eta, x, t_index)
                v0 = self._quadrature_velocity(t, x, t_index)
                val = (v1 - v0) / eta
                method = "forward_difference"
            else:
                v1 = self._quadrature_velocity(t + eta, x, t_index)
                v0 = self._quadrature_velocity(t - eta, x, t_index)
                val = (v1 - v0) / (2.0 * eta)
                method = "central_difference"
            res = DerivativeResult(val, method, np.array([eta]))
        if single:
            return DerivativeResult(res.value[0], res.method, res.step)
        return res


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def follmer_velocity(field, t, x, t_index=0):
    """Föllmer velocity; at t = 0 this is the target mean."""
    if field.kind != FOLLMER:
        raise DomainError("follmer_velocity requires a Föllmer field")
    return field.velocity(t, x, t_index)


def rectified_velocity(field, t, x):
    """1-rectified velocity; at t = 0 this is E[X_1] - x."""
    if field.kind != RECTIFIED:
        raise DomainError("rectified_velocity requires a rectified field")
    return field.velocity(t, x)


def modified_score_quadrature(field, t, x, t_index=0):
    """Importance-sampling modified score with ESS diagnostics."""
    if not 0.0 < t <= 1.0:
        raise DomainError("modified score quadrature requires t in (0, 1]")
    return field.modified_score(t, x, t_index)


def velocity_jacobian(field, t, x, t_index=0):
    return field.jacobian_result(t, x, t_index)


def velocity_time_derivative(field, t, x, t_index=0):
    return field.time_derivative_result(t, x, t_index)


def averaged_velocity(field, x, r, t, tol=1e-10, order=10, max_intervals=4096):
    """(1/(t-r)) * integral of V(tau, x) over [r, t] by adaptive Gauss-Legendre.

    Each interval is accepted when the single-interval rule and the sum over its
    two halves agree to ``tol``; the accepted differences give the error estimate.
    """
    if not 0.0 <= r < t <= 1.0:
        raise DomainError("averaged velocity requires 0 <= r < t <= 1")
    nodes, weights = np.polynomial.legendre.leggauss(order)
    x, single = _as_batch(x, field.dim)

    def rule(lo, hi):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        acc = np.zeros_like(x)
        for node, weight in zip(nodes, weights):
            acc += weight * half * field.velocity(float(mid + half * node), x)
        return acc

    total = np.zeros_like(x)
    error = 0.0
    stack = [(r, t, rule(r, t))]
    intervals = 0
    while stack:
        lo, hi, whole = stack.pop()
        mid = 0.5 * (lo + hi)
        left, right = rule(lo, mid), rule(mid, hi)
        diff = float(np.max(np.abs(left + right - whole)))
        intervals += 1
        if diff <= tol * (hi - lo) / (t - r) or intervals >= max_intervals:
            total += left + right
            error += diff
        else:
            stack.append((lo, mid, left))
            stack.append((mid, hi, right))
    val = total / (t - r)
    return AveragedVelocity(val[0] if single else val, error / (t - r), intervals)


def reference_covariance(field):
    return check_spd(field.reference_cov, "reference covariance")
