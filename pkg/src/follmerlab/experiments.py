"""End-to-end studies built on the samplers, constants and metrics.

Every study returns an :class:`ExperimentResult` holding scalar results, table
rows for ``curve.csv``, named assertions and the constants it used.
:func:`persist` writes the run directory (``manifest.json``, ``timing.json``,
``curve.csv``, ``plot.svg``, ``constants.csv`` and, where relevant,
``samples.bin`` with its ``samples.hdr``) and :func:`replay` re-executes a
manifest and checks that every number is reproduced exactly.

Studies:
    * :func:`convergence_curve`: W2 against the step size.
    * :func:`dimension_scaling`: step count needed for a W2 target, as d grows.
    * :func:`epsilon_sweep`: W2 against the size of a velocity perturbation.
    * :func:`early_stopping_study`: bounded-support targets integrated to 1 - delta.
    * :func:`flow_comparison`: Föllmer, 1-rectified and probability-flow samplers.
    * :func:`bayes_posterior_demo`: posterior moments against a grid oracle.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import __version__, streams
from .artifacts import prepare_output_dir, write_csv, write_json, write_plot, write_samples
from .coefficients import (
    compute_base_constants,
    compute_bayes_constants,
    compute_manifold_constants,
    compute_rectified_constants,
    complexity_estimate,
    constants_table,
    lipschitz_bounds,
    log_prefactor,
    theoretical_w2_bound,
)
from .config import build_target, config_digest, load_config, perturbation_mode, resolve
from .errors import ConfigurationError, UnsupportedFamilyError
from .integrate import (
    PerturbationModel,
    custom_schedule,
    euler_gaussian_law,
    euler_run,
    exact_flow_map,
    exp_euler_prob_ode_run,
    initial_batch,
    lipschitz_probe_run,
    log_uniform_schedule,
    make_field,
    reference_batch,
    run_flow,
    uniform_schedule,
)
from .metrics import DEFAULT_FLOOR_C, EXACT_CAP, ProbeSpec, mc_floor, regularity_audit, w2_exact, w2_gaussian_closed_form
from .scorefield import CLOSED_FORM, FOLLMER, QUADRATURE, RECTIFIED
from .targets import GaussianTarget, GridOracle, forward_diffuse, moments, sample_target_oracle

PROB_ODE = "prob-ode"
FLOWS = (FOLLMER, RECTIFIED, PROB_ODE)
ZERO_TOL = 1e-12
MOMENT_BUDGET = 100_000


# ---------------------------------------------------------------------------
# Result containers
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    """Outcome of one study.

    Attributes:
        kind: Study name.
        summary: JSON-compatible scalar results.
        rows: Table rows written to ``curve.csv``.
        columns: Column order of ``rows``.
        assertions: Named pass/fail checks; the run passes iff all hold.
        constants: Named coefficient sets used by the bounds.
        seeds: Seed lineage.
        schedule: Description of the time grid(s).
        plot: Keyword arguments for :func:`follmerlab.artifacts.line_plot_svg`.
        samples: Optional (points, seed, schedule digest) written to ``samples.bin``.
        extra_tables: Additional CSV tables, name -> (rows, columns).
        timing: Wall-clock seconds per phase (kept out of the manifest).
    """

    kind: str
    summary: dict
    rows: list = field(default_factory=list)
    columns: list = field(default_factory=list)
    assertions: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    schedule: Optional[dict] = None
    plot: Optional[dict] = None
    samples: Optional[tuple] = None
    extra_tables: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(bool(v) for v in self.assertions.values())

    def failed_assertions(self):
        return sorted(k for k, v in self.assertions.items() if not v)


@dataclass
class RunManifest:
    """Everything needed to reproduce a run, and every number it produced.

    Wall-clock times live in ``timing.json`` so that re-running the inputs
    reproduces this document bit-for-bit.
    """

    kind: str
    config: dict
    config_digest: str
    seeds: dict
    schedule: Optional[dict]
    coefficients: dict
    metrics: dict
    rows: list
    assertions: dict
    artifacts: list
    version: str = __version__

    def as_dict(self):
        return {"kind": self.kind, "config": self.config, "config_digest": self.config_digest,
                "seeds": self.seeds, "schedule": self.schedule,
                "coefficients": self.coefficients, "metrics": self.metrics, "rows": self.rows,
                "assertions": self.assertions, "passed": all(self.assertions.values()),
                "artifacts": self.artifacts, "version": self.version}

    @classmethod
    def from_dict(cls, doc):
        return cls(kind=doc["kind"], config=doc["config"], config_digest=doc["config_digest"],
                   seeds=doc["seeds"], schedule=doc["schedule"],
                   coefficients=doc["coefficients"], metrics=doc["metrics"], rows=doc["rows"],
                   assertions=doc["assertions"], artifacts=doc["artifacts"],
                   version=doc.get("version", __version__))


@dataclass(frozen=True)
class ScalingFit:
    """Log-log fit of the step count N*(d) needed to reach W2 <= eps0.

    Attributes:
        dims: Dimensions probed.
        n_star: Smallest N reaching eps0 per dimension (None when censored).
        censored: Dimensions where the search hit the step cap.
        slope, intercept: Least-squares fit of log N* on log d.
        slope_band: 95% confidence interval of the slope.
        ratios: N*(d_{i+1}) / N*(d_i) for consecutive dimensions.
    """

    dims: tuple
    n_star: tuple
    censored: tuple
    slope: float
    intercept: float
    slope_band: tuple
    ratios: tuple

    def as_dict(self):
        return {"dims": list(self.dims), "n_star": list(self.n_star),
                "censored": list(self.censored), "slope": self.slope,
                "intercept": self.intercept, "slope_band": list(self.slope_band),
                "ratios": list(self.ratios)}


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _fan_out(fn, items, workers):
    """Map ``fn`` over ``items`` on a thread pool, preserving order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def target_M0(target, seed=0):
    """max(Tr C, E|X|^2) from closed forms, the grid oracle or Monte Carlo."""
    try:
        return moments(target).M0
    except ConfigurationError:
        pass
    trc = float(np.trace(target.C))
    if hasattr(target, "grid"):
        try:
            return max(trc, target.grid().second_moment())
        except UnsupportedFamilyError:
            pass
    return moments(target, budget=MOMENT_BUDGET, seed=seed).M0


def constants_for(target, flow=FOLLMER, field_=None):
    """Coefficient set matching the target family and the flow."""
    if flow == RECTIFIED:
        return compute_rectified_constants(target, field_)
    if target.family == "bayes_posterior":
        return compute_bayes_constants(target)
    if target.family in ("ball", "atoms"):
        return compute_manifold_constants(target.R, target.delta)
    return compute_base_constants(target)


def schedule_for(flow, N, delta=0.0, kind=None):
    """Uniform grid for the Euler flows, log-uniform for the probability-flow sampler."""
    kind = kind or ("log_uniform" if flow == PROB_ODE else "uniform")
    if kind == "log_uniform":
        return log_uniform_schedule(N, delta)
    if kind == "uniform":
        return uniform_schedule(N, delta)
    raise ConfigurationError(f"unknown schedule kind '{kind}'")


def coupled_reference(field_, x0, fine_steps):
    """Image of ``x0`` under the exact flow, or a fine Euler run when no closed form exists."""
    if field_.mode == CLOSED_FORM:
        return exact_flow_map(field_, x0), "exact_flow_map"
    return euler_run(field_, uniform_schedule(fine_steps), initial=x0).points, \
        f"euler_N{fine_steps}"


def _loglog_slope(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    keep = (xs > 0) & (ys > ZERO_TOL)
    if keep.sum() < 2:
        return None, None, None
    fit = stats.linregress(np.log(xs[keep]), np.log(ys[keep]))
    return float(fit.slope), float(fit.intercept), float(fit.stderr)


def _w2(a, b):
    return w2_exact(a, b).W2


def _in_band(value, band):
    return value is not None and band[0] <= value <= band[1]


def _check_cap(n):
    if n > EXACT_CAP:
        raise ConfigurationError(f"particle count {n} exceeds the exact W2 cap {EXACT_CAP}")


# ---------------------------------------------------------------------------
# Convergence curve
# ---------------------------------------------------------------------------


def convergence_curve(target, flow=FOLLMER, steps=(32, 64, 128, 256, 512, 1024), particles=2048,
                      seed=0, oracle_seed=7, floor_c=DEFAULT_FLOOR_C, slope_band=None, mode=CLOSED_FORM,
                      m=4096, quadrature_seed=0, workers=1):
    """W2 of the N-step sampler output for each N, against the step size h = 1/N.

    Two distances are recorded per N. ``w2_coupled`` compares the output with the
    exact-flow image of the same initial batch, isolating the discretization
    error; the slope of the curve is fitted on it. ``w2_oracle`` compares the
    output with independent target samples and carries the Monte Carlo floor.
    Both are checked against ``theoretical_w2_bound(h, eps=0) + floor``.
    """
    _check_cap(particles)
    t0 = time.perf_counter()
    field_ = make_field(target, flow, mode, m, quadrature_seed)
    coeffs = constants_for(target, flow, field_)
    M0 = target_M0(target)
    floor = mc_floor(M0, particles, floor_c)
    x0 = reference_batch(field_, particles, seed)
    oracle = sample_target_oracle(target, particles, oracle_seed).points
    ref, ref_kind = coupled_reference(field_, x0, 8 * max(steps))

    def one(N):
        sched = schedule_for(flow, N)
        y = run_flow(field_, flow, sched, initial=x0).points
        bound = theoretical_w2_bound(coeffs, sched.max_step, 0.0, M0)
        return {"N": int(N), "h": sched.max_step, "w2_coupled": _w2(y, ref),
                "w2_oracle": _w2(y, oracle), "bound": bound.value,
                "log_bound": bound.log_value, "floor": floor}

    rows = _fan_out(one, steps, workers)
    hs = [r["h"] for r in rows]
    coupled = [r["w2_coupled"] for r in rows]
    slope, intercept, stderr = _loglog_slope(hs, coupled)
    exact = all(w <= ZERO_TOL for w in coupled)
    assertions = {
        "under_bound": all(r["w2_coupled"] <= r["bound"] + floor
                           and r["w2_oracle"] <= r["bound"] + floor for r in rows),
    }
    if exact:
        assertions["at_floor"] = all(r["w2_oracle"] <= floor for r in rows)
    if slope_band is not None and not exact:
        assertions["slope_in_band"] = _in_band(slope, slope_band)
    summary = {"target": target.name, "flow": flow, "slope": slope, "intercept": intercept,
               "slope_stderr": stderr, "exact_integration": exact, "M0": M0, "floor": floor,
               "reference": ref_kind, "particles": particles}
    plot = {"series": [("coupled W2", hs, coupled), ("oracle W2", hs, [r["w2_oracle"] for r in rows]),
                       ("floor", hs, [floor] * len(hs), True)],
            "title": f"W2 vs step size: {target.name}", "xlabel": "h", "ylabel": "W2",
            "logx": True, "logy": True}
    bounds = [r["bound"] for r in rows]
    if all(math.isfinite(b) for b in bounds):
        plot["series"].append(("bound", hs, bounds, True))
    return ExperimentResult(
        "curve", summary, rows, ["N", "h", "w2_coupled", "w2_oracle", "bound", "log_bound", "floor"],
        assertions, {"flow": coeffs}, {"initial": seed, "oracle": oracle_seed,
                                       "quadrature": quadrature_seed},
        {"kind": "uniform" if flow != PROB_ODE else "log_uniform", "steps": list(steps)}, plot,
        timing={"total": time.perf_counter() - t0})


# ---------------------------------------------------------------------------
# Dimension scaling
# ---------------------------------------------------------------------------


def anisotropic_family(d, var_range=(0.25, 4.0)):
    """Zero-mean Gaussian with variances log-spaced on ``var_range`` at midpoint quantiles.

    Coordinate k has variance lo * (hi / lo)^((k + 1/2) / d), so every dimension
    carries the same spread of scales and M0 grows linearly in d.
    """
    lo, hi = float(var_range[0]), float(var_range[1])
    q = (np.arange(d) + 0.5) / d
    var = np.exp(np.log(lo) + q * (np.log(hi) - np.log(lo)))
    return GaussianTarget(np.zeros(d), np.diag(var), C=np.eye(d), name=f"aniso_d{d}")


def _law_w2(field_, target, N):
    mean, cov = euler_gaussian_law(field_, uniform_schedule(N))
    return w2_gaussian_closed_form(mean, cov, target.mean_vector, target.cov)


def smallest_steps(field_, target, eps0, max_steps):
    """Smallest N with exact W2(Euler law, target) <= eps0, or None when above ``max_steps``.

    Doubles N until the target is met, then bisects the last bracket.
    """
    if _law_w2(field_, target, 1) <= eps0:
        return 1
    lo, hi = 1, 2
    while _law_w2(field_, target, hi) > eps0:
        lo, hi = hi, 2 * hi
        if hi > max_steps:
            return None
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _law_w2(field_, target, mid) <= eps0:
            hi = mid
        else:
            lo = mid
    return hi


def fit_scaling(dims, n_star):
    """Fit log N* = slope log d + intercept over the uncensored points."""
    pairs = [(d, n) for d, n in zip(dims, n_star) if n is not None]
    censored = tuple(d for d, n in zip(dims, n_star) if n is None)
    ratios = tuple(float(b / a) if a and b else None for a, b in zip(n_star[:-1], n_star[1:]))
    if len(pairs) < 2:
        return ScalingFit(tuple(dims), tuple(n_star), censored, math.nan, math.nan,
                          (math.nan, math.nan), ratios)
    x = np.log([p[0] for p in pairs])
    y = np.log([p[1] for p in pairs])
    fit = stats.linregress(x, y)
    if len(pairs) > 2:
        half = float(stats.t.ppf(0.975, len(pairs) - 2) * fit.stderr)
    else:
        half = math.inf
    return ScalingFit(tuple(dims), tuple(n_star), censored, float(fit.slope),
                      float(fit.intercept), (float(fit.slope - half), float(fit.slope + half)),
                      ratios)


def dimension_scaling(dims=(2, 8, 32, 128), eps0=0.02, var_range=(0.25, 4.0), max_steps=65536,
                      seed=0, slope_band=(0.35, 0.65), ratio_band=(1.5, 2.7),
                      halving_band=(1.6, 2.5), workers=1):
    """N*(d) for the anisotropic Gaussian family and its log-log slope.

    The Euler output of an affine field is Gaussian, so its law is propagated in
    closed form and W2 to the target is exact: there is no Monte Carlo floor.
    N* is also computed at eps0 / 2 to check the inverse-linear dependence on eps0.
    """
    t0 = time.perf_counter()

    def one(d):
        target = anisotropic_family(d, var_range)
        field_ = make_field(target, FOLLMER)
        n1 = smallest_steps(field_, target, eps0, max_steps)
        n2 = smallest_steps(field_, target, eps0 / 2.0, max_steps)
        coeffs = compute_base_constants(target)
        M0 = target_M0(target)
        theory = complexity_estimate(coeffs, M0, eps0, float(np.trace(target.C)))
        return {"d": int(d), "n_star": n1, "n_star_half_eps": n2,
                "w2_at_n_star": _law_w2(field_, target, n1) if n1 else None,
                "halving_ratio": (n2 / n1) if (n1 and n2) else None,
                "theory_N": theory.N, "M0": M0}, coeffs

    out = _fan_out(one, dims, workers)
    rows = [r for r, _ in out]
    fit = fit_scaling(list(dims), [r["n_star"] for r in rows])
    half_fit = fit_scaling(list(dims), [r["n_star_half_eps"] for r in rows])
    assertions = {
        "no_censored": not fit.censored and not half_fit.censored,
        "slope_in_band": _in_band(fit.slope, slope_band),
        "ratios_in_band": all(_in_band(r, ratio_band) for r in fit.ratios),
        "halving_in_band": all(_in_band(r["halving_ratio"], halving_band) for r in rows),
        "all_positive": all((r["n_star"] or 0) >= 1 for r in rows),
    }
    summary = {"eps0": eps0, "fit": fit.as_dict(), "fit_half_eps": half_fit.as_dict(),
               "var_range": list(var_range), "max_steps": max_steps}
    xs = [r["d"] for r in rows]
    fitted = [math.exp(fit.intercept) * d**fit.slope for d in xs] if math.isfinite(fit.slope) else []
    plot = {"series": [("N*(d)", xs, [r["n_star"] or math.nan for r in rows]),
                       ("N*(d), eps0/2", xs, [r["n_star_half_eps"] or math.nan for r in rows]),
                       (f"fit slope {fit.slope:.3f}", xs, fitted, True)],
            "title": "Steps needed for W2 <= eps0", "xlabel": "d", "ylabel": "N*",
            "logx": True, "logy": True}
    return ExperimentResult(
        "scaling", summary, rows,
        ["d", "n_star", "n_star_half_eps", "w2_at_n_star", "halving_ratio", "theory_N", "M0"],
        assertions, {f"d{d}": c for d, (_, c) in zip(dims, out)}, {"seed": seed},
        {"kind": "uniform", "search": "doubling+bisection"}, plot,
        timing={"total": time.perf_counter() - t0})


# ---------------------------------------------------------------------------
# Perturbation sweep
# ---------------------------------------------------------------------------


def epsilon_sweep(target, steps=512, eps_list=(0.0, 0.01, 0.02, 0.04),
                  modes=("random", "adversarial"), particles=4096, seed=0, perturbation_seed=1,
                  features=64, frequency=1.0, min_r2=0.95, adversarial_fraction=0.25,
                  floor_c=DEFAULT_FLOOR_C):
    """Coupled W2 against the perturbation size eps at a fixed step count.

    Each mode is calibrated once (its normalization does not depend on eps) and
    must pass its self-test. The fitted slope is compared with the eps
    coefficient 2 exp((K1 + K2 + K8) / 2) of the bound, with K8 taken at the
    largest eps: random fields must stay below it and the adversarial field must
    reach at least ``adversarial_fraction`` of it.
    """
    _check_cap(particles)
    t0 = time.perf_counter()
    field_ = make_field(target, FOLLMER)
    coeffs = constants_for(target, FOLLMER, field_)
    M0 = target_M0(target)
    floor = mc_floor(M0, particles, floor_c)
    sched = uniform_schedule(steps)
    x0 = reference_batch(field_, particles, seed)
    ref, ref_kind = coupled_reference(field_, x0, 8 * steps)
    eps_max = max(eps_list)
    base_run = euler_run(field_, sched, initial=x0).points
    w2_zero = _w2(base_run, ref)
    rows = []
    summary = {"target": target.name, "steps": steps, "reference": ref_kind,
               "w2_unperturbed": w2_zero, "modes": {}}
    assertions = {}
    consts = {"flow": coeffs}
    for name in modes:
        mode = perturbation_mode(name)
        model = PerturbationModel(eps_max, mode, seed=perturbation_seed, features=features,
                                  frequency=frequency).calibrate(field_, sched)
        test = model.self_test()
        ws = []
        for eps in eps_list:
            if eps == 0.0:
                w = w2_zero
                k8 = 0.0
            else:
                pert = model.with_eps(eps)
                w = _w2(euler_run(field_, sched, initial=x0, perturbation=pert).points, ref)
                k8 = pert.K8
            bound = theoretical_w2_bound(coeffs.with_k8(k8), sched.max_step, eps, M0)
            rows.append({"mode": name, "eps": float(eps), "w2": w, "bound": bound.value,
                         "K8": k8})
            ws.append(w)
        fit = stats.linregress(np.asarray(eps_list, float), np.asarray(ws, float))
        r2 = float(fit.rvalue**2)
        coef = 2.0 * math.exp(log_prefactor(coeffs.with_k8(model.K8)))
        consts[name] = coeffs.with_k8(model.K8)
        summary["modes"][name] = {"slope": float(fit.slope), "intercept": float(fit.intercept),
                                  "r2": r2, "coefficient": coef, "K8": model.K8,
                                  "self_test_max_rel_dev": test["max_rel_dev"]}
        assertions[f"{name}_self_test"] = bool(test["passed"])
        assertions[f"{name}_affine"] = r2 >= min_r2
        if mode == "adversarial_sinusoid":
            assertions[f"{name}_nonvacuous"] = fit.slope >= adversarial_fraction * coef
        else:
            assertions[f"{name}_slope_below_coefficient"] = fit.slope <= coef
        assertions[f"{name}_under_bound"] = all(
            r["w2"] <= r["bound"] + floor for r in rows if r["mode"] == name)
    plot = {"series": [(m, [r["eps"] for r in rows if r["mode"] == m],
                        [r["w2"] for r in rows if r["mode"] == m]) for m in modes],
            "title": f"W2 vs velocity error, N = {steps}", "xlabel": "eps", "ylabel": "W2"}
    return ExperimentResult(
        "eps_sweep", summary, rows, ["mode", "eps", "w2", "bound", "K8"], assertions, consts,
        {"initial": seed, "perturbation": perturbation_seed}, sched.as_dict(), plot,
        timing={"total": time.perf_counter() - t0})


# ---------------------------------------------------------------------------
# Early stopping
# ---------------------------------------------------------------------------


def early_stopping_study(target, deltas=(0.1, 0.03, 0.01), steps=(16, 64, 256, 1024),
                         particles=1024, seed=0, oracle_seed=7):
    """Bounded-support target sampled with the flow stopped at t = 1 - delta.

    For each delta the forward-diffused law P_delta = law((1 - delta) X + s Z),
    s^2 = 1 - (1 - delta)^2, is simulated from target samples X. Its drift from
    the target is measured on the coupling (X, P_delta) and compared with
    sqrt(2 delta Tr C) (= sqrt(2 d delta) for C = I). The Gaussian noise is
    integrated out exactly, giving the coupled distance
    sqrt(delta^2 mean|X|^2 + s^2 Tr C); the fully simulated value is reported too.
    The Euler output Q at 1 - delta is compared with P_delta by exact W2 for each N.
    The manifold-variant bound is reported but not asserted: its prefactor
    exp(3 R^2 / (2 delta^2)) overflows at any practical (R, delta).
    """
    _check_cap(particles)
    if target.family != "atoms":
        raise UnsupportedFamilyError(
            "the early-stopping study needs the closed-form velocity of an atoms target")
    if not np.allclose(target.C, np.eye(target.dim)):
        raise ConfigurationError("the early-stopping study takes C = I")
    t0 = time.perf_counter()
    d = target.dim
    trc = float(np.trace(target.C))
    field_ = make_field(target, FOLLMER)
    x = sample_target_oracle(target, particles, oracle_seed).points
    x0 = reference_batch(field_, particles, seed)
    M0 = target_M0(target)
    rows, deltas_out, consts, assertions = [], {}, {}, {}
    for j, delta in enumerate(deltas):
        s2 = 1.0 - (1.0 - delta) ** 2
        p = forward_diffuse(x, delta, target.C, oracle_seed, key=j)
        diff2 = np.sum((p - x) ** 2, axis=1)
        drift_sim = float(math.sqrt(diff2.mean()))
        drift_sim_se = float(diff2.std(ddof=1) / math.sqrt(particles) / (2.0 * drift_sim))
        drift = float(math.sqrt(delta**2 * np.mean(np.sum(x**2, axis=1)) + s2 * trc))
        bound = math.sqrt(2.0 * delta * trc)
        mc = compute_manifold_constants(target.R, delta)
        consts[f"delta{delta:g}"] = mc
        w2s = []
        for N in steps:
            sched = uniform_schedule(N, delta)
            q = euler_run(field_, sched, initial=x0).points
            w = _w2(p, q)
            b = theoretical_w2_bound(mc, sched.max_step, 0.0, M0)
            rows.append({"delta": float(delta), "N": int(N), "w2": w, "bound": b.value,
                         "log_bound": b.log_value})
            w2s.append(w)
        deltas_out[f"{delta:g}"] = {"drift": drift, "drift_simulated": drift_sim,
                                    "drift_simulated_se": drift_sim_se, "drift_bound": bound,
                                    "K0_star": mc.K0, "K0_star_expected": target.R / s2,
                                    "w2": w2s}
        assertions[f"drift_delta{delta:g}"] = drift <= bound
        assertions[f"monotone_delta{delta:g}"] = all(
            b < a for a, b in zip(w2s[:-1], w2s[1:]))
    summary = {"target": target.name, "d": d, "R": target.R, "deltas": deltas_out,
               "bound_asserted": False}
    plot = {"series": [(f"delta={dl:g}", list(steps), [r["w2"] for r in rows if r["delta"] == dl])
                       for dl in deltas],
            "title": "W2(P_delta, Q_{1-delta}) vs N", "xlabel": "N", "ylabel": "W2",
            "logx": True, "logy": True}
    return ExperimentResult(
        "early_stop", summary, rows, ["delta", "N", "w2", "bound", "log_bound"], assertions,
        consts, {"initial": seed, "oracle": oracle_seed},
        {"kind": "uniform", "steps": list(steps), "deltas": list(deltas)}, plot,
        timing={"total": time.perf_counter() - t0})


# ---------------------------------------------------------------------------
# Flow comparison
# ---------------------------------------------------------------------------


def flow_comparison(target, flows=FLOWS, steps=(16, 64, 256), particles=2048, seed=0,
                    oracle_seed=7, floor_c=DEFAULT_FLOOR_C, probe_spec=None, expect_floor=False):
    """Exact W2 to the target, wall-clock and audit pass rate for each flow and N.

    The Föllmer and probability-flow samplers start from the same N(0, C) batch,
    whose gap W2(Föllmer output, probability-flow output) is tracked over N. The
    probability-flow sampler integrates the same velocity in log time, so it
    shares the Föllmer constants and audit; its bound uses the largest step of
    its log-uniform grid.
    """
    _check_cap(particles)
    t0 = time.perf_counter()
    unknown = sorted(set(flows) - set(FLOWS))
    if unknown:
        raise ConfigurationError(f"unknown flows: {', '.join(unknown)}")
    spec = probe_spec or ProbeSpec()
    M0 = target_M0(target)
    floor = mc_floor(M0, particles, floor_c)
    oracle = sample_target_oracle(target, particles, oracle_seed).points
    fields, consts, audits = {}, {}, {}
    for flow in flows:
        f = make_field(target, flow)
        fields[flow] = f
        if flow == PROB_ODE and FOLLMER in consts:
            consts[flow] = consts[FOLLMER]
        else:
            consts[flow] = constants_for(target, flow, f)
        if flow == PROB_ODE and FOLLMER in audits:
            audits[flow] = audits[FOLLMER]
        else:
            audits[flow] = regularity_audit(f, consts[flow], spec)
    x0 = {flow: reference_batch(fields[flow], particles, seed) for flow in flows}
    rows, outputs = [], {}
    for N in steps:
        for flow in flows:
            sched = schedule_for(flow, N)
            res = run_flow(fields[flow], flow, sched, initial=x0[flow])
            w = _w2(res.points, oracle)
            b = theoretical_w2_bound(consts[flow], sched.max_step, 0.0, M0)
            rows.append({"flow": flow, "N": int(N), "w2": w, "bound": b.value,
                         "floor": floor, "audit_pass_rate": audits[flow].pass_rate(),
                         "wall_clock": res.wall_clock})
            outputs[(flow, N)] = res.points
    gaps = []
    if FOLLMER in flows and PROB_ODE in flows:
        gaps = [_w2(outputs[(FOLLMER, N)], outputs[(PROB_ODE, N)]) for N in steps]
    assertions = {f"{flow}_under_bound": all(r["w2"] <= r["bound"] + floor
                                             for r in rows if r["flow"] == flow)
                  for flow in flows}
    if gaps:
        assertions["gap_shrinks"] = all(b < a or b <= ZERO_TOL for a, b in zip(gaps[:-1], gaps[1:]))
    if expect_floor:
        assertions["at_floor"] = all(r["w2"] <= floor for r in rows)
    summary = {"target": target.name, "M0": M0, "floor": floor,
               "follmer_prob_ode_gap": gaps,
               "audit": {flow: audits[flow].summary() for flow in flows}}
    timing = {"total": time.perf_counter() - t0,
              "runs": {f"{r['flow']}_N{r['N']}": r["wall_clock"] for r in rows}}
    manifest_rows = [{k: v for k, v in r.items() if k != "wall_clock"} for r in rows]
    plot = {"series": [(flow, list(steps), [r["w2"] for r in rows if r["flow"] == flow])
                       for flow in flows],
            "title": f"W2 to target by flow: {target.name}", "xlabel": "N", "ylabel": "W2",
            "logx": True}
    if gaps:
        plot["series"].append(("follmer vs prob-ode", list(steps), gaps, True))
    result = ExperimentResult(
        "compare", summary, manifest_rows,
        ["flow", "N", "w2", "bound", "floor", "audit_pass_rate"], assertions, consts,
        {"initial": seed, "oracle": oracle_seed}, {"steps": list(steps)}, plot, timing=timing)
    result.extra_tables["wall_clock.csv"] = (rows, ["flow", "N", "wall_clock"])
    return result


# ---------------------------------------------------------------------------
# Bayesian posterior
# ---------------------------------------------------------------------------


def _grid_refinement(target):
    """Grid mean and covariance, with the mean shift from halving the resolution."""
    grid = target.grid()
    coarse_pts = (grid.points_per_axis - 1) // 2 + 1
    coarse = GridOracle(target.log_density, grid.lo, grid.hi, coarse_pts)
    return grid.mean(), grid.covariance(), np.abs(grid.mean() - coarse.mean())


def bayes_posterior_demo(target, steps=512, particles=4096, seed=0, mode=None, m=4096,
                         quadrature_seed=0, mean_rtol=0.02, cov_rtol=0.03, oracle_seed=7,
                         floor_c=DEFAULT_FLOOR_C):
    """Posterior mean and covariance of the sampler against exact or grid oracles.

    Runs the Föllmer sampler from a scrambled-Sobol N(0, C) batch. When G is
    linear the posterior is Gaussian and the check is relative: every mean
    coordinate within ``mean_rtol`` (absolute 3 standard errors where the exact
    mean is 0) and every covariance diagonal entry within ``cov_rtol``. Otherwise
    each mean coordinate must lie within 3 (grid tolerance + standard error) of
    the dense-grid mean, the grid tolerance being the shift when the grid
    resolution is halved.
    """
    _check_cap(particles)
    t0 = time.perf_counter()
    if target.family != "bayes_posterior":
        raise ConfigurationError("the Bayes demo needs a bayes_posterior target")
    mode = mode or (CLOSED_FORM if target.is_linear else QUADRATURE)
    field_ = make_field(target, FOLLMER, mode, m, quadrature_seed)
    sched = uniform_schedule(steps)
    x0 = initial_batch(particles, target.C, seed, "sobol")
    res = euler_run(field_, sched, initial=x0)
    y = res.points
    mean = y.mean(axis=0)
    cov = np.cov(y, rowvar=False).reshape(target.dim, target.dim)
    se = np.sqrt(np.diag(cov) / particles)
    coeffs = compute_bayes_constants(target)
    summary = {"target": target.name, "forward": target.forward.kind, "mode": mode,
               "mean": mean.tolist(), "cov": cov.tolist(), "mean_stderr": se.tolist()}
    assertions = {}
    if target.is_linear:
        post = target.posterior_gaussian()
        ref_mean, ref_cov = post.mean_vector, post.cov
        tol = np.where(np.abs(ref_mean) > ZERO_TOL, mean_rtol * np.abs(ref_mean), 3.0 * se)
        assertions["mean_within_tolerance"] = bool(np.all(np.abs(mean - ref_mean) <= tol))
        cov_rel = np.abs(np.diag(cov) - np.diag(ref_cov)) / np.diag(ref_cov)
        assertions["cov_within_tolerance"] = bool(np.all(cov_rel <= cov_rtol))
        summary.update({"oracle": "closed_form", "mean_tolerance": tol.tolist(),
                        "cov_rel_error": cov_rel.tolist()})
    else:
        ref_mean, ref_cov, grid_tol = _grid_refinement(target)
        tol = 3.0 * (grid_tol + se)
        assertions["mean_within_tolerance"] = bool(np.all(np.abs(mean - ref_mean) <= tol))
        summary.update({"oracle": "grid", "grid_tolerance": grid_tol.tolist(),
                        "mean_tolerance": tol.tolist()})
    summary["oracle_mean"] = np.asarray(ref_mean).tolist()
    summary["oracle_cov"] = np.asarray(ref_cov).tolist()
    summary["mean_abs_error"] = np.abs(mean - ref_mean).tolist()
    M0 = target_M0(target)
    floor = mc_floor(M0, particles, floor_c)
    bound = theoretical_w2_bound(coeffs, sched.max_step, 0.0, M0)
    w2 = _w2(y, sample_target_oracle(target, particles, oracle_seed).points)
    summary.update({"w2_oracle": w2, "bound": bound.value, "log_bound": bound.log_value,
                    "floor": floor, "M0": M0})
    assertions["under_bound"] = w2 <= bound.value + floor
    rows = [{"coordinate": i, "mean": float(mean[i]), "oracle_mean": float(ref_mean[i]),
             "tolerance": float(tol[i]), "var": float(cov[i, i]),
             "oracle_var": float(np.asarray(ref_cov)[i, i])} for i in range(target.dim)]
    return ExperimentResult(
        "bayes", summary, rows, ["coordinate", "mean", "oracle_mean", "tolerance", "var",
                                 "oracle_var"], assertions, {"bayes": coeffs},
        {"initial": seed, "initial_method": "sobol", "quadrature": quadrature_seed,
         "oracle": oracle_seed}, sched.as_dict(), None,
        samples=(y, seed, sched.digest()), timing={"total": time.perf_counter() - t0})


# ---------------------------------------------------------------------------
# Single runs: sample, audit, constants
# ---------------------------------------------------------------------------


def _probe_spec(metric, quadrature):
    n_times = int(metric.get("probe_times", 34))
    n_pts = int(metric.get("probe_points", 64))
    if quadrature:
        n_times, n_pts = min(n_times, 17), min(n_pts, 32)
    return ProbeSpec(times=tuple(np.round(np.linspace(0.0, 0.99, n_times), 6)),
                     radius=float(metric.get("probe_radius", 3.0)), n_points=n_pts,
                     budget_steps=32 if quadrature else 64)


def sample_run(config, workers=1):
    """One sampler run as configured; the output batch is kept for ``samples.bin``."""
    t0 = time.perf_counter()
    target = build_target(config["target"])
    flow_t, sch_t, per_t, met_t = (config["flow"], config["schedule"], config["perturbation"],
                                   config["metric"])
    exp_t = config.get("experiment", {})
    flow = flow_t["kind"]
    seed = int(exp_t.get("seed", 0))
    field_ = make_field(target, flow, flow_t["mode"], flow_t["m"], flow_t["seed"])
    sched = schedule_for(flow, int(sch_t["steps"]), float(sch_t["delta"]), sch_t["kind"])
    pert = None
    mode = perturbation_mode(per_t["mode"])
    if mode is not None and per_t["eps"] > 0:
        pert = PerturbationModel(float(per_t["eps"]), mode, seed=int(per_t["seed"]),
                                 features=int(per_t["features"]),
                                 frequency=float(per_t["frequency"])).calibrate(field_, sched)
    n = int(met_t["particles"])
    res = run_flow(field_, flow, sched, n=n, seed=seed, perturbation=pert, workers=workers)
    y = res.points
    summary = {"target": target.name, "flow": flow, "n": n, "d": target.dim,
               "N": sched.N, "delta": sched.delta, "mean": y.mean(axis=0).tolist(),
               "eps": float(per_t["eps"]) if pert is not None else 0.0}
    assertions = {"finite": bool(np.all(np.isfinite(y)))}
    if pert is not None:
        test = pert.self_test()
        summary["perturbation_self_test"] = test["max_rel_dev"]
        summary["K8"] = pert.K8
        assertions["perturbation_self_test"] = bool(test["passed"])
    consts = {}
    try:
        consts["flow"] = constants_for(target, flow, field_)
    except UnsupportedFamilyError:
        pass
    if n <= EXACT_CAP:
        try:
            oracle = sample_target_oracle(target, n, int(met_t["oracle_seed"])).points
            summary["w2_oracle"] = _w2(y, oracle)
            M0 = target_M0(target)
            summary["floor"] = mc_floor(M0, n, float(met_t["floor_c"]))
            if "flow" in consts:
                b = theoretical_w2_bound(consts["flow"], sched.max_step,
                                         summary["eps"], M0)
                summary["bound"] = b.value
        except UnsupportedFamilyError:
            pass
    rows = []
    cols = ["step", "t", "h", "max_speed"] + (["min_ess"] if "min_ess" in res.diagnostics else [])
    for k in range(sched.N):
        row = {"step": k, "t": float(res.diagnostics["t"][k]),
               "h": float(res.diagnostics["h"][k]),
               "max_speed": float(res.diagnostics["max_speed"][k])}
        if "min_ess" in res.diagnostics:
            row["min_ess"] = float(res.diagnostics["min_ess"][k])
        rows.append(row)
    result = ExperimentResult(
        "sample", summary, rows, cols, assertions, consts,
        {"initial": seed, **{k: v for k, v in res.seeds.items() if k != "initial"}},
        sched.as_dict(), None, samples=(y, seed, sched.digest()),
        timing={"total": time.perf_counter() - t0, "integration": res.wall_clock})
    result.extra_tables["diagnostics.csv"] = (rows, cols)
    return result


LIPSCHITZ_RTOL = 1e-9


def lipschitz_check(target, mode=CLOSED_FORM, m=4096, quadrature_seed=0, pairs=512, steps=None,
                    displacement=1e-4, seed=0):
    """Empirical Lipschitz constant of the Euler flow map against exp((K1 + K2) / 2).

    The estimate is a difference quotient at ``displacement``, which carries a
    rounding error of order 1e-16 / displacement; the comparison allows the same
    1e-9 relative slack as the regularity audit.
    """
    field_ = make_field(target, FOLLMER, mode, m, quadrature_seed)
    coeffs = constants_for(target, FOLLMER, field_)
    steps = steps or (16 if mode == QUADRATURE else 256)
    est = lipschitz_probe_run(field_, uniform_schedule(steps), pairs, displacement, seed)
    bounds = lipschitz_bounds(coeffs)
    return {"estimate": est.value, "bound": bounds.flow_bound, "steps": steps, "pairs": pairs,
            "displacement": displacement, "holds": bool(est.value <= bounds.flow_bound * (1.0 + LIPSCHITZ_RTOL))}


def audit_run(config, negative_control=False, lipschitz=True):
    """Regularity audit of the configured target's Föllmer field.

    With ``negative_control`` the constant K5 is halved and the run passes only
    if the audit then fails.
    """
    t0 = time.perf_counter()
    target = build_target(config["target"])
    flow_t, met_t = config["flow"], config["metric"]
    flow = flow_t["kind"] if flow_t["kind"] != PROB_ODE else FOLLMER
    field_ = make_field(target, flow, flow_t["mode"], flow_t["m"], flow_t["seed"])
    coeffs = constants_for(target, flow, field_)
    if negative_control:
        coeffs = replace(coeffs, K5=0.5 * coeffs.K5,
                         diagnostics={**coeffs.diagnostics, "negative_control": "K5 halved"})
    spec = _probe_spec(met_t, flow_t["mode"] == QUADRATURE)
    report = regularity_audit(field_, coeffs, spec)
    summary = {"target": target.name, "flow": flow, "negative_control": negative_control,
               **report.summary()}
    assertions = ({"audit_fails": not report.passed} if negative_control
                  else {"audit_passes": report.passed})
    if lipschitz and not negative_control and flow == FOLLMER:
        lip = lipschitz_check(target, flow_t["mode"], min(int(flow_t["m"]), 4096),
                              flow_t["seed"])
        summary["lipschitz"] = lip
        assertions["lipschitz_within_bound"] = lip["holds"]
    rows = [{"check": r.check, "t": r.t, "norm_x": r.norm_x, "lhs": r.lhs, "rhs": r.rhs,
             "margin": r.margin, "pass": r.passed} for r in report.rows]
    return ExperimentResult(
        "audit", summary, rows, ["check", "t", "norm_x", "lhs", "rhs", "margin", "pass"],
        assertions, {"flow": coeffs}, {"quadrature": flow_t["seed"]},
        {"probe_times": list(spec.times), "budget_steps": spec.budget_steps}, None,
        timing={"total": time.perf_counter() - t0})


def constants_run(config, variant=None):
    """Coefficient set of the configured target (variant from the family unless given)."""
    target = build_target(config["target"])
    flow_t = config["flow"]
    flow = flow_t["kind"]
    if variant in (None, "auto"):
        field_ = make_field(target, flow, flow_t["mode"], flow_t["m"], flow_t["seed"]) \
            if flow == RECTIFIED else None
        coeffs = constants_for(target, flow, field_)
    elif variant == "base":
        coeffs = compute_base_constants(target)
    elif variant == "bayes":
        coeffs = compute_bayes_constants(target)
    elif variant == "manifold":
        coeffs = compute_manifold_constants(target.R, target.delta)
    elif variant == "rectified":
        coeffs = compute_rectified_constants(target, make_field(target, RECTIFIED))
    else:
        raise ConfigurationError(f"unknown constants variant '{variant}'")
    summary = {"target": target.name, "variant": coeffs.variant, "variant_requested": variant,
               **coeffs.values(), "valid": coeffs.is_valid()}
    return ExperimentResult("constants", summary, [], [], {"finite": coeffs.is_valid()},
                            {"flow": coeffs}, {}, None, None)


# ---------------------------------------------------------------------------
# Dispatch from a configuration
# ---------------------------------------------------------------------------


def _target_of(config):
    if "target" not in config:
        raise ConfigurationError("this experiment needs a target table")
    return build_target(config["target"])


def run_experiment(config, workers=1, kind=None):
    """Run the study named by ``kind`` or ``experiment.kind`` with its parameters."""
    exp = config.get("experiment", {})
    kind = kind or exp.get("kind", "sample")
    met = config.get("metric", {})
    flow_t = config.get("flow", {})
    seed = int(exp.get("seed", 0))
    if kind == "sample":
        return sample_run(config, workers)
    if kind == "curve":
        band = exp.get("slope_band")
        return convergence_curve(
            _target_of(config), flow_t.get("kind", FOLLMER), tuple(exp.get("steps", (32, 64, 128,
                                                                                  256, 512, 1024))),
            int(met.get("particles", 2048)), seed, int(met.get("oracle_seed", 7)),
            float(met.get("floor_c", DEFAULT_FLOOR_C)), tuple(band) if band else None,
            flow_t.get("mode", CLOSED_FORM), int(flow_t.get("m", 4096)),
            int(flow_t.get("seed", 0)), workers)
    if kind == "scaling":
        return dimension_scaling(
            tuple(exp.get("dims", (2, 8, 32, 128))), float(exp.get("eps0", 0.02)),
            tuple(exp.get("var_range", (0.25, 4.0))), int(exp.get("max_steps", 65536)), seed,
            tuple(exp.get("slope_band", (0.35, 0.65))), tuple(exp.get("ratio_band", (1.5, 2.7))),
            tuple(exp.get("halving_band", (1.6, 2.5))), workers)
    if kind == "eps_sweep":
        per = config.get("perturbation", {})
        return epsilon_sweep(
            _target_of(config), int(config.get("schedule", {}).get("steps", 512)),
            tuple(exp.get("eps", (0.0, 0.01, 0.02, 0.04))),
            tuple(exp.get("modes", ("random", "adversarial"))), int(met.get("particles", 4096)),
            seed, int(per.get("seed", 1)), int(per.get("features", 64)),
            float(per.get("frequency", 1.0)), float(exp.get("min_r2", 0.95)),
            float(exp.get("adversarial_fraction", 0.25)), float(met.get("floor_c", DEFAULT_FLOOR_C)))
    if kind == "early_stop":
        return early_stopping_study(
            _target_of(config), tuple(exp.get("deltas", (0.1, 0.03, 0.01))),
            tuple(exp.get("steps", (16, 64, 256, 1024))), int(met.get("particles", 1024)), seed,
            int(met.get("oracle_seed", 7)))
    if kind == "compare":
        return flow_comparison(
            _target_of(config), tuple(exp.get("flows", FLOWS)),
            tuple(exp.get("steps", (16, 64, 256))), int(met.get("particles", 2048)), seed,
            int(met.get("oracle_seed", 7)), float(met.get("floor_c", DEFAULT_FLOOR_C)),
            _probe_spec(met, False), bool(exp.get("expect_floor", False)))
    if kind == "bayes":
        target = _target_of(config)
        mode = flow_t.get("mode")
        if mode == CLOSED_FORM and not target.is_linear:
            mode = QUADRATURE
        return bayes_posterior_demo(
            target, int(config.get("schedule", {}).get("steps", 512)),
            int(met.get("particles", 4096)), seed, mode, int(flow_t.get("m", 4096)),
            int(flow_t.get("seed", 0)), float(exp.get("mean_rtol", 0.02)),
            float(exp.get("cov_rtol", 0.03)), int(met.get("oracle_seed", 7)),
            float(met.get("floor_c", DEFAULT_FLOOR_C)))
    raise ConfigurationError(f"unknown experiment kind '{kind}'")


# ---------------------------------------------------------------------------
# Persistence and replay
# ---------------------------------------------------------------------------


def _json_ready(obj):
    """Replace non-finite floats by strings so that documents stay strict JSON."""
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_ready(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def build_manifest(result, config, artifacts=()):
    """Assemble the manifest of ``result`` (no files are written)."""
    coeffs = {name: c.as_dict() for name, c in result.constants.items()}
    return RunManifest(
        kind=result.kind, config=_json_ready(config), config_digest=config_digest(config),
        seeds=_json_ready(result.seeds), schedule=_json_ready(result.schedule),
        coefficients=_json_ready(coeffs), metrics=_json_ready(result.summary),
        rows=_json_ready(result.rows), assertions={k: bool(v) for k, v in result.assertions.items()},
        artifacts=sorted(artifacts))


def constants_rows(result):
    rows = []
    for name, c in result.constants.items():
        for key, value in constants_table(c):
            rows.append({"set": name, "variant": c.variant, "constant": key, "value": value})
    return rows


def persist(result, config, out_dir, force=False):
    """Write the run directory for ``result`` and return its manifest."""
    out = prepare_output_dir(out_dir, force)
    written = []
    if result.rows:
        write_csv(out / "curve.csv", result.rows, result.columns)
        written.append("curve.csv")
    for name, (rows, cols) in result.extra_tables.items():
        write_csv(out / name, rows, cols)
        written.append(name)
    if result.constants:
        write_csv(out / "constants.csv", constants_rows(result),
                  ["set", "variant", "constant", "value"])
        written.append("constants.csv")
    if result.plot is not None:
        plot = dict(result.plot)
        write_plot(out / "plot.svg", plot.pop("series"), **plot)
        written.append("plot.svg")
    if result.samples is not None:
        pts, seed, digest = result.samples
        write_samples(out / "samples.bin", pts, seed, digest)
        written += ["samples.bin", "samples.hdr"]
    manifest = build_manifest(result, config, written + ["manifest.json", "timing.json"])
    write_json(out / "manifest.json", manifest.as_dict())
    write_json(out / "timing.json", _json_ready(result.timing))
    return manifest


def load_manifest(path):
    import json

    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return RunManifest.from_dict(json.loads(path.read_text()))


def rerun(kind, config, metrics, workers=1):
    """Re-execute a study of the given kind; audit and constants runs read their options
    back from the recorded metrics."""
    if kind == "audit":
        return audit_run(config, bool(metrics.get("negative_control", False)),
                         "lipschitz" in metrics)
    if kind == "constants":
        return constants_run(config, metrics.get("variant_requested"))
    return run_experiment(config, workers, kind=kind)


def replay(path, workers=1):
    """Re-execute a manifest's configuration and compare every recorded number.

    Returns:
        (new manifest, sorted list of top-level manifest fields that differ).
    """
    old = load_manifest(path)
    config = resolve(old.config)
    result = rerun(old.kind, config, old.metrics, workers)
    new = build_manifest(result, config, old.artifacts)
    a, b = old.as_dict(), new.as_dict()
    diffs = sorted(k for k in a if a[k] != b.get(k))
    return new, diffs


def run_config_file(name, workers=1, kind=None):
    """Load a configuration file and run its experiment."""
    config = load_config(name)
    return config, run_experiment(config, workers, kind)
