"""Acceptance suite: one test per acceptance criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the collected lines are also
printed in an "acceptance criteria" section at the end of the pytest report.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from conftest import marginal_points, record_acceptance

from follmerlab import streams
from follmerlab.coefficients import compute_base_constants
from follmerlab.config import load_config, load_target
from follmerlab.experiments import (
    _probe_spec,
    constants_for,
    lipschitz_check,
    run_config_file,
)
from follmerlab.integrate import (
    euler_run,
    make_field,
    pi_half_sum,
    reference_batch,
    uniform_schedule,
)
from follmerlab.metrics import (
    assignment_cost,
    regularity_audit,
    w2_exact,
    w2_gaussian_closed_form,
)
from follmerlab.targets import halton_ball, moments, sample_target_oracle

pytestmark = pytest.mark.slow

AUDIT_TARGETS = ("gaussian_iso", "gaussian_shift", "gaussian_wide_1d", "gaussian_narrow_1d",
                 "gaussian_offset_1d", "mix1d", "mix1d_asym", "mix2d", "cosine_tail",
                 "bayes_tanh")
LIPSCHITZ_TARGETS = AUDIT_TARGETS + ("bayes_linear", "bayes_constant")
MIXTURES = ("mix1d", "mix1d_asym", "mix2d")


def _fmt(values):
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"


def test_criterion_01_invariant_target_identity():
    start = time.perf_counter()
    target = load_target("gaussian_iso.cfg")
    field = make_field(target, "follmer")
    pts = halton_ball(1000, target.dim, 6.0)
    times = np.linspace(0.0, 1.0, 11)
    vmax = max(float(np.max(np.abs(field.velocity(t, pts)))) for t in times)
    x0 = reference_batch(field, 2048, 0)
    out = euler_run(field, uniform_schedule(64), initial=x0).points
    identical = out.tobytes() == x0.tobytes()
    elapsed = time.perf_counter() - start
    passed = vmax <= 1e-12 and identical and elapsed < 1.0
    record_acceptance(1, passed, f"max|V|={vmax:.3g} bitwise_identical={identical} "
                                 f"({elapsed:.2f}s)")
    assert passed


def test_criterion_02_shifted_gaussian_exactness():
    start = time.perf_counter()
    target = load_target("gaussian_shift.cfg")
    field = make_field(target, "follmer")
    m = target.mean_vector
    pts = halton_ball(1000, target.dim, 6.0)
    verr = max(float(np.max(np.abs(field.velocity(t, pts) - m)))
               for t in np.linspace(0.0, 1.0, 11))
    n = 2048
    M0 = moments(target).M0
    floor = 3.0 * math.sqrt(M0 / n)
    oracle = sample_target_oracle(target, n, 7).points
    w2s = [w2_exact(euler_run(field, uniform_schedule(N), n=n, seed=0).points, oracle).W2
           for N in (1, 4, 16, 64)]
    # Distance between two independent oracle batches: the sampling noise the floor must cover.
    noise = w2_exact(sample_target_oracle(target, n, 11).points, oracle).W2
    elapsed = time.perf_counter() - start
    passed = verr <= 1e-10 and all(w <= floor for w in w2s) and elapsed < 10.0
    record_acceptance(2, passed, f"max|V-m|={verr:.3g} W2(N=1,4,16,64)={_fmt(w2s)} "
                                 f"floor 3*sqrt(M0/n)={floor:.4g} oracle-vs-oracle W2={noise:.4g} "
                                 f"({elapsed:.1f}s)")
    assert passed


def test_criterion_03_quadrature_matches_closed_form():
    start = time.perf_counter()
    worst = {}
    for name in MIXTURES:
        target = load_target(f"{name}.cfg")
        closed = make_field(target, "follmer")
        quad = make_field(target, "follmer", "quadrature", 100_000, 3)
        rng = streams.philox(0, streams.ROLE_PROBE)
        ts = rng.uniform(0.05, 0.95, 64)
        rel = 0.0
        for j, t in enumerate(ts):
            x = marginal_points(target, t, 1, j)
            vc = closed.velocity(t, x)[0]
            vq = quad.velocity(t, x, t_index=j)[0]
            rel = max(rel, float(np.linalg.norm(vq - vc) / np.linalg.norm(vc)))
        worst[name] = rel
    elapsed = time.perf_counter() - start
    passed = all(v <= 2e-3 for v in worst.values()) and elapsed < 60.0
    record_acceptance(3, passed, "max relative error " + " ".join(
        f"{k}={v:.3g}" for k, v in worst.items()) + f" ({elapsed:.1f}s)")
    assert passed


def test_criterion_04_regularity_audit():
    start = time.perf_counter()
    results = {}
    for name in AUDIT_TARGETS:
        cfg = load_config(f"{name}.cfg")
        target = load_target(f"{name}.cfg")
        flow = cfg["flow"]
        field = make_field(target, "follmer", flow["mode"], flow["m"], flow["seed"])
        coeffs = constants_for(target, "follmer", field)
        spec = _probe_spec(cfg["metric"], flow["mode"] == "quadrature")
        results[name] = regularity_audit(field, coeffs, spec)
    # Negative control: the same audit with K5 halved must fail.
    cfg = load_config("gaussian_narrow_1d.cfg")
    target = load_target("gaussian_narrow_1d.cfg")
    field = make_field(target, "follmer")
    coeffs = compute_base_constants(target)
    control = regularity_audit(field, replace(coeffs, K5=0.5 * coeffs.K5),
                               _probe_spec(cfg["metric"], False))
    elapsed = time.perf_counter() - start
    failing = [k for k, r in results.items() if not r.passed]
    passed = not failing and not control.passed and elapsed < 60.0
    record_acceptance(4, passed, f"{len(results) - len(failing)}/{len(results)} targets pass, "
                                 f"negative control failing rows={len(control.failures)} "
                                 f"({elapsed:.1f}s)")
    assert passed


def test_criterion_05_lipschitz_bounds():
    start = time.perf_counter()
    rows = {}
    for name in LIPSCHITZ_TARGETS:
        cfg = load_config(f"{name}.cfg")
        flow = cfg["flow"]
        rows[name] = lipschitz_check(load_target(f"{name}.cfg"), flow["mode"],
                                     min(int(flow["m"]), 4096), flow["seed"])
    wide = rows["gaussian_wide_1d"]["estimate"]
    elapsed = time.perf_counter() - start
    holds = all(r["holds"] for r in rows.values())
    passed = holds and abs(wide - 2.0) <= 0.02 and elapsed < 30.0
    record_acceptance(5, passed, f"all under exp((K1+K2)/2)={holds} N(0,4) estimate={wide:.4f} "
                                 f"worst ratio={max(r['estimate'] / r['bound'] for r in rows.values()):.3f} "
                                 f"({elapsed:.1f}s)")
    assert passed


def test_criterion_06_first_order_convergence():
    start = time.perf_counter()
    slopes, ok = {}, True
    for name in ("curve_1d", "curve_2d"):
        _, result = run_config_file(f"{name}.cfg")
        slopes[name] = result.summary["slope"]
        ok = ok and result.passed
    elapsed = time.perf_counter() - start
    passed = ok and all(0.8 <= s <= 1.2 for s in slopes.values()) and elapsed < 300.0
    record_acceptance(6, passed, " ".join(f"{k} slope={v:.4f}" for k, v in slopes.items())
                      + f" under_bound={ok} ({elapsed:.1f}s)")
    assert passed


def test_criterion_07_sqrt_d_complexity():
    start = time.perf_counter()
    _, result = run_config_file("bundled_scaling.cfg")
    fit = result.summary["fit"]
    elapsed = time.perf_counter() - start
    passed = (0.35 <= fit["slope"] <= 0.65 and all(1.5 <= r <= 2.7 for r in fit["ratios"])
              and not fit["censored"] and elapsed < 1200.0)
    record_acceptance(7, passed, f"N*={fit['n_star']} slope={fit['slope']:.4f} "
                                 f"ratios={_fmt(fit['ratios'])} ({elapsed:.1f}s)")
    assert passed


def test_criterion_08_epsilon_linearity():
    start = time.perf_counter()
    _, result = run_config_file("eps_sweep.cfg")
    modes = result.summary["modes"]
    elapsed = time.perf_counter() - start
    r, a = modes["random"], modes["adversarial"]
    passed = (result.passed and r["r2"] >= 0.95 and a["r2"] >= 0.95
              and r["slope"] <= r["coefficient"] and a["slope"] >= 0.25 * a["coefficient"]
              and elapsed < 300.0)
    record_acceptance(8, passed, f"random slope={r['slope']:.4g} R2={r['r2']:.4f}; adversarial "
                                 f"slope={a['slope']:.4g} R2={a['r2']:.4f}; coefficient="
                                 f"{a['coefficient']:.4g} ({elapsed:.1f}s)")
    assert passed


def test_criterion_09_pi_half_identity():
    start = time.perf_counter()
    gaps = [abs(pi_half_sum(uniform_schedule(N)) - math.pi / 2) for N in (100, 1000, 10000)]
    elapsed = time.perf_counter() - start
    passed = gaps[-1] <= 0.02 and gaps[0] > gaps[1] > gaps[2] and elapsed < 1.0
    record_acceptance(9, passed, f"|sum - pi/2| at N=1e2,1e3,1e4: {_fmt(gaps)} ({elapsed:.2f}s)")
    assert passed


def test_criterion_10_early_stopping():
    start = time.perf_counter()
    _, result = run_config_file("early_stop.cfg")
    deltas = result.summary["deltas"]
    elapsed = time.perf_counter() - start
    passed = result.passed and result.summary["d"] == 16 and elapsed < 300.0
    detail = "; ".join(f"delta={k}: drift={v['drift']:.4f} <= {v['drift_bound']:.4f} "
                       f"W2(N)={_fmt(v['w2'])}" for k, v in deltas.items())
    record_acceptance(10, passed, detail + f" ({elapsed:.1f}s)")
    assert passed


def test_criterion_11_bayes_conjugate_and_tanh():
    start = time.perf_counter()
    _, linear = run_config_file("bayes_linear.cfg")
    _, tanh = run_config_file("bayes_tanh.cfg")
    y = np.array(load_config("bayes_linear.cfg")["target"]["y"])
    mean = np.array(linear.summary["mean"])
    cov = np.array(linear.summary["cov"])
    mean_ok = bool(np.all(np.abs(mean - y / 2) <= 0.02 * np.abs(y / 2)))
    cov_ok = bool(np.all(np.abs(np.diag(cov) - 0.5) <= 0.03 * 0.5))
    elapsed = time.perf_counter() - start
    passed = mean_ok and cov_ok and linear.passed and tanh.passed and elapsed < 180.0
    record_acceptance(11, passed, f"linear mean={_fmt(mean)} vs y/2={_fmt(y / 2)} cov diag="
                                  f"{_fmt(np.diag(cov))}; tanh |mean-grid|="
                                  f"{_fmt(tanh.summary['mean_abs_error'])} <= "
                                  f"{_fmt(tanh.summary['mean_tolerance'])} ({elapsed:.1f}s)")
    assert passed


def test_criterion_12_flow_family_agreement():
    start = time.perf_counter()
    _, result = run_config_file("compare_mix2d.cfg")
    gaps = result.summary["follmer_prob_ode_gap"]
    elapsed = time.perf_counter() - start
    under = all(v for k, v in result.assertions.items() if k.endswith("_under_bound"))
    passed = under and all(b < a for a, b in zip(gaps[:-1], gaps[1:])) and elapsed < 300.0
    record_acceptance(12, passed, f"all flows under bound={under} Föllmer/prob-ODE gap "
                                  f"N=16,64,256: {_fmt(gaps)} ({elapsed:.1f}s)")
    assert passed


def test_criterion_13_exact_ot_correctness():
    start = time.perf_counter()
    rel, beaten = {}, True
    for d in (1, 2, 4, 8):
        m2 = np.full(d, 5.0 / math.sqrt(d))
        S2 = np.diag(np.linspace(0.5, 2.0, d))
        a = streams.standard_normals(4096, d, 13, d, 1)
        b = streams.standard_normals(4096, d, 13, d, 2) @ np.sqrt(S2) + m2
        res = w2_exact(a, b)
        exact = w2_gaussian_closed_form(np.zeros(d), np.eye(d), m2, S2)
        rel[d] = abs(res.W2 / exact - 1.0)
        rng = streams.philox(13, d, 3)
        for _ in range(100):
            beaten = beaten and res.cost <= assignment_cost(a, b, rng.permutation(4096))
    elapsed = time.perf_counter() - start
    passed = all(v <= 0.05 for v in rel.values()) and beaten and elapsed < 120.0
    record_acceptance(13, passed, "relative gap to closed form " + " ".join(
        f"d={k}:{v:.4f}" for k, v in rel.items()) + f" beats 100 random assignments={beaten} "
        f"({elapsed:.1f}s)")
    assert passed
