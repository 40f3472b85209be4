import math

import numpy as np
import pytest

from follmerlab.artifacts import read_samples
from follmerlab.config import load_config, resolve
from follmerlab.errors import ConfigurationError
from follmerlab.experiments import (
    anisotropic_family,
    dimension_scaling,
    fit_scaling,
    load_manifest,
    persist,
    replay,
    run_config_file,
    run_experiment,
    smallest_steps,
)
from follmerlab.integrate import make_field


def scalar_euler_w2(variances, N):
    """Exact W2 between the Euler law and N(0, diag(variances)) with C = I.

    Per coordinate V(t, x) = x t (s - 1) / (t^2 s + 1 - t^2), so each Euler step
    scales the standard deviation by 1 + h t (s - 1) / (t^2 s + 1 - t^2).
    """
    s = np.asarray(variances, dtype=float)
    sd = np.ones_like(s)
    h = 1.0 / N
    for k in range(N):
        t = k * h
        sd = sd * (1.0 + h * t * (s - 1.0) / (t * t * s + 1.0 - t * t))
    return math.sqrt(float(np.sum((np.abs(sd) - np.sqrt(s)) ** 2)))


def brute_force_n_star(variances, eps0, limit):
    for N in range(1, limit + 1):
        if scalar_euler_w2(variances, N) <= eps0:
            return N
    return None


def test_anisotropic_family_variances():
    t = anisotropic_family(4, (0.25, 4.0))
    q = (np.arange(4) + 0.5) / 4
    np.testing.assert_allclose(np.diag(t.cov), 0.25 * 16.0**q)
    np.testing.assert_allclose(t.C, np.eye(4))


@pytest.mark.parametrize("d", [2, 8])
def test_smallest_steps_matches_scalar_search(d):
    target = anisotropic_family(d)
    n = smallest_steps(make_field(target, "follmer"), target, 0.02, 4096)
    assert n == brute_force_n_star(np.diag(target.cov), 0.02, 400)


def test_smallest_steps_reports_censoring():
    target = anisotropic_family(8)
    assert smallest_steps(make_field(target, "follmer"), target, 1e-6, 64) is None


def test_bundled_scaling_study_matches_oracle():
    config = load_config("bundled_scaling")
    result = run_experiment(config)
    assert result.passed, result.failed_assertions()
    for row in result.rows[:2]:
        target = anisotropic_family(row["d"])
        variances = np.diag(target.cov)
        assert row["n_star"] == brute_force_n_star(variances, 0.02, 400)
        assert row["n_star_half_eps"] == brute_force_n_star(variances, 0.01, 800)
    slope = result.summary["fit"]["slope"]
    assert 0.35 <= slope <= 0.65


def test_fit_scaling_recovers_exact_power_law():
    dims = [2, 8, 32, 128]
    fit = fit_scaling(dims, [int(round(10 * d**0.5)) for d in dims])
    assert fit.slope == pytest.approx(0.5, abs=0.01)
    assert fit.slope_band[0] <= fit.slope <= fit.slope_band[1]
    censored = fit_scaling(dims, [14, 28, None, None])
    assert censored.censored == (32, 128)
    assert censored.slope == pytest.approx(0.5)
    assert math.isnan(fit_scaling(dims, [1, None, None, None]).slope)


def test_failing_band_is_reported():
    result = dimension_scaling(dims=(2, 8), slope_band=(0.9, 1.0))
    assert not result.passed
    assert "slope_in_band" in result.failed_assertions()


def small_sample_config():
    return resolve({
        "target": {"family": "gaussian", "mean": [0.5, -0.2], "cov": {"diag": [1.5, 0.5]}},
        "schedule": {"steps": 16},
        "perturbation": {"mode": "random", "eps": 0.05},
        "metric": {"particles": 256},
        "experiment": {"kind": "sample", "seed": 4},
    })


def test_persist_and_replay_reproduce_bit_for_bit(tmp_path):
    config = small_sample_config()
    result = run_experiment(config)
    manifest = persist(result, config, tmp_path / "a")
    assert (tmp_path / "a" / "manifest.json").is_file()
    for name in manifest.artifacts:
        assert (tmp_path / "a" / name).is_file(), name
    new, diffs = replay(tmp_path / "a")
    assert diffs == []
    again = run_experiment(config)
    persist(again, config, tmp_path / "b")
    a_pts, a_hdr = read_samples(tmp_path / "a" / "samples.bin")
    b_pts, b_hdr = read_samples(tmp_path / "b" / "samples.bin")
    assert a_pts.tobytes() == b_pts.tobytes()
    assert a_hdr == b_hdr
    loaded = load_manifest(tmp_path / "a")
    assert loaded.config_digest == manifest.config_digest
    assert loaded.seeds["initial"] == 4


def test_replay_detects_a_tampered_manifest(tmp_path):
    import json

    config = small_sample_config()
    persist(run_experiment(config), config, tmp_path / "run")
    path = tmp_path / "run" / "manifest.json"
    doc = json.loads(path.read_text())
    doc["metrics"]["mean"] = [0.0, 0.0]
    path.write_text(json.dumps(doc))
    _, diffs = replay(tmp_path / "run")
    assert "metrics" in diffs


def test_persist_refuses_to_overwrite(tmp_path):
    config = small_sample_config()
    result = run_experiment(config)
    persist(result, config, tmp_path / "run")
    with pytest.raises(ConfigurationError):
        persist(result, config, tmp_path / "run")
    persist(result, config, tmp_path / "run", force=True)


def test_early_stop_drift_matches_atom_moments():
    config, result = run_config_file("early_stop")
    assert result.passed, result.failed_assertions()
    table = config["target"]
    atoms = np.asarray(table["atoms"], dtype=float)
    weights = np.asarray(table.get("weights", np.full(len(atoms), 1 / len(atoms))), dtype=float)
    second = float(np.sum(weights / weights.sum() * np.sum(atoms**2, axis=1)))
    d = atoms.shape[1]
    for key, entry in result.summary["deltas"].items():
        delta = float(key)
        s2 = 1 - (1 - delta) ** 2
        # W2 of the synchronous coupling (X, (1 - delta) X + s Z), averaged over Z exactly.
        expected = math.sqrt(delta**2 * second + s2 * d)
        assert entry["drift"] == pytest.approx(expected, rel=0.02)
        assert entry["drift_bound"] == pytest.approx(math.sqrt(2 * delta * d))
        w2 = entry["w2"]
        assert all(b < a for a, b in zip(w2, w2[1:]))


def test_unknown_experiment_kind_is_rejected():
    config = small_sample_config()
    with pytest.raises(ConfigurationError):
        run_experiment(config, kind="teleport")
