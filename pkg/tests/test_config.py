import json

import numpy as np
import pytest

from follmerlab.config import (
    DEFAULTS,
    build_target,
    bundled_configs,
    canonical_json,
    config_digest,
    load_config,
    load_target,
    parse_matrix,
    perturbation_mode,
    resolve,
)
from follmerlab.errors import ConfigurationError
from follmerlab.targets import BayesPosteriorTarget, BoundedSupportTarget, GaussianTarget


@pytest.mark.parametrize("name", bundled_configs())
def test_every_bundled_config_builds_its_target(name):
    cfg = load_config(name)
    assert set(cfg) >= {"flow", "schedule", "metric", "experiment"}
    if "target" in cfg:
        target = build_target(cfg["target"])
        assert target.dim >= 1


def test_defaults_fill_missing_keys():
    cfg = resolve({"target": {"family": "gaussian", "mean": [0.0]}, "flow": {"m": 8192}})
    assert cfg["flow"]["m"] == 8192
    assert cfg["flow"]["kind"] == DEFAULTS["flow"]["kind"]
    assert cfg["metric"]["floor_c"] == 6.0
    # Defaults are copied, never shared.
    cfg["metric"]["particles"] = 1
    assert DEFAULTS["metric"]["particles"] == 2048


def test_unknown_table_is_rejected():
    with pytest.raises(ConfigurationError, match="unknown configuration tables"):
        resolve({"targett": {}})


def test_missing_file_and_bad_toml(tmp_path):
    with pytest.raises(ConfigurationError, match="not found"):
        load_config("no_such_config")
    bad = tmp_path / "bad.cfg"
    bad.write_text("[target\nfamily = 1\n")
    with pytest.raises(ConfigurationError):
        load_config(str(bad))


def test_config_file_path_and_bundled_name_agree(tmp_path):
    path = tmp_path / "mine.cfg"
    path.write_text('[target]\nfamily = "gaussian"\nmean = [0.5]\ncov = { iso = 1.5 }\n')
    a = load_target(str(path))
    b = load_target("gaussian_offset_1d")
    assert isinstance(a, GaussianTarget)
    np.testing.assert_allclose(a.cov, b.cov)
    assert load_config("gaussian_iso") == load_config("gaussian_iso.cfg")


def test_matrix_forms():
    np.testing.assert_allclose(parse_matrix(2.0, 3), 2.0 * np.eye(3))
    np.testing.assert_allclose(parse_matrix({"iso": 2.0}, 2), 2.0 * np.eye(2))
    np.testing.assert_allclose(parse_matrix({"diag": [1.0, 3.0]}, 2), np.diag([1.0, 3.0]))
    dense = [[2.0, 0.5], [0.5, 1.0]]
    np.testing.assert_allclose(parse_matrix({"dense": dense}, 2), dense)
    with pytest.raises(ConfigurationError):
        parse_matrix({"iso": 1.0, "diag": [1.0]}, 1)
    with pytest.raises(ConfigurationError):
        parse_matrix({"band": 1.0}, 1)
    with pytest.raises(ConfigurationError):
        parse_matrix({"diag": [1.0, 2.0]}, 3)


@pytest.mark.parametrize("table,needle", [
    ({}, "family"),
    ({"family": "unicorn"}, "unknown target family"),
    ({"family": "gaussian"}, "mean"),
    ({"family": "ball", "diameter": 1.0}, "dim"),
    ({"family": "gaussian_tail", "dim": 1, "tail": {"kind": "sawtooth"}}, "tail kind"),
    ({"family": "bayes_posterior", "dim": 1, "y": [0.0], "forward": {"kind": "cubic"}},
     "forward operator"),
])
def test_target_table_errors(table, needle):
    with pytest.raises(ConfigurationError, match=needle):
        build_target(table)


def test_other_families_build():
    ball = build_target({"family": "ball", "diameter": 2.0, "dim": 2, "delta": 0.05})
    assert isinstance(ball, BoundedSupportTarget)
    post = build_target({"family": "bayes_posterior", "dim": 2, "y": [1.0, -0.6]})
    assert isinstance(post, BayesPosteriorTarget)


def test_digest_is_key_order_independent():
    a = resolve({"target": {"family": "gaussian", "mean": [0.0], "cov": 2.0}})
    b = resolve({"target": {"cov": 2.0, "mean": [0.0], "family": "gaussian"}})
    assert config_digest(a) == config_digest(b)
    b["flow"]["seed"] = 5
    assert config_digest(a) != config_digest(b)
    assert json.loads(canonical_json({"x": np.float64(1.5), "y": np.arange(2)})) == {
        "x": 1.5, "y": [0, 1]}


def test_perturbation_mode_names():
    assert perturbation_mode("none") is None
    assert perturbation_mode("random") == "fixed_random_field"
    assert perturbation_mode("adversarial_sinusoid") == "adversarial_sinusoid"
    with pytest.raises(ConfigurationError):
        perturbation_mode("gremlin")
