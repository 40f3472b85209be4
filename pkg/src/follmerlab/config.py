"""Run configuration files: loading, defaults, target construction and digests.

A configuration is a TOML document with up to six tables:

``target``
    ``family`` is one of ``gaussian``, ``mixture``, ``gaussian_tail``, ``ball``,
    ``atoms`` or ``bayes_posterior``. Matrices are written as ``{iso = s}``,
    ``{diag = [...]}`` or ``{dense = [[...], ...]}``; a bare number means ``iso``.
``flow``
    ``kind`` (follmer, rectified, prob-ode), ``mode`` (closed_form, quadrature),
    ``m`` (quadrature budget) and ``seed`` (quadrature stream).
``schedule``
    ``kind`` (uniform, log_uniform), ``steps`` and ``delta``.
``perturbation``
    ``mode`` (none, random, adversarial), ``eps``, ``seed``, ``features``, ``frequency``.
``metric``
    ``particles``, ``oracle_seed``, ``floor_c``, ``projections`` and audit probe sizes.
``experiment``
    ``kind`` plus the study parameters (see :mod:`follmerlab.experiments`).

Bundled configurations ship in the ``configs`` package directory and may be
referenced by bare file name.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .targets import (
    BayesPosteriorTarget,
    BoundedSupportTarget,
    GaussianMixtureTarget,
    GaussianTailTarget,
    GaussianTarget,
    SupNorms,
    constant_operator,
    cosine_tail,
    identity_operator,
    linear_operator,
    linear_tail,
    tanh_operator,
    zero_tail,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

TABLES = ("target", "flow", "schedule", "perturbation", "metric", "experiment")

DEFAULTS = {
    "flow": {"kind": "follmer", "mode": "closed_form", "m": 4096, "seed": 0},
    "schedule": {"kind": "uniform", "steps": 256, "delta": 0.0},
    "perturbation": {"mode": "none", "eps": 0.0, "seed": 1, "features": 64, "frequency": 1.0},
    "metric": {"particles": 2048, "oracle_seed": 7, "floor_c": 6.0, "projections": 64,
               "probe_times": 34, "probe_points": 64, "probe_radius": 3.0},
    "experiment": {"kind": "sample", "seed": 0},
}

PERTURB_MODES = {"none": None, "random": "fixed_random_field",
                 "adversarial": "adversarial_sinusoid"}


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def bundled_config_dir():
    """Directory holding the bundled configuration files."""
    return Path(str(resources.files("follmerlab") / "configs"))


def bundled_configs():
    """Sorted names of the bundled configuration files."""
    return sorted(p.name for p in bundled_config_dir().glob("*.cfg"))


def resolve_config_path(name):
    """Path of a configuration given as a file path or a bundled name (``.cfg`` optional)."""
    path = Path(name)
    if path.is_file():
        return path
    for candidate in (path.name, path.name + ".cfg"):
        bundled = bundled_config_dir() / candidate
        if bundled.is_file():
            return bundled
    raise ConfigurationError(f"configuration file '{name}' not found (bundled: "
                             f"{', '.join(bundled_configs())})")


def load_config(name):
    """Parse a configuration file and fill in defaults.

    Raises:
        ConfigurationError: On a missing file, invalid TOML or an unknown table.
    """
    path = resolve_config_path(name)
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    return resolve(raw)


def resolve(raw):
    """Merge ``raw`` over :data:`DEFAULTS`; unknown top-level tables are rejected."""
    unknown = sorted(set(raw) - set(TABLES))
    if unknown:
        raise ConfigurationError(f"unknown configuration tables: {', '.join(unknown)}")
    out = {}
    for table in TABLES:
        merged = copy.deepcopy(DEFAULTS.get(table, {}))
        merged.update(copy.deepcopy(raw.get(table, {})))
        if merged or table in raw:
            out[table] = merged
    return out


def canonical_json(obj):
    """Key-sorted, compact JSON with numpy values converted."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=json_default)


def json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def config_digest(config):
    """SHA-256 of the canonical JSON of a resolved configuration."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------


def parse_matrix(spec, dim, name="matrix"):
    """Matrix from ``{iso}``, ``{diag}``, ``{dense}`` or a bare scalar."""
    if isinstance(spec, (int, float)):
        spec = {"iso": spec}
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigurationError(f"{name} must be one of {{iso}}, {{diag}}, {{dense}}")
    (kind, value), = spec.items()
    if kind == "iso":
        if dim is None:
            raise ConfigurationError(f"{name}: iso matrices need a known dimension")
        return float(value) * np.eye(int(dim))
    if kind == "diag":
        mat = np.diag(np.atleast_1d(np.asarray(value, dtype=float)))
    elif kind == "dense":
        mat = np.atleast_2d(np.asarray(value, dtype=float))
        if mat.shape[0] != mat.shape[1]:
            raise ConfigurationError(f"{name}: dense matrix must be square")
    else:
        raise ConfigurationError(f"{name}: unknown matrix form '{kind}'")
    if dim is not None and mat.shape[0] != int(dim):
        raise ConfigurationError(f"{name}: expected a {dim} x {dim} matrix, got {mat.shape[0]}")
    return mat


def _require(table, key, family):
    if key not in table:
        raise ConfigurationError(f"target family '{family}' requires '{key}'")
    return table[key]


def _tail(spec, dim):
    if spec is None:
        return zero_tail()
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return zero_tail()
    if kind == "linear":
        return linear_tail(np.asarray(spec["b"], dtype=float))
    if kind == "cosine":
        return cosine_tail(spec["amplitude"], spec["frequency"])
    raise ConfigurationError(f"unknown tail kind '{kind}'")


def _forward(spec, dim):
    kind = spec.get("kind", "identity")
    if kind == "identity":
        return identity_operator(dim, probe_radius=spec.get("probe_radius", 1.0))
    if kind == "linear":
        H = np.atleast_2d(np.asarray(spec["H"], dtype=float))
        return linear_operator(H, spec.get("b"), probe_radius=spec.get("probe_radius", 1.0))
    if kind == "constant":
        return constant_operator(spec["value"], dim)
    if kind == "tanh":
        return tanh_operator(dim)
    raise ConfigurationError(f"unknown forward operator kind '{kind}'")


def build_target(table):
    """Construct a target from a ``target`` table.

    Raises:
        ConfigurationError: On a missing family, missing keys or an unknown family.
    """
    if "family" not in table:
        raise ConfigurationError("target table needs a 'family'")
    family = table["family"]
    name = table.get("name", family)
    if family == "gaussian":
        mean = np.atleast_1d(np.asarray(_require(table, "mean", family), dtype=float))
        d = mean.size
        cov = parse_matrix(table.get("cov", 1.0), d, "cov")
        C = parse_matrix(table.get("C", 1.0), d, "C")
        return GaussianTarget(mean, cov, C=C, name=name)
    if family == "mixture":
        means = np.atleast_2d(np.asarray(_require(table, "means", family), dtype=float))
        d = means.shape[1]
        covs = table.get("covs", [1.0] * means.shape[0])
        covs = np.stack([parse_matrix(c, d, f"covs[{i}]") for i, c in enumerate(covs)])
        weights = table.get("weights", [1.0 / means.shape[0]] * means.shape[0])
        C = parse_matrix(table.get("C", 1.0), d, "C")
        return GaussianMixtureTarget(weights, means, covs, C=C, name=name)
    if family == "gaussian_tail":
        d = int(_require(table, "dim", family))
        A = parse_matrix(table.get("A", 1.0), d, "A")
        C = parse_matrix(table.get("C", 1.0), d, "C")
        sup = table.get("sup_norms")
        if sup is not None:
            sup = SupNorms(float(sup["sqrtC_grad_h"]), float(sup["C_hess_h"]),
                           float(sup.get("grad_h", sup["sqrtC_grad_h"])),
                           float(sup.get("hess_h", sup["C_hess_h"])), "declared")
        return GaussianTailTarget(A, C, _tail(table.get("tail"), d), sup_norms=sup, name=name)
    if family in ("ball", "atoms"):
        diameter = float(_require(table, "diameter", family))
        delta = float(table.get("delta", 0.01))
        atoms = table.get("atoms")
        center = table.get("center")
        d = table.get("dim")
        if family == "atoms":
            atoms = np.atleast_2d(np.asarray(_require(table, "atoms", family), dtype=float))
            d = atoms.shape[1]
        elif d is None and center is None:
            raise ConfigurationError("target family 'ball' requires 'dim' or 'center'")
        d = int(d) if d is not None else len(center)
        C = parse_matrix(table.get("C", 1.0), d, "C")
        return BoundedSupportTarget(family, diameter, delta=delta, atoms=atoms,
                                    weights=table.get("weights"), center=center, dim=d, C=C,
                                    name=name)
    if family == "bayes_posterior":
        d = int(_require(table, "dim", family))
        C = parse_matrix(table.get("C", 1.0), d, "C")
        forward = _forward(table.get("forward", {"kind": "identity"}), d)
        Sigma = parse_matrix(table.get("Sigma", 1.0), forward.out_dim, "Sigma")
        y = np.asarray(_require(table, "y", family), dtype=float)
        return BayesPosteriorTarget(C, forward, Sigma, y, name=name,
                                    grid_sigmas=float(table.get("grid_sigmas", 6.0)),
                                    grid_points=table.get("grid_points"))
    raise ConfigurationError(f"unknown target family '{family}'")


def load_target(name):
    """Target declared in a configuration file."""
    cfg = load_config(name)
    if "target" not in cfg:
        raise ConfigurationError(f"configuration '{name}' has no target table")
    return build_target(cfg["target"])


def perturbation_mode(name):
    """Map the configuration spelling (none, random, adversarial) to a model mode."""
    if name in PERTURB_MODES:
        return PERTURB_MODES[name]
    if name in PERTURB_MODES.values():
        return name
    raise ConfigurationError(f"unknown perturbation mode '{name}'")
