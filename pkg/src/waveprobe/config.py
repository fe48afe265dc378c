"""Experiment configuration: YAML in, validated nested mapping out.

A configuration is a mapping of sections (``domain``, ``grid``, ``faces``,
``potentials``, ``probes``, ``recon``, ``carleman``, ``stability``, ``seeds``,
``output``).  Missing keys fall back to :data:`DEFAULTS`; unknown keys are
rejected so that typos cannot silently change a run.  The digest is the
SHA-256 of the canonical JSON form of the merged mapping and stamps every
output.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError

DEFAULTS: dict[str, Any] = {
    "domain": {"shape": "rectangle", "x_min": -1.0, "x_max": 1.0, "y_min": -1.0, "y_max": 1.0,
               "center": [0.0, 0.0], "radius": 1.0},
    "grid": {"nx": 128, "T": 4.0, "cfl": 0.9},
    "faces": {"omega0": [1.0, 0.0], "epsilon": 0.25},
    "potentials": {
        "q1": {"kind": "zero"},
        "q2": {"kind": "static", "space": {"kind": "gaussian", "width": 0.25, "amplitude": 1.0}},
        "perturbation": {"kind": "static", "space": {"kind": "bump", "radius": 0.6, "amplitude": 1.0}},
        "scales": [1.0, 0.3, 0.1, 0.03, 0.01],
    },
    "probes": {
        "lambdas": [8.0, 16.0, 32.0, 64.0],
        "delta_rule": "coupled",
        "delta": 0.5,
        "alpha": 0.5,
        "directions": 64,
        "y_spacing": None,
        "n_random": 16,
        "go_lambdas": [],
    },
    "recon": {"R": 8.0, "fill": "zero", "mode": "measured", "rq_mode": "plain", "lam": 32.0},
    "carleman": {"members": 10, "lambdas": [8.0, 16.0, 32.0, 64.0], "omega": [1.0, 0.0]},
    "stability": {"gamma_star": None},
    "lightray": {"deltas": [0.4, 0.2, 0.1], "spacing": 0.025, "directions": 8},
    "seeds": {"seed": 0},
    "output": {"dir": "runs"},
}

#: One-line descriptions used by the generated reference.
DESCRIPTIONS: dict[str, str] = {
    "domain.shape": "rectangle or disk; the origin must be interior",
    "domain.x_min": "rectangle extents (x_min, x_max, y_min, y_max)",
    "domain.center": "disk centre",
    "domain.radius": "disk radius",
    "grid.nx": "nodes along x; ny follows from the aspect ratio",
    "grid.T": "final time",
    "grid.cfl": "CFL factor in (0, 0.9]",
    "faces.omega0": "central probe direction",
    "faces.epsilon": "aperture half-width in (0, 1)",
    "potentials.q1": "reference potential (catalog mapping)",
    "potentials.q2": "second potential (catalog mapping)",
    "potentials.perturbation": "stability direction p; must vanish on the lateral boundary",
    "potentials.scales": "stability scales s (q2 = q1 + s p)",
    "probes.lambdas": "ascending lambda sweep",
    "probes.delta_rule": "coupled (delta = lam^(-1/(4 + 2 alpha))) or fixed (probes.delta)",
    "probes.delta": "mollifier width when delta_rule is fixed",
    "probes.alpha": "Hoelder exponent used by the coupling and Richardson modes",
    "probes.directions": "directions spread over the full circle for reconstruction",
    "probes.y_spacing": "anchor spacing; null means delta / 2",
    "probes.n_random": "random boundary inputs per norm estimate",
    "probes.go_lambdas": "lambda values of GO inputs added to norm estimates",
    "recon.R": "frequency radius",
    "recon.fill": "zero, extrapolate (heuristic) or support",
    "recon.mode": "measured or oracle",
    "recon.rq_mode": "plain, richardson or deconvolve",
    "recon.lam": "probe lambda for the reconstruction",
    "carleman.members": "size of the manufactured family",
    "carleman.lambdas": "ascending lambda sweep",
    "carleman.omega": "weight direction",
    "stability.gamma_star": "crossover of the double-log model; null means exp(-e)",
    "lightray.deltas": "mollifier widths for the convolution study",
    "lightray.spacing": "sampling step of the ray transform",
    "lightray.directions": "directions for the slice calibration",
    "seeds.seed": "base seed of every random stream",
    "output.dir": "output root (overridden by WAVEPROBE_OUTPUT_ROOT)",
}


def _merge(base: Mapping[str, Any], over: Mapping[str, Any], path: str = "") -> dict[str, Any]:
    out = copy.deepcopy(dict(base))
    for k, v in over.items():
        where = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[k], Mapping) and not _is_catalog(where):
            if not isinstance(v, Mapping):
                raise ConfigError(f"{where} must be a mapping")
            out[k] = _merge(base[k], v, where + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _is_catalog(where: str) -> bool:
    """Potential entries are replaced wholesale rather than merged key by key."""
    return where in ("potentials.q1", "potentials.q2", "potentials.perturbation")


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    @property
    def digest(self) -> str:
        return config_digest(self.data)

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def with_overrides(self, **sections: Mapping[str, Any]) -> "ExperimentConfig":
        return ExperimentConfig(validate(_merge(self.data, sections)))

    def delta_for(self, lam: float) -> float:
        from .go_factory import coupled_delta

        pr = self.data["probes"]
        if pr["delta_rule"] == "coupled":
            return coupled_delta(lam, pr["alpha"])
        return float(pr["delta"])

    def y_spacing(self, delta: float) -> float:
        sp = self.data["probes"]["y_spacing"]
        return 0.5 * delta if sp is None else float(sp)


def config_digest(data: Mapping[str, Any]) -> str:
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _ascending(name: str, vals) -> None:
    if not isinstance(vals, list) or not vals:
        raise ConfigError(f"{name} must be a non-empty list")
    if any(not isinstance(v, (int, float)) or not math.isfinite(v) for v in vals):
        raise ConfigError(f"{name} must contain finite numbers")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{name} must be strictly ascending")


def validate(data: Mapping[str, Any]) -> dict[str, Any]:
    """Check module preconditions that can be decided without solving anything."""
    d = dict(data)
    g = d["grid"]
    if not isinstance(g["nx"], int) or g["nx"] < 16:
        raise ConfigError("grid.nx must be an integer >= 16")
    if not (isinstance(g["T"], (int, float)) and g["T"] > 0):
        raise ConfigError("grid.T must be positive")
    if not (0 < g["cfl"] <= 0.9):
        raise ConfigError("grid.cfl must lie in (0, 0.9]")
    if d["domain"]["shape"] not in ("rectangle", "disk"):
        raise ConfigError("domain.shape must be rectangle or disk")
    f = d["faces"]
    if not (0 < f["epsilon"] < 1):
        raise ConfigError("faces.epsilon must lie in (0, 1)")
    if len(f["omega0"]) != 2 or math.hypot(*f["omega0"]) == 0:
        raise ConfigError("faces.omega0 must be a nonzero 2-vector")
    pr = d["probes"]
    _ascending("probes.lambdas", pr["lambdas"])
    if min(pr["lambdas"]) < 1:
        raise ConfigError("probes.lambdas must be >= 1")
    if pr["delta_rule"] not in ("coupled", "fixed"):
        raise ConfigError("probes.delta_rule must be coupled or fixed")
    if not (0 < pr["delta"] < 1):
        raise ConfigError("probes.delta must lie in (0, 1)")
    if not (0 < pr["alpha"] <= 1):
        raise ConfigError("probes.alpha must lie in (0, 1]")
    if not isinstance(pr["directions"], int) or pr["directions"] < 2:
        raise ConfigError("probes.directions must be an integer >= 2")
    if pr["y_spacing"] is not None and not pr["y_spacing"] > 0:
        raise ConfigError("probes.y_spacing must be positive or null")
    if not isinstance(pr["n_random"], int) or pr["n_random"] < 8:
        raise ConfigError("probes.n_random must be an integer >= 8")
    r = d["recon"]
    if not r["R"] > 0:
        raise ConfigError("recon.R must be positive")
    if r["fill"] not in ("zero", "extrapolate", "support"):
        raise ConfigError("recon.fill must be zero, extrapolate or support")
    if r["mode"] not in ("measured", "oracle"):
        raise ConfigError("recon.mode must be measured or oracle")
    if r["rq_mode"] not in ("plain", "richardson", "deconvolve"):
        raise ConfigError("recon.rq_mode must be plain, richardson or deconvolve")
    c = d["carleman"]
    _ascending("carleman.lambdas", c["lambdas"])
    if not isinstance(c["members"], int) or c["members"] < 1:
        raise ConfigError("carleman.members must be a positive integer")
    scales = d["potentials"]["scales"]
    if not isinstance(scales, list) or not scales or any(s < 0 for s in scales):
        raise ConfigError("potentials.scales must be a non-empty list of non-negative numbers")
    gs = d["stability"]["gamma_star"]
    if gs is not None and not (0 < gs < 1):
        raise ConfigError("stability.gamma_star must lie in (0, 1) or be null")
    lr = d["lightray"]
    if any(not (0 < v < 1) for v in lr["deltas"]):
        raise ConfigError("lightray.deltas must lie in (0, 1)")
    seed = d["seeds"]["seed"]
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError("seeds.seed must be an unsigned 64-bit integer")
    return d


def load_config(source: str | Path | Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Merge a YAML file (or mapping) over the defaults and validate."""
    if source is None:
        over: Mapping[str, Any] = {}
    elif isinstance(source, Mapping):
        over = source
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {source}: {exc}") from exc
        try:
            over = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source} is not valid YAML: {exc}") from exc
        if not isinstance(over, Mapping):
            raise ConfigError(f"{source} must hold a mapping at top level")
    return ExperimentConfig(validate(_merge(DEFAULTS, over)))


def config_reference() -> str:
    """Defaults as commented YAML."""
    lines = ["# waveprobe configuration reference (all keys optional)"]
    for section, body in DEFAULTS.items():
        lines.append(f"{section}:")
        for key, val in body.items():
            desc = DESCRIPTIONS.get(f"{section}.{key}")
            dumped = yaml.safe_dump(val, default_flow_style=True, sort_keys=True).strip()
            if dumped.endswith("..."):
                dumped = dumped[:-3].strip()
            lines.append(f"  {key}: {dumped}" + (f"  # {desc}" if desc else ""))
    return "\n".join(lines) + "\n"
