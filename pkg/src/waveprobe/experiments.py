"""Canned experiments behind the command-line subcommands.

Each subcommand is a single stage writing a fixed set of files into a run
directory.  ``manifest.json`` records the config digest, timings and a
SHA-256 per file; a stage whose files are all present with matching
checksums under the same digest is skipped unless ``force`` is set.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .boundary_operator import random_inputs
from .carleman import CSV_COLUMNS as CARLEMAN_COLUMNS
from .carleman import carleman_sweep, manufactured_family
from .config import ExperimentConfig
from .errors import WaveprobeError
from .geometry import FacePartition, SpaceTimeGrid, boundary_faces, build_domain, build_grid
from .go_factory import Mollifier, build_go_decaying, build_go_vanishing, remainder_decay_report, standard_anchor
from .io import grid_meta, sha256_file, write_csv, write_grid
from .potential import Potential, sample_potential
from .recon import (
    STABILITY_COLUMNS,
    FrequencyLattice,
    assemble_cone,
    calibrate_sigma,
    error_budget,
    fourier_slice,
    greens_identity_breakdown,
    invert_lowpass,
    measured_rq,
    ray_axes,
    relative_l2,
    rq_estimate,
    rq_oracle,
    stability_curve,
    synthetic_vdelta,
)
from .wave_solver import discrete_energy, solve_ibvp

log = logging.getLogger(__name__)

SUBCOMMANDS = ("simulate", "probe", "carleman", "identity", "lightray", "reconstruct", "stability")
OUTPUT_ROOT_ENV = "WAVEPROBE_OUTPUT_ROOT"


class StageError(WaveprobeError):
    """A stage failed; ``stage`` names it."""

    code = "stage-failure"

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunContext:
    config: ExperimentConfig
    out: Path
    workers: int = 1
    force: bool = False
    output_root_source: str = "config"


@dataclass
class RunManifest:
    config_digest: str
    version: str
    subcommand: str
    output_root: str
    output_root_source: str
    stages: dict[str, dict[str, Any]] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: Path) -> "RunManifest | None":
        try:
            data = json.loads(path.read_text())
            return cls(**data)
        except (OSError, ValueError, TypeError):
            return None


# ---------------------------------------------------------------------------
# shared setup


def setup(cfg: ExperimentConfig) -> tuple[SpaceTimeGrid, FacePartition]:
    dom = build_domain(cfg["domain"])
    g = cfg["grid"]
    grid = build_grid(dom, g["nx"], g["T"], g["cfl"])
    f = cfg["faces"]
    return grid, boundary_faces(dom, f["omega0"], f["epsilon"])


def potentials(cfg: ExperimentConfig, grid: SpaceTimeGrid) -> tuple[Potential, Potential]:
    p = cfg["potentials"]
    return sample_potential(p["q1"], grid, label="q1"), sample_potential(p["q2"], grid, label="q2")


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# stages


def stage_simulate(ctx: RunContext) -> list[Path]:
    """Forward solve for ``q2`` driven by one random admissible input."""
    cfg = ctx.config
    grid, faces = setup(cfg)
    _, q2 = potentials(cfg, grid)
    inp = random_inputs(grid, faces, 1, cfg["seeds"]["seed"])[0]
    sol = solve_ibvp(grid, q2, g=inp.g, v1=inp.v1)
    out = ctx.out
    write_grid(out / "field.wpg", sol.u, grid_meta(grid, conjugation="none"))
    write_grid(out / "flux.wpg", sol.trace_set.normal_deriv, grid_meta(grid, kind="normal-derivative"))
    e = discrete_energy(sol)
    write_csv(out / "energy.csv", ("t_half", "energy"), zip(grid.t[:-1] + 0.5 * grid.dt, e))
    return [out / "field.wpg", out / "flux.wpg", out / "energy.csv"]


def stage_probe(ctx: RunContext) -> list[Path]:
    """Remainder norms of both probe families across the lambda sweep (fixed delta)."""
    cfg = ctx.config
    grid, faces = setup(cfg)
    _, q2 = potentials(cfg, grid)
    pr = cfg["probes"]
    rep = remainder_decay_report(q2, faces.omega, pr["delta"], pr["lambdas"], grid, faces)
    cols = ("lambda", "w_L2", "w_H1", "w_residual", "z_L2", "z_H1", "z_residual")
    write_csv(ctx.out / "decay.csv", cols, ([r[c] for c in cols] for r in rep["rows"]))
    slopes = {k: v for k, v in rep.items() if k != "rows"}
    (ctx.out / "slopes.json").write_text(json.dumps(slopes, indent=2, sort_keys=True, default=float))
    return [ctx.out / "decay.csv", ctx.out / "slopes.json"]


def stage_carleman(ctx: RunContext) -> list[Path]:
    cfg = ctx.config
    grid, _ = setup(cfg)
    q1, _ = potentials(cfg, grid)
    c = cfg["carleman"]
    fam = manufactured_family(grid, c["members"], cfg["seeds"]["seed"])
    sw = carleman_sweep(fam, q1, c["lambdas"], c["omega"], grid)
    write_csv(ctx.out / "carleman.csv", CARLEMAN_COLUMNS, sw.rows())
    summary = {"max_C": {repr(k): v for k, v in sw.max_C().items()},
               "smallest_bounded_lambda": sw.smallest_bounded_lambda()}
    (ctx.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return [ctx.out / "carleman.csv", ctx.out / "summary.json"]


IDENTITY_COLUMNS = ("lambda", "delta", "lhs", "term_G", "term_sigma_rest", "term_velT", "term_valT",
                    "residual", "measured", "relative_residual", "suppressed_share", "budget")


def identity_rows(q1: Potential, q2: Potential, faces: FacePartition, lambdas, delta_for: Callable[[float], float],
                  omega=None) -> list[tuple]:
    grid = q1.grid
    om = faces.omega if omega is None else _unit(omega)
    y = standard_anchor(grid, om)
    rows = []
    for lam in lambdas:
        d = delta_for(lam)
        mol = Mollifier.make(d, y, om)
        p1 = build_go_decaying(q1, lam, om, mol, grid)
        p2 = build_go_vanishing(q2, lam, om, mol, grid, faces)
        b = greens_identity_breakdown(q1, q2, p1, p2, faces)
        rows.append((float(lam), d, b.lhs, b.term_G, b.term_sigma_rest, b.term_velT, b.term_valT,
                     b.residual, b.measured, b.relative_residual, b.suppressed_share, error_budget(lam, d)))
    return rows


def stage_identity(ctx: RunContext) -> list[Path]:
    cfg = ctx.config
    grid, faces = setup(cfg)
    q1, q2 = potentials(cfg, grid)
    rows = identity_rows(q1, q2, faces, cfg["probes"]["lambdas"], cfg.delta_for)
    write_csv(ctx.out / "identity.csv", IDENTITY_COLUMNS, rows)
    return [ctx.out / "identity.csv"]


def stage_lightray(ctx: RunContext) -> list[Path]:
    """Slice-sign calibration and the mollification study on oracle ray transforms."""
    cfg = ctx.config
    grid, _ = setup(cfg)
    _, q2 = potentials(cfg, grid)
    lr = cfg["lightray"]
    n_dir = lr["directions"]
    cal_rows = []
    for th in np.linspace(0, 2 * np.pi, n_dir, endpoint=False):
        om = (math.cos(th), math.sin(th))
        c = calibrate_sigma(q2, om)
        cal_rows.append((th, c[-1], c[1], c["selected"]))
    write_csv(ctx.out / "calibration.csv", ("angle", "err_minus", "err_plus", "selected"), cal_rows)
    alpha = cfg["probes"]["alpha"]
    rows = []
    om = tuple(_unit(cfg["faces"]["omega0"]))
    rq = rq_oracle(q2, om, ray_axes(grid, lr["spacing"]))
    mass = float(np.sum(np.abs(rq.values)) * rq.h[0] * rq.h[1])
    for d in lr["deltas"]:
        v = synthetic_vdelta(rq, d)
        vh = synthetic_vdelta(rq, d / 2)
        plain = rq_estimate(v, d).l1(rq)
        rich = rq_estimate(v, d, "richardson", vh, alpha).l1(rq)
        rows.append((d, plain, rich, plain / mass if mass else math.nan))
    write_csv(ctx.out / "mollification.csv", ("delta", "l1_plain", "l1_richardson", "l1_plain_relative"), rows)
    return [ctx.out / "calibration.csv", ctx.out / "mollification.csv"]


@dataclass(frozen=True)
class ReconstructionResult:
    estimate: Potential
    cone: Any
    relative_error: float
    captured_energy: float
    evaluated: int
    failed: int
    seconds: float


def run_reconstruction(
    q1: Potential,
    q2: Potential,
    epsilon: float,
    lam: float,
    delta: float,
    directions: int,
    y_spacing: float,
    R: float,
    fill: str = "zero",
    mode: str = "measured",
    rq_mode: str = "plain",
    alpha: float = 0.5,
    progress: Callable[[str], None] | None = None,
) -> ReconstructionResult:
    """Full-circle reconstruction of ``q2 - q1`` from probe pairs.

    Each probe direction ``omega`` yields a sample of ``Rq(., -omega)``; the
    slices of all directions are assembled on the padded-box lattice and
    inverted with the requested fill.  ``richardson`` repeats the sweep at
    ``delta / 2``.
    """
    t0 = time.perf_counter()
    grid = q1.grid
    lat = FrequencyLattice.for_grid(grid, R)
    xi, _ = lat.xi_points(R)
    axes = ray_axes(grid, y_spacing)
    slices, evaluated, failed = [], 0, 0
    for k, th in enumerate(np.linspace(0, 2 * np.pi, directions, endpoint=False)):
        om = np.array([math.cos(th), math.sin(th)])
        faces = boundary_faces(grid.domain, om, epsilon)
        sw = measured_rq(q1, q2, om, lam, delta, faces, axes, mode)
        evaluated += sw.evaluated
        failed += len(sw.failed)
        half = None
        if rq_mode == "richardson":
            half = measured_rq(q1, q2, om, lam, delta / 2, faces, axes, mode).rq
        est = rq_estimate(sw.rq, delta, rq_mode, half, alpha)
        slices.append(fourier_slice(est, xi))
        if progress is not None:
            progress(f"direction {k + 1}/{directions}: {sw.evaluated} anchors, {time.perf_counter() - t0:.0f} s")
    cone = assemble_cone(slices, R, lat)
    qhat = invert_lowpass(cone, R, fill=fill, grid=grid)
    diff = Potential(grid, q2.values - q1.values, label="q2-q1")
    return ReconstructionResult(qhat, cone, relative_l2(qhat, diff), float(cone.mask.mean()),
                                evaluated, failed, time.perf_counter() - t0)


def stage_reconstruct(ctx: RunContext) -> list[Path]:
    cfg = ctx.config
    grid, faces = setup(cfg)
    q1, q2 = potentials(cfg, grid)
    r, pr = cfg["recon"], cfg["probes"]
    lam = float(r["lam"])
    d = cfg.delta_for(lam)
    res = run_reconstruction(q1, q2, faces.epsilon, lam, d, pr["directions"], cfg.y_spacing(d), r["R"],
                             r["fill"], r["mode"], r["rq_mode"], pr["alpha"], progress=log.info)
    out = ctx.out
    write_grid(out / "qhat.wpg", res.estimate.values, grid_meta(grid, R=r["R"], fill=r["fill"]))
    cone = res.cone
    stack = np.stack([cone.values.real, cone.values.imag, cone.mask.astype(float)])
    write_grid(out / "cone.wpg", stack, {"layers": ["real", "imag", "mask"], "R": cone.R_max,
                                         "tau": cone.lattice.tau, "xi1": cone.lattice.xi1,
                                         "xi2": cone.lattice.xi2})
    summary = {
        "relative_l2_error": res.relative_error,
        "mask_fraction": res.captured_energy,
        "anchors_evaluated": res.evaluated,
        "anchors_failed": res.failed,
        "lambda": lam,
        "delta": d,
        "R": r["R"],
        "fill": r["fill"],
        "mode": r["mode"],
        "rq_mode": r["rq_mode"],
        "directions": pr["directions"],
        "error_budget": error_budget(lam, d),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return [out / "qhat.wpg", out / "cone.wpg", out / "summary.json"]


def stage_stability(ctx: RunContext) -> list[Path]:
    cfg = ctx.config
    grid, faces = setup(cfg)
    q1, _ = potentials(cfg, grid)
    pot = cfg["potentials"]
    p = sample_potential(pot["perturbation"], grid, label="p")
    pr = cfg["probes"]
    go = {"lambdas": pr["go_lambdas"]} if pr["go_lambdas"] else None
    gs = cfg["stability"]["gamma_star"]
    fit = stability_curve(q1, p, pot["scales"], faces, n_random=pr["n_random"], go_sweep=go,
                          seed=cfg["seeds"]["seed"], gamma_star=math.exp(-math.e) if gs is None else gs,
                          workers=ctx.workers)
    write_csv(ctx.out / "stability.csv", STABILITY_COLUMNS, fit.rows())
    summary = {
        "fitted_C": fit.fitted_C,
        "gamma_star": fit.gamma_star,
        "monotone": fit.monotone,
        "floor_pairs": list(fit.floor_pairs),
        "alpha": fit.alpha,
        "n_random": pr["n_random"],
        "budget_constants": {"c": grid.T + grid.domain.diameter + 1,
                             "d": 2 * (grid.T + grid.domain.diameter + 1) + 1},
    }
    (ctx.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return [ctx.out / "stability.csv", ctx.out / "summary.json"]


STAGES: dict[str, Callable[[RunContext], list[Path]]] = {
    "simulate": stage_simulate,
    "probe": stage_probe,
    "carleman": stage_carleman,
    "identity": stage_identity,
    "lightray": stage_lightray,
    "reconstruct": stage_reconstruct,
    "stability": stage_stability,
}


# ---------------------------------------------------------------------------
# driver


def resolve_output(cfg: ExperimentConfig, name: str, out: str | os.PathLike | None) -> tuple[Path, str]:
    """Run directory and where its root came from (``flag``, ``env`` or ``config``)."""
    if out is not None:
        return Path(out), "flag"
    env = os.environ.get(OUTPUT_ROOT_ENV)
    root, src = (Path(env), "env") if env else (Path(cfg["output"]["dir"]), "config")
    return root / f"{name}-{cfg.digest[:12]}", src


def _up_to_date(manifest: RunManifest | None, digest: str, name: str, out: Path) -> bool:
    if manifest is None or manifest.config_digest != digest or name not in manifest.stages:
        return False
    files = manifest.stages[name].get("files", {})
    if not files:
        return False
    for fname, digest_ in files.items():
        p = out / fname
        if not p.exists() or sha256_file(p) != digest_:
            return False
    return True


def run_subcommand(name: str, cfg: ExperimentConfig, out=None, workers: int = 1, force: bool = False) -> RunManifest:
    if name not in STAGES:
        raise WaveprobeError(f"unknown subcommand {name!r}", "unknown-subcommand")
    run_dir, src = resolve_output(cfg, name, out)
    run_dir.mkdir(parents=True, exist_ok=True)
    mpath = run_dir / "manifest.json"
    old = RunManifest.load(mpath)
    if not force and _up_to_date(old, cfg.digest, name, run_dir):
        log.info("stage %s is up to date in %s", name, run_dir)
        return old  # type: ignore[return-value]
    (run_dir / "config.json").write_text(json.dumps(cfg.data, indent=2, sort_keys=True))
    ctx = RunContext(cfg, run_dir, workers, force, src)
    t0 = time.perf_counter()
    try:
        files = STAGES[name](ctx)
    except Exception as exc:  # every stage failure is reported under its tag
        raise StageError(name, exc) from exc
    files.append(run_dir / "config.json")
    manifest = RunManifest(cfg.digest, __version__, name, str(run_dir.resolve()), src)
    manifest.stages[name] = {
        "seconds": time.perf_counter() - t0,
        "files": {p.name: sha256_file(p) for p in files},
    }
    mpath.write_text(manifest.to_json())
    return manifest
