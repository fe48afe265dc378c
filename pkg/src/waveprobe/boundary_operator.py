"""Partial-data boundary operator and a randomized estimate of its difference norm.

An input is a pair ``(g, v1)``: Dirichlet data carried on the input face and
an initial velocity (the initial value is always zero).  The operator returns
the normal flux on the measurement face together with the final state.
Inputs derived from the boundary-vanishing geometric-optics probe keep their
conjugation tag: data and outputs stay amplitudes, and norms put the phase
weight back relative to a fixed reference value so ratios are unaffected by
the (possibly enormous) common factor ``exp(s * phase_ref)``.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    LambdaTooSmallError,
    SamplingError,
    SupportLeakError,
    SupportViolationError,
    UnstableSchemeError,
)
from .geometry import FacePartition, SpaceTimeGrid
from .go_factory import (
    Mollifier,
    build_go_vanishing,
    coupled_delta,
    smoothstep,
    standard_anchor,
)
from .potential import Potential, check_boundary_agreement
from .wave_solver import (
    BoundaryObservation,
    Drift,
    check_input_support,
    h1_space,
    hf_norm,
    input_support_nodes,
    measurement_points,
    phase,
    solve_ibvp,
)

log = logging.getLogger(__name__)

#: Probes whose input norm falls below this fraction of their data norm are
#: dropped from the norm estimate (the free evolution barely sees them).
DEGENERATE_FRACTION = 1e-8

CSV_COLUMNS = (
    "probe_id", "family", "lambda", "omega_angle", "y_x", "y_y",
    "input_norm", "output_l2G", "output_h1", "ratio",
)


def _phase_ref(grid: SpaceTimeGrid, drift: Drift | None) -> float:
    if drift is None or drift.s == 0.0:
        return 0.0
    phi = phase(grid, drift.omega)
    return float(phi.max() if drift.s > 0 else phi.min())


@dataclass(frozen=True, eq=False)
class ProbeInput:
    """Admissible input ``(g, v1)``; ``g`` lives on the boundary nodes.

    Build through :meth:`make`, which checks the support of ``g`` and caches
    the input norm.  ``phase_ref`` is the reference used for every physical
    norm of a conjugated input.
    """

    grid: SpaceTimeGrid = field(repr=False)
    g: np.ndarray | None = field(repr=False)
    v1: np.ndarray | None = field(repr=False)
    conjugation: Drift | None
    hf_norm: float
    phase_ref: float = 0.0
    meta: dict = field(default_factory=dict)

    @classmethod
    def make(
        cls,
        grid: SpaceTimeGrid,
        g=None,
        v1=None,
        faces: FacePartition | None = None,
        conjugation=None,
        meta: Mapping[str, Any] | None = None,
    ) -> "ProbeInput":
        drift = Drift.make(conjugation)
        nb = len(grid.boundary_nodes)
        if g is not None:
            g = np.array(g, dtype=float)
            if g.shape != (grid.nt + 1, nb):
                raise SamplingError(f"g must have shape {(grid.nt + 1, nb)}, got {g.shape}")
        if v1 is not None:
            v1 = np.array(v1, dtype=float)
            if v1.shape != grid.space_shape:
                raise SamplingError(f"v1 must have shape {grid.space_shape}, got {v1.shape}")
        if faces is not None:
            check_input_support(grid, g, faces)
        ref = _phase_ref(grid, drift)
        norm = hf_norm(grid, g, v1, drift=drift, phase_ref=ref if drift is not None else None)
        for a in (g, v1):
            if a is not None:
                a.setflags(write=False)
        return cls(grid, g, v1, drift, norm, ref, dict(meta or {}))

    @property
    def data_norm(self) -> float:
        """Plain size of the data: ``|g|_{L2(Sigma)}`` and ``|v1|_{L2}`` combined."""
        grid = self.grid
        wb, wv = 1.0, 1.0
        d = self.conjugation
        if d is not None and d.s != 0.0:
            om = np.asarray(d.omega)
            wb = np.exp(d.s * (grid.t[:, None] + (grid.boundary_points @ om)[None, :] - self.phase_ref))
            X, Y = grid.mesh()
            wv = np.exp(d.s * (X * om[0] + Y * om[1] - self.phase_ref))
        sg = 0.0
        if self.g is not None:
            sg = grid.integrate_boundary((wb * grid.nodes_to_points(self.g)) ** 2)
        sv = 0.0 if self.v1 is None else grid.l2_space(wv * self.v1) ** 2
        return math.sqrt(max(sg, 0.0) + sv)

    def combine(self, a: float, other: "ProbeInput", b: float, faces=None) -> "ProbeInput":
        """The input ``a * self + b * other`` (same grid and conjugation)."""
        if self.conjugation != other.conjugation:
            raise ValueError("cannot combine inputs with different conjugations")

        def lin(x, y):
            if x is None and y is None:
                return None
            x = 0.0 if x is None else x
            y = 0.0 if y is None else y
            return a * np.asarray(x) + b * np.asarray(y)

        return ProbeInput.make(
            self.grid, lin(self.g, other.g), lin(self.v1, other.v1), faces, self.conjugation
        )


# ---------------------------------------------------------------------------
# observations


def _observe(grid: SpaceTimeGrid, sol, faces: FacePartition, ref: float) -> BoundaryObservation:
    drift = sol.conjugation
    ts = sol.trace_set
    gmask = measurement_points(grid, faces)
    flux = ts.normal_deriv * gmask
    final = ts.final_value
    if drift is None or drift.s == 0.0:
        l2g = math.sqrt(max(grid.integrate_boundary(flux**2), 0.0))
        h1 = h1_space(grid, final)
    else:
        # physical flux of exp(s phi) a is exp(s phi) (d_nu a + s (omega.nu) a) and
        # a = 0 at the boundary nodes only where g = 0, so keep the full expression
        s, om = drift.s, np.asarray(drift.omega)
        pts = grid.boundary_points
        phi_b = grid.t[:, None] + (pts @ om)[None, :]
        a_b = grid.nodes_to_points(grid.boundary_node_values(sol.u)) if sol.u is not None else None
        phys = ts.normal_deriv
        if a_b is not None:
            phys = phys + s * (grid.point_normal @ om)[None, :] * a_b
        phys = np.exp(s * (phi_b - ref)) * phys * gmask
        l2g = math.sqrt(max(grid.integrate_boundary(phys**2), 0.0))
        X, Y = grid.mesh()
        h1 = h1_space(grid, np.exp(s * (grid.T + X * om[0] + Y * om[1] - ref)) * final)
    return BoundaryObservation(flux, final.copy(), l2g, h1, drift)


def _zero_observation(grid: SpaceTimeGrid, drift) -> BoundaryObservation:
    return BoundaryObservation(
        np.zeros((grid.nt + 1, len(grid.point_node))), np.zeros(grid.space_shape), 0.0, 0.0, drift
    )


def apply_Bq(q: Potential, inp: ProbeInput, faces: FacePartition) -> BoundaryObservation:
    """``(g, v1) -> (d_nu u on G, u(T))`` for the Dirichlet problem with potential ``q``."""
    grid = inp.grid
    check_input_support(grid, inp.g, faces)
    if (inp.g is None or not np.any(inp.g)) and (inp.v1 is None or not np.any(inp.v1)):
        return _zero_observation(grid, inp.conjugation)
    keep = inp.conjugation is not None and inp.conjugation.s != 0.0
    sol = solve_ibvp(grid, q, g=inp.g, v1=inp.v1, drift=inp.conjugation, keep_field=keep)
    return _observe(grid, sol, faces, inp.phase_ref)


def apply_diff(q1: Potential, q2: Potential, inp: ProbeInput, faces: FacePartition) -> BoundaryObservation:
    """``(B_{q1} - B_{q2})`` applied to ``inp`` through the difference problem.

    ``u2`` solves the ``q2`` problem with the given data; the difference
    ``u1 - u2`` then solves the ``q1`` problem with zero data and source
    ``(q2 - q1) u2``.
    """
    grid = inp.grid
    check_input_support(grid, inp.g, faces)
    if not check_boundary_agreement(q1, q2):
        warnings.warn("q1 and q2 differ on the lateral boundary", RuntimeWarning, stacklevel=2)
    if (inp.g is None or not np.any(inp.g)) and (inp.v1 is None or not np.any(inp.v1)):
        return _zero_observation(grid, inp.conjugation)
    dq = q2.values - q1.values
    if not np.any(dq):
        return _zero_observation(grid, inp.conjugation)
    u2 = solve_ibvp(grid, q2, g=inp.g, v1=inp.v1, drift=inp.conjugation)
    src = dq * u2.u
    del u2
    keep = inp.conjugation is not None and inp.conjugation.s != 0.0
    d = solve_ibvp(grid, q1, f=src, drift=inp.conjugation, keep_field=keep)
    return _observe(grid, d, faces, inp.phase_ref)


def subtract_observations(a: BoundaryObservation, b: BoundaryObservation, grid: SpaceTimeGrid,
                          faces: FacePartition, phase_ref: float = 0.0) -> BoundaryObservation:
    """Direct difference ``a - b`` with norms recomputed (plain inputs only)."""
    if a.conjugation is not None and a.conjugation.s != 0.0:
        raise ValueError("direct subtraction is only provided for unconjugated observations")
    flux = a.flux_on_G - b.flux_on_G
    final = a.final_value - b.final_value
    l2g = math.sqrt(max(grid.integrate_boundary(flux**2), 0.0))
    return BoundaryObservation(flux, final, l2g, h1_space(grid, final), None)


def add_noise(obs: BoundaryObservation, level: float, rng: np.random.Generator,
              grid: SpaceTimeGrid) -> BoundaryObservation:
    """Additive Gaussian noise, relative to the RMS of each observed component."""
    if level <= 0:
        return obs
    flux = obs.flux_on_G.copy()
    on = np.any(flux != 0, axis=0)
    rms_f = math.sqrt(np.mean(flux[:, on] ** 2)) if on.any() else 0.0
    flux[:, on] += level * rms_f * rng.standard_normal(flux[:, on].shape)
    final = obs.final_value + level * math.sqrt(np.mean(obs.final_value**2)) * rng.standard_normal(
        obs.final_value.shape
    )
    l2g = math.sqrt(max(grid.integrate_boundary(flux**2), 0.0))
    return BoundaryObservation(flux, final, l2g, h1_space(grid, final), obs.conjugation)


# ---------------------------------------------------------------------------
# probe families


def face_window(grid: SpaceTimeGrid, faces: FacePartition, ramp: float | None = None) -> np.ndarray:
    """Smooth arclength window on the boundary nodes, zero off the input face.

    Equal to 1 at nodes whose arclength distance to the excluded set exceeds
    ``ramp`` (default: a tenth of the perimeter) and rising smoothly from 0.
    """
    inside = input_support_nodes(grid, faces)
    if inside.all():
        return np.ones(len(inside))
    L = grid.perimeter
    ramp = 0.1 * L if ramp is None else ramp
    s = grid.node_arclength
    out = s[~inside]
    d = np.abs(s[:, None] - out[None, :])
    d = np.minimum(d, L - d).min(axis=1)
    return np.where(inside, smoothstep(d / ramp), 0.0)


def _time_modes(t: np.ndarray, T: float, count: int) -> np.ndarray:
    """Smoothly switched-on time modes ``sin((j+1) pi t / T)``, ``j < count``."""
    ramp = smoothstep(t / (0.1 * T))
    j = np.arange(count)[:, None]
    return ramp[None, :] * np.sin((j + 1) * np.pi * t[None, :] / T)


def _arc_modes(s: np.ndarray, L: float, count: int) -> np.ndarray:
    """First ``count`` real Fourier modes in arclength: 1, cos, sin, cos, ..."""
    rows = [np.ones_like(s)]
    k = 1
    while len(rows) < count:
        rows.append(np.cos(2 * np.pi * k * s / L))
        if len(rows) < count:
            rows.append(np.sin(2 * np.pi * k * s / L))
        k += 1
    return np.stack(rows)


def random_inputs(
    grid: SpaceTimeGrid, faces: FacePartition, n: int, seed: int, n_modes: int = 8,
    start: int = 0,
) -> list[ProbeInput]:
    """Random band-limited Dirichlet inputs supported on the input face.

    Probe ``i`` draws its coefficient matrix from a generator keyed by
    ``(seed, i)``, so a longer list always extends a shorter one.
    """
    tm = _time_modes(grid.t, grid.T, n_modes)
    am = _arc_modes(grid.node_arclength, grid.perimeter, n_modes) * face_window(grid, faces)
    decay = 1.0 / (1.0 + np.add.outer(np.arange(n_modes), np.arange(n_modes)))
    out = []
    for i in range(start, start + n):
        rng = np.random.default_rng([seed, i])
        c = rng.standard_normal((n_modes, n_modes)) * decay
        g = tm.T @ c @ am
        out.append(ProbeInput.make(grid, g, None, faces, meta={"family": "random", "index": i}))
    return out


def go_input(probe, faces: FacePartition) -> ProbeInput:
    """Input generated by a boundary-vanishing GO probe, kept in amplitude form.

    The amplitude ``chi + z`` equals ``(1 - psi) chi`` on the boundary and
    vanishes at ``t = 0``; its time derivative there is ``d_t chi(0)``.
    """
    grid = probe.grid
    amp = probe.amplitude
    g = grid.boundary_node_values(amp)
    g = np.where(input_support_nodes(grid, faces)[None, :], g, 0.0)
    X, Y = grid.mesh()
    v1 = probe.mollifier.dt_value(0.0, X, Y) * grid.interior_mask
    om = np.asarray(probe.omega)
    meta = {
        "family": "go",
        "lambda": probe.lam,
        "omega_angle": math.atan2(om[1], om[0]),
        "y": tuple(probe.y),
    }
    return ProbeInput.make(grid, g, v1, faces, conjugation=(probe.lam, om), meta=meta)


def go_family(q: Potential, faces: FacePartition, spec: Mapping[str, Any] | None) -> list[ProbeInput]:
    """GO inputs over ``lambdas x directions x offsets``; failing probes are logged and skipped.

    ``spec`` keys: ``lambdas`` (list), ``directions`` (count spread over the
    cap, default 1), ``offsets`` (transverse anchor offsets, default ``[0]``),
    ``delta`` (number or ``"coupled"``, default coupled to lambda).
    """
    if not spec:
        return []
    grid = q.grid
    lams = [float(v) for v in spec.get("lambdas", [])]
    dirs = faces.cap_directions(int(spec.get("directions", 1)))
    offsets = [float(v) for v in spec.get("offsets", [0.0])]
    dspec = spec.get("delta", "coupled")
    out = []
    for lam in lams:
        delta = coupled_delta(lam, q.alpha) if dspec == "coupled" else float(dspec)
        for om in dirs:
            for off in offsets:
                y = standard_anchor(grid, om, offset=off)
                try:
                    mol = Mollifier.make(delta, y, om)
                    probe = build_go_vanishing(q, lam, om, mol, grid, faces)
                    out.append(go_input(probe, faces))
                except (LambdaTooSmallError, SupportLeakError, UnstableSchemeError,
                        SupportViolationError) as exc:
                    log.warning("GO probe lambda=%g omega=%s offset=%g skipped: %s", lam, om, off, exc)
    return out


# ---------------------------------------------------------------------------
# norm estimate


@dataclass(frozen=True)
class ProbeRecord:
    probe_id: int
    family: str
    lam: float
    omega_angle: float
    y_x: float
    y_y: float
    input_norm: float
    output_l2G: float
    output_h1: float
    ratio: float

    def row(self) -> tuple:
        return (self.probe_id, self.family, self.lam, self.omega_angle, self.y_x, self.y_y,
                self.input_norm, self.output_l2G, self.output_h1, self.ratio)


@dataclass(frozen=True)
class DiffNormEstimate:
    gamma: float
    per_probe: tuple[ProbeRecord, ...]
    probe_families: dict
    excluded: tuple[int, ...] = ()
    seed: int = 0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.per_probe:
                w.writerow([repr(v) if isinstance(v, float) else v for v in r.row()])

    def summary(self) -> str:
        fam = ", ".join(f"{k}={v}" for k, v in sorted(self.probe_families.items()))
        return (
            f"gamma: {self.gamma!r}\n"
            f"probes: {len(self.per_probe)} ({fam})\n"
            f"excluded: {len(self.excluded)}\n"
            f"seed: {self.seed}\n"
        )


def _record(i: int, inp: ProbeInput, obs: BoundaryObservation) -> ProbeRecord:
    m = inp.meta
    y = m.get("y", (math.nan, math.nan))
    return ProbeRecord(
        probe_id=i,
        family=str(m.get("family", "custom")),
        lam=float(m.get("lambda", math.nan)),
        omega_angle=float(m.get("omega_angle", math.nan)),
        y_x=float(y[0]),
        y_y=float(y[1]),
        input_norm=inp.hf_norm,
        output_l2G=obs.l2G_norm,
        output_h1=obs.h1_norm,
        ratio=obs.norm / inp.hf_norm,
    )


def evaluate_probes(
    q1: Potential, q2: Potential, faces: FacePartition, inputs: Sequence[ProbeInput],
    workers: int = 1, seed: int = 0,
) -> DiffNormEstimate:
    """Ratios for a fixed list of inputs; the max is taken in probe-id order."""
    keep, excluded = [], []
    for i, inp in enumerate(inputs):
        if inp.hf_norm <= DEGENERATE_FRACTION * inp.data_norm:
            log.info("probe %d excluded: input norm %.3g vs data norm %.3g", i, inp.hf_norm, inp.data_norm)
            excluded.append(i)
        else:
            keep.append(i)
    if not keep:
        raise SamplingError("every probe has a vanishing input norm", "degenerate-probe-family")

    def run(i: int) -> ProbeRecord:
        return _record(i, inputs[i], apply_diff(q1, q2, inputs[i], faces))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            recs = list(ex.map(run, keep))
    else:
        recs = [run(i) for i in keep]
    fams: dict[str, int] = {}
    for r in recs:
        fams[r.family] = fams.get(r.family, 0) + 1
    gamma = 0.0
    for r in recs:
        gamma = max(gamma, r.ratio)
    return DiffNormEstimate(gamma, tuple(recs), fams, tuple(excluded), seed)


def diff_norm_estimate(
    q1: Potential,
    q2: Potential,
    faces: FacePartition,
    n_random: int = 16,
    go_sweep: Mapping[str, Any] | None = None,
    seed: int = 0,
    workers: int = 1,
) -> DiffNormEstimate:
    """Lower bound for ``|B_{q1} - B_{q2}|`` from random and GO inputs."""
    if n_random < 8:
        raise SamplingError(f"n_random must be at least 8, got {n_random}", "too-few-probes")
    grid = q1.grid
    inputs = random_inputs(grid, faces, n_random, seed)
    inputs += go_family(q2, faces, go_sweep)
    return evaluate_probes(q1, q2, faces, inputs, workers=workers, seed=seed)


def galerkin_norm(
    q1: Potential, q2: Potential, faces: FacePartition, inputs: Sequence[ProbeInput]
) -> float:
    """Largest singular value of the difference operator restricted to ``span(inputs)``.

    Both the input Gram matrix (in the free-evolution L2(Q) inner product) and
    the output Gram matrix are formed, and the top generalized eigenvalue of
    the pencil is returned as a norm.  Plain (unconjugated) inputs only; full
    free fields are held in memory, so keep the basis small.
    """
    import scipy.linalg as sla

    grid = q1.grid
    if any(inp.conjugation is not None and inp.conjugation.s != 0.0 for inp in inputs):
        raise ValueError("galerkin_norm takes unconjugated inputs")
    sw = np.sqrt(grid.time_weights)[:, None, None] * np.sqrt(grid.space_weights)[None]
    free = np.stack([
        (solve_ibvp(grid, None, g=inp.g, v1=inp.v1).u * sw).ravel() for inp in inputs
    ])
    Gin = free @ free.T
    del free
    gmask = measurement_points(grid, faces)
    pw = np.sqrt(grid.time_weights)[:, None] * np.sqrt(grid.point_weight * gmask)[None, :]
    outs = []
    for inp in inputs:
        obs = apply_diff(q1, q2, inp, faces)
        f = obs.final_value
        gx, gy = np.gradient(f, grid.dx, grid.dy, edge_order=2)
        w = np.sqrt(grid.space_weights)
        outs.append(np.concatenate([(obs.flux_on_G * pw).ravel(), (f * w).ravel(),
                                    (gx * w).ravel(), (gy * w).ravel()]))
    O = np.stack(outs)
    Gout = O @ O.T
    ev = sla.eigh(Gout, Gin, eigvals_only=True)
    return float(math.sqrt(max(ev[-1], 0.0)))


def with_family(est: DiffNormEstimate, family: str) -> DiffNormEstimate:
    """Sub-estimate restricted to one probe family."""
    recs = tuple(r for r in est.per_probe if r.family == family)
    gamma = max((r.ratio for r in recs), default=0.0)
    return replace(est, gamma=gamma, per_probe=recs, probe_families={family: len(recs)})
