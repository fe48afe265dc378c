"""From probe pairs to a reconstructed potential.

The chain is

1. the Green identity for a decaying/vanishing probe pair, which turns
   boundary data into ``int q u1 u2`` (:func:`greens_identity_breakdown`);
2. mollified ray integrals ``V(y)`` (:func:`estimate_Vdelta`), read as light-ray
   transform samples (:func:`rq_estimate`);
3. spatial Fourier transforms of those samples, which are values of the
   space-time transform of ``q`` on slices ``tau = sigma * omega.xi``
   (:func:`fourier_slice`);
4. scattering the slices onto the padded-box frequency lattice
   (:func:`assemble_cone`) and a low-pass inversion (:func:`invert_lowpass`).

Transforms are unnormalized: ``F q(tau, xi) = int q(t, x) exp(-i (t tau + x.xi))``.
A static ray family ``Rq(x, omega) = int q(t, x + t omega) dt`` then has
``int Rq(x, omega) exp(-i x.xi) dx = F q(-omega.xi, xi)``, so the slice sign is
``sigma = -1``; the calibration routine :func:`calibrate_sigma` confirms it.

A probe pair with direction ``omega`` concentrates on the lines
``x = y - t omega`` and therefore measures ``Rq(., -omega)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve
from scipy.special import j0

from .boundary_operator import apply_diff, diff_norm_estimate, go_input
from .errors import ProbeMismatchError, SamplingError, WaveprobeError
from .geometry import FacePartition, SpaceTimeGrid
from .go_factory import (
    GOProbe,
    Mollifier,
    _bump_parts,
    build_go_decaying,
    build_go_vanishing,
)
from .potential import Potential, check_boundary_agreement, lightray_oracle, ray_chord
from .wave_solver import end_velocity, measurement_points, solve_ibvp

#: Sign in ``tau = sigma * omega.xi`` for slices of ``Rq(., omega)``.
SLICE_SIGMA: int | None = -1

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Green identity


@dataclass(frozen=True)
class IdentityBreakdown:
    lhs: float
    term_G: float
    term_sigma_rest: float
    term_velT: float
    term_valT: float
    residual: float
    lam: float = math.nan
    delta: float = math.nan

    @property
    def measured(self) -> float:
        """The part of the right-hand side visible in the boundary data."""
        return self.term_G + self.term_valT

    @property
    def suppressed_share(self) -> float:
        """``(|term_sigma_rest| + |term_velT|) / |lhs|``."""
        return (abs(self.term_sigma_rest) + abs(self.term_velT)) / abs(self.lhs) if self.lhs else 0.0

    @property
    def relative_residual(self) -> float:
        return abs(self.residual) / abs(self.lhs) if self.lhs else abs(self.residual)


def _check_pair(probe1: GOProbe, probe2: GOProbe) -> None:
    if probe1.sign != -1 or probe2.sign != +1:
        raise ProbeMismatchError("probe1 must be decaying and probe2 vanishing")
    if not math.isclose(probe1.lam, probe2.lam) or not np.allclose(probe1.omega, probe2.omega):
        raise ProbeMismatchError("probes must share lambda and omega")
    if not probe1.grid.same_as(probe2.grid):
        raise ProbeMismatchError("probes live on different grids")


def _probe1_traces(probe1: GOProbe):
    """``a`` on boundary points, ``a(T)`` and ``d_t a(T)`` for the decaying amplitude."""
    grid = probe1.grid
    a = probe1.amplitude
    a_b = grid.nodes_to_points(grid.boundary_node_values(a))
    a_T = a[-1]
    at_T = end_velocity(a[-1], a[-2], a[-3], grid.dt, -probe1.lam)
    return a_b, a_T, at_T


def _boundary_terms(grid, faces, lam, flux, uT, a_b, a_T, at_T):
    gmask = measurement_points(grid, faces)
    term_G = -grid.integrate_boundary(flux * a_b, gmask)
    term_valT = -grid.integrate_space(uT * (-lam * a_T + at_T))
    return term_G, term_valT, gmask


def greens_identity_breakdown(
    q1: Potential, q2: Potential, probe1: GOProbe, probe2: GOProbe, faces: FacePartition
) -> IdentityBreakdown:
    """All terms of the integration-by-parts identity for ``u = w1 - u2``.

    Every product pairs the decaying amplitude of ``probe1`` with a growing
    amplitude, so the exponential phases cancel and the terms are computed
    from amplitudes only:

    * ``lhs = int_Q q a b`` with ``q = q2 - q1``, ``a = chi + w``, ``b = chi + z``;
    * ``term_G = -int_G d_nu v a`` and ``term_sigma_rest`` the same over the rest;
    * ``term_velT = int (lam v + v_t)(T) a(T)``;
    * ``term_valT = -int v(T) (-lam a + a_t)(T)``;

    where ``v`` solves ``(P_lam + q1) v = (q2 - q1) b`` with zero data.
    """
    _check_pair(probe1, probe2)
    grid = probe1.grid
    lam, om = probe1.lam, probe1.omega
    dq = q2.values - q1.values
    a = probe1.amplitude
    b = probe2.amplitude
    lhs = grid.integrate(dq * a * b)
    if not np.any(dq):
        return IdentityBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, lam, probe1.delta)
    sol = solve_ibvp(grid, q1, f=dq * b, drift=(lam, om), keep_field=False)
    ts = sol.trace_set
    a_b, a_T, at_T = _probe1_traces(probe1)
    term_G, term_valT, gmask = _boundary_terms(
        grid, faces, lam, ts.normal_deriv, ts.final_value, a_b, a_T, at_T
    )
    term_rest = -grid.integrate_boundary(ts.normal_deriv * a_b, ~gmask)
    term_velT = grid.integrate_space((lam * ts.final_value + ts.final_velocity) * a_T)
    resid = lhs - (term_G + term_rest + term_velT + term_valT)
    return IdentityBreakdown(lhs, term_G, term_rest, term_velT, term_valT, resid, lam, probe1.delta)


# ---------------------------------------------------------------------------
# mollified values


def error_budget(lam: float, delta: float) -> float:
    """Unit-constant size of the neglected correction: ``delta^-2 lam^-1/2 + delta^-3 lam^-1``."""
    return delta**-2 * lam**-0.5 + delta**-3 / lam


def direct_vdelta(q: Potential, y, omega, delta: float) -> float:
    """``int_Q q chi^2``, the defining integral of ``V`` by grid quadrature."""
    mol = Mollifier.make(delta, y, omega)
    grid = q.grid
    X, Y = grid.mesh()
    tot = np.zeros(grid.nt + 1)
    for n, t in enumerate(grid.t):
        c = mol.value(t, X, Y)
        tot[n] = grid.integrate_space(q.values[n] * c * c)
    return float(tot @ grid.time_weights)


@dataclass(frozen=True)
class VdeltaEstimate:
    value: float
    mode: str
    y: tuple[float, float]
    omega: tuple[float, float]
    lam: float
    delta: float
    budget: float
    breakdown: IdentityBreakdown | None = None


def vdelta_from_data(obs, probe1: GOProbe, faces: FacePartition) -> float:
    """Measured-mode value from an observation of ``B_{q1} - B_{q2}`` on a vanishing input.

    Uses the flux on ``G`` and the final state of the difference field, both in
    amplitude form, together with the decaying probe's amplitude.
    """
    grid = probe1.grid
    a_b, a_T, at_T = _probe1_traces(probe1)
    term_G, term_valT, _ = _boundary_terms(
        grid, faces, probe1.lam, obs.flux_on_G, obs.final_value, a_b, a_T, at_T
    )
    return term_G + term_valT


def estimate_Vdelta(
    q1: Potential,
    q2: Potential,
    y,
    omega,
    lam: float,
    delta: float,
    mode: str = "oracle",
    faces: FacePartition | None = None,
    probes: tuple[GOProbe, GOProbe] | None = None,
) -> VdeltaEstimate:
    """``V(y)`` from a probe pair (``oracle``: full identity value; ``measured``: data terms)."""
    if mode not in ("oracle", "measured"):
        raise WaveprobeError(f"unknown mode {mode!r}", "invalid-mode")
    if faces is None:
        raise WaveprobeError("faces are required", "missing-faces")
    grid = q1.grid
    om = np.asarray(omega, dtype=float)
    om = om / np.linalg.norm(om)
    yt = (float(y[0]), float(y[1]))
    budget = error_budget(lam, delta)
    if not np.any(q2.values - q1.values):
        return VdeltaEstimate(0.0, mode, yt, tuple(om), lam, delta, budget)
    if probes is None:
        mol = Mollifier.make(delta, yt, om)
        probes = (build_go_decaying(q1, lam, om, mol, grid),
                  build_go_vanishing(q2, lam, om, mol, grid, faces))
    p1, p2 = probes
    if mode == "oracle":
        bd = greens_identity_breakdown(q1, q2, p1, p2, faces)
        return VdeltaEstimate(bd.lhs, mode, yt, tuple(om), lam, delta, budget, bd)
    _check_pair(p1, p2)
    obs = apply_diff(q1, q2, go_input(p2, faces), faces)
    # apply_diff returns B_{q1} - B_{q2}, i.e. the traces of w1 - u2
    return VdeltaEstimate(vdelta_from_data(obs, p1, faces), mode, yt, tuple(om), lam, delta, budget)


# ---------------------------------------------------------------------------
# light-ray samples


@dataclass(frozen=True, eq=False)
class RqSample:
    """Samples of ``x -> Rq(x, omega)`` on a uniform 2-D grid.

    ``blur`` records a mollification width still present in ``values``; the
    slice stage divides it out when set.
    """

    omega: tuple[float, float]
    y1: np.ndarray = field(repr=False)
    y2: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    blur: float | None = None

    @property
    def h(self) -> tuple[float, float]:
        return float(self.y1[1] - self.y1[0]), float(self.y2[1] - self.y2[0])

    def points(self) -> np.ndarray:
        Y1, Y2 = np.meshgrid(self.y1, self.y2, indexing="ij")
        return np.stack([Y1.ravel(), Y2.ravel()], axis=1)

    def l1(self, other: "RqSample | np.ndarray") -> float:
        v = other.values if isinstance(other, RqSample) else np.asarray(other)
        h1, h2 = self.h
        return float(np.sum(np.abs(self.values - v)) * h1 * h2)

    def with_values(self, values: np.ndarray, blur: float | None = None) -> "RqSample":
        return RqSample(self.omega, self.y1, self.y2, np.asarray(values), blur)


def ray_axes(grid: SpaceTimeGrid, spacing: float, radius: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric uniform axes covering ``|y| <= T + diam`` (or ``radius``)."""
    r = grid.T + grid.domain.diameter if radius is None else float(radius)
    n = int(math.ceil(r / spacing))
    ax = spacing * np.arange(-n, n + 1)
    return ax, ax.copy()


def tube_hits(grid: SpaceTimeGrid, pts: np.ndarray, omega, margin: float = 0.0) -> np.ndarray:
    """Which ``y`` have a ray ``y + t omega`` (fattened by ``margin``) meeting the domain."""
    om = np.asarray(omega, dtype=float)
    hit = np.zeros(len(pts), dtype=bool)
    perp = np.array([-om[1], om[0]])
    offs = [0.0] if margin <= 0 else np.linspace(-margin, margin, 5)
    for o in offs:
        t0, t1 = ray_chord(grid.domain, pts + o * perp, om, grid.T)
        hit |= t1 > t0
    return hit


def rq_oracle(q: Potential, omega, axes: tuple[np.ndarray, np.ndarray], quad_steps: int | None = None) -> RqSample:
    """``Rq(., omega)`` on the axes by direct ray quadrature."""
    om = np.asarray(omega, dtype=float)
    om = om / np.linalg.norm(om)
    y1, y2 = axes
    rs = RqSample((float(om[0]), float(om[1])), y1, y2, np.zeros((len(y1), len(y2))))
    pts = rs.points()
    vals = np.zeros(len(pts))
    hit = tube_hits(q.grid, pts, om)
    if hit.any():
        vals[hit] = lightray_oracle(q, om, pts[hit], quad_steps or 2 * q.grid.nt)
    return rs.with_values(vals.reshape(len(y1), len(y2)))


@dataclass(frozen=True, eq=False)
class MeasuredSweep:
    """Measured-mode ``V`` values for one probe direction on a ``y`` lattice."""

    rq: RqSample
    probe_omega: tuple[float, float]
    lam: float
    delta: float
    evaluated: int
    failed: tuple[tuple[float, float], ...]


def measured_rq(
    q1: Potential,
    q2: Potential,
    omega,
    lam: float,
    delta: float,
    faces: FacePartition,
    axes: tuple[np.ndarray, np.ndarray],
    mode: str = "measured",
) -> MeasuredSweep:
    """``V(y)`` for every ``y`` on ``axes`` whose probe tube meets the domain.

    Probes with direction ``omega`` follow the lines ``x = y - t omega``, so
    the result is returned as a sample of ``Rq(., -omega)``.  Anchors whose
    vanishing probe cannot be built within the input face are left at zero
    and listed in ``failed``.
    """
    om = np.asarray(omega, dtype=float)
    om = om / np.linalg.norm(om)
    y1, y2 = axes
    pts = RqSample((0.0, 0.0), y1, y2, np.zeros((len(y1), len(y2)))).points()
    hit = np.flatnonzero(tube_hits(q1.grid, pts, -om, margin=delta))
    vals = np.zeros(len(pts))
    failed = []
    for k in hit:
        y = (float(pts[k, 0]), float(pts[k, 1]))
        try:
            vals[k] = estimate_Vdelta(q1, q2, y, om, lam, delta, mode, faces).value
        except WaveprobeError as exc:
            log.info("probe at y=%s skipped: %s", y, exc)
            failed.append(y)
    rq = RqSample((float(-om[0]), float(-om[1])), y1, y2, vals.reshape(len(y1), len(y2)))
    return MeasuredSweep(rq, (float(om[0]), float(om[1])), float(lam), float(delta), len(hit), tuple(failed))


def phi2_kernel(delta: float, h: tuple[float, float]) -> np.ndarray:
    """``delta^-2 phi^2(v / delta)`` sampled on a centred grid with spacings ``h``."""
    n1 = int(math.ceil(delta / h[0]))
    n2 = int(math.ceil(delta / h[1]))
    v1 = h[0] * np.arange(-n1, n1 + 1)
    v2 = h[1] * np.arange(-n2, n2 + 1)
    V1, V2 = np.meshgrid(v1, v2, indexing="ij")
    phi, _, _ = _bump_parts(V1 / delta, V2 / delta)
    return phi**2 / delta**2


def synthetic_vdelta(rq: RqSample, delta: float) -> RqSample:
    """``V(y) = int Rq(y - delta u) phi^2(u) du`` by discrete convolution."""
    h = rq.h
    k = phi2_kernel(delta, h)
    v = fftconvolve(rq.values, k, mode="same") * h[0] * h[1]
    return rq.with_values(v)


def rq_estimate(
    v: RqSample,
    delta: float,
    mode: str = "plain",
    v_half: RqSample | None = None,
    order: float = 0.5,
) -> RqSample:
    """Read mollified values as light-ray samples.

    ``plain`` returns ``V`` itself; ``richardson`` combines ``V_delta`` with
    ``V_{delta/2}`` as ``(2^a V_{delta/2} - V_delta) / (2^a - 1)`` for
    ``a = order``; ``deconvolve`` keeps ``V`` and marks the blur so the slice
    stage divides by the transform of ``phi^2_delta``.
    """
    if mode == "plain":
        return v.with_values(v.values.copy())
    if mode == "richardson":
        if v_half is None:
            raise SamplingError("richardson mode needs V at delta/2", "missing-half-delta")
        c = 2.0**order
        return v.with_values((c * v_half.values - v.values) / (c - 1.0))
    if mode == "deconvolve":
        return v.with_values(v.values.copy(), blur=float(delta))
    raise SamplingError(f"unknown rq mode {mode!r}", "invalid-mode")


# ---------------------------------------------------------------------------
# slices


@lru_cache(maxsize=4096)
def _phi2_hat_radial(k: float) -> float:
    """``int phi^2(u) exp(-i u.xi) du`` for ``|xi| = k`` (radial, real)."""
    c = 1.0 / quad(lambda r: math.exp(-2.0 / (1.0 - r * r)) * 2.0 * math.pi * r, 0.0, 1.0,
                   epsabs=1e-15, epsrel=1e-12)[0]
    val, _ = quad(lambda r: math.exp(-2.0 / (1.0 - r * r)) * j0(k * r) * 2.0 * math.pi * r,
                  0.0, 1.0, epsabs=1e-15, epsrel=1e-12, limit=200)
    return c * val


def phi2_hat(delta: float, xi: np.ndarray) -> np.ndarray:
    """Transform of the mollifier-squared kernel at the points ``xi``."""
    k = delta * np.hypot(xi[:, 0], xi[:, 1])
    return np.array([_phi2_hat_radial(round(float(v), 12)) for v in k])


@dataclass(frozen=True, eq=False)
class SliceSample:
    omega: tuple[float, float]
    xi: np.ndarray = field(repr=False)  # (k, 2)
    tau: np.ndarray = field(repr=False)  # (k,)
    values: np.ndarray = field(repr=False)  # (k,) complex
    sigma: int = -1


def _sigma(sigma: int | None) -> int:
    s = SLICE_SIGMA if sigma is None else sigma
    if s not in (-1, 1):
        raise WaveprobeError("slice sign is not set; run calibrate_sigma first", "sigma-unset")
    return int(s)


def fourier_slice(rq: RqSample, xi: np.ndarray, sigma: int | None = None,
                  deconv_floor: float = 1e-3) -> SliceSample:
    """``int Rq(x, omega) exp(-i x.xi) dx`` at ``xi``, assigned to ``tau = sigma omega.xi``."""
    s = _sigma(sigma)
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    h1, h2 = rq.h
    e1 = np.exp(-1j * np.outer(xi[:, 0], rq.y1))
    e2 = np.exp(-1j * np.outer(xi[:, 1], rq.y2))
    vals = np.einsum("ki,ij,kj->k", e1, rq.values, e2) * h1 * h2
    if rq.blur:
        k = phi2_hat(rq.blur, xi)
        safe = np.abs(k) > deconv_floor
        vals = np.where(safe, vals / np.where(safe, k, 1.0), 0.0)
    om = np.asarray(rq.omega)
    return SliceSample(rq.omega, xi, s * (xi @ om), vals, s)


def space_time_transform(q: Potential | np.ndarray, grid: SpaceTimeGrid, tau, xi) -> np.ndarray:
    """Direct quadrature of ``F q`` at the points ``(tau_k, xi_k)`` (trapezoid weights)."""
    vals = q.values if isinstance(q, Potential) else np.asarray(q)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    sw = grid.space_weights
    wt = grid.time_weights
    X, Y = grid.mesh()
    out = np.empty(len(tau), dtype=complex)
    for k in range(len(tau)):
        ex = np.exp(-1j * (xi[k, 0] * X + xi[k, 1] * Y)) * sw
        qt = np.tensordot(vals, ex, axes=([1, 2], [0, 1]))
        out[k] = np.sum(qt * wt * np.exp(-1j * tau[k] * grid.t))
    return out


def _transform_xi_first(vals: np.ndarray, grid: SpaceTimeGrid, xi1: np.ndarray, xi2: np.ndarray) -> np.ndarray:
    """``Q(t, xi1_i, xi2_j) = sum_x q(t, x) exp(-i x.xi) w_x`` on a tensor lattice."""
    sw = grid.space_weights
    e1 = np.exp(-1j * np.outer(xi1, grid.x))
    e2 = np.exp(-1j * np.outer(xi2, grid.y))
    tmp = np.einsum("txy,jy->txj", vals * sw[None], e2)
    return np.einsum("ix,txj->tij", e1, tmp)


def calibrate_sigma(q: Potential, omega, axes=None, n_xi: int = 24, radius: float = 6.0) -> dict:
    """Relative slice error against the direct transform for both signs.

    Returns ``{sigma: error}`` plus ``"selected"`` (the sign whose error is
    below ``1e-3`` when exactly one is).
    """
    grid = q.grid
    if axes is None:
        axes = ray_axes(grid, min(grid.dx, grid.dy))
    rq = rq_oracle(q, omega, axes)
    rng = np.random.default_rng(0)
    ang = rng.uniform(0, 2 * np.pi, n_xi)
    rad = radius * np.sqrt(rng.uniform(0, 1, n_xi))
    xi = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    out: dict[Any, Any] = {}
    for s in (-1, 1):
        sl = fourier_slice(rq, xi, sigma=s)
        ref = space_time_transform(q, grid, sl.tau, xi)
        out[s] = float(np.linalg.norm(sl.values - ref) / np.linalg.norm(ref))
    good = [s for s in (-1, 1) if out[s] <= 1e-3]
    out["selected"] = good[0] if len(good) == 1 else None
    return out


# ---------------------------------------------------------------------------
# frequency lattice and cone


@dataclass(frozen=True, eq=False)
class FrequencyLattice:
    """The padded-box frequency lattice near the origin.

    The box has lengths ``(2T, 2 Lx, 2 Ly)``; node spacings are ``2 pi / length``.
    """

    tau: np.ndarray
    xi1: np.ndarray
    xi2: np.ndarray
    lengths: tuple[float, float, float]

    @classmethod
    def for_grid(cls, grid: SpaceTimeGrid, R_max: float) -> "FrequencyLattice":
        x0, x1, y0, y1 = grid.domain.bbox
        L = (2 * grid.T, 2 * (x1 - x0), 2 * (y1 - y0))
        axes = []
        for length in L:
            d = 2 * np.pi / length
            n = int(math.floor(R_max / d))
            axes.append(d * np.arange(-n, n + 1))
        return cls(axes[0], axes[1], axes[2], L)

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.tau), len(self.xi1), len(self.xi2)

    def radius(self) -> np.ndarray:
        T, A, B = np.meshgrid(self.tau, self.xi1, self.xi2, indexing="ij")
        return np.sqrt(T * T + A * A + B * B)

    def xi_points(self, R: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``(k, 2)`` spatial nodes and their ``(i, j)`` indices, ``|xi| < R``."""
        A, B = np.meshgrid(self.xi1, self.xi2, indexing="ij")
        I, J = np.meshgrid(np.arange(len(self.xi1)), np.arange(len(self.xi2)), indexing="ij")
        keep = np.hypot(A, B) < (np.inf if R is None else R)
        return np.stack([A[keep], B[keep]], 1), np.stack([I[keep], J[keep]], 1)


@dataclass(frozen=True, eq=False)
class FourierCone:
    R_max: float
    lattice: FrequencyLattice = field(repr=False)
    values: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    aperture: np.ndarray = field(repr=False)  # effective directions sigma * omega
    a_b: np.ndarray = field(repr=False)  # (n_xi1, n_xi2, 2)
    samples: tuple[SliceSample, ...] = field(repr=False, default=())

    def captured_energy(self, F: np.ndarray) -> float:
        """Fraction of ``sum |F|^2`` (over the lattice ball) lying under the mask."""
        ball = self.lattice.radius() < self.R_max
        tot = float(np.sum(np.abs(F[ball]) ** 2))
        return float(np.sum(np.abs(F[self.mask & ball]) ** 2)) / tot if tot > 0 else 1.0


def assemble_cone(slices: Sequence[SliceSample], R_max: float, lattice: FrequencyLattice) -> FourierCone:
    """Scatter slice samples onto lattice nodes inside the covered region.

    For each spatial node the samples are sorted in ``tau``; repeated ``tau``
    values are averaged and lattice nodes between the extreme samples get
    linearly interpolated values.  The result is then symmetrized so that
    ``value(-tau, -xi) = conj(value(tau, xi))``.
    """
    if len(slices) == 0:
        raise SamplingError("no slices to assemble", "empty-coverage")
    s0 = slices[0].sigma
    aperture = np.unique(np.round(
        np.array([s0 * np.asarray(s.omega) for s in slices]), 14), axis=0)
    nt, n1, n2 = lattice.shape
    values = np.zeros(lattice.shape, dtype=complex)
    mask = np.zeros(lattice.shape, dtype=bool)
    a_b = np.full((n1, n2, 2), np.nan)
    d_tau = lattice.tau[1] - lattice.tau[0] if nt > 1 else 1.0
    tol = 1e-9 * d_tau
    # collect samples per lattice xi node
    per: dict[tuple[int, int], list[tuple[float, complex]]] = {}
    d1 = lattice.xi1[1] - lattice.xi1[0]
    d2 = lattice.xi2[1] - lattice.xi2[0]
    for s in slices:
        i = np.rint((s.xi[:, 0] - lattice.xi1[0]) / d1).astype(int)
        j = np.rint((s.xi[:, 1] - lattice.xi2[0]) / d2).astype(int)
        on = (
            (i >= 0) & (i < n1) & (j >= 0) & (j < n2)
            & np.isclose(s.xi[:, 0], lattice.xi1[np.clip(i, 0, n1 - 1)], atol=1e-9)
            & np.isclose(s.xi[:, 1], lattice.xi2[np.clip(j, 0, n2 - 1)], atol=1e-9)
        )
        for k in np.flatnonzero(on):
            per.setdefault((int(i[k]), int(j[k])), []).append((float(s.tau[k]), complex(s.values[k])))
    for (i, j), lst in per.items():
        xi = np.array([lattice.xi1[i], lattice.xi2[j]])
        proj = aperture @ xi
        a, b = float(proj.min()), float(proj.max())
        a_b[i, j] = (a, b)
        arr = sorted(lst, key=lambda p: p[0])
        taus = np.array([p[0] for p in arr])
        vals = np.array([p[1] for p in arr])
        # merge coincident tau values
        ut, inv = np.unique(np.round(taus / tol) * tol if tol > 0 else taus, return_inverse=True)
        mv = np.zeros(len(ut), dtype=complex)
        np.add.at(mv, inv, vals)
        mv /= np.bincount(inv)
        inside = (lattice.tau >= a - tol) & (lattice.tau <= b + tol)
        inside &= np.sqrt(lattice.tau**2 + xi @ xi) < R_max
        if not inside.any():
            continue
        tt = lattice.tau[inside]
        if len(ut) == 1:
            v = np.full(len(tt), mv[0])
        else:
            v = np.interp(tt, ut, mv.real) + 1j * np.interp(tt, ut, mv.imag)
        values[inside, i, j] = v
        mask[inside, i, j] = True
    if not mask.any():
        raise SamplingError("the slices cover no lattice node", "empty-coverage")
    # conjugate symmetry on doubly covered nodes (lattice axes are symmetric)
    flip = (slice(None, None, -1),) * 3
    both = mask & mask[flip]
    sym = 0.5 * (values + np.conj(values[flip]))
    values = np.where(both, sym, values)
    kept = tuple(
        SliceSample(s.omega, s.xi[keep], s.tau[keep], s.values[keep], s.sigma)
        for s in slices
        for keep in [np.sqrt(s.tau**2 + np.sum(s.xi**2, axis=1)) < R_max]
    )
    return FourierCone(float(R_max), lattice, values, mask, aperture, a_b, kept)


def exact_cone(q_transform: Callable[[np.ndarray, np.ndarray], np.ndarray], lattice: FrequencyLattice,
               R_max: float, aperture: np.ndarray, sigma: int = -1) -> FourierCone:
    """Cone built from exact transform values at every lattice node the aperture covers.

    ``q_transform(tau, xi)`` evaluates ``F q``; ``aperture`` lists slice
    directions ``omega``.  Used for perfect-data checks.
    """
    T, A, B = np.meshgrid(lattice.tau, lattice.xi1, lattice.xi2, indexing="ij")
    eff = sigma * np.asarray(aperture, dtype=float)
    proj_min = np.min(np.einsum("dk,kij->dij", eff, np.stack([A[0], B[0]])), axis=0)
    proj_max = np.max(np.einsum("dk,kij->dij", eff, np.stack([A[0], B[0]])), axis=0)
    tol = 1e-9
    mask = (T >= proj_min[None] - tol) & (T <= proj_max[None] + tol)
    mask &= lattice.radius() < R_max
    vals = np.zeros(lattice.shape, dtype=complex)
    idx = np.nonzero(mask)
    vals[idx] = q_transform(T[idx], np.stack([A[idx], B[idx]], 1))
    a_b = np.stack([proj_min, proj_max], axis=-1)
    return FourierCone(float(R_max), lattice, vals, mask, np.unique(eff, axis=0), a_b, ())


# ---------------------------------------------------------------------------
# inversion


def _lattice_synthesis(F: np.ndarray, lattice: FrequencyLattice, grid: SpaceTimeGrid) -> np.ndarray:
    """``(1/|box|) sum F exp(i (t tau + x.xi))`` on the grid (real part)."""
    Lt, Lx, Ly = lattice.lengths
    et = np.exp(1j * np.outer(grid.t, lattice.tau))
    ex = np.exp(1j * np.outer(grid.x, lattice.xi1))
    ey = np.exp(1j * np.outer(grid.y, lattice.xi2))
    tmp = np.einsum("ta,abc->tbc", et, F)
    tmp = np.einsum("xb,tbc->txc", ex, tmp)
    out = np.einsum("yc,txc->txy", ey, tmp)
    return out.real / (Lt * Lx * Ly)


def _extrapolate_tau(cone: FourierCone, ball: np.ndarray, degree: int = 2) -> np.ndarray:
    F = np.where(cone.mask, cone.values, 0.0)
    tau = cone.lattice.tau
    _, n1, n2 = cone.lattice.shape
    for i in range(n1):
        for j in range(n2):
            m = cone.mask[:, i, j]
            need = ball[:, i, j] & ~m
            if not need.any() or not m.any():
                continue
            deg = min(degree, int(m.sum()) - 1)
            V = np.vander(tau[m], deg + 1)
            coef, *_ = np.linalg.lstsq(V, cone.values[m, i, j], rcond=None)
            F[need, i, j] = np.vander(tau[need], deg + 1) @ coef
    return F


@dataclass(frozen=True, eq=False)
class SupportGrid:
    """Coarse tensor grid over ``Q`` carrying the unknowns of the support fill."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    inside: np.ndarray  # (nx, ny) domain mask

    @classmethod
    def for_grid(cls, grid: SpaceTimeGrid, spacing: float = 1.0 / 16) -> "SupportGrid":
        x0, x1, y0, y1 = grid.domain.bbox
        nt = int(round(grid.T / spacing)) + 1
        nx = int(round((x1 - x0) / spacing)) + 1
        ny = int(round((y1 - y0) / spacing)) + 1
        t = np.linspace(0, grid.T, nt)
        x = np.linspace(x0, x1, nx)
        y = np.linspace(y0, y1, ny)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return cls(t, x, y, grid.domain.contains(X, Y))

    def weights(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        def trap(a):
            w = np.full(len(a), a[1] - a[0])
            w[0] = w[-1] = 0.5 * (a[1] - a[0])
            return w

        return trap(self.t), trap(self.x), trap(self.y)


def _support_operator(sg: SupportGrid, samples: Sequence[SliceSample], R: float):
    """Linear map from support-grid values to the retained slice samples, and the data."""
    wt, wx, wy = sg.weights()
    xis, taus, data = [], [], []
    for s in samples:
        keep = np.sqrt(s.tau**2 + np.sum(s.xi**2, axis=1)) < R
        xis.append(s.xi[keep])
        taus.append(s.tau[keep])
        data.append(s.values[keep])
    xi = np.concatenate(xis)
    tau = np.concatenate(taus)
    d = np.concatenate(data)
    if len(d) == 0:
        raise SamplingError("no samples inside the requested radius", "empty-coverage")
    # slices share spatial nodes, so the spatial sums are done once per node
    uxi, which = np.unique(np.round(xi, 12), axis=0, return_inverse=True)
    which = which.ravel()
    ex = np.exp(-1j * np.outer(uxi[:, 0], sg.x)) * wx  # (u, nx)
    ey = np.exp(-1j * np.outer(uxi[:, 1], sg.y)) * wy  # (u, ny)
    et = np.exp(-1j * np.outer(tau, sg.t)) * wt  # (k, nt)
    inside = sg.inside.astype(float)
    shape = (len(sg.t), len(sg.x), len(sg.y))
    n = int(np.prod(shape))
    n_u = len(uxi)

    def mv(v):
        f = v.reshape(shape) * inside[None]
        a = np.einsum("txy,uy->txu", f, ey, optimize=True)
        b = np.einsum("ux,txu->ut", ex, a, optimize=True)  # (u, nt)
        return np.einsum("kt,kt->k", b[which], et)

    def rmv(r):
        b = np.zeros((n_u, len(sg.t)), dtype=complex)
        np.add.at(b, which, np.conj(et) * r[:, None])
        a = np.einsum("ut,ux->txu", b, np.conj(ex), optimize=True)
        f = np.einsum("txu,uy->txy", a, np.conj(ey), optimize=True)
        return (f * inside[None]).ravel()

    # real unknowns: stack real and imaginary parts of the residual
    def mv_real(v):
        r = mv(v)
        return np.concatenate([r.real, r.imag])

    def rmv_real(r):
        k = len(r) // 2
        return rmv(r[:k] + 1j * r[k:]).real

    op = spla.LinearOperator((2 * len(d), n), matvec=mv_real, rmatvec=rmv_real, dtype=float)
    return op, np.concatenate([d.real, d.imag]), shape


def invert_lowpass(
    cone: FourierCone,
    R: float,
    fill: str = "zero",
    grid: SpaceTimeGrid | None = None,
    support_spacing: float = 1.0 / 16,
    iters: int = 300,
    label: str = "q_hat",
) -> Potential:
    """Low-pass estimate of ``q`` on ``grid`` from cone data.

    ``zero`` sets uncovered lattice nodes to zero; ``extrapolate`` continues
    each fixed-``xi`` column in ``tau`` by a least-squares polynomial of
    degree at most 2 (a heuristic); both then remove ``|(tau, xi)| >= R`` and
    synthesize.  ``support`` instead fits a field supported in ``Q`` to the
    raw slice samples with ``|(tau, xi)| < R`` (minimum-norm least squares by
    LSQR on a coarse grid), so ``R`` limits the data used, not the output.
    """
    if grid is None:
        raise WaveprobeError("a target grid is required", "missing-grid")
    if not R > 0:
        raise WaveprobeError(f"R must be positive, got {R}", "invalid-radius")
    if R > cone.R_max + 1e-12:
        raise WaveprobeError(f"R={R} exceeds the cone radius {cone.R_max}", "invalid-radius")
    ball = cone.lattice.radius() < R
    if fill == "zero":
        F = np.where(cone.mask & ball, cone.values, 0.0)
        vals = _lattice_synthesis(F, cone.lattice, grid)
    elif fill == "extrapolate":
        F = _extrapolate_tau(cone, ball) * ball
        vals = _lattice_synthesis(F, cone.lattice, grid)
    elif fill == "support":
        if not cone.samples:
            raise SamplingError("support fill needs the raw slice samples", "missing-samples")
        sg = SupportGrid.for_grid(grid, support_spacing)
        op, rhs, shape = _support_operator(sg, cone.samples, R)
        sol = spla.lsqr(op, rhs, iter_lim=iters, atol=1e-10, btol=1e-10)[0]
        coarse = sol.reshape(shape) * sg.inside[None]
        interp = RegularGridInterpolator((sg.t, sg.x, sg.y), coarse, bounds_error=False, fill_value=0.0)
        X, Y = grid.mesh()
        vals = np.empty(grid.shape)
        for n, t in enumerate(grid.t):
            vals[n] = interp((np.full(X.shape, t), X, Y))
    else:
        raise WaveprobeError(f"unknown fill {fill!r}", "invalid-fill")
    vals = vals * grid.interior_mask[None]
    return Potential(grid, vals, label=label)


def relative_l2(est: Potential, ref: Potential) -> float:
    g = ref.grid
    den = g.l2(ref.values)
    return g.l2(est.values - ref.values) / den if den > 0 else g.l2(est.values)


# ---------------------------------------------------------------------------
# stability curve


def double_log_model(gamma: np.ndarray, gamma_star: float) -> np.ndarray:
    """``h(gamma) / C``: ``gamma / gamma*`` above the crossover, ``ln|ln gamma|^{-1/2}`` below."""
    g = np.asarray(gamma, dtype=float)
    out = np.zeros_like(g)
    lo = (g > 0) & (g < gamma_star)
    out[lo] = np.log(np.abs(np.log(g[lo]))) ** -0.5
    hi = g >= gamma_star
    out[hi] = g[hi] / gamma_star
    return out


STABILITY_COLUMNS = ("s", "gamma_hat", "l2_diff", "bound_value", "slack")


@dataclass(frozen=True)
class StabilityFit:
    pairs: tuple[tuple[float, float, float], ...]  # (s, gamma_hat, l2_diff)
    fitted_C: float
    gamma_star: float
    alpha: float
    monotone: bool
    floor_pairs: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict)

    def bound(self, gamma) -> np.ndarray:
        return self.fitted_C * double_log_model(np.asarray(gamma), self.gamma_star)

    def rows(self) -> list[tuple[float, float, float, float, float]]:
        out = []
        for s, g, d in self.pairs:
            b = float(self.bound(np.array([g]))[0])
            out.append((s, g, d, b, b - d))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(STABILITY_COLUMNS)
            for r in self.rows():
                w.writerow([repr(float(v)) for v in r])


def fit_stability(pairs: Sequence[tuple[float, float, float]], gamma_star: float, alpha: float,
                  meta: Mapping[str, Any] | None = None) -> StabilityFit:
    """Smallest ``C`` with ``l2_diff <= C h(gamma_hat)/C`` over all usable pairs."""
    usable = [(s, g, d) for s, g, d in pairs if g > 0 and d > 0]
    floor = tuple(s for s, g, d in pairs if g == 0 and d > 0)
    if not usable:
        # e.g. only the s = 0 pair: nothing constrains C
        log.info("no pair with positive gamma and difference; fitted_C is NaN")
        return StabilityFit(tuple(pairs), math.nan, float(gamma_star), float(alpha), True, floor, dict(meta or {}))
    g = np.array([p[1] for p in usable])
    d = np.array([p[2] for p in usable])
    C = float(np.max(d / double_log_model(g, gamma_star)))
    ordered = sorted(usable)
    mono = all(ordered[k][1] < ordered[k + 1][1] for k in range(len(ordered) - 1))
    return StabilityFit(tuple(pairs), C, float(gamma_star), float(alpha), mono, floor, dict(meta or {}))


def stability_curve(
    q1: Potential,
    p: Potential,
    scales: Sequence[float],
    faces: FacePartition,
    n_random: int = 16,
    go_sweep: Mapping[str, Any] | None = None,
    seed: int = 0,
    gamma_star: float = math.exp(-math.e),
    workers: int = 1,
) -> StabilityFit:
    """``gamma_hat`` and ``|q1 - q2|`` along ``q2 = q1 + s p`` and the fitted double-log bound."""
    from .errors import HypothesisViolationError

    if not check_boundary_agreement(q1, q1 + p, tol=1e-12 * max(1.0, float(np.max(np.abs(p.values))))):
        raise HypothesisViolationError("the perturbation does not vanish on the lateral boundary")
    if any(s < 0 for s in scales):
        raise SamplingError("scales must be non-negative", "invalid-scales")
    pairs = []
    pl2 = p.grid.l2(p.values)
    for s in scales:
        if s == 0:
            pairs.append((0.0, 0.0, 0.0))
            continue
        q2 = q1 + p.scaled(s)
        est = diff_norm_estimate(q1, q2, faces, n_random=n_random, go_sweep=go_sweep, seed=seed,
                                 workers=workers)
        pairs.append((float(s), est.gamma, float(s) * pl2))
    meta = {"n_random": n_random, "seed": seed, "go_sweep": dict(go_sweep or {})}
    return fit_stability(pairs, gamma_star, q1.alpha, meta)
