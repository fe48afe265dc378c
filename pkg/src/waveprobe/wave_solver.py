"""Explicit leapfrog solver for the Dirichlet IBVP and its conjugated variant.

The solver advances

    u_tt - Lap u + 2 s (u_t - omega . grad u) + q u = f

with a 5-point Laplacian, a centred time difference in the drift and, by
default, centred differences for ``omega . grad u``.  With ``s = 0`` this is
the plain wave equation.  A nonzero drift ``(s, omega)`` describes the
amplitude ``a`` of a physical field ``exp(s (t + x.omega)) a``; the physical
exponential is never formed, so Dirichlet data and sources passed in are
amplitudes as well.

The time step of the grid may be subdivided (``2, 4, 8`` substeps per grid
step) to honour the stiffness guard ``|s| dt <= 0.5``.  Fields are always
returned on the grid's own time levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import ShapeMismatchError, SupportViolationError, UnstableSchemeError
from .geometry import FacePartition, SpaceTimeGrid
from .potential import Potential

BLOWUP = 1e12
STIFFNESS_LIMIT = 0.5
MAX_HALVINGS = 3


@dataclass(frozen=True)
class Drift:
    s: float
    omega: tuple[float, float]

    @classmethod
    def make(cls, drift) -> "Drift | None":
        if drift is None or isinstance(drift, Drift):
            return drift
        s, om = drift
        om = np.asarray(om, dtype=float)
        om = om / np.linalg.norm(om)
        return cls(float(s), (float(om[0]), float(om[1])))


@dataclass(frozen=True, eq=False)
class TraceSet:
    normal_deriv: np.ndarray  # (nt+1, n_boundary_points)
    final_value: np.ndarray  # (nx, ny)
    final_velocity: np.ndarray
    initial_velocity: np.ndarray


@dataclass(frozen=True, eq=False)
class WaveField:
    grid: SpaceTimeGrid
    u: np.ndarray | None = field(repr=False)
    conjugation: Drift | None
    trace_set: TraceSet = field(repr=False)
    substeps: int = 1

    @property
    def final_value(self) -> np.ndarray:
        return self.trace_set.final_value


@dataclass(frozen=True, eq=False)
class BoundaryObservation:
    flux_on_G: np.ndarray  # (nt+1, n_boundary_points), zero off G
    final_value: np.ndarray  # (nx, ny)
    l2G_norm: float
    h1_norm: float
    conjugation: Drift | None = None

    @property
    def norm(self) -> float:
        return math.hypot(self.l2G_norm, self.h1_norm)


# ---------------------------------------------------------------------------
# spatial operators


def laplacian(u: np.ndarray, dx: float, dy: float, out: np.ndarray | None = None) -> np.ndarray:
    """5-point Laplacian on interior nodes (boundary rows left at zero)."""
    if out is None:
        out = np.zeros_like(u)
    c = u[..., 1:-1, 1:-1]
    out[..., 1:-1, 1:-1] = (u[..., 2:, 1:-1] - 2 * c + u[..., :-2, 1:-1]) / dx**2 + (
        u[..., 1:-1, 2:] - 2 * c + u[..., 1:-1, :-2]
    ) / dy**2
    return out


def directional_derivative(
    u: np.ndarray, omega, dx: float, dy: float, scheme: str = "centered", out: np.ndarray | None = None
) -> np.ndarray:
    """``omega . grad u`` on interior nodes."""
    if out is None:
        out = np.zeros_like(u)
    wx, wy = omega
    if scheme == "centered":
        out[..., 1:-1, 1:-1] = wx * (u[..., 2:, 1:-1] - u[..., :-2, 1:-1]) / (2 * dx) + wy * (
            u[..., 1:-1, 2:] - u[..., 1:-1, :-2]
        ) / (2 * dy)
    elif scheme == "upwind":
        c = u[..., 1:-1, 1:-1]
        ddx = (u[..., 2:, 1:-1] - c) / dx if wx >= 0 else (c - u[..., :-2, 1:-1]) / dx
        ddy = (u[..., 1:-1, 2:] - c) / dy if wy >= 0 else (c - u[..., 1:-1, :-2]) / dy
        out[..., 1:-1, 1:-1] = wx * ddx + wy * ddy
    else:
        raise ValueError(f"unknown drift scheme {scheme!r}")
    return out


def _bilinear_rows(grid: SpaceTimeGrid, px: np.ndarray, py: np.ndarray):
    fx = (px - grid.x0) / grid.dx
    fy = (py - grid.y0) / grid.dy
    ix = np.clip(np.floor(fx).astype(np.int64), 0, grid.nx - 2)
    iy = np.clip(np.floor(fy).astype(np.int64), 0, grid.ny - 2)
    ax = fx - ix
    ay = fy - iy
    cols, vals = [], []
    for di, wx in ((0, 1 - ax), (1, ax)):
        for dj, wy in ((0, 1 - ay), (1, ay)):
            cols.append((ix + di) * grid.ny + (iy + dj))
            vals.append(wx * wy)
    return np.stack(cols, 1), np.stack(vals, 1)


@lru_cache(maxsize=32)
def normal_derivative_operator(grid: SpaceTimeGrid, s: float = 0.0, omega=(0.0, 0.0)) -> sp.csr_matrix:
    """Sparse map from a flattened ``(nx, ny)`` field to ``d_nu u`` at boundary points.

    One-sided second-order difference ``(3u(b) - 4u(b - h nu) + u(b - 2h nu)) / (2h)``
    along the analytic outward normal, with bilinear interpolation for
    off-node samples.  With a drift ``(s, omega)`` the samples are first
    multiplied by ``exp(s omega.(p - b))``, which removes the exponential
    layer ``exp(-s omega.x)`` carried by an amplitude, and the exact
    correction ``-s (omega.nu) u(b)`` is added back.  The stencil is then exact
    on ``exp(-s omega.x)`` times any affine function.
    """
    ij = grid.boundary_nodes[grid.point_node]
    bx = grid.x0 + ij[:, 0] * grid.dx
    by = grid.y0 + ij[:, 1] * grid.dy
    nu = grid.point_normal
    npts = len(ij)
    if grid.domain.shape == "rectangle":
        h = np.where(np.abs(nu[:, 0]) > 0.5, grid.dx, grid.dy)
    else:
        h = np.full(npts, min(grid.dx, grid.dy))
    om_nu = nu @ np.asarray(omega, dtype=float)
    rows, cols, vals = [], [], []
    r = np.arange(npts)
    rows.append(r)
    cols.append(ij[:, 0] * grid.ny + ij[:, 1])
    vals.append(3.0 / (2 * h) - s * om_nu)
    for k, coef in ((1, -4.0), (2, 1.0)):
        c, w = _bilinear_rows(grid, bx - k * h * nu[:, 0], by - k * h * nu[:, 1])
        fit = np.exp(-s * k * h * om_nu)
        rows.append(np.repeat(r, 4))
        cols.append(c.ravel())
        vals.append((w * (coef * fit / (2 * h))[:, None]).ravel())
    m = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(npts, grid.nx * grid.ny),
    )
    m.sum_duplicates()
    m.eliminate_zeros()
    return m


def _drift_key(drift) -> tuple[float, tuple[float, float]]:
    d = Drift.make(drift)
    if d is None:
        return 0.0, (0.0, 0.0)
    return d.s, d.omega


def normal_derivative(grid: SpaceTimeGrid, u: np.ndarray, drift=None) -> np.ndarray:
    """``d_nu u`` at boundary points for a field of shape ``(..., nx, ny)``.

    Pass the field's ``drift`` for amplitudes so the stencil is phase-fitted.
    """
    op = normal_derivative_operator(grid, *_drift_key(drift))
    lead = u.shape[:-2]
    flat = np.asarray(u).reshape(-1, grid.nx * grid.ny)
    return (op @ flat.T).T.reshape(lead + (op.shape[0],))


def end_velocity(l0: np.ndarray, l1: np.ndarray, l2: np.ndarray, dt: float, s: float = 0.0) -> np.ndarray:
    """One-sided second-order ``d_t`` at the level ``l0``; ``l1, l2`` lie ``dt, 2dt`` away.

    ``dt > 0`` differentiates at the final time (earlier levels), ``dt < 0`` at
    the initial time.  With a drift ``s`` the difference is taken of
    ``exp(s t) u``, which is smooth for an amplitude, and converted back.
    """
    e1, e2 = math.exp(-s * dt), math.exp(-2 * s * dt)
    return (3 * l0 - 4 * e1 * l1 + e2 * l2) / (2 * dt) - s * l0


def phase(grid: SpaceTimeGrid, omega) -> np.ndarray:
    """``t + x.omega`` on the grid, shape ``(nt+1, nx, ny)`` (broadcast view)."""
    X, Y = grid.mesh()
    om = np.asarray(omega, dtype=float)
    return grid.t[:, None, None] + (om[0] * X + om[1] * Y)[None]


# ---------------------------------------------------------------------------
# data handling


def _sampler(data, grid: SpaceTimeGrid, tail_shape: tuple[int, ...], name: str):
    """Return ``get(t) -> array`` for time-dependent data given as array or callable."""
    if data is None:
        zero = np.zeros(tail_shape)
        return lambda t: zero, True
    if callable(data):
        return (lambda t: np.asarray(data(t), dtype=float).reshape(tail_shape)), False
    arr = np.asarray(data, dtype=float)
    if arr.shape == tail_shape:
        return (lambda t: arr), not np.any(arr)
    if arr.shape != (grid.nt + 1,) + tail_shape:
        raise ShapeMismatchError(f"{name} has shape {arr.shape}, expected {(grid.nt + 1,) + tail_shape}")

    def get(t: float) -> np.ndarray:
        x = t / grid.dt
        n = int(math.floor(x + 1e-9))
        if n >= grid.nt:
            return arr[grid.nt]
        a = x - n
        if a < 1e-9:
            return arr[n]
        return (1 - a) * arr[n] + a * arr[n + 1]

    return get, not np.any(arr)


def _potential_values(q, grid: SpaceTimeGrid):
    if q is None:
        return None
    if isinstance(q, Potential):
        if not q.grid.same_as(grid):
            raise ShapeMismatchError("potential lives on another grid", "grid-mismatch")
        return q.values
    arr = np.asarray(q, dtype=float)
    if arr.shape not in (grid.shape, grid.space_shape):
        raise ShapeMismatchError(f"potential array has shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# solver


def solve_ibvp(
    grid: SpaceTimeGrid,
    q=None,
    g=None,
    v0=None,
    v1=None,
    f=None,
    drift=None,
    scheme: str = "centered",
    keep_field: bool = True,
) -> WaveField:
    """Solve the (conjugated) Dirichlet IBVP on ``grid``.

    Parameters
    ----------
    q : Potential, array ``(nt+1, nx, ny)`` or ``(nx, ny)``, or None for zero.
    g : Dirichlet values on the boundary nodes, ``(nt+1, n_boundary_nodes)``
        array or callable ``g(t)``.
    v0, v1 : initial value and velocity, ``(nx, ny)``.
    f : source, ``(nt+1, nx, ny)`` array or callable ``f(t)``.
    drift : ``(s, omega)`` for the conjugated operator, or None.
    keep_field : store the full space-time field (otherwise only traces).
    """
    drift = Drift.make(drift)
    s = drift.s if drift is not None else 0.0
    om = drift.omega if drift is not None else (0.0, 0.0)
    nb = len(grid.boundary_nodes)
    gget, g_zero = _sampler(g, grid, (nb,), "g")
    fget, f_zero = _sampler(f, grid, grid.space_shape, "f")
    qv = _potential_values(q, grid)
    if qv is None:
        qget, q_zero = (lambda t: 0.0), True
    elif qv.ndim == 2:
        qget, q_zero = (lambda t: qv), not np.any(qv)
    else:
        qget, q_zero = _sampler(qv, grid, grid.space_shape, "q")
    u0 = np.zeros(grid.space_shape) if v0 is None else np.array(v0, dtype=float)
    vel = np.zeros(grid.space_shape) if v1 is None else np.asarray(v1, dtype=float)
    if u0.shape != grid.space_shape or vel.shape != grid.space_shape:
        raise ShapeMismatchError("initial data must have the grid's spatial shape")

    m = 1
    while abs(s) * grid.dt / m > STIFFNESS_LIMIT:
        m *= 2
        if m > 2**MAX_HALVINGS:
            raise UnstableSchemeError(
                f"|s| dt = {abs(s) * grid.dt / (m // 2):.3g} still exceeds {STIFFNESS_LIMIT} "
                f"after {MAX_HALVINGS} halvings",
            )
    dt = grid.dt / m
    nsteps = grid.nt * m
    dx, dy = grid.dx, grid.dy
    bi, bj = grid.boundary_nodes[:, 0], grid.boundary_nodes[:, 1]
    outside = None if grid.domain.shape == "rectangle" else ~grid.interior_mask
    nd_op = normal_derivative_operator(grid, s, om)

    out = np.zeros(grid.shape) if keep_field else None
    flux = np.zeros((grid.nt + 1, nd_op.shape[0]))

    def finalize(level: np.ndarray, t: float) -> np.ndarray:
        if outside is not None:
            level[outside] = 0.0
        level[bi, bj] = gget(t)
        return level

    def record(n_fine: int, level: np.ndarray) -> None:
        if n_fine % m:
            return
        n = n_fine // m
        if out is not None:
            out[n] = level
        flux[n] = nd_op @ level.ravel()

    lap = np.zeros(grid.space_shape)
    drv = np.zeros(grid.space_shape)

    def rhs(level: np.ndarray, t: float) -> np.ndarray:
        r = laplacian(level, dx, dy, out=lap).copy()
        if s != 0.0:
            r += 2 * s * directional_derivative(level, om, dx, dy, scheme, out=drv)
        if not q_zero:
            r -= qget(t) * level
        if not f_zero:
            r += fget(t)
        return r

    prev = finalize(u0.copy(), 0.0)
    first = prev + dt * vel + 0.5 * dt * dt * (rhs(prev, 0.0) - 2 * s * vel)
    cur = finalize(first, dt)
    levels_head = [prev.copy(), cur.copy()]
    record(0, prev)
    record(1, cur)
    a = 1.0 / (1.0 + s * dt)
    b = 1.0 - s * dt
    prev2 = None
    for n in range(1, nsteps):
        t = n * dt
        nxt = (2.0 * cur - b * prev + dt * dt * rhs(cur, t)) * a
        nxt = finalize(nxt, t + dt)
        if not np.all(np.abs(nxt) < BLOWUP):
            raise UnstableSchemeError(
                f"field exceeded {BLOWUP:g} at t={t + dt:.4g} (|s| dt = {abs(s) * dt:.3g}, "
                f"cfl = {grid.cfl_factor})"
            )
        prev2, prev, cur = prev, cur, nxt
        if n == 1:
            levels_head.append(cur.copy())
        record(n + 1, cur)
    if prev2 is None:
        final_velocity = (cur - prev) / dt
        levels_head.append(2 * cur - prev)
    else:
        final_velocity = end_velocity(cur, prev, prev2, dt, s)
    h0, h1, h2 = levels_head
    init_vel = end_velocity(h0, h1, h2, -dt, s)
    ts = TraceSet(flux, cur.copy(), final_velocity, init_vel)
    return WaveField(grid, out, drift, ts, m)


def traces(u: WaveField | np.ndarray, grid: SpaceTimeGrid | None = None, drift=None) -> TraceSet:
    """Traces of a field: ``d_nu u`` on the lateral boundary and time traces at 0 and T.

    For a :class:`WaveField` produced by :func:`solve_ibvp` the values were
    gathered during time stepping (on the solver's fine time levels).  For a
    bare array the time traces use one-sided second-order differences in ``t``,
    phase-fitted when the array is an amplitude with the given ``drift``.
    """
    if isinstance(u, WaveField):
        return u.trace_set
    if grid is None:
        raise ValueError("grid is required for array input")
    u = np.asarray(u, dtype=float)
    if u.shape != grid.shape:
        raise ShapeMismatchError(f"field has shape {u.shape}, grid expects {grid.shape}")
    dt = grid.dt
    s = _drift_key(drift)[0]
    return TraceSet(
        normal_derivative(grid, u, drift),
        u[-1].copy(),
        end_velocity(u[-1], u[-2], u[-3], dt, s),
        end_velocity(u[0], u[1], u[2], -dt, s),
    )


# ---------------------------------------------------------------------------
# norms and checks


def grad_l2_space(grid: SpaceTimeGrid, u2d: np.ndarray) -> float:
    gx, gy = np.gradient(u2d, grid.dx, grid.dy, edge_order=2)
    return grid.l2_space(np.hypot(gx, gy))


def h1_space(grid: SpaceTimeGrid, u2d: np.ndarray) -> float:
    return math.hypot(grid.l2_space(u2d), grad_l2_space(grid, u2d))


def discrete_energy(field: WaveField | np.ndarray, grid: SpaceTimeGrid | None = None) -> np.ndarray:
    """Leapfrog energy ``E^{n+1/2} = 1/2 |D_t u|^2 + 1/2 <grad u^{n+1}, grad u^n>``.

    For the free problem with homogeneous data this quantity is conserved by
    the scheme up to roundoff.  The gradient pairing uses forward differences,
    so ``<grad a, grad b>`` equals ``-<a, Lap_h b>`` exactly on zero boundary data.
    """
    if isinstance(field, WaveField):
        grid = field.grid
        u = field.u
    else:
        u = np.asarray(field)
    if u is None:
        raise ValueError("energy requires a stored field")
    dt, dx, dy = grid.dt, grid.dx, grid.dy
    cell = dx * dy
    vt = np.diff(u, axis=0) / dt
    kin = 0.5 * np.sum(vt * vt, axis=(1, 2)) * cell
    gx = np.diff(u, axis=1) / dx
    gy = np.diff(u, axis=2) / dy
    pot = 0.5 * cell * (
        np.sum(gx[1:] * gx[:-1], axis=(1, 2)) + np.sum(gy[1:] * gy[:-1], axis=(1, 2))
    )
    return kin + pot


def energy_estimate_check(q1: Potential, q2: Potential, u2: WaveField) -> dict:
    """Empirical constant of the difference-problem energy estimate.

    Solves ``(box + q1) u = (q2 - q1) u2`` with zero data (in the same
    conjugation as ``u2``) and compares
    ``max|u|_{L2} + max|u_t|_{L2} + max|grad u|_{L2} + |d_nu u|_{L2(Sigma)}``
    against ``|q1 - q2|_inf |u2|_{L2(Q)}``.
    """
    grid = u2.grid
    if u2.u is None:
        raise ValueError("u2 must keep its full field")
    dq = (q2.values - q1.values)
    src = dq * u2.u
    du = solve_ibvp(grid, q1, f=src, drift=u2.conjugation)
    u = du.u
    ut = np.gradient(u, grid.dt, axis=0, edge_order=2)
    gx, gy = np.gradient(u, grid.dx, grid.dy, axis=(1, 2), edge_order=2)
    sw = grid.space_weights
    nrm = lambda a: np.sqrt(np.tensordot(a * a, sw, axes=([1, 2], [0, 1])))
    flux = du.trace_set.normal_deriv
    lhs = float(
        nrm(u).max() + nrm(ut).max() + np.sqrt(nrm(gx) ** 2 + nrm(gy) ** 2).max()
        + math.sqrt(max(grid.integrate_boundary(flux**2), 0.0))
    )
    rhs = float(np.max(np.abs(dq)) * grid.l2(u2.u))
    ratio = lhs / rhs if rhs > 0 else float("nan")
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio}


def input_support_nodes(grid: SpaceTimeGrid, faces: FacePartition) -> np.ndarray:
    """Boolean mask over boundary nodes: node carries at least one normal in F'."""
    in_f = faces.F_prime(grid.point_normal)
    mask = np.zeros(len(grid.boundary_nodes), dtype=bool)
    np.logical_or.at(mask, grid.point_node, in_f)
    return mask


def measurement_points(grid: SpaceTimeGrid, faces: FacePartition) -> np.ndarray:
    """Boolean mask over boundary points lying in G'."""
    return faces.G_prime(grid.point_normal)


def check_input_support(grid: SpaceTimeGrid, g, faces: FacePartition, atol: float = 0.0) -> None:
    if g is None:
        return
    g = np.asarray(g)
    bad = ~input_support_nodes(grid, faces)
    if bad.any() and np.max(np.abs(g[..., bad]), initial=0.0) > atol:
        raise SupportViolationError("Dirichlet data is nonzero outside the input face F'")


def hf_norm(
    grid: SpaceTimeGrid,
    g=None,
    v1=None,
    faces: FacePartition | None = None,
    drift=None,
    phase_ref: float | None = None,
) -> float:
    """Input strength: L2(Q) norm of the free evolution generated by ``(g, v1)``.

    With a drift ``(s, omega)`` the data are amplitudes and the physical norm
    ``|exp(s(phi - phase_ref)) a|`` is returned (``phase_ref`` defaults to the
    maximum of ``phi = t + x.omega`` over the grid for ``s > 0`` and the
    minimum for ``s < 0``), so the true norm is this value times
    ``exp(s * phase_ref)``.
    """
    if faces is not None:
        check_input_support(grid, g, faces)
    if (g is None or not np.any(g)) and (v1 is None or not np.any(v1)):
        return 0.0
    sol = solve_ibvp(grid, None, g=g, v1=v1, drift=drift)
    drift = Drift.make(drift)
    if drift is None or drift.s == 0.0:
        return grid.l2(sol.u)
    phi = phase(grid, drift.omega)
    if phase_ref is None:
        phase_ref = float(phi.max() if drift.s > 0 else phi.min())
    return grid.l2(np.exp(drift.s * (phi - phase_ref)) * sol.u)
