"""Time-dependent potentials on the space-time grid.

A :class:`Potential` stores node samples of ``q(t, x)`` on ``Q = (0,T) x Omega``
and is understood to vanish outside ``Q``.  Analytic potentials come from a
small catalog (``zero``, ``constant``, ``gaussian_bump``, ``separable``,
``static``) described by plain mappings, which is also how configs name them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Mapping

import numpy as np

from .errors import SamplingError, ShapeMismatchError
from .geometry import SpaceTimeGrid


@dataclass(frozen=True, eq=False)
class Potential:
    grid: SpaceTimeGrid
    values: np.ndarray = field(repr=False)
    p_exponent: float = 6.0
    label: str = "q"

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ShapeMismatchError(
                f"potential has shape {self.values.shape}, grid expects {self.grid.shape}"
            )
        if not self.p_exponent > 3.0:
            raise SamplingError("the W^{1,p} exponent must exceed n+1 = 3", "invalid-p")
        self.values.setflags(write=False)

    @property
    def alpha(self) -> float:
        return 1.0 - 3.0 / self.p_exponent

    @cached_property
    def norms(self) -> dict[str, float]:
        return sobolev_norms(self)

    def with_values(self, values: np.ndarray, label: str | None = None) -> "Potential":
        return Potential(self.grid, np.array(values, dtype=float), self.p_exponent, label or self.label)

    def __add__(self, other: "Potential") -> "Potential":
        _require_same_grid(self, other)
        return self.with_values(self.values + other.values, f"{self.label}+{other.label}")

    def __sub__(self, other: "Potential") -> "Potential":
        _require_same_grid(self, other)
        return self.with_values(self.values - other.values, f"{self.label}-{other.label}")

    def scaled(self, s: float) -> "Potential":
        return self.with_values(s * self.values, f"{s:g}*{self.label}")

    def interpolate(self, t, x, y) -> np.ndarray:
        """Trilinear interpolation of the zero-extended field at arbitrary points."""
        g = self.grid
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        t, x, y = np.broadcast_arrays(t, x, y)
        ft = t / g.dt
        fx = (x - g.x0) / g.dx
        fy = (y - g.y0) / g.dy
        inside = (
            (ft >= -1e-9) & (ft <= g.nt + 1e-9)
            & (fx >= -1e-9) & (fx <= g.nx - 1 + 1e-9)
            & (fy >= -1e-9) & (fy <= g.ny - 1 + 1e-9)
            & g.domain.contains(x, y)
        )
        it = np.clip(np.floor(ft).astype(np.int64), 0, g.nt - 1)
        ix = np.clip(np.floor(fx).astype(np.int64), 0, g.nx - 2)
        iy = np.clip(np.floor(fy).astype(np.int64), 0, g.ny - 2)
        at = np.clip(ft - it, 0.0, 1.0)
        ax = np.clip(fx - ix, 0.0, 1.0)
        ay = np.clip(fy - iy, 0.0, 1.0)
        v = self.values
        out = np.zeros(t.shape)
        for dt_, wt in ((0, 1 - at), (1, at)):
            for dx_, wx in ((0, 1 - ax), (1, ax)):
                for dy_, wy in ((0, 1 - ay), (1, ay)):
                    out += wt * wx * wy * v[it + dt_, ix + dx_, iy + dy_]
        return np.where(inside, out, 0.0)


def _require_same_grid(a: Potential, b: Potential) -> None:
    if not a.grid.same_as(b.grid):
        raise ShapeMismatchError("potentials live on different grids", "grid-mismatch")


# ---------------------------------------------------------------------------
# analytic catalog


def _time_profile(spec: Mapping[str, Any] | None, T: float) -> Callable[[np.ndarray], np.ndarray]:
    if spec is None:
        return lambda t: np.ones_like(t)
    kind = spec.get("kind", "constant")
    if kind == "constant":
        c = float(spec.get("value", 1.0))
        return lambda t: np.full_like(t, c)
    if kind == "gaussian":
        ct = float(spec.get("center", T / 2))
        st = float(spec.get("width", 0.5))
        return lambda t: np.exp(-((t - ct) ** 2) / (2 * st * st))
    if kind == "cosine":
        freq = float(spec.get("frequency", 1.0))
        return lambda t: 1.0 + 0.5 * np.cos(freq * t)
    raise SamplingError(f"unknown time profile {kind!r}", "unknown-profile")


def smooth_bump(r2: np.ndarray) -> np.ndarray:
    """``exp(1 - 1/(1 - r^2))`` for ``r < 1`` and 0 otherwise (peak value 1)."""
    r2 = np.asarray(r2, dtype=float)
    out = np.zeros_like(r2)
    m = r2 < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - r2[m]))
    return out


def _space_profile(spec: Mapping[str, Any] | None) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if spec is None:
        return lambda x, y: np.ones_like(x)
    kind = spec.get("kind", "gaussian")
    amp = float(spec.get("amplitude", 1.0))
    cx, cy = (float(c) for c in spec.get("center", (0.0, 0.0)))
    if kind == "constant":
        c = float(spec.get("value", 1.0))
        return lambda x, y: np.full_like(x, c)
    if kind == "gaussian":
        sx = float(spec.get("width", 0.25))
        return lambda x, y: amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * sx * sx))
    if kind == "bump":
        rad = float(spec.get("radius", 0.5))
        return lambda x, y: amp * smooth_bump(((x - cx) ** 2 + (y - cy) ** 2) / rad**2)
    raise SamplingError(f"unknown spatial profile {kind!r}", "unknown-profile")


def analytic_potential(spec: Mapping[str, Any], T: float) -> Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]:
    """Vectorized ``q(t, x, y)`` for a catalog entry.

    ``gaussian_bump`` uses ``amp*exp(-|x-c|^2/(2 sx^2) - (t-ct)^2/(2 st^2))``,
    so ``sx = 0.25, st = 0.5`` gives ``exp(-8|x|^2) exp(-2 (t-ct)^2)``.
    """
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return lambda t, x, y: np.zeros(np.broadcast(t, x, y).shape)
    if kind == "constant":
        c = float(spec.get("value", 1.0))
        return lambda t, x, y: np.full(np.broadcast(t, x, y).shape, c)
    if kind == "gaussian_bump":
        amp = float(spec.get("amplitude", 1.0))
        cx = float(spec.get("cx", 0.0))
        cy = float(spec.get("cy", 0.0))
        ct = float(spec.get("ct", T / 2))
        sx = float(spec.get("sx", 0.25))
        st = float(spec.get("st", 0.5))
        return lambda t, x, y: amp * np.exp(
            -((x - cx) ** 2 + (y - cy) ** 2) / (2 * sx * sx) - (t - ct) ** 2 / (2 * st * st)
        )
    if kind in ("separable", "static"):
        g = _time_profile(spec.get("time") if kind == "separable" else None, T)
        h = _space_profile(spec.get("space", spec.get("h")))
        return lambda t, x, y: g(np.asarray(t, dtype=float)) * h(
            np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        )
    raise SamplingError(f"unknown potential kind {kind!r}", "unknown-potential")


def sample_potential(expr, grid: SpaceTimeGrid, p_exponent: float = 6.0, label: str = "q") -> Potential:
    """Sample ``expr`` (catalog mapping, callable ``q(t,x,y)`` or array) at the grid nodes."""
    if isinstance(expr, Potential):
        expr = expr.values
    if isinstance(expr, Mapping):
        label = str(expr.get("label", expr.get("kind", label)))
        expr = analytic_potential(expr, grid.T)
    if callable(expr):
        X, Y = grid.mesh()
        t = grid.t[:, None, None]
        vals = np.asarray(expr(t, X[None], Y[None]), dtype=float)
        vals = np.broadcast_to(vals, grid.shape).copy()
    else:
        vals = np.array(expr, dtype=float)
        if vals.shape != grid.shape:
            raise ShapeMismatchError(f"array of shape {vals.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(vals)):
        raise SamplingError("potential has non-finite samples", "non-finite")
    if grid.domain.shape != "rectangle":
        vals *= grid.interior_mask[None]
    return Potential(grid, vals, p_exponent, label)


# ---------------------------------------------------------------------------
# norms


def _gradients(q: Potential) -> list[np.ndarray]:
    g = q.grid
    return list(np.gradient(q.values, g.dt, g.dx, g.dy, edge_order=2))


def hminus1_norm(q: Potential) -> tuple[float, float]:
    """(H^{-1} norm, Parseval L2) of the zero-extended field on a doubled box.

    The field is weighted by the square root of the trapezoid cell weights so
    that the unweighted symbol reproduces the grid L2 norm exactly.
    """
    g = q.grid
    cell = g.dt * g.dx * g.dy
    w = g.time_weights[:, None, None] * g.space_weights[None] / cell
    f = q.values * np.sqrt(w)
    shape = tuple(2 * n for n in f.shape)
    F = np.fft.rfftn(f, s=shape, axes=(0, 1, 2))
    mu = 2 * np.pi * np.fft.fftfreq(shape[0], g.dt)
    k1 = 2 * np.pi * np.fft.fftfreq(shape[1], g.dx)
    k2 = 2 * np.pi * np.fft.rfftfreq(shape[2], g.dy)
    z2 = mu[:, None, None] ** 2 + k1[None, :, None] ** 2 + k2[None, None, :] ** 2
    a2 = np.abs(F) ** 2
    mult = np.full(shape[2] // 2 + 1, 2.0)
    mult[0] = 1.0
    if shape[2] % 2 == 0:
        mult[-1] = 1.0
    ntot = float(np.prod(shape))
    par = cell / ntot * float(np.sum(a2 * mult))
    hm1 = cell / ntot * float(np.sum(a2 * mult / (1.0 + z2)))
    return math.sqrt(max(hm1, 0.0)), math.sqrt(max(par, 0.0))


def holder_estimate(q: Potential, alpha: float, n_pairs: int = 10_000, seed: int = 0) -> float:
    """Sampled ``max |q(a)-q(b)| / |a-b|^alpha`` over random node pairs.

    Half of the pairs are near neighbours (offsets of up to three cells), the
    rest are arbitrary, so both the local and the global quotient are probed.
    """
    g = q.grid
    rng = np.random.default_rng(seed)
    dims = np.array(g.shape)
    a = rng.integers(0, dims, size=(n_pairs, 3))
    near = rng.integers(-3, 4, size=(n_pairs, 3))
    far = rng.integers(0, dims, size=(n_pairs, 3))
    b = np.where(np.arange(n_pairs)[:, None] < n_pairs // 2, np.clip(a + near, 0, dims - 1), far)
    h = np.array([g.dt, g.dx, g.dy])
    dist = np.linalg.norm((a - b) * h, axis=1)
    keep = dist > 0
    va = q.values[a[keep, 0], a[keep, 1], a[keep, 2]]
    vb = q.values[b[keep, 0], b[keep, 1], b[keep, 2]]
    if not keep.any():
        return 0.0
    return float(np.max(np.abs(va - vb) / dist[keep] ** alpha))


def sobolev_norms(q: Potential) -> dict[str, float]:
    g = q.grid
    v = q.values
    l2 = g.l2(v)
    grads = _gradients(q)
    grad2 = sum(d * d for d in grads)
    h1 = math.sqrt(l2 * l2 + g.integrate(grad2))
    p = q.p_exponent
    w1p = g.integrate(np.abs(v) ** p + sum(np.abs(d) ** p for d in grads)) ** (1.0 / p)
    hm1, par = hminus1_norm(q)
    return {
        "L2": l2,
        "Linf": float(np.max(np.abs(v))),
        "H1": h1,
        "Hminus1": hm1,
        "W1p": float(w1p),
        "Holder_alpha": holder_estimate(q, q.alpha),
        "L2_parseval": par,
    }


# ---------------------------------------------------------------------------
# light rays


def ray_chord(domain, x: np.ndarray, omega: np.ndarray, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Parameter interval ``[t0, t1]`` of ``{t in (0,T): x + t*omega in Omega}``.

    Returns arrays with ``t1 <= t0`` where the ray misses the domain.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    om = np.asarray(omega, dtype=float)
    lo = np.zeros(len(x))
    hi = np.full(len(x), float(T))
    if domain.shape == "rectangle":
        bounds = np.array(domain.params).reshape(2, 2)
        for k in range(2):
            if abs(om[k]) < 1e-15:
                outside = (x[:, k] < bounds[k, 0]) | (x[:, k] > bounds[k, 1])
                hi = np.where(outside, -1.0, hi)
                continue
            ta = (bounds[k, 0] - x[:, k]) / om[k]
            tb = (bounds[k, 1] - x[:, k]) / om[k]
            lo = np.maximum(lo, np.minimum(ta, tb))
            hi = np.minimum(hi, np.maximum(ta, tb))
    else:
        cx, cy, r = domain.params
        d = x - np.array([cx, cy])
        bq = d @ om
        cq = np.sum(d * d, axis=1) - r * r
        disc = bq * bq - cq
        sq = np.sqrt(np.maximum(disc, 0.0))
        lo = np.maximum(lo, -bq - sq)
        hi = np.where(disc > 0, np.minimum(hi, -bq + sq), -1.0)
    return lo, hi


def lightray_oracle(q: Potential, omega, x, quad_steps: int | None = None):
    """Midpoint quadrature of ``t -> q(t, x + t*omega)`` over ``(0, T)``.

    The ray is first clipped to the domain so that the zero extension of
    ``q`` never enters the quadrature as a discontinuity.  ``x`` may be a
    single point or an ``(m, 2)`` array.
    """
    g = q.grid
    if quad_steps is None:
        quad_steps = g.nt
    if quad_steps < g.nt:
        raise SamplingError(f"quad_steps={quad_steps} is below nt={g.nt}", "too-few-steps")
    om = np.asarray(omega, dtype=float)
    om = om / np.linalg.norm(om)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty(len(pts))
    # bounded working set: a few million quadrature nodes at a time
    chunk = max(1, 4_000_000 // quad_steps)
    for a in range(0, len(pts), chunk):
        out[a:a + chunk] = _ray_means(q, pts[a:a + chunk], om, quad_steps)
    if np.ndim(x) == 1:
        return float(out[0])
    return out


def _ray_means(q: Potential, pts: np.ndarray, om: np.ndarray, quad_steps: int) -> np.ndarray:
    g = q.grid
    t0, t1 = ray_chord(g.domain, pts, om, g.T)
    length = np.maximum(t1 - t0, 0.0)
    s = (np.arange(quad_steps) + 0.5) / quad_steps
    tt = t0[:, None] + length[:, None] * s[None, :]
    xs = pts[:, 0:1] + tt * om[0]
    ys = pts[:, 1:2] + tt * om[1]
    # points on the clipped chord are inside the closed domain up to rounding
    if g.domain.shape == "rectangle":
        x0, x1, y0, y1 = g.domain.bbox
        xs = np.clip(xs, x0, x1)
        ys = np.clip(ys, y0, y1)
    vals = q.interpolate(tt, xs, ys)
    return np.where(length > 0, vals.mean(axis=1) * length, 0.0)


def check_boundary_agreement(q1: Potential, q2: Potential, tol: float = 0.0) -> bool:
    """True iff ``max |q1 - q2|`` over the lateral boundary nodes is ``<= tol``."""
    _require_same_grid(q1, q2)
    diff = q1.grid.boundary_node_values(q1.values - q2.values)
    return bool(np.max(np.abs(diff), initial=0.0) <= tol)
