"""Spatial domain, boundary face partitions and the space-time grid.

The desk configuration is the square (-1, 1)^2; a disk is available as a
masked grid with stair-step Dirichlet nodes and analytic normals.

Grid conventions
----------------
Nodes sit at ``x_i = x0 + i*dx``, ``y_j = y0 + j*dy`` and ``t_n = n*dt``;
space-time fields are arrays of shape ``(nt + 1, nx, ny)`` with time slowest.
The boundary is described twice:

* boundary *nodes* (unique grid nodes carrying Dirichlet values), and
* boundary *points* (one entry per face a node belongs to, with the outward
  normal and an arclength quadrature weight).  Rectangle corners appear once
  per adjacent face, each with half a trapezoid weight.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import GeometryError, GridError

MAX_NT = 10_000_000


@dataclass(frozen=True)
class Domain:
    """Rectangle ``(x_min, x_max, y_min, y_max)`` or disk ``(cx, cy, radius)``."""

    shape: str
    params: tuple[float, ...]

    @property
    def contains_origin(self) -> bool:
        return bool(self.contains(np.zeros(1), np.zeros(1), strict=True)[0])

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        if self.shape == "rectangle":
            return tuple(self.params)  # type: ignore[return-value]
        cx, cy, r = self.params
        return (cx - r, cx + r, cy - r, cy + r)

    @property
    def diameter(self) -> float:
        if self.shape == "rectangle":
            x0, x1, y0, y1 = self.params
            return math.hypot(x1 - x0, y1 - y0)
        return 2.0 * self.params[2]

    @property
    def area(self) -> float:
        if self.shape == "rectangle":
            x0, x1, y0, y1 = self.params
            return (x1 - x0) * (y1 - y0)
        return math.pi * self.params[2] ** 2

    def contains(self, x, y, strict: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.shape == "rectangle":
            x0, x1, y0, y1 = self.params
            if strict:
                return (x > x0) & (x < x1) & (y > y0) & (y < y1)
            return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        cx, cy, r = self.params
        d2 = (x - cx) ** 2 + (y - cy) ** 2
        return d2 < r * r if strict else d2 <= r * r

    def boundary_samples(self, n: int = 400) -> tuple[np.ndarray, np.ndarray]:
        """Points and outward normals along the analytic boundary (closed curve)."""
        if self.shape == "disk":
            cx, cy, r = self.params
            th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
            nu = np.stack([np.cos(th), np.sin(th)], axis=1)
            return np.stack([cx + r * nu[:, 0], cy + r * nu[:, 1]], axis=1), nu
        x0, x1, y0, y1 = self.params
        m = max(n // 4, 2)
        s = (np.arange(m) + 0.5) / m
        pts, nus = [], []
        for (px, py), nv in (
            ((x0 + s * (x1 - x0), np.full(m, y0)), (0.0, -1.0)),
            ((np.full(m, x1), y0 + s * (y1 - y0)), (1.0, 0.0)),
            ((x1 - s * (x1 - x0), np.full(m, y1)), (0.0, 1.0)),
            ((np.full(m, x0), y1 - s * (y1 - y0)), (-1.0, 0.0)),
        ):
            pts.append(np.stack([px, py], axis=1))
            nus.append(np.tile(nv, (m, 1)))
        return np.concatenate(pts), np.concatenate(nus)

    def to_dict(self) -> dict[str, Any]:
        if self.shape == "rectangle":
            x0, x1, y0, y1 = self.params
            return {"shape": "rectangle", "x_min": x0, "x_max": x1, "y_min": y0, "y_max": y1}
        cx, cy, r = self.params
        return {"shape": "disk", "center": [cx, cy], "radius": r}


def build_domain(spec: Mapping[str, Any] | Domain) -> Domain:
    """Validate a domain description (mapping with a ``shape`` key)."""
    if isinstance(spec, Domain):
        return build_domain(spec.to_dict())
    shape = spec.get("shape", "rectangle")
    if shape == "rectangle":
        x0 = float(spec.get("x_min", -1.0))
        x1 = float(spec.get("x_max", 1.0))
        y0 = float(spec.get("y_min", -1.0))
        y1 = float(spec.get("y_max", 1.0))
        if not (x1 > x0 and y1 > y0) or not all(map(math.isfinite, (x0, x1, y0, y1))):
            raise GeometryError("rectangle extents are degenerate", "degenerate-extents")
        dom = Domain("rectangle", (x0, x1, y0, y1))
    elif shape == "disk":
        cx, cy = (float(c) for c in spec.get("center", (0.0, 0.0)))
        r = float(spec.get("radius", 1.0))
        if not (r > 0 and math.isfinite(r)):
            raise GeometryError("disk radius must be positive", "degenerate-extents")
        dom = Domain("disk", (cx, cy, r))
    else:
        raise GeometryError(f"unknown domain shape {shape!r}", "unknown-shape")
    if not dom.contains_origin:
        raise GeometryError("the origin must lie strictly inside the domain", "origin-not-interior")
    return dom


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(2)
    n = np.linalg.norm(v)
    if not n > 0:
        raise GeometryError("direction must be nonzero", "degenerate-direction")
    return v / n


@dataclass(frozen=True)
class FacePartition:
    """Direction-dependent face predicates, all evaluated on outward normals.

    ``F_prime``/``G_prime`` are the unions, over the aperture cap
    ``U = {|w - omega| <= epsilon}``, of ``{nu.w >= -epsilon}`` and
    ``{nu.w <= epsilon}``, which are the smallest closed sets meeting the
    inclusion requirements for every direction in the cap.
    """

    omega: np.ndarray
    threshold_r: float
    epsilon: float

    @property
    def cap_angle(self) -> float:
        """Largest angle between ``omega`` and a unit vector of the cap."""
        return 2.0 * math.asin(min(self.epsilon / 2.0, 1.0))

    def _angle(self, nu) -> np.ndarray:
        nu = np.asarray(nu, dtype=float)
        c = np.clip(nu @ self.omega, -1.0, 1.0)
        return np.arccos(c)

    def shadowed(self, nu, omega=None, r=None) -> np.ndarray:
        om = self.omega if omega is None else _unit(omega)
        r = self.threshold_r if r is None else r
        return np.asarray(nu, dtype=float) @ om > r

    def illuminated(self, nu, omega=None, r=None) -> np.ndarray:
        return ~self.shadowed(nu, omega, r)

    def F_prime(self, nu) -> np.ndarray:
        beta = self._angle(nu)
        return np.cos(np.maximum(beta - self.cap_angle, 0.0)) >= -self.epsilon - 1e-12

    def G_prime(self, nu) -> np.ndarray:
        beta = self._angle(nu)
        return np.cos(np.minimum(beta + self.cap_angle, np.pi)) <= self.epsilon + 1e-12

    def in_cap(self, omega) -> bool:
        return bool(np.linalg.norm(_unit(omega) - self.omega) <= self.epsilon + 1e-12)

    def cap_directions(self, count: int) -> np.ndarray:
        """``count`` unit vectors spread uniformly in angle across the cap."""
        th0 = math.atan2(self.omega[1], self.omega[0])
        if count == 1:
            return self.omega[None, :].copy()
        th = th0 + np.linspace(-self.cap_angle, self.cap_angle, count)
        return np.stack([np.cos(th), np.sin(th)], axis=1)


def boundary_faces(domain: Domain, omega0, epsilon: float, r: float = 0.0) -> FacePartition:
    if not (0.0 < epsilon < 1.0):
        raise GeometryError(f"epsilon must lie in (0, 1), got {epsilon}", "invalid-epsilon")
    faces = FacePartition(_unit(omega0), float(r), float(epsilon))
    _, nu = domain.boundary_samples()
    for name, pred in (("shadowed", faces.shadowed(nu)), ("illuminated", faces.illuminated(nu))):
        if not pred.any():
            raise GeometryError(f"{name} face is empty for r={r}", "empty-face")
    for name, pred in (("F'", faces.F_prime(nu)), ("G'", faces.G_prime(nu))):
        if pred.all():
            warnings.warn(f"{name} covers the whole boundary for epsilon={epsilon}", stacklevel=2)
    return faces


@dataclass(frozen=True, eq=False)
class SpaceTimeGrid:
    domain: Domain
    nx: int
    ny: int
    nt: int
    dx: float
    dy: float
    dt: float
    T: float
    cfl_factor: float
    x0: float
    y0: float
    interior_mask: np.ndarray = field(repr=False)
    boundary_nodes: np.ndarray = field(repr=False)  # (nbn, 2) integer (i, j)
    point_node: np.ndarray = field(repr=False)  # (nbp,) index into boundary_nodes
    point_normal: np.ndarray = field(repr=False)  # (nbp, 2)
    point_weight: np.ndarray = field(repr=False)  # (nbp,) arclength weights
    point_face: np.ndarray = field(repr=False)  # (nbp,) face label, -1 for curved
    node_arclength: np.ndarray = field(repr=False)  # (nbn,) perimeter coordinate

    # -- coordinates -----------------------------------------------------
    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nt + 1, self.nx, self.ny)

    @property
    def space_shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def perimeter(self) -> float:
        return float(self.node_arclength_total)

    @property
    def node_arclength_total(self) -> float:
        return float(self.point_weight.sum())

    @property
    def boundary_points(self) -> np.ndarray:
        ij = self.boundary_nodes[self.point_node]
        return np.stack([self.x0 + ij[:, 0] * self.dx, self.y0 + ij[:, 1] * self.dy], axis=1)

    @property
    def update_mask(self) -> np.ndarray:
        """Nodes advanced by the time stepper (inside the domain, not Dirichlet)."""
        m = self.interior_mask.copy()
        m[self.boundary_nodes[:, 0], self.boundary_nodes[:, 1]] = False
        return m

    # -- quadrature ------------------------------------------------------
    @property
    def time_weights(self) -> np.ndarray:
        w = np.full(self.nt + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    @property
    def space_weights(self) -> np.ndarray:
        if self.domain.shape == "rectangle":
            wx = np.full(self.nx, self.dx)
            wx[0] = wx[-1] = 0.5 * self.dx
            wy = np.full(self.ny, self.dy)
            wy[0] = wy[-1] = 0.5 * self.dy
            return np.outer(wx, wy)
        return self.interior_mask * (self.dx * self.dy)

    def integrate_space(self, f) -> float:
        return float(np.sum(np.asarray(f) * self.space_weights))

    def integrate(self, f) -> float:
        """Trapezoid rule over Q for a field of shape ``(nt+1, nx, ny)``."""
        f = np.asarray(f)
        per_t = np.tensordot(f, self.space_weights, axes=([1, 2], [0, 1]))
        return float(per_t @ self.time_weights)

    def integrate_boundary(self, f, mask=None) -> float:
        """Integral over (0,T) x boundary of a field sampled at boundary points."""
        w = self.point_weight if mask is None else self.point_weight * mask
        return float(self.time_weights @ (np.asarray(f) @ w))

    def l2(self, f) -> float:
        return math.sqrt(max(self.integrate(np.abs(f) ** 2), 0.0))

    def l2_space(self, f) -> float:
        return math.sqrt(max(self.integrate_space(np.abs(f) ** 2), 0.0))

    # -- boundary helpers -------------------------------------------------
    def nodes_to_points(self, g) -> np.ndarray:
        return np.asarray(g)[..., self.point_node]

    def boundary_node_values(self, field3d) -> np.ndarray:
        i, j = self.boundary_nodes[:, 0], self.boundary_nodes[:, 1]
        return np.asarray(field3d)[..., i, j]

    def same_as(self, other: "SpaceTimeGrid") -> bool:
        return (
            self.domain == other.domain
            and (self.nx, self.ny, self.nt) == (other.nx, other.ny, other.nt)
            and math.isclose(self.dt, other.dt)
            and math.isclose(self.dx, other.dx)
        )

    def cfl_ok(self) -> bool:
        return self.dt <= self.cfl_factor * min(self.dx, self.dy) / math.sqrt(2.0) * (1 + 1e-12)

    def describe(self) -> dict[str, Any]:
        return {
            "domain": self.domain.to_dict(),
            "nx": self.nx,
            "ny": self.ny,
            "nt": self.nt,
            "dx": self.dx,
            "dy": self.dy,
            "dt": self.dt,
            "T": self.T,
            "bbox": list(self.domain.bbox),
        }


def _rectangle_boundary(nx: int, ny: int, dx: float, dy: float):
    nodes = []
    arc = []
    s = 0.0
    for i in range(nx):
        nodes.append((i, 0)); arc.append(s); s += dx
    s -= dx
    for j in range(1, ny):
        s += dy; nodes.append((nx - 1, j)); arc.append(s)
    for i in range(nx - 2, -1, -1):
        s += dx; nodes.append((i, ny - 1)); arc.append(s)
    for j in range(ny - 2, 0, -1):
        s += dy; nodes.append((0, j)); arc.append(s)
    nodes_arr = np.array(nodes, dtype=np.int64)
    lookup = {tuple(n): k for k, n in enumerate(nodes)}

    pn, nrm, wts, face = [], [], [], []
    faces = (
        (0, [(i, 0) for i in range(nx)], (0.0, -1.0), dx),
        (1, [(nx - 1, j) for j in range(ny)], (1.0, 0.0), dy),
        (2, [(i, ny - 1) for i in range(nx)], (0.0, 1.0), dx),
        (3, [(0, j) for j in range(ny)], (-1.0, 0.0), dy),
    )
    for label, seq, nv, h in faces:
        for k, ij in enumerate(seq):
            pn.append(lookup[ij])
            nrm.append(nv)
            wts.append(0.5 * h if k in (0, len(seq) - 1) else h)
            face.append(label)
    return (
        nodes_arr,
        np.array(pn, dtype=np.int64),
        np.array(nrm, dtype=float),
        np.array(wts, dtype=float),
        np.array(face, dtype=np.int64),
        np.array(arc, dtype=float),
    )


def _disk_boundary(mask: np.ndarray, X: np.ndarray, Y: np.ndarray, center, radius):
    inside = mask
    pad = np.pad(inside, 1, constant_values=False)
    nb_out = (
        ~pad[2:, 1:-1] | ~pad[:-2, 1:-1] | ~pad[1:-1, 2:] | ~pad[1:-1, :-2]
    )
    bmask = inside & nb_out
    ii, jj = np.nonzero(bmask)
    px = X[ii, jj] - center[0]
    py = Y[ii, jj] - center[1]
    th = np.arctan2(py, px)
    order = np.argsort(th, kind="stable")
    ii, jj, th = ii[order], jj[order], th[order]
    nodes = np.stack([ii, jj], axis=1).astype(np.int64)
    nu = np.stack([np.cos(th), np.sin(th)], axis=1)
    gaps_next = np.roll(th, -1) - th
    gaps_next[-1] += 2.0 * np.pi
    gaps_prev = np.roll(gaps_next, 1)
    weights = 0.5 * radius * (gaps_next + gaps_prev)
    arc = radius * (th - th[0])
    n = len(ii)
    return nodes, np.arange(n), nu, weights, np.full(n, -1, dtype=np.int64), arc


def build_grid(domain: Domain, nx: int, T: float, cfl_factor: float = 0.9) -> SpaceTimeGrid:
    """Node grid on the domain's bounding box with a CFL-limited time step.

    ``dt`` is the largest step with ``dt <= cfl*min(dx,dy)/sqrt(2)`` that
    divides ``T`` exactly.
    """
    if nx < 16:
        raise GridError(f"nx={nx} is below the minimum of 16", "grid-too-coarse")
    if not (T > 0 and math.isfinite(T)):
        raise GridError("T must be positive", "invalid-T")
    if not (0.0 < cfl_factor <= 0.9):
        raise GridError("cfl_factor must lie in (0, 0.9]", "invalid-cfl")
    x0, x1, y0, y1 = domain.bbox
    dx = (x1 - x0) / (nx - 1)
    ny = max(int(round((y1 - y0) / dx)) + 1, 16)
    dy = (y1 - y0) / (ny - 1)
    dt_max = cfl_factor * min(dx, dy) / math.sqrt(2.0)
    nt_f = math.ceil(T / dt_max - 1e-9)
    if nt_f > MAX_NT:
        raise GridError(f"nt={nt_f} exceeds the desk-scale limit", "nt-overflow")
    nt = int(nt_f)
    dt = T / nt
    X, Y = np.meshgrid(x0 + dx * np.arange(nx), y0 + dy * np.arange(ny), indexing="ij")
    if domain.shape == "rectangle":
        mask = np.ones((nx, ny), dtype=bool)
        parts = _rectangle_boundary(nx, ny, dx, dy)
    else:
        cx, cy, r = domain.params
        mask = domain.contains(X, Y, strict=True)
        parts = _disk_boundary(mask, X, Y, (cx, cy), r)
    nodes, pnode, pnormal, pweight, pface, arc = parts
    mask.setflags(write=False)
    for a in parts:
        a.setflags(write=False)
    return SpaceTimeGrid(
        domain=domain, nx=nx, ny=ny, nt=nt, dx=dx, dy=dy, dt=dt, T=float(T),
        cfl_factor=float(cfl_factor), x0=x0, y0=y0, interior_mask=mask,
        boundary_nodes=nodes, point_node=pnode, point_normal=pnormal,
        point_weight=pweight, point_face=pface, node_arclength=arc,
    )


def refine(grid: SpaceTimeGrid, factor: int = 2) -> SpaceTimeGrid:
    """Same domain and T with ``factor`` times as many cells per side."""
    return build_grid(grid.domain, (grid.nx - 1) * factor + 1, grid.T, grid.cfl_factor)
