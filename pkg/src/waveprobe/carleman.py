"""Empirical constants for the weighted energy (Carleman) inequality.

For a field ``u`` vanishing on the lateral boundary together with its
initial value and velocity, seven weighted square integrals with weight
``exp(-2 lam (t + omega.x))`` are evaluated:

* left side: ``lam |u_t(T)|^2``, ``lam |d_nu u|^2 |omega.nu|`` on the face
  ``nu.omega > 0`` and ``lam^2 |u|^2`` over ``Q``;
* right side: ``|(box + q) u|^2`` over ``Q``, ``lam^3 |u(T)|^2``,
  ``lam |grad u(T)|^2`` and ``lam |d_nu u|^2 |omega.nu|`` on ``nu.omega <= 0``.

The ratio left/right is the empirical constant.  The weight is rescaled by
``exp(2 lam s)`` with ``s`` the minimum of ``t + omega.x`` (or a caller's
shift), which multiplies every term equally and keeps ``lam = 64`` clear of
underflow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import HypothesisViolationError, WaveprobeError
from .geometry import SpaceTimeGrid
from .potential import Potential
from .wave_solver import WaveField, end_velocity, normal_derivative

LHS_TERMS = ("final_velocity_term", "shadow_flux_term", "interior_term")
RHS_TERMS = ("pde_term", "final_value_term", "final_gradient_term", "illum_flux_term")
TERM_NAMES = LHS_TERMS + RHS_TERMS
CSV_COLUMNS = ("u_id", "lambda") + TERM_NAMES + ("empirical_C",)

#: Relative tolerance for the vanishing-data hypotheses.
HYPOTHESIS_TOL = 1e-8


@dataclass(frozen=True)
class CarlemanReport:
    lam: float
    omega: tuple[float, float]
    terms: dict[str, float]
    shift: float

    @property
    def lhs_total(self) -> float:
        return sum(self.terms[k] for k in LHS_TERMS)

    @property
    def rhs_total(self) -> float:
        return sum(self.terms[k] for k in RHS_TERMS)

    @property
    def empirical_C(self) -> float:
        """``lhs / rhs``; NaN when both sides vanish."""
        lhs, rhs = self.lhs_total, self.rhs_total
        if rhs == 0.0:
            return math.nan if lhs == 0.0 else math.inf
        return lhs / rhs

    @property
    def lhs_terms(self) -> dict[str, float]:
        return {k: self.terms[k] for k in LHS_TERMS}

    @property
    def rhs_terms(self) -> dict[str, float]:
        return {k: self.terms[k] for k in RHS_TERMS}


# ---------------------------------------------------------------------------
# quadrature helpers


def _cell_mean(a: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """Average over the corners of each cell along ``axes``."""
    for ax in axes:
        n = a.shape[ax]
        a = 0.5 * (np.take(a, range(n - 1), axis=ax) + np.take(a, range(1, n), axis=ax))
    return a


def _min_phase(grid: SpaceTimeGrid, omega: np.ndarray) -> float:
    X, Y = grid.mesh()
    ox = omega[0] * X + omega[1] * Y
    return float(np.min(ox[grid.interior_mask]))


@dataclass(frozen=True, eq=False)
class _Quadrature:
    """Midpoint quantities for one grid, direction and ``lam``."""

    grid: SpaceTimeGrid
    lam: float
    omega: np.ndarray
    shift: float
    cells: np.ndarray = field(repr=False)  # (nx-1, ny-1) cells with all corners inside
    w_space: np.ndarray = field(repr=False)  # exp(-2 lam (omega.x - shift)) at cell centres
    w_time: np.ndarray = field(repr=False)  # exp(-2 lam t) at time midpoints

    @classmethod
    def make(cls, grid: SpaceTimeGrid, lam: float, omega, shift: float) -> "_Quadrature":
        om = np.asarray(omega, dtype=float)
        xc = 0.5 * (grid.x[:-1] + grid.x[1:])
        yc = 0.5 * (grid.y[:-1] + grid.y[1:])
        Xc, Yc = np.meshgrid(xc, yc, indexing="ij")
        m = grid.interior_mask
        cells = m[:-1, :-1] & m[1:, :-1] & m[:-1, 1:] & m[1:, 1:]
        ox = om[0] * Xc + om[1] * Yc
        w_x = np.exp(-2 * lam * (ox - shift))
        tc = 0.5 * (grid.t[:-1] + grid.t[1:])
        w_t = np.exp(-2 * lam * tc)
        return cls(grid, float(lam), om, float(shift), cells, w_x, w_t)

    @property
    def cell_area(self) -> float:
        return self.grid.dx * self.grid.dy

    def final(self, f2: np.ndarray) -> float:
        """``int_Omega W(T) f2`` with ``f2`` nodal, ``(nx, ny)``."""
        c = _cell_mean(f2, (0, 1))
        w = self.w_space * math.exp(-2 * self.lam * self.grid.T)
        return float(np.sum((c * w)[self.cells]) * self.cell_area)

    def interior(self, f2: np.ndarray) -> float:
        """``int_Q W f2`` with ``f2`` nodal, ``(nt+1, nx, ny)``."""
        c = _cell_mean(f2, (0, 1, 2))
        s = np.einsum("t,txy->xy", self.w_time, c)
        return float(np.sum((s * self.w_space)[self.cells]) * self.cell_area * self.grid.dt)

    def lateral(self, f2: np.ndarray, select: np.ndarray) -> float:
        """``int W f2 |omega.nu|`` over the boundary points in ``select``."""
        g = self.grid
        bp = g.boundary_points
        ox = bp @ self.omega
        on = np.abs(g.point_normal @ self.omega)
        w_x = np.exp(-2 * self.lam * (ox - self.shift)) * on * g.point_weight
        c = _cell_mean(f2, (0,))
        tot = np.einsum("t,tp->p", self.w_time, c) * g.dt
        return float(np.sum((tot * w_x)[select]))


# ---------------------------------------------------------------------------
# terms


def _field(u) -> np.ndarray:
    if isinstance(u, WaveField):
        if u.u is None:
            raise WaveprobeError("the field was solved without keep_field", "missing-field")
        if u.conjugation is not None:
            raise WaveprobeError("pass the physical field, not an amplitude", "conjugated-field")
        return u.u
    return np.asarray(u, dtype=float)


def _discrete_box(grid: SpaceTimeGrid, u: np.ndarray) -> np.ndarray:
    """``(d_t^2 - Lap) u`` by central differences on interior nodes (zero elsewhere)."""
    out = np.zeros_like(u)
    dt2, dx2, dy2 = grid.dt**2, grid.dx**2, grid.dy**2
    c = (slice(1, -1), slice(1, -1), slice(1, -1))
    out[c] = (
        (u[2:, 1:-1, 1:-1] - 2 * u[c] + u[:-2, 1:-1, 1:-1]) / dt2
        - (u[1:-1, 2:, 1:-1] - 2 * u[c] + u[1:-1, :-2, 1:-1]) / dx2
        - (u[1:-1, 1:-1, 2:] - 2 * u[c] + u[1:-1, 1:-1, :-2]) / dy2
    )
    # one-sided in time at the ends keeps the midpoint rule's end cells populated
    out[0] = 2 * out[1] - out[2]
    out[-1] = 2 * out[-2] - out[-3]
    edge = ~grid.interior_mask.copy()
    edge[0, :] = edge[-1, :] = edge[:, 0] = edge[:, -1] = True
    out[:, edge] = 0.0
    return out


def check_hypotheses(grid: SpaceTimeGrid, u: np.ndarray, tol: float = HYPOTHESIS_TOL) -> None:
    """Raise if ``u`` fails to vanish on the lateral boundary or at ``t = 0`` with its velocity."""
    scale = float(np.max(np.abs(u)))
    if scale == 0.0:
        return
    lim = tol * scale
    lateral = float(np.max(np.abs(grid.boundary_node_values(u))))
    v0 = float(np.max(np.abs(u[0])))
    v1 = float(np.max(np.abs(end_velocity(u[0], u[1], u[2], -grid.dt)))) * grid.T
    for name, val in (("lateral trace", lateral), ("initial value", v0)):
        if val > lim:
            raise HypothesisViolationError(f"{name} is {val:.3g}, above {lim:.3g}")
    # the discrete initial velocity carries an O(dt^2) error for t^2-type fields
    if v1 > max(lim, 10 * scale * (grid.dt / grid.T) ** 2):
        raise HypothesisViolationError(f"initial velocity is {v1 / grid.T:.3g}")


def carleman_terms(
    u,
    q: Potential | np.ndarray | None,
    lam: float,
    omega,
    grid: SpaceTimeGrid | None = None,
    box_u: np.ndarray | None = None,
    shift: float | None = None,
    validate: bool = True,
) -> CarlemanReport:
    """All seven weighted integrals for one field and one ``lam``.

    ``box_u`` is ``(d_t^2 - Lap) u`` when known analytically; otherwise it is
    formed by central differences.  ``shift`` defaults to the minimum of
    ``t + omega.x`` over the closed cylinder.
    """
    if grid is None:
        if isinstance(u, WaveField):
            grid = u.grid
        elif isinstance(q, Potential):
            grid = q.grid
        else:
            raise WaveprobeError("a grid is required", "missing-grid")
    vals = _field(u)
    if vals.shape != grid.shape:
        raise WaveprobeError(f"field shape {vals.shape} differs from the grid's {grid.shape}", "shape-mismatch")
    if not lam > 0:
        raise WaveprobeError(f"lambda must be positive, got {lam}", "invalid-lambda")
    om = np.asarray(omega, dtype=float)
    om = om / np.linalg.norm(om)
    if validate:
        check_hypotheses(grid, vals)
    s = _min_phase(grid, om) if shift is None else float(shift)
    quad = _Quadrature.make(grid, lam, om, s)

    box = _discrete_box(grid, vals) if box_u is None else np.asarray(box_u, dtype=float)
    qv = q.values if isinstance(q, Potential) else (None if q is None else np.asarray(q, dtype=float))
    res = box if qv is None else box + qv * vals

    uT = vals[-1]
    ut_T = end_velocity(vals[-1], vals[-2], vals[-3], grid.dt)
    gx, gy = np.gradient(uT, grid.dx, grid.dy)
    flux = normal_derivative(grid, vals)
    shadow = grid.point_normal @ om > 0

    terms = {
        "final_velocity_term": lam * quad.final(ut_T**2),
        "shadow_flux_term": lam * quad.lateral(flux**2, shadow),
        "interior_term": lam**2 * quad.interior(vals**2),
        "pde_term": quad.interior(res**2),
        "final_value_term": lam**3 * quad.final(uT**2),
        "final_gradient_term": lam * quad.final(gx**2 + gy**2),
        "illum_flux_term": lam * quad.lateral(flux**2, ~shadow),
    }
    return CarlemanReport(float(lam), (float(om[0]), float(om[1])), terms, s)


# ---------------------------------------------------------------------------
# manufactured family


def _radial_bump(X, Y, c, r):
    """``exp(-1/(1 - rho^2))`` with ``rho = |x - c| / r`` and its Laplacian."""
    z1 = (X - c[0]) / r
    z2 = (Y - c[1]) / r
    rho2 = z1 * z1 + z2 * z2
    inside = rho2 < 1.0
    s = np.where(inside, 1.0 - rho2, 1.0)
    f = np.where(inside, np.exp(-1.0 / s), 0.0)
    lap = f * (4.0 * rho2 / s**4 - 8.0 * rho2 / s**3 - 4.0 / s**2) / (r * r)
    return f, np.where(inside, lap, 0.0)


@dataclass(frozen=True)
class ManufacturedSolution:
    """``p(t) B(x)`` with ``p(t) = t^m (1 + a t)`` and a radial bump ``B`` inside the domain."""

    power: int
    slope: float
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.power < 2:
            raise WaveprobeError("the time factor must vanish to second order at t = 0", "invalid-power")

    def _time(self, t):
        m, a = self.power, self.slope
        p = t**m * (1 + a * t)
        pdd = m * (m - 1) * t ** (m - 2) + a * (m + 1) * m * t ** (m - 1)
        return p, pdd

    def field(self, grid: SpaceTimeGrid) -> np.ndarray:
        X, Y = grid.mesh()
        b, _ = _radial_bump(X, Y, self.center, self.radius)
        p, _ = self._time(grid.t)
        return p[:, None, None] * b[None]

    def box(self, grid: SpaceTimeGrid) -> np.ndarray:
        """Exact ``(d_t^2 - Lap) u``."""
        X, Y = grid.mesh()
        b, lap = _radial_bump(X, Y, self.center, self.radius)
        p, pdd = self._time(grid.t)
        return pdd[:, None, None] * b[None] - p[:, None, None] * lap[None]


def manufactured_family(grid: SpaceTimeGrid, count: int = 10, seed: int = 0) -> list[ManufacturedSolution]:
    """``count`` members with bumps that fit inside the domain."""
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = grid.domain.bbox
    out: list[ManufacturedSolution] = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 1000 * count:
            raise WaveprobeError("could not place bumps inside the domain", "family-placement")
        r = float(rng.uniform(0.25, 0.6))
        c = (float(rng.uniform(x0 + r, x1 - r)), float(rng.uniform(y0 + r, y1 - r)))
        # the disk must sit inside the (possibly curved) domain with a margin
        th = np.linspace(0, 2 * np.pi, 32, endpoint=False)
        ring_x = c[0] + 1.05 * r * np.cos(th)
        ring_y = c[1] + 1.05 * r * np.sin(th)
        if not np.all(grid.domain.contains(ring_x, ring_y)):
            continue
        out.append(ManufacturedSolution(int(rng.integers(2, 4)), float(rng.uniform(-0.2, 0.5)), c, r))
    return out


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True)
class CarlemanSweep:
    lambdas: tuple[float, ...]
    reports: tuple[tuple[CarlemanReport, ...], ...]  # [member][lambda]

    def max_C(self) -> dict[float, float]:
        out = {}
        for k, lam in enumerate(self.lambdas):
            vals = [r[k].empirical_C for r in self.reports if math.isfinite(r[k].empirical_C)]
            out[lam] = max(vals) if vals else math.nan
        return out

    def bounded(self, factor: float = 1.2, reference: float | None = None) -> bool:
        """Whether the headline statistic never exceeds ``factor`` times its value at ``reference``."""
        mc = self.max_C()
        ref = self.lambdas[0] if reference is None else reference
        return all(mc[lam] <= factor * mc[ref] for lam in self.lambdas if lam >= ref)

    def smallest_bounded_lambda(self, factor: float = 1.2) -> float | None:
        for lam in self.lambdas:
            if self.bounded(factor, lam):
                return lam
        return None

    def rows(self) -> list[tuple]:
        out = []
        for i, member in enumerate(self.reports):
            for r in member:
                out.append((i, r.lam) + tuple(r.terms[k] for k in TERM_NAMES) + (r.empirical_C,))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def carleman_sweep(
    family: Sequence[ManufacturedSolution | np.ndarray],
    q: Potential | np.ndarray | None,
    lambdas: Sequence[float],
    omega,
    grid: SpaceTimeGrid,
) -> CarlemanSweep:
    """Reports for every member and ``lam``; analytic ``box u`` is used for manufactured members."""
    if len(family) == 0:
        raise WaveprobeError("the family is empty", "empty-family")
    lams = tuple(float(v) for v in lambdas)
    if list(lams) != sorted(lams):
        raise WaveprobeError("lambdas must be ascending", "unsorted-lambdas")
    reports = []
    for member in family:
        if isinstance(member, ManufacturedSolution):
            u, box = member.field(grid), member.box(grid)
        else:
            u, box = np.asarray(member, dtype=float), None
        check_hypotheses(grid, u)
        reports.append(tuple(carleman_terms(u, q, lam, omega, grid, box, validate=False) for lam in lams))
    return CarlemanSweep(lams, tuple(reports))
