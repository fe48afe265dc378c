"""Geometric-optics probes in factored (amplitude) form.

Two families are built along the light ray ``x = y - t*omega``:

* decaying probes ``exp(-lam (t + x.omega)) (chi + w)`` solving
  ``(box + q) u = 0``, with ``w`` obtained by dividing by the symbol of the
  conjugated operator on a padded periodic box and iterating on ``q w``;
* vanishing probes ``exp(+lam (t + x.omega)) (chi + z)`` whose amplitude is
  zero on the exit part of the lateral boundary and at ``t = 0``; ``z`` comes
  from a forward conjugated IBVP solve.

The conjugated operator is ``P_s = box + 2 s (d_t - omega.grad)``.  Its
symbol in the ``exp(i(mu t + xi.x))`` convention is
``p_s(mu, xi) = -mu^2 + |xi|^2 + 2 i s (mu - omega.xi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.integrate import quad

from .errors import (
    IllConditionedInversionError,
    LambdaTooSmallError,
    ShapeMismatchError,
    SupportLeakError,
    WaveprobeError,
)
from .geometry import FacePartition, SpaceTimeGrid
from .potential import Potential
from .wave_solver import (
    directional_derivative,
    input_support_nodes,
    laplacian,
    solve_ibvp,
)


def coupled_delta(lam: float, alpha: float = 0.5) -> float:
    """Mollifier width ``lam**(-1/(4 + 2 alpha))``."""
    return float(lam) ** (-1.0 / (4.0 + 2.0 * alpha))


# ---------------------------------------------------------------------------
# mollifier


@lru_cache(maxsize=None)
def bump_normalization() -> float:
    """``c`` with ``|| c exp(-1/(1-|z|^2)) ||_{L2(R^2)} = 1``."""
    val, _ = quad(lambda r: math.exp(-2.0 / (1.0 - r * r)) * 2.0 * math.pi * r, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13)
    return 1.0 / math.sqrt(val)


def _bump_parts(z1: np.ndarray, z2: np.ndarray):
    r2 = z1 * z1 + z2 * z2
    inside = r2 < 1.0
    s = np.where(inside, 1.0 - r2, 1.0)
    phi = np.where(inside, bump_normalization() * np.exp(-1.0 / s), 0.0)
    return phi, s, inside


@dataclass(frozen=True)
class Mollifier:
    """``chi(t, x) = delta^{-1} phi((y - x - t omega) / delta)`` in two space dimensions."""

    delta: float
    y: tuple[float, float]
    omega: tuple[float, float]

    def __post_init__(self):
        if not (0.0 < self.delta < 1.0):
            raise WaveprobeError(f"delta must lie in (0, 1), got {self.delta}", "invalid-delta")

    @classmethod
    def make(cls, delta, y, omega) -> "Mollifier":
        om = np.asarray(omega, dtype=float)
        om = om / np.linalg.norm(om)
        return cls(float(delta), (float(y[0]), float(y[1])), (float(om[0]), float(om[1])))

    def _z(self, t, x, y):
        d = self.delta
        return (self.y[0] - x - t * self.omega[0]) / d, (self.y[1] - y - t * self.omega[1]) / d

    def value(self, t, x, y) -> np.ndarray:
        z1, z2 = self._z(t, x, y)
        phi, _, _ = _bump_parts(z1, z2)
        return phi / self.delta

    def box_value(self, t, x, y) -> np.ndarray:
        """Analytic ``(d_t^2 - Lap) chi``.

        ``chi`` is constant along ``(1, -omega)``, so only the Hessian of the
        bump across the ray survives: ``box chi = -delta^{-3} w^T H w`` with
        ``w`` the unit vector orthogonal to ``omega``.
        """
        z1, z2 = self._z(t, x, y)
        phi, s, inside = _bump_parts(z1, z2)
        w1, w2 = -self.omega[1], self.omega[0]
        zw = z1 * w1 + z2 * w2
        a = 4.0 / s**4 - 8.0 / s**3
        hww = phi * (a * zw * zw - 2.0 / s**2)
        return np.where(inside, -hww / self.delta**3, 0.0)

    def dt_value(self, t, x, y) -> np.ndarray:
        z1, z2 = self._z(t, x, y)
        phi, s, inside = _bump_parts(z1, z2)
        # grad phi = -2 z phi / s^2 and dz/dt = -omega/delta
        g = -2.0 * phi / s**2
        dz = -(g * z1 * self.omega[0] + g * z2 * self.omega[1]) / self.delta
        return np.where(inside, dz / self.delta, 0.0)

    def on_axes(self, t: float, xs: np.ndarray, ys: np.ndarray, which: str = "value") -> np.ndarray:
        """One time slice on the tensor grid ``xs x ys`` (ascending axes).

        Only the index window covering the support disk of radius ``delta``
        around ``y - t omega`` is evaluated; everything else is zero.
        """
        fn = {"value": self.value, "box": self.box_value, "dt": self.dt_value}[which]
        out = np.zeros((len(xs), len(ys)))
        cx = self.y[0] - t * self.omega[0]
        cy = self.y[1] - t * self.omega[1]
        i0, i1 = np.searchsorted(xs, [cx - self.delta, cx + self.delta])
        j0, j1 = np.searchsorted(ys, [cy - self.delta, cy + self.delta])
        if i1 > i0 and j1 > j0:
            X, Y = np.meshgrid(xs[i0:i1], ys[j0:j1], indexing="ij")
            out[i0:i1, j0:j1] = fn(t, X, Y)
        return out

    def on_grid(self, grid: SpaceTimeGrid, which: str = "value") -> np.ndarray:
        out = np.empty(grid.shape)
        xs, ys = grid.x, grid.y
        for n, t in enumerate(grid.t):
            out[n] = self.on_axes(t, xs, ys, which)
        return out

    def touches_domain_at(self, grid: SpaceTimeGrid, t: float) -> bool:
        X, Y = grid.mesh()
        return bool(np.any((self.value(t, X, Y) != 0) & grid.interior_mask))


def mollifier_chi(delta: float, y, omega, grid: SpaceTimeGrid) -> np.ndarray:
    """Samples of the transported mollifier on the grid."""
    return Mollifier.make(delta, y, omega).on_grid(grid)


# ---------------------------------------------------------------------------
# padded periodic box and symbol division


@dataclass(frozen=True, eq=False)
class SpectralBox:
    """Periodic box of twice the grid's extent in each direction, same spacings.

    The grid sits inside the box starting at index ``offset``; box times are
    ``(k - offset[0]) * dt`` and box abscissae ``x0 + (i - offset[1]) * dx``.
    """

    grid: SpaceTimeGrid
    shape: tuple[int, int, int]
    offset: tuple[int, int, int]

    @classmethod
    def for_grid(cls, grid: SpaceTimeGrid) -> "SpectralBox":
        shape = (2 * grid.nt, 2 * (grid.nx - 1), 2 * (grid.ny - 1))
        offset = (grid.nt // 2, (grid.nx - 1) // 2, (grid.ny - 1) // 2)
        return cls(grid, shape, offset)

    @property
    def q_slice(self) -> tuple[slice, slice, slice]:
        g = self.grid
        o = self.offset
        return (slice(o[0], o[0] + g.nt + 1), slice(o[1], o[1] + g.nx), slice(o[2], o[2] + g.ny))

    @property
    def t(self) -> np.ndarray:
        return (np.arange(self.shape[0]) - self.offset[0]) * self.grid.dt

    @property
    def x(self) -> np.ndarray:
        return self.grid.x0 + (np.arange(self.shape[1]) - self.offset[1]) * self.grid.dx

    @property
    def y(self) -> np.ndarray:
        return self.grid.y0 + (np.arange(self.shape[2]) - self.offset[2]) * self.grid.dy

    def frequencies(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g = self.grid
        mu = 2 * np.pi * np.fft.fftfreq(self.shape[0], g.dt)
        k1 = 2 * np.pi * np.fft.fftfreq(self.shape[1], g.dx)
        k2 = 2 * np.pi * np.fft.rfftfreq(self.shape[2], g.dy)
        return mu, k1, k2

    def embed(self, f: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.q_slice] = f
        return out

    def restrict(self, F: np.ndarray) -> np.ndarray:
        return F[self.q_slice]

    def cutoff(self, margin_cells: int = 2, ramp_fraction: float | None = None) -> tuple[np.ndarray, ...]:
        """Smooth product cutoff: 1 slightly beyond the grid, 0 well before the wrap.

        The plateau extends ``margin_cells`` spacings past the grid and the
        ramp down takes ``ramp_fraction`` of the grid extent in each direction.
        Returned as three 1-D factors ``(bt, bx, by)``.
        """
        g = self.grid
        x0, x1, y0, y1 = g.domain.bbox
        m = margin_cells
        if ramp_fraction is None:
            ramp_fraction = RAMP_FRACTION
        return (
            _plateau(self.t, 0.0, g.T, m * g.dt, ramp_fraction * g.T),
            _plateau(self.x, x0, x1, m * g.dx, ramp_fraction * (x1 - x0)),
            _plateau(self.y, y0, y1, m * g.dy, ramp_fraction * (y1 - y0)),
        )


RAMP_FRACTION = 0.125


def smoothstep(x: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for ``x <= 0``, 1 for ``x >= 1``."""
    x = np.asarray(x, dtype=float)
    f = lambda u: np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    a = f(x)
    b = f(1.0 - x)
    return a / (a + b)


def _plateau(s: np.ndarray, lo: float, hi: float, margin: float, ramp: float) -> np.ndarray:
    """1 on ``[lo - margin, hi + margin]``, 0 beyond a further ``ramp``."""
    left = smoothstep((s - (lo - margin - ramp)) / ramp)
    right = smoothstep(((hi + margin + ramp) - s) / ramp)
    return left * right


def default_shift(grid: SpaceTimeGrid) -> float:
    return 1.0 / grid.T


def conjugated_symbol(mu, k1, k2, s: float, omega, shift: float = 0.0) -> np.ndarray:
    """Symbol of ``P_s`` at ``(mu + i shift, xi)`` (broadcasting inputs)."""
    m = mu + 1j * shift
    return -(m * m) + k1 * k1 + k2 * k2 + 2j * s * (m - omega[0] * k1 - omega[1] * k2)


@dataclass
class InverseReport:
    zeroed_fraction: float = 0.0
    min_abs_symbol: float = float("inf")


def _apply_symbol_box(
    F: np.ndarray, box: SpectralBox, s: float, omega, shift: float, invert: bool, floor: float | None,
    report: InverseReport | None,
) -> None:
    """In-place multiply or divide of an rfft array by the symbol (chunked over ``mu``)."""
    mu, k1, k2 = box.frequencies()
    K1 = k1[:, None]
    K2 = k2[None, :]
    zeroed = 0.0
    total = 0.0
    mult = np.full(len(k2), 2.0)
    mult[0] = 1.0
    if box.shape[2] % 2 == 0:
        mult[-1] = 1.0
    mn = float("inf")
    for j, m in enumerate(mu):
        p = conjugated_symbol(m, K1, K2, s, omega, shift)
        if not invert:
            F[j] *= p
            continue
        ap = np.abs(p)
        mn = min(mn, float(ap.min()))
        if floor is not None:
            bad = ap < floor * abs(s)
            if report is not None:
                e = np.abs(F[j]) ** 2 * mult
                total += float(e.sum())
                zeroed += float(e[bad].sum())
            F[j] = np.where(bad, 0.0, F[j] / np.where(bad, 1.0, p))
        else:
            F[j] /= p
    if report is not None and invert:
        report.zeroed_fraction = zeroed / total if total > 0 else 0.0
        report.min_abs_symbol = mn


def _box_transform(fbox: np.ndarray, box: SpectralBox, s: float, omega, shift: float, invert: bool,
                   floor: float | None, report: InverseReport | None) -> np.ndarray:
    g = box.grid
    tw = np.exp(shift * box.t)[:, None, None] if shift else None
    work = fbox * tw if tw is not None else np.array(fbox, dtype=float)
    F = sfft.rfftn(work, workers=-1)
    del work
    _apply_symbol_box(F, box, s, omega, shift, invert, floor, report)
    out = sfft.irfftn(F, s=box.shape, workers=-1)
    del F
    if tw is not None:
        out /= tw
    return out


def symbol_inverse_apply(
    f: np.ndarray,
    lam: float,
    omega,
    grid: SpaceTimeGrid,
    floor: float = 1e-3,
    shift: float | None = None,
    report: InverseReport | None = None,
    max_zeroed: float = 0.1,
) -> np.ndarray:
    """Solve ``P_{-lam} g = f`` by symbol division on the padded periodic box.

    ``f`` may be given on the grid (it is zero-padded and the result is
    restricted back to the grid) or on the full box.  With ``shift = 0`` the
    plain periodic symbol is divided and modes with ``|p| < floor * lam`` are
    zeroed.  The default shift ``c = 1/T`` divides instead by ``p(mu + i c, xi)``,
    which conjugates the problem by ``exp(c t)``; then ``|p| >= lam * c`` on
    every mode, nothing is zeroed and the inverse is bounded by
    ``exp(c T') / (lam c)`` on the box.
    """
    box = SpectralBox.for_grid(grid)
    f = np.asarray(f, dtype=float)
    on_grid = f.shape == grid.shape
    if not on_grid and f.shape != box.shape:
        raise ShapeMismatchError(f"field shape {f.shape} matches neither grid {grid.shape} nor box {box.shape}")
    if shift is None:
        shift = default_shift(grid)
    rep = report if report is not None else InverseReport()
    fbox = box.embed(f) if on_grid else f
    out = _box_transform(fbox, box, -float(lam), _unit(omega), float(shift), True,
                         floor if shift == 0 else None, rep)
    if rep.zeroed_fraction > max_zeroed:
        raise IllConditionedInversionError(
            f"{100 * rep.zeroed_fraction:.1f}% of the source energy sits on zeroed modes; "
            "move lambda off the lattice resonance"
        )
    return box.restrict(out) if on_grid else out


def conjugated_apply_spectral(g: np.ndarray, s: float, omega, grid: SpaceTimeGrid, shift: float = 0.0) -> np.ndarray:
    """Apply ``P_s`` spectrally to a box field (the exact inverse of the division above)."""
    box = SpectralBox.for_grid(grid)
    if g.shape != box.shape:
        raise ShapeMismatchError("spectral application expects a box field")
    return _box_transform(g, box, float(s), _unit(omega), float(shift), False, None, None)


def _unit(omega) -> tuple[float, float]:
    om = np.asarray(omega, dtype=float)
    om = om / np.linalg.norm(om)
    return (float(om[0]), float(om[1]))


# ---------------------------------------------------------------------------
# probes


@dataclass(frozen=True, eq=False)
class GOProbe:
    sign: int
    lam: float
    omega: tuple[float, float]
    mollifier: Mollifier
    chi: np.ndarray = field(repr=False)
    remainder: np.ndarray = field(repr=False)
    residual_norm: float
    remainder_norms: dict
    grid: SpaceTimeGrid = field(repr=False)
    info: dict = field(default_factory=dict)

    @property
    def amplitude(self) -> np.ndarray:
        return self.chi + self.remainder

    @property
    def delta(self) -> float:
        return self.mollifier.delta

    @property
    def y(self) -> tuple[float, float]:
        return self.mollifier.y

    def header(self) -> dict:
        return {
            "sign": self.sign,
            "lambda": self.lam,
            "omega": list(self.omega),
            "delta": self.delta,
            "y": list(self.y),
            "residual_norm": self.residual_norm,
        }


def pair_amplitude_product(p1: GOProbe, p2: GOProbe) -> np.ndarray:
    """Product of a decaying and a vanishing probe with matching ``(lam, omega)``.

    The phases ``exp(-lam phi)`` and ``exp(+lam phi)`` cancel, so the physical
    product equals the product of amplitudes.
    """
    from .errors import ProbeMismatchError

    if {p1.sign, p2.sign} != {-1, 1}:
        raise ProbeMismatchError("probe product needs one decaying and one vanishing probe")
    if not math.isclose(p1.lam, p2.lam) or not np.allclose(p1.omega, p2.omega):
        raise ProbeMismatchError("probe product needs matching lambda and omega")
    return p1.amplitude * p2.amplitude


def field_norms(grid: SpaceTimeGrid, u: np.ndarray) -> dict:
    gt, gx, gy = np.gradient(u, grid.dt, grid.dx, grid.dy, edge_order=2)
    l2 = grid.l2(u)
    h1 = math.sqrt(l2 * l2 + grid.integrate(gt * gt + gx * gx + gy * gy))
    return {"L2": l2, "H1": h1}


def _potential_array(q, grid: SpaceTimeGrid) -> np.ndarray:
    if q is None:
        return np.zeros(grid.shape)
    if isinstance(q, Potential):
        if not q.grid.same_as(grid):
            raise ShapeMismatchError("potential lives on another grid", "grid-mismatch")
        return q.values
    arr = np.asarray(q, dtype=float)
    if arr.shape != grid.shape:
        raise ShapeMismatchError("potential array does not match the grid")
    return arr


def _box_wave_source(mol: Mollifier, box: SpectralBox) -> np.ndarray:
    """``B * box(chi)`` sampled on the full periodic box."""
    bt, bx, by = box.cutoff()
    bxy = bx[:, None] * by[None, :]
    out = np.zeros(box.shape)
    for k, t in enumerate(box.t):
        if bt[k] != 0.0:
            out[k] = mol.on_axes(t, box.x, box.y, "box") * bxy * bt[k]
    return out


def build_go_decaying(
    q,
    lam: float,
    omega,
    mollifier: Mollifier,
    grid: SpaceTimeGrid,
    tol: float = 1e-8,
    max_iter: int = 50,
    shift: float | None = None,
    floor: float = 1e-3,
) -> GOProbe:
    """Decaying probe: Picard iteration ``w <- -E((box + q) chi + q w)``."""
    if lam < 1.0:
        raise LambdaTooSmallError(f"lambda={lam} is below 1")
    om = _unit(omega)
    if not np.allclose(om, mollifier.omega):
        raise WaveprobeError("mollifier direction differs from omega", "probe-mismatch")
    qv = _potential_array(q, grid)
    box = SpectralBox.for_grid(grid)
    chi = mollifier.on_grid(grid)
    chi_norm = grid.l2(chi)
    source0 = _box_wave_source(mollifier, box)
    qs = box.q_slice
    source0[qs] += qv * chi
    report = InverseReport()
    w = np.zeros(grid.shape)
    q_zero = not np.any(qv)
    increments = []
    it = 0
    for it in range(1, max_iter + 1):
        src = source0.copy() if not q_zero else source0
        if not q_zero and it > 1:
            src[qs] += qv * w
        new = -box.restrict(_box_transform(src, box, -float(lam), om,
                                           default_shift(grid) if shift is None else float(shift),
                                           True, floor if shift == 0 else None, report))
        del src
        if report.zeroed_fraction > 0.1:
            raise IllConditionedInversionError(
                f"{100 * report.zeroed_fraction:.1f}% of the source energy sits on zeroed modes"
            )
        inc = grid.l2(new - w)
        increments.append(inc)
        prev_w, w = w, new
        if q_zero or inc <= tol * max(chi_norm, 1e-300):
            break
        if len(increments) >= 3 and increments[-1] > increments[-2] > increments[-3]:
            raise LambdaTooSmallError(
                f"Picard increments grow ({increments[-3]:.3g} -> {increments[-1]:.3g}); "
                f"lambda={lam} is too small for this potential"
            )
        if not math.isfinite(inc) or inc > 1e6 * max(chi_norm, 1.0):
            raise LambdaTooSmallError(f"Picard iteration diverged at lambda={lam}")
    # P w + (box + q) chi + q w = q (w - w_prev) holds exactly for the spectral solve
    residual = grid.l2(qv * (w - prev_w)) if not q_zero else 0.0
    norms = field_norms(grid, w)
    return GOProbe(
        sign=-1, lam=float(lam), omega=om, mollifier=mollifier, chi=chi, remainder=w,
        residual_norm=residual, remainder_norms=norms, grid=grid,
        info={"iterations": it, "increments": increments, "zeroed_fraction": report.zeroed_fraction,
              "min_abs_symbol": report.min_abs_symbol},
    )


def boundary_cutoff(nu_dot_omega: np.ndarray, epsilon: float) -> np.ndarray:
    """``psi``: 1 where ``nu.omega <= -eps/2``, 0 where ``nu.omega >= -eps/3``."""
    a, b = -epsilon / 2, -epsilon / 3
    return smoothstep((b - np.asarray(nu_dot_omega, dtype=float)) / (b - a))


def node_cutoff(grid: SpaceTimeGrid, omega, epsilon: float) -> np.ndarray:
    """``psi`` on boundary nodes (maximum over the faces a node belongs to)."""
    psi_pts = boundary_cutoff(grid.point_normal @ np.asarray(omega), epsilon)
    psi = np.zeros(len(grid.boundary_nodes))
    np.maximum.at(psi, grid.point_node, psi_pts)
    return psi


def conjugated_residual_fd(grid: SpaceTimeGrid, a: np.ndarray, s: float, omega, q: np.ndarray) -> np.ndarray:
    """Finite-difference ``(P_s + q) a`` on interior nodes and interior time levels."""
    dt = grid.dt
    out = np.zeros_like(a)
    att = (a[2:] - 2 * a[1:-1] + a[:-2]) / dt**2
    at = (a[2:] - a[:-2]) / (2 * dt)
    mid = a[1:-1]
    lap = laplacian(mid, grid.dx, grid.dy)
    drv = directional_derivative(mid, omega, grid.dx, grid.dy)
    r = att - lap + 2 * s * (at - drv) + q[1:-1] * mid
    r[:, 0, :] = r[:, -1, :] = r[:, :, 0] = r[:, :, -1] = 0.0
    out[1:-1] = r
    return out


def build_go_vanishing(
    q,
    lam: float,
    omega,
    mollifier: Mollifier,
    grid: SpaceTimeGrid,
    faces: FacePartition,
    leak_tol: float = 1e-8,
) -> GOProbe:
    """Vanishing probe: forward conjugated solve for ``z``.

    ``(P_lam + q) z = -(box + q) chi``, ``z(0) = -chi(0)``, ``d_t z(0) = 0``,
    ``z = -psi chi`` on the lateral boundary, so the amplitude ``chi + z``
    vanishes on ``{nu.omega <= -eps/2}`` and at ``t = 0``.
    """
    om = _unit(omega)
    qv = _potential_array(q, grid)
    X, Y = grid.mesh()
    bi, bj = grid.boundary_nodes[:, 0], grid.boundary_nodes[:, 1]
    bx, by = X[bi, bj], Y[bi, bj]
    psi = node_cutoff(grid, om, faces.epsilon)
    dt = grid.dt
    mol = mollifier

    def q_at(t: float) -> np.ndarray:
        x = t / dt
        n = min(int(math.floor(x + 1e-9)), grid.nt - 1)
        a = min(max(x - n, 0.0), 1.0)
        return (1 - a) * qv[n] + a * qv[n + 1]

    xs, ys = grid.x, grid.y

    def source(t: float) -> np.ndarray:
        return -(mol.on_axes(t, xs, ys, "box") + q_at(t) * mol.on_axes(t, xs, ys))

    def gdata(t: float) -> np.ndarray:
        return -psi * mol.value(t, bx, by)

    chi = mol.on_grid(grid)
    sol = solve_ibvp(grid, qv, g=gdata, v0=-chi[0], v1=None, f=source, drift=(float(lam), om))
    z = sol.u
    amp = chi + z
    in_f = input_support_nodes(grid, faces)
    scale = max(float(np.max(np.abs(chi))), 1e-300)
    if (~in_f).any():
        leak = float(np.max(np.abs(amp[:, bi[~in_f], bj[~in_f]])))
        if leak > leak_tol * scale:
            raise SupportLeakError(f"probe trace reaches {leak:.3g} outside the input face")
    box_chi = mol.on_grid(grid, "box")
    res = conjugated_residual_fd(grid, z, float(lam), om, qv) + box_chi + qv * chi
    res[0] = res[-1] = 0.0
    res[:, 0, :] = res[:, -1, :] = res[:, :, 0] = res[:, :, -1] = 0.0
    norms = field_norms(grid, z)
    return GOProbe(
        sign=+1, lam=float(lam), omega=om, mollifier=mol, chi=chi, remainder=z,
        residual_norm=grid.l2(res), remainder_norms=norms, grid=grid,
        info={"substeps": sol.substeps, "psi": psi, "field": sol},
    )


def standard_anchor(grid: SpaceTimeGrid, omega, offset: float = 0.0, lead: float = 1.0) -> tuple[float, float]:
    """Ray anchor ``y`` such that the tube enters the domain at ``t = lead``.

    The tube centre ``y - t omega`` crosses the supporting line of the domain
    in direction ``omega`` at ``t = lead``; ``offset`` moves it sideways.
    """
    om = np.asarray(_unit(omega))
    perp = np.array([-om[1], om[0]])
    _, nu = grid.domain.boundary_samples()
    pts, _ = grid.domain.boundary_samples()
    reach = float(np.max(pts @ om))
    y = (reach + lead) * om + offset * perp
    return (float(y[0]), float(y[1]))


def _fit_slope(lams, vals) -> float:
    lams = np.asarray(lams, dtype=float)
    vals = np.asarray(vals, dtype=float)
    if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
        return float("nan")
    return float(np.polyfit(np.log(lams), np.log(vals), 1)[0])


def remainder_decay_report(
    q,
    omega,
    delta: float,
    lambdas,
    grid: SpaceTimeGrid,
    faces: FacePartition,
    y=None,
    tol: float = 1e-8,
) -> dict:
    """Remainder norms of both probe families across a lambda sweep, with log-log slopes."""
    lambdas = [float(v) for v in lambdas]
    if len(lambdas) < 3:
        raise WaveprobeError("need at least three lambda values", "list-too-short")
    if any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise WaveprobeError("lambdas must be ascending", "not-ascending")
    if y is None:
        y = standard_anchor(grid, omega)
    mol = Mollifier.make(delta, y, omega)
    rows = []
    for lam in lambdas:
        p1 = build_go_decaying(q, lam, omega, mol, grid, tol=tol)
        p2 = build_go_vanishing(q, lam, omega, mol, grid, faces)
        rows.append({
            "lambda": lam,
            "w_L2": p1.remainder_norms["L2"],
            "w_H1": p1.remainder_norms["H1"],
            "w_residual": p1.residual_norm,
            "w_iterations": p1.info["iterations"],
            "z_L2": p2.remainder_norms["L2"],
            "z_H1": p2.remainder_norms["H1"],
            "z_residual": p2.residual_norm,
        })
        del p1, p2
    slopes = {
        key: _fit_slope(lambdas, [r[key] for r in rows]) for key in ("w_L2", "w_H1", "z_L2", "z_H1")
    }
    return {"rows": rows, "slopes": slopes, "delta": delta, "y": list(y), "omega": list(_unit(omega))}
