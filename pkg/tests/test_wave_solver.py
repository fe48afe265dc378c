from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waveprobe.errors import ShapeMismatchError, SupportViolationError, UnstableSchemeError
from waveprobe.geometry import boundary_faces, build_domain, build_grid
from waveprobe.potential import sample_potential
from waveprobe.wave_solver import (
    discrete_energy,
    energy_estimate_check,
    hf_norm,
    input_support_nodes,
    normal_derivative,
    solve_ibvp,
    traces,
)

UNIT = build_domain({"shape": "rectangle", "x_min": -0.5, "x_max": 0.5, "y_min": -0.5, "y_max": 0.5})


def eigenmode(grid):
    X, Y = grid.mesh()
    return np.sin(np.pi * (X + 0.5)) * np.sin(np.pi * (Y + 0.5))


def observed_order(errors):
    e = np.asarray(errors)
    return np.log2(e[:-1] / e[1:])


def manufactured(grid, q):
    """u = sin(2t + x) cos(y) + t^2 x and its data for (box + q) u = f."""
    X, Y = grid.mesh()
    t = grid.t[:, None, None]
    S = np.sin(2 * t + X) * np.cos(Y)
    u = S + t * t * X
    f = -2.0 * S + 2.0 * X + q * u
    bi, bj = grid.boundary_nodes[:, 0], grid.boundary_nodes[:, 1]
    v1 = 2 * np.cos(X) * np.cos(Y)
    return u, f, u[:, bi, bj], u[0], v1


def manufactured_error(nx):
    grid = build_grid(build_domain({"shape": "rectangle"}), nx, 1.0)
    q = sample_potential({"kind": "static", "space": {"kind": "gaussian", "width": 0.5}}, grid)
    u, f, g, v0, v1 = manufactured(grid, q.values)
    sol = solve_ibvp(grid, q, g=g, v0=v0, v1=v1, f=f)
    return grid, u, sol


def test_zero_data_gives_zero(small_grid):
    sol = solve_ibvp(small_grid)
    assert not np.any(sol.u)
    ts = sol.trace_set
    assert not np.any(ts.normal_deriv) and not np.any(ts.final_value)


def test_zero_data_with_drift_and_potential(small_grid):
    q = sample_potential({"kind": "gaussian_bump"}, small_grid)
    sol = solve_ibvp(small_grid, q, drift=(8.0, (1.0, 0.0)))
    assert not np.any(sol.u)


def test_standing_wave_second_order():
    errs = []
    for nx in (17, 33, 65):
        g = build_grid(UNIT, nx, 1.0)
        v0 = eigenmode(g)
        sol = solve_ibvp(g, v0=v0)
        exact = math.cos(math.sqrt(2) * math.pi * g.T) * v0
        errs.append(np.max(np.abs(sol.u[-1] - exact)))
    assert np.all(observed_order(errs) > 1.8)


def test_manufactured_second_order():
    errs = []
    for nx in (17, 33, 65):
        grid, u, sol = manufactured_error(nx)
        errs.append(grid.l2(sol.u - u))
    assert np.all(observed_order(errs) >= 1.8)


def test_trace_of_linear_field(small_grid):
    X, _ = small_grid.mesh()
    u = np.broadcast_to(X, small_grid.shape).copy()
    ts = traces(u, small_grid)
    expected = small_grid.point_normal[:, 0]
    assert np.allclose(ts.normal_deriv, expected[None, :], atol=1e-12)
    assert np.allclose(ts.final_velocity, 0.0) and np.allclose(ts.initial_velocity, 0.0)


def test_zero_traces(small_grid):
    ts = traces(np.zeros(small_grid.shape), small_grid)
    assert not np.any(ts.normal_deriv) and not np.any(ts.final_value)


def test_manufactured_traces_converge():
    flux_err, fin_err = [], []
    for nx in (17, 33, 65):
        grid, u, sol = manufactured_error(nx)
        X, Y = grid.mesh()
        t = grid.t[:, None]
        pts = grid.boundary_points
        px, py = pts[:, 0][None], pts[:, 1][None]
        ux = np.cos(2 * t + px) * np.cos(py) + t * t
        uy = -np.sin(2 * t + px) * np.sin(py)
        dnu = ux * grid.point_normal[:, 0][None] + uy * grid.point_normal[:, 1][None]
        flux_err.append(math.sqrt(grid.integrate_boundary((sol.trace_set.normal_deriv - dnu) ** 2)))
        fin_err.append(grid.l2_space(sol.trace_set.final_value - u[-1]))
    assert np.all(observed_order(flux_err) >= 1.8)
    assert np.all(observed_order(fin_err) >= 1.8)


def test_energy_conservation():
    g = build_grid(build_domain({"shape": "rectangle"}), 64, 4.0)
    X, Y = g.mesh()
    v0 = np.exp(-20 * (X**2 + Y**2)) * (1 - X**2) * (1 - Y**2)
    sol = solve_ibvp(g, v0=v0, v1=np.sin(np.pi * X) * np.sin(np.pi * Y))
    e = discrete_energy(sol)
    assert np.max(np.abs(e - e[0])) / e[0] <= 1e-3


@given(
    a=st.floats(-2, 2), b=st.floats(-2, 2),
    seed=st.integers(0, 2**16),
)
@settings(max_examples=8, deadline=None)
def test_linearity(small_grid, a, b, seed):
    rng = np.random.default_rng(seed)
    X, Y = small_grid.mesh()
    nb = len(small_grid.boundary_nodes)

    def data():
        g = np.sin(small_grid.t)[:, None] ** 2 * rng.standard_normal(nb)[None]
        v0 = rng.standard_normal() * np.cos(np.pi * X / 2) * np.cos(np.pi * Y / 2)
        v1 = rng.standard_normal() * X * Y
        f = rng.standard_normal() * np.exp(-(X**2 + Y**2))[None] * np.ones((small_grid.nt + 1, 1, 1))
        return g, v0, v1, f

    d1, d2 = data(), data()
    q = sample_potential({"kind": "gaussian_bump", "ct": 1.0}, small_grid)
    u1 = solve_ibvp(small_grid, q, *d1).u
    u2 = solve_ibvp(small_grid, q, *d2).u
    comb = [a * x + b * y for x, y in zip(d1, d2)]
    u = solve_ibvp(small_grid, q, *comb).u
    ref = a * u1 + b * u2
    assert np.max(np.abs(u - ref)) <= 1e-10 * max(np.max(np.abs(ref)), 1e-300) + 1e-300


def test_drift_damping(small_grid):
    X, Y = small_grid.mesh()
    v1 = np.cos(np.pi * X / 2) * np.cos(np.pi * Y / 2)
    sol = solve_ibvp(small_grid, v1=v1, drift=(4.0, (1.0, 0.0)))
    norms = np.sqrt(np.tensordot(sol.u**2, small_grid.space_weights, axes=([1, 2], [0, 1])))
    assert int(np.argmax(norms)) < small_grid.nt // 4
    assert norms[-1] < 0.1 * norms.max()


def test_stiffness_guard_refines_then_fails(small_grid):
    s_ok = 1.5 * 0.5 / small_grid.dt
    sol = solve_ibvp(small_grid, v1=np.ones(small_grid.space_shape), drift=(s_ok, (1.0, 0.0)), keep_field=False)
    assert sol.substeps == 2
    with pytest.raises(UnstableSchemeError):
        solve_ibvp(small_grid, v1=np.ones(small_grid.space_shape), drift=(100.0 / small_grid.dt, (1.0, 0.0)))


def test_blowup_detected(small_grid):
    q = -1e5 * np.ones(small_grid.space_shape)
    with pytest.raises(UnstableSchemeError):
        solve_ibvp(small_grid, q, v0=np.ones(small_grid.space_shape))


def test_shape_mismatch(small_grid):
    with pytest.raises(ShapeMismatchError):
        solve_ibvp(small_grid, v0=np.zeros((3, 3)))
    with pytest.raises(ShapeMismatchError):
        solve_ibvp(small_grid, f=np.zeros((2, 3, 4)))


def test_phase_fitted_normal_derivative(small_grid):
    """The amplitude stencil is exact on exp(-s omega.x) (a + b.x)."""
    s, om = 12.0, np.array([0.6, 0.8])
    X, Y = small_grid.mesh()
    amp = np.exp(-s * (om[0] * X + om[1] * Y)) * (1 + 0.3 * X - 0.2 * Y)
    nd = normal_derivative(small_grid, amp[None], drift=(s, om))[0]
    pts, nu = small_grid.boundary_points, small_grid.point_normal
    e = np.exp(-s * (pts @ om))
    grad = np.stack([
        e * (0.3 - s * om[0] * (1 + 0.3 * pts[:, 0] - 0.2 * pts[:, 1])),
        e * (-0.2 - s * om[1] * (1 + 0.3 * pts[:, 0] - 0.2 * pts[:, 1])),
    ], 1)
    assert np.allclose(nd, np.sum(grad * nu, 1), rtol=1e-10, atol=1e-12)


def test_energy_estimate_identical_potentials(probe_grid, q_gauss):
    u2 = solve_ibvp(probe_grid, q_gauss, v1=np.ones(probe_grid.space_shape) * 0)
    rep = energy_estimate_check(q_gauss, q_gauss, u2)
    assert rep["lhs"] == 0.0


def _energy_ratio(nx, s=1.0):
    g = build_grid(build_domain({"shape": "rectangle"}), nx, 2.0)
    q1 = sample_potential({"kind": "zero"}, g)
    p = sample_potential({"kind": "static", "space": {"kind": "bump", "radius": 0.6}}, g)
    X, Y = g.mesh()
    u2 = solve_ibvp(g, q1 + p.scaled(s), v1=np.cos(np.pi * X / 2) * np.cos(np.pi * Y / 2))
    return energy_estimate_check(q1, q1 + p.scaled(s), u2)


def test_energy_estimate_refinement_and_linearity():
    r_c = _energy_ratio(25)["ratio"]
    r_f = _energy_ratio(49)["ratio"]
    assert abs(r_f / r_c - 1) <= 0.2
    a = _energy_ratio(25, 1e-3)["lhs"]
    b = _energy_ratio(25, 2e-3)["lhs"]
    assert b / a == pytest.approx(2.0, rel=1e-2)


def test_hf_norm_zero(small_grid):
    assert hf_norm(small_grid) == 0.0


def test_hf_norm_eigenmode():
    g = build_grid(UNIT, 49, 1.0)
    v1 = eigenmode(g)
    k = math.sqrt(2) * math.pi
    # int_0^T (sin(k t)/k)^2 dt in closed form
    time_factor = math.sqrt(g.T / (2 * k * k) - math.sin(2 * k * g.T) / (4 * k**3))
    expected = g.l2_space(v1) * time_factor
    assert hf_norm(g, v1=v1) == pytest.approx(expected, rel=5e-3)


def test_hf_norm_support_violation(square, small_grid):
    faces = boundary_faces(square, (1.0, 0.0), 0.25)
    bad = ~input_support_nodes(small_grid, faces)
    g = np.zeros((small_grid.nt + 1, len(small_grid.boundary_nodes)))
    g[:, bad] = 1.0
    with pytest.raises(SupportViolationError):
        hf_norm(small_grid, g=g, faces=faces)


def test_disk_solver_runs():
    g = build_grid(build_domain({"shape": "disk"}), 33, 1.0)
    X, Y = g.mesh()
    v0 = np.maximum(0.0, 1 - 4 * (X**2 + Y**2)) ** 3
    sol = solve_ibvp(g, v0=v0)
    assert np.all(np.isfinite(sol.u))
    assert not np.any(sol.u[:, ~g.interior_mask])
