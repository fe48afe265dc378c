from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waveprobe.errors import HypothesisViolationError, SamplingError, WaveprobeError
from waveprobe.geometry import boundary_faces, build_grid
from waveprobe.go_factory import Mollifier, build_go_decaying, build_go_vanishing
from waveprobe.potential import sample_potential
from waveprobe.recon import (
    FrequencyLattice,
    RqSample,
    assemble_cone,
    calibrate_sigma,
    double_log_model,
    estimate_Vdelta,
    exact_cone,
    fit_stability,
    fourier_slice,
    greens_identity_breakdown,
    invert_lowpass,
    phi2_hat,
    relative_l2,
    rq_estimate,
    rq_oracle,
    space_time_transform,
    stability_curve,
    synthetic_vdelta,
)

from conftest import BUMP, GAUSSIAN

OMEGA = (1.0, 0.0)
Y0 = (1.5, 0.0)


def _pair(grid, q1, q2, faces, lam=16.0, delta=0.5):
    mol = Mollifier.make(delta, Y0, OMEGA)
    return build_go_decaying(q1, lam, OMEGA, mol, grid), build_go_vanishing(q2, lam, OMEGA, mol, grid, faces)


@pytest.fixture(scope="module")
def identity_ladder(square):
    out = []
    for nx in (32, 48):
        g = build_grid(square, nx, 4.0)
        faces = boundary_faces(square, OMEGA, 0.5)
        q1 = sample_potential({"kind": "zero"}, g)
        q2 = sample_potential(GAUSSIAN, g)
        p1, p2 = _pair(g, q1, q2, faces)
        bd = greens_identity_breakdown(q1, q2, p1, p2, faces)
        with pytest.warns(RuntimeWarning):
            meas = estimate_Vdelta(q1, q2, Y0, OMEGA, 16.0, 0.5, "measured", faces, (p1, p2)).value
        out.append((bd, meas))
    return out


def test_identity_vanishes_for_equal_potentials(probe_grid, q_gauss, faces):
    p1, p2 = _pair(probe_grid, q_gauss, q_gauss, faces)
    bd = greens_identity_breakdown(q_gauss, q_gauss, p1, p2, faces)
    assert bd.lhs == bd.term_G == bd.residual == 0.0
    assert estimate_Vdelta(q_gauss, q_gauss, Y0, OMEGA, 16.0, 0.5, "oracle", faces).value == 0.0


def test_identity_residual_refines(identity_ladder):
    (c, _), (f, _) = identity_ladder
    assert f.relative_residual < c.relative_residual / 3
    assert f.relative_residual < 0.05
    assert abs(f.term_velT) + abs(f.term_valT) < 1e-6 * abs(f.lhs)


def test_measured_route_matches_identity_terms(identity_ladder):
    bd, meas = identity_ladder[-1]
    assert meas == pytest.approx(bd.measured, rel=0.02)


def test_estimate_mode_checks(probe_grid, q_gauss, q_zero, faces):
    with pytest.raises(WaveprobeError):
        estimate_Vdelta(q_zero, q_gauss, Y0, OMEGA, 16.0, 0.5, "bogus", faces)
    with pytest.raises(WaveprobeError):
        estimate_Vdelta(q_zero, q_gauss, Y0, OMEGA, 16.0, 0.5, "oracle", None)


def test_rq_oracle_constant(probe_grid):
    one = sample_potential({"kind": "constant", "value": 1.0}, probe_grid)
    axes = (np.array([-1.5, -1.25]), np.array([0.0, 0.5]))
    rq = rq_oracle(one, OMEGA, axes)
    # rays from x = -1.5 cross the square during t in [0.5, 2.5]
    assert rq.values[0] == pytest.approx([2.0, 2.0], rel=1e-3)
    assert rq.values[1] == pytest.approx([2.0, 2.0], rel=1e-3)


def test_synthetic_vdelta_preserves_constants():
    ax = np.linspace(-2, 2, 161)
    rq = RqSample(OMEGA, ax, ax, np.ones((161, 161)))
    v = synthetic_vdelta(rq, 0.3)
    assert np.allclose(v.values[40:121, 40:121], 1.0, atol=1e-3)


def test_phi2_hat_at_zero():
    assert phi2_hat(0.5, np.zeros((1, 2)))[0] == pytest.approx(1.0, rel=1e-10)


@given(c=st.floats(-5, 5), a=st.floats(0.25, 1.0), delta=st.floats(0.1, 0.9))
@settings(max_examples=20, deadline=None)
def test_richardson_removes_leading_term(c, a, delta):
    ax = np.linspace(-1, 1, 5)
    base = np.outer(np.cos(ax), np.sin(ax) + 2)
    v = RqSample(OMEGA, ax, ax, base + c * delta**a)
    vh = v.with_values(base + c * (delta / 2) ** a)
    est = rq_estimate(v, delta, "richardson", vh, order=a)
    assert np.allclose(est.values, base, atol=1e-9 * (1 + abs(c)))


def test_rq_estimate_modes():
    ax = np.linspace(-1, 1, 5)
    v = RqSample(OMEGA, ax, ax, np.ones((5, 5)))
    assert rq_estimate(v, 0.5).blur is None
    assert rq_estimate(v, 0.5, "deconvolve").blur == 0.5
    with pytest.raises(SamplingError):
        rq_estimate(v, 0.5, "richardson")
    with pytest.raises(SamplingError):
        rq_estimate(v, 0.5, "nope")


def test_slice_conjugate_symmetry(rng):
    ax = np.linspace(-2, 2, 41)
    rq = RqSample((0.6, 0.8), ax, ax, rng.standard_normal((41, 41)))
    xi = rng.uniform(-4, 4, (6, 2))
    a = fourier_slice(rq, xi)
    b = fourier_slice(rq, -xi)
    assert np.allclose(a.values, np.conj(b.values), atol=1e-12)
    assert np.allclose(a.tau, -(xi @ np.array([0.6, 0.8])))


def test_sigma_calibration(probe_grid, q_gauss):
    out = calibrate_sigma(q_gauss, (0.6, 0.8))
    assert out[-1] < 1e-2 < 1.0 < out[1]


def test_lattice_spacing(probe_grid):
    lat = FrequencyLattice.for_grid(probe_grid, 4.0)
    assert lat.tau[1] - lat.tau[0] == pytest.approx(2 * np.pi / (2 * probe_grid.T))
    assert lat.xi1[1] - lat.xi1[0] == pytest.approx(2 * np.pi / 4.0)
    xi, idx = lat.xi_points(2.0)
    assert np.all(np.hypot(xi[:, 0], xi[:, 1]) < 2.0)
    assert np.allclose(lat.xi1[idx[:, 0]], xi[:, 0])


def _slices(q, lat, R, thetas):
    xi, _ = lat.xi_points(R)
    out = []
    for th in thetas:
        om = (math.cos(th), math.sin(th))
        rq = rq_oracle(q, om, (np.linspace(-6, 6, 97), np.linspace(-6, 6, 97)))
        out.append(fourier_slice(rq, xi))
    return out


def test_single_direction_cone(probe_grid, q_gauss):
    lat = FrequencyLattice.for_grid(probe_grid, 4.0)
    sl = _slices(q_gauss, lat, 4.0, [0.0])
    cone = assemble_cone(sl, 4.0, lat)
    T, A, _ = np.meshgrid(lat.tau, lat.xi1, lat.xi2, indexing="ij")
    on = cone.mask
    assert on.any()
    # covered nodes sit on tau = -xi1 (or its mirror)
    assert np.allclose(np.abs(T[on]), np.abs(A[on]), atol=1e-9)
    again = assemble_cone(sl + sl, 4.0, lat)
    assert np.array_equal(again.mask, cone.mask)
    assert np.allclose(again.values, cone.values)
    with pytest.raises(SamplingError):
        assemble_cone([], 4.0, lat)


def test_full_circle_exact_cone_is_spacelike(probe_grid):
    lat = FrequencyLattice.for_grid(probe_grid, 4.0)
    th = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    cone = exact_cone(lambda t, x: np.ones(len(t)), lat, 4.0, np.stack([np.cos(th), np.sin(th)], 1))
    T, A, B = np.meshgrid(lat.tau, lat.xi1, lat.xi2, indexing="ij")
    inside = lat.radius() < 4.0
    spacelike = np.abs(T) < 0.999 * np.hypot(A, B)
    timelike = np.abs(T) > 1.001 * np.hypot(A, B)
    assert np.all(cone.mask[inside & spacelike])
    assert not np.any(cone.mask[timelike])


def test_invert_zero_cone(probe_grid):
    lat = FrequencyLattice.for_grid(probe_grid, 4.0)
    cone = exact_cone(lambda t, x: np.zeros(len(t)), lat, 4.0, np.array([[1.0, 0.0], [0.0, 1.0]]))
    est = invert_lowpass(cone, 4.0, grid=probe_grid)
    assert not np.any(est.values)


def test_invert_single_mode(probe_grid):
    lat = FrequencyLattice.for_grid(probe_grid, 4.0)
    d = lat.xi1[1] - lat.xi1[0]
    th = np.linspace(0, 2 * np.pi, 360, endpoint=False)

    def mode(t, xi):
        hit = np.isclose(np.abs(xi[:, 0]), d) & np.isclose(xi[:, 1], 0) & np.isclose(t, 0)
        return hit.astype(complex)

    cone = exact_cone(mode, lat, 4.0, np.stack([np.cos(th), np.sin(th)], 1))
    est = invert_lowpass(cone, 4.0, grid=probe_grid)
    X, _ = probe_grid.mesh()
    vol = float(np.prod(lat.lengths))
    expect = 2 * np.cos(d * X)[None] / vol * probe_grid.interior_mask
    assert np.max(np.abs(est.values - expect)) <= 1e-12
    with pytest.raises(WaveprobeError):
        invert_lowpass(cone, 5.0, grid=probe_grid)
    with pytest.raises(WaveprobeError):
        invert_lowpass(cone, 2.0, fill="magic", grid=probe_grid)
    with pytest.raises(SamplingError):
        invert_lowpass(cone, 2.0, fill="support", grid=probe_grid)


def test_space_time_transform_of_constant(probe_grid):
    one = sample_potential({"kind": "constant", "value": 1.0}, probe_grid)
    val = space_time_transform(one, probe_grid, [0.0], [[0.0, 0.0]])[0]
    assert val == pytest.approx(4.0 * probe_grid.T)


def test_relative_l2_self(q_gauss, q_zero):
    assert relative_l2(q_gauss, q_gauss) == 0.0
    assert relative_l2(q_zero, q_gauss) == pytest.approx(1.0)


def test_double_log_model():
    gs = math.exp(-math.e)
    v = double_log_model(np.array([0.0, 1e-6, gs, 1.0]), gs)
    assert v[0] == 0.0
    assert v[1] == pytest.approx(math.log(abs(math.log(1e-6))) ** -0.5)
    assert v[2] == 1.0 and v[3] == pytest.approx(1.0 / gs)


def test_fit_stability():
    gs = math.exp(-math.e)
    pairs = [(0.0, 0.0, 0.0), (0.1, 1e-4, 0.05), (1.0, 1e-2, 0.3)]
    fit = fit_stability(pairs, gs, 0.5)
    slack = [r[-1] for r in fit.rows() if r[1] > 0]
    assert min(slack) == pytest.approx(0.0, abs=1e-15) and all(s >= -1e-15 for s in slack)
    assert fit.monotone
    assert math.isnan(fit_stability([(0.0, 0.0, 0.0)], gs, 0.5).fitted_C)


def test_stability_curve_zero_scale(small_grid, faces):
    q1 = sample_potential({"kind": "zero"}, small_grid)
    p = sample_potential(BUMP, small_grid)
    fit = stability_curve(q1, p, [0.0], faces, n_random=8)
    assert fit.pairs == ((0.0, 0.0, 0.0),)
    bad = sample_potential({"kind": "constant", "value": 1.0}, small_grid)
    with pytest.raises(HypothesisViolationError):
        stability_curve(q1, bad, [0.1], faces, n_random=8)
    with pytest.raises(SamplingError):
        stability_curve(q1, p, [-0.1], faces, n_random=8)
