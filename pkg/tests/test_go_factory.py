from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waveprobe.errors import LambdaTooSmallError, ProbeMismatchError, WaveprobeError
from waveprobe.go_factory import (
    Mollifier,
    SpectralBox,
    boundary_cutoff,
    build_go_decaying,
    build_go_vanishing,
    conjugated_apply_spectral,
    conjugated_symbol,
    coupled_delta,
    node_cutoff,
    pair_amplitude_product,
    remainder_decay_report,
    standard_anchor,
    symbol_inverse_apply,
)

OMEGA = (1.0, 0.0)


def test_coupled_delta():
    assert coupled_delta(32.0, 0.5) == pytest.approx(0.5)
    assert coupled_delta(1.0) == 1.0


def test_mollifier_rejects_bad_delta():
    with pytest.raises(WaveprobeError) as exc:
        Mollifier.make(1.5, (0, 0), OMEGA)
    assert exc.value.code == "invalid-delta"


@given(delta=st.floats(0.1, 0.9), t=st.floats(0.0, 2.0), theta=st.floats(0, 2 * math.pi))
@settings(max_examples=15, deadline=None)
def test_mollifier_support_and_unit_cross_section(delta, t, theta):
    om = (math.cos(theta), math.sin(theta))
    mol = Mollifier.make(delta, (0.3, -0.2), om)
    h = delta / 120
    xs = np.arange(-3, 3, h)
    vals = mol.on_axes(t, xs, xs)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    cx, cy = 0.3 - t * mol.omega[0], -0.2 - t * mol.omega[1]
    r = np.hypot(X - cx, Y - cy)
    assert not np.any(vals[r >= delta])
    assert np.all(vals[r < 0.99 * delta] > 0)
    assert math.sqrt(np.sum(vals**2) * h * h) == pytest.approx(1.0, rel=1e-6)


def test_mollifier_transport():
    mol = Mollifier.make(0.4, (0.5, 0.1), (0.6, 0.8))
    pts = np.array([0.2, -0.1])
    a = mol.value(0.0, *pts)
    b = mol.value(0.7, pts[0] - 0.7 * 0.6, pts[1] - 0.7 * 0.8)
    assert a == pytest.approx(b, rel=1e-14)


def test_mollifier_derivatives_match_differences():
    mol = Mollifier.make(0.5, (0.1, 0.0), (0.6, 0.8))
    x, y, t, h = 0.05, 0.1, 0.2, 1e-4
    v = lambda tt, xx, yy: float(mol.value(tt, xx, yy))
    dt_fd = (v(t + h, x, y) - v(t - h, x, y)) / (2 * h)
    assert float(mol.dt_value(t, x, y)) == pytest.approx(dt_fd, rel=1e-6)
    box_fd = (
        (v(t + h, x, y) - 2 * v(t, x, y) + v(t - h, x, y))
        - (v(t, x + h, y) - 2 * v(t, x, y) + v(t, x - h, y))
        - (v(t, x, y + h) - 2 * v(t, x, y) + v(t, x, y - h))
    ) / h**2
    assert float(mol.box_value(t, x, y)) == pytest.approx(box_fd, rel=1e-4)


def test_symbol_single_mode(probe_grid):
    box = SpectralBox.for_grid(probe_grid)
    mu, k1, k2 = box.frequencies()
    T, X, Y = np.meshgrid(box.t, box.x, box.y, indexing="ij")
    a, b, c = 2, 3, 1
    f = np.cos(mu[a] * T + k1[b] * X + k2[c] * Y)
    lam = 8.0
    g = symbol_inverse_apply(f, lam, OMEGA, probe_grid, shift=0.0)
    p = conjugated_symbol(mu[a], k1[b], k2[c], -lam, OMEGA)
    expect = np.real(np.exp(1j * (mu[a] * T + k1[b] * X + k2[c] * Y)) / p)
    assert np.max(np.abs(g - expect)) <= 1e-10


def _band_limited(box, rng):
    """Random box field without Nyquist content (the complex symbol has no real Nyquist mode)."""
    F = np.fft.rfftn(rng.standard_normal(box.shape), axes=(0, 1, 2))
    for ax, n in enumerate(box.shape):
        idx = [slice(None)] * 3
        idx[ax] = n // 2 if ax < 2 else -1
        F[tuple(idx)] = 0.0
    return np.fft.irfftn(F, s=box.shape, axes=(0, 1, 2))


def test_symbol_round_trip(probe_grid, rng):
    box = SpectralBox.for_grid(probe_grid)
    c = 1.0 / probe_grid.T
    # the shifted division acts on exp(c t) f, which must carry no Nyquist content
    f = _band_limited(box, rng) * np.exp(-c * box.t)[:, None, None]
    g = symbol_inverse_apply(f, 16.0, (0.6, 0.8), probe_grid)
    back = conjugated_apply_spectral(g, -16.0, (0.6, 0.8), probe_grid, shift=c)
    assert np.max(np.abs(back - f)) <= 1e-10 * np.max(np.abs(f))


def test_symbol_inverse_bound(probe_grid, rng):
    box = SpectralBox.for_grid(probe_grid)
    f = rng.standard_normal(box.shape)
    c = 1.0 / probe_grid.T
    bound = math.exp(c * (box.t[-1] - box.t[0]))
    for lam in (4.0, 16.0, 64.0):
        g = symbol_inverse_apply(f, lam, OMEGA, probe_grid)
        assert lam * np.linalg.norm(g) / np.linalg.norm(f) <= bound / c


def test_boundary_cutoff_levels():
    eps = 0.5
    vals = boundary_cutoff(np.array([-1.0, -eps / 2, -eps / 3, 0.0, 1.0]), eps)
    assert np.allclose(vals, [1, 1, 0, 0, 0])


def test_node_cutoff_on_square(probe_grid):
    psi = node_cutoff(probe_grid, OMEGA, 0.5)
    nu = probe_grid.point_normal
    assert np.all((psi >= 0) & (psi <= 1))
    assert psi.shape == (len(probe_grid.boundary_nodes),)
    left = nu[:, 0] < -0.99 if len(nu) == len(psi) else None
    if left is not None:
        assert np.all(psi[left] == 1.0)


def test_decaying_probe_free_space(probe_grid):
    y = standard_anchor(probe_grid, OMEGA)
    mol = Mollifier.make(0.5, y, OMEGA)
    pr = build_go_decaying(None, 16.0, OMEGA, mol, probe_grid)
    assert pr.sign == -1
    assert pr.info["iterations"] == 1
    assert pr.residual_norm == 0.0
    assert pr.header()["lambda"] == 16.0


def test_decaying_probe_converges(probe_grid, q_gauss):
    y = standard_anchor(probe_grid, OMEGA)
    mol = Mollifier.make(0.5, y, OMEGA)
    pr = build_go_decaying(q_gauss, 16.0, OMEGA, mol, probe_grid, tol=1e-10)
    inc = pr.info["increments"]
    assert pr.info["iterations"] > 1
    assert inc[-1] <= 1e-10 * probe_grid.l2(pr.chi)
    assert pr.residual_norm <= 1e-8


def test_decaying_probe_small_lambda(probe_grid):
    mol = Mollifier.make(0.5, (1.5, 0.0), OMEGA)
    with pytest.raises(LambdaTooSmallError):
        build_go_decaying(None, 0.5, OMEGA, mol, probe_grid)


def test_decaying_probe_direction_mismatch(probe_grid):
    mol = Mollifier.make(0.5, (1.5, 0.0), (0.0, 1.0))
    with pytest.raises(WaveprobeError):
        build_go_decaying(None, 8.0, OMEGA, mol, probe_grid)


@pytest.fixture(scope="module")
def probe_pair(probe_grid, q_gauss, faces):
    y = standard_anchor(probe_grid, OMEGA)
    mol = Mollifier.make(0.5, y, OMEGA)
    return (
        build_go_decaying(q_gauss, 16.0, OMEGA, mol, probe_grid),
        build_go_vanishing(q_gauss, 16.0, OMEGA, mol, probe_grid, faces),
    )


def test_vanishing_probe_initial_and_boundary(probe_pair, probe_grid):
    _, pv = probe_pair
    amp = pv.amplitude
    scale = np.max(np.abs(pv.chi))
    assert np.max(np.abs(amp[0])) <= 1e-12 * scale
    psi = pv.info["psi"]
    bi, bj = probe_grid.boundary_nodes.T
    band = psi >= 1.0
    assert band.any()
    assert np.max(np.abs(amp[:, bi[band], bj[band]])) <= 1e-8 * scale


def test_pair_product(probe_pair):
    pd, pv = probe_pair
    prod = pair_amplitude_product(pd, pv)
    assert np.allclose(prod, pd.amplitude * pv.amplitude)
    with pytest.raises(ProbeMismatchError):
        pair_amplitude_product(pd, pd)


def test_decay_report_argument_checks(probe_grid, faces):
    with pytest.raises(WaveprobeError) as exc:
        remainder_decay_report(None, OMEGA, 0.5, [8, 16], probe_grid, faces)
    assert exc.value.code == "list-too-short"
    with pytest.raises(WaveprobeError) as exc:
        remainder_decay_report(None, OMEGA, 0.5, [8, 32, 16], probe_grid, faces)
    assert exc.value.code == "not-ascending"


def test_standard_anchor_enters_at_lead(probe_grid):
    y = standard_anchor(probe_grid, (0.0, 1.0), lead=1.0)
    assert y == pytest.approx((0.0, 2.0))
