from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from waveprobe.errors import SamplingError, ShapeMismatchError
from waveprobe.geometry import build_grid
from waveprobe.potential import (
    check_boundary_agreement,
    hminus1_norm,
    lightray_oracle,
    sample_potential,
    sobolev_norms,
)

# sqrt( (int_{-1}^{1} e^{-16 x^2} dx)^2 * int_0^4 e^{-4 (t-2)^2} dt ), scipy.quad
GAUSS_L2 = 0.41714534859291946


@pytest.fixture(scope="module")
def ones(probe_grid):
    return sample_potential({"kind": "constant", "value": 1.0}, probe_grid)


def test_zero_norms(q_zero):
    n = sobolev_norms(q_zero)
    assert all(v == 0.0 for v in n.values())


def test_gaussian_l2_against_product_quadrature(square):
    g = build_grid(square, 128, 4.0)
    q = sample_potential({"kind": "gaussian_bump", "sx": 0.25, "st": 0.5}, g)
    a = quad(lambda x: math.exp(-16 * x * x), -1, 1, epsabs=1e-14)[0]
    b = quad(lambda t: math.exp(-4 * (t - 2) ** 2), 0, 4, epsabs=1e-14)[0]
    assert math.sqrt(a * a * b) == pytest.approx(GAUSS_L2, rel=1e-12)
    assert g.l2(q.values) == pytest.approx(GAUSS_L2, rel=1e-3)


def test_nan_sample_rejected(small_grid):
    def f(t, x, y):
        return np.where((x == x.flat[0]) & (t == 0), np.nan, 1.0 + 0 * x * t)

    with pytest.raises(SamplingError) as exc:
        sample_potential(f, small_grid)
    assert exc.value.code == "non-finite"


def test_shape_mismatch(small_grid):
    with pytest.raises(ShapeMismatchError):
        sample_potential(np.zeros((3, 3, 3)), small_grid)


def test_constant_l2(ones):
    assert ones.norms["L2"] == pytest.approx(4.0, rel=1e-12)
    assert ones.norms["Linf"] == 1.0


def test_parseval_and_ordering(q_gauss):
    n = q_gauss.norms
    assert n["L2_parseval"] == pytest.approx(n["L2"], rel=1e-10)
    assert n["Hminus1"] <= n["L2"] <= n["H1"]
    assert q_gauss.alpha == 0.5


def test_hminus1_of_constant_below_l2(ones):
    hm1, par = hminus1_norm(ones)
    assert par == pytest.approx(4.0, rel=1e-10)
    assert 0 < hm1 < par


@st.composite
def smooth_fields(draw):
    c = draw(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
    w = draw(st.floats(0.2, 0.8))
    return c, w


@given(smooth_fields())
@settings(max_examples=15, deadline=None)
def test_norm_ordering_property(small_grid, spec):
    c, w = spec
    X, Y = small_grid.mesh()
    t = small_grid.t[:, None, None]
    vals = (c[0] + c[1] * np.cos(t) + c[2] * X + c[3] * Y * t) * np.exp(-(X**2 + Y**2) / w)
    q = sample_potential(vals, small_grid)
    if not np.any(vals):
        return
    n = sobolev_norms(q)
    assert n["Hminus1"] <= n["L2"] * (1 + 1e-12) <= n["H1"] * (1 + 1e-12)


def test_lightray_zero(q_zero, rng):
    for _ in range(5):
        om = rng.standard_normal(2)
        assert lightray_oracle(q_zero, om, rng.uniform(-2, 2, 2)) == 0.0


def test_lightray_chord(ones):
    assert lightray_oracle(ones, (1.0, 0.0), (-1.0, 0.0)) == pytest.approx(2.0, abs=1e-3)


def test_lightray_miss(ones, rng):
    for _ in range(5):
        om = rng.standard_normal(2)
        om = np.abs(om)
        assert lightray_oracle(ones, om, (5.0, 5.0)) == 0.0


def test_too_few_quadrature_steps(ones):
    with pytest.raises(SamplingError):
        lightray_oracle(ones, (1.0, 0.0), (0.0, 0.0), quad_steps=ones.grid.nt - 1)


@given(
    a=st.floats(-3, 3), b=st.floats(-3, 3),
    th=st.floats(0, 2 * math.pi),
    x=st.floats(-3, 3), y=st.floats(-3, 3),
)
@settings(max_examples=40, deadline=None)
def test_lightray_linear(q_gauss, ones, a, b, th, x, y):
    om = (math.cos(th), math.sin(th))
    lhs = lightray_oracle(q_gauss.scaled(a) + ones.scaled(b), om, (x, y))
    rhs = a * lightray_oracle(q_gauss, om, (x, y)) + b * lightray_oracle(ones, om, (x, y))
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)))


@given(th=st.floats(0, 2 * math.pi), r=st.floats(0, 20), phi=st.floats(0, 2 * math.pi))
@settings(max_examples=40, deadline=None)
def test_lightray_support(ones, th, r, phi):
    g = ones.grid
    val = lightray_oracle(ones, (math.cos(th), math.sin(th)), (r * math.cos(phi), r * math.sin(phi)))
    if r > g.T + g.domain.diameter:
        assert val == 0.0
    assert 0.0 <= val <= g.T + 1e-12


def test_boundary_agreement(q_gauss, probe_grid):
    bump = sample_potential({"kind": "static", "space": {"kind": "bump", "radius": 0.6}}, probe_grid)
    assert check_boundary_agreement(q_gauss, q_gauss)
    assert check_boundary_agreement(q_gauss, q_gauss + bump)
    assert not check_boundary_agreement(q_gauss, q_gauss.with_values(q_gauss.values + 1.0), tol=0.5)


def test_boundary_agreement_grid_mismatch(q_gauss, small_grid):
    other = sample_potential({"kind": "zero"}, small_grid)
    with pytest.raises(ShapeMismatchError):
        check_boundary_agreement(q_gauss, other)


@given(tol=st.floats(0, 10))
@settings(max_examples=20, deadline=None)
def test_agreement_reflexive(q_gauss, tol):
    assert check_boundary_agreement(q_gauss, q_gauss, tol)


def test_disk_potential_masked():
    from waveprobe.geometry import build_domain

    g = build_grid(build_domain({"shape": "disk"}), 32, 1.0)
    q = sample_potential({"kind": "constant"}, g)
    assert np.all(q.values[:, ~g.interior_mask] == 0)


def test_catalog_entries(small_grid):
    for spec in (
        {"kind": "zero"},
        {"kind": "constant", "value": 2.0},
        {"kind": "gaussian_bump", "cx": 0.1, "ct": 1.0},
        {"kind": "separable", "time": {"kind": "cosine"}, "space": {"kind": "bump"}},
        {"kind": "static", "space": {"kind": "gaussian"}},
    ):
        q = sample_potential(spec, small_grid)
        assert np.all(np.isfinite(q.values))
    with pytest.raises(SamplingError):
        sample_potential({"kind": "mystery"}, small_grid)
