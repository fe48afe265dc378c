from __future__ import annotations

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from waveprobe.carleman import (
    CSV_COLUMNS,
    TERM_NAMES,
    ManufacturedSolution,
    carleman_sweep,
    carleman_terms,
    check_hypotheses,
    manufactured_family,
)
from waveprobe.errors import HypothesisViolationError, WaveprobeError
from waveprobe.geometry import build_grid

MEMBER = ManufacturedSolution(2, 0.3, (0.1, -0.2), 0.5)


@pytest.fixture(scope="module")
def grid48(square):
    return build_grid(square, 48, 2.0)


def test_zero_field(small_grid):
    rep = carleman_terms(np.zeros(small_grid.shape), None, 8.0, (1, 0), small_grid)
    assert all(v == 0.0 for v in rep.terms.values())
    assert math.isnan(rep.empirical_C)


def test_terms_positive(grid48):
    rep = carleman_terms(MEMBER.field(grid48), None, 8.0, (1, 0), grid48, MEMBER.box(grid48))
    assert set(rep.terms) == set(TERM_NAMES)
    # the bump sits strictly inside, so fluxes vanish
    assert rep.terms["shadow_flux_term"] == rep.terms["illum_flux_term"] == 0.0
    assert all(rep.terms[k] > 0 for k in ("interior_term", "pde_term", "final_value_term"))
    assert 0 < rep.empirical_C < math.inf


@given(c=st.floats(1e-3, 1e3), lam=st.sampled_from([4.0, 16.0, 64.0]))
@settings(max_examples=10, deadline=None)
def test_scale_and_shift_invariance(small_grid, c, lam):
    u = MEMBER.field(small_grid)
    box = MEMBER.box(small_grid)
    a = carleman_terms(u, None, lam, (0.6, 0.8), small_grid, box)
    b = carleman_terms(c * u, None, lam, (0.6, 0.8), small_grid, c * box)
    s = carleman_terms(u, None, lam, (0.6, 0.8), small_grid, box, shift=a.shift + 0.1)
    assert b.empirical_C == pytest.approx(a.empirical_C, rel=1e-12)
    assert s.empirical_C == pytest.approx(a.empirical_C, rel=1e-10)
    ratio = s.terms["interior_term"] / a.terms["interior_term"]
    assert ratio == pytest.approx(math.exp(2 * lam * 0.1), rel=1e-10)


def test_finite_difference_box_agrees(square):
    wide = ManufacturedSolution(2, 0.3, (0.0, 0.0), 0.9)
    errs = []
    for nx in (33, 65):
        g = build_grid(square, nx, 2.0)
        u = wide.field(g)
        exact = carleman_terms(u, None, 4.0, (1, 0), g, wide.box(g)).terms["pde_term"]
        fd = carleman_terms(u, None, 4.0, (1, 0), g).terms["pde_term"]
        errs.append(abs(fd / exact - 1))
    assert errs[1] < errs[0] / 3 and errs[1] < 0.06


def test_potential_enters_pde_term(grid48):
    u = MEMBER.field(grid48)
    box = MEMBER.box(grid48)
    q = np.ones(grid48.shape)
    a = carleman_terms(u, None, 8.0, (1, 0), grid48, box - q * u)
    b = carleman_terms(u, q, 8.0, (1, 0), grid48, box - q * u)
    assert b.terms["pde_term"] == pytest.approx(
        carleman_terms(u, None, 8.0, (1, 0), grid48, box).terms["pde_term"], rel=1e-12)
    assert a.terms["pde_term"] != b.terms["pde_term"]


def test_hypotheses(small_grid):
    X, Y = small_grid.mesh()
    t = small_grid.t[:, None, None]
    bump = np.maximum(0.0, 1 - 4 * (X**2 + Y**2))[None] ** 3
    check_hypotheses(small_grid, t**2 * bump)
    for bad in (t * bump, (1 + t) * bump, t**2 * np.ones_like(bump)):
        with pytest.raises(HypothesisViolationError):
            carleman_terms(bad, None, 8.0, (1, 0), small_grid)


def test_argument_errors(small_grid):
    u = MEMBER.field(small_grid)
    with pytest.raises(WaveprobeError) as exc:
        carleman_terms(u, None, 0.0, (1, 0), small_grid)
    assert exc.value.code == "invalid-lambda"
    with pytest.raises(WaveprobeError):
        carleman_terms(u[:-1], None, 8.0, (1, 0), small_grid)
    with pytest.raises(WaveprobeError):
        ManufacturedSolution(1, 0.0, (0, 0), 0.3)
    with pytest.raises(WaveprobeError) as exc:
        carleman_sweep([], None, [8.0], (1, 0), small_grid)
    assert exc.value.code == "empty-family"
    with pytest.raises(WaveprobeError) as exc:
        carleman_sweep([MEMBER], None, [16.0, 8.0], (1, 0), small_grid)
    assert exc.value.code == "unsorted-lambdas"


def test_family_fits_domain(grid48):
    fam = manufactured_family(grid48, 6, seed=2)
    assert len(fam) == 6
    for m in fam:
        check_hypotheses(grid48, m.field(grid48))
    assert fam == manufactured_family(grid48, 6, seed=2)


def test_sweep_csv(tmp_path, small_grid):
    fam = manufactured_family(small_grid, 2, seed=0)
    sw = carleman_sweep(fam, None, [8.0, 16.0], (1, 0), small_grid)
    assert set(sw.max_C()) == {8.0, 16.0}
    path = tmp_path / "c.csv"
    sw.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 5
    mc = sw.max_C()
    assert sw.bounded(factor=max(mc.values()) / mc[8.0] + 1e-12)
