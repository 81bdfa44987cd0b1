import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shelab.grid import (Field, FieldEnsemble, TorusGrid, block_average, block_average_batch,
                         field_to_csv, load_checkpoint, save_checkpoint, semigroup_apply,
                         spatial_mean)


def test_grid_basics(grid):
    assert grid.size == 16 ** 3 and grid.shape == (16, 16, 16)
    assert grid.spacing == pytest.approx(2 * math.pi / 16)
    assert grid.k2[1, 0, 0] == pytest.approx(1.0)
    assert grid.k2_half.shape == (16, 16, 9)
    assert TorusGrid.from_dict(grid.to_dict()) == grid
    with pytest.raises(ValueError):
        TorusGrid(3, 15)


def test_field_rejects_nonfinite(grid):
    v = np.zeros(grid.shape)
    v[1, 2, 3] = np.nan
    with pytest.raises(ValueError):
        Field(grid, v)
    with pytest.raises(ValueError):
        Field(grid, np.zeros(10))
    f = Field(grid, np.arange(grid.size, dtype=float))
    assert f.values.shape == grid.shape and not f.values.flags.writeable


def test_semigroup_constant_and_identity(grid, rng):
    c = Field.constant(grid, 2.5)
    assert np.allclose(semigroup_apply(c, 0.37).values, 2.5, atol=1e-14)
    f = Field(grid, rng.standard_normal(grid.shape))
    assert semigroup_apply(f, 0.0) is f
    with pytest.raises(ValueError):
        semigroup_apply(f, -1.0)


@pytest.mark.parametrize("k", [(1, 0, 0), (2, -3, 1), (0, 7, 7)])
def test_semigroup_eigenfunction(grid, k):
    f = Field.from_function(grid, lambda x, y, z: np.cos(k[0] * x + k[1] * y + k[2] * z))
    dt = 0.03
    out = semigroup_apply(f, dt)
    np.testing.assert_allclose(out.values, math.exp(-sum(a * a for a in k) * dt) * f.values,
                               atol=1e-10)


def test_semigroup_preserves_mean(grid, rng):
    f = Field(grid, rng.standard_normal(grid.shape) + 3.0)
    assert spatial_mean(semigroup_apply(f, 1.3)) == pytest.approx(spatial_mean(f), abs=1e-13)


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.integers(0, 2 ** 31))
@settings(max_examples=25, deadline=None)
def test_semigroup_composition(s, t, seed):
    grid = TorusGrid(3, 8)
    f = Field(grid, np.random.default_rng(seed).standard_normal(grid.shape))
    a = semigroup_apply(semigroup_apply(f, s), t).values
    b = semigroup_apply(f, s + t).values
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_roundtrip_and_plancherel(grid, rng):
    for _ in range(100):
        v = rng.standard_normal(grid.shape)
        back = grid.inverse(grid.forward(v))
        assert np.max(np.abs(back - v)) <= 1e-12 * np.max(np.abs(v))
    v = rng.standard_normal(grid.shape)
    assert np.sum(v * v) == pytest.approx(grid.spectral_energy(grid.fft(v)), rel=1e-10)


def test_block_average_examples(grid, rng):
    c = Field.constant(grid, -0.7)
    for hw in (0.2, 1.0, math.pi):
        assert block_average(c, hw, (3, 4, 5)) == pytest.approx(-0.7, abs=1e-15)
    cosf = Field.from_function(grid, lambda x, y, z: np.cos(x))
    assert abs(spatial_mean(cosf)) <= 1e-12
    f = Field(grid, rng.standard_normal(grid.shape))
    assert block_average(f, math.pi) == spatial_mean(f)


def test_block_average_window(grid, rng):
    v = rng.standard_normal(grid.shape)
    f = Field(grid, v)
    h = grid.spacing
    # half width 1.5 h covers offsets -1..1 around the center (periodic)
    idx = [np.arange(-1, 2) % 16] * 3
    expect = v[np.ix_(*idx)].mean()
    assert block_average(f, 1.5 * h) == pytest.approx(expect, abs=1e-15)
    with pytest.raises(ValueError):
        block_average(f, 4.0)
    with pytest.raises(ValueError):
        block_average(f, 0.0)


def test_block_average_batch_matches_single(grid, rng):
    vals = rng.standard_normal((4,) + grid.shape)
    out = block_average_batch(vals, grid, 1.0, (2, 3, 4))
    for r in range(4):
        assert out[r] == block_average(Field(grid, vals[r]), 1.0, (2, 3, 4))


def test_checkpoint_roundtrip(tmp_path, grid, rng):
    v = rng.standard_normal((3,) + grid.shape)
    save_checkpoint(tmp_path / "f.bin", grid, v, time=1.5, seed=9, extra={"theta": 0.0})
    g2, back, hdr = load_checkpoint(tmp_path / "f.bin")
    assert g2 == grid and np.array_equal(back, v)
    assert hdr["time"] == 1.5 and hdr["seed"] == 9 and hdr["count"] == 3
    raw = (tmp_path / "f.bin").read_bytes()
    first = raw.split(b"\n", 1)[0]
    assert b'"L"' in first and b'"dim"' in first
    assert np.frombuffer(raw[len(first) + 1:], dtype="<f8")[0] == v.flat[0]


def test_csv_export():
    grid = TorusGrid(2, 2, 1.0)
    f = Field(grid, [[0.5, 1.0], [2.0, -1.0]])
    text = field_to_csv(f)
    assert text.splitlines() == ["i1,i2,value", "0,0,0.5", "0,1,1.0", "1,0,2.0", "1,1,-1.0"]


def test_ensemble(grid, rng):
    fields = [Field(grid, rng.standard_normal(grid.shape)) for _ in range(3)]
    ens = FieldEnsemble.from_fields(fields, theta=0.0)
    assert len(ens) == 3 and ens[1] == fields[1] and ens.meta["theta"] == 0.0
    with pytest.raises(ValueError):
        FieldEnsemble(grid, np.zeros((2, 4, 4, 4)))
