import math

import numpy as np
import pytest

from spdecontrol.noise import (
    LevySpec,
    TimeGrid,
    brownian_increment_matrix,
    brownian_value,
    compensated_jump_sum,
    ito_integral,
    jump_count_matrices,
    sample_bundle,
)


def test_time_grid_nodes_have_no_accumulation_drift():
    grid = TimeGrid(0.0, 1.0, 3)
    assert grid.time(3) == pytest.approx(1.0, abs=0)
    ts = grid.times()
    assert len(ts) == 4
    assert ts[-1] == pytest.approx(1.0, abs=1e-15)


def test_time_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 5)


def test_levy_spec_rejects_negative_rates():
    with pytest.raises(ValueError):
        LevySpec(atoms=((1.0, -0.5),))
    levy = LevySpec(atoms=((1.0, 0.5), (-2.0, 0.25)))
    assert levy.total_rate == pytest.approx(0.75)


def test_bundle_reproducible_and_channel_independent():
    grid = TimeGrid(0.0, 1.0, 64)
    levy = LevySpec(atoms=((1.0, 3.0),))
    b1 = sample_bundle(grid, levy, seed=7, path_index=2)
    b2 = sample_bundle(grid, levy, seed=7, path_index=2)
    assert np.array_equal(b1.brownian_increments, b2.brownian_increments)
    assert b1.jump_events == b2.jump_events
    other_channel = sample_bundle(grid, levy, seed=7, path_index=2, channel=1)
    assert not np.array_equal(b1.brownian_increments, other_channel.brownian_increments)


def test_increment_matrix_rows_match_bundles_in_any_order():
    grid = TimeGrid(0.0, 1.0, 32)
    mat = brownian_increment_matrix(grid, seed=5, path_indices=[9, 0, 4])
    for row, p in zip(mat, [9, 0, 4]):
        b = sample_bundle(grid, LevySpec(), seed=5, path_index=p)
        assert np.array_equal(row, b.brownian_increments)


def test_jump_counts_match_bundle_events():
    grid = TimeGrid(0.0, 2.0, 40)
    levy = LevySpec(atoms=((0.5, 2.0), (-1.0, 1.0)))
    counts = jump_count_matrices(grid, levy, seed=3, path_indices=[1])
    b = sample_bundle(grid, levy, seed=3, path_index=1)
    for k in range(grid.n_steps):
        assert b.jump_events[k].count(0.5) == counts[0][0, k]
        assert b.jump_events[k].count(-1.0) == counts[1][0, k]


def test_brownian_increment_moments():
    grid = TimeGrid(0.0, 1.0, 16)
    mat = brownian_increment_matrix(grid, seed=11, path_indices=range(4000))
    bt = mat.sum(axis=1)
    assert abs(np.mean(bt)) < 3.0 / math.sqrt(4000)
    assert np.var(bt) == pytest.approx(1.0, rel=0.1)


def test_brownian_value_bounds():
    grid = TimeGrid(0.0, 1.0, 8)
    b = sample_bundle(grid, LevySpec(), seed=0, path_index=0)
    assert brownian_value(b, 0) == 0.0
    assert brownian_value(b, 8) == pytest.approx(float(np.sum(b.brownian_increments)))
    with pytest.raises(IndexError):
        brownian_value(b, 9)


def test_ito_integral_shape_check():
    grid = TimeGrid(0.0, 1.0, 8)
    b = sample_bundle(grid, LevySpec(), seed=0, path_index=0)
    assert ito_integral(np.ones(8), b) == pytest.approx(brownian_value(b, 8))
    with pytest.raises(ValueError):
        ito_integral(np.ones(7), b)


def test_compensated_jump_sum_is_centered():
    grid = TimeGrid(0.0, 1.0, 50)
    levy = LevySpec(atoms=((2.0, 3.0),))
    vals = [
        compensated_jump_sum(sample_bundle(grid, levy, seed=13, path_index=p))
        for p in range(3000)
    ]
    m = np.mean(vals)
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(m) <= 3 * se


def test_compensated_jump_sum_no_atoms_is_zero():
    grid = TimeGrid(0.0, 1.0, 10)
    b = sample_bundle(grid, LevySpec(), seed=1, path_index=0)
    assert compensated_jump_sum(b) == 0.0
