import json
import math

import numpy as np
import pytest

from escna.integrate import Trajectory
from escna.sweep import (
    Axis,
    StabilityGrid,
    SweepSpec,
    boundary_agreement,
    classify_terminal,
    classify_trajectory,
    large_product_mask,
    run_sweep,
)
from escna.sweep import _single_cell

DECAY = json.dumps(
    {"name": "decay", "dim": 1, "drift": ["-x1"], "odd_channels": [{"power_index": 0, "exprs": ["0"]}]}
)


def traj_ending_at(value):
    return Trajectory(np.array([0.0, 1.0]), np.array([[1.0], [value]]))


def test_classify_examples():
    const = Trajectory(np.linspace(0, 1, 5), np.zeros((5, 1)))
    assert classify_trajectory(const) == ("convergent", 0.0)
    assert classify_trajectory(traj_ending_at(7.0), 0.25, 3.0) == ("divergent", 3.0)
    assert classify_trajectory(traj_ending_at(-0.5), 0.25, 3.0) == ("indeterminate", 0.5)
    blown = traj_ending_at(2.0)
    blown.blowup = True
    assert classify_trajectory(blown, 0.25, 3.0) == ("blowup", 3.0)
    assert classify_terminal(math.nan, False, 0.25, 3.0) == ("blowup", 3.0)
    with pytest.raises(ValueError):
        classify_trajectory(Trajectory(np.array([]), np.zeros((0, 1))))


def test_axis_validation():
    assert np.allclose(Axis("omega", 1, 100, 3, "log").values, [1, 10, 100])
    for bad in [("k", 0, 1), ("alpha", 1, 0), ("alpha", 0, 1, 1), ("alpha", 0, 1, 3, "log")]:
        with pytest.raises(ValueError):
            Axis(*bad)
    with pytest.raises(ValueError):
        SweepSpec("uu", (Axis("alpha", 1, 2, 2), Axis("alpha", 1, 2, 2)), m=2, k=100)
    with pytest.raises(ValueError):
        SweepSpec("uu", (Axis("alpha", 1, 2, 2),), m=2, k=100, theta_conv=5.0)


def test_minimal_grid_on_stable_plant():
    spec = SweepSpec(
        "decay", (Axis("omega", 10, 20, 2), Axis("alpha", 0.5, 1.0, 2)), m=0, k=1, config=DECAY
    )
    grid = run_sweep(spec)
    assert grid.labels.shape == (2, 2)
    assert np.all(grid.labels == "convergent")
    assert np.allclose(grid.terminal, math.exp(-5.0), rtol=1e-9)
    assert grid.boundary is None


def test_unknown_system_fails_early():
    with pytest.raises(Exception):
        run_sweep(SweepSpec("nosuch", (Axis("alpha", 1, 2, 2),), m=0, k=1))


def test_csv_layout():
    spec = SweepSpec("decay", (Axis("alpha", 0.5, 1.0, 2),), m=0, k=1, config=DECAY)
    lines = run_sweep(spec).to_csv().splitlines()
    assert lines[0] == "alpha,terminal_abs_x,label"
    assert len(lines) == 3 and lines[1].endswith(",convergent")


def small_uu(**kw):
    args = dict(axes=(Axis("omega", 20, 60, 3), Axis("alpha", 0.5, 3.0, 4)), m=2, k=100, eps=0.05, T=2.0)
    args.update(kw)
    return SweepSpec("uu", **args)


def test_grid_determinism_across_runs_and_workers():
    spec = small_uu()
    a = run_sweep(spec)
    b = run_sweep(spec)
    c = run_sweep(spec, jobs=2)
    assert a.to_csv() == b.to_csv() == c.to_csv()
    assert a.boundary_csv() == c.boundary_csv()


def test_vectorized_column_matches_single_cell_path():
    spec = small_uu()
    grid = run_sweep(spec)
    for i, w in enumerate(spec.axes[0].values):
        for j, a in enumerate(spec.axes[1].values):
            mag, dead = _single_cell(spec, float(w), float(a), spec.eps)
            assert bool(dead[0]) == (grid.labels[i, j] == "blowup")
            if not dead[0]:
                assert min(mag[0], spec.cutoff) == pytest.approx(grid.terminal[i, j], rel=1e-9)


def test_uu_boundary_attached():
    grid = run_sweep(small_uu())
    assert grid.boundary_side == "above"
    assert grid.boundary.shape == (3,)
    assert np.all(np.isfinite(grid.boundary))
    text = grid.boundary_csv().splitlines()
    assert text[0] == "omega,alpha_boundary" and len(text) == 4
    summary = json.loads(grid.summary_json())
    assert "agreement_large_alpha_omega" in summary
    assert sum(summary["counts"].values()) == 12


def synthetic(labels, boundary, side="above"):
    spec = SweepSpec("uu", (Axis("omega", 1, 2, 2), Axis("alpha", 1, 4, 4)), m=2, k=100)
    return StabilityGrid(spec, np.zeros((2, 4)), np.array(labels), np.array(boundary, dtype=float), side)


def test_agreement_extremes():
    # boundary at 2.5: alpha 3, 4 above (stable), 1, 2 below
    good = [["divergent", "divergent", "convergent", "convergent"]] * 2
    assert boundary_agreement(synthetic(good, [2.5, 2.5]), margin=0.1) == 1.0
    flipped = [["convergent", "convergent", "divergent", "divergent"]] * 2
    assert boundary_agreement(synthetic(flipped, [2.5, 2.5]), margin=0.1) == 0.0


def test_agreement_margin_region_and_missing_boundary():
    labels = [["divergent", "convergent", "convergent", "convergent"]] * 2
    g = synthetic(labels, [2.5, math.nan])
    # alpha = 2 lies within 20% of 2.5 and is skipped; the nan row is skipped
    assert boundary_agreement(g, margin=0.2) == 1.0
    assert boundary_agreement(g, margin=0.0) == pytest.approx(3 / 4)
    none = np.zeros((2, 4), dtype=bool)
    assert math.isnan(boundary_agreement(g, region=none))
    with pytest.raises(ValueError):
        boundary_agreement(g, margin=-1)
    bare = StabilityGrid(g.spec, g.terminal, g.labels)
    with pytest.raises(ValueError):
        boundary_agreement(bare)


def test_large_product_mask_is_half_the_grid():
    g = synthetic([["convergent"] * 4] * 2, [1.0, 1.0])
    mask = large_product_mask(g)
    assert mask.sum() >= 4 and mask[-1, -1] and not mask[0, 0]


def test_evenpow_bound_attached():
    spec = SweepSpec("evenpow", (Axis("omega", 50, 100, 2), Axis("eps", 0.0, 1.0, 2)), m=1, k=100, alpha=10, T=0.5)
    grid = run_sweep(spec)
    assert grid.boundary_side == "below"
    assert grid.boundary[-1] == pytest.approx(199 / 37.5, rel=1e-12)


def test_monotone_alpha_slices_uu():
    # once a cell turns convergent along increasing alpha it stays convergent
    spec = SweepSpec(
        "uu", (Axis("omega", 20, 200, 10), Axis("alpha", 0.5, 4.0, 15)), m=2, k=100, eps=0.0
    )
    grid = run_sweep(spec)
    good = 0
    for row in grid.labels == "convergent":
        first = np.argmax(row) if row.any() else len(row)
        good += bool(row[first:].all())
    assert good >= 0.9 * len(grid.labels)
    assert (grid.labels == "convergent").any()
