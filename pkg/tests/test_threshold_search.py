import io

import numpy as np
import pandas as pd
import pytest

from panelardl.design import ModelSpec
from panelardl.dgp import DgpConfig, simulate
from panelardl.errors import SearchError
from panelardl.threshold_search import GridSpec, grid_search

from conftest import make_panel


@pytest.fixture(scope="module")
def small_sim():
    return simulate(DgpConfig(n_firms=120, n_quarters=16, n_industries=4, unbalanced=True, min_run=6, seed=11))


def test_default_grid_has_66_points():
    pts = GridSpec().points()
    assert pts.size == 66
    assert pts[0] == 0.25 and pts[-1] == 0.9
    with pytest.raises(ValueError):
        GridSpec(lo=0.5, hi=0.4)


@pytest.mark.parametrize("mode", ["single", "two"])
def test_fwl_matches_rebuild(small_sim, mode):
    spec = ModelSpec(p=1, controls=("xi", "x"), threshold_mode=mode)
    grid = GridSpec(0.3, 0.8, 0.1, mode)
    fast = grid_search(small_sim.panel, small_sim.q, spec, grid)
    slow = grid_search(small_sim.panel, small_sim.q, spec, grid, method="rebuild")
    a, b = fast.ssr_surface["ssr"].to_numpy(), slow.ssr_surface["ssr"].to_numpy()
    np.testing.assert_array_equal(np.isfinite(a), np.isfinite(b))
    np.testing.assert_allclose(a[np.isfinite(a)], b[np.isfinite(b)], rtol=1e-8)
    assert fast.best == slow.best


def test_best_attains_surface_minimum(small_sim, tmp_path):
    spec = ModelSpec(p=1, controls=("xi", "x"), threshold_mode="two")
    res = grid_search(small_sim.panel, small_sim.q, spec, GridSpec(0.3, 0.8, 0.05, "two"))
    res.surface_csv(tmp_path / "ssr.csv")
    surface = pd.read_csv(tmp_path / "ssr.csv")
    assert list(surface.columns) == ["gamma_pre", "gamma_post", "ssr"]
    k = surface["ssr"].idxmin()
    assert (surface.loc[k, "gamma_pre"], surface.loc[k, "gamma_post"]) == (res.best.gamma_pre, res.best.gamma_post)
    assert (res.best.gamma_pre, res.best.gamma_post) in res.ties


def test_two_threshold_minimum_below_single(small_sim):
    grid = dict(lo=0.3, hi=0.8, step=0.05)
    single = grid_search(small_sim.panel, small_sim.q, ModelSpec(p=1, threshold_mode="single"), GridSpec(**grid, mode="single"))
    two = grid_search(small_sim.panel, small_sim.q, ModelSpec(p=1, threshold_mode="two"), GridSpec(**grid, mode="two"))
    assert two.min_ssr <= single.min_ssr * (1 + 1e-12)


def test_thread_count_does_not_change_result(small_sim):
    spec = ModelSpec(p=1, controls=("xi", "x"), threshold_mode="two")
    grid = GridSpec(0.3, 0.8, 0.05, "two")
    one = grid_search(small_sim.panel, small_sim.q, spec, grid, threads=1)
    four = grid_search(small_sim.panel, small_sim.q, spec, grid, threads=4)
    pd.testing.assert_frame_equal(one.ssr_surface, four.ssr_surface, check_exact=True)
    assert one.to_dict() == four.to_dict()


def test_ties_resolved_to_smallest_pair():
    # three firms per industry: pi only moves at a few quantiles, so neighbouring grid points tie exactly
    rng = np.random.default_rng(5)
    rows = [(f"f{i}", 331 + i % 2, t, rng.uniform(0.05, 0.6)) for i in range(6) for t in range(1, 13)]
    ds = make_panel(rows)
    q = {"lsap": pd.Series({t: (1.0 if t >= 7 else 0.0) for t in range(1, 13)})}
    res = grid_search(ds, q, ModelSpec(p=1, threshold_mode="two"), GridSpec(0.3, 0.8, 0.01, "two"))
    assert len(res.ties) > 1
    assert (res.best.gamma_pre, res.best.gamma_post) == min(res.ties)
    assert res.warnings


def test_degenerate_lower_bound_is_an_error():
    rng = np.random.default_rng(2)
    rows = []
    for i in range(20):
        for t in range(1, 11):
            y = 0.0 if i < 7 else rng.uniform(0.1, 0.7)
            rows.append((f"f{i:02d}", 331 + i % 2, t, y))
    ds = make_panel(rows)
    q = {"lsap": pd.Series({t: (1.0 if t >= 6 else 0.0) for t in range(1, 11)})}
    with pytest.raises(SearchError, match="lower grid bound"):
        grid_search(ds, q, ModelSpec(p=1, threshold_mode="single"), GridSpec(0.25, 0.9, 0.05, "single"))
    res = grid_search(ds, q, ModelSpec(p=1, threshold_mode="single"), GridSpec(0.4, 0.9, 0.05, "single"))
    assert res.n_degenerate == 0


def test_shared_threshold_found_by_two_mode():
    sim = simulate(DgpConfig(n_firms=1000, n_quarters=30, gamma_pre=0.5, gamma_post=0.5, seed=31))
    spec = ModelSpec(p=1, controls=("xi", "x"), threshold_mode="two")
    best = grid_search(sim.panel, sim.q, spec, GridSpec(mode="two"), threads=2).best
    assert abs(best.gamma_pre - best.gamma_post) <= 0.01 + 1e-9
    assert abs(best.gamma_pre - 0.5) <= 0.01 + 1e-9
