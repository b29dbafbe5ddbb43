import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from panelardl.debt_capacity import ThresholdParams
from panelardl.design import ModelSpec
from panelardl.dgp import DgpConfig, simulate
from panelardl.errors import PreconditionError
from panelardl.jackknife import half_panel_jackknife, split_halves
from panelardl.panel_io import PanelDataset

STATIC = ModelSpec(p=0, dynamics="static", controls=("xi", "x"))
GAMMA = ThresholdParams(0.6, 0.6)


def static_sim(seed, **kw):
    base = dict(n_firms=300, n_quarters=16, n_industries=4, dynamics="static", lam=(),
                beta0=(0.3,), beta1=(0.2,), policy_window=(2, 13), seed=seed)
    base.update(kw)
    return simulate(DgpConfig(**base))


class TestSplit:
    def test_odd_firm_drops_earliest(self):
        a, b = split_halves(np.array(["f"] * 9), np.arange(9))
        assert not a[0] and not b[0]
        assert np.flatnonzero(a).tolist() == [1, 2, 3, 4]
        assert np.flatnonzero(b).tolist() == [5, 6, 7, 8]

    def test_unsorted_rows(self):
        quarters = np.array([5, 1, 3, 2, 4, 0])
        a, b = split_halves(np.array(["g"] * 6), quarters)
        assert sorted(quarters[a]) == [0, 1, 2]
        assert sorted(quarters[b]) == [3, 4, 5]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(1, 15), min_size=1, max_size=6))
    def test_halves_partition_in_time(self, sizes):
        firm = np.concatenate([[f"f{i}"] * n for i, n in enumerate(sizes)])
        quarter = np.concatenate([np.arange(n) + 3 * i for i, n in enumerate(sizes)])
        a, b = split_halves(firm, quarter)
        assert not np.any(a & b)
        for i, n in enumerate(sizes):
            rows = firm == f"f{i}"
            assert a[rows].sum() == b[rows].sum() == n // 2
            if n >= 2:
                assert quarter[rows & a].max() < quarter[rows & b].min()
            if n % 2:
                assert not (a | b)[rows & (quarter == quarter[rows].min())].any()


@pytest.fixture(scope="module")
def result():
    sim = static_sim(5)
    return half_panel_jackknife(sim.panel, sim.q, STATIC, GAMMA)


class TestJackknife:
    def test_identity_and_alignment(self, result):
        full, fa, fb = result.full.coefficients, result.half_a.coefficients, result.half_b.coefficients
        assert list(result.corrected.index) == list(full.index) == list(fa.index) == list(fb.index)
        np.testing.assert_allclose(result.corrected, 2 * full - (fa + fb) / 2, rtol=0, atol=1e-15)
        pd.testing.assert_series_equal(result.se, result.full.std_errors)

    def test_halves_use_every_row_once(self, result):
        assert result.half_a.nobs + result.half_b.nobs <= result.full.nobs
        assert result.half_a.nobs == result.half_b.nobs

    def test_report(self, result):
        table = result.comparison_table()
        assert "corrected" in table and "lsap_x_pi_post_l0" in table
        assert set(result.to_dict()) >= {"corrected", "se", "full", "half_a", "half_b", "nobs"}

    def test_short_firms_rejected(self):
        sim = simulate(DgpConfig(n_firms=60, n_quarters=12, n_industries=3, unbalanced=True, min_run=4, seed=2))
        with pytest.raises(PreconditionError):
            half_panel_jackknife(sim.panel, sim.q, ModelSpec(p=1, controls=("xi", "x")), GAMMA, min_obs=8)

    def test_threads_do_not_change_result(self):
        sim = static_sim(6, n_firms=120)
        one = half_panel_jackknife(sim.panel, sim.q, STATIC, GAMMA, threads=1)
        three = half_panel_jackknife(sim.panel, sim.q, STATIC, GAMMA, threads=3)
        pd.testing.assert_series_equal(one.corrected, three.corrected)

    def test_isolated_firm_dropped_with_warning(self):
        sim = static_sim(7, n_firms=80)
        frame = sim.panel.frame.copy()
        # a lone firm observed before everyone else is alone in its early quarters
        extra = frame[frame["firm"] == frame["firm"].iloc[0]].copy()
        extra["firm"] = "zz_lone"
        extra["quarter"] = extra["quarter"] - 16
        ds = PanelDataset(pd.concat([frame, extra], ignore_index=True), sim.panel.controls)
        q = {"lsap": sim.q["lsap"].reindex(range(int(ds.frame["quarter"].min()), int(ds.frame["quarter"].max()) + 1), fill_value=0.0)}
        with pytest.warns(UserWarning, match="alone"):
            res = half_panel_jackknife(ds, q, STATIC, GAMMA)
        assert "zz_lone" in res.dropped_firms

    @pytest.mark.slow
    def test_static_model_has_no_first_order_bias(self):
        lab = "lsap_x_pi_post_l0"
        diff = []
        for r in range(200):
            sim = static_sim(900 + r)
            res = half_panel_jackknife(sim.panel, sim.q, STATIC, GAMMA)
            diff.append(res.corrected[lab] - res.full.coefficients[lab])
        diff = np.array(diff)
        assert abs(diff.mean()) <= 2 * diff.std(ddof=1) / np.sqrt(diff.size)
