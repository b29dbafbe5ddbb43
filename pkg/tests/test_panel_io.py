import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from panelardl.errors import DuplicateError, EmptyDataError, ParseError, SchemaError
from panelardl.panel_io import (
    FilterConfig,
    apply_filters,
    group_industries,
    industry_groups,
    load_panel,
    longest_run,
    quarter_index,
    quarter_label,
    write_panel,
)

from conftest import GOLDEN_EXPECTED, golden_filter_panel, make_panel


def _write(tmp_path, text, name="panel.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadPanel:
    def test_three_rows_one_firm(self, tmp_path):
        path = _write(tmp_path, "firm,industry,quarter,y\nA,331,1,0.1\nA,331,2,0.2\nA,331,3,0.3\n")
        ds = load_panel(path)
        assert ds.n_firms == 1
        assert ds.n_obs == 3
        assert ds.time_range == (1, 3)

    def test_duplicate_pair(self, tmp_path):
        path = _write(tmp_path, "firm,industry,quarter,y\nA,331,1,0.1\nA,331,2,0.2\nA,331,2,0.3\n")
        with pytest.raises(DuplicateError, match="'A'"):
            load_panel(path)

    def test_missing_industry_column_is_named(self, tmp_path):
        path = _write(tmp_path, "firm,quarter,y\nA,1,0.1\n")
        with pytest.raises(SchemaError, match="industry"):
            load_panel(path)

    def test_non_numeric_y_reports_row(self, tmp_path):
        path = _write(tmp_path, "firm,industry,quarter,y\nA,331,1,0.1\nA,331,2,abc\n")
        with pytest.raises(ParseError, match="row 2"):
            load_panel(path)

    def test_sorted_and_calendar_quarters(self, tmp_path):
        path = _write(tmp_path, "firm,industry,quarter,y,cash\nB,331,2008Q1,0.1,1\nA,331,2007Q4,0.2,2\nA,331,2007Q3,0.3,3\n")
        ds = load_panel(path)
        assert list(ds.frame["firm"]) == ["A", "A", "B"]
        assert list(ds.frame["quarter"]) == [quarter_index("2007Q3"), quarter_index("2007Q4"), quarter_index("2008Q1")]
        assert ds.controls == ("cash",)

    def test_schema_map(self, tmp_path):
        path = _write(tmp_path, "gvkey,sic,qtr,lev\nA,331,1,0.1\n")
        ds = load_panel(path, schema={"firm": "gvkey", "industry": "sic", "quarter": "qtr", "y": "lev"})
        assert ds.frame.loc[0, "y"] == 0.1

    def test_round_trip(self, tmp_path):
        ds = golden_filter_panel()
        path = tmp_path / "rt.csv"
        write_panel(ds, path)
        assert load_panel(path).equals(ds)


def test_quarter_labels_are_consecutive():
    idx = [quarter_index(f"{y}Q{q}") for y in (2007, 2008) for q in (1, 2, 3, 4)]
    assert np.all(np.diff(idx) == 1)
    assert quarter_label(quarter_index("2009Q3")) == "2009Q3"
    assert quarter_index("2009:Q3") == quarter_index("2009Q3")


def test_longest_run_prefers_earliest():
    assert longest_run(np.array([1, 2, 3, 5, 6, 7])) == (0, 2)
    assert longest_run(np.array([1, 2, 4, 5, 6])) == (2, 4)


class TestFilters:
    def test_gap_drops_firm_with_short_run(self):
        rows = [("A", 331, q, 0.2) for q in (1, 2, 3, 5, 6)] + [("B", 331, q, 0.3) for q in range(1, 7)]
        clean, report = apply_filters(make_panel(rows))
        assert set(clean.frame["firm"]) == {"B"}
        assert report.stages[1].firms_dropped == 1

    def test_leverage_above_one_drops_at_stage_three(self):
        rows = [("A", 331, q, 1.2 if q == 3 else 0.2) for q in range(1, 7)]
        rows += [("B", 331, q, 0.3) for q in range(1, 7)]
        clean, report = apply_filters(make_panel(rows))
        assert set(clean.frame["firm"]) == {"B"}
        assert report.stages[2].stage == "leverage_bounds"
        assert report.stages[2].firms_dropped == 1

    def test_tail_drop_on_pooled_one_to_thousand(self):
        # 200 firms x 5 quarters holding the values 1..1000
        rows = [(f"f{i:03d}", 331, q, 0.5, float(5 * i + q)) for i in range(200) for q in range(1, 6)]
        cfg = FilterConfig(tail_vars=("v",))
        clean, report = apply_filters(make_panel(rows, controls=("v",)), cfg)
        lo, hi = report.thresholds["tail:v"]["lo"], report.thresholds["tail:v"]["hi"]
        assert lo == pytest.approx(1.4995)
        assert hi == pytest.approx(999.5005)
        assert 1000.0 not in set(clean.frame["v"])
        assert {"f000", "f199"}.isdisjoint(clean.frame["firm"])
        assert report.stages[3].firms_dropped == 2

    def test_winsorize_clips_without_dropping(self):
        rows = [(f"f{i:03d}", 331, q, 0.5, float(5 * i + q)) for i in range(40) for q in range(1, 6)]
        clean, report = apply_filters(make_panel(rows, controls=("v",)), FilterConfig(winsor_vars=("v",)))
        assert clean.n_obs == 200
        assert clean.frame["v"].max() == pytest.approx(np.percentile(np.arange(1, 201), 99))
        assert clean.frame["v"].min() == pytest.approx(np.percentile(np.arange(1, 201), 1))

    def test_golden_cascade(self):
        clean, report = apply_filters(golden_filter_panel(), FilterConfig(nonnegative=("cash",), tail_vars=("cash",)))
        got = {s.stage: (s.firms_dropped, s.obs_dropped) for s in report.stages}
        assert got == GOLDEN_EXPECTED
        assert report.initial_firms == 50 and report.initial_obs == 379
        assert report.final_firms == 37 and report.final_obs == 277
        assert clean.n_firms == report.final_firms

    def test_empty_result_is_an_error(self):
        rows = [("A", 331, q, 2.0) for q in range(1, 7)]
        with pytest.raises(EmptyDataError):
            apply_filters(make_panel(rows))

    def test_report_formats(self):
        _, report = apply_filters(golden_filter_panel(), FilterConfig(nonnegative=("cash",), tail_vars=("cash",)))
        data = json.loads(report.to_json())
        assert data["final"] == {"firms": 37, "obs": 277}
        text = report.to_text()
        assert "consecutive_run" in text and "pass %" in text

    def test_surviving_runs_have_no_gaps(self):
        clean, _ = apply_filters(golden_filter_panel())
        for _, q in clean.frame.groupby("firm")["quarter"]:
            assert np.all(np.diff(q.to_numpy()) == 1)
            assert len(q) >= 5


@st.composite
def raw_panels(draw):
    n_firms = draw(st.integers(2, 12))
    rows = []
    for i in range(n_firms):
        quarters = sorted(draw(st.sets(st.integers(0, 14), min_size=1, max_size=12)))
        for q in quarters:
            y = draw(st.one_of(st.floats(0.0, 1.0), st.floats(-0.2, 1.3), st.just(np.nan)))
            v = draw(st.floats(-5, 5))
            rows.append((f"f{i:02d}", 331 + i % 3, q, y, v))
    return make_panel(rows, controls=("v",))


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(raw_panels())
def test_filter_monotone_and_idempotent(ds):
    cfg = FilterConfig(min_consecutive=3, tail_vars=("v",), winsor_vars=("v",))
    try:
        clean, report = apply_filters(ds, cfg)
    except EmptyDataError:
        return
    counts = [report.initial_obs] + [s.obs_remaining for s in report.stages]
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    assert all(s.obs_dropped >= 0 and s.firms_dropped >= 0 for s in report.stages)
    # a second pass drops nothing once tail percentiles are recomputed on the filtered sample
    again, report2 = apply_filters(clean, FilterConfig(min_consecutive=3))
    assert report2.final_obs == clean.n_obs
    assert again.n_firms == clean.n_firms


class TestIndustryGroups:
    def test_large_codes_unchanged(self):
        firms = {f"a{i}": 283 for i in range(25)} | {f"b{i}": 284 for i in range(25)}
        assert set(industry_groups(firms).values()) == {"283", "284"}

    def test_primary_metals_pattern(self):
        sizes = {331: 20, 333: 5, 334: 5, 335: 5, 336: 5, 339: 3}
        firms = {f"{c}-{i}": c for c, n in sizes.items() for i in range(n)}
        groups = pd.Series(industry_groups(firms))
        assert groups.value_counts().to_dict() == {"33x-others": 23, "331": 20}

    def test_small_family_goes_to_division(self):
        firms = {f"{c}-{i}": c for c, n in {281: 4, 282: 4, 289: 4}.items() for i in range(n)}
        assert set(industry_groups(firms).values()) == {"D-others"}

    @settings(max_examples=50, deadline=None)
    @given(st.dictionaries(st.integers(100, 999), st.integers(1, 40), min_size=1, max_size=15))
    def test_partition_and_minimum_size(self, sizes):
        firms = {f"{c}-{i}": c for c, n in sizes.items() for i in range(n)}
        groups = pd.Series(industry_groups(firms, 20))
        assert set(groups.index) == set(firms)
        for label, n in groups.value_counts().items():
            assert n >= 20 or label.endswith("-others") and label[0].isalpha()

    def test_group_column_added(self):
        rows = [(f"a{i}", 331, 1, 0.2) for i in range(20)] + [(f"b{i}", 333, 1, 0.2) for i in range(3)]
        ds = group_industries(make_panel(rows))
        assert ds.has_groups
        assert ds.industry_map["a0"] == "331"
        assert ds.industry_map["b0"] == "D-others"
