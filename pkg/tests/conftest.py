import numpy as np
import pandas as pd
import pytest

from panelardl.design import DesignMatrix
from panelardl.panel_io import PanelDataset

ACCEPTANCE_FILE = "test_acceptance.py"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_panel(rows, controls=()):
    """PanelDataset from (firm, industry, quarter, y, *controls) tuples."""
    frame = pd.DataFrame(rows, columns=["firm", "industry", "quarter", "y", *controls])
    frame["firm"] = frame["firm"].astype(str)
    frame["industry"] = frame["industry"].astype(np.int64)
    frame["quarter"] = frame["quarter"].astype(np.int64)
    frame["y"] = frame["y"].astype(float)
    frame = frame.sort_values(["firm", "quarter"], kind="mergesort").reset_index(drop=True)
    return PanelDataset(frame, tuple(controls))


def random_unbalanced_design(rng, n_firms, n_quarters, k=3, keep=0.75):
    """Raw DesignMatrix on a random unbalanced firm-quarter layout."""
    present = rng.random((n_firms, n_quarters)) < keep
    present[np.arange(n_firms), rng.integers(0, n_quarters, n_firms)] = True
    present[rng.integers(0, n_firms), :] = True
    f, t = np.nonzero(present)
    n = f.size
    X = rng.normal(size=(n, k)) + 0.5 * rng.normal(size=n_firms)[f, None]
    y = X @ rng.normal(size=k) + rng.normal(size=n_firms)[f] + rng.normal(size=n_quarters)[t] + 0.3 * rng.normal(size=n)
    labels = tuple(f"x{j}" for j in range(k))
    return DesignMatrix(
        response=y,
        regressors=X,
        labels=labels,
        row_firm=np.array([f"f{i:02d}" for i in f]),
        row_quarter=t + 100,
        row_industry=np.zeros(n, dtype=np.int64),
        column_groups={"all": list(labels)},
    )


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[report.nodeid] = (report.outcome, dict(report.user_properties))


_ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (outcome, props) in sorted(_ACCEPTANCE.items(), key=lambda kv: kv[1][1].get("criterion", 99)):
        tag = "PASS" if outcome == "passed" else "FAIL"
        num = props.get("criterion", "?")
        title = props.get("title", nodeid.split("::")[-1])
        detail = props.get("detail", "")
        terminalreporter.write_line(f"[{tag}] criterion {num:>2}: {title}" + (f" | {detail}" if detail else ""))


def golden_filter_panel():
    """50 firms with hand-placed violations of each filter stage.

    f01-f30  clean, 8 quarters
    f31-f33  one missing cash value          -> stage 1 (3 firms, 24 obs)
    f34-f37  quarters 1-3 and 5-7            -> stage 2 (4 firms, 24 obs)
    f38-f39  quarters 1-3 and 5-10           -> stage 2 keeps 5-10 (6 obs)
    f40-f42  y = 1.2 in one quarter          -> stage 3 (3 firms, 24 obs)
    f43      negative cash                   -> stage 3 (1 firm, 8 obs)
    f44      pooled maximum cash             -> stage 4 (1 firm, 8 obs)
    f45      pooled minimum cash             -> stage 4 (1 firm, 8 obs)
    f46-f50  exactly 5 consecutive quarters  -> kept
    """
    rows = []
    counter = iter(range(10_000))

    def cash():
        return 0.05 + 0.001 * next(counter)

    def add(firm, quarters, y=0.3, overrides=None):
        overrides = overrides or {}
        for q in quarters:
            yv, cv = y + 0.01 * (q % 3), cash()
            if q in overrides:
                yv, cv = overrides[q].get("y", yv), overrides[q].get("cash", cv)
            rows.append((firm, 331, q, yv, cv))

    for i in range(1, 31):
        add(f"f{i:02d}", range(1, 9))
    for i in range(31, 34):
        add(f"f{i:02d}", range(1, 9), overrides={4: {"cash": np.nan}})
    for i in range(34, 38):
        add(f"f{i:02d}", [1, 2, 3, 5, 6, 7])
    for i in range(38, 40):
        add(f"f{i:02d}", [1, 2, 3, 5, 6, 7, 8, 9, 10])
    for i in range(40, 43):
        add(f"f{i:02d}", range(1, 9), overrides={5: {"y": 1.2}})
    add("f43", range(1, 9), overrides={2: {"cash": -0.5}})
    add("f44", range(1, 9), overrides={3: {"cash": 100.0}})
    add("f45", range(1, 9), overrides={3: {"cash": 0.0}})
    for i in range(46, 51):
        add(f"f{i:02d}", range(1, 6))
    return make_panel(rows, controls=("cash",))


GOLDEN_EXPECTED = {
    # stage: (firms dropped, obs dropped)
    "missing_values": (3, 24),
    "consecutive_run": (4, 30),
    "leverage_bounds": (4, 32),
    "tail_outliers": (2, 16),
    "winsorize": (0, 0),
}
