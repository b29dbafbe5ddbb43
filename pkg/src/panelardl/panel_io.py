"""Firm-quarter panel ingestion, sample-selection filters and industry grouping."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DuplicateError, EmptyDataError, ParseError, SchemaError

KEY_COLUMNS = ("firm", "industry", "quarter", "y")

_QUARTER_LABEL = re.compile(r"^\s*(\d{4})\s*[-:]?\s*[Qq]([1-4])\s*$")


def quarter_index(label: str | int) -> int:
    """Map ``"2007Q1"``/``"2007:Q1"`` (or a plain integer) to an integer index.

    The index is ``4 * year + (quarter - 1)`` so that consecutive quarters map to
    consecutive integers and ``index // 4`` recovers the calendar year.
    """
    if isinstance(label, (int, np.integer)):
        return int(label)
    text = str(label).strip()
    m = _QUARTER_LABEL.match(text)
    if m:
        return 4 * int(m.group(1)) + int(m.group(2)) - 1
    return int(text)


def quarter_label(index: int) -> str:
    return f"{index // 4}Q{index % 4 + 1}"


@dataclass(frozen=True)
class PanelDataset:
    """Unbalanced firm-by-quarter panel.

    ``frame`` holds one row per (firm, quarter) with columns ``firm`` (str),
    ``industry`` (3-digit code), ``quarter`` (int), ``y`` and one column per
    control.  After :func:`group_industries` an extra ``group`` column carries the
    industry group each firm was assigned to.
    """

    frame: pd.DataFrame
    controls: tuple[str, ...] = ()

    def __post_init__(self):
        missing = [c for c in (*KEY_COLUMNS, *self.controls) if c not in self.frame.columns]
        if missing:
            raise SchemaError(f"panel frame lacks columns {missing}")

    @property
    def n_obs(self) -> int:
        return len(self.frame)

    @property
    def firms(self) -> np.ndarray:
        return self.frame["firm"].unique()

    @property
    def n_firms(self) -> int:
        return int(self.frame["firm"].nunique())

    @property
    def time_range(self) -> tuple[int, int]:
        q = self.frame["quarter"]
        return int(q.min()), int(q.max())

    @property
    def has_groups(self) -> bool:
        return "group" in self.frame.columns

    @property
    def industry_column(self) -> str:
        return "group" if self.has_groups else "industry"

    @property
    def industry_map(self) -> dict:
        """Firm id -> industry (group label when grouped, else modal 3-digit code)."""
        return firm_industry(self).to_dict()

    def with_frame(self, frame: pd.DataFrame) -> "PanelDataset":
        return PanelDataset(frame.reset_index(drop=True), self.controls)

    def equals(self, other: "PanelDataset") -> bool:
        if self.controls != other.controls:
            return False
        try:
            pd.testing.assert_frame_equal(self.frame, other.frame, check_exact=True)
        except AssertionError:
            return False
        return True


def firm_industry(ds: PanelDataset) -> pd.Series:
    """Industry of each firm: the group label, or the most frequent code (smallest on ties)."""
    col = ds.industry_column
    counts = ds.frame.groupby(["firm", col]).size().reset_index(name="n")
    counts = counts.sort_values(["firm", "n", col], ascending=[True, False, True])
    return counts.drop_duplicates("firm").set_index("firm")[col]


_MISSING = {"", "nan", "na", "null"}


def _numeric(column: pd.Series, name: str) -> pd.Series:
    # Python's float() parse is correctly rounded, so written values round-trip exactly
    out = np.empty(len(column))
    for pos, text in enumerate(column.str.strip()):
        if text.lower() in _MISSING:
            out[pos] = np.nan
            continue
        try:
            out[pos] = float(text)
        except ValueError:
            raise ParseError(
                f"non-numeric value {text!r} in column {name!r} at data row {pos + 1} (line {pos + 2})"
            ) from None
    return pd.Series(out, index=column.index)


def load_panel(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    controls: Sequence[str] | None = None,
) -> PanelDataset:
    """Read a panel CSV.

    ``schema`` maps the logical names ``firm, industry, quarter, y`` (and control
    names) to CSV column names.  When ``controls`` is None every remaining column
    other than ``group`` is treated as a control.  No filtering is applied.
    """
    schema = dict(schema or {})
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    raw.columns = [c.strip() for c in raw.columns]

    def col(name: str) -> str:
        actual = schema.get(name, name)
        if actual not in raw.columns:
            raise SchemaError(f"missing column {actual!r}" + (f" (for {name!r})" if actual != name else ""))
        return actual

    key_cols = {k: col(k) for k in KEY_COLUMNS}
    if controls is None:
        used = set(key_cols.values()) | {"group"}
        controls = [c for c in raw.columns if c not in used]
    control_cols = {c: col(c) for c in controls}

    frame = pd.DataFrame({"firm": raw[key_cols["firm"]].str.strip()})
    try:
        frame["industry"] = raw[key_cols["industry"]].str.strip().astype(np.int64)
    except ValueError as exc:
        raise ParseError(f"industry codes must be integers: {exc}") from None
    quarters = []
    for i, v in enumerate(raw[key_cols["quarter"]]):
        try:
            quarters.append(quarter_index(v))
        except ValueError:
            raise ParseError(f"unparseable quarter {v!r} at data row {i + 1} (line {i + 2})") from None
    frame["quarter"] = np.asarray(quarters, dtype=np.int64)
    frame["y"] = _numeric(raw[key_cols["y"]], key_cols["y"])
    for name, actual in control_cols.items():
        frame[name] = _numeric(raw[actual], actual)
    if "group" in raw.columns and "group" not in schema:
        frame["group"] = raw["group"].str.strip()

    dup = frame.duplicated(["firm", "quarter"], keep=False)
    if dup.any():
        first = frame.loc[dup].iloc[0]
        raise DuplicateError(f"duplicate observation for firm {first['firm']!r}, quarter {first['quarter']}")
    frame = frame.sort_values(["firm", "quarter"], kind="mergesort").reset_index(drop=True)
    return PanelDataset(frame, tuple(controls))


def write_panel(ds: PanelDataset, path: str | Path) -> None:
    cols = [*KEY_COLUMNS, *ds.controls] + (["group"] if ds.has_groups else [])
    ds.frame[cols].to_csv(path, index=False)


# --------------------------------------------------------------------------- filters


@dataclass(frozen=True)
class FilterConfig:
    """Settings for :func:`apply_filters`; percentiles are given in percent."""

    min_consecutive: int = 5
    required: tuple[str, ...] | None = None
    y_bounds: tuple[float, float] = (0.0, 1.0)
    nonnegative: tuple[str, ...] = ()
    tail_vars: tuple[str, ...] = ()
    tail_pct: tuple[float | None, float | None] = (0.05, 99.95)
    winsor_vars: tuple[str, ...] = ()
    winsor_pct: tuple[float | None, float | None] = (1.0, 99.0)
    quarters_per_year: int = 4


@dataclass
class StageCount:
    stage: str
    firms_dropped: int
    obs_dropped: int
    firms_remaining: int
    obs_remaining: int


@dataclass
class FilterReport:
    stages: list[StageCount] = field(default_factory=list)
    initial_firms: int = 0
    initial_obs: int = 0
    yearly_pass_pct: dict[int, float] = field(default_factory=dict)
    thresholds: dict[str, dict[str, float | None]] = field(default_factory=dict)

    @property
    def final_firms(self) -> int:
        return self.stages[-1].firms_remaining if self.stages else self.initial_firms

    @property
    def final_obs(self) -> int:
        return self.stages[-1].obs_remaining if self.stages else self.initial_obs

    def to_dict(self) -> dict:
        return {
            "initial": {"firms": self.initial_firms, "obs": self.initial_obs},
            "stages": [vars(s) for s in self.stages],
            "final": {"firms": self.final_firms, "obs": self.final_obs},
            "yearly_pass_pct": {str(k): v for k, v in self.yearly_pass_pct.items()},
            "thresholds": self.thresholds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        header = ("stage", "firms dropped", "obs dropped", "firms left", "obs left")
        rows = [("initial", "", "", str(self.initial_firms), str(self.initial_obs))]
        rows += [
            (s.stage, str(s.firms_dropped), str(s.obs_dropped), str(s.firms_remaining), str(s.obs_remaining))
            for s in self.stages
        ]
        widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
        fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
        lines = [fmt(header), "-" * len(fmt(header)), *map(fmt, rows)]
        if self.yearly_pass_pct:
            lines += ["", "year  pass %"]
            lines += [f"{y:<4}  {p:6.2f}" for y, p in sorted(self.yearly_pass_pct.items())]
        return "\n".join(lines)


def longest_run(quarters: np.ndarray) -> tuple[int, int]:
    """(start, end) positions, inclusive, of the longest consecutive run; earliest wins ties."""
    q = np.asarray(quarters)
    if q.size == 0:
        return 0, -1
    breaks = np.flatnonzero(np.diff(q) != 1)
    starts = np.r_[0, breaks + 1]
    ends = np.r_[breaks, q.size - 1]
    k = int(np.argmax(ends - starts))
    return int(starts[k]), int(ends[k])


def _pct(values: np.ndarray, pct: float | None) -> float | None:
    if pct is None:
        return None
    return float(np.percentile(values, pct, method="linear"))


def apply_filters(raw: PanelDataset, cfg: FilterConfig = FilterConfig()) -> tuple[PanelDataset, FilterReport]:
    """Run the fixed filter cascade: gaps, consecutive run, leverage bounds, tail drops, winsorization."""
    df = raw.frame.sort_values(["firm", "quarter"], kind="mergesort").reset_index(drop=True)
    report = FilterReport(initial_firms=df["firm"].nunique(), initial_obs=len(df))
    required = list(cfg.required) if cfg.required is not None else ["y", *raw.controls]

    def record(name: str, before: pd.DataFrame, after: pd.DataFrame) -> pd.DataFrame:
        report.stages.append(
            StageCount(
                name,
                int(before["firm"].nunique() - after["firm"].nunique()),
                int(len(before) - len(after)),
                int(after["firm"].nunique()),
                int(len(after)),
            )
        )
        if after.empty:
            raise EmptyDataError(f"no observations survive filter stage {name!r}")
        return after.reset_index(drop=True)

    # (1) firms with missing values in any required variable
    bad = df.loc[df[required].isna().any(axis=1), "firm"].unique()
    df = record("missing_values", df, df[~df["firm"].isin(bad)])

    # (2) longest consecutive run, minimum length
    keep = np.zeros(len(df), dtype=bool)
    for _, idx in df.groupby("firm", sort=False).indices.items():
        start, end = longest_run(df["quarter"].to_numpy()[idx])
        if end - start + 1 >= cfg.min_consecutive:
            keep[idx[start : end + 1]] = True
    df = record("consecutive_run", df, df[keep])

    # (3) leverage bounds and sign restrictions
    lo, hi = cfg.y_bounds
    viol = (df["y"] < lo) | (df["y"] > hi)
    for v in cfg.nonnegative:
        viol |= df[v] < 0
    df = record("leverage_bounds", df, df[~df["firm"].isin(df.loc[viol, "firm"].unique())])

    # (4) firms with extreme values, percentiles pooled over the post-(3) sample
    viol = np.zeros(len(df), dtype=bool)
    for v in cfg.tail_vars:
        x = df[v].to_numpy()
        p_lo, p_hi = _pct(x, cfg.tail_pct[0]), _pct(x, cfg.tail_pct[1])
        report.thresholds[f"tail:{v}"] = {"lo": p_lo, "hi": p_hi}
        if p_lo is not None:
            viol |= x < p_lo
        if p_hi is not None:
            viol |= x > p_hi
    df = record("tail_outliers", df, df[~df["firm"].isin(df.loc[viol, "firm"].unique())])

    # (5) winsorization; nothing is dropped
    df = df.copy()
    for v in cfg.winsor_vars:
        x = df[v].to_numpy()
        p_lo, p_hi = _pct(x, cfg.winsor_pct[0]), _pct(x, cfg.winsor_pct[1])
        report.thresholds[f"winsor:{v}"] = {"lo": p_lo, "hi": p_hi}
        df[v] = np.clip(x, p_lo if p_lo is not None else -np.inf, p_hi if p_hi is not None else np.inf)
    df = record("winsorize", df, df)

    qpy = cfg.quarters_per_year
    raw_years = raw.frame.assign(year=raw.frame["quarter"] // qpy).groupby("year")["firm"].unique()
    survivors = set(df["firm"].unique())
    report.yearly_pass_pct = {
        int(year): 100.0 * sum(f in survivors for f in firms) / len(firms) for year, firms in raw_years.items()
    }
    return raw.with_frame(df), report


# --------------------------------------------------------------------------- industries

_SIC_DIVISIONS = (
    ("A", 1, 9),
    ("B", 10, 14),
    ("C", 15, 17),
    ("D", 20, 39),
    ("E", 40, 49),
    ("F", 50, 51),
    ("G", 52, 59),
    ("H", 60, 67),
    ("I", 70, 89),
    ("J", 90, 98),
    ("K", 99, 99),
)


def sic_division(two_digit: int) -> str:
    for name, lo, hi in _SIC_DIVISIONS:
        if lo <= two_digit <= hi:
            return name
    return "Z"


def industry_groups(firm_codes: Mapping[str, int], min_firms: int = 20) -> dict[str, str]:
    """Assign each firm to a group label given its 3-digit code.

    Codes with at least ``min_firms`` firms keep their own group.  Remaining codes
    are pooled within their 2-digit parent (``"33x-others"``); a pooled parent that
    is still too small moves to its division residual (``"D-others"``).
    """
    codes = pd.Series(dict(firm_codes), dtype=np.int64)
    sizes = codes.value_counts().sort_index()
    label: dict[int, str] = {}
    leftovers: dict[int, list[int]] = {}
    for code, n in sizes.items():
        if n >= min_firms:
            label[code] = f"{code:03d}"
        else:
            leftovers.setdefault(code // 10, []).append(code)
    for parent in sorted(leftovers):
        members = leftovers[parent]
        if sizes[members].sum() >= min_firms:
            for c in members:
                label[c] = f"{parent:02d}x-others"
        else:
            for c in members:
                label[c] = f"{sic_division(parent)}-others"
    return {firm: label[int(code)] for firm, code in codes.items()}


def group_industries(ds: PanelDataset, min_firms: int = 20) -> PanelDataset:
    """Return a copy of ``ds`` with a ``group`` column from the minimum-size regrouping rule."""
    base = PanelDataset(ds.frame.drop(columns=["group"], errors="ignore"), ds.controls)
    groups = industry_groups(firm_industry(base).to_dict(), min_firms)
    frame = base.frame.copy()
    frame["group"] = frame["firm"].map(groups)
    return ds.with_frame(frame)
