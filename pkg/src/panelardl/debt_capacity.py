"""Quantile thresholds, debt-capacity indicators and policy-series scaling.

All quantiles use linear interpolation between order statistics (numpy's
``method="linear"``) and indicators use the strict inequality ``y < g``, so a
firm sitting exactly on the threshold counts as at capacity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import DataError, MissingPeriodError, ScalingError
from .panel_io import PanelDataset, firm_industry, quarter_index


@dataclass(frozen=True)
class ThresholdParams:
    gamma_pre: float
    gamma_post: float

    def __post_init__(self):
        for g in (self.gamma_pre, self.gamma_post):
            if not 0.0 < g < 1.0:
                raise ValueError(f"quantile thresholds must lie in (0, 1), got {g}")

    @classmethod
    def single(cls, gamma: float) -> "ThresholdParams":
        return cls(gamma, gamma)

    @property
    def is_single(self) -> bool:
        return self.gamma_pre == self.gamma_post

    def to_dict(self) -> dict:
        return {"gamma_pre": self.gamma_pre, "gamma_post": self.gamma_post}


# --------------------------------------------------------------------------- quantiles


def quantile(values: np.ndarray, gamma: float | np.ndarray) -> float | np.ndarray:
    return np.quantile(np.asarray(values, dtype=float), gamma, method="linear")


def economy_quantile(ds: PanelDataset, t: int, gamma: float) -> float:
    y = ds.frame.loc[ds.frame["quarter"] == t, "y"].dropna().to_numpy()
    if y.size == 0:
        raise MissingPeriodError(f"no observations in quarter {t}")
    return float(quantile(y, gamma))


def industry_quantile(ds: PanelDataset, s, t: int, gamma: float) -> float:
    ind = ds.frame["firm"].map(firm_industry(ds))
    mask = (ds.frame["quarter"] == t) & (ind == s)
    y = ds.frame.loc[mask, "y"].dropna().to_numpy()
    if y.size == 0:
        raise MissingPeriodError(f"industry {s!r} has no observations in quarter {t}")
    return float(quantile(y, gamma))


def cross_section_proportions(
    y: np.ndarray, groups: np.ndarray, n_groups: int, gammas: Sequence[float]
) -> np.ndarray:
    """Share of each group strictly below the pooled gamma-quantile of ``y``.

    Returns an array of shape ``(len(gammas), n_groups)``; groups with no
    members get NaN.
    """
    g = quantile(y, np.asarray(gammas, dtype=float))
    below = (y[None, :] < np.atleast_1d(g)[:, None]).astype(float)
    counts = np.bincount(groups, minlength=n_groups).astype(float)
    sums = np.stack([np.bincount(groups, weights=row, minlength=n_groups) for row in below])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / counts, np.nan)


@dataclass(frozen=True)
class CellIndex:
    """Integer coding of (industry, quarter) cells for a dataset."""

    industries: tuple
    quarters: np.ndarray  # sorted quarter labels, consecutive from t_min to t_max
    row_industry: np.ndarray
    row_quarter: np.ndarray

    @classmethod
    def from_dataset(cls, ds: PanelDataset) -> "CellIndex":
        fi = firm_industry(ds)
        industries = tuple(sorted(fi.unique(), key=lambda v: (str(type(v)), v)))
        lookup = {s: k for k, s in enumerate(industries)}
        t0, t1 = ds.time_range
        return cls(
            industries=industries,
            quarters=np.arange(t0, t1 + 1),
            row_industry=ds.frame["firm"].map(fi).map(lookup).to_numpy(np.int64),
            row_quarter=(ds.frame["quarter"].to_numpy(np.int64) - t0),
        )

    @property
    def n_industries(self) -> int:
        return len(self.industries)

    @property
    def n_quarters(self) -> int:
        return len(self.quarters)

    def cell(self, industry_code: np.ndarray, quarter_code: np.ndarray) -> np.ndarray:
        return industry_code * self.n_quarters + quarter_code


def proportion_grid(ds: PanelDataset, gammas: Sequence[float], cells: CellIndex | None = None) -> np.ndarray:
    """pi for every gamma, industry and quarter: array ``(G, S, T)`` with NaN for empty cells."""
    cells = cells or CellIndex.from_dataset(ds)
    y = ds.frame["y"].to_numpy(float)
    out = np.full((len(gammas), cells.n_industries, cells.n_quarters), np.nan)
    order = np.argsort(cells.row_quarter, kind="stable")
    bounds = np.searchsorted(cells.row_quarter[order], np.arange(cells.n_quarters + 1))
    for t in range(cells.n_quarters):
        rows = order[bounds[t] : bounds[t + 1]]
        if rows.size:
            out[:, :, t] = cross_section_proportions(
                y[rows], cells.row_industry[rows], cells.n_industries, gammas
            )
    return out


@dataclass(frozen=True)
class CapacityPanel:
    """Debt-capacity indicators at one quantile.

    ``d`` is indexed by (firm, quarter) and ``pi`` by (industry, quarter); only the
    member matching ``level`` is populated.
    """

    gamma: float
    level: str
    d: pd.Series | None = None
    pi: pd.Series | None = None

    def to_long_frame(self) -> pd.DataFrame:
        series = self.pi if self.level == "industry" else self.d
        out = series.rename("value").reset_index()
        out.insert(0, "gamma", self.gamma)
        return out

    def to_csv(self, path: str | Path) -> None:
        self.to_long_frame().to_csv(path, index=False, float_format="%.12g")


def capacity_indicators(ds: PanelDataset, gamma: float, level: str = "industry") -> CapacityPanel:
    """Firm indicator ``1{y < g_st}`` or industry share below the economy-wide quantile."""
    if level == "industry":
        cells = CellIndex.from_dataset(ds)
        grid = proportion_grid(ds, [gamma], cells)[0]
        s_idx, t_idx = np.nonzero(~np.isnan(grid))
        index = pd.MultiIndex.from_arrays(
            [np.asarray(cells.industries, dtype=object)[s_idx], cells.quarters[t_idx]],
            names=["industry", "quarter"],
        )
        return CapacityPanel(gamma, level, pi=pd.Series(grid[s_idx, t_idx], index=index, name="pi"))
    if level == "firm":
        frame = ds.frame.assign(industry_=ds.frame["firm"].map(firm_industry(ds)))
        g = frame.groupby(["industry_", "quarter"])["y"].transform(lambda v: quantile(v.to_numpy(), gamma))
        d = (frame["y"] < g).astype(np.int64)
        d.index = pd.MultiIndex.from_frame(frame[["firm", "quarter"]])
        return CapacityPanel(gamma, level, d=d.rename("d"))
    raise ValueError(f"level must be 'firm' or 'industry', got {level!r}")


# --------------------------------------------------------------------------- policy series


@dataclass(frozen=True)
class PolicySeries:
    """Unscaled policy measure ``Q_t`` with its policy-on window."""

    name: str
    raw: dict[int, float]
    policy_on: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        bad = {t: v for t, v in self.raw.items() if not (v >= 0)}
        if bad:
            raise DataError(f"policy {self.name!r} has negative or missing levels at quarters {sorted(bad)}")
        object.__setattr__(self, "policy_on", frozenset(int(t) for t in self.policy_on))

    @classmethod
    def from_values(cls, name: str, values: dict[int, float], policy_on: Iterable[int]) -> "PolicySeries":
        return cls(name, {int(k): float(v) for k, v in values.items()}, frozenset(policy_on))

    def to_frame(self) -> pd.DataFrame:
        quarters = sorted(set(self.raw) | set(self.policy_on))
        return pd.DataFrame(
            {
                "quarter": quarters,
                "value": [self.raw.get(t, 0.0) for t in quarters],
                "policy_on": [int(t in self.policy_on) for t in quarters],
            }
        )


def load_policy(path: str | Path, name: str | None = None) -> PolicySeries:
    frame = pd.read_csv(path)
    missing = {"quarter", "value", "policy_on"} - set(frame.columns)
    if missing:
        from .errors import SchemaError

        raise SchemaError(f"policy CSV {path} missing columns {sorted(missing)}")
    quarters = [quarter_index(q) for q in frame["quarter"]]
    on = [q for q, flag in zip(quarters, frame["policy_on"]) if int(flag) == 1]
    return PolicySeries.from_values(name or Path(path).stem, dict(zip(quarters, frame["value"])), on)


def write_policy(p: PolicySeries, path: str | Path) -> None:
    p.to_frame().to_csv(path, index=False)


def combine_policies(series: Sequence[PolicySeries], name: str) -> PolicySeries:
    """Sum of several series, e.g. total purchases ``Q = MBS + TY``."""
    total: dict[int, float] = {}
    for s in series:
        for t, v in s.raw.items():
            total[t] = total.get(t, 0.0) + v
    on = frozenset().union(*(s.policy_on for s in series))
    return PolicySeries(name, total, on)


def scale_policy(p: PolicySeries, denominator: PolicySeries | None = None) -> pd.Series:
    """Scaled series ``q_t``: zero off the window, ``Q_t / mean(D over window)`` on it.

    ``denominator`` defaults to ``p`` itself (unit mean over the window); pass the
    total-purchases series to scale components consistently.
    """
    if not p.policy_on:
        raise ScalingError(f"policy {p.name!r} has an empty policy-on window")
    denom = denominator or p
    window = sorted(p.policy_on)
    missing = [t for t in window if t not in denom.raw or t not in p.raw]
    if missing:
        raise ScalingError(f"policy {p.name!r} lacks values for policy-on quarters {missing}")
    mean = float(np.mean([denom.raw[t] for t in window]))
    if not mean > 0:
        raise ScalingError(f"policy {p.name!r}: zero scaling denominator over the policy window")
    quarters = sorted(set(p.raw) | p.policy_on)
    values = [p.raw[t] / mean if t in p.policy_on else 0.0 for t in quarters]
    return pd.Series(values, index=pd.Index(quarters, name="quarter"), name=p.name)
