"""Regression system for the threshold PanARDL(p) model and two-way effect absorption.

The row for firm ``i`` in quarter ``t`` holds

* ``y_{t-1} .. y_{t-p}`` (one lag under partial adjustment, none for ``static``),
* ``pi_{s,t-1-l}(gamma_pre)`` for ``l = 0..p``,
* ``q_{t-l} * pi_{s,t-1-l}(gamma_post)`` for each policy and ``l = 0..p``,
* each control at lags ``0..p``,
* industry-by-proxy interactions in sum-to-zero (effects) coding.

Firm and quarter effects are removed afterwards by :func:`absorb_two_way`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse as sp

from .debt_capacity import CapacityPanel, CellIndex, ThresholdParams, proportion_grid
from .errors import AbsorptionError, EmptyDataError, SchemaError
from .panel_io import PanelDataset

DYNAMICS = ("panardl", "partial_adjustment", "static")


@dataclass(frozen=True)
class ModelSpec:
    p: int = 2
    dynamics: str = "panardl"
    threshold_mode: str = "two"
    ft_proxy: tuple[str, ...] = ("trend",)
    policies: tuple[str, ...] = ("lsap",)
    controls: tuple[str, ...] = ()
    min_obs_after_lags: int = 1

    def __post_init__(self):
        if self.dynamics not in DYNAMICS:
            raise ValueError(f"dynamics must be one of {DYNAMICS}")
        if self.dynamics == "panardl" and self.p < 1:
            raise ValueError("PanARDL(p) needs p >= 1")
        if self.dynamics != "panardl" and self.p != 0:
            raise ValueError(f"{self.dynamics} uses contemporaneous regressors only; set p=0")
        if self.threshold_mode not in ("single", "two"):
            raise ValueError("threshold_mode must be 'single' or 'two'")
        for f in self.ft_proxy:
            if f != "trend" and not f.startswith("macro:"):
                raise ValueError(f"unknown f_t proxy {f!r}; use 'trend' or 'macro:<column>'")

    @property
    def y_lags(self) -> int:
        return {"panardl": self.p, "partial_adjustment": 1, "static": 0}[self.dynamics]

    @property
    def reg_lags(self) -> int:
        return self.p if self.dynamics == "panardl" else 0

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "dynamics": self.dynamics,
            "threshold_mode": self.threshold_mode,
            "ft_proxy": list(self.ft_proxy),
            "policies": list(self.policies),
            "controls": list(self.controls),
            "min_obs_after_lags": self.min_obs_after_lags,
        }


@dataclass(frozen=True)
class DesignMatrix:
    response: np.ndarray
    regressors: np.ndarray
    labels: tuple[str, ...]
    row_firm: np.ndarray
    row_quarter: np.ndarray
    row_industry: np.ndarray  # integer code into ``industries``
    column_groups: dict[str, list[str]]
    industries: tuple = ()
    ft_names: tuple[str, ...] = ()
    absorbed: bool = False
    demeaning_report: dict | None = None
    dropped: tuple[str, ...] = ()

    @property
    def nobs(self) -> int:
        return self.response.shape[0]

    @property
    def n_firms(self) -> int:
        return int(np.unique(self.row_firm).size)

    @property
    def n_quarters(self) -> int:
        return int(np.unique(self.row_quarter).size)

    @property
    def row_index(self) -> pd.DataFrame:
        return pd.DataFrame({"firm": self.row_firm, "quarter": self.row_quarter})

    def column(self, label: str) -> np.ndarray:
        return self.regressors[:, self.labels.index(label)]

    def subset(self, mask: np.ndarray) -> "DesignMatrix":
        if self.absorbed:
            raise ValueError("subset an unabsorbed design; absorb each part separately")
        mask = np.asarray(mask)
        return replace(
            self,
            response=self.response[mask],
            regressors=self.regressors[mask],
            row_firm=self.row_firm[mask],
            row_quarter=self.row_quarter[mask],
            row_industry=self.row_industry[mask],
        )

    def drop_group(self, group: str) -> "DesignMatrix":
        """Design without the columns of ``group`` (same rows), e.g. a restricted model."""
        gone = set(self.column_groups.get(group, []))
        keep = [j for j, lab in enumerate(self.labels) if lab not in gone]
        return replace(
            self,
            regressors=self.regressors[:, keep],
            labels=tuple(self.labels[j] for j in keep),
            column_groups={g: [lab for lab in labs if lab not in gone] for g, labs in self.column_groups.items()},
        )

    def to_csv(self, path: str | Path) -> None:
        frame = self.row_index
        frame["y"] = self.response
        for j, lab in enumerate(self.labels):
            frame[lab] = self.regressors[:, j]
        frame.to_csv(path, index=False, float_format="%.12g")


# --------------------------------------------------------------------------- layout


@dataclass
class DesignLayout:
    """Everything in the design that does not depend on the quantile thresholds.

    ``lag_cells[l]`` gives, per row, the (industry, quarter) cell whose proportion
    enters at lag ``l``; ``policy_cells[name]`` holds ``q_{tau+1}`` for every cell
    ``(s, tau)`` so that the interaction at lag ``l`` is
    ``(policy_cells * pi)[lag_cells[l]]``.
    """

    spec: ModelSpec
    cells: CellIndex
    y: np.ndarray
    row_firm: np.ndarray
    row_quarter: np.ndarray
    row_industry: np.ndarray
    lag_cells: list[np.ndarray]
    policy_cells: dict[str, np.ndarray]
    lagged_y: np.ndarray
    lagged_y_labels: list[str]
    controls: np.ndarray
    control_labels: list[str]
    interactions: np.ndarray
    interaction_labels: list[str]
    industries: tuple
    ft_names: tuple[str, ...]
    n_rows_by_firm: dict = field(default_factory=dict)

    @property
    def nobs(self) -> int:
        return self.y.shape[0]

    @property
    def fixed(self) -> np.ndarray:
        return np.hstack([self.lagged_y, self.controls, self.interactions])

    @property
    def fixed_labels(self) -> list[str]:
        return self.lagged_y_labels + self.control_labels + self.interaction_labels

    def pi_labels(self) -> list[str]:
        return [f"pi_pre_l{l}" for l in range(self.spec.reg_lags + 1)]

    def policy_labels(self, name: str) -> list[str]:
        return [f"{name}_x_pi_post_l{l}" for l in range(self.spec.reg_lags + 1)]

    def threshold_columns(self, pi_pre: np.ndarray, pi_post: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Columns for cell-level proportions (flattened ``S*T`` arrays)."""
        pre = np.column_stack([pi_pre[c] for c in self.lag_cells])
        post = [
            np.column_stack([(self.policy_cells[name] * pi_post)[c] for c in self.lag_cells])
            for name in self.spec.policies
        ]
        post = np.hstack(post) if post else np.empty((self.nobs, 0))
        return pre, post

    def assemble(self, pi_pre: np.ndarray, pi_post: np.ndarray) -> DesignMatrix:
        pre, post = self.threshold_columns(pi_pre, pi_post)
        policy_labels = [lab for name in self.spec.policies for lab in self.policy_labels(name)]
        labels = self.lagged_y_labels + self.pi_labels() + policy_labels + self.control_labels + self.interaction_labels
        groups = {
            "lagged_y": list(self.lagged_y_labels),
            "pi_pre": self.pi_labels(),
            "policy_interactions": policy_labels,
            "controls": list(self.control_labels),
            "industry_interactions": list(self.interaction_labels),
        }
        for name in self.spec.policies:
            groups[f"policy:{name}"] = self.policy_labels(name)
        for c in self.spec.controls:
            groups[f"control:{c}"] = [f"{c}_l{l}" for l in range(self.spec.reg_lags + 1)]
        X = np.hstack([self.lagged_y, pre, post, self.controls, self.interactions])
        return DesignMatrix(
            response=self.y.copy(),
            regressors=X,
            labels=tuple(labels),
            row_firm=self.row_firm,
            row_quarter=self.row_quarter,
            row_industry=self.row_industry,
            column_groups=groups,
            industries=self.industries,
            ft_names=self.ft_names,
        )


def _proxy_values(name: str, quarters: np.ndarray, t0: int, n_t: int, macro: Mapping[str, pd.Series] | None):
    if name == "trend":
        return (quarters - t0 + 1) / n_t
    key = name.split(":", 1)[1]
    if not macro or key not in macro:
        raise SchemaError(f"f_t proxy {name!r} requested but no macro series {key!r} supplied")
    return pd.Series(macro[key]).reindex(quarters).to_numpy(float)


def design_layout(
    ds: PanelDataset,
    q: Mapping[str, pd.Series],
    spec: ModelSpec,
    macro: Mapping[str, pd.Series] | None = None,
) -> DesignLayout:
    """Lag-align the panel and build every threshold-independent column."""
    missing = [c for c in spec.controls if c not in ds.frame.columns]
    missing += [p for p in spec.policies if p not in q]
    if missing:
        raise SchemaError(f"design inputs missing: {missing}")
    cells = CellIndex.from_dataset(ds)
    frame = ds.frame
    n, T = len(frame), cells.n_quarters
    t0 = int(cells.quarters[0])
    firm_labels, firm_code = np.unique(frame["firm"].to_numpy(), return_inverse=True)
    qcode = cells.row_quarter
    pos = np.full((firm_labels.size, T), -1, dtype=np.int64)
    pos[firm_code, qcode] = np.arange(n)

    y_all = frame["y"].to_numpy(float)
    ctrl_all = frame[list(spec.controls)].to_numpy(float) if spec.controls else np.empty((n, 0))
    P, Ly = spec.reg_lags, spec.y_lags
    max_lag = max(Ly, P + 1)

    def lagged(values: np.ndarray, k: int) -> np.ndarray:
        src = np.full(n, -1, dtype=np.int64)
        ok = qcode - k >= 0
        src[ok] = pos[firm_code[ok], qcode[ok] - k]
        out = np.full(values.shape, np.nan)
        has = src >= 0
        out[has] = values[src[has]]
        return out

    valid = np.isfinite(y_all) & (qcode - max_lag >= 0)
    ylags = [lagged(y_all, k) for k in range(1, Ly + 1)]
    for col in ylags:
        valid &= np.isfinite(col)
    clags = [lagged(ctrl_all, l) for l in range(P + 1)]
    for block in clags:
        valid &= np.isfinite(block).all(axis=1)

    cell_count = np.bincount(cells.cell(cells.row_industry, qcode), minlength=cells.n_industries * T)
    lag_cells = []
    for l in range(P + 1):
        tq = np.clip(qcode - 1 - l, 0, T - 1)
        c = cells.cell(cells.row_industry, tq)
        valid &= (qcode - 1 - l >= 0) & (cell_count[c] > 0)
        lag_cells.append(c)

    quarters = cells.quarters[qcode]
    proxies = [_proxy_values(f, quarters, t0, T, macro) for f in spec.ft_proxy]
    for v in proxies:
        valid &= np.isfinite(v)

    counts = np.bincount(firm_code[valid], minlength=firm_labels.size)
    valid &= counts[firm_code] >= spec.min_obs_after_lags
    if not valid.any():
        raise EmptyDataError("no rows with complete lag history")
    rows = np.flatnonzero(valid)

    ind_code = cells.row_industry[rows]
    present = np.unique(ind_code)
    industries = tuple(cells.industries[k] for k in present)
    inter, inter_labels = [], []
    if present.size > 1:
        ref = present[-1]
        for f, v in zip(spec.ft_proxy, proxies):
            for k in present[:-1]:
                inter.append(v[rows] * ((ind_code == k).astype(float) - (ind_code == ref).astype(float)))
                inter_labels.append(f"ind[{cells.industries[k]}]*{f}")

    policy_cells = {}
    for name in spec.policies:
        qs = pd.Series(q[name]).reindex(cells.quarters).fillna(0.0).to_numpy(float)
        nxt = np.r_[qs[1:], 0.0]  # cell (s, tau) pairs with q_{tau+1}
        policy_cells[name] = np.tile(nxt, cells.n_industries)

    control_labels = [f"{c}_l{l}" for l in range(P + 1) for c in spec.controls]
    controls = (
        np.column_stack([clags[l][rows, j] for l in range(P + 1) for j in range(len(spec.controls))])
        if spec.controls
        else np.empty((rows.size, 0))
    )
    return DesignLayout(
        spec=spec,
        cells=cells,
        y=y_all[rows],
        row_firm=frame["firm"].to_numpy()[rows],
        row_quarter=quarters[rows],
        row_industry=np.searchsorted(present, ind_code),
        lag_cells=[c[rows] for c in lag_cells],
        policy_cells=policy_cells,
        lagged_y=np.column_stack([c[rows] for c in ylags]) if ylags else np.empty((rows.size, 0)),
        lagged_y_labels=[f"y_l{k}" for k in range(1, Ly + 1)],
        controls=controls,
        control_labels=control_labels,
        interactions=np.column_stack(inter) if inter else np.empty((rows.size, 0)),
        interaction_labels=inter_labels,
        industries=industries,
        ft_names=tuple(spec.ft_proxy),
        n_rows_by_firm=dict(zip(firm_labels, counts)),
    )


def _cell_vector(cap: CapacityPanel, cells: CellIndex) -> np.ndarray:
    if cap.pi is None:
        raise ValueError("design needs industry-level capacity panels")
    out = np.full(cells.n_industries * cells.n_quarters, np.nan)
    lookup = {s: k for k, s in enumerate(cells.industries)}
    t0 = int(cells.quarters[0])
    for (s, t), v in cap.pi.items():
        if s in lookup and 0 <= t - t0 < cells.n_quarters:
            out[lookup[s] * cells.n_quarters + (t - t0)] = v
    return out


def build_design(
    ds: PanelDataset,
    pi_pre: CapacityPanel,
    pi_post: CapacityPanel,
    q: Mapping[str, pd.Series],
    spec: ModelSpec,
    macro: Mapping[str, pd.Series] | None = None,
) -> DesignMatrix:
    """Unabsorbed design for given capacity panels and scaled policy series."""
    layout = design_layout(ds, q, spec, macro)
    return layout.assemble(_cell_vector(pi_pre, layout.cells), _cell_vector(pi_post, layout.cells))


def design_for_thresholds(
    ds: PanelDataset,
    q: Mapping[str, pd.Series],
    spec: ModelSpec,
    thresholds: ThresholdParams,
    macro: Mapping[str, pd.Series] | None = None,
    layout: DesignLayout | None = None,
) -> DesignMatrix:
    layout = layout or design_layout(ds, q, spec, macro)
    grid = proportion_grid(ds, [thresholds.gamma_pre, thresholds.gamma_post], layout.cells)
    return layout.assemble(grid[0].ravel(), grid[1].ravel())


# --------------------------------------------------------------------------- absorption


def _codes(values: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, inv = np.unique(values, return_inverse=True)
    return inv.astype(np.int64), uniq.size


def _group_operator(codes: np.ndarray, n_groups: int) -> tuple[sp.csr_matrix, np.ndarray]:
    n = codes.size
    S = sp.csr_matrix((np.ones(n), (codes, np.arange(n))), shape=(n_groups, n))
    return S, np.bincount(codes, minlength=n_groups).astype(float)


class TwoWayProjector:
    """Exact annihilator of firm and quarter dummies.

    Firm effects are swept out by within-firm demeaning; quarter effects are then
    projected out through an orthonormal basis of the firm-demeaned quarter
    dummies.  The result equals the residual from regressing on full firm and
    quarter dummy sets.
    """

    def __init__(self, firm: np.ndarray, quarter: np.ndarray):
        self.firm, self.n_firms = _codes(firm)
        self.quarter, self.n_quarters = _codes(quarter)
        self._S, self._counts = _group_operator(self.firm, self.n_firms)
        D = np.zeros((self.firm.size, max(self.n_quarters - 1, 0)))
        rows = np.flatnonzero(self.quarter > 0)
        D[rows, self.quarter[rows] - 1] = 1.0
        D = self.demean_firm(D)
        if D.shape[1]:
            Q, R, _ = scipy.linalg.qr(D, mode="economic", pivoting=True)
            diag = np.abs(np.diag(R))
            rank = int(np.sum(diag > 1e-10 * max(diag.max(), 1.0)))
            self._Q = Q[:, :rank]
        else:
            self._Q = D
        # number of absorbed parameters = rank of [firm dummies, quarter dummies]
        self.rank = self.n_firms + self._Q.shape[1]

    def demean_firm(self, X: np.ndarray) -> np.ndarray:
        means = (self._S @ X) / self._counts.reshape(-1, *([1] * (X.ndim - 1)))
        return X - means[self.firm]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = self.demean_firm(np.asarray(X, dtype=float))
        if self._Q.shape[1]:
            X = X - self._Q @ (self._Q.T @ X)
        return X


def _max_group_mean(S: sp.csr_matrix, counts: np.ndarray, X: np.ndarray) -> float:
    if X.size == 0:
        return 0.0
    return float(np.max(np.abs((S @ X) / counts[:, None])))


def absorb_two_way(
    dm: DesignMatrix,
    method: str = "alternating",
    tol: float = 1e-10,
    max_iter: int = 10_000,
    collinear_tol: float = 1e-10,
) -> DesignMatrix:
    """Sweep firm and quarter effects out of the response and every regressor.

    ``method="alternating"`` iterates within-firm and within-quarter demeaning
    until the largest firm mean is below ``tol``; ``method="direct"`` uses
    :class:`TwoWayProjector`.  Columns whose norm collapses below
    ``collinear_tol`` times their original norm are dropped with a warning.
    """
    if dm.absorbed:
        return dm
    X = np.column_stack([dm.response, dm.regressors])
    pre_norm = np.linalg.norm(X, axis=0)
    firm, nf = _codes(dm.row_firm)
    quarter, nq = _codes(dm.row_quarter)
    Sf, cf = _group_operator(firm, nf)
    Sq, cq = _group_operator(quarter, nq)

    if method == "alternating":
        it, resid = 0, np.inf
        while it < max_iter:
            it += 1
            X = X - ((Sf @ X) / cf[:, None])[firm]
            X = X - ((Sq @ X) / cq[:, None])[quarter]
            resid = _max_group_mean(Sf, cf, X)
            if resid <= tol:
                break
        else:
            raise AbsorptionError(f"two-way demeaning did not converge in {max_iter} iterations (residual {resid:.3e})")
    elif method == "direct":
        X = TwoWayProjector(dm.row_firm, dm.row_quarter)(X)
        it, resid = 1, _max_group_mean(Sf, cf, X)
    else:
        raise ValueError(f"unknown absorption method {method!r}")
    resid = max(resid, _max_group_mean(Sq, cq, X))

    post_norm = np.linalg.norm(X[:, 1:], axis=0)
    keep = post_norm > collinear_tol * pre_norm[1:]
    dropped = tuple(lab for lab, k in zip(dm.labels, keep) if not k)
    if dropped:
        warnings.warn(f"dropping columns absorbed by firm/quarter effects: {list(dropped)}", stacklevel=2)
    labels = tuple(lab for lab, k in zip(dm.labels, keep) if k)
    groups = {g: [lab for lab in labs if lab in labels] for g, labs in dm.column_groups.items()}
    return replace(
        dm,
        response=X[:, 0],
        regressors=X[:, 1:][:, keep],
        labels=labels,
        column_groups=groups,
        absorbed=True,
        demeaning_report={"method": method, "iterations": it, "max_abs_mean": resid, "n_firms": nf, "n_quarters": nq},
        dropped=dm.dropped + dropped,
    )


def industry_loadings(coefficients: pd.Series, dm: DesignMatrix) -> pd.DataFrame:
    """Recover every industry's loading on each proxy from the contrast coefficients.

    The omitted (last) industry gets minus the sum of the others, so loadings sum
    to zero across industries.
    """
    out = {}
    for f in dm.ft_names:
        vals = [float(coefficients.get(f"ind[{s}]*{f}", 0.0)) for s in dm.industries[:-1]]
        out[f] = vals + [-float(np.sum(vals))]
    return pd.DataFrame(out, index=pd.Index(dm.industries, name="industry"))
