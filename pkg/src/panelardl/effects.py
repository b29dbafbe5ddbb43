"""Reported quantities derived from a fitted PanARDL model.

Net short-run effect (sum of the policy-interaction coefficients), long-run
effect ``sum(beta) / (1 - sum(lambda))``, distributed-lag weights from inverting
the autoregressive polynomial, mean lag and half-life of those weights,
industry/national average policy effects, and the Chow-type F test.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import pandas as pd
from scipy import stats

from .debt_capacity import CapacityPanel
from .errors import LagDistributionError, NestingError, NonstationaryError, SingularityError
from .estimator import FitResult, delta_method
from .panel_io import PanelDataset, firm_industry


def _indices(fit: FitResult, group: str) -> np.ndarray:
    labels = fit.group(group)
    if not labels:
        raise KeyError(f"coefficient group {group!r} is empty in this fit")
    lookup = {lab: j for j, lab in enumerate(fit.labels)}
    return np.array([lookup[lab] for lab in labels])


def net_short_run(fit: FitResult, group: str = "policy_interactions") -> tuple[float, float]:
    idx = _indices(fit, group)
    w = np.zeros(len(fit.labels))
    w[idx] = 1.0
    return delta_method(fit, lambda b: float(w @ b), lambda b: w)


def long_run_transform(num_idx: np.ndarray, lag_idx: np.ndarray):
    """``theta(b) = sum(b[num]) / (1 - sum(b[lag]))`` and its analytic gradient."""
    num_idx, lag_idx = np.asarray(num_idx), np.asarray(lag_idx)

    def g(b):
        denom = 1.0 - b[lag_idx].sum()
        if denom == 0.0:
            raise SingularityError("long-run transform undefined: 1 - sum(lambda) = 0")
        return b[num_idx].sum() / denom

    def grad(b):
        denom = 1.0 - b[lag_idx].sum()
        if denom == 0.0:
            raise SingularityError("long-run transform undefined: 1 - sum(lambda) = 0")
        d = np.zeros_like(b, dtype=float)
        d[num_idx] += 1.0 / denom
        d[lag_idx] += b[num_idx].sum() / denom**2
        return d

    return g, grad


def long_run(fit: FitResult, num_group: str = "policy_interactions", lag_y_group: str = "lagged_y") -> tuple[float, float]:
    num, lag = _indices(fit, num_group), _indices(fit, lag_y_group)
    lam_sum = float(fit.coefficients.iloc[lag].sum())
    if lam_sum >= 1.0:
        raise NonstationaryError(f"sum of lagged-dependent coefficients is {lam_sum:.6g} >= 1", lam_sum)
    g, grad = long_run_transform(num, lag)
    return delta_method(fit, g, grad)


# --------------------------------------------------------------------------- lag distribution


def lag_weights(beta: Iterable[float], lam: Iterable[float], tail_tol: float = 1e-12, max_horizon: int = 100_000) -> np.ndarray:
    """Coefficients of ``B(L) / lambda(L)`` via ``phi_h = beta_h + sum_j lam_j phi_{h-j}``.

    The series runs to the first horizon ``H >= 4p`` at which the last
    ``max(p, 1)`` weights are all below ``tail_tol`` times the largest weight.
    """
    beta = np.asarray(list(beta), dtype=float)
    lam = np.asarray(list(lam), dtype=float)
    p = lam.size
    floor = max(4 * p, beta.size - 1)
    window = max(p, 1)
    phi = []
    peak = 0.0
    for h in range(max_horizon + 1):
        v = beta[h] if h < beta.size else 0.0
        for j in range(1, min(h, p) + 1):
            v += lam[j - 1] * phi[h - j]
        phi.append(v)
        peak = max(peak, abs(v))
        if h >= floor and h >= window - 1:
            tail = np.abs(phi[-window:])
            if np.all(tail <= tail_tol * peak):
                return np.asarray(phi)
    raise LagDistributionError(f"lag weights did not decay within {max_horizon} periods; lambda(L) is not stable")


def mean_lag(phi: np.ndarray) -> float:
    phi = np.asarray(phi, dtype=float)
    total = phi.sum()
    if abs(total) <= 1e-12 * max(np.abs(phi).sum(), 1e-300) or total == 0.0:
        raise LagDistributionError("lag weights sum to zero; the lag distribution is undefined")
    return float(np.arange(phi.size) @ phi / total)


def mean_lag_closed_form(beta: Iterable[float], lam: Iterable[float]) -> float:
    """``B'(1)/B(1) + sum_j j*lam_j / (1 - sum_j lam_j)``, the mean lag of ``B(L)/lambda(L)``."""
    beta = np.asarray(list(beta), dtype=float)
    lam = np.asarray(list(lam), dtype=float)
    if beta.sum() == 0.0:
        raise LagDistributionError("sum of distributed-lag coefficients is zero")
    lam_sum = lam.sum()
    if lam_sum >= 1.0:
        raise NonstationaryError("mean lag needs sum(lambda) < 1", float(lam_sum))
    return float(np.arange(beta.size) @ beta / beta.sum() + np.arange(1, lam.size + 1) @ lam / (1.0 - lam_sum))


def half_life(phi: np.ndarray) -> int:
    """Last period, counted from impact (h = 0), at which the response is still at least half its peak.

    The peak is the first largest weight after orienting the series so its
    dominant weight is positive.  Returns 0 when the response falls below half
    the peak immediately after an impact-period peak.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.size == 0 or not np.any(phi):
        raise LagDistributionError("half-life undefined for an all-zero response")
    sign = np.sign(phi[np.argmax(np.abs(phi))])
    psi = sign * phi
    peak_at = int(np.argmax(psi))
    half = psi[peak_at] / 2.0
    below = np.flatnonzero(psi[peak_at + 1 :] < half)
    if below.size == 0:
        raise LagDistributionError("response never falls below half its peak within the horizon")
    return int(peak_at + below[0])


@dataclass
class DynamicsSummary:
    net_sr: tuple[float, float]
    long_run: tuple[float, float]
    phi: np.ndarray
    rho: np.ndarray
    mean_lag: float
    half_life: int
    horizon: int
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "net_short_run": {"value": self.net_sr[0], "se": self.net_sr[1]},
            "long_run": {"value": self.long_run[0], "se": self.long_run[1]},
            "mean_lag": self.mean_lag,
            "half_life": self.half_life,
            "horizon": self.horizon,
            "notes": self.notes,
        }

    def lag_profile(self) -> pd.DataFrame:
        return pd.DataFrame({"h": np.arange(self.phi.size), "phi": self.phi, "rho": self.rho})


def distributed_lag(
    fit: FitResult,
    num_group: str = "policy_interactions",
    lag_y_group: str = "lagged_y",
    tail_tol: float = 1e-12,
) -> DynamicsSummary:
    beta = fit.coefficients[fit.group(num_group)].to_numpy()
    lam = fit.coefficients[fit.group(lag_y_group)].to_numpy() if fit.column_groups.get(lag_y_group) else np.array([])
    sr = net_short_run(fit, num_group)
    lr = long_run(fit, num_group, lag_y_group) if lam.size else sr
    phi = lag_weights(beta, lam, tail_tol)
    total = phi.sum()
    if abs(total) <= 1e-12:
        raise LagDistributionError("lag weights sum to zero; the lag distribution is undefined")
    notes = []
    if np.any(phi < 0):
        notes.append("negative lag weights (overshooting): mean lag is not a convex average")
        warnings.warn(notes[-1], stacklevel=2)
    return DynamicsSummary(sr, lr, phi, phi / total, mean_lag(phi), half_life(phi), phi.size - 1, notes)


# --------------------------------------------------------------------------- policy effects


def _pi_series(pi: CapacityPanel | pd.Series) -> pd.Series:
    series = pi.pi if isinstance(pi, CapacityPanel) else pi
    if series is None:
        raise ValueError("policy effects need industry-level proportions")
    return series


def _lagged_terms(q: pd.Series, pi: pd.Series, window: Iterable[int]) -> pd.DataFrame:
    """Table of ``q_t * pi_{s,t-1}`` indexed by policy-on quarter with one column per industry."""
    window = sorted(int(t) for t in window)
    wide = pi.unstack(level=0)  # quarters x industries
    lagged = wide.reindex([t - 1 for t in window])
    lagged.index = window
    qs = pd.Series(q).reindex(window).fillna(0.0)
    return lagged.mul(qs, axis=0)


def industry_policy_effect(
    beta1: float, q: pd.Series, pi: CapacityPanel | pd.Series, window: Iterable[int]
) -> dict:
    """``beta1 * mean over the window of q_t * pi_{s,t-1}`` per industry.

    Quarters where an industry has no lagged proportion are skipped; industries
    absent throughout the window are omitted with a warning.
    """
    terms = _lagged_terms(q, _pi_series(pi), window)
    out = {}
    for s in terms.columns:
        col = terms[s].dropna()
        if col.empty:
            warnings.warn(f"industry {s!r} absent throughout the policy window; omitted", stacklevel=2)
            continue
        out[s] = float(beta1 * col.mean())
    return out


def normalize_weights(weights: Mapping) -> dict:
    total = float(sum(weights.values()))
    if total == 0.0:
        raise ValueError("industry weights are all zero")
    return {s: float(w) / total for s, w in weights.items()}


def national_policy_effect(
    beta1: float, q: pd.Series, pi: CapacityPanel | pd.Series, window: Iterable[int], weights: Mapping
) -> float:
    """``beta1 * mean_t q_t * sum_s w_s pi_{s,t-1}`` with weights normalised to one."""
    w = normalize_weights(weights)
    terms = _lagged_terms(q, _pi_series(pi), window)
    missing = [s for s in w if s not in terms.columns]
    if missing:
        raise KeyError(f"no proportions for weighted industries {missing}")
    combined = sum(w[s] * terms[s] for s in w)
    return float(beta1 * combined.mean())


def industry_weights(ds: PanelDataset, kind: str = "equal", column: str | None = None) -> dict:
    """Industry shares: ``equal``, or the average of ``column`` (employment, assets) per industry."""
    fi = firm_industry(ds)
    industries = sorted(fi.unique(), key=str)
    if kind == "equal":
        return {s: 1.0 / len(industries) for s in industries}
    if kind not in ("employment", "size"):
        raise ValueError(f"unknown weight kind {kind!r}")
    if column is None:
        raise ValueError(f"{kind} weights need a column to average")
    avg = ds.frame.assign(industry_=ds.frame["firm"].map(fi)).groupby("industry_")[column].mean()
    return normalize_weights(avg.to_dict())


@dataclass
class PolicyEffectReport:
    per_industry: dict
    national: float
    weights: dict
    kind: str

    def to_dict(self) -> dict:
        return {
            "per_industry": {str(k): v for k, v in self.per_industry.items()},
            "national": self.national,
            "weights": {str(k): v for k, v in self.weights.items()},
            "weight_kind": self.kind,
        }


def policy_effect_report(
    beta1: float,
    q: pd.Series,
    pi: CapacityPanel | pd.Series,
    window: Iterable[int],
    weights: Mapping,
    kind: str = "custom",
) -> PolicyEffectReport:
    window = list(window)
    w = normalize_weights(weights)
    return PolicyEffectReport(
        industry_policy_effect(beta1, q, pi, window),
        national_policy_effect(beta1, q, pi, window, w),
        w,
        kind,
    )


def effect_bars(report: PolicyEffectReport, ds: PanelDataset) -> pd.DataFrame:
    """Industry effects ordered from highest to lowest median leverage (averaged over time)."""
    fi = firm_industry(ds)
    med = (
        ds.frame.assign(industry_=ds.frame["firm"].map(fi))
        .groupby(["industry_", "quarter"])["y"]
        .median()
        .groupby(level=0)
        .mean()
    )
    frame = pd.DataFrame(
        {"industry": list(report.per_industry), "effect": list(report.per_industry.values())}
    )
    frame["median_leverage"] = frame["industry"].map(med)
    return frame.sort_values(["median_leverage", "industry"], ascending=[False, True]).reset_index(drop=True)


# --------------------------------------------------------------------------- F test


def joint_f_test(restricted: FitResult, unrestricted: FitResult, q: int) -> tuple[float, int, int]:
    """Chow-type F statistic ``((SSR_r - SSR_u) / q) / (SSR_u / dof_u)``."""
    if restricted.nobs != unrestricted.nobs:
        raise NestingError("restricted and unrestricted fits use different samples")
    diff = restricted.ssr - unrestricted.ssr
    if diff < -1e-9 * max(unrestricted.ssr, 1e-300):
        raise NestingError(f"restricted SSR is below the unrestricted SSR by {-diff:.3e}; models are not nested")
    F = max(diff, 0.0) / q / (unrestricted.ssr / unrestricted.dof)
    return float(F), int(q), int(unrestricted.dof)


def f_pvalue(F: float, dof_num: int, dof_den: int) -> float:
    return float(stats.f.sf(F, dof_num, dof_den))
