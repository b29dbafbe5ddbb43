"""Synthetic panels generated from the threshold PanARDL model itself.

The simulated proportions are computed with the same quantile and strict
inequality code the estimator uses, over the firms observed in each quarter, so
an estimator run on the output sees exactly the regressors that generated it.
Leverage is not clamped to [0, 1]: the model is linear and clamping would bias
recovery checks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .debt_capacity import PolicySeries, cross_section_proportions, scale_policy, write_policy
from .errors import StabilityError
from .panel_io import PanelDataset, quarter_label, write_panel


@dataclass(frozen=True)
class DgpConfig:
    n_firms: int = 500
    n_industries: int = 6
    n_quarters: int = 40
    burn_in: int = 20
    first_quarter: int = 4 * 2000
    policy_window: tuple[int, int] | None = None  # offsets into the observed quarters, inclusive
    policy_name: str = "lsap"
    dynamics: str = "panardl"
    lam: tuple[float, ...] = (0.5,)
    beta0: tuple[float, ...] = (0.3, 0.0)
    beta1: tuple[float, ...] = (0.2, 0.1)
    gamma_pre: float = 0.6
    gamma_post: float = 0.6
    phi: tuple[float, ...] | None = None  # industry loadings on the trend, sum to zero
    phi_scale: float = 0.02
    xi_coef: float = 0.02  # observed industry shock
    xi_rho: float = 0.7
    xi_sd: float = 1.0
    x_coef: float = 0.02  # observed firm-level control
    x_rho: float = 0.5
    level_mean: float = 0.3
    industry_sd: float = 0.08
    firm_sd: float = 0.10
    time_sd: float = 0.01
    error_sd: float = 0.02
    unbalanced: bool = False
    exit_hazard: float = 0.04
    entry_span: float = 0.5  # entry quarters drawn from the first ``entry_span`` share of the sample
    min_run: int = 8
    seed: int = 0

    def __post_init__(self):
        if sum(self.lam) >= 1.0:
            raise ValueError("sum(lam) must be below one")
        for g in (self.gamma_pre, self.gamma_post):
            if not 0.25 <= g <= 0.9:
                raise ValueError("true thresholds must lie in [0.25, 0.9]")
        if self.phi is not None:
            if len(self.phi) != self.n_industries:
                raise ValueError("phi needs one loading per industry")
            if abs(sum(self.phi)) > 1e-12:
                raise ValueError("industry loadings must sum to zero")
        if len(self.beta0) != len(self.beta1):
            raise ValueError("beta0 and beta1 need the same number of lags")
        if self.dynamics == "panardl" and len(self.beta1) != len(self.lam) + 1:
            raise ValueError("PanARDL(p) needs p lags of y and p + 1 policy lags")
        if self.dynamics in ("partial_adjustment", "static") and len(self.beta1) != 1:
            raise ValueError(f"{self.dynamics} uses contemporaneous regressors only")
        if self.dynamics == "static" and any(self.lam):
            raise ValueError("static dynamics has no lagged dependent variable")
        lo, hi = self.window
        if not 0 <= lo <= hi < self.n_quarters:
            raise ValueError("policy window must lie inside the observed quarters")

    @property
    def window(self) -> tuple[int, int]:
        """Policy-on offsets; by default the stretch from 60% to 90% of the sample."""
        if self.policy_window is not None:
            return tuple(self.policy_window)
        return round(0.6 * self.n_quarters), round(0.9 * self.n_quarters) - 1

    @property
    def p(self) -> int:
        return len(self.beta1) - 1

    @property
    def controls(self) -> tuple[str, ...]:
        return ("xi", "x")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Simulation:
    panel: PanelDataset
    policy: PolicySeries
    truth: dict
    pi_pre: pd.Series = field(repr=False, default=None)
    pi_post: pd.Series = field(repr=False, default=None)

    @property
    def q(self) -> dict[str, pd.Series]:
        return {self.policy.name: scale_policy(self.policy)}

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"panel": out / "panel.csv", "policy": out / f"{self.policy.name}.csv", "truth": out / "truth.json"}
        write_panel(self.panel, paths["panel"])
        write_policy(self.policy, paths["policy"])
        paths["truth"].write_text(json.dumps(self.truth, indent=2, sort_keys=True) + "\n")
        return paths


def _presence(cfg: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    """Observed-quarter mask, shape (firms, quarters)."""
    N, T = cfg.n_firms, cfg.n_quarters
    mask = np.zeros((N, T), dtype=bool)
    if not cfg.unbalanced:
        mask[:] = True
        return mask
    run_min = min(cfg.min_run, T)
    latest = max(int(cfg.entry_span * T), 1)
    entry = rng.integers(0, latest, size=N)
    entry[: max(N // 10, 1)] = 0  # anchor the first sample quarter
    entry = np.minimum(entry, T - run_min)
    extra = rng.geometric(cfg.exit_hazard, size=N) - 1 if cfg.exit_hazard > 0 else np.full(N, T)
    length = np.minimum(run_min + extra, T - entry)
    for i in range(N):
        mask[i, entry[i] : entry[i] + length[i]] = True
    return mask


def simulate(cfg: DgpConfig) -> Simulation:
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    N, S, T, B = cfg.n_firms, cfg.n_industries, cfg.n_quarters, cfg.burn_in
    TT = B + T
    L = len(cfg.beta1)  # regressor lags 0..p
    lam = np.asarray(cfg.lam, dtype=float) if cfg.dynamics != "static" else np.zeros(0)
    beta0, beta1 = np.asarray(cfg.beta0, float), np.asarray(cfg.beta1, float)

    industry = np.sort(rng.integers(0, S, size=N))
    industry[:S] = np.arange(S)  # every industry populated
    industry = np.sort(industry)
    if cfg.phi is None:
        raw = rng.normal(size=S)
        phi = cfg.phi_scale * (raw - raw.mean()) / max(raw.std(), 1e-12)
    else:
        phi = np.asarray(cfg.phi, dtype=float)
    level = cfg.level_mean + cfg.industry_sd * rng.normal(size=S)[industry] + cfg.firm_sd * rng.normal(size=N)
    mu = level * (1.0 - lam.sum())
    delta = cfg.time_sd * rng.normal(size=TT)
    trend = (np.arange(TT) - B + 1) / T

    raw_policy = np.zeros(TT)
    lo, hi = cfg.window
    raw_policy[B + lo : B + hi + 1] = rng.lognormal(mean=0.0, sigma=0.3, size=hi - lo + 1)
    window = np.arange(B + lo, B + hi + 1)
    q = raw_policy / raw_policy[window].mean()

    xi = np.zeros((S, TT))
    x = np.zeros((N, TT))
    eps_xi = rng.normal(size=(S, TT))
    eps_x = rng.normal(size=(N, TT))
    for t in range(TT):
        prev_xi = xi[:, t - 1] if t else 0.0
        prev_x = x[:, t - 1] if t else 0.0
        xi[:, t] = cfg.xi_rho * prev_xi + cfg.xi_sd * np.sqrt(1 - cfg.xi_rho**2) * eps_xi[:, t]
        x[:, t] = cfg.x_rho * prev_x + np.sqrt(1 - cfg.x_rho**2) * eps_x[:, t]
    u = cfg.error_sd * rng.normal(size=(N, TT))

    present = np.ones((N, TT), dtype=bool)
    present[:, B:] = _presence(cfg, rng)

    y = np.zeros((N, TT))
    pi_pre = np.full((S, TT), np.nan)
    pi_post = np.full((S, TT), np.nan)
    for t in range(TT):
        v = mu + delta[t] + phi[industry] * trend[t] + cfg.xi_coef * xi[industry, t] + cfg.x_coef * x[:, t] + u[:, t]
        for j, lj in enumerate(lam, start=1):
            v = v + lj * (y[:, t - j] if t - j >= 0 else level)
        for l in range(L):
            tau = t - 1 - l
            if tau < 0:
                continue
            # an industry with no observed firms has no proportion; its latent firms get none
            pre = np.nan_to_num(pi_pre[industry, tau])
            post = np.nan_to_num(pi_post[industry, tau])
            v = v + beta0[l] * pre + beta1[l] * q[t - l] * post
        if not np.all(np.abs(v) <= 1e6):
            raise StabilityError(f"simulated leverage exceeded 1e6 in magnitude at step {t}")
        y[:, t] = v
        rows = present[:, t]
        pi_pre[:, t], pi_post[:, t] = cross_section_proportions(
            v[rows], industry[rows], S, [cfg.gamma_pre, cfg.gamma_post]
        )

    obs = present[:, B:]
    fi, ti = np.nonzero(obs)
    quarters = cfg.first_quarter + ti
    frame = pd.DataFrame(
        {
            "firm": [f"f{i:05d}" for i in fi],
            "industry": industry[fi] + 1,
            "quarter": quarters.astype(np.int64),
            "y": y[fi, B + ti],
            "xi": xi[industry[fi], B + ti],
            "x": x[fi, B + ti],
        }
    )
    frame = frame.sort_values(["firm", "quarter"], kind="mergesort").reset_index(drop=True)
    panel = PanelDataset(frame, cfg.controls)

    policy_quarters = cfg.first_quarter + np.arange(T)
    policy = PolicySeries.from_values(
        cfg.policy_name,
        dict(zip(policy_quarters.tolist(), raw_policy[B:].tolist())),
        (cfg.first_quarter + np.arange(lo, hi + 1)).tolist(),
    )

    idx = pd.MultiIndex.from_product([np.arange(S) + 1, cfg.first_quarter + np.arange(T)], names=["industry", "quarter"])
    truth = _truth(cfg, phi, lam, beta0, beta1)
    return Simulation(
        panel,
        policy,
        truth,
        pd.Series(pi_pre[:, B:].ravel(), index=idx, name="pi"),
        pd.Series(pi_post[:, B:].ravel(), index=idx, name="pi"),
    )


def _truth(cfg: DgpConfig, phi, lam, beta0, beta1) -> dict:
    P = len(beta1) - 1
    coefs = {f"y_l{j}": float(v) for j, v in enumerate(lam, start=1)}
    coefs.update({f"pi_pre_l{l}": float(v) for l, v in enumerate(beta0)})
    coefs.update({f"{cfg.policy_name}_x_pi_post_l{l}": float(v) for l, v in enumerate(beta1)})
    for l in range(P + 1):
        coefs[f"xi_l{l}"] = cfg.xi_coef if l == 0 else 0.0
        coefs[f"x_l{l}"] = cfg.x_coef if l == 0 else 0.0
    net_sr = float(beta1.sum())
    return {
        "config": cfg.to_dict(),
        "coefficients": coefs,
        "gamma_pre": cfg.gamma_pre,
        "gamma_post": cfg.gamma_post,
        "net_short_run": net_sr,
        "long_run": net_sr / (1.0 - float(lam.sum())),
        "industry_loadings": {str(s + 1): float(v) for s, v in enumerate(phi)},
        "policy_window": [quarter_label(cfg.first_quarter + k) for k in cfg.window],
    }
