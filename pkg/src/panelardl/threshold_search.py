"""SSR-minimising grid search over the quantile thresholds.

Two evaluation routes give the same surface:

``method="rebuild"``
    rebuild the design at every grid point, absorb, fit, record the SSR.
``method="fwl"`` (default)
    only the proportion columns change with gamma, so firm/quarter effects and
    every threshold-free regressor are partialled out once (Frisch-Waugh-Lovell).
    Each gamma then costs one projection of its own few columns, and each
    (gamma_pre, gamma_post) pair a small dense solve assembled from cached
    cross-products.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd
import scipy.linalg

from .debt_capacity import ThresholdParams, proportion_grid
from .design import DesignLayout, ModelSpec, TwoWayProjector, absorb_two_way, design_layout
from .errors import EstimationError, SearchError
from .estimator import fit_ols
from .panel_io import PanelDataset


@dataclass(frozen=True)
class GridSpec:
    lo: float = 0.25
    hi: float = 0.90
    step: float = 0.01
    mode: str = "single"

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("grid needs lo < hi")
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        if self.mode not in ("single", "two"):
            raise ValueError("mode must be 'single' or 'two'")

    def points(self) -> np.ndarray:
        n = int(round((self.hi - self.lo) / self.step)) + 1
        return np.round(self.lo + self.step * np.arange(n), 10)


@dataclass
class GridResult:
    best: ThresholdParams
    min_ssr: float
    ssr_surface: pd.DataFrame
    ties: list[tuple[float, float]]
    mode: str
    method: str = "fwl"
    warnings: list[str] = field(default_factory=list)

    @property
    def n_degenerate(self) -> int:
        return int(self.ssr_surface["degenerate"].sum())

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "best": self.best.to_dict(),
            "min_ssr": self.min_ssr,
            "ties": [list(t) for t in self.ties],
            "n_points": int(len(self.ssr_surface)),
            "n_degenerate": self.n_degenerate,
            "method": self.method,
        }

    def surface_csv(self, path: str | Path) -> None:
        frame = self.ssr_surface[["gamma_pre", "gamma_post", "ssr"]]
        frame.to_csv(path, index=False, float_format="%.12g")


def _degenerate(pi: np.ndarray, used: np.ndarray) -> bool:
    vals = pi[used]
    return bool(np.all(vals == 0.0) or np.all(vals == 1.0))


def _solve_ssr(ee: float, XX: np.ndarray, Xe: np.ndarray, norms2: np.ndarray, tol: float = 1e-10) -> float:
    d = np.diag(XX)
    if np.any(d <= (tol**2) * norms2) or np.any(d <= 0):
        return np.inf
    s = 1.0 / np.sqrt(d)
    C = XX * s[:, None] * s[None, :]
    try:
        cho = scipy.linalg.cho_factor(C)
    except np.linalg.LinAlgError:
        return np.inf
    if np.min(np.diag(cho[0])) ** 2 < 1e-12:
        return np.inf
    z = Xe * s
    return float(ee - z @ scipy.linalg.cho_solve(cho, z))


class _FWLSurface:
    """Cached cross-products for the Frisch-Waugh evaluation of the SSR surface."""

    def __init__(self, layout: DesignLayout, pis: np.ndarray, threads: int = 1, chunk: int = 8):
        self.layout = layout
        self.pis = np.nan_to_num(pis)
        self.L = len(layout.lag_cells)
        self.K = len(layout.spec.policies)
        self.C = pis.shape[1]
        proj = TwoWayProjector(layout.row_firm, layout.row_quarter)
        self._proj = proj
        Z = proj(layout.fixed)
        if Z.shape[1]:
            Qz, Rz, _ = scipy.linalg.qr(Z, mode="economic", pivoting=True)
            dz = np.abs(np.diag(Rz))
            rank = int(np.sum(dz > 1e-10 * max(dz[0], 1e-300))) if dz.size else 0
            self._Qz = Qz[:, :rank]
        else:
            self._Qz = Z
        ytil = self._annihilate(proj(layout.y[:, None]))[:, 0]
        self.e = ytil
        self.ee = float(ytil @ ytil)

        G = len(pis)
        m_pre, m_post = self.L, self.L * self.K
        self.PP = np.empty((G, m_pre, m_pre))
        self.QQ = np.empty((G, m_post, m_post))
        self.PQ = np.empty((G, m_pre, m_post))
        self.Pe = np.empty((G, m_pre))
        self.Qe = np.empty((G, m_post))
        self.norm_pre = np.empty((G, m_pre))
        self.norm_post = np.empty((G, m_post))
        self.H = np.empty((G, self.L, self.C, m_post))
        chunks = [range(i, min(i + chunk, G)) for i in range(0, G, chunk)]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(self._fill, chunks))
        else:
            for c in chunks:
                self._fill(c)

    def _annihilate(self, A: np.ndarray) -> np.ndarray:
        if self._Qz.shape[1]:
            A = A - self._Qz @ (self._Qz.T @ A)
        return A

    def _fill(self, idx: range) -> None:
        m_pre = self.L
        blocks = []
        for g in idx:
            pre, post = self.layout.threshold_columns(self.pis[g], self.pis[g])
            self.norm_pre[g] = np.sum(pre**2, axis=0)
            self.norm_post[g] = np.sum(post**2, axis=0)
            blocks.append(np.hstack([pre, post]))
        A = self._annihilate(self._proj(np.hstack(blocks)))
        width = m_pre * (1 + self.K)
        for j, g in enumerate(idx):
            Ag = A[:, j * width : (j + 1) * width]
            Ap, Aq = Ag[:, :m_pre], Ag[:, m_pre:]
            self.PP[g] = Ap.T @ Ap
            self.QQ[g] = Aq.T @ Aq
            self.PQ[g] = Ap.T @ Aq
            self.Pe[g] = Ap.T @ self.e
            self.Qe[g] = Aq.T @ self.e
            for l, cells in enumerate(self.layout.lag_cells):
                for k in range(Aq.shape[1]):
                    self.H[g, l, :, k] = np.bincount(cells, weights=Aq[:, k], minlength=self.C)

    def ssr(self, g_pre: int, g_post: int) -> float:
        if g_pre == g_post:
            PQ = self.PQ[g_pre]
        else:
            # pre column l of g_pre against absorbed post columns of g_post
            PQ = np.einsum("c,lck->lk", self.pis[g_pre], self.H[g_post])
        XX = np.block([[self.PP[g_pre], PQ], [PQ.T, self.QQ[g_post]]])
        Xe = np.r_[self.Pe[g_pre], self.Qe[g_post]]
        norms2 = np.r_[self.norm_pre[g_pre], self.norm_post[g_post]]
        return _solve_ssr(self.ee, XX, Xe, norms2)


def _rebuild_ssr(layout: DesignLayout, pi_pre: np.ndarray, pi_post: np.ndarray) -> float:
    import warnings

    dm = layout.assemble(pi_pre, pi_post)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dm = absorb_two_way(dm)
    needed = layout.pi_labels() + [lab for name in layout.spec.policies for lab in layout.policy_labels(name)]
    if any(lab not in dm.labels for lab in needed):
        return np.inf
    try:
        return fit_ols(dm, vcov_kind="classical").ssr
    except EstimationError:
        return np.inf


def grid_search(
    ds: PanelDataset,
    q: Mapping[str, pd.Series],
    spec: ModelSpec,
    grid: GridSpec = GridSpec(),
    macro: Mapping[str, pd.Series] | None = None,
    method: str = "fwl",
    threads: int = 1,
    tie_tol: float = 1e-12,
    layout: DesignLayout | None = None,
) -> GridResult:
    """Minimise the absorbed-system SSR over the threshold grid.

    In ``"two"`` mode every (gamma_pre, gamma_post) pair is evaluated; in
    ``"single"`` mode only the diagonal.  Grid points whose proportions are
    identically 0 or 1, or whose design is rank deficient, get ``SSR = inf`` and
    are flagged; a degenerate lower bound is an error.
    """
    layout = layout or design_layout(ds, q, spec, macro)
    gammas = grid.points()
    pis = proportion_grid(ds, gammas, layout.cells).reshape(len(gammas), -1)
    used = np.unique(np.concatenate(layout.lag_cells))
    degenerate = np.array([_degenerate(p, used) for p in pis])
    if degenerate[0]:
        raise SearchError(
            f"proportions are identically 0 or 1 at the lower grid bound {gammas[0]}; raise the bound"
        )

    if grid.mode == "single":
        pairs = [(g, g) for g in range(len(gammas))]
    else:
        pairs = [(a, b) for a in range(len(gammas)) for b in range(len(gammas))]

    if method == "fwl":
        surface = _FWLSurface(layout, pis, threads=threads)
        ssr = np.array([surface.ssr(a, b) for a, b in pairs])
    elif method == "rebuild":
        def one(pair):
            return _rebuild_ssr(layout, pis[pair[0]], pis[pair[1]])

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                ssr = np.array(list(pool.map(one, pairs)))
        else:
            ssr = np.array([one(p) for p in pairs])
    else:
        raise ValueError(f"unknown grid method {method!r}")

    flags = np.array([degenerate[a] or degenerate[b] or not np.isfinite(s) for (a, b), s in zip(pairs, ssr)])
    ssr = np.where(flags, np.inf, ssr)
    if not np.isfinite(ssr).any():
        raise SearchError("every grid point is degenerate")
    k = int(np.argmin(ssr))
    min_ssr = float(ssr[k])
    tie_idx = np.flatnonzero(ssr <= min_ssr + tie_tol * abs(min_ssr))
    frame = pd.DataFrame(
        {
            "gamma_pre": [float(gammas[a]) for a, _ in pairs],
            "gamma_post": [float(gammas[b]) for _, b in pairs],
            "ssr": ssr,
            "degenerate": flags,
        }
    )
    best = ThresholdParams(float(gammas[pairs[k][0]]), float(gammas[pairs[k][1]]))
    ties = [(float(gammas[pairs[i][0]]), float(gammas[pairs[i][1]])) for i in tie_idx]
    notes = []
    if len(ties) > 1:
        notes.append(f"{len(ties)} grid points within relative {tie_tol:g} of the minimum")
    return GridResult(best, min_ssr, frame, ties, grid.mode, method, notes)


def grid_result_json(result: GridResult) -> str:
    return json.dumps(result.to_dict(), indent=2)
