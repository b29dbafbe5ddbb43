"""Least squares on an absorbed design with classical, HC1 or firm-clustered covariance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats

from .design import DesignMatrix
from .errors import EstimationError

VCOV_KINDS = ("classical", "hetero_robust", "cluster_by_firm")


@dataclass(frozen=True)
class FitResult:
    coefficients: pd.Series
    vcov: pd.DataFrame
    ssr: float
    nobs: int
    n_firms: int
    n_quarters: int
    dof: int
    residuals: np.ndarray
    vcov_kind: str
    column_groups: dict[str, list[str]] = field(default_factory=dict)
    spec_echo: dict = field(default_factory=dict)
    design: DesignMatrix | None = None

    @property
    def labels(self) -> list[str]:
        return list(self.coefficients.index)

    @property
    def std_errors(self) -> pd.Series:
        return pd.Series(np.sqrt(np.clip(np.diag(self.vcov.to_numpy()), 0, None)), index=self.coefficients.index)

    @property
    def tvalues(self) -> pd.Series:
        return self.coefficients / self.std_errors

    @property
    def pvalues(self) -> pd.Series:
        return pd.Series(2 * stats.t.sf(np.abs(self.tvalues), self.dof), index=self.coefficients.index)

    def group(self, name: str) -> list[str]:
        if name in self.column_groups:
            return list(self.column_groups[name])
        if name in self.coefficients.index:
            return [name]
        raise KeyError(f"unknown coefficient group {name!r}")

    def to_dict(self, include_vcov: bool = False) -> dict:
        out = {
            "coefficients": self.coefficients.to_dict(),
            "std_errors": self.std_errors.to_dict(),
            "ssr": self.ssr,
            "nobs": self.nobs,
            "n_firms": self.n_firms,
            "n_quarters": self.n_quarters,
            "dof": self.dof,
            "vcov_kind": self.vcov_kind,
            "column_groups": self.column_groups,
            "spec": self.spec_echo,
        }
        if include_vcov:
            out["vcov"] = {"labels": self.labels, "matrix": self.vcov.to_numpy().tolist()}
        return out

    def table(self, title: str = "") -> str:
        return regression_table({title or "estimate": self})


def _stars(p: float) -> str:
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.10 else ""


def regression_table(fits: dict[str, FitResult], digits: int = 4) -> str:
    """Coefficients with significance stars, standard errors in parentheses beneath."""
    labels: list[str] = []
    for fit in fits.values():
        labels += [lab for lab in fit.labels if lab not in labels]
    width = max([len(lab) for lab in labels] + [12])
    colw = max([len(k) for k in fits] + [digits + 8])
    lines = [" " * width + "".join(k.rjust(colw + 2) for k in fits)]
    lines.append("-" * len(lines[0]))
    for lab in labels:
        coef_cells, se_cells = [], []
        for fit in fits.values():
            if lab in fit.coefficients.index:
                coef_cells.append(f"{fit.coefficients[lab]:.{digits}f}{_stars(fit.pvalues[lab])}")
                se_cells.append(f"({fit.std_errors[lab]:.{digits}f})")
            else:
                coef_cells.append("")
                se_cells.append("")
        lines.append(lab.ljust(width) + "".join(c.rjust(colw + 2) for c in coef_cells))
        lines.append(" " * width + "".join(c.rjust(colw + 2) for c in se_cells))
    lines.append("-" * len(lines[0]))
    for name, getter in (("Observations", lambda f: f.nobs), ("Firms", lambda f: f.n_firms)):
        lines.append(name.ljust(width) + "".join(str(getter(f)).rjust(colw + 2) for f in fits.values()))
    lines.append("SSR".ljust(width) + "".join(f"{f.ssr:.6g}".rjust(colw + 2) for f in fits.values()))
    lines.append("Standard errors: " + ", ".join(sorted({f.vcov_kind for f in fits.values()})))
    lines.append("*** p<0.01, ** p<0.05, * p<0.1")
    return "\n".join(lines)


def fit_ols(
    dm: DesignMatrix,
    vcov_kind: str = "cluster_by_firm",
    spec_echo: dict | None = None,
    rank_tol: float = 1e-10,
) -> FitResult:
    """OLS through a column-pivoted QR decomposition.

    On an absorbed design the firm and quarter effects count as estimated
    parameters (``n_firms + n_quarters - 1`` of them) in the residual degrees of
    freedom.
    """
    if vcov_kind not in VCOV_KINDS:
        raise ValueError(f"vcov_kind must be one of {VCOV_KINDS}")
    X, y = dm.regressors, dm.response
    n, k = X.shape
    if k == 0:
        raise EstimationError("design has no regressors")
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rank_tol * diag[0])) if diag[0] > 0 else 0
    if rank < k:
        dependent = [dm.labels[j] for j in piv[rank:]]
        raise EstimationError(f"design is rank deficient; linearly dependent columns: {dependent}")
    b = np.empty(k)
    b[piv] = scipy.linalg.solve_triangular(R, Q.T @ y)
    resid = y - X @ b
    ssr = float(resid @ resid)

    absorbed = dm.n_firms + dm.n_quarters - 1 if dm.absorbed else 0
    dof = n - k - absorbed
    if dof <= 0:
        raise EstimationError(f"no residual degrees of freedom (n={n}, k={k}, absorbed={absorbed})")
    Rinv = scipy.linalg.solve_triangular(R, np.eye(k))
    bread = np.empty((k, k))
    bread[np.ix_(piv, piv)] = Rinv @ Rinv.T

    if vcov_kind == "classical":
        V = bread * (ssr / dof)
    elif vcov_kind == "hetero_robust":
        Xe = X * resid[:, None]
        V = bread @ (Xe.T @ Xe) @ bread * (n / dof)
    else:
        uniq, codes = np.unique(dm.row_firm, return_inverse=True)
        G = uniq.size
        scores = np.zeros((G, k))
        np.add.at(scores, codes, X * resid[:, None])
        factor = (G / (G - 1)) * ((n - 1) / dof) if G > 1 else 1.0
        V = bread @ (scores.T @ scores) @ bread * factor
    V = (V + V.T) / 2
    labels = list(dm.labels)
    return FitResult(
        coefficients=pd.Series(b, index=labels),
        vcov=pd.DataFrame(V, index=labels, columns=labels),
        ssr=ssr,
        nobs=n,
        n_firms=dm.n_firms,
        n_quarters=dm.n_quarters,
        dof=dof,
        residuals=resid,
        vcov_kind=vcov_kind,
        column_groups={g: list(v) for g, v in dm.column_groups.items()},
        spec_echo=dict(spec_echo or {}),
        design=dm,
    )


def numerical_gradient(g: Callable[[np.ndarray], float], b: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``rel_step * max(1, |b_j|)``."""
    b = np.asarray(b, dtype=float)
    grad = np.empty_like(b)
    for j in range(b.size):
        h = rel_step * max(1.0, abs(b[j]))
        up, dn = b.copy(), b.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (g(up) - g(dn)) / (2 * h)
    return grad


def delta_method(
    fit: FitResult,
    g: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray] | None = None,
    check: bool = False,
    check_tol: float = 1e-5,
) -> tuple[float, float]:
    """Value and standard error of ``g(b)`` using ``grad(b)' V grad(b)``.

    Without an analytic ``grad`` the gradient is taken by central differences.
    With ``check=True`` the analytic gradient is compared to central differences
    and a relative mismatch above ``check_tol`` raises.
    """
    b = fit.coefficients.to_numpy()
    value = float(g(b))
    d = np.asarray(grad(b), dtype=float) if grad is not None else numerical_gradient(g, b)
    if check and grad is not None:
        fd = numerical_gradient(g, b)
        scale = max(np.linalg.norm(fd), np.finfo(float).tiny)
        if np.linalg.norm(d - fd) / scale > check_tol:
            raise EstimationError(f"analytic gradient disagrees with finite differences ({np.linalg.norm(d - fd) / scale:.2e})")
    var = float(d @ fit.vcov.to_numpy() @ d)
    return value, float(np.sqrt(max(var, 0.0)))
