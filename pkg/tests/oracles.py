"""Reference computations written independently of the package internals."""

import numpy as np


def dummy_ols(y, X, firm, quarter):
    """Coefficients on X from OLS with full firm and quarter dummy sets."""
    _, fcode = np.unique(firm, return_inverse=True)
    _, tcode = np.unique(quarter, return_inverse=True)
    F = np.eye(fcode.max() + 1)[fcode]
    T = np.eye(tcode.max() + 1)[tcode][:, 1:]
    Z = np.column_stack([X, F, T])
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    resid = y - Z @ coef
    return coef[: X.shape[1]], resid


def impulse_response(beta, lam, horizon):
    """Distributed-lag weights from powers of the companion matrix of lambda(L)."""
    beta = np.asarray(beta, float)
    lam = np.asarray(lam, float)
    p = max(lam.size, 1)
    A = np.zeros((p, p))
    A[0, : lam.size] = lam
    A[1:, :-1] = np.eye(p - 1)
    # response of y to a unit impulse in the input at h = 0
    e = np.zeros(horizon + 1)
    state = np.zeros(p)
    out = np.zeros(horizon + 1)
    for h in range(horizon + 1):
        state = A @ state
        state[0] += 1.0 if h == 0 else 0.0
        e[h] = state[0]
    for h in range(horizon + 1):
        out[h] = sum(beta[l] * e[h - l] for l in range(beta.size) if h - l >= 0)
    return out


def mean_lag_ardl2(beta, lam):
    """Closed-form mean lag of (b0 + b1 L + b2 L^2) / (1 - l1 L - l2 L^2)."""
    b0, b1, b2 = beta
    l1, l2 = lam
    return (b1 + 2 * b2) / (b0 + b1 + b2) + (l1 + 2 * l2) / (1 - l1 - l2)


def share_below(y, g):
    return float(np.mean(np.asarray(y) < g))
