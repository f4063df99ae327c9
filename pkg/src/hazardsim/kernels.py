"""Hot numeric kernels, numba-jitted with a pure-numpy fallback.

The two inner loops that dominate runtime live here: the cyclic
coordinate-descent solver for the L1-penalized logistic fits, and the
per-unit summarization of Monte Carlo probability draws. Each is written
once in a style that is valid both as plain numpy code and under
``numba.njit``; the jitted variant is used when numba imports cleanly and
``HAZARDSIM_NO_NUMBA`` is not set. ``benchmarks/bench_kernels.py`` times
the two paths against each other.
"""

import os

import numpy as np

__all__ = [
    "NUMBA_ACTIVE",
    "lasso_irls_cd",
    "lasso_irls_cd_numpy",
    "summarize_prob_rows",
    "summarize_prob_rows_numpy",
]


def _numba_requested() -> bool:
    flag = os.environ.get("HAZARDSIM_NO_NUMBA", "").strip().lower()
    return flag not in {"1", "true", "yes", "on"}


def _lasso_irls_cd(X, y, lam, beta_init, b0_init, tol, max_outer):
    """L1-penalized logistic regression by IRLS + cyclic coordinate descent.

    Minimizes (1/n)*sum(log(1+exp(eta)) - y*eta) + lam*sum(|beta_j|) with an
    unpenalized intercept. Each outer iteration rebuilds the weighted
    quadratic approximation at the current iterate; the inner loop runs
    coordinate sweeps on it until the updates stall.

    Returns (beta, b0, n_outer, last_delta, converged).
    """
    n, m = X.shape
    beta = beta_init.copy()
    b0 = b0_init
    eta = X @ beta + b0
    delta = np.inf
    converged = False
    n_outer = 0
    inner_tol = 0.1 * tol
    # tolerant threshold test: a score within rounding error of the
    # penalty boundary belongs to the zero solution
    lam_eff = lam * (1.0 + 1e-12)
    for outer in range(max_outer):
        n_outer = outer + 1
        p = 1.0 / (1.0 + np.exp(-eta))
        p = np.minimum(np.maximum(p, 1e-5), 1.0 - 1e-5)
        w = p * (1.0 - p)
        z = eta + (y - p) / w
        r = z - eta
        w_sum = w.sum()
        denom = np.empty(m)
        for j in range(m):
            denom[j] = (w * X[:, j] ** 2).sum() / n
        b0_ref = b0
        beta_ref = beta.copy()
        for _sweep in range(100):
            sweep_delta = 0.0
            db0 = (w * r).sum() / w_sum
            b0 += db0
            r -= db0
            if abs(db0) > sweep_delta:
                sweep_delta = abs(db0)
            for j in range(m):
                bj = beta[j]
                rho = (w * X[:, j] * r).sum() / n + denom[j] * bj
                if rho > lam:
                    bnew = (rho - lam) / denom[j]
                elif rho < -lam:
                    bnew = (rho + lam) / denom[j]
                else:
                    bnew = 0.0
                d = bnew - bj
                if d != 0.0:
                    beta[j] = bnew
                    r -= X[:, j] * d
                if abs(d) > sweep_delta:
                    sweep_delta = abs(d)
            if sweep_delta < inner_tol:
                break
        eta = z - r
        delta = abs(b0 - b0_ref)
        for j in range(m):
            dj = abs(beta[j] - beta_ref[j])
            if dj > delta:
                delta = dj
        if delta < tol:
            converged = True
            break
    return beta, b0, n_outer, delta, converged


def _summarize_prob_rows(S, q_lo, q_hi):
    """Per-row mean and two percentiles of a draws matrix.

    S has one row per unit and one column per Monte Carlo draw. Percentiles
    interpolate linearly between order statistics at rank q*(d-1), matching
    numpy's default definition.
    """
    n, d = S.shape
    mean = np.empty(n)
    lo = np.empty(n)
    hi = np.empty(n)
    r_lo = q_lo * (d - 1.0)
    r_hi = q_hi * (d - 1.0)
    k_lo = int(r_lo)
    g_lo = r_lo - k_lo
    k_hi = int(r_hi)
    g_hi = r_hi - k_hi
    for i in range(n):
        row = np.sort(S[i, :])
        mean[i] = row.sum() / d
        if k_lo + 1 < d:
            lo[i] = row[k_lo] + g_lo * (row[k_lo + 1] - row[k_lo])
        else:
            lo[i] = row[d - 1]
        if k_hi + 1 < d:
            hi[i] = row[k_hi] + g_hi * (row[k_hi + 1] - row[k_hi])
        else:
            hi[i] = row[d - 1]
    return mean, lo, hi


lasso_irls_cd_numpy = _lasso_irls_cd
summarize_prob_rows_numpy = _summarize_prob_rows

NUMBA_ACTIVE = False
if _numba_requested():
    try:
        from numba import njit

        NUMBA_ACTIVE = True
    except ImportError:
        NUMBA_ACTIVE = False

if NUMBA_ACTIVE:
    _jit = njit(cache=True, nogil=True)
    lasso_irls_cd = _jit(_lasso_irls_cd)
    summarize_prob_rows = _jit(_summarize_prob_rows)
else:
    lasso_irls_cd = _lasso_irls_cd
    summarize_prob_rows = _summarize_prob_rows
