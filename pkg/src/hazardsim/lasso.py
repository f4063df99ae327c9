"""L1-penalized logistic regression for covariate screening.

Fits a geometric path of shrinkage values from the saturation point down,
scores each one by randomized k-fold hold-out AUC, and picks the working
covariate set with either the AUC-maximizing shrinkage or the most
shrunken value whose AUC stays within one standard deviation of the best.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import StandardizedDesign
from .errors import ConvergenceError, ValidationError
from .kernels import lasso_irls_cd
from .rng import stable_seed
from .validation import auc, make_folds

__all__ = [
    "LassoPath",
    "SelectionResult",
    "soft_threshold",
    "fit_lasso_logistic",
    "lambda_max",
    "lasso_path_cv",
    "select_covariates",
]

DEFAULT_PATH_LENGTH = 100
LAMBDA_FLOOR_RATIO = 1e-4
COEF_TOL = 1e-7
MAX_OUTER = 10_000


def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0); gamma must be nonnegative."""
    if gamma < 0:
        raise ValidationError(f"threshold must be nonnegative, got {gamma}")
    return float(np.sign(z) * max(abs(z) - gamma, 0.0))


def lambda_max(matrix: np.ndarray, labels: np.ndarray) -> float:
    """Smallest shrinkage at which every penalized coefficient is zero:
    max_j |x_j'(y - mean(y))| / n for a standardized matrix."""
    y = np.asarray(labels, dtype=np.float64)
    resid = y - y.mean()
    return float(np.max(np.abs(matrix.T @ resid)) / len(y))


def fit_lasso_logistic(
    design: StandardizedDesign,
    labels,
    lam: float,
    init=None,
    tol: float = COEF_TOL,
    max_outer: int = MAX_OUTER,
) -> np.ndarray:
    """One penalized fit at a single shrinkage value.

    Returns the coefficient vector [intercept, beta_1..beta_m]; the
    intercept is unpenalized. ``init`` warm-starts the solver with a
    vector of the same layout.
    """
    if lam < 0:
        raise ValidationError(f"shrinkage must be nonnegative, got {lam}")
    X = design.matrix
    y = np.asarray(labels, dtype=np.float64)
    if len(y) != X.shape[0]:
        raise ValidationError("labels are not aligned with the design")
    if init is None:
        beta0, b0 = np.zeros(X.shape[1]), 0.0
    else:
        init = np.asarray(init, dtype=np.float64)
        beta0, b0 = init[1:].copy(), float(init[0])
    beta, b0, _iters, delta, converged = lasso_irls_cd(
        X, y, float(lam), beta0, b0, tol, max_outer
    )
    if not converged:
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_outer} outer iterations "
            f"(last coefficient delta {delta:.3e})",
            last_delta=float(delta),
        )
    return np.concatenate(([b0], beta))


@dataclass(frozen=True)
class LassoPath:
    """Full-data coefficients and cross-validated AUC along the path."""

    lambdas: np.ndarray
    coefficients: np.ndarray  # one row per lambda: [intercept, betas]
    cv_auc_mean: np.ndarray
    cv_auc_sd: np.ndarray
    nonzero_counts: np.ndarray
    column_names: tuple[str, ...]
    seed: int
    n_folds: int


@dataclass(frozen=True)
class SelectionResult:
    lambda_: float
    names: tuple[str, ...]
    rule: str
    path_index: int

    def __post_init__(self):
        if not self.names:
            raise ValidationError("selection produced an empty covariate set")


def _path_lambdas(lam_max: float, length: int) -> np.ndarray:
    if length < 1:
        raise ValidationError(f"path length must be positive, got {length}")
    if length == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, lam_max * LAMBDA_FLOOR_RATIO, length)


def _warm_path(X_design: StandardizedDesign, y, lambdas) -> np.ndarray:
    coefs = np.empty((len(lambdas), X_design.matrix.shape[1] + 1))
    prev = None
    for i, lam in enumerate(lambdas):
        prev = fit_lasso_logistic(X_design, y, lam, init=prev)
        coefs[i] = prev
    return coefs


def _design_rows(design: StandardizedDesign, rows: np.ndarray) -> StandardizedDesign:
    return StandardizedDesign(
        matrix=design.matrix[rows],
        column_names=design.column_names,
        scaler=design.scaler,
        extrapolated=design.extrapolated[rows],
    )


def lasso_path_cv(
    design: StandardizedDesign,
    labels,
    path_length: int = DEFAULT_PATH_LENGTH,
    n_folds: int = 10,
    seed: int = 0,
) -> LassoPath:
    """Pathwise fit plus purely random k-fold hold-out AUC per shrinkage.

    The path is geometric from the saturation point down to its 1e-4
    multiple. Fold membership is derived from the seed alone; per-fold
    path fits warm-start from the previous shrinkage value. Folds whose
    held-out part contains a single class contribute no AUC value.
    """
    y = np.asarray(labels, dtype=np.float64)
    n = len(y)
    if n < n_folds:
        raise ValidationError(f"need at least {n_folds} units, got {n}")
    lambdas = _path_lambdas(lambda_max(design.matrix, y), path_length)
    coefs = _warm_path(design, y, lambdas)

    plan = make_folds(n, k=n_folds, seed=stable_seed(seed, "lasso-folds"), labels=y)
    fold_aucs = np.full((n_folds, len(lambdas)), np.nan)
    for f in range(1, n_folds + 1):
        train_idx = plan.train_indices(f)
        test_idx = plan.fold_indices(f)
        test_y = y[test_idx]
        if test_y.min() == test_y.max():
            continue
        train_design = _design_rows(design, train_idx)
        X_test = design.matrix[test_idx]
        prev = None
        for i, lam in enumerate(lambdas):
            prev = fit_lasso_logistic(train_design, y[train_idx], lam, init=prev)
            scores = X_test @ prev[1:] + prev[0]
            fold_aucs[f - 1, i] = auc(scores, test_y)
    if np.isnan(fold_aucs).all(axis=0).any():
        raise ValidationError("no fold had both classes held out; cannot score the path")
    cv_mean = np.nanmean(fold_aucs, axis=0)
    with np.errstate(invalid="ignore"):
        cv_sd = np.nanstd(fold_aucs, axis=0, ddof=1)
    return LassoPath(
        lambdas=lambdas,
        coefficients=coefs,
        cv_auc_mean=cv_mean,
        cv_auc_sd=np.nan_to_num(cv_sd),
        nonzero_counts=(coefs[:, 1:] != 0.0).sum(axis=1),
        column_names=design.column_names,
        seed=seed,
        n_folds=n_folds,
    )


def select_covariates(path: LassoPath, rule: str = "conservative") -> SelectionResult:
    """Pick the working shrinkage value and its surviving covariates.

    "max-auc" takes the shrinkage with the best mean hold-out AUC.
    "conservative" takes the largest shrinkage whose mean AUC is within
    one standard deviation of the best, restricted to shrinkages that
    keep at least one covariate.
    """
    if rule not in ("conservative", "max-auc"):
        raise ValidationError(f"unknown selection rule {rule!r}")
    if len(path.lambdas) == 0:
        raise ValidationError("empty path")
    has_support = path.nonzero_counts > 0
    if not has_support.any():
        raise ValidationError("no shrinkage value keeps a covariate; cannot select")
    best = int(np.argmax(path.cv_auc_mean))
    if rule == "max-auc":
        idx = best
        if not has_support[idx]:
            idx = int(np.flatnonzero(has_support)[0])
    else:
        threshold = path.cv_auc_mean[best] - path.cv_auc_sd[best]
        eligible = (path.cv_auc_mean >= threshold) & has_support
        if eligible.any():
            idx = int(np.flatnonzero(eligible)[0])  # lambdas decrease along the path
        else:
            idx = int(np.flatnonzero(has_support)[0])
    names = tuple(
        name
        for name, coef in zip(path.column_names, path.coefficients[idx, 1:])
        if coef != 0.0
    )
    return SelectionResult(
        lambda_=float(path.lambdas[idx]), names=names, rule=rule, path_index=idx
    )
