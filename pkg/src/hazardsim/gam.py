"""Binomial additive model: linear effects plus first-order random-walk
smooths over binned covariates, fit by penalized Newton iteration.

The posterior over all coefficients is approximated by a Gaussian centered
at the penalized mode with covariance from the curvature there. Smoothing
precisions are chosen by maximizing the Laplace-approximate marginal
likelihood over a grid (empirical Bayes). Each smooth carries a sum-to-zero
constraint, applied by projecting onto the orthogonal complement of the
constant vector, so the intercept absorbs the overall level.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (
    EXTRAPOLATION_Z,
    Scaler,
    SlopeUnitTable,
    StandardizedDesign,
    apply_scaler,
    fit_scaler,
)
from .errors import ConvergenceError, ValidationError
from .rng import block_standard_normal

__all__ = [
    "GamSpec",
    "ModelStructure",
    "GamPosterior",
    "FittedModel",
    "HyperparameterSearch",
    "inverse_logit",
    "rw1_structure",
    "build_design",
    "prediction_matrix",
    "fit_mode",
    "select_hyperparameters",
    "sample_posterior",
    "fit_gam_model",
    "penalized_loglik",
    "penalized_grad",
]

DEFAULT_LOG_PRECISION_GRID = tuple(np.linspace(-2.0, 8.0, 15))

# standard normal 97.5% quantile, for Gaussian credible intervals
Z975 = 1.959963984540054


def inverse_logit(eta):
    """Logistic inverse link 1/(1+exp(-eta)); saturates cleanly in floats."""
    eta_arr = np.asarray(eta, dtype=np.float64)
    t = np.exp(-np.abs(eta_arr))
    out = np.where(eta_arr >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    if eta_arr.ndim == 0:
        return float(out)
    return out


def rw1_structure(n_classes: int) -> np.ndarray:
    """Quadratic-form matrix of first differences: D1' D1 for K classes."""
    d1 = np.diff(np.eye(n_classes), axis=0)
    return d1.T @ d1


def _sum_to_zero_basis(n_classes: int) -> np.ndarray:
    """Orthonormal basis of the subspace with zero class sum, K x (K-1)."""
    q, _ = np.linalg.qr(np.ones((n_classes, 1)), mode="complete")
    return np.ascontiguousarray(q[:, 1:])


@dataclass(frozen=True)
class GamSpec:
    """Model formula: which covariates enter linearly, which as smooths."""

    fixed: tuple[str, ...]
    smooths: tuple = ()
    fixed_precision: float = 1e-3
    intercept_precision: float = 0.0
    log_precision_grid: tuple = DEFAULT_LOG_PRECISION_GRID
    bin_mode: str = "width"

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(self.fixed))
        object.__setattr__(self, "smooths", tuple(self.smooths))
        smooth_names = [name for name, _bins in self.smooths]
        overlap = set(self.fixed) & set(smooth_names)
        if overlap:
            raise ValidationError(
                f"covariate(s) {sorted(overlap)} appear as both fixed and smooth terms"
            )
        if len(smooth_names) != len(set(smooth_names)):
            raise ValidationError("a covariate appears in two smooth terms")
        if not self.fixed and not self.smooths:
            raise ValidationError("model needs at least one fixed or smooth term")
        if len(self.log_precision_grid) == 0:
            raise ValidationError("log-precision grid is empty")

    @property
    def smooth_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.smooths)


@dataclass(frozen=True)
class ModelStructure:
    """Design matrices and penalty structure for one model formula.

    ``matrix`` lives in the full coefficient space (intercept, fixed
    effects, every smooth class value); ``reduced_matrix = matrix @ basis``
    removes the constrained directions and is what the optimizer sees.
    """

    spec: GamSpec
    scaler: Scaler
    matrix: np.ndarray
    basis: np.ndarray
    reduced_matrix: np.ndarray
    col_map: tuple
    smooth_structures: tuple
    n_fixed: int

    @property
    def p_full(self) -> int:
        return self.matrix.shape[1]

    @property
    def q_reduced(self) -> int:
        return self.reduced_matrix.shape[1]

    def penalty(self, taus) -> np.ndarray:
        """Prior precision in the reduced space for the given smoothing
        precisions, one per smooth term."""
        taus = np.asarray(taus, dtype=np.float64)
        if taus.shape != (len(self.spec.smooths),):
            raise ValidationError("need one smoothing precision per smooth term")
        q = self.q_reduced
        pen = np.zeros((q, q))
        pen[0, 0] = self.spec.intercept_precision
        for i in range(self.n_fixed):
            pen[1 + i, 1 + i] = self.spec.fixed_precision
        offset = 1 + self.n_fixed
        for tau, (_z, zrz) in zip(taus, self.smooth_structures):
            k = zrz.shape[0]
            pen[offset : offset + k, offset : offset + k] = tau * zrz
            offset += k
        return pen

    def prior_logdet(self, taus) -> float:
        """Log-determinant of the prior precision restricted to the
        penalized subspace (flat directions excluded)."""
        taus = np.asarray(taus, dtype=np.float64)
        total = 0.0
        if self.spec.intercept_precision > 0:
            total += np.log(self.spec.intercept_precision)
        if self.n_fixed and self.spec.fixed_precision > 0:
            total += self.n_fixed * np.log(self.spec.fixed_precision)
        for tau, (_z, zrz) in zip(taus, self.smooth_structures):
            sign, logdet = np.linalg.slogdet(zrz)
            if sign <= 0:
                raise ValidationError("smooth penalty block is not positive definite")
            total += zrz.shape[0] * np.log(tau) + logdet
        return float(total)


def _one_hot(classes: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(classes), n_classes))
    out[np.arange(len(classes)), classes - 1] = 1.0
    return out


def build_design(
    spec: GamSpec, design: StandardizedDesign, table: SlopeUnitTable
) -> ModelStructure:
    """Assemble [1 | standardized fixed columns | one-hot smooth classes]
    together with the per-smooth penalty structure."""
    n = table.n_units
    cols = [np.ones((n, 1))]
    col_map = [("intercept", "", 0)]
    for name in spec.fixed:
        cols.append(design.column(name).reshape(-1, 1))
        col_map.append(("fixed", name, 0))
    smooth_structures = []
    for name, bins in spec.smooths:
        classes = bins.assign(table.column(name))
        cols.append(_one_hot(classes, bins.n_classes))
        col_map.extend(("smooth", name, k) for k in range(1, bins.n_classes + 1))
        z = _sum_to_zero_basis(bins.n_classes)
        smooth_structures.append((z, z.T @ rw1_structure(bins.n_classes) @ z))
    matrix = np.hstack(cols)
    p = matrix.shape[1]
    n_fixed = len(spec.fixed)
    q = 1 + n_fixed + sum(z.shape[1] for z, _ in smooth_structures)
    basis = np.zeros((p, q))
    basis[0, 0] = 1.0
    for i in range(n_fixed):
        basis[1 + i, 1 + i] = 1.0
    row = col_off = 1 + n_fixed
    for z, _zrz in smooth_structures:
        k = z.shape[0]
        basis[row : row + k, col_off : col_off + k - 1] = z
        row += k
        col_off += k - 1
    return ModelStructure(
        spec=spec,
        scaler=design.scaler,
        matrix=matrix,
        basis=basis,
        reduced_matrix=matrix @ basis,
        col_map=tuple(col_map),
        smooth_structures=tuple(smooth_structures),
        n_fixed=n_fixed,
    )


def prediction_matrix(structure: ModelStructure, table: SlopeUnitTable):
    """Full-space model matrix for new units, using the training scaler and
    training bins. Out-of-range smooth values clamp to the edge classes.

    Returns (matrix, n_clamped, n_extrapolated).
    """
    n = table.n_units
    cols = [np.ones((n, 1))]
    n_extrapolated = 0
    for name in structure.spec.fixed:
        z = structure.scaler.transform_column(name, table.column(name))
        n_extrapolated += int((np.abs(z) > EXTRAPOLATION_Z).sum())
        cols.append(z.reshape(-1, 1))
    n_clamped = 0
    for name, bins in structure.spec.smooths:
        classes, clamped = bins.assign_clamped(table.column(name))
        n_clamped += clamped
        cols.append(_one_hot(classes, bins.n_classes))
    return np.hstack(cols), n_clamped, n_extrapolated


def penalized_loglik(X, y, penalty, theta) -> float:
    """Bernoulli log-likelihood minus the quadratic penalty."""
    eta = X @ theta
    return float(y @ eta - np.logaddexp(0.0, eta).sum() - 0.5 * theta @ penalty @ theta)


def penalized_grad(X, y, penalty, theta) -> np.ndarray:
    eta = X @ theta
    return X.T @ (y - inverse_logit(eta)) - penalty @ theta


def fit_mode(X, y, penalty, init=None, tol: float = 1e-8, max_iter: int = 200):
    """Newton maximization of the penalized Bernoulli log-likelihood.

    Returns (mode, negative Hessian at the mode). The negative Hessian is
    the precision of the Gaussian posterior approximation.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    q = X.shape[1]
    theta = np.zeros(q) if init is None else np.array(init, dtype=np.float64)
    ll = penalized_loglik(X, y, penalty, theta)
    for _it in range(max_iter):
        eta = X @ theta
        p = inverse_logit(eta)
        grad = X.T @ (y - p) - penalty @ theta
        if np.max(np.abs(grad)) < tol:
            break
        w = p * (1.0 - p)
        neg_hess = X.T @ (w[:, None] * X) + penalty
        try:
            np.linalg.cholesky(neg_hess)
        except np.linalg.LinAlgError:
            raise ConvergenceError("non-positive-definite Hessian during Newton iteration")
        step = np.linalg.solve(neg_hess, grad)
        t = 1.0
        for _half in range(30):
            cand = theta + t * step
            cand_ll = penalized_loglik(X, y, penalty, cand)
            if cand_ll >= ll - 1e-12 * (1.0 + abs(ll)):
                theta, ll = cand, cand_ll
                break
            t *= 0.5
        else:
            # step made no progress at any scale: treat as stalled
            break
    else:
        raise ConvergenceError(
            f"Newton iteration did not converge in {max_iter} steps "
            f"(gradient max-norm {np.max(np.abs(grad)):.3e})",
            last_delta=float(np.max(np.abs(grad))),
        )
    eta = X @ theta
    p = inverse_logit(eta)
    grad = X.T @ (y - p) - penalty @ theta
    if np.max(np.abs(grad)) >= tol:
        raise ConvergenceError(
            f"Newton iteration stalled (gradient max-norm {np.max(np.abs(grad)):.3e})",
            last_delta=float(np.max(np.abs(grad))),
        )
    w = p * (1.0 - p)
    neg_hess = X.T @ (w[:, None] * X) + penalty
    return theta, neg_hess


@dataclass(frozen=True)
class HyperparameterSearch:
    """Grid-search result: chosen precisions and per-point evidence."""

    taus: np.ndarray
    mode: np.ndarray
    neg_hessian: np.ndarray
    grid: tuple
    log_marginals: np.ndarray


def _log_marginal(structure, y, taus, init):
    penalty = structure.penalty(taus)
    mode, neg_hess = fit_mode(structure.reduced_matrix, y, penalty, init=init)
    sign, logdet_h = np.linalg.slogdet(neg_hess)
    if sign <= 0:
        raise ConvergenceError("negative Hessian is not positive definite at the mode")
    log_ml = (
        penalized_loglik(structure.reduced_matrix, y, penalty, mode)
        + 0.5 * structure.prior_logdet(taus)
        - 0.5 * logdet_h
    )
    return log_ml, mode, neg_hess


def select_hyperparameters(
    structure: ModelStructure, labels, grid=None, threads: int = 1
) -> HyperparameterSearch:
    """Empirical-Bayes choice of the smoothing precisions.

    Evaluates the Laplace-approximate log marginal likelihood on the grid
    (a Cartesian product when there are several smooths) and keeps the
    maximizing point.
    """
    y = np.asarray(labels, dtype=np.float64)
    n_smooth = len(structure.spec.smooths)
    if n_smooth == 0:
        log_ml, mode, neg_hess = _log_marginal(structure, y, np.empty(0), None)
        return HyperparameterSearch(
            taus=np.empty(0),
            mode=mode,
            neg_hessian=neg_hess,
            grid=((),),
            log_marginals=np.array([log_ml]),
        )
    if grid is None:
        grid = structure.spec.log_precision_grid
    grid = tuple(float(g) for g in grid)
    if not grid:
        raise ValidationError("log-precision grid is empty")
    combos = list(itertools.product(grid, repeat=n_smooth))
    results = [None] * len(combos)
    failures = []

    def evaluate(i, init):
        taus = np.exp(np.array(combos[i]))
        return _log_marginal(structure, y, taus, init)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            futures = {ex.submit(evaluate, i, None): i for i in range(len(combos))}
            for fut, i in futures.items():
                try:
                    results[i] = fut.result()
                except ConvergenceError as e:
                    failures.append((combos[i], e))
    else:
        init = None
        for i in range(len(combos)):
            try:
                results[i] = evaluate(i, init)
                init = results[i][1]
            except ConvergenceError as e:
                failures.append((combos[i], e))
    if all(r is None for r in results):
        raise ConvergenceError(
            f"no grid point converged ({len(failures)} failures); first: {failures[0][1]}"
        )
    log_mls = np.array([r[0] if r is not None else -np.inf for r in results])
    best = int(np.argmax(log_mls))
    _, mode, neg_hess = results[best]
    return HyperparameterSearch(
        taus=np.exp(np.array(combos[best])),
        mode=mode,
        neg_hessian=neg_hess,
        grid=tuple(combos),
        log_marginals=log_mls,
    )


@dataclass(frozen=True)
class GamPosterior:
    """Gaussian approximation to the coefficient posterior, full space.

    ``factor`` satisfies factor @ factor.T == covariance; draws are
    mode + factor @ eps. Smooth blocks sum to zero for the mode and every
    draw because the factor's rows live in the constrained subspace.
    """

    mode: np.ndarray
    factor: np.ndarray
    col_map: tuple
    taus: np.ndarray
    grid: tuple
    log_marginals: np.ndarray

    @property
    def p(self) -> int:
        return len(self.mode)

    @property
    def covariance(self) -> np.ndarray:
        return self.factor @ self.factor.T

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt((self.factor**2).sum(axis=1))

    def term_indices(self, kind: str, name: str = "") -> np.ndarray:
        return np.array(
            [i for i, (k, n, _c) in enumerate(self.col_map) if k == kind and (not name or n == name)]
        )

    def sample(self, n_draws: int, seed: int, *tokens) -> np.ndarray:
        """n_draws x p coefficient draws, reproducible from (seed, tokens)
        and independent of how draws are partitioned across workers."""
        if n_draws < 1:
            raise ValidationError(f"n_draws must be at least 1, got {n_draws}")
        eps = block_standard_normal(seed, n_draws, self.factor.shape[1], *tokens)
        return self.mode[None, :] + eps @ self.factor.T


def sample_posterior(posterior: GamPosterior, n_draws: int, seed: int) -> np.ndarray:
    return posterior.sample(n_draws, seed)


@dataclass(frozen=True)
class FittedModel:
    """Everything needed to score units and run plug-in simulations."""

    spec: GamSpec
    posterior: GamPosterior
    scaler: Scaler
    matrix: np.ndarray
    unit_ids: tuple[str, ...]
    trigger: str = ""

    def __post_init__(self):
        if self.trigger and self.trigger not in self.spec.fixed:
            raise ValidationError(
                f"trigger column {self.trigger!r} must be a fixed effect of the model"
            )

    @property
    def trigger_index(self) -> int:
        if not self.trigger:
            raise ValidationError("model was fit without a trigger column")
        return 1 + self.spec.fixed.index(self.trigger)

    def mode_susceptibility(self) -> np.ndarray:
        return inverse_logit(self.matrix @ self.posterior.mode)


def _assemble_posterior(structure: ModelStructure, search: HyperparameterSearch) -> GamPosterior:
    neg_hess = search.neg_hessian
    chol = np.linalg.cholesky(neg_hess)
    # factor of the reduced covariance: inv(L)' inv(L) = H^-1
    reduced_factor = np.linalg.inv(chol).T
    return GamPosterior(
        mode=structure.basis @ search.mode,
        factor=structure.basis @ reduced_factor,
        col_map=structure.col_map,
        taus=search.taus,
        grid=search.grid,
        log_marginals=search.log_marginals,
    )


def fit_gam_model(
    spec: GamSpec,
    table: SlopeUnitTable,
    trigger: str = "",
    grid=None,
    threads: int = 1,
) -> FittedModel:
    """Standardize, build the design, pick smoothing precisions, and wrap
    the Laplace posterior with the training matrix for later plug-in use."""
    scaler = fit_scaler(table, spec.fixed)
    design = apply_scaler(scaler, table)
    structure = build_design(spec, design, table)
    search = select_hyperparameters(structure, table.labels, grid=grid, threads=threads)
    posterior = _assemble_posterior(structure, search)
    return FittedModel(
        spec=spec,
        posterior=posterior,
        scaler=scaler,
        matrix=structure.matrix,
        unit_ids=table.unit_ids,
        trigger=trigger,
    )


def fixed_effect_rows(model: FittedModel):
    """(name, mean, sd, lower, upper) per linear effect, intercept first."""
    post = model.posterior
    rows = []
    sd = post.sd
    for i, (kind, name, _c) in enumerate(post.col_map):
        if kind == "smooth":
            continue
        label = name if kind == "fixed" else "intercept"
        mu = post.mode[i]
        rows.append((label, mu, sd[i], mu - Z975 * sd[i], mu + Z975 * sd[i]))
    return rows


def smooth_rows(model: FittedModel, name: str):
    """(class midpoint, mean, lower, upper) per class of one smooth term."""
    post = model.posterior
    bins = dict(model.spec.smooths)[name]
    idx = post.term_indices("smooth", name)
    sd = post.sd[idx]
    mu = post.mode[idx]
    mid = bins.midpoints
    return [
        (mid[k], mu[k], mu[k] - Z975 * sd[k], mu[k] + Z975 * sd[k])
        for k in range(bins.n_classes)
    ]
