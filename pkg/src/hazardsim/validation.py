"""Exhaustive k-fold cross-validation, ROC/AUC, and error-plot summaries.

The fold plan is an exact partition: every unit is held out exactly once,
so reassembling the per-fold predictions yields one full-coverage score
vector.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import gam
from .data import SlopeUnitTable, apply_scaler, fit_scaler, make_bins, make_quantile_bins
from .errors import StratificationError, ValidationError
from .rng import stream

__all__ = [
    "FoldPlan",
    "RocCurve",
    "CvResult",
    "ErrorPlotTable",
    "make_folds",
    "auc",
    "cross_validate",
    "error_plot_table",
]

ERROR_PLOT_BINS = 20


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each unit to exactly one fold, 1..k."""

    assignment: np.ndarray
    k: int
    seed: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.min() < 1 or a.max() > self.k:
            raise ValidationError("fold ids must lie in 1..k")
        sizes = np.bincount(a, minlength=self.k + 1)[1:]
        if sizes.max() - sizes.min() > 1:
            raise ValidationError("fold sizes differ by more than one")
        a.flags.writeable = False
        object.__setattr__(self, "assignment", a)

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def make_folds(
    n_units: int,
    k: int = 10,
    seed: int = 0,
    labels=None,
    stratified: bool = False,
    max_attempts: int = 100,
) -> FoldPlan:
    """Permutation-based exact partition into k folds, sizes within one.

    When labels are given, re-draws the permutation (up to max_attempts)
    until every training complement contains both classes; stratified=True
    additionally balances class counts across folds.
    """
    if n_units < k:
        raise ValidationError(f"need at least k={k} units, got {n_units}")
    labels = None if labels is None else np.asarray(labels)
    for attempt in range(max_attempts):
        rng = stream(seed, "folds", attempt)
        assignment = np.empty(n_units, dtype=np.int64)
        if stratified and labels is not None:
            order = np.concatenate(
                [rng.permutation(np.flatnonzero(labels == c)) for c in (1, 0)]
            )
        else:
            order = rng.permutation(n_units)
        assignment[order] = np.arange(n_units) % k + 1
        if labels is None:
            return FoldPlan(assignment=assignment, k=k, seed=seed)
        ok = all(
            labels[assignment != f].min() != labels[assignment != f].max()
            for f in range(1, k + 1)
        )
        if ok:
            return FoldPlan(assignment=assignment, k=k, seed=seed)
    raise StratificationError(
        f"could not keep both classes in every training split after {max_attempts} attempts"
    )


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    sv = values[order]
    boundary = np.r_[True, sv[1:] != sv[:-1]]
    gid = np.cumsum(boundary) - 1
    first = np.flatnonzero(boundary)
    last = np.r_[first[1:], len(sv)] - 1
    avg = 0.5 * (first + last) + 1.0
    ranks = np.empty(len(values))
    ranks[order] = avg[gid]
    return ranks


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 * P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both classes present")
    ranks = _average_ranks(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class RocCurve:
    """Operating points from (0,0) to (1,1) plus the trapezoidal AUC."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @classmethod
    def from_scores(cls, scores, labels) -> "RocCurve":
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels)
        n_pos = int((labels == 1).sum())
        n_neg = int((labels == 0).sum())
        if n_pos == 0 or n_neg == 0:
            raise ValidationError("ROC needs both classes present")
        order = np.argsort(-scores, kind="mergesort")
        ss = scores[order]
        yy = labels[order]
        last_of_tie = np.r_[ss[1:] != ss[:-1], True]
        tp = np.cumsum(yy == 1)[last_of_tie]
        fp = np.cumsum(yy == 0)[last_of_tie]
        fpr = np.r_[0.0, fp / n_neg]
        tpr = np.r_[0.0, tp / n_pos]
        thresholds = np.r_[np.inf, ss[last_of_tie]]
        return cls(
            thresholds=thresholds,
            fpr=fpr,
            tpr=tpr,
            auc=float(np.trapezoid(tpr, fpr)),
        )


@dataclass(frozen=True)
class CvResult:
    """Per-fold curves and the reassembled out-of-fold prediction vector."""

    plan: FoldPlan
    curves: tuple[RocCurve, ...]
    fold_aucs: np.ndarray
    oof_scores: np.ndarray
    n_clamped: int
    n_extrapolated: int

    @property
    def median_auc(self) -> float:
        return float(np.median(self.fold_aucs))


def _refit_spec(spec: gam.GamSpec, train: SlopeUnitTable) -> gam.GamSpec:
    # scaler and bins must come from the training split only
    smooths = []
    for name, bins in spec.smooths:
        maker = make_quantile_bins if spec.bin_mode == "quantile" else make_bins
        smooths.append((name, maker(train.column(name), bins.n_classes, column=name)))
    return gam.GamSpec(
        fixed=spec.fixed,
        smooths=tuple(smooths),
        fixed_precision=spec.fixed_precision,
        intercept_precision=spec.intercept_precision,
        log_precision_grid=spec.log_precision_grid,
        bin_mode=spec.bin_mode,
    )


def _fit_fold(spec, table, plan, fold, fast_taus):
    train_idx = plan.train_indices(fold)
    test_idx = plan.fold_indices(fold)
    train = table.subset(train_idx)
    test = table.subset(test_idx)
    fold_spec = _refit_spec(spec, train)
    scaler = fit_scaler(train, fold_spec.fixed)
    design = apply_scaler(scaler, train)
    structure = gam.build_design(fold_spec, design, train)
    if fast_taus is not None and len(fold_spec.smooths) > 0:
        taus = np.asarray(fast_taus, dtype=np.float64)
        mode_r, neg_hess = gam.fit_mode(
            structure.reduced_matrix, train.labels, structure.penalty(taus)
        )
    else:
        search = gam.select_hyperparameters(structure, train.labels)
        taus, mode_r, neg_hess = search.taus, search.mode, search.neg_hessian
    matrix, n_clamped, n_extrap = gam.prediction_matrix(structure, test)
    scores = gam.inverse_logit(matrix @ (structure.basis @ mode_r))
    if test.labels.min() == test.labels.max():
        raise ValidationError(f"fold {fold}: held-out split contains a single class")
    return fold, test_idx, scores, RocCurve.from_scores(scores, test.labels), n_clamped, n_extrap


def cross_validate(
    spec: gam.GamSpec,
    table: SlopeUnitTable,
    plan: FoldPlan,
    fast_taus=None,
    threads: int = 1,
) -> CvResult:
    """k refits on the training complements, scored on the held-out folds.

    Every refit re-derives its scaler, bins, and (unless fast_taus is
    given) smoothing precisions from the training split alone. Out-of-fold
    scores are reassembled into one vector covering every unit once.
    """
    if len(plan.assignment) != table.n_units:
        raise ValidationError("fold plan does not match the table size")
    folds = range(1, plan.k + 1)
    results = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            futures = [ex.submit(_fit_fold, spec, table, plan, f, fast_taus) for f in folds]
            for fold, fut in zip(folds, futures):
                try:
                    results.append(fut.result())
                except ValidationError:
                    raise
                except Exception as e:
                    raise type(e)(f"fold {fold}: {e}") from e
    else:
        for fold in folds:
            try:
                results.append(_fit_fold(spec, table, plan, fold, fast_taus))
            except ValidationError:
                raise
            except Exception as e:
                raise type(e)(f"fold {fold}: {e}") from e
    results.sort(key=lambda r: r[0])
    oof = np.full(table.n_units, np.nan)
    curves, aucs = [], []
    n_clamped = n_extrap = 0
    for _fold, test_idx, scores, curve, nc, ne in results:
        oof[test_idx] = scores
        curves.append(curve)
        aucs.append(curve.auc)
        n_clamped += nc
        n_extrap += ne
    return CvResult(
        plan=plan,
        curves=tuple(curves),
        fold_aucs=np.array(aucs),
        oof_scores=oof,
        n_clamped=n_clamped,
        n_extrapolated=n_extrap,
    )


@dataclass(frozen=True)
class ErrorPlotTable:
    """Mean-vs-CI-width pairs plus a binned median-width summary."""

    mean: np.ndarray
    width: np.ndarray
    bin_index: np.ndarray
    bin_count: np.ndarray
    bin_median_width: np.ndarray


def error_plot_table(mean, ci_width, n_bins: int = ERROR_PLOT_BINS) -> ErrorPlotTable:
    """Bins posterior-mean susceptibility into n_bins classes over [0, 1]
    and reports the median CI width per class."""
    mean = np.asarray(mean, dtype=np.float64)
    width = np.asarray(ci_width, dtype=np.float64)
    if mean.shape != width.shape:
        raise ValidationError("mean and width vectors are not aligned")
    if (width < 0).any():
        raise ValidationError("CI widths must be nonnegative")
    if ((mean < 0) | (mean > 1)).any():
        raise ValidationError("means must lie in [0, 1]")
    # right-inclusive classes: mean 0.5 lands in bin n_bins/2
    bins = np.ceil(mean * n_bins).astype(np.int64)
    bins = np.clip(bins, 1, n_bins)
    count = np.bincount(bins, minlength=n_bins + 1)[1:]
    med = np.full(n_bins, np.nan)
    for b in range(1, n_bins + 1):
        sel = bins == b
        if sel.any():
            med[b - 1] = float(np.median(width[sel]))
    return ErrorPlotTable(
        mean=mean, width=width, bin_index=bins, bin_count=count, bin_median_width=med
    )
