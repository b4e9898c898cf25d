"""Pre-validated predictors.

``prevalidate`` refits the internal model once per fold and predicts the
held-out fold, giving one out-of-fold prediction per observation.
Feature selection happens inside every fold fit.  ``loo_linear_prevalidate``
is the closed form of the leave-one-out case for least squares.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, FoldAssignment, make_folds
from .errors import FoldFitError, LeverageError, NumericalError, SingularDesignError, ValidationError
from .internal import InternalModelSpec, fit_internal, predict
from .rng import substream

__all__ = [
    "PrevalidatedPredictor",
    "prevalidate",
    "draw_folds",
    "loo_linear_prevalidate",
    "hat_diagonal",
    "cv_error",
    "indicator_error",
]

LEVERAGE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PrevalidatedPredictor:
    """Out-of-fold predictions with the fold map that produced them.

    ``folds`` is ``None`` for the re-use method (``K = 1``), where the
    rule is fit and evaluated on all rows.
    """

    ytilde: np.ndarray
    folds: FoldAssignment | None
    spec: InternalModelSpec
    fold_info: tuple[dict, ...] = field(default_factory=tuple)

    def to_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "fold", "ytilde"])
            for i, v in enumerate(self.ytilde):
                fold = -1 if self.folds is None else int(self.folds.fold_of[i])
                w.writerow([i, fold, repr(float(v))])


def draw_folds(dataset: Dataset, K: int, spec: InternalModelSpec, rng: np.random.Generator) -> FoldAssignment:
    """Folds for ``dataset``; stratified on ``y`` for binary outcomes.

    ``K`` equal to ``n`` gives leave-one-out folds (never stratified).
    """
    strat = dataset.y if (dataset.is_binary and K < dataset.n) else None
    return make_folds(dataset.n, K, stratify_labels=strat, rng=rng)


def prevalidate(
    dataset: Dataset,
    spec: InternalModelSpec,
    folds: FoldAssignment | None = None,
    K: int = 10,
    seed: int = 0,
) -> PrevalidatedPredictor:
    """Build the pre-validated predictor.

    If ``folds`` is not given they are drawn from ``K`` and ``seed``
    (``K = 1`` means no pre-validation: fit on all rows and predict them).
    Fold ``k`` consumes the RNG substream ``(seed, "fold", k)``, so results
    do not depend on fold evaluation order.
    """
    spec.check_dimensions(dataset.p)
    if spec.is_classifier:
        dataset.require_both_classes()
    X, y = dataset.X, dataset.y
    n = dataset.n

    if folds is None and K == 1:
        try:
            model = fit_internal(spec, X, y, rng=substream(seed, "fold", 0))
        except (NumericalError, ValidationError) as exc:
            raise FoldFitError(0, exc) from exc
        info = ({"selected": model.selected.tolist(), "flags": dict(model.flags)},)
        return PrevalidatedPredictor(predict(model, X), None, spec, info)

    if folds is None:
        folds = draw_folds(dataset, K, spec, substream(seed, "folds"))
    if folds.n != n:
        raise ValidationError(f"fold map covers {folds.n} rows, dataset has {n}")

    ytilde = np.empty(n)
    info = []
    for k in range(folds.K):
        test = folds.fold_of == k
        try:
            model = fit_internal(spec, X[~test], y[~test], rng=substream(seed, "fold", k))
        except (NumericalError, ValidationError) as exc:
            raise FoldFitError(k, exc) from exc
        ytilde[test] = predict(model, X[test])
        info.append({"selected": model.selected.tolist(), "flags": dict(model.flags)})
    return PrevalidatedPredictor(ytilde, folds, spec, tuple(info))


def hat_diagonal(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis ``Q`` of the column space of ``X`` and the leverages ``diag(H)``."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if p >= n:
        raise SingularDesignError(p, n, "X (needs p < n)")
    Q, R = np.linalg.qr(X)
    rd = np.abs(np.diag(R))
    if rd.min() <= 1e-10 * max(rd.max(), 1e-300):
        raise SingularDesignError(p, int(np.sum(rd > 1e-10 * rd.max())), "X")
    return Q, np.einsum("ij,ij->i", Q, Q)


def loo_linear_prevalidate(X, y, fit_intercept: bool = False) -> np.ndarray:
    """Leave-one-out least-squares predictions in closed form.

    Computes ``(I - D)^-1 (H - D) y`` with ``H`` the hat matrix of ``X``
    (plus a ones column when ``fit_intercept``) and ``D = diag(H)``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if fit_intercept:
        X = np.column_stack([X, np.ones(X.shape[0])])
    Q, d = hat_diagonal(X)
    bad = np.flatnonzero(d >= 1.0 - LEVERAGE_TOL)
    if bad.size:
        raise LeverageError(int(bad[0]), float(d[bad[0]]))
    Hy = Q @ (Q.T @ y)
    return (Hy - d * y) / (1.0 - d)


def indicator_error(pred, y) -> float:
    """Misclassification rate of a 0/1 predictor."""
    return float(np.mean(np.asarray(pred) != np.asarray(y)))


def cv_error(
    dataset: Dataset, spec: InternalModelSpec, K: int = 10, reps: int = 100, seed: int = 0
) -> float:
    """Cross-validated error of the rule, averaged over ``reps`` random fold draws.

    Misclassification rate for binary outcomes, mean squared error otherwise.
    Regression kinds on a binary outcome are thresholded at 0.5.
    """
    if reps < 1:
        raise ValidationError("reps must be at least 1")
    errs = []
    for r in range(reps):
        pv = prevalidate(dataset, spec, K=K, seed=int(substream(seed, "cv", r).integers(2**63)))
        if dataset.is_binary:
            pred = pv.ytilde if spec.is_classifier else (pv.ytilde > 0.5).astype(float)
            errs.append(indicator_error(pred, dataset.y))
        else:
            errs.append(float(np.mean((pv.ytilde - dataset.y) ** 2)))
    return float(np.mean(errs))
