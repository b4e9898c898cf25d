"""Permutation test for the pre-validated coefficient.

The rows of ``X`` are permuted while ``y`` and ``Z`` stay fixed, the whole
pre-validation and external fit is rerun, and the observed statistic is
compared with the permuted ones.  The one-sided p-value is the fraction of
permuted statistics at least as large as the observed one, without the
``(b + 1) / (B + 1)`` correction and without randomization at ties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .data import Dataset, FoldAssignment
from .errors import NumericalError, ValidationError
from .external import ExternalFit, fit_external
from .internal import InternalModelSpec
from .parallel import map_reps
from .prevalidation import PrevalidatedPredictor, draw_folds, prevalidate
from .rng import substream

__all__ = [
    "STATISTIC_KINDS",
    "PermutationResult",
    "pipeline_statistics",
    "permutation_test",
    "permutation_tests",
    "permutation_p_value",
    "summarize_p_values",
]

STATISTIC_KINDS = ("coefficient", "t_or_z", "deviance")
MAX_FAILED_FRACTION = 0.05
TIE_RTOL = 1e-12


def permutation_p_value(observed: float, permuted: np.ndarray) -> float:
    """Fraction of finite permuted values ``>= observed``.

    Values within ``1e-12`` (relative) of ``observed`` count as ties, so
    statistics that agree up to rounding in a different row order are not
    split at random.  NaN entries (failed replicates) are ignored.
    """
    permuted = np.asarray(permuted, dtype=float)
    ok = ~np.isnan(permuted)
    if not ok.any():
        return float("nan")
    thr = observed - TIE_RTOL * max(1.0, abs(observed))
    return float(np.sum(permuted[ok] >= thr)) / float(ok.sum())


@dataclass(frozen=True, eq=False)
class PermutationResult:
    statistic_kind: str
    observed: float
    permuted: np.ndarray
    p_value: float
    B: int
    seed: int
    n_failed: int = 0
    redraw_folds: bool = True
    observed_fit: ExternalFit | None = field(default=None, repr=False)

    @property
    def valid(self) -> bool:
        return self.n_failed <= MAX_FAILED_FRACTION * self.B

    def to_dict(self) -> dict:
        return {
            "statistic_kind": self.statistic_kind,
            "observed": self.observed,
            "p_value": self.p_value,
            "B": self.B,
            "seed": self.seed,
            "n_failed": self.n_failed,
            "valid": self.valid,
            "redraw_folds": self.redraw_folds,
            "permuted": [None if np.isnan(v) else float(v) for v in self.permuted],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _stat_values(fit: ExternalFit) -> dict[str, float]:
    return {
        "coefficient": fit.beta_pv,
        "t_or_z": fit.stat_pv,
        "deviance": fit.delta_deviance_pv,
    }


def pipeline_statistics(
    dataset: Dataset,
    spec: InternalModelSpec,
    external_kind: str,
    K: int,
    seed: int,
    include_intercept: bool,
    folds: FoldAssignment | None = None,
    need_deviance: bool = True,
) -> tuple[dict[str, float], ExternalFit, PrevalidatedPredictor]:
    """Pre-validate, fit the external model and return the three PV statistics."""
    pv = prevalidate(dataset, spec, folds=folds, K=K, seed=seed)
    kw = {"deviance_for": "pv" if need_deviance else "none"} if external_kind == "logistic" else {}
    fit = fit_external(external_kind, pv.ytilde, dataset.Z, dataset.y, include_intercept, **kw)
    return _stat_values(fit), fit, pv


def _replicate(
    b: int,
    dataset: Dataset,
    spec: InternalModelSpec,
    external_kind: str,
    K: int,
    seed: int,
    include_intercept: bool,
    folds: FoldAssignment | None,
    kinds: tuple[str, ...],
) -> tuple[float, ...]:
    rng = substream(seed, "perm", b)
    perm = rng.permutation(dataset.n)
    sub_seed = int(rng.integers(2**63))
    permuted = dataset.with_X(dataset.X[perm])
    try:
        stats, _, _ = pipeline_statistics(
            permuted, spec, external_kind, K, sub_seed, include_intercept, folds, "deviance" in kinds
        )
    except NumericalError:
        return tuple(float("nan") for _ in kinds)
    return tuple(stats[k] for k in kinds)


def permutation_tests(
    dataset: Dataset,
    spec: InternalModelSpec,
    external_kind: str = "linear",
    statistic_kinds: tuple[str, ...] = STATISTIC_KINDS,
    K: int = 10,
    B: int = 500,
    seed: int = 0,
    include_intercept: bool | None = None,
    redraw_folds: bool = True,
    workers: int = 1,
) -> dict[str, PermutationResult]:
    """Permutation tests for several statistics sharing the same permutations.

    Replicate ``b`` uses the substream ``(seed, "perm", b)`` for its row
    permutation and, when ``redraw_folds`` is true, for fresh folds.  With
    ``redraw_folds=False`` every replicate reuses the observed fold map.
    Raises if the observed pipeline itself cannot be fit.
    """
    if B < 1:
        raise ValidationError("B must be at least 1")
    bad = set(statistic_kinds) - set(STATISTIC_KINDS)
    if bad:
        raise ValidationError(f"unknown statistic kind(s) {sorted(bad)}")
    if include_intercept is None:
        include_intercept = external_kind == "logistic"
    obs_rng = substream(seed, "observed")
    obs_seed = int(obs_rng.integers(2**63))
    folds = None
    if not redraw_folds and K != 1:
        folds = draw_folds(dataset, K, spec, substream(obs_seed, "folds"))
    stats, fit, _ = pipeline_statistics(
        dataset, spec, external_kind, K, obs_seed, include_intercept, folds, "deviance" in statistic_kinds
    )
    kinds = tuple(statistic_kinds)
    fn = partial(
        _replicate,
        dataset=dataset,
        spec=spec,
        external_kind=external_kind,
        K=K,
        seed=seed,
        include_intercept=include_intercept,
        folds=folds,
        kinds=kinds,
    )
    rows = np.array(map_reps(fn, B, workers), dtype=float).reshape(B, len(kinds))
    n_failed = int(np.isnan(rows).any(axis=1).sum())
    out = {}
    for j, kind in enumerate(kinds):
        out[kind] = PermutationResult(
            statistic_kind=kind,
            observed=stats[kind],
            permuted=rows[:, j].copy(),
            p_value=permutation_p_value(stats[kind], rows[:, j]),
            B=B,
            seed=seed,
            n_failed=n_failed,
            redraw_folds=redraw_folds,
            observed_fit=fit,
        )
    return out


def permutation_test(
    dataset: Dataset,
    spec: InternalModelSpec,
    external_kind: str = "linear",
    statistic_kind: str = "t_or_z",
    K: int = 10,
    B: int = 500,
    seed: int = 0,
    include_intercept: bool | None = None,
    redraw_folds: bool = True,
    workers: int = 1,
) -> PermutationResult:
    """Single-statistic form of :func:`permutation_tests`."""
    return permutation_tests(
        dataset, spec, external_kind, (statistic_kind,), K, B, seed, include_intercept, redraw_folds, workers
    )[statistic_kind]


def summarize_p_values(p_values, levels=(0.01, 0.05, 0.1)) -> dict[str, float]:
    """Mean p-value and the percentage strictly below each level."""
    p = np.asarray(p_values, dtype=float)
    p = p[~np.isnan(p)]
    out = {"mean": float(p.mean()) if p.size else float("nan"), "count": int(p.size)}
    for a in levels:
        out[f"pct_below_{a:g}"] = 100.0 * float(np.mean(p < a)) if p.size else float("nan")
    return out
