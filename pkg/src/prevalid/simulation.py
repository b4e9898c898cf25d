"""Simulation scenarios and Monte Carlo studies.

Three scenarios generate data:

``linear_linear``  X iid N(0,1), y ~ N(X beta, sigma_I^2), Z_ik ~ N(y_i, sigma_E^2);
                   internal OLS, external linear regression
``lasso_linear``   as above with only the first ``s`` entries of beta nonzero;
                   internal lasso with exactly ``l`` nonzeros
``lda_logistic``   two groups (n1, n2); group 2 has mean ``mu`` on the first
                   ``s`` features; Z is y with labels flipped independently
                   with probability ``p_E``; internal top-``g`` LDA, external
                   logistic regression

Each replicate ``i`` of a study draws from substreams keyed by
``(seed, <stream name>, i)``, so reports do not depend on the worker count.
A replicate rejects at level ``alpha`` when its p-value is strictly below
``alpha``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Any

import numpy as np

from .data import Dataset
from .errors import NumericalError, ValidationError
from .external import fit_external
from .internal import InternalModelSpec, fit_internal, predict
from .parallel import map_reps
from .permutation import STATISTIC_KINDS, permutation_tests
from .prevalidation import prevalidate
from .rng import substream

__all__ = [
    "SCENARIOS",
    "ScenarioConfig",
    "TypeIErrorReport",
    "PermutationLevelReport",
    "PowerReport",
    "BiasReport",
    "generate",
    "gen_linear_linear",
    "gen_lasso_linear",
    "gen_lda_logistic",
    "analytic_p_value",
    "estimate_type1",
    "estimate_permutation_level",
    "estimate_power",
    "coefficient_bias_study",
    "binomial_se",
]

SCENARIOS = ("linear_linear", "lasso_linear", "lda_logistic")
MAX_FAILED_FRACTION = 0.05
# label-flip rate of the external predictor when none is given
DEFAULT_LDA_FLIP = 0.25


def binomial_se(rate: float, reps: int) -> float:
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / reps) if reps > 0 else float("nan")


@dataclass(frozen=True)
class ScenarioConfig:
    """Parameters of one simulation scenario.

    ``beta`` may have length ``p`` or, for sparse scenarios, length ``s`` (the
    remaining entries are zero); ``None`` means all zeros.  ``sigma_E`` is a
    single SD or one per external predictor.  ``K`` is the number of PV
    folds, ``"n"`` for leave-one-out, or 1 for the re-use method (no PV).
    ``internal_intercept`` / ``external_intercept`` default to no intercept
    for ``linear_linear`` and to an intercept in both models for
    ``lasso_linear`` and in the logistic external model.  ``p_E`` defaults
    to ``DEFAULT_LDA_FLIP`` for ``lda_logistic`` and 0 otherwise.
    """

    scenario: str
    n: int
    p: int
    e: int = 1
    beta: tuple[float, ...] | None = None
    s: int = 0
    sigma_I: float = 1.0
    sigma_E: float | tuple[float, ...] = 1.0
    l: int | None = None
    g: int | None = None
    mu: float = 0.0
    sigma: float = 1.0
    p_E: float | None = None
    K: int | str = 5
    n1: int | None = None
    n2: int | None = None
    internal_intercept: bool | None = None
    external_intercept: bool | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValidationError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if self.n < 2 or self.p < 1 or self.e < 0:
            raise ValidationError("need n >= 2, p >= 1, e >= 0")
        if not 0 <= self.s <= self.p:
            raise ValidationError(f"s={self.s} outside [0, p]")
        if self.beta is not None:
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
            if len(self.beta) not in (self.p, self.s):
                raise ValidationError("beta must have length p (or s for sparse scenarios)")
        if isinstance(self.sigma_E, (list, tuple)):
            object.__setattr__(self, "sigma_E", tuple(float(v) for v in self.sigma_E))
            if len(self.sigma_E) != self.e:
                raise ValidationError("per-predictor sigma_E must have length e")
        if np.any(np.asarray(self.sigma_E) < 0) or self.sigma_I <= 0 or self.sigma <= 0:
            raise ValidationError("noise SDs must be positive (sigma_E may be 0)")
        if self.p_E is None:
            object.__setattr__(self, "p_E", DEFAULT_LDA_FLIP if self.scenario == "lda_logistic" else 0.0)
        if not 0.0 <= self.p_E <= 1.0:
            raise ValidationError("p_E must be in [0, 1]")
        if self.scenario == "lasso_linear" and self.l is None:
            raise ValidationError("lasso_linear needs l")
        if self.scenario == "lda_logistic":
            if self.g is None:
                raise ValidationError("lda_logistic needs g")
            n1 = self.n1 if self.n1 is not None else self.n // 2
            n2 = self.n2 if self.n2 is not None else self.n - n1
            if n1 + n2 != self.n or n1 < 2 or n2 < 2:
                raise ValidationError("group sizes must be >= 2 and sum to n")
            object.__setattr__(self, "n1", n1)
            object.__setattr__(self, "n2", n2)
        k = self.K
        if not (k == "n" or (isinstance(k, int) and 1 <= k <= self.n)):
            raise ValidationError(f"K must be an integer in [1, n] or 'n', got {k!r}")

    @property
    def folds(self) -> int:
        return self.n if self.K == "n" else int(self.K)

    @property
    def external_kind(self) -> str:
        return "logistic" if self.scenario == "lda_logistic" else "linear"

    @property
    def include_intercept(self) -> bool:
        if self.external_intercept is not None:
            return self.external_intercept
        return self.scenario != "linear_linear"

    def beta_vector(self) -> np.ndarray:
        b = np.zeros(self.p)
        if self.beta is not None:
            b[: len(self.beta)] = self.beta
        if self.scenario == "lasso_linear":
            b[self.s :] = 0.0
        return b

    @property
    def is_null(self) -> bool:
        if self.scenario == "lda_logistic":
            return self.s == 0 or self.mu == 0
        return not np.any(self.beta_vector())

    def internal_spec(self) -> InternalModelSpec:
        if self.scenario == "linear_linear":
            return InternalModelSpec("ols", fit_intercept=bool(self.internal_intercept))
        if self.scenario == "lasso_linear":
            fi = True if self.internal_intercept is None else self.internal_intercept
            return InternalModelSpec("lasso_l", l=self.l, fit_intercept=fi)
        return InternalModelSpec("lda_top_g", g=self.g)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown scenario field(s): {sorted(extra)}")
        return cls(**d)

    def label(self) -> str:
        parts = [f"n={self.n}", f"p={self.p}", f"e={self.e}"]
        if self.scenario != "lda_logistic":
            parts.append("beta=0" if self.is_null else "beta!=0")
        if self.scenario != "linear_linear":
            parts.append(f"s={self.s}")
        if self.l is not None:
            parts.append(f"l={self.l}")
        if self.g is not None:
            parts.append(f"g={self.g}")
        return ", ".join(parts)


# ---------------------------------------------------------------------------
# generators


def _rng(seed: int, rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else substream(seed, "data")


def _external_from_y(config: ScenarioConfig, y: np.ndarray, rng) -> np.ndarray:
    sd = np.broadcast_to(np.asarray(config.sigma_E, dtype=float), (config.e,))
    return y[:, None] + rng.standard_normal((config.n, config.e)) * sd


def gen_linear_linear(config: ScenarioConfig, seed: int = 0, rng: np.random.Generator | None = None) -> Dataset:
    if config.scenario not in ("linear_linear", "lasso_linear"):
        raise ValidationError(f"gen_linear_linear cannot generate {config.scenario!r}")
    rng = _rng(seed, rng)
    X = rng.standard_normal((config.n, config.p))
    y = X @ config.beta_vector() + config.sigma_I * rng.standard_normal(config.n)
    return Dataset(y, X, _external_from_y(config, y, rng), "continuous")


def gen_lasso_linear(config: ScenarioConfig, seed: int = 0, rng: np.random.Generator | None = None) -> Dataset:
    if config.scenario != "lasso_linear":
        raise ValidationError(f"gen_lasso_linear cannot generate {config.scenario!r}")
    return gen_linear_linear(config, seed, rng)


def gen_lda_logistic(config: ScenarioConfig, seed: int = 0, rng: np.random.Generator | None = None) -> Dataset:
    if config.scenario != "lda_logistic":
        raise ValidationError(f"gen_lda_logistic cannot generate {config.scenario!r}")
    rng = _rng(seed, rng)
    y = np.concatenate([np.zeros(config.n1), np.ones(config.n2)])
    X = config.sigma * rng.standard_normal((config.n, config.p))
    if config.s and config.mu:
        X[config.n1 :, : config.s] += config.mu
    flips = rng.random((config.n, config.e)) < config.p_E
    Z = np.where(flips, 1.0 - y[:, None], y[:, None])
    return Dataset(y, X, Z, "binary")


def generate(config: ScenarioConfig, seed: int = 0, rng: np.random.Generator | None = None) -> Dataset:
    if config.scenario == "lda_logistic":
        return gen_lda_logistic(config, seed, rng)
    return gen_linear_linear(config, seed, rng)


# ---------------------------------------------------------------------------
# type I error of the analytical test


def analytic_p_value(config: ScenarioConfig, dataset: Dataset, seed: int) -> tuple[float, bool]:
    """One-sided analytical p-value for beta_pv and the fit's separation flag."""
    pv = prevalidate(dataset, config.internal_spec(), K=config.folds, seed=seed)
    kw = {"deviance_for": "none"} if config.external_kind == "logistic" else {}
    fit = fit_external(config.external_kind, pv.ytilde, dataset.Z, dataset.y, config.include_intercept, **kw)
    return fit.p_one_sided_pv, fit.separated


def _type1_rep(i: int, config: ScenarioConfig, seed: int) -> tuple[float, bool]:
    data = generate(config, rng=substream(seed, "data", i))
    try:
        return analytic_p_value(config, data, int(substream(seed, "pv", i).integers(2**63)))
    except NumericalError:
        return float("nan"), False


@dataclass(frozen=True, eq=False)
class TypeIErrorReport:
    """Rejection rates of the one-sided analytical test over simulated null datasets."""

    config: ScenarioConfig
    alphas: tuple[float, ...]
    rates: tuple[float, ...]
    ses: tuple[float, ...]
    reps: int
    n_failed: int
    n_separated: int = 0
    seed: int = 0
    p_values: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_valid(self) -> int:
        return self.reps - self.n_failed

    @property
    def flagged(self) -> bool:
        return self.n_failed > MAX_FAILED_FRACTION * self.reps

    def rate(self, alpha: float) -> float:
        return self.rates[self.alphas.index(alpha)]

    def rows(self, test: str = "analytical") -> list[dict[str, Any]]:
        return [
            {
                "scenario": self.config.scenario,
                "parameters": self.config.label(),
                "K": self.config.K,
                "test": test,
                "alpha": a,
                "rate": r,
                "se": s,
                "reps": self.reps,
                "failed": self.n_failed,
                "separated": self.n_separated,
                "flagged": self.flagged,
            }
            for a, r, s in zip(self.alphas, self.rates, self.ses)
        ]


def _rates(p: np.ndarray, alphas) -> tuple[tuple[float, ...], tuple[float, ...], int]:
    ok = p[~np.isnan(p)]
    rates = tuple(float(np.mean(ok < a)) if ok.size else float("nan") for a in alphas)
    return rates, tuple(binomial_se(r, ok.size) for r in rates), ok.size


def estimate_type1(
    config: ScenarioConfig,
    alphas=(0.01, 0.05, 0.1),
    reps: int = 20000,
    seed: int = 0,
    workers: int = 1,
) -> TypeIErrorReport:
    """Type I error of the analytical one-sided test for ``beta_pv`` under a null scenario."""
    if not config.is_null:
        raise ValidationError("estimate_type1 needs a null configuration (beta = 0 or s = 0)")
    out = map_reps(partial(_type1_rep, config=config, seed=seed), reps, workers)
    p = np.array([o[0] for o in out])
    sep = int(sum(o[1] for o in out))
    rates, ses, _ = _rates(p, alphas)
    return TypeIErrorReport(
        config, tuple(alphas), rates, ses, reps, int(np.isnan(p).sum()), sep, seed, p
    )


# ---------------------------------------------------------------------------
# permutation test level and power


def _perm_rep(i: int, config: ScenarioConfig, B: int, seed: int, kinds) -> tuple:
    data = generate(config, rng=substream(seed, "data", i))
    perm_seed = int(substream(seed, "perm", i).integers(2**63))
    try:
        res = permutation_tests(
            data,
            config.internal_spec(),
            config.external_kind,
            kinds,
            K=config.folds,
            B=B,
            seed=perm_seed,
            include_intercept=config.include_intercept,
        )
    except NumericalError:
        return (float("nan"),) * (len(kinds) + 1) + (False, B)
    fit = next(iter(res.values())).observed_fit
    return (
        fit.p_one_sided_pv,
        *(res[k].p_value for k in kinds),
        fit.separated,
        res[kinds[0]].n_failed,
    )


@dataclass(frozen=True, eq=False)
class PermutationLevelReport:
    """Rejection rates of the permutation tests (one per statistic) and the analytical test."""

    config: ScenarioConfig
    alphas: tuple[float, ...]
    B: int
    reps: int
    rates: dict[str, tuple[float, ...]]
    ses: dict[str, tuple[float, ...]]
    n_failed: int
    separation_fraction: float
    failed_permutations: int
    seed: int = 0
    p_values: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def within(self, n_se: float = 2.0) -> dict[str, tuple[bool, ...]]:
        """Whether each rate lies within ``n_se`` binomial SEs (at the nominal alpha) of alpha."""
        n = self.reps - self.n_failed
        return {
            k: tuple(abs(r - a) <= n_se * binomial_se(a, n) for r, a in zip(rs, self.alphas))
            for k, rs in self.rates.items()
        }

    def rows(self) -> list[dict[str, Any]]:
        w2 = self.within(2.0)
        out = []
        for k, rs in self.rates.items():
            for a, r, s, ok in zip(self.alphas, rs, self.ses[k], w2[k]):
                out.append(
                    {
                        "scenario": self.config.scenario,
                        "parameters": self.config.label(),
                        "K": self.config.K,
                        "test": k if k == "analytical" else f"permutation_{k}",
                        "alpha": a,
                        "rate": r,
                        "se": s,
                        "reps": self.reps,
                        "B": self.B,
                        "failed": self.n_failed,
                        "within_2se": ok,
                        "separation_fraction": self.separation_fraction,
                    }
                )
        return out


def _perm_study(config, B, reps, seed, workers, kinds):
    out = map_reps(partial(_perm_rep, config=config, B=B, seed=seed, kinds=kinds), reps, workers)
    arr = np.array([o[: len(kinds) + 1] for o in out], dtype=float)
    sep = np.array([o[len(kinds) + 1] for o in out], dtype=bool)
    fperm = int(sum(o[len(kinds) + 2] for o in out))
    names = ("analytical",) + tuple(kinds)
    return {nm: arr[:, j] for j, nm in enumerate(names)}, sep, fperm


def estimate_permutation_level(
    config: ScenarioConfig,
    alphas=(0.01, 0.05, 0.1),
    outer_reps: int = 1000,
    B: int = 500,
    seed: int = 0,
    statistic_kinds=STATISTIC_KINDS,
    workers: int = 1,
) -> PermutationLevelReport:
    """Level of the permutation tests under a null scenario.

    Each outer replicate simulates a dataset and runs one permutation test per
    statistic kind (sharing the permutations).  The analytical test on the
    same datasets is reported alongside; for ``lda_logistic`` the fraction of
    separated observed external fits is a diagnostic for the re-use arm.
    """
    if not config.is_null:
        raise ValidationError("estimate_permutation_level needs a null configuration")
    pvals, sep, fperm = _perm_study(config, B, outer_reps, seed, workers, tuple(statistic_kinds))
    rates, ses = {}, {}
    n_failed = int(np.isnan(pvals["analytical"]).sum())
    for k, p in pvals.items():
        rates[k], ses[k], _ = _rates(p, alphas)
    valid = outer_reps - n_failed
    return PermutationLevelReport(
        config,
        tuple(alphas),
        B,
        outer_reps,
        rates,
        ses,
        n_failed,
        float(sep.sum()) / valid if valid else float("nan"),
        fperm,
        seed,
        pvals,
    )


@dataclass(frozen=True, eq=False)
class PowerReport:
    """Power of the analytical test at bias-adjusted cutoffs and of the permutation tests."""

    null_config: ScenarioConfig
    alt_config: ScenarioConfig
    alphas: tuple[float, ...]
    cutoffs: tuple[float, ...]
    analytical_nominal: tuple[float, ...]
    analytical_adjusted: tuple[float, ...]
    permutation: dict[str, tuple[float, ...]]
    reps: int
    null_reps: int
    B: int
    seed: int = 0

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for j, a in enumerate(self.alphas):
            base = {
                "scenario": self.alt_config.scenario,
                "parameters": self.alt_config.label(),
                "K": self.alt_config.K,
                "alpha": a,
                "reps": self.reps,
            }
            out.append({**base, "test": "analytical_nominal", "power": self.analytical_nominal[j], "cutoff": a})
            out.append({**base, "test": "analytical_adjusted", "power": self.analytical_adjusted[j], "cutoff": self.cutoffs[j]})
            for k, pw in self.permutation.items():
                out.append({**base, "test": f"permutation_{k}", "power": pw[j], "cutoff": a})
        return out


def estimate_power(
    null_config: ScenarioConfig,
    alt_config: ScenarioConfig,
    alphas=(0.01, 0.05, 0.1),
    reps: int = 1000,
    B: int = 500,
    seed: int = 0,
    null_reps: int = 10000,
    statistic_kinds=STATISTIC_KINDS,
    workers: int = 1,
) -> PowerReport:
    """Power comparison with the analytical test recalibrated on the null.

    The cutoff for level ``alpha`` is the empirical ``alpha``-quantile of the
    analytical p-values over ``null_reps`` null datasets; analytical power is
    the fraction of alternative p-values at or below it.  Permutation power
    uses the nominal ``alpha``.
    """
    signal = {"beta", "s", "mu"}
    diff = {
        f.name
        for f in dataclasses.fields(ScenarioConfig)
        if getattr(null_config, f.name) != getattr(alt_config, f.name)
    }
    if diff - signal:
        raise ValidationError(f"null and alternative configs differ outside signal fields: {sorted(diff - signal)}")
    null = estimate_type1(null_config, alphas, null_reps, seed=int(substream(seed, "null").integers(2**63)), workers=workers)
    p0 = null.p_values[~np.isnan(null.p_values)]
    cutoffs = tuple(float(np.quantile(p0, a, method="inverted_cdf")) for a in alphas)
    pvals, _, _ = _perm_study(alt_config, B, reps, seed, workers, tuple(statistic_kinds))
    pa = pvals["analytical"]
    ok = ~np.isnan(pa)
    nominal = tuple(float(np.mean(pa[ok] < a)) for a in alphas)
    adjusted = tuple(float(np.mean(pa[ok] <= c)) for c in cutoffs)
    perm = {}
    for k in statistic_kinds:
        pk = pvals[k][~np.isnan(pvals[k])]
        perm[k] = tuple(float(np.mean(pk < a)) for a in alphas)
    return PowerReport(null_config, alt_config, tuple(alphas), cutoffs, nominal, adjusted, perm, reps, null_reps, B, seed)


# ---------------------------------------------------------------------------
# coefficient estimation


@dataclass(frozen=True, eq=False)
class BiasReport:
    """Medians of the PV coefficient and of the independent-test-set benchmark."""

    config: ScenarioConfig
    median_pv: float
    median_benchmark: float
    bias_se: float
    reps: int
    n_failed: int
    n_separated: int
    seed: int = 0
    pv: np.ndarray | None = field(default=None, repr=False)
    benchmark: np.ndarray | None = field(default=None, repr=False)

    @property
    def bias(self) -> float:
        return self.median_pv - self.median_benchmark


def _bias_rep(i: int, config: ScenarioConfig, seed: int) -> tuple[float, float, int]:
    spec = config.internal_spec()
    train = generate(config, rng=substream(seed, "data", i))
    test = generate(config, rng=substream(seed, "test", i))
    kw = {"deviance_for": "none"} if config.external_kind == "logistic" else {}
    sep = 0
    try:
        pv = prevalidate(train, spec, K=config.folds, seed=int(substream(seed, "pv", i).integers(2**63)))
        f_pv = fit_external(config.external_kind, pv.ytilde, train.Z, train.y, config.include_intercept, **kw)
        b_pv, sep = f_pv.beta_pv, sep + f_pv.separated
    except NumericalError:
        b_pv = float("nan")
    try:
        model = fit_internal(spec, train.X, train.y, rng=substream(seed, "benchmark", i))
        yhat = predict(model, test.X)
        f_b = fit_external(config.external_kind, yhat, test.Z, test.y, config.include_intercept, **kw)
        b_b, sep = f_b.beta_pv, sep + f_b.separated
    except NumericalError:
        b_b = float("nan")
    return b_pv, b_b, sep


def coefficient_bias_study(
    config: ScenarioConfig, reps: int = 1000, seed: int = 0, workers: int = 1, n_boot: int = 2000
) -> BiasReport:
    """Median PV coefficient versus the benchmark fit on an independent test set.

    Replicate ``i`` uses the same training and test datasets for any ``K``, so
    studies that differ only in ``K`` are paired.  ``bias_se`` is a bootstrap
    SE of the median difference (separated logistic fits are kept, which is
    why medians are used).
    """
    out = map_reps(partial(_bias_rep, config=config, seed=seed), reps, workers)
    a = np.array([o[0] for o in out])
    b = np.array([o[1] for o in out])
    ok = ~np.isnan(a) & ~np.isnan(b)
    a_ok, b_ok = a[ok], b[ok]
    boot = substream(seed, "bootstrap")
    idx = boot.integers(0, a_ok.size, size=(n_boot, a_ok.size))
    diffs = np.median(a_ok[idx], axis=1) - np.median(b_ok[idx], axis=1)
    return BiasReport(
        config,
        float(np.median(a_ok)),
        float(np.median(b_ok)),
        float(np.std(diffs, ddof=1)),
        reps,
        int((~ok).sum()),
        int(sum(o[2] for o in out)),
        seed,
        a,
        b,
    )
