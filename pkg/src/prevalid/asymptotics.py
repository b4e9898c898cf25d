"""Limiting null laws of the leave-one-out PV t-statistic and Monte Carlo checks.

With X and y independent standard normal and a least-squares internal model,
the t-statistic of the PV coefficient in the intercept-free external linear
model converges to

* ``(C - p) / sqrt(C)``, ``C ~ chi2_p``, when there are no external predictors;
* a law built from ``N ~ N(0, I_p)`` and ``A_k ~ N(0, sigma_k^2 I_p)`` when
  ``Z_ik = y_i + gamma_ik`` with ``gamma_ik ~ N(0, sigma_k^2)``.

For the second law two algebraic forms exist.  ``form="combined"`` (default)
divides the limit of the coefficient by the limit of its standard error::

    [(N'N - p) (1 - a) - N'A w] / sqrt(N'N (1 - a))

with ``w = (11' + diag(sigma^2))^-1 1`` and ``a = 1'w``.  ``form="two_term"``
is ``(N'N - p)/sqrt(N'N) - N'A w / sqrt(N'N (1 - a))``; the two differ by a
factor ``sqrt(1 - a)`` on the first term.  :func:`theorem2_form_gap`
measures the difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import LeverageError, ValidationError
from .external import fit_linear_external
from .prevalidation import hat_diagonal, loo_linear_prevalidate
from .rng import substream

__all__ = [
    "LimitLawSample",
    "NullTSample",
    "LemmaA1Summary",
    "theorem1_statistic",
    "sample_theorem1",
    "theorem2_weights",
    "sample_theorem2",
    "theorem2_form_gap",
    "empirical_null_t",
    "ks_distance",
    "ks_distance_cdf",
    "lemma_a1_check",
    "theorem1_decomposition",
    "leverage_moments",
]


@dataclass(frozen=True, eq=False)
class LimitLawSample:
    law: str
    p: int
    draws: np.ndarray
    seed: int
    sigmas: tuple[float, ...] = ()
    form: str | None = None

    def to_csv(self, path) -> None:
        np.savetxt(path, self.draws, fmt="%.17g", header="draw", comments="")


def theorem1_statistic(C, p: int):
    """``(C - p) / sqrt(C)``."""
    C = np.asarray(C, dtype=float)
    return (C - p) / np.sqrt(C)


def sample_theorem1(p: int, ndraws: int, seed: int = 0) -> LimitLawSample:
    if p < 1 or ndraws < 1:
        raise ValidationError("need p >= 1 and ndraws >= 1")
    C = substream(seed, "no_external_law").chisquare(p, ndraws)
    return LimitLawSample("no_external", p, theorem1_statistic(C, p), seed)


def theorem2_weights(sigmas) -> tuple[np.ndarray, float]:
    """``w = (11' + diag(sigma^2))^-1 1`` and ``a = 1'w``; raises unless ``1 - a > 0``."""
    s = np.asarray(sigmas, dtype=float)
    if s.ndim != 1 or s.size < 1:
        raise ValidationError("need at least one external noise SD")
    if np.any(s <= 0):
        raise ValidationError("external noise SDs must be positive")
    e = s.size
    M = np.ones((e, e)) + np.diag(s**2)
    w = np.linalg.solve(M, np.ones(e))
    a = float(w.sum())
    if not 1.0 - a > 0.0:
        raise ValidationError(f"1 - 1'(11' + Cov)^-1 1 = {1.0 - a:.3g} is not positive")
    return w, a


def sample_theorem2(p: int, sigmas, ndraws: int, seed: int = 0, form: str = "combined") -> LimitLawSample:
    if p < 1 or ndraws < 1:
        raise ValidationError("need p >= 1 and ndraws >= 1")
    if form not in ("combined", "two_term"):
        raise ValidationError("form must be 'combined' or 'two_term'")
    w, a = theorem2_weights(sigmas)
    s = np.asarray(sigmas, dtype=float)
    rng = substream(seed, "external_law")
    N = rng.standard_normal((ndraws, p))
    A = rng.standard_normal((ndraws, p, s.size)) * s
    NN = np.einsum("ij,ij->i", N, N)
    NAw = np.einsum("ij,ijk,k->i", N, A, w)
    if form == "combined":
        draws = ((NN - p) * (1 - a) - NAw) / np.sqrt(NN * (1 - a))
    else:
        draws = (NN - p) / np.sqrt(NN) - NAw / np.sqrt(NN * (1 - a))
    return LimitLawSample("external", p, draws, seed, tuple(float(v) for v in s), form)


def theorem2_form_gap(p: int, sigmas, ndraws: int = 100_000, seed: int = 0) -> float:
    """KS distance between the two algebraic forms of the second limit law (same draws)."""
    a = sample_theorem2(p, sigmas, ndraws, seed, "combined").draws
    b = sample_theorem2(p, sigmas, ndraws, seed, "two_term").draws
    return ks_distance(a, b)


@dataclass(frozen=True, eq=False)
class NullTSample:
    t: np.ndarray
    redraws: int
    n: int
    p: int
    sigmas: tuple[float, ...] = ()
    seed: int = 0


def _null_t_once(rng, n, p, sigmas, fit_intercept):
    X = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    Z = y[:, None] + rng.standard_normal((n, len(sigmas))) * np.asarray(sigmas, dtype=float)
    yt = loo_linear_prevalidate(X, y)
    return fit_linear_external(yt, Z, y, include_intercept=fit_intercept).stat_pv


def empirical_null_t(
    n: int, p: int, sigmas=(), reps: int = 5000, seed: int = 0, fit_intercept: bool = False
) -> NullTSample:
    """t-statistics of the leave-one-out PV coefficient under the null.

    Each replicate draws X (n x p) and y iid N(0,1), sets
    ``Z_ik = y_i + N(0, sigma_k^2)``, builds the closed-form leave-one-out
    predictor and fits the external linear model (no intercept by default).
    Replicates hitting a leverage-one row are redrawn and counted.
    """
    if not 1 <= p < n:
        raise ValidationError("need 1 <= p < n")
    sig = tuple(float(s) for s in sigmas)
    t = np.empty(reps)
    redraws = 0
    for i in range(reps):
        rng = substream(seed, "null_t", i)
        while True:
            try:
                t[i] = _null_t_once(rng, n, p, sig, fit_intercept)
                break
            except LeverageError:
                redraws += 1
    return NullTSample(t, redraws, n, p, sig, seed)


def ks_distance(sample_a, sample_b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|`` over the pooled points."""
    a = np.sort(np.asarray(sample_a, dtype=float).ravel())
    b = np.sort(np.asarray(sample_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValidationError("ks_distance needs two nonempty samples")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_distance_cdf(sample, cdf) -> float:
    """One-sample KS distance between the empirical CDF of ``sample`` and ``cdf``."""
    x = np.sort(np.asarray(sample, dtype=float).ravel())
    if x.size == 0:
        raise ValidationError("ks_distance_cdf needs a nonempty sample")
    F = cdf(x)
    m = x.size
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - F), np.max(F - (i - 1) / m)))


@dataclass(frozen=True, eq=False)
class LemmaA1Summary:
    n: int
    p: int
    reps: int
    mean: float
    variance: float
    df_estimate: float
    ks_chi2: float
    max_trace_error: float
    cov_d11_d22: float
    values: np.ndarray = field(repr=False)


def lemma_a1_check(n: int, p: int, reps: int = 200, seed: int = 0) -> LemmaA1Summary:
    """Pool ``n * d_ii`` over ``reps`` Gaussian designs and compare with chi2_p.

    ``df_estimate`` is the moment estimate (the pooled mean).
    ``max_trace_error`` is the largest ``|mean_i d_ii - p/n|`` over draws.
    ``cov_d11_d22`` is the sample covariance of the first two leverages
    across draws.
    """
    if not 1 <= p < n:
        raise ValidationError("need 1 <= p < n")
    vals = np.empty((reps, n))
    err = 0.0
    for r in range(reps):
        X = substream(seed, "leverage", r).standard_normal((n, p))
        _, d = hat_diagonal(X)
        vals[r] = n * d
        err = max(err, abs(d.mean() - p / n))
    pooled = vals.ravel()
    cov = float(np.cov(vals[:, 0], vals[:, 1])[0, 1]) / n**2 if reps > 1 else float("nan")
    return LemmaA1Summary(
        n,
        p,
        reps,
        float(pooled.mean()),
        float(pooled.var(ddof=1)),
        float(pooled.mean()),
        ks_distance_cdf(pooled, stats.chi2(p).cdf),
        err,
        cov,
        pooled,
    )


def theorem1_decomposition(n: int, p: int, reps: int = 200, seed: int = 0) -> dict[str, float]:
    """Mean absolute remainders of the two expansions behind the first limit law.

    With ``X = U E V'`` and ``N = U'y``: ``ytilde'y - (N'N - y'Dy)`` and
    ``ytilde'ytilde - N'N``.  Both shrink like 1/n.
    """
    g1 = np.empty(reps)
    g2 = np.empty(reps)
    for r in range(reps):
        rng = substream(seed, "decomp", n, r)
        X = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        U = np.linalg.svd(X, full_matrices=False)[0]
        d = np.einsum("ij,ij->i", U, U)
        N = U.T @ y
        yt = (U @ N - d * y) / (1 - d)
        NN = float(N @ N)
        g1[r] = yt @ y - (NN - float(y @ (d * y)))
        g2[r] = yt @ yt - NN
    return {"numerator": float(np.mean(np.abs(g1))), "denominator": float(np.mean(np.abs(g2)))}


def leverage_moments(n: int, p: int, reps: int = 200, seed: int = 0) -> dict[str, float]:
    """Mean and variance of ``y'Dy`` over draws (it concentrates at ``p``)."""
    v = np.empty(reps)
    for r in range(reps):
        rng = substream(seed, "ydy", n, r)
        X = rng.standard_normal((n, p))
        y = rng.standard_normal(n)
        _, d = hat_diagonal(X)
        v[r] = float(y @ (d * y))
    return {"mean": float(v.mean()), "variance": float(v.var(ddof=1))}

