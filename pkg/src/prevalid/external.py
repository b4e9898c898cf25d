"""External comparison regressions of ``y`` on the pre-validated predictor and ``Z``.

Column order in every fit is ``pv, z_1..z_e[, intercept]``.  The PV
coefficient gets a one-sided p-value for ``beta_pv > 0``; all other
coefficients get two-sided p-values.  Deviance-drop p-values use the upper
chi-square(1) tail for every coefficient, PV included.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import FitError, NumericalError, SingularDesignError, ValidationError

__all__ = [
    "ExternalFit",
    "fit_linear_external",
    "fit_logistic_external",
    "fit_external",
    "deviance_drop",
    "format_table",
]

IRLS_MAX_ITER = 100
SEPARATION_THRESHOLD = 15.0
_RANK_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ExternalFit:
    """Result of an external regression.

    ``deviance`` is the residual sum of squares for linear fits and
    ``-2 * loglik`` for logistic fits; ``dispersion`` is sigma^2-hat and 1
    respectively, so scaled deviance drops are ``diff(deviance) / dispersion``.
    """

    kind: str
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    stat: np.ndarray
    p_two_sided: np.ndarray
    p_one_sided_pv: float
    delta_deviance: np.ndarray
    p_deviance: np.ndarray
    deviance: float
    dispersion: float
    loglik: float
    df_resid: int
    n: int
    include_intercept: bool
    sigma2: float | None = None
    converged: bool = True
    separated: bool = False
    iterations: int = 0
    flags: dict = field(default_factory=dict)

    @property
    def beta_pv(self) -> float:
        return float(self.coef[0])

    @property
    def stat_pv(self) -> float:
        return float(self.stat[0])

    @property
    def delta_deviance_pv(self) -> float:
        return float(self.delta_deviance[0])

    def to_dict(self) -> dict:
        rows = []
        for j, name in enumerate(self.names):
            rows.append(
                {
                    "predictor": name,
                    "coefficient": float(self.coef[j]),
                    "sd": float(self.se[j]),
                    "statistic": float(self.stat[j]),
                    "p_value": float(self.p_one_sided_pv if j == 0 else self.p_two_sided[j]),
                    "p_value_two_sided": float(self.p_two_sided[j]),
                    "delta_deviance": float(self.delta_deviance[j]),
                    "p_value_deviance": float(self.p_deviance[j]),
                }
            )
        return {
            "kind": self.kind,
            "n": self.n,
            "df_resid": self.df_resid,
            "include_intercept": self.include_intercept,
            "sigma2": self.sigma2,
            "deviance": self.deviance,
            "loglik": self.loglik,
            "converged": self.converged,
            "separated": self.separated,
            "coefficients": rows,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _design(ytilde, Z, include_intercept: bool, y=None):
    yt = np.asarray(ytilde, dtype=float).ravel()
    n = yt.shape[0]
    Zm = np.empty((n, 0)) if Z is None else np.asarray(Z, dtype=float)
    if Zm.ndim == 1:
        Zm = Zm[:, None]
    if Zm.shape[0] != n:
        raise ValidationError(f"Z has {Zm.shape[0]} rows, ytilde has {n}")
    if y is not None and np.asarray(y).shape[0] != n:
        raise ValidationError("y and ytilde differ in length")
    cols = [yt[:, None], Zm]
    names = ["pv"] + [f"z_{k + 1}" for k in range(Zm.shape[1])]
    if include_intercept:
        cols.append(np.ones((n, 1)))
        names.append("intercept")
    return np.hstack(cols), tuple(names)


def _check_rank(W: np.ndarray) -> None:
    n, q = W.shape
    if n <= q:
        raise SingularDesignError(q, min(n, q), f"external design ({n} rows)")
    sv = np.linalg.svd(W, compute_uv=False)
    if sv[-1] <= _RANK_TOL * sv[0] * max(n, q) or sv[0] == 0:
        rank = int(np.sum(sv > _RANK_TOL * sv[0] * max(n, q))) if sv[0] > 0 else 0
        raise SingularDesignError(q, rank, "external design")


def _p_two(stat, df=None):
    a = np.abs(stat)
    if df is None:
        return 2.0 * special.ndtr(-a)
    return 2.0 * special.stdtr(df, -a)


def fit_linear_external(ytilde, Z, y, include_intercept: bool = False) -> ExternalFit:
    """OLS of ``y`` on ``(ytilde, Z[, 1])`` with t-tests.

    sigma^2 is estimated as RSS / (n - number of columns) and t-statistics are
    referred to the t distribution with that many degrees of freedom.  The
    per-coefficient deviance drop is the scaled RSS increase from deleting
    the column, which equals ``t**2``.
    """
    y = np.asarray(y, dtype=float).ravel()
    W, names = _design(ytilde, Z, include_intercept, y)
    n, q = W.shape
    _check_rank(W)
    Q, R = np.linalg.qr(W)
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - W @ coef
    rss = float(resid @ resid)
    df = n - q
    sigma2 = rss / df
    Rinv = np.linalg.solve(R, np.eye(q))
    diag_inv = np.einsum("ij,ij->i", Rinv, Rinv)  # diag((W'W)^-1)
    se = np.sqrt(sigma2 * diag_inv)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(se > 0, coef / se, np.sign(coef) * np.inf)
    p2 = _p_two(stat, df)
    p1 = float(special.stdtr(df, -stat[0]))
    dd = stat**2
    loglik = -0.5 * n * (math.log(2 * math.pi * rss / n) + 1) if rss > 0 else math.inf
    return ExternalFit(
        kind="linear",
        names=names,
        coef=coef,
        se=se,
        stat=stat,
        p_two_sided=p2,
        p_one_sided_pv=p1,
        delta_deviance=dd,
        p_deviance=special.chdtrc(1, dd),
        deviance=rss,
        dispersion=sigma2,
        loglik=loglik,
        df_resid=df,
        n=n,
        include_intercept=include_intercept,
        sigma2=sigma2,
    )


def _logistic_deviance(y, eta):
    # -2 * loglik, stable for large |eta|
    return 2.0 * float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def _irls(W: np.ndarray, y: np.ndarray, max_iter: int = IRLS_MAX_ITER, tol: float = 1e-9):
    """Newton/IRLS for logistic regression with step halving on deviance increase.

    Converged means the accepted step is below ``tol`` relative to the
    coefficients.  Under separation the steps stay of order one, so the
    iteration cap is hit.  Returns ``(beta, deviance, converged, iterations)``.
    """
    n, q = W.shape
    beta = np.zeros(q)
    eta = np.zeros(n)
    dev = _logistic_deviance(y, eta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = special.expit(eta)
        w = mu * (1 - mu)
        score = W.T @ (y - mu)
        H = (W * w[:, None]).T @ W
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, score, rcond=None)[0]
        t = 1.0
        for _ in range(30):
            cand = beta + t * step
            eta_c = W @ cand
            dev_c = _logistic_deviance(y, eta_c)
            if dev_c <= dev + 1e-12 * (1 + abs(dev)):
                break
            t *= 0.5
        else:
            converged = True  # no descent direction left
            break
        beta, eta, dev = cand, eta_c, dev_c
        if t * np.max(np.abs(step)) < tol * (1.0 + np.max(np.abs(beta))):
            converged = True
            break
    return beta, dev, converged, it


def fit_logistic_external(
    ytilde, Z, y_binary, include_intercept: bool = True, deviance_for: str = "all"
) -> ExternalFit:
    """Logistic regression of binary ``y`` on ``(ytilde, Z[, 1])`` by IRLS.

    Wald z-scores use the inverse Fisher information at the estimate.
    ``deviance_for`` selects which deviance drops are computed by refitting
    without the column: ``"all"``, ``"pv"`` (first column only; the rest are
    NaN) or ``"none"``.  A fit is flagged ``separated`` when IRLS does not
    converge within 100 iterations or some coefficient times its column SD
    exceeds 15 in absolute value; its standard errors are then unreliable.
    """
    y = np.asarray(y_binary, dtype=float).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("logistic external model needs a 0/1 outcome")
    W, names = _design(ytilde, Z, include_intercept, y)
    n, q = W.shape
    _check_rank(W)
    beta, dev, converged, iters = _irls(W, y)
    if not np.all(np.isfinite(beta)):
        raise FitError("IRLS produced non-finite coefficients")
    mu = special.expit(W @ beta)
    w = mu * (1 - mu)
    H = (W * w[:, None]).T @ W
    try:
        cov = np.linalg.inv(H)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        se = np.full(q, np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(se > 0, beta / se, 0.0)

    sd = W.std(axis=0)
    is_int = np.array([nm == "intercept" for nm in names])
    std_coef = np.abs(beta) * np.where(is_int, 0.0, sd)
    separated = (not converged) or bool(np.any(std_coef > SEPARATION_THRESHOLD))

    dd = np.full(q, np.nan)
    targets = {"all": range(q), "pv": range(1), "none": range(0)}[deviance_for]
    for j in targets:
        keep = [i for i in range(q) if i != j]
        Wr = W[:, keep]
        if Wr.shape[1] == 0:
            dev_r = _logistic_deviance(y, np.zeros(n))
        else:
            _, dev_r, _, _ = _irls(Wr, y)
        dd[j] = max(dev_r - dev, 0.0)
    return ExternalFit(
        kind="logistic",
        names=names,
        coef=beta,
        se=se,
        stat=stat,
        p_two_sided=_p_two(stat),
        p_one_sided_pv=float(special.ndtr(-stat[0])),
        delta_deviance=dd,
        p_deviance=special.chdtrc(1, dd),
        deviance=dev,
        dispersion=1.0,
        loglik=-0.5 * dev,
        df_resid=n - q,
        n=n,
        include_intercept=include_intercept,
        converged=converged,
        separated=separated,
        iterations=iters,
    )


def fit_external(kind: str, ytilde, Z, y, include_intercept: bool, **kw) -> ExternalFit:
    if kind == "linear":
        return fit_linear_external(ytilde, Z, y, include_intercept)
    if kind == "logistic":
        return fit_logistic_external(ytilde, Z, y, include_intercept, **kw)
    raise ValidationError(f"external model kind must be 'linear' or 'logistic', got {kind!r}")


def deviance_drop(fit_full: ExternalFit, fit_reduced: ExternalFit) -> tuple[float, float]:
    """Scaled deviance increase from ``fit_full`` to the nested ``fit_reduced``.

    The reduced fit's columns must be the full fit's columns minus at most
    one.  Returns ``(delta, p)`` with ``p`` the upper chi-square(1) tail.
    """
    if fit_full.kind != fit_reduced.kind or fit_full.n != fit_reduced.n:
        raise ValidationError("deviance_drop needs two fits of the same kind on the same data")
    missing = set(fit_full.names) - set(fit_reduced.names)
    if not set(fit_reduced.names) <= set(fit_full.names) or len(missing) > 1:
        raise ValidationError(
            f"models are not nested by one column: {fit_full.names} vs {fit_reduced.names}"
        )
    delta = (fit_reduced.deviance - fit_full.deviance) / fit_full.dispersion
    scale = 1e-9 * max(1.0, abs(fit_full.deviance) / fit_full.dispersion)
    if delta < -scale:
        raise NumericalError(f"reduced model fits better than the full model (delta deviance {delta:.3g})")
    delta = max(delta, 0.0)
    return delta, float(special.chdtrc(1, delta))


def format_table(fits: dict[str, ExternalFit], pv_label: str = "PV", labels: dict[str, str] | None = None) -> str:
    """Aligned text table: one row per predictor and method, like a coefficient summary.

    ``fits`` maps a method label (e.g. ``"No PV"``, ``"10-fold PV"``) to its fit;
    all fits must share column names.  ``labels`` renames columns for display.
    """
    labels = labels or {}
    header = ["Predictor", "Method", "Coefficient", "SD", "Statistic", "p-value", "Delta Deviance", "p-value (dev)"]
    first = next(iter(fits.values()))
    rows = []
    for j, name in enumerate(first.names):
        if name == "intercept":
            continue
        label = pv_label if name == "pv" else labels.get(name, name)
        for i, (method, fit) in enumerate(fits.items()):
            p = fit.p_one_sided_pv if j == 0 else fit.p_two_sided[j]
            rows.append(
                [
                    label if i == 0 else "",
                    method,
                    f"{fit.coef[j]:.2f}",
                    f"{fit.se[j]:.2f}",
                    f"{fit.stat[j]:.2f}",
                    _fmt_p(p),
                    f"{fit.delta_deviance[j]:.2f}" if np.isfinite(fit.delta_deviance[j]) else "NA",
                    _fmt_p(fit.p_deviance[j]) if np.isfinite(fit.p_deviance[j]) else "NA",
                ]
            )
    widths = [max(len(r[c]) for r in [header, *rows]) for c in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def _fmt_p(p: float) -> str:
    p = float(p)
    return f"{p:.3f}" if p >= 0.001 else f"{p:.1e}"
