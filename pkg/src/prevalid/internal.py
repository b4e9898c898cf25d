"""Prediction rules fit inside each pre-validation training fold.

Five kinds are supported, selected by ``InternalModelSpec.kind``:

``ols``            least squares on all features
``lasso_l``        lasso stopped on the LARS path with exactly ``l`` nonzeros
``lda_top_g``      LDA on the ``g`` features most correlated with the labels
``corr_centroid``  correlation-to-good-centroid classifier with a
                   misclassification-controlled cutoff
``plr_cv``         L1 logistic regression whose sparsity is chosen by inner CV

Correlation-based selection uses Pearson correlation on centered columns and
ranks by absolute value; ties go to the lower column index.  Classifier fits
standardize the features they use with training means and SDs, so they are
invariant to per-column shifts and positive rescalings of ``X``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .data import make_folds
from .errors import FitError, SingularDesignError, ValidationError
from .rng import substream

__all__ = [
    "KINDS",
    "CLASSIFIER_KINDS",
    "InternalModelSpec",
    "FittedInternalModel",
    "fit_ols",
    "fit_lasso_l",
    "fit_lda_top_g",
    "fit_corr_centroid",
    "fit_plr_cv",
    "fit_l1_logistic",
    "fit_internal",
    "predict",
    "abs_correlations",
    "top_correlated",
]

CUTOFF_TOL = 1e-12
KINDS = ("ols", "lasso_l", "lda_top_g", "corr_centroid", "plr_cv")
CLASSIFIER_KINDS = frozenset({"lda_top_g", "corr_centroid", "plr_cv"})

_RANK_TOL = 1e-10
LDA_COND_LIMIT = 1e10
LDA_RIDGE = 1e-6


@dataclass(frozen=True)
class InternalModelSpec:
    """Which internal model to fit, with its tuning parameters.

    Only the parameters relevant to ``kind`` are used.  ``fit_intercept``
    applies to ``ols`` and ``lasso_l``; ``normalize`` (``lasso_l`` only)
    scales centered columns to unit norm before running LARS.  ``lda_output``
    is ``"indicator"`` (class label, the default) or ``"score"``
    (discriminant value).
    """

    kind: str
    l: int | None = None
    g: int | None = None
    m_genes: int | None = None
    allowed_misclass: int | None = None
    sparsity_grid: tuple[int, ...] | None = None
    inner_folds: int = 5
    fit_intercept: bool | None = None
    lda_output: str = "indicator"
    normalize: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown internal model kind {self.kind!r}; expected one of {KINDS}")
        if self.fit_intercept is None:
            object.__setattr__(self, "fit_intercept", self.kind == "lasso_l")
        if self.sparsity_grid is not None:
            object.__setattr__(self, "sparsity_grid", tuple(int(s) for s in self.sparsity_grid))
        req = {
            "lasso_l": ("l",),
            "lda_top_g": ("g",),
            "corr_centroid": ("m_genes", "allowed_misclass"),
            "plr_cv": ("sparsity_grid",),
        }.get(self.kind, ())
        for name in req:
            if getattr(self, name) is None:
                raise ValidationError(f"{self.kind} requires parameter {name!r}")
        for name in ("l", "g", "m_genes"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValidationError(f"{name} must be positive, got {v}")
        if self.allowed_misclass is not None and self.allowed_misclass < 0:
            raise ValidationError("allowed_misclass must be non-negative")
        if self.kind == "corr_centroid" and self.m_genes < 2:
            raise ValidationError("corr_centroid needs m_genes >= 2 (correlation across genes)")
        if self.kind == "plr_cv":
            if not self.sparsity_grid or min(self.sparsity_grid) < 1:
                raise ValidationError("sparsity_grid must be a nonempty list of positive counts")
            if self.inner_folds < 2:
                raise ValidationError("inner_folds must be at least 2")
        if self.lda_output not in ("indicator", "score"):
            raise ValidationError("lda_output must be 'indicator' or 'score'")

    @property
    def is_classifier(self) -> bool:
        return self.kind in CLASSIFIER_KINDS

    def check_dimensions(self, p: int) -> None:
        for name in ("l", "g", "m_genes"):
            v = getattr(self, name)
            if v is not None and v > p:
                raise ValidationError(f"{name}={v} exceeds the number of features p={p}")
        if self.sparsity_grid is not None and max(self.sparsity_grid) > p:
            raise ValidationError(f"sparsity grid entry exceeds p={p}")

    def to_dict(self) -> dict[str, Any]:
        keep = {
            "ols": ("fit_intercept",),
            "lasso_l": ("l", "fit_intercept", "normalize"),
            "lda_top_g": ("g", "lda_output"),
            "corr_centroid": ("m_genes", "allowed_misclass"),
            "plr_cv": ("sparsity_grid", "inner_folds"),
        }[self.kind]
        d = {"kind": self.kind}
        for k in keep:
            v = getattr(self, k)
            d[k] = list(v) if isinstance(v, tuple) else v
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "InternalModelSpec":
        if "kind" not in d:
            raise ValidationError("internal model spec needs a 'kind' field")
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown internal model spec field(s): {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "InternalModelSpec":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid spec JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ValidationError("spec JSON must be an object")
        return cls.from_dict(d)


@dataclass(frozen=True, eq=False)
class FittedInternalModel:
    """Parameters of a fitted internal model.

    Prediction uses only these stored arrays; no training data is kept.
    ``selected`` lists the feature indices the rule uses; ``center`` and
    ``scale`` are the training means/SDs of those features for the
    standardizing kinds.
    """

    kind: str
    p: int
    selected: np.ndarray
    coef: np.ndarray | None = None
    intercept: float = 0.0
    center: np.ndarray | None = None
    scale: np.ndarray | None = None
    params: dict[str, Any] = field(default_factory=dict)
    flags: dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# shared helpers


def abs_correlations(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """|Pearson correlation| of every column of ``X`` with ``y``; constant columns get 0."""
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    num = Xc.T @ yc
    den = np.sqrt(np.einsum("ij,ij->j", Xc, Xc)) * math.sqrt(float(yc @ yc))
    out = np.zeros(X.shape[1])
    ok = den > 0
    out[ok] = np.abs(num[ok]) / den[ok]
    return out


def top_correlated(X: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` columns with largest |correlation|, best first; ties -> lower index."""
    r = abs_correlations(X, y)
    return np.argsort(-r, kind="stable")[:k]


def _standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (X - center) / scale, center, scale


def _check_xy(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"incompatible shapes X{X.shape}, y{y.shape}")
    return X, y


def _check_binary(y: np.ndarray) -> int:
    if not np.all((y == 0) | (y == 1)):
        raise ValidationError("classifier needs 0/1 labels")
    n1 = int(y.sum())
    if n1 == 0 or n1 == y.shape[0]:
        raise ValidationError("classifier training data contains a single class")
    return n1


# ---------------------------------------------------------------------------
# least squares


def fit_ols(X_train, y_train, fit_intercept: bool = False) -> FittedInternalModel:
    """Least-squares fit on all columns of ``X_train``."""
    X, y = _check_xy(X_train, y_train)
    n, p = X.shape
    D = np.column_stack([X, np.ones(n)]) if fit_intercept else X
    if D.shape[1] > n:
        raise SingularDesignError(D.shape[1], n, "training design")
    beta, _, rank, sv = np.linalg.lstsq(D, y, rcond=None)
    if rank < D.shape[1] or sv[-1] <= _RANK_TOL * sv[0]:
        raise SingularDesignError(D.shape[1], int(np.sum(sv > _RANK_TOL * sv[0])), "training design")
    return FittedInternalModel(
        kind="ols",
        p=p,
        selected=np.arange(p),
        coef=beta[:p].copy(),
        intercept=float(beta[p]) if fit_intercept else 0.0,
    )


def _lars_lasso(Xs: np.ndarray, yc: np.ndarray, l: int, max_active: int, usable: np.ndarray):
    """Walk the lasso-modified LARS path on the (centered) design ``Xs``.

    Returns ``(beta, entry_order)`` at the first knot where ``l`` variables
    are active and the next event is a variable entry (or the end of the
    path).  That is the last point with exactly ``l`` nonzeros before the
    ``(l+1)``-th variable joins.
    """
    n, p = Xs.shape
    beta = np.zeros(p)
    r = yc.copy()
    c = Xs.T @ r
    c[~usable] = 0.0
    absc = np.abs(c)
    C = absc.max()
    if C <= 1e-12 * max(1.0, math.sqrt(float(yc @ yc))):
        return beta, []
    in_active = np.zeros(p, dtype=bool)
    active: list[int] = [int(np.argmax(absc))]
    in_active[active[0]] = True
    entered = list(active)
    tiny = 1e-12

    for _ in range(8 * p + 8):
        A = np.array(active)
        s = np.sign(c[A])
        XA = Xs[:, A] * s
        G = XA.T @ XA
        try:
            Gi1 = np.linalg.solve(G, np.ones(len(A)))
        except np.linalg.LinAlgError:
            Gi1 = np.linalg.lstsq(G, np.ones(len(A)), rcond=None)[0]
        AA = 1.0 / math.sqrt(max(float(Gi1.sum()), 1e-300))
        w = AA * Gi1
        u = XA @ w
        C = float(np.abs(c[A]).max())

        j_enter = -1
        if len(active) < max_active:
            a = Xs.T @ u
            cand = ~in_active & usable
            idx = np.flatnonzero(cand)
            ci, ai = c[idx], a[idx]
            with np.errstate(divide="ignore", invalid="ignore"):
                g1 = (C - ci) / (AA - ai)
                g2 = (C + ci) / (AA + ai)
            g1 = np.where(g1 > tiny, g1, np.inf)
            g2 = np.where(g2 > tiny, g2, np.inf)
            g = np.minimum(g1, g2)
            if idx.size and np.isfinite(g.min()):
                gmin = g.min()
                # simultaneous entries: lowest column index first
                pos = np.flatnonzero(g <= gmin * (1 + 1e-10))[0]
                gamma_hat, j_enter = float(g[pos]), int(idx[pos])
            else:
                gamma_hat = C / AA
        else:
            gamma_hat = C / AA

        d = s * w
        with np.errstate(divide="ignore", invalid="ignore"):
            gd = -beta[A] / d
        gd = np.where(gd > tiny, gd, np.inf)
        drop = int(np.argmin(gd)) if gd.size else -1
        gamma_tilde = float(gd[drop]) if gd.size else np.inf

        if gamma_tilde < gamma_hat:
            beta[A] += gamma_tilde * d
            r -= gamma_tilde * u
            jd = active.pop(drop)
            beta[jd] = 0.0
            in_active[jd] = False
            c = Xs.T @ r
            c[~usable] = 0.0
            continue

        beta[A] += gamma_hat * d
        r -= gamma_hat * u
        c = Xs.T @ r
        c[~usable] = 0.0
        if len(active) == l:
            return beta, entered
        if j_enter < 0:
            break
        active.append(j_enter)
        in_active[j_enter] = True
        entered.append(j_enter)

    raise FitError(f"lasso path ended with {len(active)} active variables; cannot reach l={l}")


def fit_lasso_l(X_train, y_train, l: int, fit_intercept: bool = True, normalize: bool = False) -> FittedInternalModel:
    """Lasso fit with exactly ``l`` nonzero coefficients.

    Columns are centered (when ``fit_intercept``) and, with ``normalize``,
    scaled to unit norm.  The LARS path with the lasso modification is
    followed until ``l`` variables are active right before the next entry.
    An all-zero centered response gives the all-zero model (flag
    ``degenerate``).
    """
    X, y = _check_xy(X_train, y_train)
    n, p = X.shape
    if not 1 <= l <= p:
        raise ValidationError(f"l={l} outside [1, p={p}]")
    xm = X.mean(axis=0) if fit_intercept else np.zeros(p)
    ym = float(y.mean()) if fit_intercept else 0.0
    Xc = X - xm
    yc = y - ym
    norms = np.sqrt(np.einsum("ij,ij->j", Xc, Xc))
    usable = norms > 1e-12 * max(1.0, norms.max())
    max_active = min(int(usable.sum()), n - 1 if fit_intercept else n)
    if l > max_active:
        raise ValidationError(f"l={l} exceeds the largest reachable active set ({max_active})")
    scale = np.where(usable, norms, 1.0) if normalize else np.ones(p)
    Xs = np.where(usable, Xc / scale, 0.0)
    beta_s, order = _lars_lasso(Xs, yc, l, max_active, usable)
    coef = np.where(usable, beta_s / scale, 0.0)
    nz = np.flatnonzero(coef)
    return FittedInternalModel(
        kind="lasso_l",
        p=p,
        selected=nz,
        coef=coef,
        intercept=ym - float(xm @ coef),
        params={"entry_order": order},
        flags={"degenerate": nz.size == 0},
    )


# ---------------------------------------------------------------------------
# classifiers


def fit_lda_top_g(X_train, y_train_binary, g: int, output: str = "indicator") -> FittedInternalModel:
    """LDA on the ``g`` features most correlated with the labels.

    Uses the pooled within-class covariance of the standardized selected
    features; if its condition number exceeds 1e10 a ridge of
    ``1e-6 * trace / g`` is added (flag ``ridge``).  Priors are the training
    class proportions.
    """
    X, y = _check_xy(X_train, y_train_binary)
    n1 = _check_binary(y)
    n, p = X.shape
    if not 1 <= g <= p:
        raise ValidationError(f"g={g} outside [1, p={p}]")
    sel = top_correlated(X, y, g)
    Xs, center, scale = _standardize(X[:, sel])
    is1 = y == 1
    m1 = Xs[is1].mean(axis=0)
    m0 = Xs[~is1].mean(axis=0)
    R = np.where(is1[:, None], Xs - m1, Xs - m0)
    S = R.T @ R / max(n - 2, 1)
    ev = np.linalg.eigvalsh(S)
    ridge = 0.0
    if ev[0] <= 0 or ev[-1] / ev[0] > LDA_COND_LIMIT:
        ridge = LDA_RIDGE * float(np.trace(S)) / g
        if ridge <= 0:
            ridge = LDA_RIDGE
        S = S + ridge * np.eye(g)
    wvec = np.linalg.solve(S, m1 - m0)
    offset = float(wvec @ (m0 + m1)) / 2.0 - math.log(n1 / (n - n1))
    return FittedInternalModel(
        kind="lda_top_g",
        p=p,
        selected=sel,
        coef=wvec,
        intercept=-offset,
        center=center,
        scale=scale,
        params={"mean0": m0, "mean1": m1, "output": output},
        flags={"ridge": ridge},
    )


def _row_correlations(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    Ac = A - A.mean(axis=1, keepdims=True)
    vc = v - v.mean()
    den = np.sqrt(np.einsum("ij,ij->i", Ac, Ac)) * math.sqrt(float(vc @ vc))
    out = np.zeros(A.shape[0])
    ok = den > 0
    out[ok] = (Ac[ok] @ vc) / den[ok]
    return out


def fit_corr_centroid(
    X_train, y_train_binary, m_genes: int, allowed_misclass: int, good_label: int = 0
) -> FittedInternalModel:
    """Correlation-to-centroid classifier.

    Selects the ``m_genes`` features most correlated with the labels, forms the
    centroid of the good class, and picks the smallest cutoff ``c`` such that
    at most ``allowed_misclass`` poor-class training cases correlate with the
    centroid above ``c``.  New cases with correlation above ``c`` are called
    good; the prediction is the class label (``good_label`` for good).
    """
    X, y = _check_xy(X_train, y_train_binary)
    _check_binary(y)
    n, p = X.shape
    if not 2 <= m_genes <= p:
        raise ValidationError(f"m_genes={m_genes} outside [2, p={p}]")
    sel = top_correlated(X, y, m_genes)
    Xs, center, scale = _standardize(X[:, sel])
    good = y == good_label
    centroid_s = Xs[good].mean(axis=0)
    r_poor = np.sort(_row_correlations(Xs[~good], centroid_s))[::-1]
    flags = {}
    if allowed_misclass >= r_poor.size:
        cutoff = -1.0
        flags["permissive"] = True
        if allowed_misclass > r_poor.size:
            flags["fewer_poor_than_allowed"] = True
    else:
        cutoff = float(r_poor[allowed_misclass])
    return FittedInternalModel(
        kind="corr_centroid",
        p=p,
        selected=sel,
        center=center,
        scale=scale,
        params={
            "centroid": center + scale * centroid_s,
            "cutoff": cutoff,
            "good_label": int(good_label),
        },
        flags=flags,
    )


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def fit_l1_logistic(
    Xs: np.ndarray,
    y: np.ndarray,
    lam: float,
    beta0: float | None = None,
    beta: np.ndarray | None = None,
    tol: float = 1e-7,
    max_outer: int = 100,
    max_inner: int = 1000,
) -> tuple[float, np.ndarray, bool]:
    """L1-penalized logistic regression on standardized columns.

    Minimizes ``-loglik/n + lam * ||beta||_1`` (intercept unpenalized) by
    proximal Newton: each outer step forms the IRLS quadratic and solves the
    weighted lasso by coordinate descent over a working set grown from KKT
    violations.  Returns ``(intercept, beta, converged)``.
    """
    n, p = Xs.shape
    b = np.zeros(p) if beta is None else beta.copy()
    if beta0 is None:
        ybar = min(max(float(y.mean()), 1e-6), 1 - 1e-6)
        b0 = math.log(ybar / (1 - ybar))
    else:
        b0 = float(beta0)
    eta = b0 + Xs @ b
    converged = False
    for _ in range(max_outer):
        pr = _sigmoid(eta)
        w = np.maximum(pr * (1 - pr), 1e-5)
        z = eta + (y - pr) / w
        r = z - eta
        work = set(np.flatnonzero(b).tolist())
        for sweep in range(50):
            grad = np.abs(Xs.T @ (w * r)) / n
            viol = [int(j) for j in np.flatnonzero(grad > lam * (1 + 1e-9)) if j not in work]
            if not viol and sweep > 0:
                break
            work.update(viol)
            ws = sorted(work)
            v = {j: float(w @ (Xs[:, j] ** 2)) / n for j in ws}
            for _ in range(max_inner):
                dmax = 0.0
                delta0 = float(w @ r) / float(w.sum())
                b0 += delta0
                r -= delta0
                for j in ws:
                    xj = Xs[:, j]
                    gj = float((w * xj) @ r) / n + v[j] * b[j]
                    new = math.copysign(max(abs(gj) - lam, 0.0), gj) / v[j] if v[j] > 0 else 0.0
                    if new != b[j]:
                        r -= xj * (new - b[j])
                        dmax = max(dmax, v[j] * (new - b[j]) ** 2)
                        b[j] = new
                if dmax < tol * tol and abs(delta0) < tol:
                    break
        eta_new = b0 + Xs @ b
        change = float(np.max(np.abs(eta_new - eta)))
        eta = eta_new
        if not np.all(np.isfinite(eta)) or np.max(np.abs(b)) > 1e4:
            return b0, b, False
        if change < 1e-6:
            converged = True
            break
    return b0, b, converged


def _l1_path_to_counts(
    Xs: np.ndarray, y: np.ndarray, targets: list[int], n_grid: int = 60, bisect_steps: int = 50
) -> dict[int, tuple[float, np.ndarray, float, bool] | None]:
    """Penalized fits whose active sets have exactly the target sizes.

    Walks a geometric penalty grid downward from the smallest penalty that
    zeros everything, brackets each target count and bisects the log
    penalty.  If a count cannot be hit exactly after ``bisect_steps`` the
    nearest count wins (smaller on ties).  Failed fits map to ``None``.
    """
    n = Xs.shape[0]
    lam_max = float(np.max(np.abs(Xs.T @ (y - y.mean())))) / n
    if lam_max <= 0:
        return {t: None for t in targets}
    grid = lam_max * np.logspace(0, -3, n_grid)
    results: dict[int, tuple] = {}
    b0, b = None, None
    fits = []  # (lam, count, b0, b, converged)
    remaining = sorted(set(targets))
    for lam in grid:
        b0, b, ok = fit_l1_logistic(Xs, y, lam, b0, b)
        cnt = int(np.count_nonzero(b))
        fits.append((lam, cnt, b0, b.copy(), ok))
        if not ok:
            break
        if cnt >= remaining[-1]:
            break

    for t in remaining:
        hit = [f for f in fits if f[1] == t and f[4]]
        if hit:
            f = hit[0]
            results[t] = (f[2], f[3], f[0], True)
            continue
        above = [f for f in fits if f[1] > t and f[4]]
        below = [f for f in fits if f[1] < t and f[4]]
        if not above or not below:
            good = [f for f in fits if f[4]]
            if not good:
                results[t] = None
                continue
            f = min(good, key=lambda f: (abs(f[1] - t), f[1]))
            results[t] = (f[2], f[3], f[0], False)
            continue
        hi = max(below, key=lambda f: -f[0])  # smallest penalty with count < t
        lo = min(above, key=lambda f: -f[0])  # largest penalty with count > t
        lhi, llo = math.log(hi[0]), math.log(lo[0])
        best = min((hi, lo), key=lambda f: (abs(f[1] - t), f[1]))
        wb0, wb = hi[2], hi[3]
        found = None
        for _ in range(bisect_steps):
            mid = 0.5 * (lhi + llo)
            cb0, cb, ok = fit_l1_logistic(Xs, y, math.exp(mid), wb0, wb)
            cnt = int(np.count_nonzero(cb))
            cand = (math.exp(mid), cnt, cb0, cb.copy(), ok)
            if ok and (abs(cnt - t), cnt) < (abs(best[1] - t), best[1]):
                best = cand
            if ok and cnt == t:
                found = cand
                break
            if not ok or cnt > t:
                llo = mid
            else:
                lhi = mid
                wb0, wb = cb0, cb
        f = found or best
        results[t] = (f[2], f[3], f[0], found is not None)
    return results


def fit_plr_cv(
    X_train,
    y_train_binary,
    sparsity_grid,
    inner_folds: int = 5,
    seed: int = 0,
    rng: np.random.Generator | None = None,
) -> FittedInternalModel:
    """L1 logistic regression with the number of active features chosen by inner CV.

    For every grid size the penalty is tuned until exactly that many features
    are active.  The size with the lowest inner-CV misclassification wins
    (ties -> smallest size) and is refit on all of ``X_train``.
    """
    X, y = _check_xy(X_train, y_train_binary)
    _check_binary(y)
    n, p = X.shape
    grid = sorted(set(int(s) for s in sparsity_grid))
    if max(grid) > p:
        raise ValidationError(f"sparsity grid entry exceeds p={p}")
    if rng is None:
        rng = substream(seed, "plr_cv")
    folds = make_folds(n, min(inner_folds, n), stratify_labels=y, rng=rng)

    errors = {s: 0 for s in grid}
    failed: set[int] = set()
    for k in range(folds.K):
        tr, te = folds.train_index(k), folds.test_index(k)
        Xs, center, scale = _standardize(X[tr])
        Xte = (X[te] - center) / scale
        fits = _l1_path_to_counts(Xs, y[tr], grid)
        for s in grid:
            f = fits.get(s)
            if f is None:
                failed.add(s)
                continue
            b0, b, _, _ = f
            pred = (b0 + Xte @ b > 0).astype(float)
            errors[s] += int(np.sum(pred != y[te]))
    ok = [s for s in grid if s not in failed]
    if not ok:
        raise FitError("penalized logistic fit failed at every sparsity level")
    best = min(ok, key=lambda s: (errors[s], s))

    Xs, center, scale = _standardize(X)
    f = _l1_path_to_counts(Xs, y, [best])[best]
    if f is None:
        raise FitError(f"penalized logistic refit failed at sparsity {best}")
    b0, b, lam, exact = f
    sel = np.flatnonzero(b)
    coef = np.zeros(p)
    coef[sel] = b[sel] / scale[sel]
    return FittedInternalModel(
        kind="plr_cv",
        p=p,
        selected=sel,
        coef=coef,
        intercept=float(b0 - np.sum(b[sel] * center[sel] / scale[sel])),
        params={
            "sparsity": best,
            "penalty": lam,
            "cv_error": {s: errors[s] / n for s in ok},
        },
        flags={"exact_count": exact, "failed_grid": sorted(failed)},
    )


# ---------------------------------------------------------------------------
# dispatch


def fit_internal(
    spec: InternalModelSpec, X_train, y_train, rng: np.random.Generator | None = None
) -> FittedInternalModel:
    """Fit the model described by ``spec``; ``rng`` feeds inner CV for ``plr_cv``."""
    k = spec.kind
    if k == "ols":
        return fit_ols(X_train, y_train, fit_intercept=bool(spec.fit_intercept))
    if k == "lasso_l":
        return fit_lasso_l(X_train, y_train, spec.l, fit_intercept=bool(spec.fit_intercept), normalize=spec.normalize)
    if k == "lda_top_g":
        return fit_lda_top_g(X_train, y_train, spec.g, output=spec.lda_output)
    if k == "corr_centroid":
        return fit_corr_centroid(X_train, y_train, spec.m_genes, spec.allowed_misclass)
    return fit_plr_cv(
        X_train, y_train, spec.sparsity_grid, spec.inner_folds, rng=rng if rng is not None else substream(0, "plr_cv")
    )


def predict(model: FittedInternalModel, X_new) -> np.ndarray:
    """Predictions for new rows: real values for regressions, 0/1 labels for classifiers."""
    X = np.asarray(X_new, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.p:
        raise ValidationError(f"X_new has {X.shape[1]} columns, model was fit on {model.p}")
    k = model.kind
    if k in ("ols", "lasso_l", "plr_cv"):
        eta = X @ model.coef + model.intercept
        if k == "plr_cv":
            return (eta > 0).astype(float)
        return eta
    Xs = (X[:, model.selected] - model.center) / model.scale
    if k == "lda_top_g":
        score = Xs @ model.coef + model.intercept
        if model.params.get("output") == "score":
            return score
        return (score > 0).astype(float)
    # corr_centroid
    centroid_s = (model.params["centroid"] - model.center) / model.scale
    r = _row_correlations(Xs, centroid_s)
    # a training case sitting exactly at the cutoff must not flip on recomputation
    good = r > model.params["cutoff"] + CUTOFF_TOL
    gl = model.params["good_label"]
    return np.where(good, gl, 1 - gl).astype(float)

