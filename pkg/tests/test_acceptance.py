"""Acceptance suite.  Each test records one PASS/FAIL line printed at the end of the run."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE
from prevalid.asymptotics import (
    empirical_null_t,
    ks_distance,
    ks_distance_cdf,
    lemma_a1_check,
    sample_theorem1,
    sample_theorem2,
)
from prevalid.cli import run
from prevalid.data import Dataset
from prevalid.external import fit_linear_external
from prevalid.internal import InternalModelSpec
from prevalid.prevalidation import loo_linear_prevalidate, prevalidate
from prevalid.rng import substream
from prevalid.simulation import (
    ScenarioConfig,
    binomial_se,
    coefficient_bias_study,
    estimate_permutation_level,
    estimate_power,
    estimate_type1,
)

ALPHAS = (0.01, 0.05, 0.1)


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[k] = (bool(ok), detail)
    assert ok, detail


def _block_inverse(yt, Z, y):
    P = Z @ np.linalg.solve(Z.T @ Z, Z.T)
    return float(yt @ y - yt @ P @ y) / float(yt @ yt - yt @ P @ yt)


def test_criterion_01_loo_identity():
    worst = 0.0
    for i in range(200):
        rng = substream(1, "c1", i)
        n = int(rng.integers(10, 101))
        p = int(rng.integers(1, n // 2 + 1))
        ds = Dataset(rng.standard_normal(n), rng.standard_normal((n, p)))
        pv = prevalidate(ds, InternalModelSpec("ols"), K=n, seed=i)
        worst = max(worst, float(np.max(np.abs(pv.ytilde - loo_linear_prevalidate(ds.X, ds.y)))))
    record(1, worst < 1e-10, f"max |K=n refit - closed form| = {worst:.2e} (< 1e-10)")


def test_criterion_02_block_inverse():
    worst = 0.0
    for i in range(200):
        rng = substream(2, "c2", i)
        n = int(rng.integers(10, 101))
        e = int(rng.integers(1, 6))
        yt, y = rng.standard_normal(n), rng.standard_normal(n)
        Z = rng.standard_normal((n, e))
        b = fit_linear_external(yt, Z, y).beta_pv
        worst = max(worst, abs(b - _block_inverse(yt, Z, y)))
    record(2, worst < 1e-10, f"max |beta_pv - block inverse| = {worst:.2e} (< 1e-10)")


NULL_CELLS = [
    ("linear n=10,p=5,K=5", ScenarioConfig("linear_linear", n=10, p=5, e=1, K=5), 20000, 0.079),
    ("linear n=50,p=5,K=10", ScenarioConfig("linear_linear", n=50, p=5, e=1, K=10), 20000, 0.062),
    ("lasso n=10,p=100,l=5,K=5", ScenarioConfig("lasso_linear", n=10, p=100, e=1, l=5, K=5), 20000, 0.033),
    ("lda n=40,p=1000,g=10,K=10", ScenarioConfig("lda_logistic", n=40, p=1000, e=1, g=10, K=10), 5000, 0.106),
]


def test_criterion_03_null_type1_rates():
    lines, ok = [], True
    for i, (name, cfg, reps, target) in enumerate(NULL_CELLS):
        rep = estimate_type1(cfg, ALPHAS, reps, seed=int(substream(3, "c3", i).integers(2**63)))
        rate = rep.rate(0.05)
        tol = 3 * binomial_se(target, reps) + 0.005
        good = abs(rate - target) <= tol and not rep.flagged
        ok &= good
        lines.append(f"{name}: {rate:.4f} vs {target} +/- {tol:.3f}{'' if good else ' OUT'}")
    record(3, ok, "; ".join(lines))


@pytest.fixture(scope="module")
def null_t_e0():
    return empirical_null_t(2000, 5, reps=5000, seed=4).t


def test_criterion_04_no_external_limit(null_t_e0):
    ks_law = ks_distance(null_t_e0, sample_theorem1(5, 100_000, seed=41).draws)
    ks_t = ks_distance_cdf(null_t_e0, stats.t(1999).cdf)
    record(4, ks_law < 0.035 and ks_t > 0.05, f"KS to limit law {ks_law:.4f} (< 0.035); KS to t_1999 {ks_t:.4f} (> 0.05)")


def test_criterion_05_external_limit():
    emp = empirical_null_t(2000, 5, sigmas=(1.0,), reps=5000, seed=5).t
    ks_emp = ks_distance(emp, sample_theorem2(5, (1.0,), 100_000, seed=51).draws)
    ks_big = ks_distance(sample_theorem2(5, (1e3,), 100_000, seed=52).draws, sample_theorem1(5, 100_000, seed=53).draws)
    record(5, ks_emp < 0.04 and ks_big < 0.01, f"KS pipeline vs law {ks_emp:.4f} (< 0.04); sigma=1e3 vs first law {ks_big:.4f} (< 0.01)")


def test_criterion_06_leverage_chi2():
    s = lemma_a1_check(2000, 5, reps=200, seed=6)
    ok = abs(s.mean - 5) <= 0.15 and s.ks_chi2 < 0.03 and s.max_trace_error < 1e-12
    record(6, ok, f"mean n*d_ii {s.mean:.4f} (5 +/- 0.15); KS to chi2_5 {s.ks_chi2:.4f} (< 0.03); max |mean d_ii - p/n| {s.max_trace_error:.1e}")


LEVEL_CONFIGS = [
    ScenarioConfig("linear_linear", n=10, p=5, e=1, K=5),
    ScenarioConfig("lasso_linear", n=20, p=20, e=1, l=2, K=5),
    ScenarioConfig("lda_logistic", n=40, p=100, e=1, g=5, K=5),
]


def test_criterion_07_permutation_level():
    lines, ok = [], True
    for i, cfg in enumerate(LEVEL_CONFIGS):
        rep = estimate_permutation_level(cfg, ALPHAS, outer_reps=1000, B=200, seed=int(substream(7, "c7", i).integers(2**63)))
        n = rep.reps - rep.n_failed
        for kind in ("coefficient", "t_or_z", "deviance"):
            rs = rep.rates[kind]
            good = all(abs(r - a) <= 3 * binomial_se(a, n) for r, a in zip(rs, ALPHAS))
            ok &= good
            lines.append(f"{cfg.scenario}/{kind} " + "/".join(f"{r:.3f}" for r in rs) + ("" if good else " OUT"))
    record(7, ok, "; ".join(lines))


def test_criterion_08_power_parity():
    null = ScenarioConfig("linear_linear", n=20, p=5, e=1, K=5)
    alt = null.replace(beta=(0.45,) * 5)
    rep = estimate_power(null, alt, (0.05,), reps=1000, B=200, seed=8, null_reps=20000, statistic_kinds=("t_or_z",))
    perm, adj = rep.permutation["t_or_z"][0], rep.analytical_adjusted[0]
    record(8, abs(perm - adj) <= 3 * 0.016, f"permutation power {perm:.3f}, analytical at cutoff {rep.cutoffs[0]:.4f}: {adj:.3f} (|diff| <= 0.048)")


def test_criterion_09_median_bias():
    lin = coefficient_bias_study(ScenarioConfig("linear_linear", n=50, p=5, e=1, beta=(0.5,) * 5, K=10), 1000, seed=9)
    las = ScenarioConfig("lasso_linear", n=30, p=100, e=1, s=5, beta=(1.0,) * 5, l=5, K=5)
    b5 = coefficient_bias_study(las, 1000, seed=91)
    b10 = coefficient_bias_study(las.replace(K=10), 1000, seed=91)
    ok = (
        abs(lin.bias) <= 0.05
        and b5.median_pv <= b5.median_benchmark
        and b10.median_pv <= b10.median_benchmark
        and abs(b10.bias) <= abs(b5.bias) + 2 * b10.bias_se
    )
    record(
        9,
        ok,
        f"linear median bias {lin.bias:+.4f} (<= 0.05); lasso K=5 {b5.median_pv:.3f} vs {b5.median_benchmark:.3f}, "
        f"K=10 {b10.median_pv:.3f} vs {b10.median_benchmark:.3f}, |bias| {abs(b10.bias):.3f} <= {abs(b5.bias):.3f} + 2*{b10.bias_se:.3f}",
    )


def test_criterion_10_exogenous_calibration():
    p = np.empty(10_000)
    for i in range(p.size):
        rng = substream(10, "c10", i)
        y = rng.standard_normal(20)
        Z = y[:, None] + rng.standard_normal((20, 1))
        p[i] = fit_linear_external(rng.standard_normal(20), Z, y).p_one_sided_pv
    ks = ks_distance_cdf(p, lambda x: np.clip(x, 0, 1))
    record(10, ks < 0.02, f"KS of exogenous p-values to U(0,1) {ks:.4f} (< 0.02)")


def test_criterion_11_determinism(tmp_path):
    grid = tmp_path / "grid.toml"
    grid.write_text(
        'study = "permutation"\nseed = 2024\nreps = 30\npermutations = 25\n'
        '[[cell]]\nscenario = "linear_linear"\nn = 10\np = 5\nK = 5\n'
        '[[cell]]\nscenario = "lda_logistic"\nn = 20\np = 40\ng = 3\nK = 5\n'
    )
    for w in ("1", "3"):
        assert run(["simulate", "--grid", str(grid), "--workers", w, "--quiet", "--out", str(tmp_path / w)]) == 0
    a = {p.name: p.read_bytes() for p in (tmp_path / "1").iterdir()}
    b = {p.name: p.read_bytes() for p in (tmp_path / "3").iterdir()}
    record(11, len(a) == 3 and a == b, f"{len(a)} report files, identical across 1 and 3 workers: {a == b}")
