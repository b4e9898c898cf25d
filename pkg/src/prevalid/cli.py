"""Command-line front end.

Subcommands::

    prevalid analyze     --data D.csv --spec ols --folds 10
    prevalid permtest    --data D.csv --spec lda_top_g:g=10 --permutations 500 --repeats 10
    prevalid simulate    --grid null_rates.toml --reps 20000
    prevalid asymptotics --n 2000 --p 5 --sigmas 1
    prevalid cv-error    --data D.csv --spec corr_centroid:m_genes=70,allowed_misclass=3

Reports go to ``--out`` (default ``.``) as ``<command>-<hash>.<ext>`` where
``<hash>`` is a digest of the resolved configuration.  The worker count and
output options are excluded from both the digest and the embedded config, so
reruns with a different ``--workers`` produce byte-identical files.

Exit status: 0 success, 2 invalid input or configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .asymptotics import (
    empirical_null_t,
    ks_distance,
    lemma_a1_check,
    sample_theorem1,
    sample_theorem2,
    theorem2_form_gap,
)
from .data import load_dataset
from .errors import NumericalError, PrevalidError, ValidationError
from .external import fit_external, format_table
from .internal import InternalModelSpec
from .permutation import STATISTIC_KINDS, permutation_tests, summarize_p_values
from .prevalidation import cv_error, prevalidate
from .rng import substream
from .simulation import (
    ScenarioConfig,
    coefficient_bias_study,
    estimate_permutation_level,
    estimate_power,
    estimate_type1,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

FORMATS = ("text", "csv", "json")
STUDIES = ("type1", "permutation", "power", "bias")

# --------------------------------------------------------------------------
# argument helpers


def parse_spec(text: str) -> InternalModelSpec:
    """Internal model from JSON, a JSON file path, or ``kind:key=value,...`` shorthand."""
    text = text.strip()
    path = Path(text)
    if path.suffix == ".json" and path.is_file():
        text = path.read_text(encoding="utf-8").strip()
    if text.startswith("{"):
        try:
            return InternalModelSpec.from_json(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad spec JSON: {exc}") from exc
    kind, _, rest = text.partition(":")
    kw: dict[str, Any] = {"kind": kind}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValidationError(f"bad spec item {item!r}; expected key=value")
        kw[key.strip()] = _scalar(val.strip())
    if "sparsity_grid" in kw:
        g = kw["sparsity_grid"]
        kw["sparsity_grid"] = [int(v) for v in str(g).split("/")] if not isinstance(g, list) else g
    return InternalModelSpec.from_dict(kw)


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "on", "yes"):
        return True
    if low in ("false", "off", "no"):
        return False
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _alphas(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad alpha list {text!r}") from None
    if any(not 0.0 <= a <= 1.0 for a in vals):
        raise argparse.ArgumentTypeError("alphas must lie in [0, 1]")
    return vals


def _formats(text: str) -> tuple[str, ...]:
    vals = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [v for v in vals if v not in FORMATS]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"formats must be drawn from {FORMATS}")
    return vals


def _folds(text: str):
    if text == "n":
        return "n"
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("--folds takes an integer or 'n'") from None


def _intercept(value: str | None) -> bool | None:
    return None if value is None else value == "on"


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a TOML, JSON or YAML campaign file into a dict."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file {path} not found")
    suffix = path.suffix.lower()
    raw = path.read_bytes()
    if suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            return tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from exc
    if suffix == ".json":
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: {exc}") from exc
    if suffix in (".yaml", ".yml"):
        import yaml

        try:
            data = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ValidationError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError(f"{path}: top level must be a mapping")
        return data
    raise ValidationError(f"unsupported config format {suffix!r} (use .toml, .json or .yaml)")


# --------------------------------------------------------------------------
# report output


def config_hash(config: dict[str, Any]) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _csv_text(rows: list[dict[str, Any]], header_lines: list[str]) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return buf.getvalue()


def write_reports(
    command: str,
    config: dict[str, Any],
    results: dict[str, Any],
    rows: list[dict[str, Any]],
    text: str,
    out_dir: str | Path,
    formats: Sequence[str],
) -> list[Path]:
    """Write the requested report files and return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{command}-{config_hash(config)}"
    header = {"command": command, "version": __version__, "config": config}
    paths = []
    if "json" in formats:
        p = out / f"{stem}.json"
        p.write_text(json.dumps(_jsonable({**header, "results": results}), sort_keys=True, indent=2) + "\n")
        paths.append(p)
    if "csv" in formats:
        p = out / f"{stem}.csv"
        meta = [f"prevalid {__version__} {command}", "config " + json.dumps(_jsonable(config), sort_keys=True)]
        p.write_text(_csv_text(rows, meta))
        paths.append(p)
    if "text" in formats:
        p = out / f"{stem}.txt"
        p.write_text(f"prevalid {__version__} {command} (seed {config.get('seed')})\n\n{text}")
        paths.append(p)
    return paths


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(str(r[c])) for r in [header, *rows]) for c in range(len(header))]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(str(v).ljust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# commands


def _resolve_external(args, dataset) -> str:
    return args.external or ("logistic" if dataset.is_binary else "linear")


def cmd_analyze(args) -> tuple[dict, dict, list, str]:
    ds = load_dataset(args.data)
    spec = parse_spec(args.spec)
    ext = _resolve_external(args, ds)
    K = ds.n if args.folds == "n" else args.folds
    inc = _intercept(args.intercept) is not False
    config = {
        "data": str(args.data),
        "spec": spec.to_dict(),
        "external": ext,
        "folds": K,
        "seed": args.seed,
        "intercept": inc,
    }
    pv = prevalidate(ds, spec, K=K, seed=args.seed)
    reuse = prevalidate(ds, spec, K=1, seed=args.seed)
    fits = {
        "No PV": fit_external(ext, reuse.ytilde, ds.Z, ds.y, inc),
        f"{K}-fold PV" if K < ds.n else "LOO PV": fit_external(ext, pv.ytilde, ds.Z, ds.y, inc),
    }
    labels = {f"z_{i + 1}": nm for i, nm in enumerate(ds.z_names)}
    text = format_table(fits, pv_label="new rule", labels=labels)
    rows = [
        {
            "row": i,
            "fold": -1 if pv.folds is None else int(pv.folds.fold_of[i]),
            "ytilde": float(pv.ytilde[i]),
            "y": float(ds.y[i]),
        }
        for i in range(ds.n)
    ]
    results = {
        "column_labels": labels,
        "fits": {m: f.to_dict() for m, f in fits.items()},
        "ytilde": rows,
        "fold_info": list(pv.fold_info),
    }
    return config, results, rows, text


def cmd_permtest(args) -> tuple[dict, dict, list, str]:
    ds = load_dataset(args.data)
    spec = parse_spec(args.spec)
    ext = _resolve_external(args, ds)
    K = ds.n if args.folds == "n" else args.folds
    inc = _intercept(args.intercept) is not False
    kinds = tuple(args.statistic or STATISTIC_KINDS)
    config = {
        "data": str(args.data),
        "spec": spec.to_dict(),
        "external": ext,
        "folds": K,
        "permutations": args.permutations,
        "repeats": args.repeats,
        "alphas": list(args.alpha),
        "statistics": list(kinds),
        "seed": args.seed,
        "intercept": inc,
    }
    rows = []
    pvals: dict[str, list[float]] = {k: [] for k in kinds}
    for r in range(args.repeats):
        rseed = int(substream(args.seed, "repeat", r).integers(2**63))
        res = permutation_tests(
            ds, spec, ext, kinds, K, args.permutations, rseed, inc, workers=args.workers
        )
        for k in kinds:
            pvals[k].append(res[k].p_value)
            rows.append(
                {
                    "repeat": r,
                    "statistic": k,
                    "observed": res[k].observed,
                    "p_value": res[k].p_value,
                    "failed": res[k].n_failed,
                    "valid": res[k].valid,
                }
            )
    summary = {k: summarize_p_values(v, args.alpha) for k, v in pvals.items()}
    header = ["Statistic", "Mean p"] + [f"% < {a:g}" for a in args.alpha]
    body = [
        [k, f"{s['mean']:.3f}"] + [f"{s[f'pct_below_{a:g}']:.0f}" for a in args.alpha]
        for k, s in summary.items()
    ]
    text = f"{args.repeats} fold draw(s), {args.permutations} permutations each\n\n" + _table(header, body)
    return config, {"summary": summary, "repeats": rows}, rows, text


def _expand_cells(cells: list[dict[str, Any]]) -> list[tuple[dict[str, Any], dict[str, Any]]]:
    """Expand list-valued ``K`` entries; split off ``alt`` overrides used by power studies."""
    out = []
    for cell in cells:
        cell = dict(cell)
        alt = cell.pop("alt", {})
        Ks = cell.pop("K", 10)
        for K in Ks if isinstance(Ks, list) else [Ks]:
            d = {**cell, "K": K}
            for key in ("beta", "sigma_E"):
                if isinstance(d.get(key), list):
                    d[key] = tuple(d[key])
            out.append((d, alt))
    return out


def cmd_simulate(args) -> tuple[dict, dict, list, str]:
    grid = load_config_file(args.grid) if args.grid else {}
    cells = grid.get("cell") or grid.get("cells")
    if not cells:
        raise ValidationError("campaign file needs at least one [[cell]] entry")
    study = grid.get("study", "type1")
    if study not in STUDIES:
        raise ValidationError(f"unknown study {study!r}; expected one of {STUDIES}")
    seed = args.seed if args.seed is not None else int(grid.get("seed", 0))
    reps = args.reps if args.reps is not None else int(grid.get("reps", 20000))
    if args.full:
        reps = 100_000
    alphas = args.alpha if args.alpha is not None else tuple(grid.get("alphas", (0.01, 0.05, 0.1)))
    B = args.permutations if args.permutations is not None else int(grid.get("permutations", 200))
    expanded = _expand_cells(cells)
    config = {
        "study": study,
        "seed": seed,
        "reps": reps,
        "alphas": list(alphas),
        "permutations": B,
        "cells": [{**c, "alt": a} if a else c for c, a in expanded],
    }
    rows: list[dict[str, Any]] = []
    results = []
    for idx, (cdict, alt) in enumerate(expanded):
        cfg = ScenarioConfig.from_dict(cdict)
        cseed = int(substream(seed, "cell", idx).integers(2**63))
        if study == "type1":
            rep = estimate_type1(cfg, alphas, reps, cseed, args.workers)
            cell_rows = rep.rows()
        elif study == "permutation":
            rep = estimate_permutation_level(cfg, alphas, reps, B, cseed, workers=args.workers)
            cell_rows = rep.rows()
        elif study == "power":
            if not alt:
                raise ValidationError("power cells need an 'alt' table of signal overrides")
            alt = {k: tuple(v) if isinstance(v, list) else v for k, v in alt.items()}
            rep = estimate_power(cfg, cfg.replace(**alt), alphas, reps, B, cseed, workers=args.workers)
            cell_rows = rep.rows()
        else:
            rep = coefficient_bias_study(cfg, reps, cseed, args.workers)
            cell_rows = [
                {
                    "scenario": cfg.scenario,
                    "parameters": cfg.label(),
                    "K": cfg.K,
                    "median_pv": rep.median_pv,
                    "median_benchmark": rep.median_benchmark,
                    "bias": rep.bias,
                    "bias_se": rep.bias_se,
                    "reps": rep.reps,
                    "failed": rep.n_failed,
                    "separated": rep.n_separated,
                }
            ]
        rows.extend(cell_rows)
        results.append({"cell": idx, "rows": cell_rows})
    keys = list(rows[0])
    text = _table(keys, [[_fmt_cell(r[k]) for k in keys] for r in rows])
    return config, {"cells": results}, rows, text


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def cmd_asymptotics(args) -> tuple[dict, dict, list, str]:
    sigmas = tuple(args.sigmas)
    config = {
        "n": args.n,
        "p": args.p,
        "sigmas": list(sigmas),
        "reps": args.reps,
        "draws": args.draws,
        "seed": args.seed,
        "ks_threshold": args.ks_threshold,
    }
    emp = empirical_null_t(args.n, args.p, sigmas, args.reps, int(substream(args.seed, "emp").integers(2**63)))
    lseed = int(substream(args.seed, "law").integers(2**63))
    if sigmas:
        law = sample_theorem2(args.p, sigmas, args.draws, lseed)
        alt_form = sample_theorem2(args.p, sigmas, args.draws, lseed, form="two_term")
    else:
        law = sample_theorem1(args.p, args.draws, lseed)
        alt_form = None
    from scipy import stats

    checks = [("empirical vs limit law", ks_distance(emp.t, law.draws), args.ks_threshold, "<")]
    if alt_form is not None:
        checks.append(("empirical vs two-term form", ks_distance(emp.t, alt_form.draws), None, ""))
        checks.append(("combined vs two-term form", theorem2_form_gap(args.p, sigmas, args.draws, lseed), None, ""))
    tref = stats.t(args.n - 1).rvs(size=args.draws, random_state=substream(args.seed, "tref"))
    checks.append((f"empirical vs t_{args.n - 1}", ks_distance(emp.t, tref), None, ""))
    lem = lemma_a1_check(args.n, args.p, reps=min(200, args.reps), seed=args.seed)
    checks.append(("n*d_ii vs chi2_p", lem.ks_chi2, args.ks_threshold, "<"))
    rows = []
    for name, val, thr, op in checks:
        ok = None if thr is None else bool(val < thr)
        rows.append({"check": name, "ks": val, "threshold": thr, "pass": ok})
    table = _table(
        ["Check", "KS", "Threshold", "Result"],
        [
            [r["check"], f"{r['ks']:.4f}", "" if r["threshold"] is None else f"{r['threshold']:g}",
             "" if r["pass"] is None else ("pass" if r["pass"] else "FAIL")]
            for r in rows
        ],
    )
    text = (
        f"empirical null t: n={args.n}, p={args.p}, sigmas={list(sigmas)}, reps={args.reps}, "
        f"redraws={emp.redraws}\n"
        f"pooled n*d_ii: mean {lem.mean:.3f}, variance {lem.variance:.3f}\n\n" + table
    )
    if args.out and args.export_samples:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"asymptotics-{config_hash(config)}"
        np.savetxt(out / f"{stem}-empirical.csv", emp.t, fmt="%.17g", header="t", comments="")
        law.to_csv(out / f"{stem}-limit.csv")
    results = {
        "checks": rows,
        "redraws": emp.redraws,
        "leverage": {"mean": lem.mean, "variance": lem.variance, "ks_chi2": lem.ks_chi2},
    }
    return config, results, rows, text


def cmd_cv_error(args) -> tuple[dict, dict, list, str]:
    ds = load_dataset(args.data)
    specs = [parse_spec(s) for s in args.spec]
    K = ds.n if args.folds == "n" else args.folds
    config = {
        "data": str(args.data),
        "specs": [s.to_dict() for s in specs],
        "folds": K,
        "repeats": args.repeats,
        "seed": args.seed,
    }
    rows = []
    for i, spec in enumerate(specs):
        err = cv_error(ds, spec, K=K, reps=args.repeats, seed=int(substream(args.seed, "rule", i).integers(2**63)))
        rows.append({"rule": spec.to_json(), "error": err})
    label = "misclassification" if ds.is_binary else "mean squared error"
    text = f"{K}-fold CV {label}, averaged over {args.repeats} fold draw(s)\n\n" + _table(
        ["Rule", "Error"], [[r["rule"], f"{r['error']:.3f}"] for r in rows]
    )
    return config, {"errors": rows}, rows, text


COMMANDS = {
    "analyze": cmd_analyze,
    "permtest": cmd_permtest,
    "simulate": cmd_simulate,
    "asymptotics": cmd_asymptotics,
    "cv-error": cmd_cv_error,
}


# --------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prevalid", description="Pre-validation inference tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master RNG seed (default 0, or the campaign file's seed)")
    common.add_argument("--out", default=".", help="report directory (default .)")
    common.add_argument("--format", type=_formats, default=FORMATS, help="comma list of text,csv,json")
    common.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("--quiet", action="store_true", help="do not echo the text report")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", required=True, help="CSV with column y and columns x_*, z_*")
    data.add_argument("--folds", type=_folds, default=10, help="PV folds K, or 'n' for leave-one-out")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--spec", required=True, help="internal model: JSON, .json path or kind:key=value,...")
    model.add_argument("--external", choices=("linear", "logistic"), help="default: logistic for 0/1 y")
    model.add_argument("--intercept", choices=("on", "off"), help="intercept in the external model (default on)")

    sub.add_parser("analyze", parents=[common, data, model], help="PV predictor and external fit table")

    p = sub.add_parser("permtest", parents=[common, data, model], help="permutation test for the PV coefficient")
    p.add_argument("--permutations", "--B", type=int, default=500, help="permutations per test (default 500)")
    p.add_argument("--repeats", type=int, default=1, help="independent fold draws (default 1)")
    p.add_argument("--alpha", type=_alphas, default=(0.01, 0.05, 0.1), help="comma list of levels")
    p.add_argument("--statistic", action="append", choices=STATISTIC_KINDS, help="repeatable; default all")

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo campaign from a grid file")
    s.add_argument("--grid", "--config", dest="grid", required=True, help="campaign file (.toml, .json, .yaml)")
    s.add_argument("--reps", type=int, help="replications per cell (overrides the file)")
    s.add_argument("--permutations", "--B", type=int, help="permutations per test (overrides the file)")
    s.add_argument("--alpha", type=_alphas, help="comma list of levels (overrides the file)")
    s.add_argument("--full", action="store_true", help="100,000 replications per cell")

    a = sub.add_parser("asymptotics", parents=[common], help="KS checks of the limiting null laws")
    a.add_argument("--n", type=int, default=2000)
    a.add_argument("--p", type=int, default=5)
    a.add_argument("--sigmas", type=lambda t: [float(v) for v in t.split(",") if v], default=[],
                   help="external noise SDs; empty for no external predictors")
    a.add_argument("--reps", type=int, default=5000)
    a.add_argument("--draws", type=int, default=100_000)
    a.add_argument("--ks-threshold", type=float, default=0.04)
    a.add_argument("--export-samples", action="store_true", help="write the samples as CSV for QQ plots")

    c = sub.add_parser("cv-error", parents=[common, data], help="cross-validated error of one or more rules")
    c.add_argument("--spec", action="append", required=True, help="repeatable internal model spec")
    c.add_argument("--repeats", type=int, default=10, help="fold draws to average (default 10)")
    return parser


def _origin(exc: BaseException) -> str:
    tb = exc.__traceback__
    name = "prevalid"
    while tb is not None:
        mod = tb.tb_frame.f_globals.get("__name__", "")
        if mod.startswith("prevalid"):
            name = mod
        tb = tb.tb_next
    return name


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None and args.command != "simulate":
        args.seed = 0
    try:
        config, results, rows, text = COMMANDS[args.command](args)
        write_reports(args.command, config, results, rows, text, args.out, args.format)
    except NumericalError as exc:
        print(f"{_origin(exc)}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (PrevalidError, ValueError, TypeError, OSError) as exc:
        print(f"{_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if not args.quiet:
        sys.stdout.write(text)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
