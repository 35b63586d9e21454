"""Command-line surface: verify | gen | train | sweep | analyze.

Exit codes: 0 success, 1 property or sweep failure, 2 usage/IO error.
Config precedence is flags > config file > built-in defaults, except that
the MEASURE_ATTN_SEED environment variable, when set, overrides the global
seed from any source (operator-level override for reproducibility drills).
Commands with an output directory write config_resolved.json there.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import experiment, verify
from .experiment import (ExperimentConfig, RiskCurve, fit_rate, gen_example,
                         run_cell)
from .model import StudentConfig
from .optim import TrainConfig, losses_to_csv

ENV_SEED = "MEASURE_ATTN_SEED"


class CliError(Exception):
    """Usage or IO problem; maps to exit code 2."""


def _env_seed() -> int | None:
    raw = os.environ.get(ENV_SEED)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{ENV_SEED} must be an integer, got {raw!r}")


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise CliError(f"config file not found: {path}")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise CliError(f"config file is not valid JSON: {e}")


def _resolve_config(args) -> ExperimentConfig:
    """Merge defaults < config file < --profile < flags < env seed."""
    merged = _load_config_file(getattr(args, "config", None))
    if getattr(args, "profile", None) == "reduced":
        merged["n_tokens"] = 1000
        merged["n_val"] = 500
    flag_map = {
        "alpha": ("alpha_list", _float_list),
        "n": ("n_list", _int_list),
        "seeds": ("seeds", int),
        "n_tokens": ("n_tokens", int),
        "n_val": ("n_val", int),
        "n_stat_examples": ("n_stat_examples", int),
        "seed": ("seed", int),
        "clamp_eps": ("clamp_eps", float),
    }
    for attr, (key, conv) in flag_map.items():
        val = getattr(args, attr, None)
        if val is not None:
            merged[key] = conv(val) if isinstance(val, str) else val
    train_over = {k: v for k, v in (
        ("epochs", getattr(args, "epochs", None)),
        ("batch_size", getattr(args, "batch_size", None)),
        ("lr0", getattr(args, "lr0", None)),
        ("decay_per_epoch", getattr(args, "decay", None)),
        ("noise_std", getattr(args, "noise_std", None)),
    ) if v is not None}
    env = _env_seed()
    if env is not None:
        merged["seed"] = env
    try:
        student = StudentConfig(**merged.pop("student", {}))
        train = replace(ExperimentConfig().train,
                        **{**merged.pop("train", {}), **train_over})
        return ExperimentConfig(student=student, train=train, **merged)
    except (TypeError, ValueError) as e:
        raise CliError(f"bad configuration: {e}")


def _write_resolved(cfg: ExperimentConfig, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        **{k: v for k, v in asdict(cfg).items() if k not in ("student", "train")},
        "student": asdict(cfg.student),
        "train": asdict(cfg.train),
    }
    experiment._atomic_write(os.path.join(out_dir, "config_resolved.json"),
                             json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _split_suites(arg) -> list[str] | None:
    if not arg:
        return None
    names: list[str] = []
    for item in arg:
        names.extend(s.strip() for s in item.split(",") if s.strip())
    return names


def cmd_verify(args) -> int:
    try:
        results = verify.run_suites(_split_suites(args.suite),
                                    fault=args.inject_fault)
    except ValueError as e:
        raise CliError(str(e))
    width = max(len(r.suite) for r in results)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        all_ok = all_ok and r.passed
        print(f"{r.suite:<{width}}  {len(r.checks):>2} checks  {status}  "
              f"{r.seconds:7.2f}s")
        for c in r.checks:
            if not c.passed or args.verbose:
                mark = "ok" if c.passed else "FAILED"
                print(f"    {c.name}: {mark} ({c.detail})")
    print("verify:", "all suites passed" if all_ok else "SUITE FAILURES")
    return 0 if all_ok else 1


def cmd_gen(args) -> int:
    cfg = _resolve_config(args)
    alpha = cfg.alpha_list[0] if args.alpha is None else _float_list(args.alpha)[0]
    ex = gen_example(cfg.spectrum(alpha), cfg, cfg.seed)
    doc = {
        "alpha": alpha,
        "context_tokens": ex.context_tokens.tolist(),
        "query_token": ex.query_token.tolist(),
        "target": ex.target,
        "hidden": {"z1": ex.hidden.z1.tolist(), "z2": ex.hidden.z2.tolist(),
                   "v1": ex.hidden.v1},
    }
    text = json.dumps(doc, indent=1)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    alpha = 1.0 if args.alpha is None else _float_list(args.alpha)[0]
    _write_resolved(cfg, args.out)
    val_mse, model, result = run_cell(alpha, args.n_train, args.cell_seed, cfg)
    with open(os.path.join(args.out, "checkpoint.json"), "w") as f:
        json.dump(model.to_dict(), f)
    with open(os.path.join(args.out, "losses.csv"), "w") as f:
        f.write(losses_to_csv(list(result.train_losses)))
    metrics = {
        "alpha": alpha, "n": args.n_train, "seed": args.cell_seed,
        "val_mse": val_mse, "attention_stats": result.stats.to_dict(),
    }
    with open(os.path.join(args.out, "metrics.json"), "w") as f:
        json.dump(metrics, f, indent=1)
    print(f"alpha={alpha:g} n={args.n_train} seed={args.cell_seed}  "
          f"val_mse={val_mse:.6g}")
    print(f"wrote checkpoint.json, losses.csv, metrics.json to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    _write_resolved(cfg, args.out)
    summary = experiment.sweep(cfg, args.out, jobs=args.jobs)
    done = summary["cells_total"] - summary["cells_failed"]
    print(f"sweep: {done}/{summary['cells_total']} cells")
    for alpha, fit in sorted(summary["fits"].items()):
        print(f"  alpha={alpha:g}: A={fit.A:.4f} C={fit.C:.4f} "
              f"residual_rms={fit.residual_rms:.4f}")
    if summary["cells_failed"]:
        for cell, err in summary["failures"].items():
            print(f"  FAILED cell {cell}: {err}", file=sys.stderr)
        return 1
    print(f"bundle written to {args.out}")
    return 0


def _read_risk_csv(path: str) -> dict[float, dict[int, list[float]]]:
    by_alpha: dict[float, dict[int, list[float]]] = {}
    with open(path) as f:
        for row in csv.DictReader(f):
            a = float(row["alpha"])
            n = int(row["n"])
            by_alpha.setdefault(a, {}).setdefault(n, []).append(float(row["val_mse"]))
    return by_alpha


def cmd_analyze(args) -> int:
    risk_path = os.path.join(args.results_dir, "risk_curve.csv")
    if not os.path.isfile(risk_path):
        raise CliError(f"missing {risk_path}")
    by_alpha = _read_risk_csv(risk_path)
    fits, curves = {}, {}
    for alpha in sorted(by_alpha):
        ns = sorted(by_alpha[alpha])
        means = [float(np.mean(by_alpha[alpha][n])) for n in ns]
        stds = [float(np.std(by_alpha[alpha][n])) for n in ns]
        curves[alpha] = RiskCurve(alpha, tuple(ns), tuple(means), tuple(stds))
        if len(ns) >= 2 and all(m > 0 for m in means):
            fits[alpha] = fit_rate(curves[alpha], alpha)

    stats_path = os.path.join(args.results_dir, "attention_stats.csv")
    stats_rows = []
    if os.path.isfile(stats_path):
        with open(stats_path) as f:
            stats_rows = list(csv.DictReader(f))

    if args.format == "json":
        doc = {
            "fits": {f"{a:g}": {"A": f.A, "C": f.C, "residual_rms": f.residual_rms}
                     for a, f in fits.items()},
            "curves": {f"{a:g}": {"n": list(c.n_values),
                                  "mean_mse": list(c.mean_mse),
                                  "std_mse": list(c.std_mse)}
                       for a, c in curves.items()},
            "attention_stats": stats_rows,
        }
        print(json.dumps(doc, indent=1, sort_keys=True))
        return 0

    print("risk scaling fits  (log L = A - C t,  t = (log n)^(alpha/(alpha+1)))")
    print(f"{'alpha':>6} {'A':>10} {'C':>10} {'resid_rms':>10}")
    for alpha, fit in sorted(fits.items()):
        print(f"{alpha:>6g} {fit.A:>10.4f} {fit.C:>10.4f} "
              f"{fit.residual_rms:>10.4f}")
    for alpha, curve in sorted(curves.items()):
        pts = "  ".join(f"n={n}: {m:.4g}"
                        for n, m in zip(curve.n_values, curve.mean_mse))
        print(f"curve alpha={alpha:g}:  {pts}")
    if stats_rows:
        # show the most-trained block: prefer alpha=1, then the largest n
        keys = {(float(r["alpha"]), int(r["n"])) for r in stats_rows}
        ones = [k for k in keys if k[0] == 1.0]
        show = max(ones) if ones else max(keys)
        print(f"\nattention masses at alpha={show[0]:g}, n={show[1]} "
              "(means over validation examples)")
        print(f"{'head':>4} {'w_same':>12} {'w_diff':>12} {'m_same':>9} "
              f"{'m_diff':>9}")
        for r in stats_rows:
            if (float(r["alpha"]), int(r["n"])) == show:
                print(f"{r['head']:>4} {float(r['w_same_mean']):>12.3e} "
                      f"{float(r['w_diff_mean']):>12.3e} "
                      f"{float(r['m_same_mean']):>9.4f} "
                      f"{float(r['m_diff_mean']):>9.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="measure-attn",
        description="Measure-theoretic attention laboratory: property "
                    "verification, synthetic recall experiments, and "
                    "risk-scaling analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("verify", help="run lemma-level property suites")
    pv.add_argument("--suite", action="append",
                    help="comma-separated suite names (default: all); "
                         f"available: {', '.join(verify.SUITE_NAMES)}")
    pv.add_argument("--inject-fault", choices=list(verify.SUITE_NAMES),
                    help="deliberately corrupt one suite (tests the failure "
                         "reporting)")
    pv.add_argument("--verbose", action="store_true",
                    help="print every check, not only failures")
    pv.set_defaults(fn=cmd_verify)

    def add_common(sp, with_train=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--alpha", help="comma-separated decay exponents")
        sp.add_argument("--seed", type=int, help="global seed")
        sp.add_argument("--n-tokens", dest="n_tokens", type=int)
        sp.add_argument("--n-val", dest="n_val", type=int)
        sp.add_argument("--clamp-eps", dest="clamp_eps", type=float)
        sp.add_argument("--profile", choices=["default", "reduced"],
                        help="reduced sets n_tokens=1000, n_val=500")
        if with_train:
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--batch-size", dest="batch_size", type=int)
            sp.add_argument("--lr0", type=float)
            sp.add_argument("--decay", type=float,
                            help="learning-rate decay per epoch")
            sp.add_argument("--noise-std", dest="noise_std", type=float)

    pg = sub.add_parser("gen", help="generate one example (debugging)")
    add_common(pg, with_train=False)
    pg.add_argument("--out", help="output JSON path (default: stdout)")
    pg.set_defaults(fn=cmd_gen)

    pt = sub.add_parser("train", help="train a single grid cell")
    add_common(pt)
    pt.add_argument("--n-train", dest="n_train", type=int, default=64,
                    help="training set size")
    pt.add_argument("--cell-seed", dest="cell_seed", type=int, default=0,
                    help="per-cell seed")
    pt.add_argument("--out", required=True, help="output directory")
    pt.set_defaults(fn=cmd_train)

    ps = sub.add_parser("sweep", help="run the (alpha, n, seed) grid")
    add_common(ps)
    ps.add_argument("--n", help="comma-separated training sizes")
    ps.add_argument("--seeds", type=int, help="seeds per cell")
    ps.add_argument("--n-stat-examples", dest="n_stat_examples", type=int)
    ps.add_argument("--jobs", type=int, default=1, help="parallel cells")
    ps.add_argument("--out", default="sweep_out", help="output directory")
    ps.set_defaults(fn=cmd_sweep)

    pa = sub.add_parser("analyze", help="recompute fits from a sweep bundle")
    pa.add_argument("results_dir")
    pa.add_argument("--format", choices=["table", "json"], default="table")
    pa.set_defaults(fn=cmd_analyze)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
