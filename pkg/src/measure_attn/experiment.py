"""Synthetic associative-recall experiment: data, sweeps, fits, ablations.

Each example hides a sign v1 and two coefficient vectors Z1, Z2.  Component
densities are synthesized from the spectrum, tokens (x, v) are sampled from
the two-component mixture {v1: Z1, -v1: Z2}, the query token is (0, v1) and
the target is Y = v1 * sum_{j>=1} lambda_j * Z1_j^2.  Recovering Y forces
the student to route attention by tag: the head MLP sees only the attention
output, so the sign of Y is unreadable unless attention mass separates the
two tag populations.

The sweep grid is (alpha, n, seed); cells are content-addressed by their
generating configuration, written atomically, and skipped on resume.  Risk
curves per alpha feed a least-squares fit of log L on t = (log n)^(alpha/(alpha+1)).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace, asdict

import numpy as np

from .measures import DiscreteMeasure, build_mixture, sample_tokens
from .model import StudentConfig, StudentModel, attention_rows
from .optim import TrainConfig, evaluate, train
from .spectrum import MercerSpectrum, synth_density

# Fixed stream labels for per-cell SeedSequence derivation.
_STREAM_TRAIN, _STREAM_VAL, _STREAM_INIT, _STREAM_LOOP, _STREAM_SHUFFLE = range(5)


@dataclass(frozen=True)
class ExperimentConfig:
    alpha_list: tuple[float, ...] = (0.5, 1.0, 2.0)
    M: int = 16
    T: int = 32
    n_tokens: int = 5000
    n_list: tuple[int, ...] = (4, 8, 16, 32, 64)
    n_val: int = 2000
    clamp_eps: float = 1e-6
    seeds: int = 3
    n_stat_examples: int = 1000
    seed: int = 0
    student: StudentConfig = field(default_factory=StudentConfig)
    # tuned so that risk reliably halves from n=4 to n=64 at alpha=1 with
    # 3 seeds on both the default and the reduced token profile
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        batch_size=4, lr0=5e-3, decay_per_epoch=0.95))

    def __post_init__(self):
        object.__setattr__(self, "alpha_list", tuple(float(a) for a in self.alpha_list))
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        if len(self.alpha_list) == 0:
            raise ValueError("alpha_list is empty")
        if len(self.n_list) == 0:
            raise ValueError("n_list is empty")
        if any(b <= a for a, b in zip(self.n_list, self.n_list[1:])):
            raise ValueError(f"n_list must be strictly increasing, got {self.n_list}")
        if self.M > self.T // 2:
            raise ValueError(f"M={self.M} must satisfy M <= T/2 with T={self.T}")
        if self.seeds < 1 or self.n_tokens < 1 or self.n_val < 1:
            raise ValueError("seeds, n_tokens and n_val must be positive")

    def spectrum(self, alpha: float) -> MercerSpectrum:
        return MercerSpectrum.on_midpoint_grid(alpha=alpha, M=self.M, T=self.T)


@dataclass(frozen=True)
class Hidden:
    """Latents retained for diagnostics; not visible to the student."""

    z1: np.ndarray
    z2: np.ndarray
    v1: float


@dataclass(frozen=True)
class Example:
    context_tokens: np.ndarray  # (n_tokens, 2) rows (x, v)
    query_token: np.ndarray     # (0, v1)
    target: float
    hidden: Hidden


def target_value(spec: MercerSpectrum, v1: float, z1: np.ndarray) -> float:
    """Y = v1 * sum_{j>=1} lambda_j * z1_j^2; odd in v1 by construction."""
    lam = spec.eigenvalues()
    return float(v1 * np.sum(lam[1:] * np.asarray(z1)[1:] ** 2))


def gen_example(spec: MercerSpectrum, cfg: ExperimentConfig, rng_seed) -> Example:
    """One labelled context: mixture tokens in (x, v) order plus query (0, v1)."""
    rng = (rng_seed if isinstance(rng_seed, np.random.Generator)
           else np.random.default_rng(rng_seed))
    v1 = 1.0 if rng.random() < 0.5 else -1.0
    z1 = rng.standard_normal(spec.M)
    z2 = rng.standard_normal(spec.M)
    z1[0] = 0.0
    z2[0] = 0.0
    pmf1 = synth_density(spec, z1, cfg.clamp_eps)
    pmf2 = synth_density(spec, z2, cfg.clamp_eps)
    grid_pts = spec.domain_grid[:, None]
    comp1 = DiscreteMeasure(grid_pts, pmf1)
    comp2 = DiscreteMeasure(grid_pts, pmf2)
    ctx, _ = build_mixture([comp1, comp2], np.array([[v1], [-v1]]), star_index=0)
    tagged = sample_tokens(ctx, cfg.n_tokens, rng)
    # canonical token order is (tag, content); this experiment stores (x, v)
    tokens = tagged[:, ::-1].copy()
    query = np.array([0.0, v1])
    y = target_value(spec, v1, z1)
    return Example(tokens, query, y, Hidden(z1, z2, v1))


@dataclass(frozen=True)
class AttentionStats:
    """Per-head attention mass statistics over a set of examples.

    w_* are mean per-token weights, m_* total masses; *_std are standard
    deviations over examples.  Arrays have length n_heads.
    """

    w_same_mean: np.ndarray
    w_diff_mean: np.ndarray
    w_same_std: np.ndarray
    w_diff_std: np.ndarray
    m_same_mean: np.ndarray
    m_diff_mean: np.ndarray
    m_same_std: np.ndarray
    m_diff_std: np.ndarray

    @property
    def n_heads(self) -> int:
        return self.w_same_mean.size

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in (
            "w_same_mean", "w_diff_mean", "w_same_std", "w_diff_std",
            "m_same_mean", "m_diff_mean", "m_same_std", "m_diff_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "AttentionStats":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


def _stats_from_rows(rows_per_example, same_masks) -> AttentionStats:
    """Aggregate per-head row statistics given same-tag masks.

    Each rows entry is (n_heads, T); an example with an empty side
    contributes only to the other side's averages.
    """
    n_heads = rows_per_example[0].shape[0]
    acc = {k: [[] for _ in range(n_heads)] for k in ("ws", "wd", "ms", "md")}
    for rows, same in zip(rows_per_example, same_masks):
        same = np.asarray(same, dtype=bool)
        diff = ~same
        for h in range(n_heads):
            if same.any():
                acc["ws"][h].append(rows[h, same].mean())
                acc["ms"][h].append(rows[h, same].sum())
            if diff.any():
                acc["wd"][h].append(rows[h, diff].mean())
                acc["md"][h].append(rows[h, diff].sum())

    def mean_std(key):
        means = np.array([np.mean(acc[key][h]) if acc[key][h] else np.nan
                          for h in range(n_heads)])
        stds = np.array([np.std(acc[key][h]) if acc[key][h] else np.nan
                         for h in range(n_heads)])
        return means, stds

    ws_m, ws_s = mean_std("ws")
    wd_m, wd_s = mean_std("wd")
    ms_m, ms_s = mean_std("ms")
    md_m, md_s = mean_std("md")
    return AttentionStats(ws_m, wd_m, ws_s, wd_s, ms_m, md_m, ms_s, md_s)


def attention_mass_stats(model: StudentModel, examples) -> AttentionStats:
    """Same-tag vs different-tag attention masses on given examples.

    Context tokens are partitioned by whether their tag equals the query's
    tag; the query token itself is never among the keys, so rows cover the
    partition exactly and m_same + m_diff = 1 per head and example.
    """
    if len(examples) == 0:
        raise ValueError("examples is empty")
    rows_list, masks = [], []
    for ex in examples:
        _, cache = model.forward(ex.context_tokens, ex.query_token)
        rows_list.append(attention_rows(cache))
        masks.append(ex.context_tokens[:, 1] == ex.query_token[1])
    return _stats_from_rows(rows_list, masks)


def query_shuffle_eval(model: StudentModel, examples, seed: int = 0,
                       permutation=None) -> tuple[float, float]:
    """Clean MSE with original queries vs queries permuted across examples.

    The permutation is uniform over permutations (fixed points allowed),
    drawn from the seed unless one is passed explicitly.
    """
    n = len(examples)
    if n < 2:
        raise ValueError("need at least 2 examples to shuffle queries")
    if permutation is None:
        permutation = np.random.default_rng(seed).permutation(n)
    else:
        permutation = np.asarray(permutation)
        if sorted(permutation.tolist()) != list(range(n)):
            raise ValueError("not a permutation of the example indices")
    mse_orig = evaluate(model, examples)
    total = 0.0
    for i, ex in enumerate(examples):
        donor = examples[int(permutation[i])]
        pred, _ = model.forward(ex.context_tokens, donor.query_token)
        total += (pred - ex.target) ** 2
    return mse_orig, total / n


@dataclass(frozen=True)
class CellResult:
    alpha: float
    n: int
    seed: int
    val_mse: float
    train_losses: tuple[float, ...]
    stats: AttentionStats


def _cell_seedseq(cfg: ExperimentConfig, alpha: float, n: int, seed: int,
                  stream: int) -> np.random.SeedSequence:
    alpha_bits = int(np.float64(alpha).view(np.uint64))
    return np.random.SeedSequence(entropy=(cfg.seed, alpha_bits, n, seed, stream))


def _gen(cfg: ExperimentConfig, spec: MercerSpectrum, count: int,
         ss: np.random.SeedSequence) -> list[Example]:
    rng = np.random.default_rng(ss)
    return [gen_example(spec, cfg, rng) for _ in range(count)]


def run_cell(alpha: float, n: int, seed: int, cfg: ExperimentConfig
             ) -> tuple[float, StudentModel, CellResult]:
    """Train one grid cell and collect validation MSE and attention stats.

    The validation set depends on (alpha, seed) but not on n, so risk curves
    across n are measured on a shared yardstick.
    """
    spec = cfg.spectrum(alpha)
    train_set = _gen(cfg, spec, n, _cell_seedseq(cfg, alpha, n, seed, _STREAM_TRAIN))
    val_set = _gen(cfg, spec, cfg.n_val,
                   _cell_seedseq(cfg, alpha, 0, seed, _STREAM_VAL))
    model = StudentModel.init(
        cfg.student,
        np.random.default_rng(_cell_seedseq(cfg, alpha, n, seed, _STREAM_INIT)))
    loop_seed = int(_cell_seedseq(cfg, alpha, n, seed, _STREAM_LOOP)
                    .generate_state(1, np.uint64)[0])
    model, losses = train(model, train_set, replace(cfg.train, seed=loop_seed))
    val_mse = evaluate(model, val_set)
    stats = attention_mass_stats(model, val_set[:min(cfg.n_stat_examples, cfg.n_val)])
    result = CellResult(alpha, n, seed, val_mse, tuple(losses), stats)
    return val_mse, model, result


@dataclass(frozen=True)
class RiskCurve:
    """Validation risk vs training-set size for one alpha."""

    alpha: float
    n_values: tuple[int, ...]
    mean_mse: tuple[float, ...]
    std_mse: tuple[float, ...]


@dataclass(frozen=True)
class FitResult:
    """log L = A - C * t with t = (log n)^(alpha/(alpha+1)).

    C > 0 means risk decays on the transformed axis; the sign is preserved
    so collinear inputs are reproduced exactly.
    """

    A: float
    C: float
    residual_rms: float


def scaling_axis(alpha: float, n_values) -> np.ndarray:
    """t = (log n)^(alpha/(alpha+1)); the alpha -> inf limit is log n."""
    expo = 1.0 if np.isinf(alpha) else alpha / (alpha + 1.0)
    return np.log(np.asarray(n_values, dtype=np.float64)) ** expo


def fit_rate(curve: RiskCurve, alpha: float) -> FitResult:
    """Least squares of log mean risk on the transformed axis."""
    n_vals = np.asarray(curve.n_values, dtype=np.float64)
    mse = np.asarray(curve.mean_mse, dtype=np.float64)
    if np.unique(n_vals).size < 2:
        raise ValueError("need at least 2 distinct n to fit a rate")
    if np.any(mse <= 0):
        raise ValueError("risk values must be positive to fit in log space")
    t = scaling_axis(alpha, n_vals)
    y = np.log(mse)
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (intercept + slope * t)
    return FitResult(A=float(intercept), C=float(-slope),
                     residual_rms=float(np.sqrt(np.mean(resid ** 2))))


def _cell_key(cfg: ExperimentConfig, alpha: float, n: int, seed: int
              ) -> tuple[str, dict]:
    """Content address: every value that feeds the cell's computation.

    The loop seed is derived inside run_cell, so cfg.train.seed is excluded.
    """
    train_dict = asdict(cfg.train)
    train_dict.pop("seed")
    payload = {
        "alpha": float(alpha), "n": int(n), "seed": int(seed),
        "M": cfg.M, "T": cfg.T, "n_tokens": cfg.n_tokens, "n_val": cfg.n_val,
        "clamp_eps": cfg.clamp_eps, "global_seed": cfg.seed,
        "n_stat_examples": cfg.n_stat_examples,
        "student": asdict(cfg.student), "train": train_dict,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16], payload


def _atomic_write(path: str, data: str) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sweep_cell_worker(args) -> tuple[str, dict]:
    cfg, alpha, n, seed = args
    key, key_inputs = _cell_key(cfg, alpha, n, seed)
    _, _, result = run_cell(alpha, n, seed, cfg)
    payload = {
        "alpha": alpha, "n": n, "seed": seed,
        "val_mse": result.val_mse,
        "train_losses": list(result.train_losses),
        "attention_stats": result.stats.to_dict(),
        "key_inputs": key_inputs,
    }
    return key, payload


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def sweep(cfg: ExperimentConfig, out_dir: str, jobs: int = 1) -> dict:
    """Run the (alpha, n, seed) grid and persist the result bundle.

    Writes cells/<key>.json per cell (atomic, reused on resume when the key
    matches), risk_curve.csv, attention_stats.csv, fit.json, a gnuplot-ready
    scaling_axis.dat and a manifest marking failed cells.  Returns a summary
    dict with curves and fits.
    """
    os.makedirs(os.path.join(out_dir, "cells"), exist_ok=True)
    grid = [(alpha, n, s) for alpha in cfg.alpha_list for n in cfg.n_list
            for s in range(cfg.seeds)]
    keyed = {(alpha, n, s): _cell_key(cfg, alpha, n, s)[0] for alpha, n, s in grid}
    results: dict[tuple, dict] = {}
    failures: dict[tuple, str] = {}

    pending = []
    for cell in grid:
        path = os.path.join(out_dir, "cells", keyed[cell] + ".json")
        if os.path.exists(path):
            try:
                with open(path) as f:
                    results[cell] = json.load(f)
                continue
            except (json.JSONDecodeError, OSError):
                pass  # corrupt cell file: recompute
        pending.append(cell)

    def record(cell, key, payload):
        path = os.path.join(out_dir, "cells", key + ".json")
        _atomic_write(path, json.dumps(payload, sort_keys=True, indent=1))
        results[cell] = payload

    if jobs > 1 and pending:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {cell: pool.submit(_sweep_cell_worker, (cfg, *cell))
                       for cell in pending}
            for cell, fut in futures.items():
                try:
                    key, payload = fut.result()
                    record(cell, key, payload)
                except Exception as e:  # noqa: BLE001 - cell failures are data
                    failures[cell] = f"{type(e).__name__}: {e}"
    else:
        for cell in pending:
            try:
                key, payload = _sweep_cell_worker((cfg, *cell))
                record(cell, key, payload)
            except Exception as e:  # noqa: BLE001
                failures[cell] = f"{type(e).__name__}: {e}"

    curves: dict[float, RiskCurve] = {}
    fits: dict[float, FitResult] = {}
    for alpha in cfg.alpha_list:
        means, stds, ns = [], [], []
        for n in cfg.n_list:
            cell_mses = [results[(alpha, n, s)]["val_mse"]
                         for s in range(cfg.seeds) if (alpha, n, s) in results]
            if not cell_mses:
                continue
            ns.append(n)
            means.append(float(np.mean(cell_mses)))
            stds.append(float(np.std(cell_mses)))
        curve = RiskCurve(alpha, tuple(ns), tuple(means), tuple(stds))
        curves[alpha] = curve
        if len(ns) >= 2 and all(m > 0 for m in means):
            fits[alpha] = fit_rate(curve, alpha)

    _write_bundle(cfg, out_dir, results, curves, fits, keyed, failures)
    return {"curves": curves, "fits": fits, "failures": failures,
            "cells_total": len(grid), "cells_failed": len(failures)}


def _write_bundle(cfg, out_dir, results, curves, fits, keyed, failures):
    risk = io.StringIO()
    w = csv.writer(risk, lineterminator="\n")
    w.writerow(["alpha", "n", "seed", "val_mse"])
    for alpha in cfg.alpha_list:
        for n in cfg.n_list:
            for s in range(cfg.seeds):
                cell = (alpha, n, s)
                if cell in results:
                    w.writerow([f"{alpha:g}", n, s, _fmt(results[cell]["val_mse"])])
    _atomic_write(os.path.join(out_dir, "risk_curve.csv"), risk.getvalue())

    stats = io.StringIO()
    w = csv.writer(stats, lineterminator="\n")
    w.writerow(["alpha", "n", "head", "w_same_mean", "w_diff_mean",
                "w_same_std", "w_diff_std", "m_same_mean", "m_diff_mean"])
    for alpha in cfg.alpha_list:
        for n in cfg.n_list:
            per_seed = [AttentionStats.from_dict(results[(alpha, n, s)]["attention_stats"])
                        for s in range(cfg.seeds) if (alpha, n, s) in results]
            if not per_seed:
                continue
            for h in range(per_seed[0].n_heads):
                def agg(attr):
                    return _fmt(np.mean([getattr(st, attr)[h] for st in per_seed]))
                w.writerow([f"{alpha:g}", n, h,
                            agg("w_same_mean"), agg("w_diff_mean"),
                            agg("w_same_std"), agg("w_diff_std"),
                            agg("m_same_mean"), agg("m_diff_mean")])
    _atomic_write(os.path.join(out_dir, "attention_stats.csv"), stats.getvalue())

    fit_doc = {f"{alpha:g}": {"A": fit.A, "C": fit.C,
                              "residual_rms": fit.residual_rms,
                              "n_list": list(curves[alpha].n_values)}
               for alpha, fit in fits.items()}
    _atomic_write(os.path.join(out_dir, "fit.json"),
                  json.dumps(fit_doc, sort_keys=True, indent=1) + "\n")

    dat = []
    for alpha in cfg.alpha_list:
        curve = curves.get(alpha)
        if curve is None or not curve.n_values:
            continue
        dat.append(f"# alpha={alpha:g}  t=(log n)^(alpha/(alpha+1))  log_mean_mse")
        t = scaling_axis(alpha, curve.n_values)
        for ti, mse in zip(t, curve.mean_mse):
            if mse > 0:
                dat.append(f"{_fmt(ti)} {_fmt(np.log(mse))}")
        dat.append("")
        dat.append("")
    _atomic_write(os.path.join(out_dir, "scaling_axis.dat"), "\n".join(dat))

    manifest = {
        "cells": {
            keyed[cell]: {
                "alpha": cell[0], "n": cell[1], "seed": cell[2],
                "status": ("done" if cell in results
                           else "failed" if cell in failures else "missing"),
                **({"error": failures[cell]} if cell in failures else {}),
            }
            for cell in keyed
        },
        "complete": not failures and len(results) == len(keyed),
    }
    _atomic_write(os.path.join(out_dir, "manifest.json"),
                  json.dumps(manifest, sort_keys=True, indent=1) + "\n")
