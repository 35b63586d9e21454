"""Synthetic experiment: example generation against Monte-Carlo moments,
attention-mass bookkeeping on hand-built rows, query-shuffle ablation,
single-cell training, rate fits against a brute-force grid search, and the
sweep bundle's persistence and reproducibility.
"""

import json
import math
import os
from dataclasses import dataclass

import numpy as np
import pytest

from measure_attn import (
    ExperimentConfig,
    RiskCurve,
    StudentConfig,
    StudentModel,
    TrainConfig,
    attention_mass_stats,
    fit_rate,
    gen_example,
    query_shuffle_eval,
    run_cell,
    scaling_axis,
    sweep,
    target_value,
)
from measure_attn.experiment import _stats_from_rows

SMALL = ExperimentConfig(
    alpha_list=(1.0,),
    n_list=(2, 4),
    seeds=1,
    n_tokens=60,
    n_val=10,
    n_stat_examples=5,
    train=TrainConfig(epochs=2, batch_size=2, lr0=5e-3,
                      decay_per_epoch=0.95),
)


@dataclass(frozen=True)
class Item:
    context_tokens: np.ndarray
    query_token: np.ndarray
    target: float


def balanced_items(n_examples, T, query_tag=1.0, rng=None):
    rng = rng or np.random.default_rng(0)
    items = []
    for _ in range(n_examples):
        tags = np.repeat([1.0, -1.0], T // 2)
        context = np.column_stack([rng.uniform(0, 1, T), tags])
        items.append(Item(context, np.array([0.0, query_tag]),
                          float(rng.standard_normal())))
    return items


# ----------------------------------------------------------- generation

def test_experiment_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(n_list=())
    with pytest.raises(ValueError):
        ExperimentConfig(n_list=(8, 4))
    with pytest.raises(ValueError):
        ExperimentConfig(alpha_list=())
    with pytest.raises(ValueError):
        ExperimentConfig(M=20, T=32)
    with pytest.raises(ValueError):
        ExperimentConfig(seeds=0)


def test_target_value_zero_coefficients_and_oddness():
    spec = SMALL.spectrum(1.0)
    assert target_value(spec, 1.0, np.zeros(spec.M)) == 0.0
    z = np.random.default_rng(0).standard_normal(spec.M)
    z[0] = 0.0
    y = target_value(spec, 1.0, z)
    assert target_value(spec, -1.0, z) == -y
    lam = spec.eigenvalues()
    oracle = sum(lam[j] * z[j] ** 2 for j in range(1, spec.M))
    assert y == pytest.approx(oracle, rel=1e-12)


def test_gen_example_layout_and_determinism():
    spec = SMALL.spectrum(1.0)
    ex = gen_example(spec, SMALL, 123)
    assert ex.context_tokens.shape == (SMALL.n_tokens, 2)
    assert np.all(np.isin(ex.context_tokens[:, 0], spec.domain_grid))
    assert set(np.unique(ex.context_tokens[:, 1])) <= {-1.0, 1.0}
    np.testing.assert_array_equal(ex.query_token, [0.0, ex.hidden.v1])
    assert ex.hidden.v1 in (-1.0, 1.0)
    assert ex.hidden.z1[0] == 0.0 and ex.hidden.z2[0] == 0.0
    assert ex.target == target_value(spec, ex.hidden.v1, ex.hidden.z1)
    ex2 = gen_example(spec, SMALL, 123)
    np.testing.assert_array_equal(ex.context_tokens, ex2.context_tokens)
    assert ex.target == ex2.target


def test_gen_example_conditional_target_mean():
    # Y | v1 = +1 is a positively weighted chi-square sum with mean
    # sum_j lambda_j and variance 2 sum_j lambda_j^2
    cfg = ExperimentConfig(n_tokens=1)
    spec = cfg.spectrum(1.0)
    lam = spec.eigenvalues()[1:]
    rng = np.random.default_rng(2)
    draws = [gen_example(spec, cfg, rng) for _ in range(8000)]
    for v1 in (1.0, -1.0):
        ys = np.array([ex.target for ex in draws if ex.hidden.v1 == v1])
        mean_want = v1 * float(lam.sum())
        sigma = math.sqrt(2.0 * float((lam**2).sum()) / ys.size)
        assert abs(ys.mean() - mean_want) <= 3.0 * sigma


# ------------------------------------------------------- attention stats

def test_stats_from_hand_built_rows():
    rows = [np.array([[0.5, 0.5, 0.0, 0.0]])]
    masks = [np.array([True, True, False, False])]
    stats = _stats_from_rows(rows, masks)
    assert stats.m_same_mean[0] == 1.0
    assert stats.m_diff_mean[0] == 0.0
    assert stats.w_same_mean[0] == 0.5
    assert stats.w_diff_mean[0] == 0.0


def test_stats_aggregation_across_examples():
    rows = [np.array([[0.25, 0.25, 0.25, 0.25]]),
            np.array([[0.7, 0.1, 0.1, 0.1]])]
    masks = [np.array([True, True, False, False]),
             np.array([True, False, False, False])]
    stats = _stats_from_rows(rows, masks)
    assert stats.m_same_mean[0] == pytest.approx((0.5 + 0.7) / 2)
    assert stats.m_diff_mean[0] == pytest.approx((0.5 + 0.3) / 2)
    assert stats.w_diff_mean[0] == pytest.approx((0.25 + 0.1) / 2)


def test_stats_with_single_sided_example():
    # an all-same example must not contribute to the different-tag side
    rows = [np.full((1, 3), 1.0 / 3.0), np.array([[0.5, 0.25, 0.25]])]
    masks = [np.array([True, True, True]),
             np.array([True, False, False])]
    stats = _stats_from_rows(rows, masks)
    assert stats.m_same_mean[0] == pytest.approx((1.0 + 0.5) / 2)
    assert stats.m_diff_mean[0] == pytest.approx(0.5)  # second example only


def test_uniform_attention_balanced_tags_mass_statistics():
    # an all-zero student attends uniformly: per-token weight 1/T and
    # half the mass on each tag side
    model = StudentModel(StudentConfig())
    items = balanced_items(3, T=5000)
    stats = attention_mass_stats(model, items)
    np.testing.assert_allclose(stats.w_same_mean, 2e-4, rtol=1e-12)
    np.testing.assert_allclose(stats.w_diff_mean, 2e-4, rtol=1e-12)
    np.testing.assert_allclose(stats.m_same_mean, 0.5, rtol=1e-12)
    np.testing.assert_allclose(stats.m_diff_mean, 0.5, rtol=1e-12)


def test_attention_masses_partition_to_one():
    rng = np.random.default_rng(3)
    model = StudentModel.init(StudentConfig(), rng)
    items = balanced_items(4, T=12, rng=rng)
    stats = attention_mass_stats(model, items)
    np.testing.assert_allclose(stats.m_same_mean + stats.m_diff_mean, 1.0,
                               atol=1e-9)


def test_attention_stats_round_trip_and_empty_input():
    model = StudentModel(StudentConfig())
    stats = attention_mass_stats(model, balanced_items(2, T=6))
    back = type(stats).from_dict(stats.to_dict())
    np.testing.assert_array_equal(back.m_same_mean, stats.m_same_mean)
    with pytest.raises(ValueError):
        attention_mass_stats(model, [])


# ----------------------------------------------------------- query shuffle

def test_shuffle_identity_permutation_matches_original():
    rng = np.random.default_rng(4)
    model = StudentModel.init(StudentConfig(), rng)
    items = balanced_items(6, T=8, rng=rng)
    orig, shuf = query_shuffle_eval(model, items,
                                    permutation=np.arange(6))
    assert shuf == orig


def test_shuffle_query_independent_model_sees_no_difference():
    model = StudentModel(StudentConfig())  # predicts 0 for every query
    items = balanced_items(5, T=8)
    orig, shuf = query_shuffle_eval(model, items, seed=9)
    assert shuf == orig


def test_shuffle_explicit_permutation_manual_oracle():
    rng = np.random.default_rng(5)
    model = StudentModel.init(StudentConfig(), rng)
    a, b = balanced_items(2, T=8, rng=rng)
    orig, shuf = query_shuffle_eval(model, [a, b],
                                    permutation=np.array([1, 0]))
    pa, _ = model.forward(a.context_tokens, b.query_token)
    pb, _ = model.forward(b.context_tokens, a.query_token)
    want = ((pa - a.target)**2 + (pb - b.target)**2) / 2
    assert shuf == pytest.approx(want, rel=1e-15)
    assert orig >= 0.0


def test_shuffle_validation():
    model = StudentModel(StudentConfig())
    items = balanced_items(3, T=4)
    with pytest.raises(ValueError):
        query_shuffle_eval(model, items[:1])
    with pytest.raises(ValueError):
        query_shuffle_eval(model, items, permutation=np.array([0, 0, 2]))


def test_shuffle_deterministic_in_seed():
    rng = np.random.default_rng(6)
    model = StudentModel.init(StudentConfig(), rng)
    items = balanced_items(5, T=6, rng=rng)
    assert (query_shuffle_eval(model, items, seed=3)
            == query_shuffle_eval(model, items, seed=3))


# --------------------------------------------------------------- run_cell

def test_run_cell_deterministic_and_consistent():
    mse1, model1, res1 = run_cell(1.0, 2, 0, SMALL)
    mse2, model2, res2 = run_cell(1.0, 2, 0, SMALL)
    assert mse1 == mse2
    np.testing.assert_array_equal(model1.params, model2.params)
    assert res1.train_losses == res2.train_losses
    assert mse1 >= 0.0
    assert res1.alpha == 1.0 and res1.n == 2 and res1.seed == 0
    assert len(res1.train_losses) == SMALL.train.epochs
    assert res1.val_mse == mse1
    assert res1.stats.n_heads == SMALL.student.n_heads


def test_run_cell_seed_changes_result():
    mse_a, _, _ = run_cell(1.0, 2, 0, SMALL)
    mse_b, _, _ = run_cell(1.0, 2, 1, SMALL)
    assert mse_a != mse_b


# ------------------------------------------------------------------- fits

def grid_fit(t, y, lo=-8.0, hi=8.0, rounds=6, size=81):
    """Brute-force least squares over (A, C); oracle for fit_rate."""
    A_lo, A_hi, C_lo, C_hi = lo, hi, lo, hi
    best = (np.nan, np.nan)
    for _ in range(rounds):
        As = np.linspace(A_lo, A_hi, size)
        Cs = np.linspace(C_lo, C_hi, size)
        pred = As[:, None, None] - Cs[None, :, None] * t[None, None, :]
        sse = np.sum((y[None, None, :] - pred)**2, axis=2)
        i, j = np.unravel_index(np.argmin(sse), sse.shape)
        best = (As[i], Cs[j])
        dA = (A_hi - A_lo) / (size - 1)
        dC = (C_hi - C_lo) / (size - 1)
        A_lo, A_hi = As[i] - 2 * dA, As[i] + 2 * dA
        C_lo, C_hi = Cs[j] - 2 * dC, Cs[j] + 2 * dC
    return best


def test_scaling_axis_values_and_inf_limit():
    n = np.array([4, 16, 64])
    np.testing.assert_allclose(scaling_axis(1.0, n), np.sqrt(np.log(n)),
                               rtol=1e-15)
    np.testing.assert_array_equal(scaling_axis(np.inf, n), np.log(n))
    np.testing.assert_allclose(scaling_axis(1e12, n), np.log(n), rtol=1e-9)


def test_fit_rate_recovers_exact_collinear_input():
    A, C, alpha = 1.0, 2.0, 1.0
    n_values = (4, 16, 64, 256)
    t = scaling_axis(alpha, n_values)
    curve = RiskCurve(alpha, n_values, tuple(np.exp(A - C * t)),
                      (0.0,) * 4)
    fit = fit_rate(curve, alpha)
    assert fit.A == pytest.approx(A, abs=1e-10)
    assert fit.C == pytest.approx(C, abs=1e-10)
    assert fit.residual_rms <= 1e-10


def test_fit_rate_matches_grid_search_on_noisy_points():
    rng = np.random.default_rng(7)
    alpha = 1.0
    n_values = (4, 16, 64)
    t = scaling_axis(alpha, n_values)
    y = 0.3 - 1.1 * t + 0.05 * rng.standard_normal(3)
    curve = RiskCurve(alpha, n_values, tuple(np.exp(y)), (0.0,) * 3)
    fit = fit_rate(curve, alpha)
    A_grid, C_grid = grid_fit(t, y)
    assert fit.A == pytest.approx(A_grid, abs=1e-6)
    assert fit.C == pytest.approx(C_grid, abs=1e-6)


def test_fit_rate_inf_alpha_is_log_log_fit():
    n_values = (4, 16, 64)
    mse = (0.9, 0.5, 0.3)
    curve = RiskCurve(np.inf, n_values, mse, (0.0,) * 3)
    fit = fit_rate(curve, np.inf)
    slope, intercept = np.polyfit(np.log(n_values), np.log(mse), 1)
    assert fit.A == pytest.approx(intercept, rel=1e-12)
    assert fit.C == pytest.approx(-slope, rel=1e-12)


def test_fit_rate_affine_equivariance():
    # scaling every risk by k shifts A by log k and leaves C alone
    alpha = 0.5
    n_values = (4, 8, 32)
    rng = np.random.default_rng(8)
    mse = np.exp(rng.uniform(-2, 0, 3))
    base = fit_rate(RiskCurve(alpha, n_values, tuple(mse), (0.0,) * 3), alpha)
    k = 7.5
    scaled = fit_rate(RiskCurve(alpha, n_values, tuple(k * mse), (0.0,) * 3),
                      alpha)
    assert scaled.C == pytest.approx(base.C, abs=1e-12)
    assert scaled.A == pytest.approx(base.A + math.log(k), abs=1e-12)
    assert scaled.residual_rms == pytest.approx(base.residual_rms, abs=1e-12)


def test_fit_rate_rejects_degenerate_input():
    with pytest.raises(ValueError):
        fit_rate(RiskCurve(1.0, (4, 4), (0.5, 0.4), (0.0, 0.0)), 1.0)
    with pytest.raises(ValueError):
        fit_rate(RiskCurve(1.0, (4, 8), (0.5, 0.0), (0.0, 0.0)), 1.0)


# ------------------------------------------------------------------ sweep

def test_sweep_writes_bundle_and_resumes(tmp_path):
    out = str(tmp_path / "bundle")
    summary = sweep(SMALL, out)
    assert summary["cells_failed"] == 0
    assert summary["cells_total"] == 2
    for name in ("risk_curve.csv", "attention_stats.csv", "fit.json",
                 "scaling_axis.dat", "manifest.json"):
        assert os.path.exists(os.path.join(out, name)), name
    cells = sorted(os.listdir(os.path.join(out, "cells")))
    assert len(cells) == 2
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert manifest["complete"]
    assert all(c["status"] == "done" for c in manifest["cells"].values())
    fit_doc = json.load(open(os.path.join(out, "fit.json")))
    assert len(fit_doc) == 1
    (entry,) = fit_doc.values()
    assert set(entry) >= {"A", "C", "residual_rms"}

    # resume: identical config must reuse every cell file untouched
    stamps = {c: os.stat(os.path.join(out, "cells", c)).st_mtime_ns
              for c in cells}
    risk_before = open(os.path.join(out, "risk_curve.csv"), "rb").read()
    summary2 = sweep(SMALL, out)
    assert summary2["cells_failed"] == 0
    for c in cells:
        assert os.stat(os.path.join(out, "cells", c)).st_mtime_ns == stamps[c]
    assert open(os.path.join(out, "risk_curve.csv"), "rb").read() == risk_before


def test_sweep_reproducible_across_directories_and_jobs(tmp_path):
    out1 = str(tmp_path / "a")
    out2 = str(tmp_path / "b")
    sweep(SMALL, out1, jobs=1)
    sweep(SMALL, out2, jobs=2)
    for name in ("risk_curve.csv", "attention_stats.csv", "fit.json",
                 "scaling_axis.dat"):
        b1 = open(os.path.join(out1, name), "rb").read()
        b2 = open(os.path.join(out2, name), "rb").read()
        assert b1 == b2, name


def test_sweep_curves_match_cell_results(tmp_path):
    out = str(tmp_path / "bundle")
    summary = sweep(SMALL, out)
    curve = summary["curves"][1.0]
    assert curve.n_values == (2, 4)
    for n, mean in zip(curve.n_values, curve.mean_mse):
        direct, _, _ = run_cell(1.0, n, 0, SMALL)
        assert mean == pytest.approx(direct, rel=1e-15)
    fit = summary["fits"][1.0]
    assert np.isfinite(fit.C)
