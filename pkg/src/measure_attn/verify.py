"""Self-contained property suites behind the `verify` CLI command.

Each suite checks one lemma-level guarantee at a stated tolerance and
returns named per-check outcomes, so a failure points at the violated
assertion rather than at a stack trace.  The fault parameter deliberately
corrupts one computation path; it exists so the failure reporting itself
can be tested.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import attention, spectrum
from .measures import DiscreteMeasure, build_mixture
from .model import StudentConfig, StudentModel

SUITE_NAMES = ("orthonormality", "isometry", "truncation", "recall",
               "lipschitz", "gradient")


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class SuiteResult:
    suite: str
    checks: tuple[Check, ...]
    seconds: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _result(suite, checks, t0):
    return SuiteResult(suite, tuple(checks), time.perf_counter() - t0)


def suite_orthonormality(fault: str | None = None) -> SuiteResult:
    """(1/T) sum_t e_j(x_t) e_k(x_t) = delta_jk on the midpoint grid.

    Quantified over the sine modes 1 <= j, k < M plus the (0, 0) diagonal
    pair; the constant mode is not orthogonal to odd sines on [0, 1] (the
    continuum integral of e_k is 2*sqrt(2)/(pi*k) for odd k) and carries no
    coefficients anywhere in the package, so mixed (0, k) pairs are out of
    scope by the mode-0 convention.
    """
    t0 = time.perf_counter()
    checks = []
    for M, T in ((16, 32), (8, 64), (5, 10)):
        spec = spectrum.MercerSpectrum.on_midpoint_grid(1.0, M, T)
        B = spec.basis_matrix()
        if fault == "basis":
            B = B * (1.0 + 1e-6)
        gram = (B[1:] @ B[1:].T) / spec.T
        err_sine = float(np.max(np.abs(gram - np.eye(M - 1))))
        err_const = abs(float(B[0] @ B[0]) / spec.T - 1.0)
        err = max(err_sine, err_const)
        checks.append(Check(
            f"orthonormality_gram_M{M}_T{T}", err <= 1e-9,
            f"max |gram - I| = {err:.3e} (tol 1e-9)"))
    return _result("orthonormality", checks, t0)


def suite_isometry(fault: str | None = None) -> SuiteResult:
    """Norm transport and round-trip identity of the coefficient isometry."""
    t0 = time.perf_counter()
    checks = []
    rng = np.random.default_rng(2024)
    for alpha in (0.5, 1.0, 2.0):
        spec = spectrum.MercerSpectrum.on_midpoint_grid(alpha, 16, 32)
        worst_norm = 0.0
        worst_round = 0.0
        for _ in range(50):
            b = rng.standard_normal(spec.M)
            b[0] = 0.0
            b_norm, c_norm = rng.uniform(-2, 2, 2)
            mapped = spectrum.isometry_map(spec, b, b_norm, c_norm)
            if fault == "isometry":
                mapped = mapped * (1.0 + 1e-6)
            lhs = spectrum.gen_norm_sq(spec, mapped, c_norm)
            rhs = spectrum.gen_norm_sq(spec, b, b_norm)
            worst_norm = max(worst_norm, abs(lhs - rhs) / max(rhs, 1e-300))
            back = spectrum.isometry_map(spec, mapped, c_norm, b_norm)
            worst_round = max(worst_round,
                              float(np.max(np.abs(back - b))) / max(float(np.max(np.abs(b))), 1e-300))
        checks.append(Check(
            f"isometry_norm_preservation_alpha{alpha:g}", worst_norm <= 1e-10,
            f"worst relative norm error = {worst_norm:.3e} (tol 1e-10)"))
        checks.append(Check(
            f"isometry_round_trip_alpha{alpha:g}", worst_round <= 1e-12,
            f"worst relative round-trip error = {worst_round:.3e} (tol 1e-12)"))
    return _result("isometry", checks, t0)


def suite_truncation(fault: str | None = None) -> SuiteResult:
    """Tail-norm domination over random unit-ball draws per (alpha, D)."""
    t0 = time.perf_counter()
    checks = []
    rng = np.random.default_rng(7)
    gamma_f, gamma_b = -1.0, 1.0
    for alpha in (0.5, 1.0, 2.0):
        spec = spectrum.MercerSpectrum.on_midpoint_grid(alpha, 16, 32)
        lam = spec.eigenvalues()
        for D in (2, 4, 8):
            bound = spectrum.truncation_bound(spec, D, gamma_f, gamma_b)
            if fault == "truncation":
                bound = bound * 1e-3
            ok = True
            worst = 0.0
            for _ in range(100):
                b = rng.standard_normal(spec.M)
                b[0] = 0.0
                scale = np.sqrt(spectrum.gen_norm_sq(spec, b, gamma_b))
                b = b / scale * rng.uniform(0.0, 1.0)  # inside the unit ball
                tail = np.sqrt(np.sum(lam[D + 1:] ** (-gamma_f) * b[D + 1:] ** 2))
                worst = max(worst, tail / bound)
                ok = ok and tail <= bound * (1 + 1e-12)
            checks.append(Check(
                f"truncation_domination_alpha{alpha:g}_D{D}", ok,
                f"worst tail/bound = {worst:.3e} over 100 draws"))
    return _result("truncation", checks, t0)


def _recall_setup(spec, I: int, D: int, eps2: float, rng):
    """Random I-component scalar-content mixture plus its featured form.

    Tags are the first I standard basis vectors (pairwise orthogonal), so
    non-star tokens score exactly zero and the closed-form star mass
    I * exp(c^2) / (exp(c^2) + I - 1) applies.
    """
    d1 = I
    tags = np.eye(I)
    comps = []
    for _ in range(I):
        npts = int(rng.integers(3, 9))
        pts = np.sort(rng.uniform(0.05, 0.95, npts))[:, None]
        w = rng.dirichlet(np.ones(npts))
        comps.append(DiscreteMeasure(pts, w))
    ctx, query_vd = build_mixture(comps, tags, star_index=int(rng.integers(I)))
    c = attention.temperature_for_error(I, eps2)
    params = attention.build_recall_params(d1, 1, D, c)
    featured = attention.featured_mixture(spec, ctx, D)
    fmap = attention.recall_feature_map(spec, d1, D)
    return ctx, featured, fmap(query_vd), params, d1


def suite_recall(fault: str | None = None) -> SuiteResult:
    """One-hot selection: extracted coefficients match the star component.

    The oracle is the direct weighted sum over the starred component's pmf,
    with the lemma's error budget 5 * eps2 * max_t |e_j(z_t)| at
    c = sqrt(ln(I^3/eps2)).
    """
    t0 = time.perf_counter()
    checks = []
    rng = np.random.default_rng(11)
    eps2 = 1e-4
    D = 8
    spec = spectrum.MercerSpectrum.on_midpoint_grid(1.0, 16, 32)
    for I in (2, 4):
        ctx, featured, query, params, d1 = _recall_setup(spec, I, D, eps2, rng)
        out = attention.measure_attention(params, featured, query)
        star = ctx.components[ctx.star_index]
        worst = 0.0
        ok = True
        for j in range(1, D + 1):
            vals = spec.basis_eval(j, star.support[:, 0])
            oracle = float(star.weights @ vals)
            extracted = out[d1 + 1 + (j - 1)]
            if fault == "recall":
                extracted = extracted + 10 * eps2
            tol = 5 * eps2 * max(float(np.max(np.abs(vals))), 1e-12)
            err = abs(extracted - oracle)
            worst = max(worst, err / tol)
            ok = ok and err <= tol
        checks.append(Check(
            f"recall_one_hot_I{I}", ok,
            f"worst |extracted - oracle| / tol = {worst:.3e} at eps2={eps2:g}"))
    return _result("recall", checks, t0)


def suite_lipschitz(fault: str | None = None, trials: int = 1000) -> SuiteResult:
    """Joint Lipschitz inequality on random small instances, 2x slack."""
    t0 = time.perf_counter()
    summary = attention.random_lipschitz_trials(trials, rng_seed=13)
    violations = summary.violations_2x + (1 if fault == "lipschitz" else 0)
    checks = [
        Check("lipschitz_no_2x_violations", violations == 0,
              f"{violations} violations beyond 2x slack in {summary.trials} trials "
              f"({summary.skipped} skipped, max ratio/bound = {summary.max_ratio_over_bound:.3e})"),
        Check("lipschitz_trials_informative",
              summary.trials - summary.skipped >= trials // 2,
              f"{summary.trials - summary.skipped} non-degenerate trials"),
    ]
    return _result("lipschitz", checks, t0)


def fd_gradient(model: StudentModel, context, query, coord: int,
                step: float = 1e-5) -> float:
    """Central finite difference of the prediction in one parameter.

    Forward-only; serves as the independent oracle for backward.
    """
    theta = model.params[coord]
    model.params[coord] = theta + step
    up, _ = model.forward(context, query)
    model.params[coord] = theta - step
    down, _ = model.forward(context, query)
    model.params[coord] = theta
    return (up - down) / (2.0 * step)


def suite_gradient(fault: str | None = None, seeds: int = 10,
                   coords_per_seed: int = 200) -> SuiteResult:
    """Analytic gradient vs central differences, rel. err <= 1e-4.

    Runs seeds x coords_per_seed coordinate checks (default 200) on random
    small inputs.
    """
    t0 = time.perf_counter()
    checks = []
    worst = 0.0
    cfg = StudentConfig()
    for seed in range(seeds):
        rng = np.random.default_rng(1000 + seed)
        model = StudentModel.init(cfg, rng)
        T = int(rng.integers(3, 9))
        context = np.column_stack([rng.uniform(0, 1, T),
                                   rng.choice([-1.0, 1.0], T)])
        query = np.array([0.0, float(rng.choice([-1.0, 1.0]))])
        pred, cache = model.forward(context, query)
        model.backward(cache, 1.0)
        analytic = model.grads.copy()
        if fault == "gradient":
            analytic = analytic * (1.0 + 1e-3)
        for coord in rng.choice(model.n_params, size=coords_per_seed, replace=False):
            fd = fd_gradient(model, context, query, int(coord))
            rel = abs(analytic[coord] - fd) / max(abs(analytic[coord]), abs(fd), 1e-8)
            worst = max(worst, rel)
    checks.append(Check(
        "gradient_matches_central_differences", worst <= 1e-4,
        f"worst relative error = {worst:.3e} over {seeds * coords_per_seed} "
        f"coordinates (tol 1e-4)"))
    return _result("gradient", checks, t0)


_SUITES = {
    "orthonormality": suite_orthonormality,
    "isometry": suite_isometry,
    "truncation": suite_truncation,
    "recall": suite_recall,
    "lipschitz": suite_lipschitz,
    "gradient": suite_gradient,
}


def run_suites(names=None, fault: str | None = None) -> list[SuiteResult]:
    names = list(names) if names else list(SUITE_NAMES)
    unknown = [n for n in names if n not in _SUITES]
    if unknown:
        raise ValueError(f"unknown suites: {unknown}; available: {list(SUITE_NAMES)}")
    return [_SUITES[n](fault) for n in names]
