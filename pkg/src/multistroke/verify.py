"""Property and oracle checks run by ``multistroke verify``.

Each check returns a list of :class:`CheckResult`; ``run_checks`` filters by
substring on the registered check name.
"""

from __future__ import annotations

import itertools
import time
from typing import Callable

import numpy as np

from .diffusion import (VarianceConvention, jump_alpha, jump_mean_variance, linear_beta_schedule,
                        ms_target, reverse_mean, reverse_variance)
from .oracles import (CheckResult, DiscreteToyDistribution, GaussianToyData, check_mix_inverse,
                      check_population_minimizer, check_target_decomposition, discrete_minimizer_check)
from .stroke import (RoughnessSchedule, aligned_mode, apply_stroke, attenuation_gamma, coarse_project,
                     detail_project, mix)
from .surrogate import build_surrogate, check_bound, clean_recursion, iterated_bound, simulate

ALGEBRA_TOL = 1e-12
ENVELOPE_TOL = 1e-10


def _rel(a, b):
    return abs(a - b) / max(abs(b), 1.0)


def stroke_algebra(seed: int = 0) -> list[CheckResult]:
    """Idempotence, self-adjointness, Pythagoras and projector identities on random tensors."""
    rng = np.random.default_rng(seed)
    worst = {"idempotence": 0.0, "self_adjoint": 0.0, "pythagoras": 0.0, "projector_algebra": 0.0,
             "energy_identity": 0.0}
    for shape in ((1, 8, 8), (3, 16, 16)):
        for k in (2, 4):
            for _ in range(20):
                x = rng.standard_normal(shape)
                y = rng.standard_normal(shape)
                w = rng.uniform(0, 0.99)
                sx = apply_stroke(x, k)
                worst["idempotence"] = max(worst["idempotence"], np.max(np.abs(apply_stroke(sx, k) - sx)))
                worst["self_adjoint"] = max(worst["self_adjoint"],
                                            _rel(np.sum(sx * y), np.sum(x * apply_stroke(y, k))))
                d = x - sx
                worst["pythagoras"] = max(worst["pythagoras"],
                                          _rel(np.sum(sx**2) + np.sum(d**2), np.sum(x**2)))
                m = mix(x, w, k)
                errs = [
                    np.max(np.abs(coarse_project(detail_project(x, k), k))),
                    np.max(np.abs(m - (sx + (1 - w) * d))),
                    np.max(np.abs(detail_project(m, k) - (1 - w) * d)),
                    np.max(np.abs(coarse_project(m, k) - sx)),
                    abs(np.sum(sx * d)) / max(np.sum(x**2), 1.0),
                ]
                worst["projector_algebra"] = max(worst["projector_algebra"], *errs)
                worst["energy_identity"] = max(worst["energy_identity"],
                                               _rel(np.sum(m**2), np.sum(sx**2) + (1 - w) ** 2 * np.sum(d**2)))
    return [CheckResult(f"stroke.{name}", float(v), ALGEBRA_TOL, v <= ALGEBRA_TOL) for name, v in worst.items()]


def gamma_envelope(size: int = 8) -> list[CheckResult]:
    """Numeric block-average retention of every aligned mode versus gamma_k(w1) gamma_k(w2)."""
    worst, zero_worst, n_zero = 0.0, 0.0, 0
    for k in (2, 4):
        for m1 in range(size):
            for m2 in range(size):
                re, im = aligned_mode(size, size, m1, m2)
                num = np.sqrt(np.sum(apply_stroke(re, k) ** 2) + np.sum(apply_stroke(im, k) ** 2))
                ratio = num / np.sqrt(np.sum(re**2) + np.sum(im**2))
                w1, w2 = 2 * np.pi * m1 / size, 2 * np.pi * m2 / size
                pred = attenuation_gamma(w1, k) * attenuation_gamma(w2, k)
                worst = max(worst, abs(ratio - pred))
                on_zero = [(m * k) % size == 0 and m % size != 0 for m in (m1, m2)]
                if any(on_zero):
                    n_zero += 1
                    zero_worst = max(zero_worst, ratio, pred)
    return [
        CheckResult("gamma.spectral_envelope", worst, ENVELOPE_TOL, worst <= ENVELOPE_TOL),
        CheckResult("gamma.zeros_at_multiples_of_2pi_over_k", zero_worst, ENVELOPE_TOL,
                    zero_worst <= ENVELOPE_TOL and n_zero > 0, f"{n_zero} zero modes"),
    ]


def variance_reduction(n: int = 100_000, seed: int = 0, rel_tol: float = 0.02) -> list[CheckResult]:
    """MC second moments of the coarse and detail parts of the stroke-mixed noise."""
    rng = np.random.default_rng(seed)
    shape, k = (1, 4, 4), 2
    d_coarse, d_detail = 4, 12
    out = []
    for w in (0.3, 0.5):
        eps = rng.standard_normal((n, *shape))
        mixed = mix(eps, w, k)
        c = np.mean(np.sum(coarse_project(mixed, k) ** 2, axis=(1, 2, 3)))
        d = np.mean(np.sum(detail_project(mixed, k) ** 2, axis=(1, 2, 3)))
        err_d = abs(d - (1 - w) ** 2 * d_detail) / ((1 - w) ** 2 * d_detail)
        err_c = abs(c - d_coarse) / d_coarse
        out.append(CheckResult(f"variance.detail_w{w}", err_d, rel_tol, err_d <= rel_tol))
        out.append(CheckResult(f"variance.coarse_w{w}", err_c, rel_tol, err_c <= rel_tol))
    return out


def jump_identities() -> list[CheckResult]:
    sched = linear_beta_schedule(500)
    rng = np.random.default_rng(0)
    worst_red, worst_comp = 0.0, 0.0
    for t in (1, 2, 50, 250, 500):
        x = rng.standard_normal((1, 4, 4))
        e = rng.standard_normal((1, 4, 4))
        for conv in VarianceConvention:
            mean, var = jump_mean_variance(x, e, t, t - 1, sched, conv)
            worst_red = max(worst_red, np.max(np.abs(mean - reverse_mean(x, e, t, sched))),
                            abs(var - reverse_variance(t, sched, conv)))
    for t, m, s in ((500, 300, 0), (400, 399, 10), (20, 7, 3)):
        worst_comp = max(worst_comp, abs(jump_alpha(t, m, sched) * jump_alpha(m, s, sched) - jump_alpha(t, s, sched)))
    return [
        CheckResult("jump.reduces_to_contiguous", float(worst_red), ALGEBRA_TOL, worst_red <= ALGEBRA_TOL),
        CheckResult("jump.composition", float(worst_comp), ALGEBRA_TOL, worst_comp <= ALGEBRA_TOL),
    ]


def target_split() -> list[CheckResult]:
    rough = RoughnessSchedule(500, 0.75, 0.5, 2)
    rng = np.random.default_rng(3)
    out = []
    for t in (100, 313, 500):
        eps = rng.standard_normal((1, 8, 8))
        tgt = ms_target(eps, t, rough)
        w = rough.weight(t)
        err = float(np.max(np.abs(tgt - (coarse_project(eps, 2) + (1 - w) * detail_project(eps, 2)))))
        out.append(CheckResult(f"target.ms_target_split_t{t}", err, ALGEBRA_TOL, err <= ALGEBRA_TOL))
    f = rng.standard_normal((1, 8, 8))
    out += check_target_decomposition(f, 0.5, 2, 1.0)
    out.append(check_mix_inverse(f, 0.7, 2))
    return out


def population_minimizer(n: int = 1_000_000) -> list[CheckResult]:
    sched = linear_beta_schedule(500)
    rng = np.random.default_rng(11)
    toy = GaussianToyData(rng.normal(size=(1, 2, 2)), rng.uniform(0.2, 1.5, size=(1, 2, 2)), sched)
    out = check_population_minimizer(toy, 300, 0.5, 2, n=n, seed=5)
    for w in (0.0, 0.5):
        disc = DiscreteToyDistribution.default(sched, 300)
        out += [CheckResult(f"{r.name}_w{w}", r.statistic, r.tolerance, r.passed, r.detail)
                for r in discrete_minimizer_check(disc, w, 2)]
    return out


def surrogate_bounds(n: int = 100_000) -> list[CheckResult]:
    """Three-term bound over the configuration matrix, plus the clean equality case."""
    failures, worst_ratio, n_steps = [], -np.inf, 0
    cfg = 0
    for rho in (0.0, 0.5, 0.9):
        for kappa in (0.0, 0.5):
            for w in (0.0, 0.3, 0.5):
                for sigma, bias in itertools.product((0.0, 0.1), (0.0, 0.1)):
                    spec = build_surrogate((1, 4, 4), 2, 4, rho=rho, kappa=kappa, sigma=sigma, weights=w,
                                           bias_energy=bias, n_samples=n, seed=cfg)
                    cfg += 1
                    for r in check_bound(simulate(spec), spec):
                        n_steps += 1
                        worst_ratio = max(worst_ratio, (r.E_next - r.bound) / max(r.slack, 1e-300))
                        if not r.ok:
                            failures.append((rho, kappa, w, sigma, bias, r.t))
    out = [CheckResult("surrogate.three_term_bound", float(worst_ratio), 1.0, not failures,
                       f"{n_steps} steps over {cfg} configs; statistic = max (E - bound) / slack")]
    spec = build_surrogate((1, 4, 4), 2, 1, rho=0.8, kappa=0.0, sigma=0.3, weights=0.5,
                           detail_kind="scalar", n_samples=n, seed=99)
    trace = simulate(spec)
    pred = clean_recursion(trace, spec, 1)
    rel = abs(trace.E[0] - pred) / pred
    out.append(CheckResult("surrogate.clean_recursion_equality", float(rel), 0.01, rel <= 0.01))
    n_rel = float(np.max(np.abs(trace.N_emp[1:] - trace.N) / trace.N))
    out.append(CheckResult("surrogate.detail_noise_dimension", n_rel, 0.01, n_rel <= 0.01))
    return out


def surrogate_iterated(n: int = 100_000) -> list[CheckResult]:
    spec = build_surrogate((1, 4, 4), 2, 10, rho=0.5, kappa=0.0, sigma=0.0, weights=0.5, n_samples=n, seed=7)
    rep = iterated_bound(simulate(spec), spec, 10, 0)
    return [CheckResult("surrogate.iterated_contraction", rep.exit - rep.bound, rep.slack, rep.ok,
                        f"q={rep.q}, entry={rep.entry:.4g}, exit={rep.exit:.3g}, bound={rep.bound:.3g}")]


CHECKS: list[tuple[str, Callable[[], list[CheckResult]]]] = [
    ("stroke.algebra", stroke_algebra),
    ("gamma.envelope", gamma_envelope),
    ("variance.reduction", variance_reduction),
    ("jump.identities", jump_identities),
    ("target.decomposition", target_split),
    ("minimizer.population", population_minimizer),
    ("surrogate.bounds", surrogate_bounds),
    ("surrogate.iterated", surrogate_iterated),
]


def run_checks(filter_substring: str | None = None, echo: Callable[[str], None] = print,
               collect: list | None = None) -> bool:
    """Run every registered check whose name contains ``filter_substring``.

    Returns False if any check failed, or if the filter matched nothing.
    """
    ok, matched = True, False
    for name, fn in CHECKS:
        if filter_substring and filter_substring not in name:
            continue
        matched = True
        start = time.perf_counter()
        results = fn()
        elapsed = time.perf_counter() - start
        if collect is not None:
            collect.extend(results)
        for r in results:
            ok &= r.passed
            echo(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<45} stat={r.statistic:.3e} tol={r.tolerance:.1e}"
                 + (f"  [{r.detail}]" if r.detail else ""))
        echo(f"      ({name}: {elapsed:.2f}s)")
    if not matched:
        echo(f"no check matches filter {filter_substring!r}")
    return ok and matched
