"""Independent oracles: Gaussian posterior means, population minimizers, target decompositions.

Two toy worlds are used.  ``GaussianToyData`` has a diagonal Gaussian prior
on x0, so E[eps | x_t] is linear and the best linear predictor is the Bayes
predictor.  ``DiscreteToyDistribution`` has finitely many atoms, so every
expectation is an exact weighted sum.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule
from .stroke import apply_stroke, mix, mix_inverse, multires_complexity
from .surrogate import projector_matrices


@dataclass(frozen=True)
class GaussianToyData:
    mu0: np.ndarray        # (C, H, W)
    var0: np.ndarray       # (C, H, W), positive
    sched: NoiseSchedule

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=np.float64)
        var0 = np.broadcast_to(np.asarray(self.var0, dtype=np.float64), mu0.shape).copy()
        if np.any(var0 <= 0):
            raise ValueError("prior variances must be positive")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "var0", var0)

    def sample(self, t: int, n: int, rng: np.random.Generator):
        """Draw ``(x_t, eps)`` pairs of shape ``(n, C, H, W)``."""
        self.sched.check_t(t)
        ab = self.sched.alpha_bars[t]
        x0 = self.mu0 + np.sqrt(self.var0) * rng.standard_normal((n, *self.mu0.shape))
        eps = rng.standard_normal((n, *self.mu0.shape))
        return np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps, eps


def posterior_coefficient(t: int, toy: GaussianToyData) -> np.ndarray:
    """Per-pixel slope of E[eps | x_t]: sqrt(1 - abar) / (abar var0 + 1 - abar)."""
    toy.sched.check_t(t)
    ab = toy.sched.alpha_bars[t]
    return np.sqrt(1 - ab) / (ab * toy.var0 + (1 - ab))


def gaussian_eps_posterior_mean(x_t, t: int, toy: GaussianToyData) -> np.ndarray:
    ab = toy.sched.alpha_bars[t]
    return posterior_coefficient(t, toy) * (np.asarray(x_t, dtype=np.float64) - np.sqrt(ab) * toy.mu0)


def regression_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """OLS slope of y on x with intercept, and its standard error."""
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = xc @ xc
    slope = (xc @ yc) / sxx
    resid = yc - slope * xc
    se = np.sqrt(resid @ resid / (len(x) - 2) / sxx)
    return float(slope), float(se)


@dataclass
class CheckResult:
    name: str
    statistic: float
    tolerance: float
    passed: bool
    detail: str = ""

    def csv_row(self):
        return [self.name, self.statistic, self.tolerance, "pass" if self.passed else "fail"]


def _fit_ddpm(Z: np.ndarray, Y: np.ndarray):
    """Ordinary least squares Y ~ Z (Z has an intercept column); returns coefficients and SEs."""
    G = Z.T @ Z
    coef = np.linalg.solve(G, Z.T @ Y)
    resid = Y - Z @ coef
    dof = len(Z) - Z.shape[1]
    noise = np.sum(resid**2, axis=0) / dof          # per output coordinate
    ginv_diag = np.diag(np.linalg.inv(G))
    se = np.sqrt(ginv_diag[:, None] * noise[None, :])
    return coef, se


def _fit_ms(Z: np.ndarray, Y: np.ndarray, A: np.ndarray):
    """Minimise sum_n ||A (coef^T z_n - y_n)||^2 over coef via the Kronecker normal equations."""
    p, d = Z.shape[1], Y.shape[1]
    Q = A.T @ A
    G = Z.T @ Z
    # vec over (input row, output column) in row-major order: coef[i, j]
    lhs = np.kron(G, Q)
    rhs = (Z.T @ Y @ Q).ravel()
    if np.linalg.cond(lhs) > 1e12:
        raise np.linalg.LinAlgError("normal equations are singular for this toy")
    return np.linalg.solve(lhs, rhs).reshape(p, d)


def check_population_minimizer(toy: GaussianToyData, t: int, w: float, k: int,
                               n: int = 1_000_000, seed: int = 0, n_se: float = 3.0) -> list[CheckResult]:
    """Fit linear eps-predictors of x_t^ms under both losses on the same draws.

    Checks (a) the two fitted coefficient sets agree within ``n_se`` standard
    errors and (b) each agrees with the analytic posterior mean expressed in
    x_t^ms coordinates, coef * (A^{-1} x_ms - sqrt(abar) mu0).
    """
    if not 0 <= w < 1:
        raise ValueError(f"w must lie in [0, 1), got {w}")
    shape = toy.mu0.shape
    d = int(np.prod(shape))
    rng = np.random.default_rng(seed)
    x_t, eps = toy.sample(t, n, rng)
    x_ms = mix(x_t, w, k).reshape(n, d)
    Z = np.concatenate([x_ms, np.ones((n, 1))], axis=1)
    Y = eps.reshape(n, d)
    qc, qd = projector_matrices(shape, k)
    A = qc + (1 - w) * qd
    A_inv = qc + qd / (1 - w)

    coef_ddpm, se = _fit_ddpm(Z, Y)
    coef_ms = _fit_ms(Z, Y, A)

    ab = toy.sched.alpha_bars[t]
    c = posterior_coefficient(t, toy).ravel()
    W_true = (np.diag(c) @ A_inv).T                            # (input, output)
    b_true = -c * np.sqrt(ab) * toy.mu0.ravel()
    coef_true = np.vstack([W_true, b_true[None, :]])

    diff = np.max(np.abs(coef_ms - coef_ddpm) / se)
    dev_ddpm = np.max(np.abs(coef_ddpm - coef_true) / se)
    dev_ms = np.max(np.abs(coef_ms - coef_true) / se)
    return [
        CheckResult("minimizer.ms_vs_ddpm", float(diff), n_se, bool(diff <= n_se),
                    "max |coef_ms - coef_ddpm| in standard errors"),
        CheckResult("minimizer.ddpm_vs_posterior", float(dev_ddpm), n_se, bool(dev_ddpm <= n_se),
                    "max |coef_ddpm - analytic| in standard errors"),
        CheckResult("minimizer.ms_vs_posterior", float(dev_ms), n_se, bool(dev_ms <= n_se),
                    "max |coef_ms - analytic| in standard errors"),
    ]


@dataclass(frozen=True)
class DiscreteToyDistribution:
    """Finite world: x0 support points and a per-pixel discretised noise grid.

    The support is placed on the lattice (b / a) * integers, a = sqrt(abar_t),
    b = sqrt(1 - abar_t), with an integer-spaced noise grid so that different
    (x0, eps) pairs collide on the same x_t and the conditional mean is not trivial.
    """

    x0_support: np.ndarray     # (S, C, H, W)
    x0_probs: np.ndarray       # (S,)
    eps_grid: np.ndarray       # (G,) per-pixel noise values
    eps_probs: np.ndarray      # (G,)
    t: int
    sched: NoiseSchedule

    def __post_init__(self):
        for name in ("x0_probs", "eps_probs"):
            p = getattr(self, name)
            if abs(np.sum(p) - 1.0) > 1e-12 or np.any(p < 0):
                raise ValueError(f"{name} must be a probability vector")

    @classmethod
    def default(cls, sched: NoiseSchedule, t: int, shape=(1, 2, 2), n_support: int = 4,
                grid_points: int = 8, seed: int = 0) -> "DiscreteToyDistribution":
        sched.check_t(t)
        rng = np.random.default_rng(seed)
        a, b = np.sqrt(sched.alpha_bars[t]), np.sqrt(1 - sched.alpha_bars[t])
        lattice = rng.integers(-1, 2, size=(n_support, *shape))
        x0 = (b / a) * lattice
        p0 = rng.dirichlet(np.ones(n_support))
        grid = np.arange(grid_points) - (grid_points - 1) / 2.0
        pe = np.exp(-0.5 * grid**2)
        return cls(x0, p0, grid, pe / pe.sum(), t, sched)

    def atoms(self):
        """All atoms as arrays ``(prob, x0, eps, x_t)`` with a leading atom axis."""
        shape = self.x0_support.shape[1:]
        d = int(np.prod(shape))
        G = len(self.eps_grid)
        idx = np.array(list(itertools.product(range(G), repeat=d)))
        eps = self.eps_grid[idx].reshape(-1, *shape)
        pe = np.prod(self.eps_probs[idx], axis=1)
        S = len(self.x0_support)
        prob = (self.x0_probs[:, None] * pe[None, :]).ravel()
        x0 = np.repeat(self.x0_support, len(eps), axis=0)
        eps_all = np.tile(eps, (S, 1, 1, 1))
        ab = self.sched.alpha_bars[self.t]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps_all
        return prob, x0, eps_all, x_t


def _cells(values: np.ndarray, decimals: int = 9):
    """Group rows of ``values`` that coincide up to rounding."""
    keys = np.round(values.reshape(len(values), -1), decimals)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    return inverse.ravel()


def discrete_minimizer_check(toy: DiscreteToyDistribution, w: float, k: int) -> list[CheckResult]:
    """Exhaustive checks on the discrete toy.

    Per cell of x_t^ms, the minimiser of sum p ||A(f - eps)||^2 (solved from
    its normal equations) is compared with the weighted-average conditional
    mean; cells of x_t and x_t^ms are compared; and the Pythagorean risk
    identity is checked for a perturbed predictor.
    """
    prob, _, eps, x_t = toy.atoms()
    shape = eps.shape[1:]
    d = int(np.prod(shape))
    x_ms = mix(x_t, w, k)
    cell_t = _cells(x_t)
    cell_ms = _cells(x_ms)
    n_cells = cell_ms.max() + 1
    qc, qd = projector_matrices(shape, k)
    A = qc + (1 - w) * qd
    Q = A.T @ A
    e = eps.reshape(-1, d)

    mass = np.bincount(cell_ms, weights=prob, minlength=n_cells)
    cond_mean = np.stack([np.bincount(cell_ms, weights=prob * e[:, j], minlength=n_cells) for j in range(d)],
                         axis=1) / mass[:, None]
    worst = 0.0
    for c in range(n_cells):
        sel = cell_ms == c
        # normal equations of min_f sum p ||A (f - eps)||^2: (sum p) Q f = Q sum p eps
        rhs = Q @ (prob[sel] @ e[sel])
        f = np.linalg.solve(prob[sel].sum() * Q, rhs)
        worst = max(worst, float(np.max(np.abs(f - cond_mean[c]))))

    same_partition = (np.unique(np.stack([cell_t, cell_ms]), axis=1).shape[1] == n_cells
                      and cell_t.max() + 1 == n_cells)

    # Pythagoras: risk(g) = risk(m) + E||A(g - m)||^2 for an arbitrary cellwise predictor g
    rng = np.random.default_rng(1)
    g = cond_mean + rng.standard_normal(cond_mean.shape)
    r_g = e - g[cell_ms]
    r_m = e - cond_mean[cell_ms]
    gap = g[cell_ms] - cond_mean[cell_ms]
    risk = lambda r: float(prob @ np.einsum("ni,ij,nj->n", r, Q, r))
    pyth = abs(risk(r_g) - risk(r_m) - risk(gap))
    pyth_plain = abs(float(prob @ np.sum(r_g**2, 1)) - float(prob @ np.sum(r_m**2, 1)) - float(prob @ np.sum(gap**2, 1)))
    collisions = len(prob) - n_cells
    return [
        CheckResult("discrete.minimizer_eq_conditional_mean", worst, 1e-12, worst <= 1e-12,
                    f"{n_cells} cells, {collisions} colliding atoms"),
        CheckResult("discrete.ms_cells_eq_xt_cells", float(not same_partition), 0.0, same_partition,
                    "A invertible: conditioning on x_t^ms equals conditioning on x_t"),
        CheckResult("discrete.pythagoras_weighted", pyth, 1e-12, pyth <= 1e-12, ""),
        CheckResult("discrete.pythagoras_plain", pyth_plain, 1e-12, pyth_plain <= 1e-12, ""),
    ]


def check_target_decomposition(f: np.ndarray, w: float, k: int, s: float) -> list[CheckResult]:
    f = np.asarray(f, dtype=np.float64)
    coarse = apply_stroke(f, k)
    detail = f - coarse
    mixed = mix(f, w, k)
    elem = float(np.max(np.abs(mixed - (coarse + (1 - w) * detail))))
    lhs = multires_complexity(mixed, k, s)
    rhs = float(np.sum(coarse**2) + k ** (2 * s) * (1 - w) ** 2 * np.sum(detail**2))
    scale = max(1.0, abs(rhs))
    base = multires_complexity(f, k, s)
    has_detail = np.any(np.abs(detail) > 1e-12)
    strict = lhs < base if (w > 0 and has_detail) else lhs <= base + 1e-12 * scale
    return [
        CheckResult("target.projector_form", elem, 1e-12, elem <= 1e-12),
        CheckResult("target.complexity_identity", abs(lhs - rhs) / scale, 1e-12, abs(lhs - rhs) <= 1e-12 * scale),
        CheckResult("target.complexity_contraction", base - lhs, 0.0, bool(strict)),
    ]


def check_mix_inverse(x: np.ndarray, w: float, k: int) -> CheckResult:
    err = float(np.max(np.abs(mix(mix_inverse(x, w, k), w, k) - x)))
    return CheckResult("mix_inverse.round_trip", err, 1e-12, err <= 1e-12)
