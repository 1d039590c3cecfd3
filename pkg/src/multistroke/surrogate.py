"""Affine surrogate reverse chain and Monte Carlo checks of its detail-energy bounds.

The chain runs t = T..1 with

    x_{t-1} = M_t A_t(x_t) + b_t + sigma_t (Q_c + (1 - w_{t-1}) Q_d) eta_t

on vectorised images.  M_t is assembled from a coarse-to-coarse gain, a
detail-to-detail block of operator norm rho_t and a coarse-to-detail block of
operator norm kappa_t, each realised with random orthonormal bases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stroke import apply_stroke

ROUNDOFF_REL = 1e-20


def power_iteration_norm(M: np.ndarray, rtol: float = 1e-8, max_iter: int = 10_000, seed: int = 0) -> float:
    """Spectral norm of ``M`` by power iteration on M^T M."""
    if not np.any(M):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        u = M.T @ (M @ v)
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return 0.0
        v = u / nrm
        new = float(np.sqrt(nrm))
        if abs(new - est) <= rtol * new:
            return new
        est = new
    raise RuntimeError(f"power iteration did not reach rtol={rtol} within {max_iter} iterations")


def projector_matrices(shape: tuple[int, int, int], k: int) -> tuple[np.ndarray, np.ndarray]:
    """Dense (D, D) matrices of Q_c and Q_d acting on flattened images."""
    d = int(np.prod(shape))
    eye = np.eye(d).reshape(d, *shape)
    qc = apply_stroke(eye, k).reshape(d, d).T
    return qc, np.eye(d) - qc


def _orthonormal_basis(P: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(P)
    return vecs[:, vals > 0.5]


def _random_block(rng, out_basis, in_basis, norm, kind):
    """Linear map from span(in_basis) to span(out_basis) with operator norm ``norm``."""
    if norm == 0.0:
        return np.zeros((out_basis.shape[0], in_basis.shape[0]))
    if kind == "scalar":
        if out_basis is not in_basis:
            raise ValueError("scalar blocks are only defined for detail-to-detail maps")
        return norm * out_basis @ out_basis.T
    r = min(out_basis.shape[1], in_basis.shape[1])
    U, _ = np.linalg.qr(rng.standard_normal((out_basis.shape[1], r)))
    V, _ = np.linalg.qr(rng.standard_normal((in_basis.shape[1], r)))
    # top singular value pinned at 1, the rest spread below 0.8 so power iteration has a gap
    s = np.concatenate([[1.0], rng.uniform(0.0, 0.8, r - 1)])
    return norm * (out_basis @ U) @ np.diag(s) @ (in_basis @ V).T


@dataclass
class SurrogateChainSpec:
    shape: tuple[int, int, int]
    k: int
    M: list[np.ndarray]             # M[t] for t = 1..T; M[0] unused
    bias: list[np.ndarray]          # b_t
    sigma: np.ndarray               # sigma_0..sigma_T (index 0 unused)
    weights: np.ndarray             # w_0..w_T
    rho: np.ndarray
    kappa: np.ndarray
    B: np.ndarray                   # ||Q_d b_t||^2
    qc: np.ndarray
    qd: np.ndarray
    n_samples: int = 100_000
    seed: int = 0

    @property
    def T(self) -> int:
        return len(self.M) - 1

    @property
    def d_coarse(self) -> int:
        c, h, w = self.shape
        return c * (h // self.k) * (w // self.k)

    @property
    def d_detail(self) -> int:
        return int(np.prod(self.shape)) - self.d_coarse

    def mix_matrix(self, w: float) -> np.ndarray:
        return self.qc + (1.0 - w) * self.qd


def _table(values, T, name):
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(T + 1, float(arr))
    if arr.shape != (T + 1,):
        raise ValueError(f"{name} table must have T + 1 = {T + 1} entries (index 0 = t=0), got {arr.shape}")
    return arr


def build_surrogate(shape, k: int, T: int, rho, kappa, sigma, weights, bias_energy=0.0,
                    coarse_gain: float = 1.0, detail_kind: str = "random",
                    n_samples: int = 100_000, seed: int = 0) -> SurrogateChainSpec:
    """Assemble a surrogate chain of length ``T``.

    ``rho``, ``kappa``, ``sigma``, ``bias_energy`` and ``weights`` are scalars
    or tables indexed 0..T.  ``detail_kind="scalar"`` makes the
    detail-to-detail block rho_t Q_d; ``"random"`` uses a random map with the
    same operator norm.  Declared norms are certified by power iteration.
    """
    if T < 1:
        raise ValueError("chain needs at least one step")
    shape = tuple(int(s) for s in shape)
    if detail_kind not in ("random", "scalar"):
        raise ValueError(f"detail_kind must be 'random' or 'scalar', got {detail_kind!r}")
    rho, kappa, sigma = (_table(v, T, n) for v, n in ((rho, "rho"), (kappa, "kappa"), (sigma, "sigma")))
    B = _table(bias_energy, T, "bias_energy")
    weights = _table(weights, T, "weights")
    weights = weights.copy()
    weights[0] = 0.0
    if np.any(rho < 0) or np.any(kappa < 0) or np.any(sigma < 0) or np.any(B < 0):
        raise ValueError("norms, noise scales and bias energies must be nonnegative")
    if np.any(weights < 0) or np.any(weights >= 1):
        raise ValueError("stroke weights must lie in [0, 1)")
    qc, qd = projector_matrices(shape, k)
    coarse_basis = _orthonormal_basis(qc)
    detail_basis = _orthonormal_basis(qd)
    rng = np.random.default_rng(seed)
    Ms = [np.zeros_like(qc)]
    biases = [np.zeros(qc.shape[0])]
    for t in range(1, T + 1):
        dd = _random_block(rng, detail_basis, detail_basis, rho[t], detail_kind)
        dc = _random_block(rng, detail_basis, coarse_basis, kappa[t], "random")
        M = coarse_gain * qc + dd + dc
        for block, declared, label in ((qd @ M @ qd, rho[t], "detail-to-detail"),
                                       (qd @ M @ qc, kappa[t], "coarse-to-detail")):
            # iterate well past the certification tolerance so the estimate error is negligible
            est = power_iteration_norm(block, rtol=1e-12, seed=seed + t)
            if abs(est - declared) > 1e-8 * max(declared, 1.0):
                raise RuntimeError(f"step {t}: {label} norm {est} != declared {declared}")
        Ms.append(M)
        direction = detail_basis @ rng.standard_normal(detail_basis.shape[1])
        direction /= np.linalg.norm(direction)
        biases.append(np.sqrt(B[t]) * direction)
    return SurrogateChainSpec(shape, k, Ms, biases, sigma, weights, rho, kappa, B, qc, qd, n_samples, seed)


@dataclass
class EnergyTrace:
    """Per-state estimates indexed by timestep 0..T."""

    E: np.ndarray
    E_se: np.ndarray
    C2: np.ndarray
    C2_se: np.ndarray
    N_emp: np.ndarray     # empirical E||Q_d eta_t||^2 for t = 1..T (index 0 unused)
    N: int                # analytic detail dimension


def _energy(X, P):
    e = np.sum((X @ P.T) ** 2, axis=1)
    return e.mean(), e.std(ddof=1) / np.sqrt(len(e))


def simulate(spec: SurrogateChainSpec, init: np.ndarray | None = None) -> EnergyTrace:
    """Run ``spec.n_samples`` trajectories; x_T defaults to A_T applied to N(0, I)."""
    T, d, n = spec.T, spec.qc.shape[0], spec.n_samples
    rng = np.random.default_rng(spec.seed)
    if init is None:
        X = rng.standard_normal((n, d)) @ spec.mix_matrix(spec.weights[T]).T
    else:
        X = np.broadcast_to(np.asarray(init, dtype=np.float64).reshape(-1, d), (n, d)).copy()
    E = np.zeros(T + 1)
    E_se = np.zeros(T + 1)
    C2 = np.zeros(T + 1)
    C2_se = np.zeros(T + 1)
    N_emp = np.zeros(T + 1)
    E[T], E_se[T] = _energy(X, spec.qd)
    C2[T], C2_se[T] = _energy(X, spec.qc)
    for t in range(T, 0, -1):
        x_ms = X @ spec.mix_matrix(spec.weights[t]).T
        eta = rng.standard_normal((n, d))
        N_emp[t] = np.mean(np.sum((eta @ spec.qd.T) ** 2, axis=1))
        noise = eta @ spec.mix_matrix(spec.weights[t - 1]).T
        X = x_ms @ spec.M[t].T + spec.bias[t] + spec.sigma[t] * noise
        E[t - 1], E_se[t - 1] = _energy(X, spec.qd)
        C2[t - 1], C2_se[t - 1] = _energy(X, spec.qc)
    return EnergyTrace(E, E_se, C2, C2_se, N_emp, spec.d_detail)


@dataclass
class StepReport:
    t: int
    E_next: float
    bound: float
    margin: float
    slack: float

    @property
    def ok(self) -> bool:
        return self.E_next <= self.bound + self.slack


def check_bound(trace: EnergyTrace, spec: SurrogateChainSpec, n_se: float = 3.0) -> list[StepReport]:
    """Per step t -> t-1, compare E_{t-1} with the three-term detail-energy bound.

    The bound is evaluated on the empirical E_t and C_t, so the slack combines
    the standard errors of every estimated quantity.
    """
    reports = []
    w = spec.weights
    for t in range(spec.T, 0, -1):
        c_kappa = 3.0 * spec.kappa[t] ** 2
        c_rho = 3.0 * spec.rho[t] ** 2 * (1.0 - w[t]) ** 2
        bound = (c_kappa * trace.C2[t] + c_rho * trace.E[t] + 3.0 * spec.B[t]
                 + spec.sigma[t] ** 2 * (1.0 - w[t - 1]) ** 2 * trace.N)
        se = np.sqrt(trace.E_se[t - 1] ** 2 + (c_rho * trace.E_se[t]) ** 2 + (c_kappa * trace.C2_se[t]) ** 2)
        # dense projectors leak ~1e-16 of the coarse state into the detail part; its energy
        # is ~1e-32 of the state energy and matters only when the bound is exactly zero
        roundoff = ROUNDOFF_REL * (trace.E[t] + trace.C2[t])
        reports.append(StepReport(t, float(trace.E[t - 1]), float(bound),
                                  float(bound - trace.E[t - 1]), float(n_se * se + roundoff)))
    return reports


def clean_recursion(trace: EnergyTrace, spec: SurrogateChainSpec, t: int) -> float:
    """rho_t^2 (1 - w_t)^2 E_t + sigma_t^2 (1 - w_{t-1})^2 N, exact for scalar detail blocks."""
    w = spec.weights
    return float(spec.rho[t] ** 2 * (1 - w[t]) ** 2 * trace.E[t]
                 + spec.sigma[t] ** 2 * (1 - w[t - 1]) ** 2 * trace.N)


@dataclass
class IteratedReport:
    t_in: int
    t_out: int
    q: float
    entry: float
    exit: float
    bound: float
    slack: float

    @property
    def ok(self) -> bool:
        return self.exit <= self.bound + self.slack


def iterated_bound(trace: EnergyTrace, spec: SurrogateChainSpec, t_in: int, t_out: int,
                   allow_unstroked: bool = False, n_se: float = 3.0) -> IteratedReport:
    """Geometric contraction of detail energy over the steps t_in..t_out+1.

    Only valid without coarse-to-detail forcing and detail bias, with every
    detail block a strict contraction.  ``w_min = 0`` is refused unless
    ``allow_unstroked`` asks for the plain rho^2 contraction.
    """
    if not spec.T >= t_in > t_out >= 0:
        raise ValueError(f"need T >= t_in > t_out >= 0, got t_in={t_in}, t_out={t_out}")
    steps = np.arange(t_out + 1, t_in + 1)
    if np.any(spec.kappa[steps] != 0) or np.any(spec.B[steps] != 0):
        raise ValueError("iterated contraction needs zero coarse-to-detail coupling and zero detail bias")
    rho = float(spec.rho[steps].max())
    if rho >= 1.0:
        raise ValueError(f"iterated contraction needs rho < 1, got {rho}")
    w_min = float(spec.weights[steps].min())
    if w_min <= 0.0 and not allow_unstroked:
        raise ValueError("block has w_min = 0; pass allow_unstroked=True for the plain rho^2 contraction")
    q = rho**2 * (1.0 - w_min) ** 2
    L = len(steps)
    floor = max(spec.sigma[t] ** 2 * (1 - spec.weights[t - 1]) ** 2 * trace.N for t in steps)
    geom = L if q == 1.0 else (1 - q**L) / (1 - q)
    bound = q**L * trace.E[t_in] + geom * floor
    slack = n_se * np.hypot(trace.E_se[t_out], q**L * trace.E_se[t_in])
    return IteratedReport(t_in, t_out, q, float(trace.E[t_in]), float(trace.E[t_out]), float(bound), float(slack))


def trace_rows(trace: EnergyTrace, spec: SurrogateChainSpec):
    """CSV rows ``step, E, C2, N, bound, margin``; bound and margin are blank at t = T."""
    reports = {r.t - 1: r for r in check_bound(trace, spec)}
    for t in range(spec.T, -1, -1):
        r = reports.get(t)
        yield [t, trace.E[t], trace.C2[t], trace.N,
               "" if r is None else r.bound, "" if r is None else r.margin]
