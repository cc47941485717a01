"""Entropic optimal-transport solver producing watermark couplings.

The solver maximizes the expected score of the coupling between the token
law and a uniform side-symbol law by minimizing the cost C = -f with an
entropy penalty epsilon. Plain diagonal scaling is the default; a log-domain
variant covers small epsilon where the Gibbs kernel under- or overflows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import Coupling, TokenDistribution

# Below this regularization the plain kernel exp(-C/eps) is at risk of
# overflow for typical normalized scores; callers should go log-domain.
LOG_DOMAIN_EPSILON = 0.02


@dataclass(frozen=True)
class SinkhornConfig:
    """epsilon: entropy regularization; tol: L1 row-marginal threshold."""

    epsilon: float = 0.05
    tol: float = 1e-5
    max_iters: int = 10_000

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class SolveStats:
    iterations: int
    final_marginal_error: float
    converged: bool
    column_error: float = 0.0


class SinkhornError(RuntimeError):
    def __init__(self, message: str, stats: SolveStats):
        super().__init__(message)
        self.stats = stats


class NonConvergenceError(SinkhornError):
    """Row-marginal error still above tol after max_iters."""


class NumericalUnderflowError(SinkhornError):
    """A scaling vector went non-finite; retry in the log domain."""


def cost_from_scores(f) -> np.ndarray:
    """OT cost matrix: elementwise negation of the scores."""
    values = np.asarray(getattr(f, "values", f), dtype=np.float64)
    return -values


def _as_marginal(p) -> np.ndarray:
    vec = np.asarray(p.probs if isinstance(p, TokenDistribution) else p, dtype=np.float64)
    if vec.ndim != 1 or vec.size < 1:
        raise ValueError("row marginal must be a non-empty vector")
    if np.any(vec < 0) or abs(float(vec.sum()) - 1.0) > 1e-9:
        raise ValueError("row marginal must be a probability vector")
    return vec


def _assemble(joint_support: np.ndarray, support: np.ndarray, p: np.ndarray, k: int,
              tol: float, stats: SolveStats) -> tuple[Coupling, SolveStats]:
    joint = np.zeros((p.size, k))
    joint[support] = np.clip(joint_support, 0.0, None)
    stats.column_error = float(np.abs(joint.sum(axis=0) - 1.0 / k).max())
    # Validation tolerance: the row residual is bounded by tol in L1 but a
    # per-entry check also sees the (tiny) column residual of the last sweep.
    coupling = Coupling(joint, p, k, tol_marg=max(tol, stats.column_error * 4 + 1e-15))
    return coupling, stats


def solve(p, k: int, C: np.ndarray, cfg: SinkhornConfig | None = None) -> tuple[Coupling, SolveStats]:
    """Diagonal-scaling solve: P = diag(u) exp(-C/eps) diag(v).

    Stops when the L1 distance between the row sums and the token law drops
    to cfg.tol; zero-probability tokens are excluded from the iteration and
    re-inserted as zero rows. Raises NonConvergenceError or
    NumericalUnderflowError (both carry SolveStats).
    """
    cfg = cfg or SinkhornConfig()
    p = _as_marginal(p)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (p.size, k):
        raise ValueError(f"cost shape {C.shape} does not match ({p.size}, {k})")
    support = np.flatnonzero(p > 0)
    a = p[support]
    b = np.full(k, 1.0 / k)
    with np.errstate(over="ignore"):
        K = np.exp(-C[support] / cfg.epsilon)
    if not np.all(np.isfinite(K)):
        raise NumericalUnderflowError(
            "Gibbs kernel overflowed; use log_domain_solve", SolveStats(0, float("nan"), False)
        )
    u = np.ones(a.size)
    v = np.ones(k)
    Kv = K @ v
    err = float(np.abs(u * Kv - a).sum())
    iterations = 0
    while err > cfg.tol and iterations < cfg.max_iters:
        u = a / Kv
        v = b / (u @ K)
        iterations += 1
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            stats = SolveStats(iterations, float("nan"), False)
            raise NumericalUnderflowError(
                "scaling vectors went non-finite; use log_domain_solve", stats
            )
        Kv = K @ v
        err = float(np.abs(u * Kv - a).sum())
    stats = SolveStats(iterations, err, err <= cfg.tol)
    if not stats.converged:
        raise NonConvergenceError(
            f"marginal error {err:.3g} > tol {cfg.tol:g} after {iterations} iterations", stats
        )
    return _assemble(u[:, None] * K * v[None, :], support, p, k, cfg.tol, stats)


def log_domain_solve(p, k: int, C: np.ndarray, cfg: SinkhornConfig | None = None) -> tuple[Coupling, SolveStats]:
    """Same contract as :func:`solve`, iterating on dual potentials in log space."""
    cfg = cfg or SinkhornConfig()
    p = _as_marginal(p)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (p.size, k):
        raise ValueError(f"cost shape {C.shape} does not match ({p.size}, {k})")
    support = np.flatnonzero(p > 0)
    log_a = np.log(p[support])
    log_b = np.full(k, -np.log(k))
    logK = -C[support] / cfg.epsilon
    f_pot = np.zeros(support.size)
    g_pot = np.zeros(k)
    with np.errstate(over="ignore"):
        lse_rows = logsumexp(logK + g_pot[None, :], axis=1)
        err = float(np.abs(np.exp(f_pot + lse_rows) - p[support]).sum())
    iterations = 0
    while err > cfg.tol and iterations < cfg.max_iters:
        f_pot = log_a - lse_rows
        g_pot = log_b - logsumexp(logK + f_pot[:, None], axis=0)
        iterations += 1
        lse_rows = logsumexp(logK + g_pot[None, :], axis=1)
        err = float(np.abs(np.exp(f_pot + lse_rows) - p[support]).sum())
    stats = SolveStats(iterations, err, err <= cfg.tol)
    if not stats.converged:
        raise NonConvergenceError(
            f"marginal error {err:.3g} > tol {cfg.tol:g} after {iterations} iterations", stats
        )
    joint_support = np.exp(f_pot[:, None] + logK + g_pot[None, :])
    return _assemble(joint_support, support, p, k, cfg.tol, stats)


def solve_auto(p, k: int, C: np.ndarray, cfg: SinkhornConfig | None = None) -> tuple[Coupling, SolveStats]:
    """Dispatch to the log-domain solver when epsilon < LOG_DOMAIN_EPSILON."""
    cfg = cfg or SinkhornConfig()
    if cfg.epsilon < LOG_DOMAIN_EPSILON:
        return log_domain_solve(p, k, C, cfg)
    return solve(p, k, C, cfg)
