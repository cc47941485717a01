"""Independent numerical verification of the detection-gap guarantees:
coding-theoretic bound evaluation, the exact two-token coupling, an
exhaustive transport-polytope oracle, and quantile tail integrals.

Bound checks accept ``fractions.Fraction`` inputs and then stay exact; float
inputs give float results.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations

import numpy as np

from .core import Coupling, expected_score_gap
from .scores import ScoreFamily, min_pairwise_hamming


@dataclass(frozen=True)
class GapCertificate:
    m: int
    k: int
    lam: float
    empirical_gap: float
    bound: float

    @property
    def slack(self) -> float:
        return self.bound - self.empirical_gap


@dataclass(frozen=True)
class TailIntegral:
    family: ScoreFamily
    lam: float
    value: float
    std_error: float
    n_samples: int


def plotkin_bound(m: int, lam):
    """Ceiling on the binary-score detection gap: m (1 - lam) / (2 (m - 1)).

    Exact (Fraction) when ``lam`` is a Fraction.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    if not (Fraction(1, 2) <= Fraction(lam) < 1 if isinstance(lam, Fraction) else 0.5 <= lam < 1):
        raise ValueError(f"lam must be in [1/2, 1), got {lam!r}")
    if isinstance(lam, Fraction):
        return Fraction(m, 2 * (m - 1)) * (1 - lam)
    return m * (1.0 - lam) / (2 * (m - 1))


def hamming_gap(f, lam):
    """Worst-pair detection gap of a binary score table: (1 - lam) d_min / k.

    Exact (Fraction) when ``lam`` is a Fraction; rejects non-binary tables.
    """
    values = np.asarray(getattr(f, "values", f))
    if not np.all((values == 0) | (values == 1)):
        raise ValueError("score table must be binary")
    if not (0.5 <= float(lam) < 1):
        raise ValueError(f"lam must be in [1/2, 1), got {lam!r}")
    k = values.shape[1]
    d_min = min_pairwise_hamming(values.astype(np.int64))
    if isinstance(lam, Fraction):
        return (1 - lam) * Fraction(d_min, k)
    return (1.0 - lam) * d_min / k


def exact_spike_coupling(lam: float, score_row_i, score_row_j, k: int | None = None):
    """Optimal coupling of a two-token (lam, 1-lam) law with a uniform side symbol.

    Columns are ranked by the score difference of the two tokens; the heavy
    token fills the best columns at 1/k each until its mass runs out, with a
    fractional fill at the boundary; the light token takes the remainder.
    Returns (coupling over 2 x k, detection gap). ``lam`` may be 1 as a
    degenerate limit.
    """
    fi = np.asarray(score_row_i, dtype=np.float64)
    fj = np.asarray(score_row_j, dtype=np.float64)
    if fi.shape != fj.shape or fi.ndim != 1:
        raise ValueError("score rows must be equal-length vectors")
    if k is None:
        k = fi.size
    if k != fi.size:
        raise ValueError(f"k={k} does not match row length {fi.size}")
    if not (0.5 <= lam <= 1.0):
        raise ValueError(f"lam must be in [1/2, 1], got {lam!r}")
    order = np.argsort(-(fi - fj), kind="stable")
    r = int(np.floor(lam * k + 1e-12))
    row_i = np.zeros(k)
    row_i[order[:r]] = 1.0 / k
    if r < k:
        row_i[order[r]] = lam - r / k
    row_j = 1.0 / k - row_i
    joint = np.vstack([row_i, row_j])
    marginal = np.array([lam, 1.0 - lam])
    coupling = Coupling(joint, marginal, k, tol_marg=1e-12)
    gap = float(
        np.dot(row_i, fi) + np.dot(row_j, fj) - (lam * fi.mean() + (1 - lam) * fj.mean())
    )
    return coupling, gap


def spike_gap_by_vertex_enumeration(lam: float, score_row_i, score_row_j) -> float:
    """Maximum detection gap over the two-row transport polytope, by brute force.

    The feasible set for the heavy row is {a in [0, 1/k]^k : sum a = lam};
    its vertices put r = floor(lam k) coordinates at 1/k, one at the
    fractional remainder, and the rest at zero. Every placement is evaluated.
    Intended as an independent oracle for small k.
    """
    fi = np.asarray(score_row_i, dtype=np.float64)
    fj = np.asarray(score_row_j, dtype=np.float64)
    k = fi.size
    if k > 16:
        raise ValueError("vertex enumeration is for small k only")
    if not (0.5 <= lam <= 1.0):
        raise ValueError(f"lam must be in [1/2, 1], got {lam!r}")
    r = int(np.floor(lam * k + 1e-12))
    frac = lam - r / k
    indep = lam * fi.mean() + (1 - lam) * fj.mean()
    best = -np.inf
    for full in combinations(range(k), r):
        base = np.zeros(k)
        base[list(full)] = 1.0 / k
        rest = [s for s in range(k) if s not in full]
        if frac > 1e-15 and rest:
            candidates = []
            for extra in rest:
                a = base.copy()
                a[extra] = frac
                candidates.append(a)
        else:
            candidates = [base]
        for a in candidates:
            value = float(np.dot(a, fi) + np.dot(1.0 / k - a, fj)) - indep
            best = max(best, value)
    return best


def delta_samples(family: ScoreFamily, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws of the score difference of two independent family samples."""
    return family.sample(rng, n) - family.sample(rng, n)


def _quantile_tail(sorted_delta: np.ndarray, lam: float) -> float:
    """Integral of the empirical quantile function over [1 - lam, 1]."""
    n = sorted_delta.size
    lo = 1.0 - lam
    idx = int(np.floor(lo * n))
    if idx >= n:
        return 0.0
    boundary_width = (idx + 1) / n - lo
    return float(sorted_delta[idx] * boundary_width + sorted_delta[idx + 1 :].sum() / n)


def tail_integral(
    family: ScoreFamily,
    lam: float,
    n_samples: int = 1_000_000,
    seed: int = 0,
    batches: int = 20,
    normalize: bool = False,
) -> TailIntegral:
    """Monte Carlo estimate of the upper quantile integral of the score difference.

    The integrand is the quantile function of Delta = f - f' on [1 - lam, 1],
    estimated from the sorted sample; the standard error comes from batch
    means. With ``normalize`` the difference is rescaled to unit variance
    before integrating.
    """
    if not (0.5 <= lam < 1.0):
        raise ValueError(f"lam must be in [1/2, 1), got {lam!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    delta = delta_samples(family, n_samples, rng)
    if normalize:
        delta = delta / delta.std()
    per_batch = n_samples // batches
    estimates = [
        _quantile_tail(np.sort(delta[i * per_batch : (i + 1) * per_batch]), lam)
        for i in range(batches)
    ]
    value = _quantile_tail(np.sort(delta), lam)
    se = float(np.std(estimates, ddof=1) / np.sqrt(batches))
    return TailIntegral(family=family, lam=lam, value=value, std_error=se, n_samples=n_samples)


def empirical_gap_convergence(
    family: ScoreFamily,
    lam: float,
    k_grid,
    n_seeds: int = 50,
    seed: int = 0,
    m: int = 2,
) -> list[GapCertificate]:
    """Mean exact-coupling gap of fresh random 2 x k score tables, per k.

    As k grows the mean approaches the quantile tail integral, which is
    attached as the certificate bound.
    """
    limit = tail_integral(family, lam, seed=seed ^ 0x5EED).value
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for k in k_grid:
        gaps = []
        for _ in range(n_seeds):
            rows = family.sample(rng, (2, k))
            _, gap = exact_spike_coupling(lam, rows[0], rows[1])
            gaps.append(gap)
        out.append(
            GapCertificate(m=m, k=int(k), lam=lam, empirical_gap=float(np.mean(gaps)), bound=limit)
        )
    return out


def sinkhorn_spike_gap(lam: float, score_rows: np.ndarray, epsilon: float = 0.01,
                       tol: float = 1e-7) -> float:
    """Detection gap of the entropic solution on a two-token spike instance."""
    from .sinkhorn import SinkhornConfig, solve_auto

    rows = np.asarray(score_rows, dtype=np.float64)
    marginal = np.array([lam, 1.0 - lam])
    cfg = SinkhornConfig(epsilon=epsilon, tol=tol, max_iters=200_000)
    coupling, _ = solve_auto(marginal, rows.shape[1], -rows, cfg)
    return expected_score_gap(coupling, rows)


def verify_plotkin_equality(m_values=(2, 4, 8, 16, 32, 64),
                            lam_values=(Fraction(1, 2), Fraction(3, 5), Fraction(3, 4), Fraction(9, 10))):
    """Exact-arithmetic check that the simplex table meets the binary bound.

    Returns a list of (m, lam, gap, bound, slack) tuples with Fractions.
    """
    from .scores import simplex_score

    results = []
    for m in m_values:
        table = simplex_score(m)
        for lam in lam_values:
            gap = hamming_gap(table, lam)
            bound = plotkin_bound(m, lam)
            results.append((m, lam, gap, bound, bound - gap))
    return results
