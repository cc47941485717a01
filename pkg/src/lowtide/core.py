"""Fundamental probability objects: token distributions, couplings, conditionals.

Everything here is immutable after construction (arrays are frozen) and safe
to share across threads. Token ids are 0-based; side symbols are 1-based in
public APIs and 0-based internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Tolerance for exact constructions (probability vectors built in closed form).
PROB_TOL = 1e-9
# Tolerance for solver outputs (Sinkhorn marginal residuals).
MARGINAL_TOL = 1e-5


class DegenerateCouplingError(ValueError):
    """A coupling column carries (numerically) no mass."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TokenDistribution:
    """Probability vector over m >= 2 tokens."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size < 2:
            raise ValueError(f"need a 1-d vector with m >= 2 entries, got shape {p.shape}")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        total = float(p.sum())
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"probabilities must sum to 1 within {PROB_TOL:g}, got {total!r}")
        object.__setattr__(self, "probs", _freeze(p))

    @property
    def m(self) -> int:
        return self.probs.size

    def support(self) -> np.ndarray:
        """Indices of tokens with strictly positive probability."""
        return np.flatnonzero(self.probs > 0)


@dataclass(frozen=True)
class ConditionalLaw:
    """Next-token law conditioned on one side symbol; always renormalized."""

    cond: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cond, dtype=np.float64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("conditional must be a non-empty vector")
        if np.any(c < 0):
            raise ValueError("conditional entries must be non-negative")
        total = float(c.sum())
        if total <= 0:
            raise ValueError("conditional has no mass")
        c = c / total
        object.__setattr__(self, "cond", _freeze(c))

    @property
    def m(self) -> int:
        return self.cond.size


@dataclass(frozen=True)
class Coupling:
    """m x k joint law with prescribed row marginal and uniform column marginal 1/k.

    ``tol_marg`` is the marginal tolerance the instance was validated against;
    exact constructions use PROB_TOL, solver outputs use the solver threshold.
    """

    joint: np.ndarray
    row_marginal: np.ndarray
    col_cardinality: int
    tol_marg: float = field(default=MARGINAL_TOL)

    def __post_init__(self):
        j = np.asarray(self.joint, dtype=np.float64)
        p = np.asarray(
            self.row_marginal.probs
            if isinstance(self.row_marginal, TokenDistribution)
            else self.row_marginal,
            dtype=np.float64,
        )
        k = int(self.col_cardinality)
        if j.ndim != 2:
            raise ValueError("joint must be a matrix")
        if j.shape != (p.size, k):
            raise ValueError(f"joint shape {j.shape} does not match marginals ({p.size}, {k})")
        if np.any(j < 0):
            raise ValueError("joint entries must be non-negative")
        row_err = np.abs(j.sum(axis=1) - p)
        col_err = np.abs(j.sum(axis=0) - 1.0 / k)
        if row_err.max(initial=0.0) > self.tol_marg:
            raise ValueError(
                f"row sums deviate from the row marginal by {row_err.max():.3g} > {self.tol_marg:g}"
            )
        if col_err.max(initial=0.0) > self.tol_marg:
            raise ValueError(
                f"column sums deviate from 1/k by {col_err.max():.3g} > {self.tol_marg:g}"
            )
        object.__setattr__(self, "joint", _freeze(j))
        object.__setattr__(self, "row_marginal", _freeze(p))
        object.__setattr__(self, "col_cardinality", k)

    @property
    def m(self) -> int:
        return self.joint.shape[0]

    @property
    def k(self) -> int:
        return self.col_cardinality


def min_entropy(d: TokenDistribution) -> float:
    """Min-entropy of a token distribution in bits: -log2 of the largest mass."""
    return float(-np.log2(np.max(d.probs)))


def is_low_entropy(d: TokenDistribution) -> bool:
    """True when min-entropy is at most one bit (some token has mass >= 1/2)."""
    return min_entropy(d) <= 1.0


def spike_distribution(m: int, lam: float, i: int, j: int) -> TokenDistribution:
    """Two-point law with mass ``lam`` at token ``i`` and ``1 - lam`` at token ``j``.

    ``lam`` must lie in [1/2, 1); this is the worst-case low-entropy shape.
    """
    if not (0.5 <= lam < 1.0):
        raise ValueError(f"lam must be in [1/2, 1), got {lam!r}")
    if i == j:
        raise ValueError("spike positions i and j must differ")
    if not (0 <= i < m and 0 <= j < m):
        raise ValueError(f"spike positions must be token ids below m={m}")
    p = np.zeros(m)
    p[i] = lam
    p[j] = 1.0 - lam
    return TokenDistribution(p)


def conditional_from_coupling(c: Coupling, s: int) -> ConditionalLaw:
    """Conditional token law given side symbol ``s`` (1-based): k times column s.

    The column is renormalized to absorb solver residual; a column holding
    less than 1e-12 mass signals a degenerate coupling.
    """
    if not (1 <= s <= c.k):
        raise ValueError(f"side symbol must be in 1..{c.k}, got {s}")
    col = c.joint[:, s - 1]
    total = float(col.sum())
    if total < 1e-12:
        raise DegenerateCouplingError(f"column {s} carries mass {total:.3g} < 1e-12")
    return ConditionalLaw(col * c.k)


def expected_score_gap(c: Coupling, f) -> float:
    """Expected score under the joint minus under the independent product.

    ``f`` may be a ScoreMatrix or a plain m x k array.
    """
    values = np.asarray(getattr(f, "values", f), dtype=np.float64)
    if values.shape != c.joint.shape:
        raise ValueError(f"score shape {values.shape} != coupling shape {c.joint.shape}")
    coupled = float(np.sum(c.joint * values))
    independent = float(np.dot(c.row_marginal, values.mean(axis=1)))
    return coupled - independent
