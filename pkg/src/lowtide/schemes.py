"""Watermark samplers sharing one step interface: (token law, side info) ->
watermarked conditional -> sampled token.

The transport-based samplers (simplex and heavy-tailed scores) run the
filter / solve / condition / tilt / sample pipeline; the red-green, gumbel
and correlated-channel baselines draw their per-step randomness from the
side stream and need no solver. Sampling randomness is kept separate from
the side-information stream so detection never needs the sampler state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import ConditionalLaw, TokenDistribution, conditional_from_coupling
from .scores import ScoreFamily, ScoreMatrix, SimplexBinary, lognormal_family
from .sideinfo import SideInfoStream
from .sinkhorn import SinkhornConfig, solve_auto


class DegenerateSupportError(ValueError):
    """The filtered token law has an empty support."""


@dataclass(frozen=True)
class TiltConfig:
    delta: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.delta < 1.0):
            raise ValueError(f"delta must be in [0, 1), got {self.delta!r}")


@dataclass(frozen=True)
class SimplexWater:
    name: str = "simplex"


@dataclass(frozen=True)
class HeavyWater:
    family: ScoreFamily = field(default_factory=lognormal_family)
    k: int = 1024
    name: str = "heavy"


@dataclass(frozen=True)
class RedGreen:
    gamma: float = 0.5
    delta_rg: float = 1.0
    name: str = "red-green"

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must be in (0, 1)")
        if self.delta_rg < 0:
            raise ValueError("delta_rg must be non-negative")


@dataclass(frozen=True)
class Gumbel:
    name: str = "gumbel"


@dataclass(frozen=True)
class CorrelatedChannel:
    k: int = 2
    name: str = "correlated-channel"

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("correlated channel needs k >= 2")


Variant = SimplexWater | HeavyWater | RedGreen | Gumbel | CorrelatedChannel


@dataclass(frozen=True)
class SchemeConfig:
    variant: Variant
    tilt: TiltConfig = field(default_factory=TiltConfig)
    top_p: float = 0.999
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)

    def __post_init__(self):
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError("top_p must be in (0, 1]")

    def with_delta(self, delta: float) -> "SchemeConfig":
        return replace(self, tilt=TiltConfig(delta))


@dataclass
class WatermarkStep:
    """One generation step: sampled token, the law it came from, and the
    score/side-symbol pair detection will reproduce."""

    token: int
    conditional: ConditionalLaw
    score: float
    side_symbol: int
    base_logprob: float


def top_p_filter(d: TokenDistribution, p: float) -> TokenDistribution:
    """Keep the smallest prefix of tokens (by descending probability, ties to
    the lower id) whose cumulative mass reaches p; zero and renormalize the rest."""
    if not (0.0 < p <= 1.0):
        raise ValueError("p must be in (0, 1]")
    probs = d.probs
    order = np.lexsort((np.arange(probs.size), -probs))
    csum = np.cumsum(probs[order])
    cut = int(np.searchsorted(csum, p - 1e-12)) + 1
    keep = order[:cut]
    filtered = np.zeros_like(probs)
    filtered[keep] = probs[keep]
    return TokenDistribution(filtered / filtered.sum())


def tilt_binary(cond: ConditionalLaw, f_col: np.ndarray, delta: float) -> ConditionalLaw:
    """Upweight score-1 tokens by (1 + delta), downweight score-0 by (1 - delta)."""
    col = np.asarray(f_col, dtype=np.float64)
    if not np.all((col == 0) | (col == 1)):
        raise ValueError("binary tilt needs a 0/1 score column")
    weights = np.where(col == 1, 1.0 + delta, 1.0 - delta)
    return ConditionalLaw(cond.cond * weights)


def tilt_signed(cond: ConditionalLaw, f_col: np.ndarray, delta: float) -> ConditionalLaw:
    """Scale each token's mass by (1 + delta * sign(score)); sign(0) leaves it."""
    col = np.asarray(f_col, dtype=np.float64)
    return ConditionalLaw(cond.cond * (1.0 + delta * np.sign(col)))


def _sample(cond: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a probability vector."""
    csum = np.cumsum(cond)
    u = rng.random() * csum[-1]
    return int(np.searchsorted(csum, u, side="right").clip(0, cond.size - 1))


def ot_watermark_step(
    d: TokenDistribution,
    f: ScoreMatrix,
    s: int,
    cfg: SchemeConfig,
    rng: np.random.Generator,
) -> WatermarkStep:
    """One transport-based watermark step.

    Filters the law, solves the entropic OT on the surviving support with
    cost -f, extracts the conditional for side symbol s, applies the variant
    tilt when delta > 0, and samples. A single-token support skips the solve;
    the step is still scored so detection sees every position.
    """
    if f.m != d.m:
        raise ValueError(f"score rows {f.m} do not cover the vocabulary {d.m}")
    if not (1 <= s <= f.k):
        raise ValueError(f"side symbol must be in 1..{f.k}")
    filtered = top_p_filter(d, cfg.top_p)
    support = filtered.support()
    if support.size == 0:
        raise DegenerateSupportError("empty support after filtering")
    delta = cfg.tilt.delta
    if support.size == 1:
        token = int(support[0])
        cond = np.zeros(d.m)
        cond[token] = 1.0
        return WatermarkStep(
            token=token,
            conditional=ConditionalLaw(cond),
            score=float(f.values[token, s - 1]),
            side_symbol=s,
            base_logprob=0.0,
        )
    key = (
        support.tobytes(),
        filtered.probs[support].tobytes(),
        cfg.sinkhorn.epsilon,
        cfg.sinkhorn.tol,
    )
    coupling = f._solve_cache.get(key)
    if coupling is None:
        coupling, _ = solve_auto(filtered.probs[support], f.k, -f.values[support], cfg.sinkhorn)
        if len(f._solve_cache) < 65536:
            f._solve_cache[key] = coupling
    cond_support = conditional_from_coupling(coupling, s)
    if delta > 0:
        col = f.values[support, s - 1]
        if isinstance(f.kind, SimplexBinary):
            cond_support = tilt_binary(cond_support, col, delta)
        else:
            # signed tilt expects zero-mean rows; center by the null means so
            # q-ary and unnormalized tables degrade gracefully
            cond_support = tilt_signed(cond_support, col - f.row_null_mean[support], delta)
    cond = np.zeros(d.m)
    cond[support] = cond_support.cond
    law = ConditionalLaw(cond)
    token = int(support[_sample(cond_support.cond, rng)])
    return WatermarkStep(
        token=token,
        conditional=law,
        score=float(f.values[token, s - 1]),
        side_symbol=s,
        base_logprob=float(np.log(filtered.probs[token])),
    )


def red_green_step(
    d: TokenDistribution,
    stream: SideInfoStream,
    gamma: float,
    delta_rg: float,
    rng: np.random.Generator,
    prev_tokens=(),
    top_p: float = 1.0,
) -> WatermarkStep:
    """Green-list step: draw a keyed green assignment, shift green logits by
    delta_rg, sample; the score is the token's green indicator."""
    filtered = top_p_filter(d, top_p)
    greens = stream.draw_uniforms(prev_tokens, d.m) < gamma
    weights = np.where(greens, np.exp(delta_rg), 1.0)
    tilted = filtered.probs * weights
    cond = ConditionalLaw(tilted)
    token = _sample(cond.cond, rng)
    return WatermarkStep(
        token=token,
        conditional=cond,
        score=float(greens[token]),
        side_symbol=0,
        base_logprob=float(np.log(filtered.probs[token])),
    )


def gumbel_step(
    d: TokenDistribution,
    stream: SideInfoStream,
    rng: np.random.Generator,
    prev_tokens=(),
    top_p: float = 1.0,
) -> WatermarkStep:
    """Gumbel-max step: per-token keyed uniforms u, pick argmax u^(1/p) on the
    support; the recorded score -log(1 - u) feeds the exact detector."""
    filtered = top_p_filter(d, top_p)
    u = stream.draw_uniforms(prev_tokens, d.m)
    support = filtered.support()
    with np.errstate(divide="ignore"):
        keys = np.log(u[support]) / filtered.probs[support]
    token = int(support[int(np.argmax(keys))])
    cond = np.zeros(d.m)
    cond[token] = 1.0
    return WatermarkStep(
        token=token,
        conditional=ConditionalLaw(cond),
        score=float(-np.log1p(-u[token])),
        side_symbol=0,
        base_logprob=float(np.log(filtered.probs[token])),
    )


def maximal_coupling(p: np.ndarray, k: int) -> np.ndarray:
    """Maximal coupling of a k-class law with the uniform law on k classes.

    Diagonal cells take min(p_i, 1/k); surplus rows are matched to deficit
    columns in index order, which fixes a deterministic representative among
    the couplings attaining Pr(equal) = 1 - TV.
    """
    p = np.asarray(p, dtype=np.float64)
    joint = np.zeros((k, k))
    np.fill_diagonal(joint, np.minimum(p, 1.0 / k))
    surplus = np.clip(p - 1.0 / k, 0.0, None)
    deficit = np.clip(1.0 / k - p, 0.0, None)
    j = 0
    for i in np.flatnonzero(surplus > 0):
        remaining = surplus[i]
        while remaining > 1e-15 and j < k:
            if deficit[j] <= 1e-15:
                j += 1
                continue
            moved = min(remaining, deficit[j])
            joint[i, j] += moved
            deficit[j] -= moved
            remaining -= moved
        if remaining > 1e-12 and j >= k:
            raise RuntimeError("maximal coupling bookkeeping failed")
    return joint


def correlated_channel_step(
    d: TokenDistribution,
    stream: SideInfoStream,
    k: int,
    rng: np.random.Generator,
    prev_tokens=(),
    top_p: float = 1.0,
) -> WatermarkStep:
    """Correlated-channel step: assign tokens to k keyed classes, couple the
    class law maximally with a uniform symbol, and sample through the induced
    channel; the score indicates class/symbol agreement."""
    filtered = top_p_filter(d, top_p)
    draws = stream.draw_symbols(prev_tokens, d.m + 1)
    assignment = np.asarray(draws[: d.m], dtype=np.int64) - 1
    s_prime = draws[d.m] - 1
    class_mass = np.bincount(assignment, weights=filtered.probs, minlength=k)
    joint = maximal_coupling(class_mass, k)
    cond_class = joint[:, s_prime] * k
    cond = np.zeros(d.m)
    positive = filtered.probs > 0
    cls = assignment[positive]
    cond[positive] = filtered.probs[positive] * cond_class[cls] / class_mass[cls]
    law = ConditionalLaw(cond)
    token = _sample(law.cond, rng)
    return WatermarkStep(
        token=token,
        conditional=law,
        score=float(assignment[token] == s_prime),
        side_symbol=int(s_prime) + 1,
        base_logprob=float(np.log(filtered.probs[token])),
    )
