"""Detection: rebuild side information from tokens, accumulate scores, and
report calibrated statistics (z-score, p-value, tokens-to-detection).

The z-test standardizes the summed score by per-token null moments, which
are exact under the null because the side symbol is uniform and independent
of the token. The Gaussian CDF uses Cody's rational approximation of erfc
(absolute error below 1e-12), so every build of this artifact produces
identical p-values; p-values are floored at 1e-300 to stay finite in logs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from .scores import ScoreMatrix
from .sideinfo import SideInfoConfig, SideInfoStream

P_FLOOR = 1e-300


class ZeroNullVarianceError(ValueError):
    """Every observed token has zero null variance; z is undefined."""


class InfiniteCEError(ValueError):
    """A sampled token has zero base probability."""


# Cody's rational Chebyshev coefficients for erf/erfc (the classic CALERF
# arrangement): _ERF_A/_ERF_B cover |x| <= 0.46875, _ERFC_C/_ERFC_D cover
# 0.46875 < x <= 4, _ERFC_P/_ERFC_Q the asymptotic tail beyond 4.
_ERF_A = (
    3.16112374387056560e00,
    1.13864154151050156e02,
    3.77485237685302021e02,
    3.20937758913846947e03,
    1.85777706184603153e-1,
)
_ERF_B = (
    2.36012909523441209e01,
    2.44024637934444173e02,
    1.28261652607737228e03,
    2.84423683343917062e03,
)
_ERFC_C = (
    5.64188496988670089e-1,
    8.88314979438837594e00,
    6.61191906371416295e01,
    2.98635138197400131e02,
    8.81952221241769090e02,
    1.71204761263407058e03,
    2.05107837782607147e03,
    1.23033935479799725e03,
    2.15311535474403846e-8,
)
_ERFC_D = (
    1.57449261107098347e01,
    1.17693950891312499e02,
    5.37181101862009858e02,
    1.62138957456669019e03,
    3.29079923573345963e03,
    4.36261909014324716e03,
    3.43936767414372164e03,
    1.23033935480374942e03,
)
_ERFC_P = (
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
)
_ERFC_Q = (
    2.56852019228982242e00,
    1.87295284992346047e00,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
)

_SQRT_PI_INV = 5.6418958354775628695e-1


def _erfc(x: float) -> float:
    y = abs(x)
    if y <= 0.46875:
        z = y * y if y > 1e-300 else 0.0
        xnum = _ERF_A[4] * z
        xden = z
        for i in range(3):
            xnum = (xnum + _ERF_A[i]) * z
            xden = (xden + _ERF_B[i]) * z
        erf = x * (xnum + _ERF_A[3]) / (xden + _ERF_B[3])
        return 1.0 - erf
    if y <= 4.0:
        xnum = _ERFC_C[8] * y
        xden = y
        for i in range(7):
            xnum = (xnum + _ERFC_C[i]) * y
            xden = (xden + _ERFC_D[i]) * y
        value = math.exp(-y * y) * (xnum + _ERFC_C[7]) / (xden + _ERFC_D[7])
    else:
        z = 1.0 / (y * y)
        if y * y > 1416.0:
            value = 0.0
        else:
            xnum = _ERFC_P[5] * z
            xden = z
            for i in range(4):
                xnum = (xnum + _ERFC_P[i]) * z
                xden = (xden + _ERFC_Q[i]) * z
            poly = z * (xnum + _ERFC_P[4]) / (xden + _ERFC_Q[4])
            value = math.exp(-y * y) * (_SQRT_PI_INV - poly) / y
    return 2.0 - value if x < 0 else value


def normal_cdf(z: float) -> float:
    """Standard normal CDF via the rational erfc approximation."""
    return 0.5 * _erfc(-z / math.sqrt(2.0))


def normal_sf(z: float) -> float:
    """Upper tail 1 - Phi(z), accurate far into the tail."""
    return 0.5 * _erfc(z / math.sqrt(2.0))


@dataclass
class DetectionReport:
    n: int
    per_token_scores: np.ndarray
    statistic: float
    z: float
    p_value: float
    tokens_to_threshold: int | None = None

    @property
    def neg_log10_p(self) -> float:
        return float(-np.log10(self.p_value))

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "per_token_scores": [float(v) for v in self.per_token_scores],
            "statistic": self.statistic,
            "z": self.z,
            "p_value": self.p_value,
            "neg_log10_p": self.neg_log10_p,
            "tokens_to_threshold": self.tokens_to_threshold,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def z_test_report(scores: np.ndarray, means: np.ndarray, variances: np.ndarray,
                  p_star: float = 1e-3) -> DetectionReport:
    """z-test of summed scores against per-token null moments, with the first
    prefix whose p-value crosses p_star (no peeking past the first crossing)."""
    n = scores.size
    if n == 0:
        return DetectionReport(0, scores, 0.0, 0.0, 1.0, None)
    if np.all(variances <= 0):
        raise ZeroNullVarianceError("all observed tokens have zero null score variance")
    num = np.cumsum(scores - means)
    var = np.cumsum(variances)
    with np.errstate(divide="ignore", invalid="ignore"):
        z_prefix = np.where(var > 0, num / np.sqrt(var), 0.0)
    p_prefix = np.array([max(normal_sf(z), P_FLOOR) if var[i] > 0 else 1.0
                         for i, z in enumerate(z_prefix)])
    crossing = np.flatnonzero(p_prefix <= p_star)
    tokens_to_threshold = int(crossing[0]) + 1 if crossing.size else None
    return DetectionReport(
        n=n,
        per_token_scores=scores,
        statistic=float(scores.sum()),
        z=float(z_prefix[-1]),
        p_value=float(max(normal_sf(z_prefix[-1]), P_FLOOR)),
        tokens_to_threshold=tokens_to_threshold,
    )


def replay_symbols(tokens, cfg: SideInfoConfig) -> list[int]:
    """Side symbols the generator used, rebuilt from the observed tokens."""
    stream = SideInfoStream(cfg)
    return [stream.next_symbol(tokens[:t]) for t in range(len(tokens))]


def detect(tokens, f: ScoreMatrix, side_cfg: SideInfoConfig, p_star: float = 1e-3) -> DetectionReport:
    """Matrix-score detection: z-test of the summed score against the
    per-token null moments, plus the first prefix length whose p-value
    crosses p_star."""
    tokens = [int(t) for t in tokens]
    if any(not (0 <= t < f.m) for t in tokens):
        raise ValueError("token id out of score-matrix range")
    if side_cfg.k != f.k:
        raise ValueError(f"side alphabet {side_cfg.k} does not match score columns {f.k}")
    symbols = replay_symbols(tokens, side_cfg)
    idx = np.asarray(tokens, dtype=np.int64)
    scores = f.values[idx, np.asarray(symbols) - 1] if tokens else np.empty(0)
    return z_test_report(
        np.asarray(scores, dtype=np.float64),
        f.row_null_mean[idx] if tokens else np.empty(0),
        f.row_null_var[idx] if tokens else np.empty(0),
        p_star,
    )


def detect_red_green(tokens, side_cfg: SideInfoConfig, m: int, gamma: float,
                     p_star: float = 1e-3) -> DetectionReport:
    """Green-count z-test with null mean gamma per token."""
    tokens = [int(t) for t in tokens]
    stream = SideInfoStream(side_cfg)
    scores = np.empty(len(tokens))
    for t, token in enumerate(tokens):
        greens = stream.draw_uniforms(tokens[:t], m) < gamma
        scores[t] = float(greens[token])
    means = np.full(len(tokens), gamma)
    variances = np.full(len(tokens), gamma * (1.0 - gamma))
    return z_test_report(scores, means, variances, p_star)


def detect_correlated_channel(tokens, side_cfg: SideInfoConfig, m: int, k: int,
                              p_star: float = 1e-3) -> DetectionReport:
    """Class/symbol agreement z-test with null mean 1/k per token."""
    tokens = [int(t) for t in tokens]
    stream = SideInfoStream(side_cfg)
    scores = np.empty(len(tokens))
    for t, token in enumerate(tokens):
        draws = stream.draw_symbols(tokens[:t], m + 1)
        scores[t] = float(draws[token] == draws[m])
    means = np.full(len(tokens), 1.0 / k)
    variances = np.full(len(tokens), (1.0 / k) * (1.0 - 1.0 / k))
    return z_test_report(scores, means, variances, p_star)


def _gumbel_scores(tokens, side_cfg: SideInfoConfig, m: int) -> np.ndarray:
    stream = SideInfoStream(side_cfg)
    scores = np.empty(len(tokens))
    for t, token in enumerate(tokens):
        u = stream.draw_uniforms(tokens[:t], m)
        scores[t] = -np.log1p(-u[token])
    return scores


def gumbel_exact_p(tokens, side_cfg: SideInfoConfig, m: int) -> float:
    """Exact p-value of the summed exponential score: under the null the sum
    of n Exp(1) variables is Gamma(n, 1), so p is its upper tail."""
    tokens = [int(t) for t in tokens]
    if not tokens:
        return 1.0
    total = float(_gumbel_scores(tokens, side_cfg, m).sum())
    return float(max(gammaincc(len(tokens), total), P_FLOOR))


def detect_gumbel(tokens, side_cfg: SideInfoConfig, m: int, p_star: float = 1e-3) -> DetectionReport:
    """Exact Gamma-tail detection for the gumbel sampler, with prefix crossing."""
    tokens = [int(t) for t in tokens]
    scores = _gumbel_scores(tokens, side_cfg, m)
    n = scores.size
    if n == 0:
        return DetectionReport(0, scores, 0.0, 0.0, 1.0, None)
    sums = np.cumsum(scores)
    p_prefix = np.array(
        [max(gammaincc(i + 1, sums[i]), P_FLOOR) for i in range(n)]
    )
    crossing = np.flatnonzero(p_prefix <= p_star)
    total = float(sums[-1])
    return DetectionReport(
        n=n,
        per_token_scores=scores,
        statistic=total,
        z=float((total - n) / np.sqrt(n)),
        p_value=float(p_prefix[-1]),
        tokens_to_threshold=int(crossing[0]) + 1 if crossing.size else None,
    )


@dataclass
class WatermarkSize:
    mean_tokens: float
    fraction_missing: float
    n_reports: int


def watermark_size(reports, p_star: float = 1e-3) -> WatermarkSize:
    """Average tokens-to-detection over reports computed at the same p_star,
    plus the fraction that never crossed."""
    sizes = [r.tokens_to_threshold for r in reports]
    reached = [s for s in sizes if s is not None]
    mean = float(np.mean(reached)) if reached else float("nan")
    return WatermarkSize(
        mean_tokens=mean,
        fraction_missing=1.0 - len(reached) / len(sizes) if sizes else 0.0,
        n_reports=len(sizes),
    )


def cross_entropy(tokens, base_laws) -> float:
    """Average negative base log-likelihood of the sampled tokens (nats/token).

    ``base_laws`` holds the per-step pre-tilt, post-filter law (vectors or
    TokenDistributions). A zero-probability token means a scheme moved mass
    off-support, which is a bug worth raising over.
    """
    tokens = [int(t) for t in tokens]
    if len(tokens) != len(base_laws):
        raise ValueError("one base law per token is required")
    if not tokens:
        return 0.0
    total = 0.0
    for token, law in zip(tokens, base_laws):
        probs = np.asarray(getattr(law, "probs", law), dtype=np.float64)
        p = probs[token]
        if p <= 0:
            raise InfiniteCEError(f"token {token} has zero base probability")
        total -= float(np.log(p))
    return total / len(tokens)
