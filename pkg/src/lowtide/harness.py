"""Synthetic autoregressive sources, the generation/attack/detection loop,
and detection-distortion sweeps.

Everything is a pure function of its seeds: per-trial randomness is derived
from (master seed, trial index) so a sweep table does not depend on worker
count or execution order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import TokenDistribution
from .detect import (
    DetectionReport,
    cross_entropy,
    detect,
    detect_correlated_channel,
    detect_gumbel,
    detect_red_green,
)
from .scores import ScoreMatrix
from .schemes import (
    CorrelatedChannel,
    Gumbel,
    HeavyWater,
    RedGreen,
    SchemeConfig,
    SimplexWater,
    WatermarkStep,
    correlated_channel_step,
    gumbel_step,
    ot_watermark_step,
    red_green_step,
)
from .sideinfo import MASK64, SideInfoConfig, SideInfoStream, mix64


@dataclass(frozen=True)
class SpikeIID:
    """Per-step two-point law with mass lam at a fresh random token pair."""

    lam: float
    kind: str = "spike"

    def __post_init__(self):
        if not (0.5 <= self.lam < 1.0):
            raise ValueError(f"lam must be in [1/2, 1), got {self.lam!r}")


@dataclass(frozen=True)
class DirichletIID:
    """Fresh Dirichlet(alpha) draw each step, sharpened by 1/temperature."""

    alpha: float = 0.3
    temperature: float = 1.0
    kind: str = "dirichlet"

    def __post_init__(self):
        if self.alpha <= 0 or self.temperature <= 0:
            raise ValueError("alpha and temperature must be positive")


@dataclass(frozen=True)
class MarkovChain:
    """Order-1 chain over tokens; rows sharpened until most are low-entropy.

    ``low_entropy_fraction`` is the minimum share of transition rows whose
    min-entropy must be at most one bit before the chain is accepted.
    """

    low_entropy_fraction: float = 0.9
    kind: str = "markov"


SourceKind = SpikeIID | DirichletIID | MarkovChain


@dataclass(frozen=True)
class SourceConfig:
    kind: SourceKind
    m: int
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("vocabulary must have m >= 2")


class _SourceState:
    """Stateful per-sequence emitter of next-token laws."""

    def __init__(self, cfg: SourceConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.Generator(np.random.PCG64(seed))
        if isinstance(cfg.kind, MarkovChain):
            self.matrix = _sharpened_transition_matrix(cfg, cfg.seed)
        else:
            self.matrix = None

    def next_law(self, prev_token: int | None) -> TokenDistribution:
        kind = self.cfg.kind
        m = self.cfg.m
        if isinstance(kind, SpikeIID):
            i = int(self.rng.integers(m))
            j = int(self.rng.integers(m - 1))
            if j >= i:
                j += 1
            p = np.zeros(m)
            p[i] = kind.lam
            p[j] = 1.0 - kind.lam
            return TokenDistribution(p)
        if isinstance(kind, DirichletIID):
            p = self.rng.dirichlet(np.full(m, kind.alpha))
            if kind.temperature != 1.0:
                p = np.power(p, 1.0 / kind.temperature)
                p = p / p.sum()
            return TokenDistribution(p)
        row = 0 if prev_token is None else int(prev_token)
        return TokenDistribution(self.matrix[row])


def _sharpened_transition_matrix(cfg: SourceConfig, seed: int) -> np.ndarray:
    kind = cfg.kind
    rng = np.random.Generator(np.random.PCG64(seed ^ 0xA5A5))
    matrix = rng.dirichlet(np.ones(cfg.m), size=cfg.m)
    beta = 1.0
    for _ in range(60):
        sharpened = np.power(matrix, beta)
        sharpened /= sharpened.sum(axis=1, keepdims=True)
        low = (sharpened.max(axis=1) >= 0.5).mean()
        if low >= kind.low_entropy_fraction:
            return sharpened
        beta *= 1.25
    raise RuntimeError("failed to sharpen the transition matrix into the low-entropy band")


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    rate: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("substitute", "delete", "insert"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not (0.0 <= self.rate <= 1.0):
            raise ValueError("rate must be in [0, 1]")


def attack(tokens, cfg: AttackConfig, m: int) -> list[int]:
    """Token-level edit attack: substitute/delete at ``rate`` per position, or
    insert a uniform token after each position at ``rate``."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    tokens = [int(t) for t in tokens]
    out: list[int] = []
    for t in tokens:
        if cfg.kind == "substitute":
            out.append(int(rng.integers(m)) if rng.random() < cfg.rate else t)
        elif cfg.kind == "delete":
            if rng.random() >= cfg.rate:
                out.append(t)
        else:
            out.append(t)
            if rng.random() < cfg.rate:
                out.append(int(rng.integers(m)))
    return out


@dataclass
class GenerationResult:
    tokens: list[int]
    base_laws: list[np.ndarray]
    trace: list[WatermarkStep]
    side_cfg: SideInfoConfig


def _scheme_step(
    scheme: SchemeConfig,
    law: TokenDistribution,
    f: ScoreMatrix | None,
    stream: SideInfoStream,
    prev_tokens,
    rng: np.random.Generator,
) -> WatermarkStep:
    variant = scheme.variant
    if isinstance(variant, (SimplexWater, HeavyWater)):
        if f is None:
            raise ValueError("transport schemes need a score matrix")
        s = stream.next_symbol(prev_tokens)
        return ot_watermark_step(law, f, s, scheme, rng)
    if isinstance(variant, RedGreen):
        return red_green_step(
            law, stream, variant.gamma, variant.delta_rg, rng,
            prev_tokens=prev_tokens, top_p=scheme.top_p,
        )
    if isinstance(variant, Gumbel):
        return gumbel_step(law, stream, rng, prev_tokens=prev_tokens, top_p=scheme.top_p)
    return correlated_channel_step(
        law, stream, variant.k, rng, prev_tokens=prev_tokens, top_p=scheme.top_p
    )


def generate(
    source: SourceConfig,
    scheme: SchemeConfig,
    f: ScoreMatrix | None,
    side: SideInfoConfig,
    n: int,
    seed: int,
) -> GenerationResult:
    """Run n watermarked steps of the synthetic source; fully deterministic in
    (configs, seed). Returns tokens, per-step post-filter base laws, and the
    step trace."""
    if f is not None and f.m != source.m:
        raise ValueError(f"score matrix rows {f.m} != vocabulary {source.m}")
    state = _SourceState(source, seed=mix64(seed ^ source.seed))
    sampling_rng = np.random.Generator(np.random.PCG64(mix64(seed ^ 0xC0FFEE)))
    stream = SideInfoStream(side)
    tokens: list[int] = []
    base_laws: list[np.ndarray] = []
    trace: list[WatermarkStep] = []
    prev: int | None = None
    for _ in range(n):
        law = state.next_law(prev)
        step = _scheme_step(scheme, law, f, stream, tokens, sampling_rng)
        tokens.append(step.token)
        base_laws.append(_base_law(law, scheme))
        trace.append(step)
        prev = step.token
    return GenerationResult(tokens=tokens, base_laws=base_laws, trace=trace, side_cfg=side)


def _base_law(law: TokenDistribution, scheme: SchemeConfig) -> np.ndarray:
    from .schemes import top_p_filter

    return top_p_filter(law, scheme.top_p).probs


def detect_for_scheme(
    scheme: SchemeConfig,
    tokens,
    f: ScoreMatrix | None,
    side: SideInfoConfig,
    m: int,
    p_star: float = 1e-3,
) -> DetectionReport:
    """Dispatch to the detector that matches the sampler."""
    variant = scheme.variant
    if isinstance(variant, (SimplexWater, HeavyWater)):
        if f is None:
            raise ValueError("transport schemes need a score matrix")
        return detect(tokens, f, side, p_star)
    if isinstance(variant, RedGreen):
        return detect_red_green(tokens, side, m, variant.gamma, p_star)
    if isinstance(variant, Gumbel):
        return detect_gumbel(tokens, side, m, p_star)
    return detect_correlated_channel(tokens, side, m, variant.k, p_star)


@dataclass
class SweepRow:
    scheme: str
    delta: float
    ce_mean: float
    ce_se: float
    nlp_mean: float
    nlp_se: float
    wms_mean: float
    wms_se: float
    trials: int

    def csv_line(self) -> str:
        return (
            f"{self.scheme},{self.delta:g},{self.ce_mean:.6g},{self.ce_se:.6g},"
            f"{self.nlp_mean:.6g},{self.nlp_se:.6g},{self.wms_mean:.6g},"
            f"{self.wms_se:.6g},{self.trials}"
        )


CSV_HEADER = "scheme,delta,ce_mean,ce_se,nlp_mean,nlp_se,wms_mean,wms_se,trials"


def bootstrap_se(values, seed: int = 0, n_boot: int = 200, subsample: int = 150) -> float:
    """Standard error from the spread of subsampled means (150-of-200 style;
    the subsample is scaled down proportionally for smaller trial counts)."""
    values = np.asarray(values, dtype=np.float64)
    values = values[~np.isnan(values)]
    if values.size < 2:
        return 0.0
    size = min(values.size, max(2, int(round(subsample * values.size / 200))))
    rng = np.random.Generator(np.random.PCG64(seed))
    means = [
        float(np.mean(rng.choice(values, size=size, replace=False)))
        for _ in range(n_boot)
    ]
    return float(np.std(means, ddof=1))


def side_alphabet_for(scheme: SchemeConfig, f: ScoreMatrix | None, default: int) -> int:
    """Symbol alphabet a scheme's stream must use: the score columns for the
    transport schemes, the class count for the correlated channel."""
    if isinstance(scheme.variant, (SimplexWater, HeavyWater)):
        if f is None:
            raise ValueError("transport schemes need a score matrix")
        return f.k
    if isinstance(scheme.variant, CorrelatedChannel):
        return scheme.variant.k
    return default


def _trial_side(side: SideInfoConfig, trial: int) -> SideInfoConfig:
    return replace(side, key=mix64(side.key ^ (trial + 1)) & MASK64)


def run_trial(
    source: SourceConfig,
    scheme: SchemeConfig,
    f: ScoreMatrix | None,
    side: SideInfoConfig,
    n: int,
    master_seed: int,
    trial: int,
    p_star: float = 1e-3,
) -> tuple[float, float, float | None]:
    """(cross entropy, -log10 p, tokens-to-threshold) for one seeded trial."""
    trial_side = _trial_side(side, trial)
    seed = mix64(mix64(master_seed ^ 0x7A11) ^ trial)
    result = generate(source, scheme, f, trial_side, n, seed)
    report = detect_for_scheme(scheme, result.tokens, f, trial_side, source.m, p_star)
    ce = cross_entropy(result.tokens, result.base_laws)
    wms = report.tokens_to_threshold
    return ce, report.neg_log10_p, float(wms) if wms is not None else None


def sweep(
    cells,
    source: SourceConfig,
    side: SideInfoConfig,
    n: int,
    trials: int,
    master_seed: int = 0,
    p_star: float = 1e-3,
    workers: int = 1,
) -> list[SweepRow]:
    """Run every (label, scheme, score-matrix) cell for ``trials`` seeds and
    aggregate CE, -log10 p, and watermark size with bootstrap errors.

    ``cells`` holds (label, SchemeConfig, ScoreMatrix-or-None) triples; the
    side alphabet is adapted per cell to the score matrix when present.
    """
    rows = []
    for label, scheme, f in cells:
        cell_side = replace(side, k=side_alphabet_for(scheme, f, side.k))
        args = [(source, scheme, f, cell_side, n, master_seed, t, p_star) for t in range(trials)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_run_trial_star, args, chunksize=8))
        else:
            outcomes = [_run_trial_star(a) for a in args]
        ces = np.array([o[0] for o in outcomes])
        nlps = np.array([o[1] for o in outcomes])
        wms = np.array([o[2] if o[2] is not None else np.nan for o in outcomes])
        reached = wms[~np.isnan(wms)]
        rows.append(
            SweepRow(
                scheme=label,
                delta=scheme.tilt.delta,
                ce_mean=float(ces.mean()),
                ce_se=bootstrap_se(ces, seed=master_seed ^ 1),
                nlp_mean=float(nlps.mean()),
                nlp_se=bootstrap_se(nlps, seed=master_seed ^ 2),
                wms_mean=float(reached.mean()) if reached.size else float("nan"),
                wms_se=bootstrap_se(reached, seed=master_seed ^ 3),
                trials=trials,
            )
        )
    return rows


def _run_trial_star(args):
    return run_trial(*args)
