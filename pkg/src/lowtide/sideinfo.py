"""Keyed, deterministic side-information streams shared by watermarker and
detector, plus the per-step randomness accounting of common watermarks.

All derived randomness flows through one fixed 64-bit mixer so that replay
is bit-exact. The mixer is the splitmix64 step: the state advances by the
golden-ratio increment 0x9E3779B97F4A7C15 and is finalized with the
xor-shift/multiply constants 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB
(shifts 30, 27, 31). Symbols in 1..k are produced by rejection sampling on
the 64-bit output, so the reduction carries no modulo bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

SCHEMES = ("fresh", "min", "sum", "prod", "markov1")


def mix64(x: int) -> int:
    """One splitmix64 step: advance by the golden gamma, then finalize."""
    x = (x + GOLDEN_GAMMA) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class SideInfoConfig:
    """key: shared 64-bit secret; scheme: seeding strategy; k: symbol alphabet.

    ``window`` is the context length h of the min/sum/prod hashes; markov1 is
    the sum hash with h = 1.
    """

    key: int
    k: int
    scheme: str = "fresh"
    window: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown side-info scheme {self.scheme!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.scheme in ("min", "sum", "prod") and self.window < 1:
            raise ValueError("window must be at least 1 for windowed schemes")
        object.__setattr__(self, "key", int(self.key) & MASK64)

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "key": str(self.key),
            "k": self.k,
            "window": self.window,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SideInfoConfig":
        return cls(
            key=int(obj["key"]),
            k=int(obj["k"]),
            scheme=obj.get("scheme", "fresh"),
            window=int(obj.get("window", 1)),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def raw_seed(cfg: SideInfoConfig, position: int, prev_tokens=()) -> int:
    """Pre-mixing seed for one step.

    Fresh combines the key with the position counter; the windowed hashes
    aggregate the last h token ids (zero-padded before position h) and
    multiply by the key, wrapping at 2**64.
    """
    if cfg.scheme == "fresh":
        return (cfg.key ^ mix64(position)) & MASK64
    h = 1 if cfg.scheme == "markov1" else cfg.window
    window = [0] * max(0, h - len(prev_tokens)) + [int(t) for t in prev_tokens[-h:]]
    if cfg.scheme == "min":
        agg = min(window)
    elif cfg.scheme == "prod":
        agg = 1
        for t in window:
            agg = (agg * t) & MASK64
    else:  # sum, markov1
        agg = sum(window) & MASK64
    return (agg * cfg.key) & MASK64


class SideInfoStream:
    """Sequential generator of side information; one call per token position.

    Replaying the same (config, token prefix) yields the same outputs, which
    is what lets the detector rebuild the generation-time stream.
    """

    def __init__(self, cfg: SideInfoConfig):
        self.config = cfg
        self.position = 0

    def reset(self) -> None:
        self.position = 0

    def _words(self, prev_tokens, count: int) -> list[int]:
        state = raw_seed(self.config, self.position, prev_tokens)
        self.position += 1
        out = []
        for _ in range(count):
            state = (state + GOLDEN_GAMMA) & MASK64
            z = state
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
            out.append(z ^ (z >> 31))
        return out

    def _words_unbounded(self, prev_tokens):
        state = raw_seed(self.config, self.position, prev_tokens)
        self.position += 1
        while True:
            state = (state + GOLDEN_GAMMA) & MASK64
            z = state
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
            yield z ^ (z >> 31)

    def next_symbol(self, prev_tokens=()) -> int:
        """Side symbol in 1..k for the current position; advances the counter."""
        return self.draw_symbols(prev_tokens, 1)[0]

    def draw_symbols(self, prev_tokens=(), count: int = 1) -> list[int]:
        """``count`` unbiased symbols in 1..k from one position's word stream."""
        k = self.config.k
        limit = (1 << 64) - ((1 << 64) % k)
        words = self._words_unbounded(prev_tokens)
        out = []
        for _ in range(count):
            w = next(words)
            while w >= limit:
                w = next(words)
            out.append((w % k) + 1)
        return out

    def draw_uniforms(self, prev_tokens=(), count: int = 1) -> np.ndarray:
        """``count`` doubles in [0, 1) (53-bit mantissas) for one position."""
        words = self._words(prev_tokens, count)
        return np.array([(w >> 11) * 2.0**-53 for w in words])


def bits_per_token(scheme: str, m: int | None = None, k: int | None = None,
                   float_precision: int = 32) -> float:
    """Random bits a watermark consumes per generated token.

    red-green needs one bit per vocabulary entry; gumbel and
    inverse-transform need a float per entry; the OT watermarks only index
    their side alphabet: log2(m) bits for simplex, log2(k) for heavy.
    """
    name = scheme.lower().replace("_", "-")
    if name in ("red-green", "redgreen"):
        return float(_require(m, "m"))
    if name in ("gumbel", "inverse-transform", "inversetransform"):
        return float(_require(m, "m")) * float_precision
    if name in ("simplex", "simplexwater", "simplex-water"):
        return float(np.log2(_require(m, "m")))
    if name in ("heavy", "heavywater", "heavy-water"):
        return float(np.log2(_require(k, "k")))
    raise ValueError(f"unknown watermark scheme {scheme!r}")


def _require(value, name):
    if value is None:
        raise ValueError(f"{name} is required for this scheme")
    return value
