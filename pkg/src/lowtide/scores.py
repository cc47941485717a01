"""Score-table construction: binary simplex code, q-ary simplex code, and
i.i.d. random score families, with per-token null moments and a binary
sidecar format shared by generation and detection.

Sidecar layout (little-endian): magic ``LWSM``, format version u8, kind tag
u8, m u64, k u64, kind payload, then m*k row-major float64 values. Kind
payloads: none for the binary simplex; q as u64 for the q-ary code; family
tag u8, two float64 shape parameters, normalize u8 and seed u64 for random
matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_MAGIC = b"LWSM"
_VERSION = 1

_FAMILY_NAMES = ("lognormal", "gamma", "gaussian", "gumbel")


@dataclass(frozen=True)
class ScoreFamily:
    """A continuous score distribution: family name plus shape parameters.

    Parameter meaning by family: lognormal (mu, sigma), gamma (shape, scale),
    gaussian (loc, scale), gumbel (loc, scale).
    """

    name: str
    a: float = 0.0
    b: float = 1.0
    normalize: bool = True

    def __post_init__(self):
        if self.name not in _FAMILY_NAMES:
            raise ValueError(f"unknown family {self.name!r}, expected one of {_FAMILY_NAMES}")
        if self.name == "lognormal" and self.b <= 0:
            raise ValueError("lognormal sigma must be positive")
        if self.name == "gamma" and (self.a <= 0 or self.b <= 0):
            raise ValueError("gamma shape and scale must be positive")
        if self.name in ("gaussian", "gumbel") and self.b <= 0:
            raise ValueError(f"{self.name} scale must be positive")

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.name == "lognormal":
            return rng.lognormal(mean=self.a, sigma=self.b, size=size)
        if self.name == "gamma":
            return rng.gamma(shape=self.a, scale=self.b, size=size)
        if self.name == "gaussian":
            return rng.normal(loc=self.a, scale=self.b, size=size)
        return rng.gumbel(loc=self.a, scale=self.b, size=size)

    def variance(self) -> float:
        """Population variance of one draw."""
        if self.name == "lognormal":
            s2 = self.b * self.b
            return float((np.exp(s2) - 1.0) * np.exp(2 * self.a + s2))
        if self.name == "gamma":
            return float(self.a * self.b * self.b)
        if self.name == "gaussian":
            return float(self.b * self.b)
        return float((np.pi * self.b) ** 2 / 6.0)


def lognormal_family(mu: float = 0.0, sigma: float = 1.0, normalize: bool = True) -> ScoreFamily:
    return ScoreFamily("lognormal", mu, sigma, normalize)


def gamma_family(shape: float = 1.0, scale: float = 1.0, normalize: bool = True) -> ScoreFamily:
    return ScoreFamily("gamma", shape, scale, normalize)


def gaussian_family(loc: float = 0.0, scale: float = 1.0, normalize: bool = True) -> ScoreFamily:
    return ScoreFamily("gaussian", loc, scale, normalize)


def gumbel_family(loc: float = 0.0, scale: float = 1.0, normalize: bool = True) -> ScoreFamily:
    return ScoreFamily("gumbel", loc, scale, normalize)


@dataclass(frozen=True)
class SimplexBinary:
    tag: str = "simplex-binary"


@dataclass(frozen=True)
class SimplexQary:
    q: int
    tag: str = "simplex-qary"


@dataclass(frozen=True)
class Random:
    family: ScoreFamily
    seed: int
    tag: str = "random"


class ScoreMatrix:
    """m x k score table with provenance and precomputed per-token null moments.

    Null moments are taken over a uniform side symbol: mu_x is the row mean
    and var_x the row variance of token x's scores.
    """

    def __init__(self, values: np.ndarray, kind):
        v = np.ascontiguousarray(values, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValueError("score matrix must be 2-d with at least one column")
        v.flags.writeable = False
        self.values = v
        self.kind = kind
        self.row_null_mean = v.mean(axis=1)
        self.row_null_var = (v * v).mean(axis=1) - self.row_null_mean**2
        np.clip(self.row_null_var, 0.0, None, out=self.row_null_var)
        self.row_null_mean.flags.writeable = False
        self.row_null_var.flags.writeable = False
        # Memoized couplings keyed by (support, marginal, solver params); the
        # solve is a pure function of those, so hits are bit-identical.
        self._solve_cache: dict = {}

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ScoreMatrix)
            and self.kind == other.kind
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )


def simplex_score(m: int) -> ScoreMatrix:
    """Binary simplex-code scores: entry (x, s) is the GF(2) dot product of the
    bit representations of x and s, for s in 1..m-1. Requires m a power of two.

    Every nonzero row has Hamming weight m/2 and all pairwise row distances
    equal m/2, which is the Plotkin-bound equality.
    """
    if m < 2 or (m & (m - 1)) != 0:
        raise ValueError(f"m must be a power of two >= 2, got {m}")
    x = np.arange(m, dtype=np.uint64)[:, None]
    s = np.arange(1, m, dtype=np.uint64)[None, :]
    anded = x & s
    # Parity of the bitwise AND = GF(2) dot product of the bit vectors.
    parity = np.zeros_like(anded)
    v = anded.copy()
    while v.any():
        parity ^= v & 1
        v >>= 1
    return ScoreMatrix(parity.astype(np.float64), SimplexBinary())


def _is_prime(q: int) -> bool:
    if q < 2:
        return False
    d = 2
    while d * d <= q:
        if q % d == 0:
            return False
        d += 1
    return True


def _digit_count(m: int, q: int) -> int:
    """Smallest d with q**d >= m."""
    d, power = 1, q
    while power < m:
        d += 1
        power *= q
    return d


def qary_simplex_score(m: int, q: int, truncate: bool = True) -> ScoreMatrix:
    """q-ary simplex-code scores over d = ceil(log_q m) digits.

    The full code has n = q**d rows (x in 0..n-1) and n-1 columns
    (s in 1..n-1), entries in 0..q-1 given by the mod-q digit dot product.
    With ``truncate`` the first m rows are returned so rows stay indexable
    by token id; the equal-pairwise-distance property holds only untruncated.
    """
    if not _is_prime(q) or q < 3:
        raise ValueError(f"q must be a prime >= 3, got {q}")
    if m < 2:
        raise ValueError("m must be at least 2")
    d = _digit_count(m, q)
    n = q**d
    ids = np.arange(n)
    digits = np.empty((n, d), dtype=np.int64)
    v = ids.copy()
    for pos in range(d):
        digits[:, pos] = v % q
        v //= q
    # values[x, s-1] = <digits(x), digits(s)> mod q
    values = (digits @ digits[1:].T) % q
    if truncate:
        values = values[:m]
    return ScoreMatrix(values.astype(np.float64), SimplexQary(q=q))


def random_score(m: int, k: int, family: ScoreFamily, seed: int) -> ScoreMatrix:
    """m x k i.i.d. draws from ``family``, deterministic in (family, seed, m, k).

    With ``family.normalize`` each row is affinely rescaled to zero mean and
    unit variance across its k entries.
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    rng = np.random.Generator(np.random.PCG64(seed))
    values = family.sample(rng, (m, k))
    if family.normalize:
        mean = values.mean(axis=1, keepdims=True)
        std = values.std(axis=1, keepdims=True)
        if np.any(std == 0):
            raise ValueError("cannot normalize a constant score row")
        values = (values - mean) / std
    return ScoreMatrix(values, Random(family=family, seed=int(seed)))


def null_moments(f: ScoreMatrix, x: int) -> tuple[float, float]:
    """(mean, variance) of token x's score under a uniform side symbol."""
    if not (0 <= x < f.m):
        raise ValueError(f"token id {x} out of range for m={f.m}")
    return float(f.row_null_mean[x]), float(f.row_null_var[x])


def min_pairwise_hamming(values: np.ndarray) -> int:
    """Minimum Hamming distance over all pairs of distinct rows."""
    v = np.asarray(values)
    m = v.shape[0]
    best = v.shape[1]
    for i in range(m - 1):
        d = (v[i + 1 :] != v[i]).sum(axis=1).min()
        best = min(best, int(d))
    return best


_KIND_TAGS = {"simplex-binary": 0, "simplex-qary": 1, "random": 2}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def save_score_matrix(f: ScoreMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BB", _VERSION, _KIND_TAGS[f.kind.tag]))
        fh.write(struct.pack("<QQ", f.m, f.k))
        if isinstance(f.kind, SimplexQary):
            fh.write(struct.pack("<Q", f.kind.q))
        elif isinstance(f.kind, Random):
            fam = f.kind.family
            fh.write(
                struct.pack(
                    "<BddBQ",
                    _FAMILY_NAMES.index(fam.name),
                    fam.a,
                    fam.b,
                    int(fam.normalize),
                    f.kind.seed,
                )
            )
        fh.write(np.ascontiguousarray(f.values).tobytes())


def load_score_matrix(path) -> ScoreMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not a score-matrix file (magic {magic!r})")
        version, tag = struct.unpack("<BB", fh.read(2))
        if version != _VERSION:
            raise ValueError(f"unsupported score-matrix format version {version}")
        m, k = struct.unpack("<QQ", fh.read(16))
        kind_name = _TAG_KINDS.get(tag)
        if kind_name is None:
            raise ValueError(f"unknown kind tag {tag}")
        if kind_name == "simplex-binary":
            kind = SimplexBinary()
        elif kind_name == "simplex-qary":
            (q,) = struct.unpack("<Q", fh.read(8))
            kind = SimplexQary(q=int(q))
        else:
            fam_tag, a, b, normalize, seed = struct.unpack("<BddBQ", fh.read(26))
            family = ScoreFamily(_FAMILY_NAMES[fam_tag], a, b, bool(normalize))
            kind = Random(family=family, seed=int(seed))
        payload = fh.read(8 * m * k)
        if len(payload) != 8 * m * k:
            raise ValueError("score-matrix file truncated")
        values = np.frombuffer(payload, dtype="<f8").reshape(m, k)
    return ScoreMatrix(values, kind)
