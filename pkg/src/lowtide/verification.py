"""Reusable numerical verification experiments behind ``lowtide verify`` and
the acceptance suite."""

from __future__ import annotations

import numpy as np

from .scores import gumbel_family
from .sinkhorn import SinkhornConfig, solve_auto
from .theory import (
    exact_spike_coupling,
    sinkhorn_spike_gap,
    spike_gap_by_vertex_enumeration,
)


def gumbel_argmax_concentration(
    k_grid=(100, 1000, 10_000),
    seeds: int = 3,
    probs=(0.5, 0.3, 0.2),
    epsilon: float = 0.01,
    tol: float = 1e-5,
    seed: int = 0,
) -> list[float]:
    """Column-mass concentration of the entropic coupling on the per-column
    argmax of score(x, s) + log p(x), with raw gumbel scores.

    As the side alphabet grows the transport solution approaches the
    gumbel-max sampler, so the fraction tends to one; returns the mean
    fraction per k.
    """
    p = np.asarray(probs, dtype=np.float64)
    family = gumbel_family(normalize=False)
    out = []
    for k in k_grid:
        fractions = []
        for s in range(seeds):
            rng = np.random.Generator(np.random.PCG64(seed + 1000 * s + k))
            f = family.sample(rng, (p.size, int(k)))
            cfg = SinkhornConfig(epsilon=epsilon, tol=tol, max_iters=200_000)
            coupling, _ = solve_auto(p, int(k), -f, cfg)
            winners = np.argmax(f + np.log(p)[:, None], axis=0)
            mass = coupling.joint[winners, np.arange(int(k))].sum()
            fractions.append(float(mass))
        out.append(float(np.mean(fractions)))
    return out


def spike_gap_k_trend(
    family,
    lam: float,
    k_grid=(64, 512, 4096),
    n_seeds=(40_000, 120_000, 120_000),
    seed: int = 0,
    chunk: int = 512,
) -> list[tuple[float, float]]:
    """Mean and standard error of the exact two-token coupling gap per side
    alphabet size, computed over batches of fresh random score tables.

    The per-table gap shrinks the indexing bias like 1/k while its sampling
    noise shrinks like 1/sqrt(k), so resolving the increase across the grid
    needs seed counts far beyond the point estimate; everything is
    vectorized with a partial sort per table.
    """
    if isinstance(n_seeds, int):
        n_seeds = [n_seeds] * len(k_grid)
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for k, seeds in zip(k_grid, n_seeds):
        k = int(k)
        r = int(np.floor(lam * k + 1e-12))
        gaps = np.empty(seeds)
        done = 0
        while done < seeds:
            rows = min(chunk, seeds - done)
            delta = family.sample(rng, (rows, k)) - family.sample(rng, (rows, k))
            # gap = sum of the r largest deltas / k (+ boundary fill) - lam * mean
            part = np.partition(delta, k - r, axis=1) if r > 0 else delta
            top = part[:, k - r :].sum(axis=1) / k if r > 0 else np.zeros(rows)
            if r < k:
                boundary = (
                    np.partition(delta, k - r - 1, axis=1)[:, k - r - 1]
                    if r > 0
                    else delta.max(axis=1)
                )
                top += (lam - r / k) * boundary
            gaps[done : done + rows] = top - lam * delta.mean(axis=1)
            done += rows
        out.append((float(gaps.mean()), float(gaps.std(ddof=1) / np.sqrt(seeds))))
    return out


def spike_oracle_agreement(
    instances: int = 200,
    seed: int = 0,
    k_max: int = 4,
    epsilon: float = 0.01,
) -> tuple[float, float]:
    """Compare the greedy two-token coupling against the exhaustive vertex
    oracle and the entropic solver on random small instances.

    Returns (worst |greedy - vertex| gap difference, worst |sinkhorn - greedy|).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    worst_lp = 0.0
    worst_sink = 0.0
    for _ in range(instances):
        k = int(rng.integers(1, k_max + 1))
        lam = float(rng.uniform(0.5, 0.999))
        rows = rng.normal(size=(2, k))
        _, greedy_gap = exact_spike_coupling(lam, rows[0], rows[1])
        lp_gap = spike_gap_by_vertex_enumeration(lam, rows[0], rows[1])
        worst_lp = max(worst_lp, abs(greedy_gap - lp_gap))
        sink_gap = sinkhorn_spike_gap(lam, rows, epsilon=epsilon)
        worst_sink = max(worst_sink, abs(sink_gap - greedy_gap))
    return worst_lp, worst_sink
