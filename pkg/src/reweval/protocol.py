"""Offline evaluation: leave-one-out pair sampling and the expected hit rate.

A pair is drawn by picking a user uniformly among users with a non-empty
profile, then one of their items with probability ``w_i / sum_{j in I_u} w_j``
(uniform when no weights are given). The recommender is queried on the profile
without that item and scores 1 if it recommends it back.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .dataset import Snapshot
from .recommend import DEFAULT_K, Recommender
from .seeding import generator

Z_95 = 1.96
BLOCK_SIZE = 4096
_GRID = 2.0**64
_UINT64_MAX = np.iinfo(np.uint64).max


class DegenerateSnapshotError(ValueError):
    """The snapshot has no user with a non-empty profile."""


@dataclass
class SamplingConfig:
    n_draws: int = 20_000
    seed: int = 0
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.n_draws) < 1:
            raise ValueError("n_draws must be at least 1")
        self.n_draws = int(self.n_draws)


@dataclass
class EvaluationResult:
    """Estimated (or exact) leave-one-out hit rate of a recommender."""

    score: float
    ci_low: float
    ci_high: float
    n_draws: int
    hits: int
    seed: Optional[int]
    mode: str = "stochastic"

    @property
    def half_width(self) -> float:
        return max(self.score - self.ci_low, self.ci_high - self.score)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvaluationResult":
        return cls(**json.loads(text))


def wald_ci(p_hat: float, n: int, z: float = Z_95) -> tuple[float, float]:
    """Normal-approximation interval ``p +- z sqrt(p (1 - p) / n)`` clamped to [0, 1]."""
    if n < 1:
        raise ValueError("n must be positive")
    half = z * math.sqrt(max(p_hat * (1.0 - p_hat), 0.0) / n)
    return max(0.0, p_hat - half), min(1.0, p_hat + half)


def quality(recommendations, target: int) -> int:
    """1 if ``target`` is among ``recommendations``, else 0."""
    return int(target in recommendations)


class PairSampler:
    """Draws leave-one-out pairs from a snapshot.

    Weighted item draws compare a uniform 64-bit integer against per-user
    cumulative weights scaled to the ``2**64`` grid, so a given seed yields the
    same pairs on every platform.
    """

    def __init__(self, snapshot: Snapshot, weights=None):
        if snapshot.n_users == 0:
            raise DegenerateSnapshotError("no user with a non-empty profile")
        self.snapshot = snapshot
        self.weighted = weights is not None
        if self.weighted:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (snapshot.n_item_ids,):
                raise ValueError(f"weights must have shape ({snapshot.n_item_ids},)")
            if not np.all(w > 0):
                raise ValueError("weights must be positive")
            edge_w = w[snapshot.user_indices]
            thresholds = np.empty(snapshot.n_edges, dtype=np.uint64)
            indptr = snapshot.user_indptr
            for u in snapshot.eligible_users.tolist():
                a, b = indptr[u], indptr[u + 1]
                cum = np.cumsum(edge_w[a:b])
                frac = cum / cum[-1]
                row = np.full(b - a, _UINT64_MAX, dtype=np.uint64)
                inner = frac < 1.0
                row[inner] = (frac[inner] * _GRID).astype(np.uint64)
                thresholds[a:b] = row
            self._thresholds = thresholds

    def draw(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        s = self.snapshot
        users = s.eligible_users[rng.integers(0, s.eligible_users.size, size=size)]
        starts = s.user_indptr[users]
        if not self.weighted:
            offsets = rng.integers(0, s.user_degrees[users])
            return users, s.user_indices[starts + offsets]
        r = rng.integers(0, _UINT64_MAX, size=size, dtype=np.uint64, endpoint=True)
        ends = s.user_indptr[users + 1]
        picks = np.empty(size, dtype=np.int64)
        for n, (a, b, x) in enumerate(zip(starts.tolist(), ends.tolist(), r)):
            j = int(np.searchsorted(self._thresholds[a:b], x, side="right"))
            picks[n] = a + min(j, b - a - 1)
        return users, s.user_indices[picks]


def draw_pair(snapshot: Snapshot, weights, rng: np.random.Generator) -> tuple[int, int]:
    """One ``(user, item)`` pair; see :class:`PairSampler`."""
    users, items = PairSampler(snapshot, weights).draw(rng, 1)
    return int(users[0]), int(items[0])


def _block_hits(rec, snapshot, sampler, seed, block, size, k) -> int:
    users, items = sampler.draw(generator(seed, block), size)
    return int(np.count_nonzero(rec.hits(snapshot, users, items, k)))


def evaluate_stochastic(
    rec: Recommender,
    snapshot: Snapshot,
    cfg: SamplingConfig,
    k: int = DEFAULT_K,
    n_workers: int = 1,
) -> EvaluationResult:
    """Monte-Carlo estimate of the hit rate with a Wald interval.

    Draws are split in fixed blocks of :data:`BLOCK_SIZE`; block ``b`` uses the
    substream ``(seed, b)``, so the result does not depend on ``n_workers``.
    """
    sampler = PairSampler(snapshot, cfg.weights)
    n_blocks = -(-cfg.n_draws // BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, cfg.n_draws - b * BLOCK_SIZE) for b in range(n_blocks)]
    args = [(rec, snapshot, sampler, cfg.seed, b, sizes[b], k) for b in range(n_blocks)]
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            counts = list(pool.map(lambda a: _block_hits(*a), args))
    else:
        counts = [_block_hits(*a) for a in args]
    hits = sum(counts)
    score = hits / cfg.n_draws
    low, high = wald_ci(score, cfg.n_draws)
    return EvaluationResult(score, low, high, cfg.n_draws, hits, int(cfg.seed), "stochastic")


def pair_probabilities(snapshot: Snapshot, weights=None) -> np.ndarray:
    """``P(u) P(i | u, w)`` for every edge, in user-major edge order."""
    if snapshot.n_users == 0:
        raise DegenerateSnapshotError("no user with a non-empty profile")
    w = np.ones(snapshot.n_item_ids) if weights is None else np.asarray(weights, dtype=np.float64)
    edge_w = w[snapshot.user_indices]
    totals = np.bincount(snapshot.edge_users, weights=edge_w, minlength=snapshot.n_user_ids)
    return edge_w / totals[snapshot.edge_users] / snapshot.n_users


def evaluate_exhaustive(rec: Recommender, snapshot: Snapshot, weights=None, k: int = DEFAULT_K) -> EvaluationResult:
    """Exact expected hit rate, summing every edge with its selection probability."""
    prob = pair_probabilities(snapshot, weights)
    users, items = snapshot.edges()
    hit = rec.hits(snapshot, users, items, k)
    score = math.fsum(prob[hit].tolist())
    score = min(max(score, 0.0), 1.0)
    return EvaluationResult(score, score, score, snapshot.n_edges, int(np.count_nonzero(hit)), None, "exhaustive")
