"""Item reweighting that restores a reference item distribution.

With uniform user selection and per-user weighted item selection, the
probability of drawing item ``i`` is::

    P(i | w) = 1/#U * sum_{u in U_i} w_i / S_u,        S_u = sum_{j in I_u} w_j

The weights of a few "active" items are tuned so that ``P_t1(. | w)`` matches
the reference ``P_t0`` in Kullback-Leibler divergence. The divergence is
invariant to a global rescaling of ``w``; the gauge is fixed by pinning the
inactive weights to 1.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Optional, Sequence, Union

import numpy as np

from .dataset import Snapshot
from .protocol import DegenerateSnapshotError

logger = logging.getLogger(__name__)

KL_FLOOR = 1e-12
WEIGHTS_SCHEMA = "reweval-weights/1"
TRACE_SCHEMA = "reweval-trace/1"


def _weights(snapshot: Snapshot, weights) -> np.ndarray:
    if weights is None:
        return np.ones(snapshot.n_item_ids)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (snapshot.n_item_ids,):
        raise ValueError(f"weights must have shape ({snapshot.n_item_ids},), got {w.shape}")
    if not np.all(w > 0):
        raise ValueError("weights must be positive")
    return w


def _align(p: np.ndarray, n: int) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.size >= n:
        return p
    return np.concatenate([p, np.zeros(n - p.size)])


def _segment_sums(values: np.ndarray, indptr: np.ndarray, nonempty: np.ndarray, size: int) -> np.ndarray:
    # contiguous segments; empty ones stay 0
    out = np.zeros(size)
    if nonempty.size:
        out[nonempty] = np.add.reduceat(values, indptr[nonempty])
    return out


def _held_items(snapshot: Snapshot) -> np.ndarray:
    return np.flatnonzero(snapshot.item_degrees)


def user_totals(snapshot: Snapshot, weights=None) -> np.ndarray:
    """``S_u = sum_{j in I_u} w_j`` for every user id (0 for empty profiles)."""
    w = _weights(snapshot, weights)
    return _segment_sums(w[snapshot.user_indices], snapshot.user_indptr, snapshot.eligible_users, snapshot.n_user_ids)


def _distribution(snapshot: Snapshot, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # item-major 1/S_u per edge, and P(i | w)
    totals = user_totals(snapshot, w)[snapshot.item_indices]
    # w_i / S_u per edge is exactly 1 for single-item profiles
    per_item = _segment_sums(w[snapshot.edge_items] / totals, snapshot.item_indptr, _held_items(snapshot),
                             snapshot.n_item_ids)
    return 1.0 / totals, per_item / snapshot.n_users


def item_distribution(snapshot: Snapshot, weights=None) -> np.ndarray:
    """Marginal probability of selecting each item, indexed by item id."""
    if snapshot.n_users == 0:
        raise DegenerateSnapshotError("no user with a non-empty profile")
    return _distribution(snapshot, _weights(snapshot, weights))[1]


def pair_distribution(snapshot: Snapshot, weights, i: int, k: int) -> float:
    """Probability that two independent item draws for the same user give ``i`` and ``k``."""
    if snapshot.n_users == 0:
        raise DegenerateSnapshotError("no user with a non-empty profile")
    w = _weights(snapshot, weights)
    a, b = snapshot.users_of(i), snapshot.users_of(k)
    if a.size > b.size:
        a, b = b, a
    pos = np.searchsorted(b, a)
    common = a[(pos < b.size) & (b[np.minimum(pos, b.size - 1)] == a)]
    if common.size == 0:
        return 0.0
    totals = user_totals(snapshot, w)[common]
    return float(w[i] * w[k] * np.sum(1.0 / totals**2) / snapshot.n_users)


def _kl(target: np.ndarray, current: np.ndarray, eps: float) -> tuple[float, bool]:
    support = target > 0
    q = current[support]
    floored = bool(np.any(q < eps))
    q = np.maximum(q, eps)
    p = target[support]
    return float(np.sum(p * np.log(p / q))), floored


def kl_divergence(target, s1: Snapshot, weights=None, eps: float = KL_FLOOR) -> float:
    """``sum_i P_t0(i) log(P_t0(i) / P_t1(i | w))`` over the support of ``target``.

    ``P_t1`` values below ``eps`` are floored to ``eps``.
    """
    current = item_distribution(s1, weights)
    n = max(current.size, np.size(target))
    value, _ = _kl(_align(target, n), _align(current, n), eps)
    return value


def kl_gradient(target, s1: Snapshot, weights, active: Sequence[int], eps: float = KL_FLOOR) -> np.ndarray:
    """Partial derivatives of :func:`kl_divergence` w.r.t. the weights of ``active`` items.

    Uses ``dD/dw_k = sum_i P_t0(i) / (w_k P_t1(i)) * (P_t1(i, k) - [i = k] P_t1(k))``.
    The per-user totals and the ratios ``P_t0 / P_t1`` are computed once; each
    coordinate then walks every item's holder list once, testing membership
    in ``U_k`` against a dense mask. The cost is ``O(n_edges)`` per
    coordinate.
    """
    if s1.n_users == 0:
        raise DegenerateSnapshotError("no user with a non-empty profile")
    w = _weights(s1, weights)
    active = np.asarray(active, dtype=np.int64)
    inv, current = _distribution(s1, w)
    p0 = _align(target, s1.n_item_ids)[: s1.n_item_ids]
    ratio = np.zeros(s1.n_item_ids)
    support = p0 > 0
    ratio[support] = p0[support] / np.maximum(current[support], eps)

    holders = s1.item_indices  # item-major edge -> user
    # edge (i, u) -> r_i w_i / S_u^2, summed over u in U_i & U_k below
    edge_terms = (ratio * w)[s1.edge_items] * inv * inv
    n_users = s1.n_users
    mask = np.zeros(s1.n_user_ids, dtype=bool)
    grad = np.empty(active.size)
    for c, k in enumerate(active.tolist()):
        members = s1.users_of(k)
        mask[members] = True
        cross = float(np.dot(edge_terms, mask[holders])) / n_users
        mask[members] = False
        grad[c] = cross - ratio[k] * current[k] / w[k]
    return grad


def select_active_items(p_t0, p_t1, p: Optional[int] = None) -> list[int]:
    """Items with the ``p`` largest ``|P_t0(i) - P_t1(i)|`` (all nonzero ones if ``p`` is None).

    Ties are broken by ascending item id; items with zero deviation are never
    selected, so the result may be shorter than ``p``.
    """
    if p is not None and p < 1:
        raise ValueError("p must be at least 1")
    n = max(np.size(p_t0), np.size(p_t1))
    dev = np.abs(_align(p_t0, n) - _align(p_t1, n))
    order = np.argsort(-dev, kind="stable")
    order = order[dev[order] > 0]
    if p is not None:
        order = order[:p]
    return order.tolist()


@dataclass
class OptimizerConfig:
    """Gradient descent on log-weights with Armijo backtracking.

    ``p=None`` optimizes every item whose probability moved. Trial steps use
    the Barzilai-Borwein length of the previous iteration.
    """

    p: Optional[int] = 20
    max_iters: int = 1000
    initial_step: float = 1.0
    armijo: float = 1e-4
    backtrack: float = 0.5
    min_step: float = 1e-14
    max_step: float = 1e6
    rel_tol: float = 1e-12
    grad_tol: float = 1e-10
    eps: float = KL_FLOOR

    def __post_init__(self):
        if self.p is not None and self.p < 1:
            raise ValueError("p must be at least 1 (or None for all items)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        for name in ("initial_step", "armijo", "min_step", "max_step", "rel_tol", "grad_tol", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")


@dataclass
class TraceRow:
    iter: int
    D: float
    grad_norm: float
    step: float


@dataclass
class OptimizationResult:
    weights: np.ndarray
    trace: list[TraceRow]
    active: list[int]
    converged: bool
    floored: bool = False
    message: str = ""
    target: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def initial_divergence(self) -> float:
        return self.trace[0].D

    @property
    def divergence(self) -> float:
        return self.trace[-1].D

    @property
    def iterations(self) -> int:
        return self.trace[-1].iter


def optimize_weights(target, s1: Snapshot, cfg: Optional[OptimizerConfig] = None) -> OptimizationResult:
    """Minimize ``kl_divergence(target, s1, w)`` over the weights of the top-``p`` items.

    Inactive weights stay exactly 1. When the active set covers every item
    held at ``s1`` the objective is scale-free and the log-weights are
    centered (geometric mean 1) instead. Non-convergence within
    ``max_iters`` returns the best iterate with ``converged=False``.
    """
    cfg = cfg or OptimizerConfig()
    if s1.n_users == 0:
        raise DegenerateSnapshotError("no user with a non-empty profile")
    n = s1.n_item_ids
    m = max(n, np.size(target))
    target = _align(target, m)
    target_main = target[:n]

    def objective(w):
        return _kl(target, _align(item_distribution(s1, w), m), cfg.eps)

    unweighted = item_distribution(s1)
    active = select_active_items(target_main, unweighted, cfg.p)
    active = [i for i in active if s1.item_degrees[i] > 0]
    w = np.ones(n)
    d0, floored = objective(w)
    if not active:
        return OptimizationResult(w, [TraceRow(0, d0, 0.0, 0.0)], [], True, floored, "nothing to optimize", target)

    idx = np.array(active, dtype=np.int64)
    held = np.flatnonzero(s1.item_degrees)
    free_gauge = np.isin(held, idx).all()

    def weights_of(theta):
        out = np.ones(n)
        out[idx] = np.exp(theta)
        return out

    def log_gradient(theta):
        wt = weights_of(theta)
        return wt[idx] * kl_gradient(target_main, s1, wt, idx, cfg.eps)

    theta = np.zeros(idx.size)
    value = d0
    g = log_gradient(theta)
    trace = [TraceRow(0, value, float(np.linalg.norm(g)), 0.0)]
    step = cfg.initial_step
    converged = False
    message = "max_iters reached"
    prev_theta = prev_g = None
    for it in range(1, cfg.max_iters + 1):
        gnorm2 = float(np.dot(g, g))
        if math.sqrt(gnorm2) <= cfg.grad_tol:
            converged, message = True, "gradient norm below tolerance"
            break
        if prev_theta is not None:
            s_vec, y_vec = theta - prev_theta, g - prev_g
            sy = float(np.dot(s_vec, y_vec))
            if sy > 0:
                step = float(np.dot(s_vec, s_vec)) / sy
        step = min(max(step, cfg.min_step), cfg.max_step)
        while True:
            cand = theta - step * g
            cand_value, cand_floored = objective(weights_of(cand))
            if cand_value <= value - cfg.armijo * step * gnorm2:
                break
            step *= cfg.backtrack
            if step < cfg.min_step:
                cand = None
                break
        if cand is None:
            message = "line search stalled"
            break
        prev_theta, prev_g = theta, g
        decrease = value - cand_value
        theta, value, floored = cand, cand_value, cand_floored
        g = log_gradient(theta)
        trace.append(TraceRow(it, value, float(np.linalg.norm(g)), step))
        if decrease <= cfg.rel_tol * max(trace[-2].D, np.finfo(float).tiny):
            converged, message = True, "relative decrease below tolerance"
            break

    if free_gauge:
        theta = theta - theta.mean()
    w = weights_of(theta)
    if not converged:
        logger.warning("weight optimization did not converge: %s", message)
    if floored:
        logger.warning("KL floor triggered: some reference items are (nearly) absent at t1")
    return OptimizationResult(w, trace, active, converged, floored, message, target)


def fit_weights(s0: Snapshot, s1: Snapshot, cfg: Optional[OptimizerConfig] = None) -> OptimizationResult:
    """Weights making ``s1`` mimic the unweighted item distribution of ``s0``."""
    return optimize_weights(item_distribution(s0), s1, cfg)


def save_weights(weights, path: Union[str, PathLike], item_ids: Optional[Sequence[str]] = None) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {WEIGHTS_SCHEMA}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("item_id", "weight"))
        for i, v in enumerate(np.asarray(weights, dtype=np.float64).tolist()):
            writer.writerow((item_ids[i] if item_ids is not None else i, repr(v)))


def load_weights(path: Union[str, PathLike], item_ids: Optional[Sequence[str]] = None) -> np.ndarray:
    """Read a weights CSV; ``item_ids`` maps external ids back to positions."""
    index = {str(v): k for k, v in enumerate(item_ids)} if item_ids is not None else None
    rows = []
    with open(path, newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if header != ["item_id", "weight"]:
        raise ValueError(f"unexpected weights header {header}")
    for item, value in reader:
        rows.append((index[item] if index is not None else int(item), float(value)))
    n = len(item_ids) if item_ids is not None else (max(r[0] for r in rows) + 1 if rows else 0)
    w = np.ones(n)
    for i, v in rows:
        w[i] = v
    return w


def save_trace(trace: Sequence[TraceRow], path: Union[str, PathLike]) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# {TRACE_SCHEMA}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("iter", "D", "grad_norm", "step"))
        for row in trace:
            writer.writerow((row.iter, repr(row.D), repr(row.grad_norm), repr(row.step)))


def load_trace(path: Union[str, PathLike]) -> list[TraceRow]:
    with open(path, newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    reader = csv.DictReader(lines)
    return [TraceRow(int(r["iter"]), float(r["D"]), float(r["grad_norm"]), float(r["step"])) for r in reader]
