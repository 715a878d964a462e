"""Recommendation algorithms behind a common score-and-rank interface.

Scores are dense ``float64`` arrays indexed by item id. Every recommender can
answer a batch of leave-one-out queries through :meth:`Recommender.hits`;
the collaborative filters override it to share work between the queries of
one user while producing bit-identical scores to the single-query path.
"""
from __future__ import annotations

import weakref
from collections.abc import Mapping
from typing import Iterable, Optional, Sequence

import numpy as np

from .dataset import ProfileView, Snapshot

DEFAULT_K = 5
COSINE_VARIANTS = ("paper", "textbook")


def top_k(scores, k: int, exclude: Iterable[int] = ()) -> list[int]:
    """The ``k`` best items by score, ties broken by ascending item id.

    ``scores`` is either a dense array indexed by item id or a mapping
    ``item -> score`` (missing items are not candidates). Items in
    ``exclude`` are never returned. Zero-scored items only fill the list when
    fewer than ``k`` items score positively.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if isinstance(scores, Mapping):
        ids = np.array(sorted(scores), dtype=np.int64)
        values = np.array([scores[i] for i in ids.tolist()], dtype=np.float64)
    else:
        values = np.asarray(scores, dtype=np.float64)
        ids = np.arange(values.size, dtype=np.int64)
    excluded = np.asarray(list(exclude), dtype=np.int64)
    if excluded.size:
        keep = ~np.isin(ids, excluded)
        ids, values = ids[keep], values[keep]
    order = np.argsort(-values, kind="stable")
    return ids[order[:k]].tolist()


def _rank_hit(scores: np.ndarray, target: int, excluded: np.ndarray, k: int) -> bool:
    # same ordering as top_k: higher score first, then lower id
    s = scores[target]
    better = scores > s
    better[:target] |= scores[:target] == s
    if excluded.size:
        better[excluded] = False
    return int(np.count_nonzero(better)) < k


class Recommender:
    """Base class. Subclasses implement :meth:`recommend`."""

    name = "recommender"

    def recommend(self, profile: ProfileView, snapshot: Snapshot, k: int = DEFAULT_K) -> list[int]:
        raise NotImplementedError

    def hits(self, snapshot: Snapshot, users, items, k: int = DEFAULT_K) -> np.ndarray:
        """Leave-one-out quality for each ``(users[n], items[n])`` pair.

        Entry ``n`` is True iff ``items[n]`` is among the recommendations for
        the profile of ``users[n]`` with ``items[n]`` removed.
        """
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        out = np.zeros(users.size, dtype=bool)
        for n, (u, i) in enumerate(zip(users.tolist(), items.tolist())):
            view = ProfileView(snapshot, u, i)
            out[n] = i in self.recommend(view, snapshot, k)
        return out

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"


class ConstantRecommender(Recommender):
    """Recommends the same fixed list to everybody.

    With ``exclude_profile`` the items already in the (leave-one-out) profile
    are skipped before truncating to ``k``.
    """

    def __init__(self, items: Sequence[int], name: str = "constant", exclude_profile: bool = False):
        items = [int(i) for i in items]
        if not items:
            raise ValueError("constant recommender needs at least one item")
        if len(set(items)) != len(items):
            raise ValueError("constant recommender items must be distinct")
        self.items = items
        self.name = name
        self.exclude_profile = exclude_profile

    def recommend(self, profile, snapshot, k=DEFAULT_K):
        if k < 1:
            raise ValueError("k must be positive")
        if self.exclude_profile:
            return [i for i in self.items if i not in profile][:k]
        return self.items[:k]

    def hits(self, snapshot, users, items, k=DEFAULT_K):
        if self.exclude_profile:
            return super().hits(snapshot, users, items, k)
        return np.isin(np.asarray(items, dtype=np.int64), self.items[:k])


def _cosine_norm(degrees, variant: str):
    """Per-side factor of the similarity denominator as a function of profile size."""
    d = np.asarray(degrees, dtype=np.float64)
    if variant == "paper":
        return np.sqrt(np.sqrt(d))  # sqrt(|B|) with |B| = sqrt(size)
    if variant == "textbook":
        return np.sqrt(d)
    raise ValueError(f"unknown cosine variant {variant!r}")


# dense per-degree co-occurrence tables are used below this many entries
DENSE_COSINE_LIMIT = 4_000_000
_cosine_tables: "weakref.WeakKeyDictionary[Snapshot, tuple]" = weakref.WeakKeyDictionary()


def _cosine_table(snapshot: Snapshot):
    """``counts[g, j, x] = #{v : deg(v) = sizes[g], j in I_v, x in I_v}`` or None if too large."""
    if snapshot in _cosine_tables:
        return _cosine_tables[snapshot]
    sizes = np.unique(snapshot.user_degrees[snapshot.eligible_users])
    n = snapshot.n_item_ids
    table = None
    if sizes.size * n * n <= DENSE_COSINE_LIMIT:
        counts = np.zeros((sizes.size, n, n))
        group = np.searchsorted(sizes, snapshot.user_degrees)
        m = snapshot.matrix
        for g in range(sizes.size):
            users = np.flatnonzero((group == g) & (snapshot.user_degrees > 0))
            sub = m[users]
            counts[g] = (sub.T @ sub).toarray()
        table = (sizes, counts, {int(d): g for g, d in enumerate(sizes.tolist())})
    _cosine_tables[snapshot] = table
    return table


def _cosine_from_table(snapshot, table, user, profile_items, variant):
    sizes, counts, group_of = table
    acc = counts[:, profile_items, :].sum(axis=1)
    # drop the profile owner's own contribution (v != u)
    own = snapshot.items_of(user)
    d_u = int(snapshot.user_degrees[user])
    if d_u:
        acc[group_of[d_u], own] -= float(profile_items.size)
    return (acc / _cosine_norm(sizes, variant)[:, None]).sum(axis=0) / _cosine_norm(profile_items.size, variant)


def cosine_cf_scores(profile: ProfileView, snapshot: Snapshot, variant: str = "paper") -> np.ndarray:
    """User-based CF: sum of neighbours' item vectors weighted by similarity.

    ``sim(u, v) = <B_u, B_v> / sqrt(|B_u| |B_v|)`` for ``variant="paper"``,
    ``<B_u, B_v> / (|B_u| |B_v|)`` for ``"textbook"``. ``B_u`` is the view's
    profile; other users' vectors come from the snapshot.

    Neighbours enter only through ``<B_u, B_v>``, so the sum is regrouped by
    neighbour profile size: integer co-occurrence counts per size class are
    added first and scaled once. Large item universes instead visit the
    co-neighbours of the profile directly.
    """
    n_items = snapshot.n_item_ids
    items = profile.items
    if items.size == 0:
        return np.zeros(n_items)
    table = _cosine_table(snapshot)
    if table is not None:
        return _cosine_from_table(snapshot, table, profile.user, items, variant)
    starts, ends = snapshot.item_indptr[items], snapshot.item_indptr[items + 1]
    neighbours = np.concatenate([snapshot.item_indices[a:b] for a, b in zip(starts.tolist(), ends.tolist())])
    dots = np.bincount(neighbours, minlength=snapshot.n_user_ids).astype(np.float64)
    dots[profile.user] = 0.0
    others = np.flatnonzero(dots)
    if others.size == 0:
        return np.zeros(n_items)
    weights = dots[others] / (_cosine_norm(items.size, variant) * _cosine_norm(snapshot.user_degrees[others], variant))
    return np.asarray(snapshot.matrix[others].T @ weights, dtype=np.float64)


def naive_cf_scores(profile: ProfileView, snapshot: Snapshot) -> np.ndarray:
    """Item co-occurrence CF: ``max_j #(U_i & U_j) / #U_j`` over profile items ``j``.

    Co-occurrence counts come from the snapshot; the only adjustment is the
    profile owner's own membership of the left-out item, which is dropped.
    """
    items = profile.items
    if items.size == 0:
        return np.zeros(snapshot.n_item_ids)
    counts = snapshot.cooccurrence[:, items].toarray()
    if profile.excluded_item is not None:
        counts[profile.excluded_item, :] -= 1.0
    ratios = counts / snapshot.item_degrees[items].astype(np.float64)
    return ratios.max(axis=1)


class _CFRecommender(Recommender):
    """Scores the profile, then ranks with the remaining profile items excluded."""

    def scores(self, profile: ProfileView, snapshot: Snapshot) -> np.ndarray:
        raise NotImplementedError

    def _leave_one_out_scores(self, snapshot: Snapshot, user: int) -> np.ndarray:
        """Row ``r`` holds the scores of ``u_{-I_u[r]}``."""
        items = snapshot.items_of(user)
        return np.vstack([self.scores(ProfileView(snapshot, user, i), snapshot) for i in items.tolist()])

    def recommend(self, profile, snapshot, k=DEFAULT_K):
        return top_k(self.scores(profile, snapshot), k, exclude=profile.items.tolist())

    def hits(self, snapshot, users, items, k=DEFAULT_K):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        out = np.zeros(users.size, dtype=bool)
        order = np.argsort(users, kind="stable")
        bounds = np.flatnonzero(np.diff(users[order])) + 1
        for group in np.split(order, bounds):
            if group.size == 0:
                continue
            u = int(users[group[0]])
            profile = snapshot.items_of(u)
            rows = self._leave_one_out_scores(snapshot, u)
            pos = np.searchsorted(profile, items[group])
            if np.any(pos >= profile.size) or np.any(profile[np.minimum(pos, profile.size - 1)] != items[group]):
                raise ValueError(f"pair item not in profile of user {u}")
            for n, r in zip(group.tolist(), pos.tolist()):
                excluded = np.delete(profile, r)
                out[n] = _rank_hit(rows[r], int(profile[r]), excluded, k)
        return out


class CosineCF(_CFRecommender):
    def __init__(self, variant: str = "paper", name: Optional[str] = None):
        if variant not in COSINE_VARIANTS:
            raise ValueError(f"unknown cosine variant {variant!r}")
        self.variant = variant
        self.name = name or ("cosine" if variant == "paper" else "cosine-textbook")

    def scores(self, profile, snapshot):
        return cosine_cf_scores(profile, snapshot, self.variant)

    def _leave_one_out_scores(self, snapshot, user):
        items = snapshot.items_of(user)
        d = items.size
        table = _cosine_table(snapshot)
        if d <= 1 or table is None:
            return super()._leave_one_out_scores(snapshot, user)
        sizes, counts, group_of = table
        full = counts[:, items, :].sum(axis=1)
        norms = _cosine_norm(sizes, self.variant)[:, None]
        scale = _cosine_norm(d - 1, self.variant)
        g_u = group_of[d]
        out = np.empty((d, snapshot.n_item_ids))
        for r, e in enumerate(items.tolist()):
            acc = full - counts[:, e, :]
            acc[g_u, items] -= float(d - 1)
            out[r] = (acc / norms).sum(axis=0) / scale
        return out


class NaiveCF(_CFRecommender):
    def __init__(self, name: str = "naive"):
        self.name = name

    def scores(self, profile, snapshot):
        return naive_cf_scores(profile, snapshot)

    def _leave_one_out_scores(self, snapshot, user):
        items = snapshot.items_of(user)
        d = items.size
        if d <= 1:
            return np.zeros((d, snapshot.n_item_ids))
        counts = snapshot.cooccurrence[:, items].toarray()
        degrees = snapshot.item_degrees[items].astype(np.float64)
        # cube[r, :, c]: ratio of profile column c when item r is left out
        cube = np.broadcast_to(counts, (d,) + counts.shape).copy()
        cube[np.arange(d), items, :] -= 1.0
        cube /= degrees
        cube[np.arange(d), :, np.arange(d)] = -np.inf
        return cube.max(axis=2)


def make_recommender(name: str, **params) -> Recommender:
    """Build a recommender from its configuration name.

    ``constant`` takes ``items`` (and optionally ``exclude_profile``),
    ``cosine`` takes ``variant``; ``naive`` takes nothing.
    """
    kind = name.lower()
    if kind == "constant":
        return ConstantRecommender(
            params["items"], name=params.get("label", "constant"), exclude_profile=bool(params.get("exclude_profile", False))
        )
    if kind in ("cosine", "cosine_cf"):
        return CosineCF(params.get("variant", "paper"), name=params.get("label"))
    if kind in ("naive", "naive_cf"):
        return NaiveCF(name=params.get("label", "naive"))
    raise ValueError(f"unknown recommender {name!r}")
