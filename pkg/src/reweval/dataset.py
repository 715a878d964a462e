"""Interaction logs and immutable bipartite snapshots.

A log holds timestamped (user, item) edges. A :class:`Snapshot` freezes the
edges known at a given time and indexes them twice, by user (CSR layout) and
by item (CSC layout), so that both ``I_u`` and ``U_i`` are contiguous slices.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from functools import cached_property
from os import PathLike
from typing import IO, Iterable, Iterator, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

LOG_SCHEMA = "reweval-log/1"
SNAPSHOT_FORMAT = "reweval-snapshot/1"
LOG_HEADER = ("user_id", "item_id", "timestamp", "source", "campaign_id")

ORGANIC = "organic"
CAMPAIGN = "campaign"


class LogFormatError(ValueError):
    """Raised when a log file cannot be parsed or violates the log contract."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    timestamp: float
    source: str = ORGANIC
    campaign_id: Optional[str] = None

    def __post_init__(self):
        if not self.timestamp >= 0:
            raise ValueError(f"negative or NaN timestamp: {self.timestamp!r}")
        if self.source not in (ORGANIC, CAMPAIGN):
            raise ValueError(f"unknown source tag: {self.source!r}")
        if (self.source == CAMPAIGN) != (self.campaign_id is not None):
            raise ValueError("campaign_id must be set exactly for campaign interactions")


def _intern(values: Sequence[str]) -> tuple[list[str], dict[str, int]]:
    unique = set(values)
    try:
        ordered = sorted(unique, key=lambda v: (int(v), v))
    except ValueError:
        ordered = sorted(unique)
    return ordered, {v: k for k, v in enumerate(ordered)}


class InteractionLog:
    """Timestamp-sorted, duplicate-free sequence of user-item interactions.

    Users and items are dense integers ``0..n-1``. ``user_ids``/``item_ids``
    map a dense id back to its external string id.

    Parameters
    ----------
    users, items : array-like of int
        Edge endpoints, in insertion order.
    timestamps : array-like of float
        Days since epoch, non-negative.
    campaign : array-like of int, optional
        Index into ``campaign_ids`` for campaign edges, ``-1`` for organic ones.
    campaign_ids : sequence of str
        Names of the campaigns referenced by ``campaign``.
    n_users, n_items : int, optional
        Size of the user and item universes (default: max id + 1).
    user_ids, item_ids : sequence of str, optional
        External ids (default: the dense ids rendered as strings).

    Duplicate (user, item) pairs keep the earliest timestamp; ties in time keep
    insertion order.
    """

    def __init__(
        self,
        users,
        items,
        timestamps,
        campaign=None,
        campaign_ids: Sequence[str] = (),
        n_users: Optional[int] = None,
        n_items: Optional[int] = None,
        user_ids: Optional[Sequence[str]] = None,
        item_ids: Optional[Sequence[str]] = None,
    ):
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        timestamps = np.asarray(timestamps, dtype=np.float64).ravel()
        if campaign is None:
            campaign = np.full(users.shape, -1, dtype=np.int64)
        campaign = np.asarray(campaign, dtype=np.int64).ravel()
        if not (users.shape == items.shape == timestamps.shape == campaign.shape):
            raise ValueError("users, items, timestamps and campaign must have equal length")
        if timestamps.size and not np.all(timestamps >= 0):
            raise ValueError("timestamps must be non-negative")
        if users.size and (users.min() < 0 or items.min() < 0):
            raise ValueError("ids must be non-negative")
        campaign_ids = tuple(str(c) for c in campaign_ids)
        if campaign.size and (campaign.min() < -1 or campaign.max() >= len(campaign_ids)):
            raise ValueError("campaign index out of range")

        if n_users is None:
            n_users = int(users.max()) + 1 if users.size else 0
        if n_items is None:
            n_items = int(items.max()) + 1 if items.size else 0
        if users.size and (users.max() >= n_users or items.max() >= n_items):
            raise ValueError("interaction outside the user/item universe")

        order = np.argsort(timestamps, kind="stable")
        users, items, timestamps, campaign = users[order], items[order], timestamps[order], campaign[order]
        # keep the first occurrence in time order of every edge
        key = users * n_items + items
        _, first = np.unique(key, return_index=True)
        if first.size != key.size:
            keep = np.sort(first)
            users, items, timestamps, campaign = users[keep], items[keep], timestamps[keep], campaign[keep]

        for arr in (users, items, timestamps, campaign):
            arr.setflags(write=False)
        self.users = users
        self.items = items
        self.timestamps = timestamps
        self.campaign = campaign
        self.campaign_ids = campaign_ids
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.user_ids = tuple(user_ids) if user_ids is not None else tuple(str(u) for u in range(self.n_users))
        self.item_ids = tuple(item_ids) if item_ids is not None else tuple(str(i) for i in range(self.n_items))
        if len(self.user_ids) != self.n_users or len(self.item_ids) != self.n_items:
            raise ValueError("external id tables do not match the universe sizes")

    @classmethod
    def from_interactions(cls, interactions: Iterable[Interaction], n_users=None, n_items=None):
        rows = list(interactions)
        campaign_ids: list[str] = []
        index: dict[str, int] = {}
        campaign = []
        for r in rows:
            if r.source == CAMPAIGN:
                if r.campaign_id not in index:
                    index[r.campaign_id] = len(campaign_ids)
                    campaign_ids.append(r.campaign_id)
                campaign.append(index[r.campaign_id])
            else:
                campaign.append(-1)
        return cls(
            [r.user for r in rows],
            [r.item for r in rows],
            [r.timestamp for r in rows],
            campaign,
            campaign_ids,
            n_users=n_users,
            n_items=n_items,
        )

    def __len__(self) -> int:
        return int(self.users.size)

    def __iter__(self) -> Iterator[Interaction]:
        for u, i, t, c in zip(self.users, self.items, self.timestamps, self.campaign):
            if c < 0:
                yield Interaction(int(u), int(i), float(t))
            else:
                yield Interaction(int(u), int(i), float(t), CAMPAIGN, self.campaign_ids[c])

    def __eq__(self, other):
        if not isinstance(other, InteractionLog):
            return NotImplemented
        return (
            self.n_users == other.n_users
            and self.n_items == other.n_items
            and self.campaign_ids == other.campaign_ids
            and self.user_ids == other.user_ids
            and self.item_ids == other.item_ids
            and np.array_equal(self.users, other.users)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.campaign, other.campaign)
        )

    @property
    def n_edges(self) -> int:
        return len(self)

    @property
    def user_universe(self) -> range:
        return range(self.n_users)

    @property
    def item_universe(self) -> range:
        return range(self.n_items)

    def append(self, users, items, timestamps, campaign=None, campaign_ids=None) -> "InteractionLog":
        """Return a new log with the given edges added (existing edges win ties)."""
        users = np.asarray(users, dtype=np.int64).ravel()
        if campaign is None:
            campaign = np.full(users.shape, -1, dtype=np.int64)
        return InteractionLog(
            np.concatenate([self.users, users]),
            np.concatenate([self.items, np.asarray(items, dtype=np.int64).ravel()]),
            np.concatenate([self.timestamps, np.asarray(timestamps, dtype=np.float64).ravel()]),
            np.concatenate([self.campaign, np.asarray(campaign, dtype=np.int64).ravel()]),
            self.campaign_ids if campaign_ids is None else campaign_ids,
            n_users=self.n_users,
            n_items=self.n_items,
            user_ids=self.user_ids,
            item_ids=self.item_ids,
        )

    def to_csv(self, stream: IO[str]) -> None:
        """Write the log in the documented CSV schema (see :func:`load_log`)."""
        stream.write(f"# {LOG_SCHEMA}\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for u, i, t, c in zip(self.users.tolist(), self.items.tolist(), self.timestamps.tolist(), self.campaign.tolist()):
            if c < 0:
                writer.writerow((self.user_ids[u], self.item_ids[i], repr(t), ORGANIC, ""))
            else:
                writer.writerow((self.user_ids[u], self.item_ids[i], repr(t), CAMPAIGN, self.campaign_ids[c]))

    def save(self, path: Union[str, PathLike]) -> None:
        with open(path, "w", newline="") as f:
            self.to_csv(f)


def load_log(source: Union[IO, str, PathLike, bytes]) -> InteractionLog:
    """Parse an interaction log from CSV.

    The stream starts with optional ``#`` comment lines, then the header
    ``user_id,item_id,timestamp,source[,campaign_id]``. ``source`` is either
    ``organic`` or ``campaign``; campaign rows carry a campaign id in the fifth
    column. External ids are interned into dense integers (numeric order when
    every id is an integer, lexicographic otherwise).

    Raises
    ------
    LogFormatError
        On a malformed row (the message carries its line number), a negative
        timestamp or an unknown source tag.
    """
    if isinstance(source, (str, PathLike)):
        with open(source, "rb") as f:
            return load_log(f)
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    data = source.read()
    text = data.decode("utf-8") if isinstance(data, bytes) else data

    raw_users: list[str] = []
    raw_items: list[str] = []
    times: list[float] = []
    campaign: list[int] = []
    campaign_ids: list[str] = []
    campaign_index: dict[str, int] = {}
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = next(csv.reader([line]))
        fields = [f.strip() for f in fields]
        if not header_seen:
            if tuple(fields[:4]) != LOG_HEADER[:4]:
                raise LogFormatError(f"expected header {','.join(LOG_HEADER)}", lineno)
            header_seen = True
            continue
        if len(fields) not in (4, 5):
            raise LogFormatError(f"expected 4 or 5 fields, got {len(fields)}", lineno)
        user, item, ts, tag = fields[:4]
        cid = fields[4] if len(fields) == 5 else ""
        if not user or not item:
            raise LogFormatError("empty user or item id", lineno)
        try:
            t = float(ts)
        except ValueError:
            raise LogFormatError(f"bad timestamp {ts!r}", lineno) from None
        if not math.isfinite(t) or t < 0:
            raise LogFormatError(f"timestamp must be finite and non-negative, got {ts!r}", lineno)
        if tag == ORGANIC:
            campaign.append(-1)
        elif tag == CAMPAIGN:
            if not cid:
                raise LogFormatError("campaign row without campaign_id", lineno)
            if cid not in campaign_index:
                campaign_index[cid] = len(campaign_ids)
                campaign_ids.append(cid)
            campaign.append(campaign_index[cid])
        else:
            raise LogFormatError(f"unknown source tag {tag!r}", lineno)
        raw_users.append(user)
        raw_items.append(item)
        times.append(t)
    if not header_seen:
        raise LogFormatError("missing header row")

    user_ids, user_map = _intern(raw_users)
    item_ids, item_map = _intern(raw_items)
    return InteractionLog(
        [user_map[u] for u in raw_users],
        [item_map[i] for i in raw_items],
        times,
        campaign,
        campaign_ids,
        n_users=len(user_ids),
        n_items=len(item_ids),
        user_ids=user_ids,
        item_ids=item_ids,
    )


def _compress(major: np.ndarray, minor: np.ndarray, n_major: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((minor, major))
    indptr = np.zeros(n_major + 1, dtype=np.int64)
    np.cumsum(np.bincount(major, minlength=n_major), out=indptr[1:])
    indices = minor[order].astype(np.int64)
    return indptr, indices


class Snapshot:
    """Immutable bipartite user-item graph with dual sparse indexing.

    ``user_indptr``/``user_indices`` list the sorted items of every user and
    ``item_indptr``/``item_indices`` the sorted users of every item. Ids range
    over the universes of the originating log (``shape``); ``n_users`` and
    ``n_items`` count only the users and items carrying at least one edge.
    """

    def __init__(self, users, items, shape: tuple[int, int], time: float = math.inf):
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        n_user_ids, n_item_ids = int(shape[0]), int(shape[1])
        if users.size:
            if users.min() < 0 or users.max() >= n_user_ids or items.min() < 0 or items.max() >= n_item_ids:
                raise ValueError("edge outside the snapshot shape")
            key = users * n_item_ids + items
            if np.unique(key).size != key.size:
                raise ValueError("duplicate edges in snapshot")
        self.time = float(time)
        self.shape = (n_user_ids, n_item_ids)
        self.user_indptr, self.user_indices = _compress(users, items, n_user_ids)
        self.item_indptr, self.item_indices = _compress(items, users, n_item_ids)
        self.user_degrees = np.diff(self.user_indptr)
        self.item_degrees = np.diff(self.item_indptr)
        # user of every edge, aligned with user_indices
        self.edge_users = np.repeat(np.arange(n_user_ids, dtype=np.int64), self.user_degrees)
        # item of every edge, aligned with item_indices
        self.edge_items = np.repeat(np.arange(n_item_ids, dtype=np.int64), self.item_degrees)
        for arr in (
            self.user_indptr, self.user_indices, self.item_indptr, self.item_indices,
            self.user_degrees, self.item_degrees, self.edge_users, self.edge_items,
        ):
            arr.setflags(write=False)
        self.n_edges = int(users.size)
        self.eligible_users = np.flatnonzero(self.user_degrees)
        self.eligible_users.setflags(write=False)
        self.n_users = int(self.eligible_users.size)
        self.n_items = int(np.count_nonzero(self.item_degrees))

    def __repr__(self):
        return (
            f"Snapshot(time={self.time}, n_users={self.n_users}, n_items={self.n_items}, "
            f"n_edges={self.n_edges}, shape={self.shape})"
        )

    @property
    def n_user_ids(self) -> int:
        return self.shape[0]

    @property
    def n_item_ids(self) -> int:
        return self.shape[1]

    def items_of(self, user: int) -> np.ndarray:
        """Sorted items of ``user`` (``I_u``)."""
        return self.user_indices[self.user_indptr[user]:self.user_indptr[user + 1]]

    def users_of(self, item: int) -> np.ndarray:
        """Sorted holders of ``item`` (``U_i``)."""
        return self.item_indices[self.item_indptr[item]:self.item_indptr[item + 1]]

    def has_edge(self, user: int, item: int) -> bool:
        row = self.items_of(user)
        pos = np.searchsorted(row, item)
        return bool(pos < row.size and row[pos] == item)

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        """All edges as ``(users, items)`` in user-major order."""
        return self.edge_users, self.user_indices

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.edge_users.tolist(), self.user_indices.tolist()))

    def without_edge(self, user: int, item: int) -> "Snapshot":
        """A new snapshot with the edge ``(user, item)`` physically removed."""
        if not self.has_edge(user, item):
            raise KeyError(f"edge ({user}, {item}) not in snapshot")
        keep = ~((self.edge_users == user) & (self.user_indices == item))
        return Snapshot(self.edge_users[keep], self.user_indices[keep], self.shape, self.time)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(repr((self.time, self.shape)).encode())
        for arr in (self.user_indptr, self.user_indices, self.item_indptr, self.item_indices):
            h.update(arr.tobytes())
        return h.hexdigest()

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Binary user x item matrix (``B`` transposed), CSR."""
        data = np.ones(self.n_edges, dtype=np.float64)
        m = sp.csr_matrix((data, self.user_indices, self.user_indptr), shape=self.shape)
        m.sort_indices()
        return m

    @cached_property
    def cooccurrence(self) -> sp.csc_matrix:
        """Item x item counts ``#(U_i & U_j)``, CSC."""
        m = self.matrix
        return (m.T @ m).tocsc()


def snapshot_at(log: InteractionLog, t: float) -> Snapshot:
    """Snapshot of every interaction with ``timestamp <= t``."""
    if not t >= 0:
        raise ValueError(f"snapshot time must be non-negative, got {t!r}")
    end = int(np.searchsorted(log.timestamps, t, side="right"))
    return Snapshot(log.users[:end], log.items[:end], (log.n_users, log.n_items), t)


class ProfileView:
    """Read-only view over ``I_u``, optionally with one item left out (``u_{-i}``)."""

    def __init__(self, snapshot: Snapshot, user: int, excluded_item: Optional[int] = None):
        self.snapshot = snapshot
        self.user = int(user)
        self.excluded_item = None if excluded_item is None else int(excluded_item)
        full = snapshot.items_of(self.user)
        if self.excluded_item is None:
            self.items = full
        else:
            self.items = full[full != self.excluded_item]

    def __iter__(self) -> Iterator[int]:
        return iter(self.items.tolist())

    def __len__(self) -> int:
        return int(self.items.size)

    def __contains__(self, item) -> bool:
        pos = np.searchsorted(self.items, item)
        return bool(pos < self.items.size and self.items[pos] == item)

    def __repr__(self):
        return f"ProfileView(user={self.user}, excluded_item={self.excluded_item}, items={self.items.tolist()})"


def remove_item_view(snapshot: Snapshot, user: int, item: int) -> ProfileView:
    """Leave-one-out profile ``u_{-i}``; the snapshot itself is untouched."""
    if not snapshot.has_edge(user, item):
        raise ValueError(f"item {item} is not in the profile of user {user}")
    return ProfileView(snapshot, user, item)


def degree_histogram(snapshot: Snapshot) -> dict[int, int]:
    """Map profile size -> number of users with that many items (sizes >= 1)."""
    sizes, counts = np.unique(snapshot.user_degrees[snapshot.eligible_users], return_counts=True)
    return {int(s): int(c) for s, c in zip(sizes, counts)}


def save_snapshot(snapshot: Snapshot, path: Union[str, PathLike]) -> None:
    """Cache a snapshot as ``.npz``.

    Keys: ``format`` (the string ``reweval-snapshot/1``), ``time``, ``shape``
    (``[n_user_ids, n_item_ids]``), ``users`` and ``items`` (edge list in
    user-major order).
    """
    users, items = snapshot.edges()
    with open(path, "wb") as f:
        np.savez(
            f,
            format=np.array(SNAPSHOT_FORMAT),
            time=np.array(snapshot.time),
            shape=np.array(snapshot.shape, dtype=np.int64),
            users=users,
            items=items,
        )


def load_snapshot(path: Union[str, PathLike]) -> Snapshot:
    with np.load(path, allow_pickle=False) as data:
        fmt = str(data["format"])
        if fmt != SNAPSHOT_FORMAT:
            raise ValueError(f"unsupported snapshot format {fmt!r}")
        return Snapshot(data["users"], data["items"], tuple(int(x) for x in data["shape"]), float(data["time"]))
