"""Dense brute-force reference implementations used by the tests."""
import numpy as np


def dense(snapshot):
    b = np.zeros(snapshot.shape)
    for u in range(snapshot.shape[0]):
        b[u, snapshot.items_of(u)] = 1.0
    return b


def cosine_oracle(snapshot, user, excluded=None, variant="paper"):
    b = dense(snapshot)
    bu = b[user].copy()
    if excluded is not None:
        bu[excluded] = 0.0
    scores = np.zeros(snapshot.shape[1])
    nu = np.linalg.norm(bu)
    for v in range(snapshot.shape[0]):
        if v == user or not b[v].any() or nu == 0:
            continue
        nv = np.linalg.norm(b[v])
        denom = np.sqrt(nu * nv) if variant == "paper" else nu * nv
        scores += (bu @ b[v]) / denom * b[v]
    return scores


def naive_oracle(snapshot, user, excluded=None):
    b = dense(snapshot).astype(bool)
    if excluded is not None:
        b[user, excluded] = False
    profile = np.flatnonzero(b[user])
    scores = np.zeros(snapshot.shape[1])
    for x in range(snapshot.shape[1]):
        best = 0.0
        for j in profile:
            holders_j = b[:, j]
            both = sum(1 for u in range(b.shape[0]) if b[u, x] and holders_j[u])
            best = max(best, both / holders_j.sum())
        scores[x] = best
    return scores


def conditional_oracle(snapshot, weights):
    """Rows ``P(i | u, w)`` for users with a non-empty profile."""
    b = dense(snapshot)
    b = b[b.any(axis=1)]
    bw = b * weights
    return bw / bw.sum(axis=1, keepdims=True)


def item_distribution_oracle(snapshot, weights):
    cond = conditional_oracle(snapshot, weights)
    return np.array([sum(cond[u, i] for u in range(cond.shape[0])) / cond.shape[0] for i in range(cond.shape[1])])


def pair_distribution_oracle(snapshot, weights, i, k):
    cond = conditional_oracle(snapshot, weights)
    return sum(cond[u, i] * cond[u, k] for u in range(cond.shape[0])) / cond.shape[0]
