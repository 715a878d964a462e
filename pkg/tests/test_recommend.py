import numpy as np
import pytest
from conftest import random_snapshot
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import cosine_oracle, naive_oracle

from reweval.dataset import ProfileView, Snapshot
from reweval.recommend import (
    ConstantRecommender,
    CosineCF,
    NaiveCF,
    cosine_cf_scores,
    make_recommender,
    naive_cf_scores,
    top_k,
)


def _views(snapshot, rng):
    """Full-profile and leave-one-out views of a few random users."""
    users, items = snapshot.edges()
    for n in rng.choice(users.size, size=min(3, users.size), replace=False):
        u, i = int(users[n]), int(items[n])
        yield ProfileView(snapshot, u), None
        yield ProfileView(snapshot, u, i), i


class TestTopK:
    def test_basic(self):
        assert top_k({0: 3.0, 1: 2.0, 2: 1.0}, 2) == [0, 1]

    def test_ties_by_id(self):
        assert top_k({4: 2.0, 2: 2.0}, 1) == [2]

    def test_exclude(self):
        assert top_k({0: 3.0, 1: 2.0}, 2, exclude={0}) == [1]

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-3, 3), min_size=1, max_size=15), st.integers(1, 20), st.data())
    def test_matches_sort(self, raw, k, data):
        scores = np.array(raw, dtype=float)
        exclude = set(data.draw(st.lists(st.integers(0, len(raw) - 1), max_size=5)))
        expected = sorted((i for i in range(len(raw)) if i not in exclude), key=lambda i: (-scores[i], i))[:k]
        out = top_k(scores, k, exclude)
        assert out == expected
        assert len(set(out)) == len(out) <= k
        assert top_k(scores, k, exclude) == out


class TestConstant:
    def test_returns_list(self):
        s = Snapshot([0, 1], [0, 1], (2, 8))
        rec = ConstantRecommender([3, 4, 5, 6, 7])
        assert rec.recommend(ProfileView(s, 0), s, 5) == [3, 4, 5, 6, 7]
        assert rec.recommend(ProfileView(s, 1), s, 5) == [3, 4, 5, 6, 7]

    def test_short_list(self):
        s = Snapshot([0], [0], (1, 8))
        assert ConstantRecommender([1, 2, 3]).recommend(ProfileView(s, 0), s, 5) == [1, 2, 3]

    def test_exclude_profile_option(self):
        s = Snapshot([0, 0], [1, 2], (1, 8))
        rec = ConstantRecommender([1, 2, 3], exclude_profile=True)
        assert rec.recommend(ProfileView(s, 0, 1), s, 5) == [1, 3]

    def test_vectorized_hits(self, rng):
        s = random_snapshot(rng, 30, 10)
        rec = ConstantRecommender([1, 3, 5])
        users, items = s.edges()
        np.testing.assert_array_equal(rec.hits(s, users, items, 2), np.isin(items, [1, 3]))


class TestCosine:
    def test_hand_example(self):
        s = Snapshot([0, 1, 1], [1, 1, 2], (2, 3))
        scores = cosine_cf_scores(ProfileView(s, 0), s)
        np.testing.assert_allclose(scores, [0.0, 2**-0.25, 2**-0.25], rtol=1e-15)

    def test_empty_profile(self):
        s = Snapshot([0, 1], [1, 2], (2, 3))
        np.testing.assert_array_equal(cosine_cf_scores(ProfileView(s, 0, 1), s), np.zeros(3))

    @pytest.mark.parametrize("variant", ["paper", "textbook"])
    def test_oracle_small(self, rng, variant):
        for _ in range(20):
            s = random_snapshot(rng, 20, 10)
            for view, excluded in _views(s, rng):
                expected = cosine_oracle(s, view.user, excluded, variant)
                np.testing.assert_allclose(cosine_cf_scores(view, s, variant), expected, rtol=1e-12, atol=0)

    def test_sparse_fallback_matches(self, rng, monkeypatch):
        import reweval.recommend as mod

        monkeypatch.setattr(mod, "DENSE_COSINE_LIMIT", 0)
        for _ in range(10):
            s = random_snapshot(rng, 25, 10)
            for view, excluded in _views(s, rng):
                np.testing.assert_allclose(cosine_cf_scores(view, s), cosine_oracle(s, view.user, excluded), rtol=1e-12)


class TestNaive:
    def test_hand_example(self):
        # U_1 = {u, v}, U_2 = {v}
        s = Snapshot([0, 1, 1], [1, 1, 2], (2, 3))
        np.testing.assert_allclose(naive_cf_scores(ProfileView(s, 0), s), [0.0, 1.0, 0.5])

    def test_empty_profile(self):
        s = Snapshot([0], [1], (1, 3))
        np.testing.assert_array_equal(naive_cf_scores(ProfileView(s, 0, 1), s), np.zeros(3))

    def test_oracle_small(self, rng):
        for _ in range(20):
            s = random_snapshot(rng, 20, 10)
            for view, excluded in _views(s, rng):
                np.testing.assert_allclose(naive_cf_scores(view, s), naive_oracle(s, view.user, excluded), rtol=1e-12)


RECOMMENDERS = [CosineCF("paper"), CosineCF("textbook"), NaiveCF()]


class TestLeaveOneOut:
    @pytest.mark.parametrize("rec", RECOMMENDERS, ids=lambda r: r.name)
    def test_view_equals_rebuilt_snapshot(self, rng, rec):
        for _ in range(15):
            s = random_snapshot(rng, 40, 12, density=0.3)
            users, items = s.edges()
            for n in range(users.size):
                u, i = int(users[n]), int(items[n])
                rebuilt = s.without_edge(u, i)
                a = rec.scores(ProfileView(s, u, i), s)
                b = rec.scores(ProfileView(rebuilt, u), rebuilt)
                np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
                assert rec.recommend(ProfileView(s, u, i), s, 5) == rec.recommend(ProfileView(rebuilt, u), rebuilt, 5)

    @pytest.mark.parametrize("rec", RECOMMENDERS, ids=lambda r: r.name)
    def test_batched_hits_match_single_queries(self, rng, rec):
        for _ in range(10):
            s = random_snapshot(rng, 30, 10)
            users, items = s.edges()
            expected = [i in rec.recommend(ProfileView(s, u, i), s, 3) for u, i in zip(users.tolist(), items.tolist())]
            np.testing.assert_array_equal(rec.hits(s, users, items, 3), expected)

    def test_recommend_skips_profile(self, rng):
        s = random_snapshot(rng, 20, 10, density=0.5)
        rec = CosineCF()
        for u in s.eligible_users.tolist():
            view = ProfileView(s, u)
            assert not set(rec.recommend(view, s, 5)) & set(view)


class TestFactory:
    def test_kinds(self):
        assert isinstance(make_recommender("cosine", variant="textbook"), CosineCF)
        assert isinstance(make_recommender("naive"), NaiveCF)
        assert make_recommender("constant", items=[1, 2]).items == [1, 2]

    def test_unknown(self):
        with pytest.raises(ValueError):
            make_recommender("svd")
        with pytest.raises(ValueError):
            CosineCF("other")
