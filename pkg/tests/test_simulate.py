import configparser
import dataclasses

import numpy as np
import pytest

from reweval.dataset import InteractionLog, degree_histogram, snapshot_at
from reweval.protocol import evaluate_exhaustive
from reweval.recommend import ConstantRecommender
from reweval.seeding import derive_seed, generator
from reweval.simulate import (
    PRESETS,
    Campaign,
    SimulationConfig,
    campaign_items,
    campaigned_items,
    frequent_items,
    generate_initial,
    item_probability_series,
    load_preset,
    read_preset,
    run_campaign,
    run_timeline,
    simulation_from_parser,
)


def _mean_profile(snapshot):
    hist = degree_histogram(snapshot)
    return sum(k * v for k, v in hist.items()) / sum(hist.values())


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SimulationConfig(n_users=10, n_items=3, mean_profile_size=5.0)
        with pytest.raises(ValueError):
            SimulationConfig(n_users=10, n_items=10, horizon=100, campaigns=[Campaign(200)])
        with pytest.raises(ValueError):
            Campaign(10, acceptance=1.5)

    def test_campaigns_sorted(self):
        cfg = SimulationConfig(10, 10, campaigns=[Campaign(300), Campaign(100)])
        assert [c.time for c in cfg.campaigns] == [100, 300]

    @pytest.mark.parametrize("name", PRESETS)
    def test_presets_load(self, name):
        cfg = load_preset(name)
        assert len(cfg.campaigns) == 2
        assert [c.time for c in cfg.campaigns] == [330, 430]
        assert cfg.horizon == 500

    def test_seed_derivation(self):
        parser = read_preset("small")
        root = parser.getint("experiment", "seed")
        assert simulation_from_parser(parser).seed == derive_seed(root, "simulate")
        assert simulation_from_parser(parser, 7).seed == derive_seed(7, "simulate")

    def test_explicit_simulation_seed(self):
        parser = configparser.ConfigParser()
        parser.read_dict({"simulation": {"n_users": "5", "n_items": "5", "mean_profile_size": "1", "seed": "3"}})
        assert simulation_from_parser(parser).seed == 3


class TestInitial:
    def test_tiny_scale(self):
        cfg = SimulationConfig(n_users=2, n_items=2, mean_profile_size=1.0, horizon=10)
        log = generate_initial(cfg)
        assert len(log) == 2

    def test_deterministic(self):
        cfg = SimulationConfig(n_users=100, n_items=20, seed=5)
        assert generate_initial(cfg) == generate_initial(cfg)
        assert generate_initial(cfg) != generate_initial(dataclasses.replace(cfg, seed=6))

    def test_mean_profile_and_zipf(self):
        cfg = SimulationConfig(n_users=2000, n_items=40, popularity_exponent=1.0, seed=1)
        s = snapshot_at(generate_initial(cfg), np.inf)
        assert _mean_profile(s) == pytest.approx(5.33, rel=0.1)
        ranks = np.arange(1, 41)
        slope = np.polyfit(np.log(ranks), np.log(s.item_degrees), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.3)

    @pytest.mark.slow
    def test_viadeo_scale(self):
        cfg = load_preset("viadeo-like")
        log = run_timeline(cfg)
        assert _mean_profile(snapshot_at(log, cfg.burn_in_end - 1e-9)) == pytest.approx(5.33, rel=0.1)
        assert snapshot_at(log, cfg.horizon).n_edges == pytest.approx(117_376, rel=0.1)
        assert log.n_users == 18294 and log.n_items == 180


def _base(seed=0, n_users=300, n_items=15):
    cfg = SimulationConfig(n_users=n_users, n_items=n_items, horizon=100, seed=seed)
    return cfg, generate_initial(cfg)


class TestCampaign:
    def test_zero_acceptance(self):
        cfg, log = _base()
        out = run_campaign(log, Campaign(100, params={"items": [0, 1]}, acceptance=0.0), generator(1))
        np.testing.assert_array_equal(out.users, log.users)
        assert out.campaign_ids == ("t100",)

    def test_saturation(self):
        cfg, log = _base()
        out = run_campaign(log, Campaign(100, params={"items": [7]}, acceptance=1.0), generator(1))
        assert snapshot_at(out, np.inf).users_of(7).size == cfg.n_users

    def test_binomial_count(self):
        cfg, log = _base(n_users=2000)
        items = [3, 5, 7, 9, 11]
        before = snapshot_at(log, 100)
        # expected non-owned recommended items per targeted user
        free = np.mean([sum(i not in set(before.items_of(u).tolist()) for i in items) for u in range(cfg.n_users)])
        n = 0.5 * cfg.n_users * free
        out = run_campaign(log, Campaign(100, params={"items": items}, target_fraction=0.5, acceptance=0.3), generator(2))
        accepted = len(out) - len(log)
        assert abs(accepted - 0.3 * n) <= 3 * np.sqrt(n * 0.3 * 0.7) + 3

    def test_recommended_items_rise_others_fall(self):
        cfg, log = _base()
        items = [4, 5, 6]
        out = run_campaign(log, Campaign(100, params={"items": items}, acceptance=0.3), generator(3))
        before, after = item_probability_series(out, [99.9, 130])
        assert np.all(after[items] > before[items])
        others = np.setdiff1d(np.arange(cfg.n_items), items)
        assert np.all(after[others] <= before[others] + 1e-15)

    def test_rejects_past_campaign(self):
        cfg, log = _base()
        with pytest.raises(ValueError):
            run_campaign(log, Campaign(1.0), generator(1))


class TestTimeline:
    def test_deterministic_and_monotone(self):
        cfg = load_preset("small")
        a, b = run_timeline(cfg), run_timeline(cfg)
        assert a == b
        counts = [snapshot_at(a, t).n_edges for t in range(0, 501, 25)]
        assert counts == sorted(counts)

    def test_flat_without_campaigns(self):
        cfg = SimulationConfig(n_users=3000, n_items=20, organic_rate=5.0, horizon=500, seed=4)
        cfg = dataclasses.replace(cfg, campaigns=[Campaign(300, params={"items": [0]}, acceptance=0.0)])
        log = run_timeline(cfg)
        series = item_probability_series(log, [300, 400, 500])
        s = snapshot_at(log, 300)
        # per-item sampling noise of P(i) over the snapshot's users
        noise = 3 * np.sqrt(series[0] * (1 - series[0]) / s.n_users)
        assert np.all(np.abs(series[2] - series[0]) < noise)

    def test_two_jumps(self):
        cfg = load_preset("standard")
        log = run_timeline(cfg)
        g1 = campaign_items(log, 320, 480)
        times = np.arange(300, 501, 10.0)
        series = item_probability_series(log, times)[:, g1].sum(axis=1)
        jumps = np.diff(series)
        top = set(np.argsort(-jumps)[:2].tolist())
        assert {times[j] for j in top} == {330.0, 430.0}

    def test_series_examples(self):
        log = InteractionLog([0], [0], [1.0], n_users=1, n_items=2)
        np.testing.assert_array_equal(item_probability_series(log, [0.5, 2.0]), [[0, 0], [1, 0]])
        log = InteractionLog([0, 1], [0, 1], [0.0, 0.0])
        np.testing.assert_allclose(item_probability_series(log, [0.0]), [[0.5, 0.5]])

    def test_series_normalized(self):
        log = run_timeline(load_preset("small"))
        series = item_probability_series(log, [300, 400, 500])
        np.testing.assert_allclose(series.sum(axis=1), 1.0, atol=1e-10)

    def test_campaign_bias_signature(self):
        base = load_preset("standard")
        items = [5, 6, 7, 8, 9]
        cfg = dataclasses.replace(base, campaigns=[Campaign(330, params={"items": items}, target_fraction=0.6)])
        log = run_timeline(cfg)
        own = ConstantRecommender(items)
        disjoint = ConstantRecommender(frequent_items(snapshot_at(log, 300), 5, exclude=items))
        before, after = snapshot_at(log, 329), snapshot_at(log, 380)
        assert evaluate_exhaustive(own, after).score > evaluate_exhaustive(own, before).score
        assert evaluate_exhaustive(disjoint, after).score < evaluate_exhaustive(disjoint, before).score


class TestFixedLists:
    def test_selection(self):
        log = InteractionLog(
            [0, 1, 2, 0, 1, 2], [0, 0, 1, 2, 2, 3], [1, 1, 1, 5, 6, 7], campaign=[-1, -1, -1, 0, 0, 0], campaign_ids=["c"]
        )
        assert campaign_items(log, 4, 10, 2) == [2, 3]
        assert campaigned_items(log, 4, 10) == [2, 3]
        assert frequent_items(snapshot_at(log, 2), 5) == [0, 1]
        assert frequent_items(snapshot_at(log, 10), 5, exclude=[2]) == [0, 1, 3]
