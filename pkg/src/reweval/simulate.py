"""Synthetic interaction histories with organic growth and recommendation campaigns.

Organic events pick a user uniformly and an item from a Zipf-like popularity
law (item id 0 is the most popular), rejecting edges that already exist. A
campaign recommends ``k`` items to a random fraction of the users; each
recommended item the user does not hold yet is accepted independently with
probability ``acceptance``.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from os import PathLike
from typing import Optional, Sequence, Union

import numpy as np

from .dataset import InteractionLog, ProfileView, Snapshot, snapshot_at
from .debias import item_distribution
from .recommend import make_recommender
from .seeding import derive_seed, generator

PRESETS = ("small", "standard", "viadeo-like")


@dataclass
class Campaign:
    time: float
    recommender: str = "constant"
    params: dict = field(default_factory=dict)
    k: int = 5
    target_fraction: float = 1.0
    acceptance: float = 0.3
    duration: float = 10.0
    campaign_id: Optional[str] = None

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("campaign time must be non-negative")
        if not 0 < self.target_fraction <= 1:
            raise ValueError("target_fraction must lie in (0, 1]")
        if not 0 <= self.acceptance <= 1:
            raise ValueError("acceptance must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.campaign_id is None:
            self.campaign_id = f"t{self.time:g}"


@dataclass
class SimulationConfig:
    """Parameters of a synthetic timeline.

    ``mean_profile_size`` is the organic items/user reached at the first
    campaign (or at the horizon without campaigns). ``organic_rate`` is the
    number of organic events per day after that point; ``None`` keeps the
    burn-in rate.
    """

    n_users: int
    n_items: int
    popularity_exponent: float = 1.0
    mean_profile_size: float = 5.33
    organic_rate: Optional[float] = None
    horizon: float = 500.0
    seed: int = 0
    campaigns: list[Campaign] = field(default_factory=list)

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 1:
            raise ValueError("n_users and n_items must be positive")
        if not self.mean_profile_size > 0:
            raise ValueError("mean_profile_size must be positive")
        if self.mean_profile_size > self.n_items:
            raise ValueError(
                f"infeasible mean profile size {self.mean_profile_size} with only {self.n_items} items"
            )
        if self.organic_rate is not None and self.organic_rate < 0:
            raise ValueError("organic_rate must be non-negative")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        self.campaigns = sorted(self.campaigns, key=lambda c: c.time)
        if self.campaigns and not self.horizon > self.campaigns[-1].time:
            raise ValueError("horizon must exceed the last campaign time")
        ids = [c.campaign_id for c in self.campaigns]
        if len(set(ids)) != len(ids):
            raise ValueError("campaign ids must be unique")

    @property
    def burn_in_end(self) -> float:
        return self.campaigns[0].time if self.campaigns else self.horizon

    @property
    def burn_in_edges(self) -> int:
        return int(round(self.mean_profile_size * self.n_users))

    @property
    def effective_organic_rate(self) -> float:
        if self.organic_rate is not None:
            return self.organic_rate
        return self.burn_in_edges / self.burn_in_end

    def popularity(self) -> np.ndarray:
        ranks = np.arange(1, self.n_items + 1, dtype=np.float64)
        p = ranks ** -self.popularity_exponent
        return p / p.sum()


class _EdgeBuffer:
    """Growing edge list with O(1) duplicate checks."""

    def __init__(self, log: InteractionLog):
        self.log = log
        self.n_items = log.n_items
        self.keys = set((log.users * log.n_items + log.items).tolist())
        self.users: list[int] = []
        self.items: list[int] = []
        self.times: list[float] = []
        self.campaign: list[int] = []

    def add(self, u: int, i: int, t: float, c: int = -1) -> bool:
        key = u * self.n_items + i
        if key in self.keys:
            return False
        self.keys.add(key)
        self.users.append(u)
        self.items.append(i)
        self.times.append(t)
        self.campaign.append(c)
        return True

    def build(self, campaign_ids=None) -> InteractionLog:
        return self.log.append(self.users, self.items, self.times, self.campaign, campaign_ids)


def _organic(buf: _EdgeBuffer, n_events: int, start: float, end: float, cfg: SimulationConfig, rng) -> None:
    if n_events <= 0:
        return
    popularity = cfg.popularity()
    times = np.sort(rng.uniform(start, end, size=n_events))
    capacity = cfg.n_users * cfg.n_items
    placed = 0
    while placed < n_events:
        if len(buf.keys) >= capacity:
            break
        batch = max(64, 2 * (n_events - placed))
        users = rng.integers(0, cfg.n_users, size=batch)
        items = rng.choice(cfg.n_items, size=batch, p=popularity)
        for u, i in zip(users.tolist(), items.tolist()):
            if buf.add(u, i, float(times[placed])):
                placed += 1
                if placed == n_events:
                    break


def _empty_log(cfg: SimulationConfig) -> InteractionLog:
    return InteractionLog([], [], [], n_users=cfg.n_users, n_items=cfg.n_items)


def generate_initial(cfg: SimulationConfig, rng: Optional[np.random.Generator] = None) -> InteractionLog:
    """Organic burn-in edges on ``[0, first campaign)``, ``mean_profile_size`` per user."""
    rng = rng if rng is not None else generator(derive_seed(cfg.seed, "initial"))
    buf = _EdgeBuffer(_empty_log(cfg))
    _organic(buf, cfg.burn_in_edges, 0.0, cfg.burn_in_end, cfg, rng)
    return buf.build()


def organic_growth(log: InteractionLog, start: float, end: float, cfg: SimulationConfig, rng) -> InteractionLog:
    """Poisson number of organic events at ``cfg.effective_organic_rate`` on ``[start, end)``."""
    n_events = int(rng.poisson(cfg.effective_organic_rate * max(end - start, 0.0)))
    buf = _EdgeBuffer(log)
    _organic(buf, n_events, start, end, cfg, rng)
    return buf.build()


def run_campaign(
    log: InteractionLog,
    campaign: Campaign,
    rng: np.random.Generator,
    cfg: Optional[SimulationConfig] = None,
    until: Optional[float] = None,
) -> InteractionLog:
    """Apply one campaign to ``log``.

    Recommendations are computed on the snapshot at the campaign time.
    Accepted edges get timestamps spread over ``[time, time + duration)``.
    With ``cfg``, organic noise is added over ``[time, until)`` (``until``
    defaults to the end of the campaign).
    """
    if len(log) and campaign.time < log.timestamps[-1]:
        raise ValueError("campaign time precedes the end of the log")
    rec = make_recommender(campaign.recommender, **campaign.params)
    snapshot = snapshot_at(log, campaign.time)
    n_target = max(1, int(round(campaign.target_fraction * log.n_users)))
    targets = np.sort(rng.choice(log.n_users, size=n_target, replace=False))

    campaign_ids = list(log.campaign_ids)
    if campaign.campaign_id in campaign_ids:
        raise ValueError(f"campaign {campaign.campaign_id!r} already applied")
    cid = len(campaign_ids)
    campaign_ids.append(campaign.campaign_id)

    buf = _EdgeBuffer(log)
    for u in targets.tolist():
        view = ProfileView(snapshot, u)
        recommended = rec.recommend(view, snapshot, campaign.k)
        accept = rng.random(len(recommended)) < campaign.acceptance
        delays = rng.uniform(0.0, campaign.duration, size=len(recommended))
        for i, ok, dt in zip(recommended, accept.tolist(), delays.tolist()):
            if ok and i not in view:
                buf.add(u, int(i), campaign.time + dt, cid)
    out = buf.build(campaign_ids)
    if cfg is not None:
        end = campaign.time + campaign.duration if until is None else until
        out = organic_growth(out, campaign.time, end, cfg, rng)
    return out


def run_timeline(cfg: SimulationConfig) -> InteractionLog:
    """Burn-in, then every campaign with organic noise up to the next one or the horizon."""
    log = generate_initial(cfg)
    for n, c in enumerate(cfg.campaigns):
        until = cfg.campaigns[n + 1].time if n + 1 < len(cfg.campaigns) else cfg.horizon
        rng = generator(derive_seed(cfg.seed, f"campaign/{c.campaign_id}"))
        log = run_campaign(log, c, rng, cfg, until)
    return log


def item_probability_series(log: InteractionLog, times: Sequence[float], weights=None) -> np.ndarray:
    """``P_t(i)`` for every ``t`` in ``times`` (rows) and item (columns).

    Times with an empty snapshot yield a row of zeros.
    """
    times = list(times)
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be sorted")
    out = np.zeros((len(times), log.n_items))
    for r, t in enumerate(times):
        s = snapshot_at(log, t)
        if s.n_users:
            out[r] = item_distribution(s, weights)
    return out


def campaign_items(log: InteractionLog, start: float, end: float, n: int = 5) -> list[int]:
    """The ``n`` items with the most campaign edges timestamped in ``[start, end]``."""
    mask = (log.campaign >= 0) & (log.timestamps >= start) & (log.timestamps <= end)
    counts = np.bincount(log.items[mask], minlength=log.n_items)
    order = np.argsort(-counts, kind="stable")
    return [int(i) for i in order[:n] if counts[i] > 0]


def frequent_items(snapshot: Snapshot, n: int = 5, exclude: Sequence[int] = ()) -> list[int]:
    """The ``n`` most held items of ``snapshot``, skipping ``exclude``."""
    degrees = snapshot.item_degrees.astype(np.int64).copy()
    order = np.argsort(-degrees, kind="stable")
    excluded = set(int(i) for i in exclude)
    return [int(i) for i in order if int(i) not in excluded and degrees[i] > 0][:n]


def campaigned_items(log: InteractionLog, start: float, end: float) -> list[int]:
    """Every item that received a campaign edge in ``[start, end]``."""
    mask = (log.campaign >= 0) & (log.timestamps >= start) & (log.timestamps <= end)
    return sorted(set(log.items[mask].tolist()))


def _parse_list(value: str) -> list[str]:
    return [v.strip() for v in value.replace(";", ",").split(",") if v.strip()]


def simulation_from_parser(parser: configparser.ConfigParser, experiment_seed: Optional[int] = None) -> SimulationConfig:
    """Read ``[simulation]`` and every ``[campaign:<id>]`` section.

    The simulation seed is derived from the top-level ``[experiment] seed``
    (or ``experiment_seed`` when given); an explicit ``[simulation] seed``
    applies only when no override is passed.
    """
    if not parser.has_section("simulation"):
        raise ValueError("missing [simulation] section")
    sim = parser["simulation"]
    campaigns = []
    for name in parser.sections():
        if not name.startswith("campaign:"):
            continue
        sec = parser[name]
        params = {}
        if "items" in sec:
            params["items"] = [int(v) for v in _parse_list(sec["items"])]
        if "variant" in sec:
            params["variant"] = sec["variant"]
        campaigns.append(
            Campaign(
                time=sec.getfloat("time"),
                recommender=sec.get("recommender", "constant"),
                params=params,
                k=sec.getint("k", 5),
                target_fraction=sec.getfloat("target_fraction", 1.0),
                acceptance=sec.getfloat("acceptance", 0.3),
                duration=sec.getfloat("duration", 10.0),
                campaign_id=name.split(":", 1)[1],
            )
        )
    rate = sim.get("organic_rate", "").strip()
    if experiment_seed is None and "seed" in sim:
        seed = sim.getint("seed")
    else:
        root = experiment_seed if experiment_seed is not None else parser.getint("experiment", "seed", fallback=0)
        seed = derive_seed(root, "simulate")
    return SimulationConfig(
        n_users=sim.getint("n_users"),
        n_items=sim.getint("n_items"),
        popularity_exponent=sim.getfloat("popularity_exponent", 1.0),
        mean_profile_size=sim.getfloat("mean_profile_size", 5.33),
        organic_rate=float(rate) if rate else None,
        horizon=sim.getfloat("horizon", 500.0),
        seed=seed,
        campaigns=campaigns,
    )


def preset_path(name: str):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("reweval") / "presets" / f"{name}.ini"


def read_preset(name: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    parser.read_string(preset_path(name).read_text())
    return parser


def load_preset(name: str, experiment_seed: Optional[int] = None) -> SimulationConfig:
    """Simulation settings of a shipped preset (``small``, ``standard``, ``viadeo-like``)."""
    return simulation_from_parser(read_preset(name), experiment_seed)


def load_simulation_config(path: Union[str, PathLike]) -> SimulationConfig:
    parser = configparser.ConfigParser()
    with open(path) as f:
        parser.read_file(f)
    return simulation_from_parser(parser)
