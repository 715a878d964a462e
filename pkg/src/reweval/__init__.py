"""Offline evaluation of recommenders on evolving bipartite user-item graphs.

The hit-rate protocol leaves one item out of a user profile and asks whether
the recommender gives it back. Item reweighting keeps evaluations taken at
different times comparable when campaigns distort the item distribution.
"""
from .dataset import (
    CAMPAIGN,
    ORGANIC,
    Interaction,
    InteractionLog,
    LogFormatError,
    ProfileView,
    Snapshot,
    degree_histogram,
    load_log,
    load_snapshot,
    remove_item_view,
    save_snapshot,
    snapshot_at,
)
from .debias import (
    OptimizationResult,
    OptimizerConfig,
    TraceRow,
    fit_weights,
    item_distribution,
    kl_divergence,
    kl_gradient,
    load_trace,
    load_weights,
    optimize_weights,
    pair_distribution,
    save_trace,
    save_weights,
    select_active_items,
)
from .protocol import (
    DegenerateSnapshotError,
    EvaluationResult,
    PairSampler,
    SamplingConfig,
    draw_pair,
    evaluate_exhaustive,
    evaluate_stochastic,
    pair_probabilities,
    quality,
    wald_ci,
)
from .recommend import (
    ConstantRecommender,
    CosineCF,
    NaiveCF,
    Recommender,
    cosine_cf_scores,
    make_recommender,
    naive_cf_scores,
    top_k,
)
from .seeding import derive_seed, generator
from .simulate import (
    Campaign,
    SimulationConfig,
    campaign_items,
    frequent_items,
    generate_initial,
    item_probability_series,
    load_preset,
    load_simulation_config,
    run_campaign,
    run_timeline,
)

__version__ = "0.1.0"
