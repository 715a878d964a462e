"""Command-line pipeline: simulate -> evaluate over time -> debias -> report.

Every command reads one INI experiment file (see ``presets/*.ini``) and writes
into the output directory::

    log.csv                         interaction log (simulate)
    scores.csv                      t,recommender,mode,p,score,ci_low,ci_high (evaluate)
    debias/weights_t<T>_p<P>.csv    item_id,weight (debias)
    debias/trace_t<T>_p<P>.csv      iter,D,grad_norm,step
    debias/dist_t<T>_p<P>.csv       item_id,p_t0,p_t1,p_t1_weighted
    debias/summary.csv              one line per (t, p) fit
    report.json                     everything above merged (report)
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence


from .dataset import InteractionLog, LogFormatError, load_log, snapshot_at
from .debias import OptimizerConfig, fit_weights, item_distribution, save_trace, save_weights
from .protocol import SamplingConfig, evaluate_exhaustive, evaluate_stochastic
from .recommend import ConstantRecommender, Recommender, make_recommender
from .seeding import derive_seed
from .simulate import (
    PRESETS,
    campaign_items,
    campaigned_items,
    frequent_items,
    preset_path,
    run_timeline,
    simulation_from_parser,
)

logger = logging.getLogger("reweval")

SCORES_SCHEMA = "reweval-scores/1"
DIST_SCHEMA = "reweval-distribution/1"
SUMMARY_SCHEMA = "reweval-debias-summary/1"
REPORT_SCHEMA = "reweval-report/1"
SCORES_HEADER = ("t", "recommender", "mode", "p", "score", "ci_low", "ci_high")
SUMMARY_HEADER = ("t", "p", "D_initial", "D_final", "iterations", "converged", "floored", "n_active")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def _floats(value: str) -> list[float]:
    return [float(v) for v in value.replace(";", ",").split(",") if v.strip()]


def _names(value: str) -> list[str]:
    return [v.strip() for v in value.replace(";", ",").split(",") if v.strip()]


def _p_values(value: str) -> list[Optional[int]]:
    out: list[Optional[int]] = []
    for v in _names(value):
        out.append(None if v.lower() == "all" else int(v))
    return out


def p_label(p: Optional[int]) -> str:
    return "all" if p is None else str(p)


def t_label(t: float) -> str:
    return f"{t:g}"


@dataclass
class ExperimentConfig:
    parser: configparser.ConfigParser
    seed: int
    out_dir: Path
    log_path: Path
    t0: float
    times: list[float]
    recommenders: list[str]
    estimator: str = "stochastic"
    n_draws: int = 20_000
    k: int = 5
    p_values: list[Optional[int]] = field(default_factory=lambda: [5, 10, 20, None])
    debias_times: list[float] = field(default_factory=list)
    optimizer: dict = field(default_factory=dict)

    @property
    def scores_path(self) -> Path:
        return self.out_dir / "scores.csv"

    @property
    def debias_dir(self) -> Path:
        return self.out_dir / "debias"

    @property
    def report_path(self) -> Path:
        return self.out_dir / "report.json"

    def optimizer_config(self, p: Optional[int]) -> OptimizerConfig:
        return OptimizerConfig(p=p, **self.optimizer)


_OPTIMIZER_KEYS = {
    "max_iters": int, "initial_step": float, "armijo": float, "backtrack": float,
    "min_step": float, "max_step": float, "rel_tol": float, "grad_tol": float, "eps": float,
}


def read_config(path: Path, seed: Optional[int] = None, out: Optional[Path] = None) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        with open(path) as f:
            parser.read_file(f)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        root_seed = seed if seed is not None else parser.getint("experiment", "seed", fallback=0)
        out_dir = Path(out) if out is not None else Path(parser.get("paths", "out_dir", fallback="reweval-out"))
        log_path = Path(parser.get("paths", "log", fallback="log.csv"))
        if not log_path.is_absolute():
            log_path = out_dir / log_path
        ev = parser["evaluation"] if parser.has_section("evaluation") else {}
        times = _floats(ev.get("times", "")) if ev else []
        t0 = float(ev.get("t0", times[0] if times else 0.0)) if ev else 0.0
        cfg = ExperimentConfig(
            parser=parser,
            seed=int(root_seed),
            out_dir=out_dir,
            log_path=log_path,
            t0=t0,
            times=times,
            recommenders=_names(ev.get("recommenders", "")) if ev else [],
            estimator=ev.get("estimator", "stochastic") if ev else "stochastic",
            n_draws=int(ev.get("n_draws", 20_000)) if ev else 20_000,
            k=int(ev.get("k", 5)) if ev else 5,
            p_values=_p_values(ev.get("p_values", "5, 10, 20, all")) if ev else [5, 10, 20, None],
        )
        if parser.has_section("debias") and parser.has_option("debias", "t1"):
            cfg.debias_times = _floats(parser.get("debias", "t1"))
        else:
            cfg.debias_times = list(cfg.times)
        if parser.has_section("optimizer"):
            for key, value in parser["optimizer"].items():
                if key not in _OPTIMIZER_KEYS:
                    raise ConfigError(f"unknown optimizer option {key!r}")
                cfg.optimizer[key] = _OPTIMIZER_KEYS[key](value)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if cfg.estimator not in ("stochastic", "exhaustive"):
        raise ConfigError(f"estimator must be 'stochastic' or 'exhaustive', got {cfg.estimator!r}")
    if cfg.times and cfg.t0 > min(cfg.times):
        raise ConfigError("t0 must not exceed the earliest evaluation time")
    outputs = [cfg.log_path, cfg.scores_path, cfg.report_path]
    if len({p.resolve() for p in outputs}) != len(outputs):
        raise ConfigError("log, scores and report paths must be distinct")
    return cfg


def build_recommender(cfg: ExperimentConfig, name: str, log: InteractionLog) -> Recommender:
    """Resolve ``[recommender:<name>]``; fixed lists are derived from the log."""
    section = f"recommender:{name}"
    if not cfg.parser.has_section(section):
        # bare algorithm names need no section
        return make_recommender(name, label=name)
    sec = cfg.parser[section]
    kind = sec.get("kind", name)
    n = sec.getint("n", cfg.k)
    if kind == "campaign_items":
        items = campaign_items(log, sec.getfloat("start", 0.0), sec.getfloat("end", float("inf")), n)
        return ConstantRecommender(items, name=name)
    if kind == "frequent_items":
        exclude: list[int] = []
        if "exclude_campaigned" in sec:
            start, end = _floats(sec["exclude_campaigned"])
            exclude = campaigned_items(log, start, end)
        items = frequent_items(snapshot_at(log, sec.getfloat("at", cfg.t0)), n, exclude)
        return ConstantRecommender(items, name=name)
    if kind == "constant":
        return ConstantRecommender([int(v) for v in _names(sec["items"])], name=name,
                                   exclude_profile=sec.getboolean("exclude_profile", False))
    params = {"label": name}
    if "variant" in sec:
        params["variant"] = sec["variant"]
    return make_recommender(kind, **params)


def _write_csv(path: Path, schema: str, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# {schema}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def _load(cfg: ExperimentConfig) -> InteractionLog:
    try:
        return load_log(cfg.log_path)
    except FileNotFoundError:
        raise ConfigError(f"log not found: {cfg.log_path} (run `reweval simulate` first)") from None
    except LogFormatError as exc:
        raise ConfigError(f"{cfg.log_path}: {exc}") from None


def cmd_simulate(cfg: ExperimentConfig) -> int:
    sim = simulation_from_parser(cfg.parser, cfg.seed)
    log = run_timeline(sim)
    cfg.log_path.parent.mkdir(parents=True, exist_ok=True)
    log.save(cfg.log_path)
    logger.info("wrote %d interactions to %s", len(log), cfg.log_path)
    return EXIT_OK


def _fits(cfg: ExperimentConfig, log: InteractionLog, times: Sequence[float]):
    s0 = snapshot_at(log, cfg.t0)
    for t in times:
        s1 = snapshot_at(log, t)
        for p in cfg.p_values:
            yield t, p, s0, s1, fit_weights(s0, s1, cfg.optimizer_config(p))


def cmd_debias(cfg: ExperimentConfig) -> int:
    log = _load(cfg)
    summary = []
    for t, p, s0, s1, result in _fits(cfg, log, cfg.debias_times):
        tag = f"t{t_label(t)}_p{p_label(p)}"
        cfg.debias_dir.mkdir(parents=True, exist_ok=True)
        save_weights(result.weights, cfg.debias_dir / f"weights_{tag}.csv", log.item_ids)
        save_trace(result.trace, cfg.debias_dir / f"trace_{tag}.csv")
        p0, p1 = item_distribution(s0), item_distribution(s1)
        pw = item_distribution(s1, result.weights)
        _write_csv(
            cfg.debias_dir / f"dist_{tag}.csv", DIST_SCHEMA, ("item_id", "p_t0", "p_t1", "p_t1_weighted"),
            [(log.item_ids[i], repr(float(p0[i])), repr(float(p1[i])), repr(float(pw[i]))) for i in range(log.n_items)],
        )
        summary.append((t_label(t), p_label(p), repr(result.initial_divergence), repr(result.divergence),
                        result.iterations, int(result.converged), int(result.floored), len(result.active)))
        logger.info("t=%s p=%s: D %.3g -> %.3g (%s)", t_label(t), p_label(p),
                    result.initial_divergence, result.divergence, result.message)
    _write_csv(cfg.debias_dir / "summary.csv", SUMMARY_SCHEMA, SUMMARY_HEADER, summary)
    return EXIT_OK


def _evaluate(cfg, rec, snapshot, weights, label) -> tuple[float, float, float]:
    if cfg.estimator == "exhaustive":
        res = evaluate_exhaustive(rec, snapshot, weights, cfg.k)
    else:
        sampling = SamplingConfig(cfg.n_draws, derive_seed(cfg.seed, label), weights)
        res = evaluate_stochastic(rec, snapshot, sampling, cfg.k)
    return res.score, res.ci_low, res.ci_high


def cmd_evaluate(cfg: ExperimentConfig) -> int:
    log = _load(cfg)
    if not cfg.times or not cfg.recommenders:
        raise ConfigError("[evaluation] needs times and recommenders")
    recs = [build_recommender(cfg, name, log) for name in cfg.recommenders]
    weights = {(t, p): r.weights for t, p, _, _, r in _fits(cfg, log, cfg.times)}
    rows = []
    for t in cfg.times:
        s = snapshot_at(log, t)
        for rec in recs:
            score, lo, hi = _evaluate(cfg, rec, s, None, f"evaluate/{t_label(t)}/{rec.name}/classical")
            rows.append((t_label(t), rec.name, "classical", "", repr(score), repr(lo), repr(hi)))
            for p in cfg.p_values:
                label = f"evaluate/{t_label(t)}/{rec.name}/weighted/{p_label(p)}"
                score, lo, hi = _evaluate(cfg, rec, s, weights[t, p], label)
                rows.append((t_label(t), rec.name, "weighted", p_label(p), repr(score), repr(lo), repr(hi)))
            logger.info("t=%s %s done", t_label(t), rec.name)
    _write_csv(cfg.scores_path, SCORES_SCHEMA, SCORES_HEADER, rows)
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig) -> int:
    report: dict = {"schema": REPORT_SCHEMA, "seed": cfg.seed, "t0": cfg.t0, "k": cfg.k, "estimator": cfg.estimator}
    if cfg.scores_path.exists():
        report["scores"] = [
            {**r, "t": float(r["t"]), "score": float(r["score"]), "ci_low": float(r["ci_low"]),
             "ci_high": float(r["ci_high"]), "p": r["p"] or None}
            for r in read_csv(cfg.scores_path)
        ]
    summary = cfg.debias_dir / "summary.csv"
    if summary.exists():
        report["debias"] = [
            {"t": float(r["t"]), "p": r["p"], "D_initial": float(r["D_initial"]), "D_final": float(r["D_final"]),
             "iterations": int(r["iterations"]), "converged": bool(int(r["converged"])),
             "floored": bool(int(r["floored"])), "n_active": int(r["n_active"])}
            for r in read_csv(summary)
        ]
    if "scores" not in report and "debias" not in report:
        raise ConfigError(f"nothing to report in {cfg.out_dir} (run evaluate or debias first)")
    cfg.report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(cfg.report_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "evaluate": cmd_evaluate, "debias": cmd_debias, "report": cmd_report}


def _u64(value: str) -> int:
    seed = int(value, 0)
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reweval", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="experiment INI file")
        src.add_argument("--preset", choices=PRESETS, help="use a shipped experiment file")
        p.add_argument("--seed", type=_u64, help="override [experiment] seed")
        p.add_argument("--out", type=Path, help="output directory (overrides [paths] out_dir)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    path = Path(str(preset_path(args.preset))) if args.preset else args.config
    if not path.is_file():
        print(f"reweval: config file not found: {path}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = read_config(path, args.seed, args.out)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"reweval: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"reweval: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
