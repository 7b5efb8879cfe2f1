"""Experiment runner: configuration, CSV learning curves, summaries and the CLI.

A config is a plain ``key = value`` text file (``#`` starts a comment).  Every
run writes one CSV per (strategy or reward mode, seed) with header
``episode,window_success,phase`` and a ``summary.txt`` of key-value lines.
Window success is the number of successes among the trailing ``window``
episodes divided by ``window`` (fixed denominator, so early values are low);
the window size is recorded in every summary.
"""
from __future__ import annotations

import argparse
import configparser
import io
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import behaviours as B
from . import choreographer as C
from . import experts as X
from . import nncore as N
from . import oracles as O

KINDS = ("strategy_compare", "choreographer", "expert_check", "oracle_suite")
CSV_HEADER = "episode,window_success,phase"
SUMMARY_NAME = "summary.txt"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_THRESHOLD = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "strategy_compare"
    strategies: tuple[B.Strategy, ...] = B.TABLE_ORDER
    reward_modes: tuple[C.RewardMode, ...] = (C.RewardMode.DENSE, C.RewardMode.SPARSE)
    seeds: tuple[int, ...] = (0, 1, 2)
    episodes: int = 20_000
    choreographer_episodes: int = 4_000
    out_dir: Path = Path("runs")
    behaviour_lr: float = 3e-4
    choreographer_lr: float = 1e-3
    gamma: float = 0.99
    lam: float = 0.5
    entropy_coef: float = 0.01
    value_coef: float = 0.01
    window: int = 100
    patience: int = 1_000
    eval_episodes: int = 100
    threshold: float = 0.9
    choreographer_threshold: float = 0.95
    expert_seeds: int = 10_000
    expert_threshold: float = 0.99
    oracle_draws: int = 100
    behaviour_checkpoint: Path | None = None
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {', '.join(KINDS)}, got {self.kind!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {list(self.seeds)}")
        if not self.strategies:
            raise ConfigError("strategies must be non-empty")
        if not self.reward_modes:
            raise ConfigError("reward_modes must be non-empty")
        for name in ("episodes", "choreographer_episodes", "window", "patience",
                     "eval_episodes", "expert_seeds", "oracle_draws", "workers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("behaviour_lr", "choreographer_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("gamma", "lam"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.entropy_coef < 0 or self.value_coef < 0:
            raise ConfigError("entropy_coef and value_coef must be non-negative")
        for name in ("threshold", "choreographer_threshold", "expert_threshold"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1]")

    def bc_settings(self) -> B.BcSettings:
        return replace(B.BcSettings(), lr=self.behaviour_lr, window=self.window,
                       patience=self.patience)

    def strategy_settings(self) -> B.StrategySettings:
        return B.StrategySettings(bc=self.bc_settings(), eval_episodes=self.eval_episodes,
                                  success_threshold=self.threshold)

    def a2c_settings(self) -> C.A2cSettings:
        return C.A2cSettings(gamma=self.gamma, lam=self.lam, lr=self.choreographer_lr,
                             entropy_coef=self.entropy_coef, value_coef=self.value_coef,
                             window=self.window)


# ---- config parsing ------------------------------------------------------

def _split(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _int(value: str) -> int:
    # allow 20_000 and 2e4 style budgets, but only whole numbers
    x = float(value.replace("_", ""))
    if not x.is_integer():
        raise ValueError(f"not an integer: {value!r}")
    return int(x)


_CONVERTERS = {
    "kind": lambda v: v.strip().lower(),
    "strategies": lambda v: tuple(B.Strategy.parse(s) for s in _split(v)),
    "reward_modes": lambda v: tuple(C.RewardMode.parse(s) for s in _split(v)),
    "seeds": lambda v: tuple(_int(s) for s in _split(v)),
    "out_dir": Path,
    "behaviour_checkpoint": lambda v: Path(v) if v.strip() else None,
}
for _name, _f in ExperimentConfig.__dataclass_fields__.items():
    if _name not in _CONVERTERS:
        _CONVERTERS[_name] = _int if _f.type == "int" else float
_ALIASES = {"strategy": "strategies", "reward_mode": "reward_modes", "seed": "seeds",
            "lr": "behaviour_lr"}


def parse_config(text: str, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Build a config from key-value text; ``overrides`` (already strings) win."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    raw = dict(parser["experiment"])
    raw.update(overrides or {})
    values = {}
    for key, value in raw.items():
        key = _ALIASES.get(key, key)
        if key not in _CONVERTERS:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = _CONVERTERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return ExperimentConfig(**values)


def load_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, overrides)


# ---- curves and summaries ------------------------------------------------

def episodes_to_threshold(curve, threshold: float) -> int | None:
    """First episode index whose window success reaches ``threshold``, else None."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    for p in curve:
        if p.window_success >= threshold:
            return p.episode
    return None


def format_curve(curve) -> str:
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    last = -1
    for p in curve:
        if p.episode <= last:
            raise ValueError(f"episode indices must increase, got {p.episode} after {last}")
        if not 0.0 <= p.window_success <= 1.0:
            raise ValueError(f"window success out of range: {p.window_success}")
        last = p.episode
        out.write(f"{p.episode},{p.window_success!r},{p.phase}\n")
    return out.getvalue()


def write_curve(path: Path, curve) -> None:
    path.write_bytes(format_curve(curve).encode("utf-8"))


def read_curve(path) -> list[B.CurvePoint]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing header {CSV_HEADER!r}")
    curve = []
    for line in lines[1:]:
        episode, rate, phase = line.split(",")
        curve.append(B.CurvePoint(int(episode), float(rate), phase))
    return curve


@dataclass
class RunResult:
    label: str
    seed: int
    episodes: int
    episodes_to_threshold: int | None
    completed: bool
    csv: str
    error: str = ""


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def format_summary(config: ExperimentConfig, results: list[RunResult],
                   extra: dict[str, object] | None = None) -> str:
    lines = [
        f"kind = {config.kind}",
        f"window = {config.window}",
        "window_definition = successes in trailing window / window",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {_fmt(value)}")
    for r in results:
        prefix = f"run.{r.label}.{r.seed}"
        lines += [
            f"{prefix}.csv = {r.csv}",
            f"{prefix}.episodes = {r.episodes}",
            f"{prefix}.episodes_to_threshold = {_fmt(r.episodes_to_threshold)}",
            f"{prefix}.completed = {_fmt(r.completed)}",
        ]
        if r.error:
            lines.append(f"{prefix}.error = {r.error}")
    return "\n".join(lines) + "\n"


def read_summary(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip() and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def summary_results(summary: dict[str, str]) -> dict[str, list[int | None]]:
    """Map run label to its episodes-to-threshold values, one per seed."""
    runs: dict[str, list[int | None]] = {}
    for key, value in summary.items():
        parts = key.split(".")
        if len(parts) == 4 and parts[0] == "run" and parts[3] == "episodes_to_threshold":
            runs.setdefault(parts[1], []).append(None if value == "none" else int(value))
    return runs


# ---- ranking -------------------------------------------------------------

@dataclass
class ComparisonReport:
    ranking: list[tuple[str, float]]
    separate_freezing_first: bool

    def lines(self) -> list[str]:
        out = [f"{i + 1}. {label}: median {'none' if math.isinf(m) else f'{m:g}'}"
               for i, (label, m) in enumerate(self.ranking)]
        out.append(f"separate_freezing_first = {_fmt(self.separate_freezing_first)}")
        return out


def compare_strategies(summaries) -> ComparisonReport:
    """Rank labels by median episodes-to-threshold; a run that never reached it counts as inf.

    Ties go to the label that comes first in table order (unknown labels after).
    """
    summaries = dict(summaries)
    if len(summaries) < 2:
        raise ValueError("need at least two strategy summaries to compare")
    order = {s.value: i for i, s in enumerate(B.TABLE_ORDER)}

    def median(values):
        if not values:
            raise ValueError("a strategy summary has no runs")
        return statistics.median(math.inf if v is None else v for v in values)

    medians = {label: median(v) for label, v in summaries.items()}
    ranking = sorted(medians.items(), key=lambda kv: (kv[1], order.get(kv[0], len(order)), kv[0]))
    first = ranking[0][0] == B.Strategy.SEPARATE_FREEZING.value and not math.isinf(ranking[0][1])
    return ComparisonReport(ranking, first)


# ---- runs ----------------------------------------------------------------

def _strategy_job(config: ExperimentConfig, strategy: B.Strategy, seed: int) -> RunResult:
    log = B.StrategyLog(strategy, seed)
    label = strategy.value
    csv = f"{label}_seed{seed}.csv"
    error = ""
    try:
        B.run_strategy(strategy, config.episodes, seed, config.strategy_settings(), log=log)
    except (N.NonFiniteError, FloatingPointError) as exc:
        error = f"numeric failure: {exc}"
    write_curve(config.out_dir / csv, log.curve)
    if log.net is not None and not error:
        N.save_checkpoint(log.net.store, config.out_dir / f"{label}_seed{seed}.ck")
    reached = episodes_to_threshold(log.task_curve(), config.threshold)
    return RunResult(label, seed, log.episodes, reached, log.completed, csv, error)


def _behaviours_for(config: ExperimentConfig, seed: int) -> tuple[B.BehaviourNet, list]:
    """SeparateFreezing behaviours: trained here, or loaded from a checkpoint."""
    net = B.BehaviourNet(0)
    if config.behaviour_checkpoint is not None:
        path = Path(str(config.behaviour_checkpoint).replace("{seed}", str(seed)))
        try:
            N.load_checkpoint(net.store, path)
        except (OSError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load behaviour checkpoint {path}: {exc}") from None
        return net, []
    log = B.run_strategy(B.Strategy.SEPARATE_FREEZING, config.episodes, seed,
                         config.strategy_settings())
    return log.net, log.curve


def _choreographer_job(config: ExperimentConfig, mode: C.RewardMode, seed: int) -> RunResult:
    label = f"choreographer-{mode.value}"
    csv = f"{label}_seed{seed}.csv"
    behaviours, prefix = _behaviours_for(config, seed)
    net = C.ChoreographerNet(behaviours, np.random.SeedSequence([seed, 0xC40]).generate_state(1)[0])
    log = C.ChoreographerLog(mode, seed)
    offset = prefix[-1].episode + 1 if prefix else 0
    error = ""
    try:
        C.train_choreographer(net, mode, config.choreographer_episodes, seed,
                              config.a2c_settings(), episode_offset=offset, log=log)
    except (N.NonFiniteError, FloatingPointError) as exc:
        error = f"numeric failure: {exc}"
    write_curve(config.out_dir / csv, list(prefix) + log.curve)
    if not error:
        N.save_checkpoint(net.store, config.out_dir / f"{label}_seed{seed}.ck")
    # measured in choreographer episodes, not counting behaviour training
    reached = episodes_to_threshold(log.curve, config.choreographer_threshold)
    reached = None if reached is None else reached - offset
    return RunResult(label, seed, log.episodes, reached, reached is not None, csv, error)


def _jobs(config: ExperimentConfig):
    if config.kind == "strategy_compare":
        return [(_strategy_job, s, seed) for s in config.strategies for seed in config.seeds]
    return [(_choreographer_job, m, seed) for m in config.reward_modes for seed in config.seeds]


def _call(job):
    fn, config, what, seed = job
    return fn(config, what, seed)


def run_experiment(config: ExperimentConfig) -> tuple[int, list[RunResult]]:
    """Run a strategy_compare or choreographer experiment; returns (exit code, results)."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(fn, config, what, seed) for fn, what, seed in _jobs(config)]
    if config.workers > 1:
        # every run seeds its own generators, so results do not depend on scheduling
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_call, jobs))
    else:
        results = [_call(job) for job in jobs]
    threshold = config.threshold if config.kind == "strategy_compare" else config.choreographer_threshold
    extra = {"threshold": threshold}
    if config.kind == "strategy_compare" and len(config.strategies) >= 2:
        report = compare_strategies(_grouped(results))
        extra["separate_freezing_first"] = report.separate_freezing_first
    (config.out_dir / SUMMARY_NAME).write_bytes(
        format_summary(config, results, extra).encode("utf-8"))
    code = EXIT_NUMERIC if any(r.error for r in results) else EXIT_OK
    return code, results


def _grouped(results: list[RunResult]) -> dict[str, list[int | None]]:
    out: dict[str, list[int | None]] = {}
    for r in results:
        out.setdefault(r.label, []).append(r.episodes_to_threshold)
    return out


def expert_check(config: ExperimentConfig, out=sys.stdout) -> int:
    rate = X.expert_success_rate(range(config.expert_seeds))
    ok = rate >= config.expert_threshold
    print(f"expert chain success {rate:.4f} over {config.expert_seeds} seeds "
          f"(required {config.expert_threshold}): {'PASS' if ok else 'FAIL'}", file=out)
    return EXIT_OK if ok else EXIT_THRESHOLD


def oracle_suite(config: ExperimentConfig, out=sys.stdout) -> int:
    results = O.run_oracle_suite(config.oracle_draws)
    for r in results:
        print(r.line(), file=out)
    return EXIT_OK if all(r.passed for r in results) else EXIT_THRESHOLD


def run(config: ExperimentConfig, out=sys.stdout) -> int:
    """Execute the experiment described by ``config``; returns a process exit code."""
    if config.kind == "expert_check":
        return expert_check(config, out)
    if config.kind == "oracle_suite":
        return oracle_suite(config, out)
    code, results = run_experiment(config)
    for r in results:
        status = r.error or f"episodes_to_threshold {_fmt(r.episodes_to_threshold)}"
        print(f"{r.label} seed {r.seed}: {r.episodes} episodes, {status}", file=out)
    return code


# ---- command line --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", help="seed or comma-separated seeds")
    common.add_argument("--episodes", help="episode budget per run (seeds for expert-check)")
    common.add_argument("--out-dir", help="directory for CSVs, checkpoints and the summary")
    common.add_argument("--strategy", help="strategy or comma-separated strategies")
    common.add_argument("--reward-mode", help="dense, sparse, or both comma-separated")

    parser = argparse.ArgumentParser(prog="choreo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.add_argument("config", help="key = value config file")
    sub.add_parser("expert-check", parents=[common], help="expert chain success over many seeds")
    sub.add_parser("oracle-suite", parents=[common], help="gradient and return oracles")
    p = sub.add_parser("compare", help="rank strategies from summary files")
    p.add_argument("summaries", nargs="+", help="summary.txt files")
    return parser


def _overrides(args) -> dict[str, str]:
    out = {}
    for flag, key in (("seed", "seeds"), ("out_dir", "out_dir"), ("strategy", "strategies"),
                      ("reward_mode", "reward_modes")):
        if getattr(args, flag, None) is not None:
            out[key] = getattr(args, flag)
    if getattr(args, "episodes", None) is not None:
        out["expert_seeds" if args.command == "expert-check" else "episodes"] = args.episodes
    return out


def _compare(paths, out) -> int:
    merged: dict[str, list[int | None]] = {}
    for path in paths:
        try:
            runs = summary_results(read_summary(path))
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read summary {path}: {exc}") from None
        for label, values in runs.items():
            merged.setdefault(label, []).extend(values)
    report = compare_strategies(merged)
    for line in report.lines():
        print(line, file=out)
    return EXIT_OK if report.separate_freezing_first else EXIT_THRESHOLD


def main(argv=None, out=sys.stdout, err=sys.stderr) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            return _compare(args.summaries, out)
        if args.command == "run":
            config = load_config(args.config, _overrides(args))
        else:
            kind = "expert_check" if args.command == "expert-check" else "oracle_suite"
            config = parse_config(f"kind = {kind}", _overrides(args))
        return run(config, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except ValueError as exc:
        # e.g. a single strategy handed to compare
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG
    except (N.NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=err)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
