"""Acceptance criteria at full scale.  Each test prints one PASS/FAIL line.

The strategy comparison (about half an hour on one core) is shared: its
SeparateFreezing checkpoints seed the choreographer criterion.
"""
import io
import math
import statistics
import time

import pytest

from choreo import behaviours as B
from choreo import experts as X
from choreo import harness as H
from choreo import oracles as O
from choreo import world as W

SEEDS = (0, 1, 2)


@pytest.fixture
def emit(capsys):
    def _emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    return _emit


def _median(values):
    return statistics.median(math.inf if v is None else v for v in values)


@pytest.fixture(scope="module")
def comparison(tmp_path_factory):
    out = tmp_path_factory.mktemp("compare")
    cfg = H.ExperimentConfig(kind="strategy_compare", seeds=SEEDS, episodes=20_000, out_dir=out)
    t0 = time.perf_counter()
    code, results = H.run_experiment(cfg)
    assert code == H.EXIT_OK
    return out, results, time.perf_counter() - t0


def test_criterion_1_oracle_suite(emit):
    t0 = time.perf_counter()
    results = O.run_oracle_suite(draws=100)
    seconds = time.perf_counter() - t0
    ok = all(r.passed for r in results) and seconds < 60
    worst = max(results, key=lambda r: r.worst / r.tolerance)
    emit(1, "oracle suite", ok, f"{len(results)} oracles in {seconds:.1f}s, "
         f"tightest {worst.name} {worst.worst:.2e} vs {worst.tolerance:.0e}")
    assert ok, "\n".join(r.line() for r in results)


def test_criterion_2_expert_chain(emit):
    rate = X.expert_success_rate(range(10_000))
    emit(2, "expert chain", rate >= 0.99, f"success {rate:.4f} over 10000 seeds (need 0.99)")
    assert rate >= 0.99


def test_criterion_3_bc_fixed_batch(emit):
    ratios = []
    for behaviour in (W.APPROACH, W.GRASP, W.RETRACT):
        net = B.BehaviourNet(0)
        batch = B.collect_batch(behaviour, 256, seed=0)
        trace = B.fit_batch(net, batch, 2000)
        ratios.append(trace[0] / min(trace))
    ok = min(ratios) >= 100
    emit(3, "BC fixed batch", ok, "loss reduction " + ", ".join(f"{r:.0f}x" for r in ratios)
         + " in 2000 steps (need 100x)")
    assert ok


def test_criterion_4_strategy_ordering(comparison, emit):
    _, results, seconds = comparison
    by = {}
    for r in results:
        by.setdefault(r.label, []).append(r.episodes_to_threshold)
    med = {label: _median(v) for label, v in by.items()}
    sf, sep = med["SeparateFreezing"], med["Separate"]
    seqs = (med["SequentialFreezing"], med["Sequential"])
    e2e_failures = sum(v is None for v in by["EndToEnd"])
    checks = {
        "SF < Separate": sf < sep,
        "Separate < each Sequential": all(sep < m for m in seqs),
        "SF 2x faster than EndToEnd": 2 * sf <= med["EndToEnd"] and not math.isinf(sf),
        "EndToEnd fails on >= 2 seeds": e2e_failures >= 2,
    }
    ok = all(checks.values())
    detail = ", ".join(f"{k} {v}" for k, v in by.items())
    detail += f"; medians {med}; checks {checks}; {seconds / 60:.1f} min"
    emit(4, "strategy ordering", ok, detail)
    assert ok, detail


def test_criterion_5_choreographer(comparison, emit, tmp_path):
    out, _, _ = comparison
    cfg = H.ExperimentConfig(kind="choreographer", seeds=SEEDS, choreographer_episodes=4000,
                             behaviour_checkpoint=out / "SeparateFreezing_seed{seed}.ck",
                             out_dir=tmp_path)
    t0 = time.perf_counter()
    code, results = H.run_experiment(cfg)
    seconds = time.perf_counter() - t0
    assert code == H.EXIT_OK
    by = {}
    for r in results:
        by.setdefault(r.label, []).append(r.episodes_to_threshold)
    dense, sparse = by["choreographer-dense"], by["choreographer-sparse"]
    checks = {
        "dense >= 2 seeds": sum(v is not None for v in dense) >= 2,
        "sparse >= 2 seeds": sum(v is not None for v in sparse) >= 2,
        "dense median <= sparse median": _median(dense) <= _median(sparse),
        "under 10 min": seconds < 600,
    }
    ok = all(checks.values())
    detail = f"dense {dense}, sparse {sparse}; checks {checks}; {seconds / 60:.1f} min"
    emit(5, "choreographer", ok, detail)
    assert ok, detail


@pytest.mark.parametrize("strategy", [B.Strategy.SEPARATE_FREEZING, B.Strategy.SEQUENTIAL_FREEZING])
def test_criterion_6_freezing_exact(strategy, emit):
    # a short patience gets through phases a, b and c within seconds
    settings = B.StrategySettings(bc=B.BcSettings(patience=50))
    log = B.run_strategy(strategy, 600, seed=0, settings=settings)
    cks = log.feature_checkpoints
    ok = {"1a", "1c"} <= set(cks) and cks["1a"] == cks["1c"]
    ok = ok and all(v == cks["1a"] for v in cks.values())
    emit(6, f"freezing exact ({strategy.value})", ok,
         f"{len(cks)} phase checkpoints, {len(cks.get('1a', b''))} bytes, all equal {ok}")
    assert ok


def test_criterion_7_determinism(emit, tmp_path):
    runs = []
    for name in ("first", "second"):
        cfg = H.ExperimentConfig(kind="strategy_compare", strategies=(B.Strategy.SEPARATE_FREEZING,),
                                 seeds=(0,), episodes=20_000, out_dir=tmp_path / name)
        H.run(cfg, io.StringIO())
        runs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).iterdir())})
    csvs = [n for n in runs[0] if n.endswith(".csv")]
    ok = bool(csvs) and runs[0] == runs[1]
    rows = runs[0]["SeparateFreezing_seed0.csv"].count(b"\n") - 1
    emit(7, "determinism", ok, f"{len(runs[0])} files ({rows} CSV rows) byte-identical {ok}")
    assert ok
