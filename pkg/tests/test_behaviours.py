import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choreo import behaviours as B
from choreo import experts as X
from choreo import nncore as N
from choreo import world as W


def test_net_shapes():
    net = B.BehaviourNet(0)
    assert net.store["features.0.W"].value.shape == (128, 28)
    assert net.store["features.1.W"].value.shape == (128, 128)
    assert net.store["head.approach.W"].value.shape == (6, 128)
    assert net.store["head.grasp.W"].value.shape == (8, 128)
    assert net.store["head.retract.W"].value.shape == (6, 128)
    e2e = B.BehaviourNet(0, end_to_end=True)
    assert e2e.store["head.task.W"].value.shape == (6, 128)
    assert not e2e.store.names("head.approach")


def test_bc_loss_examples():
    assert float(B.bc_loss(np.zeros(3), np.zeros(3)).value) == 0.0
    assert float(B.bc_loss(np.array([0.1, 0, 0]), np.zeros(3)).value) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        B.bc_loss(np.zeros(3), np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4),
       st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_bc_loss_non_negative(a, b):
    assert float(B.bc_loss(np.array(a), np.array(b)).value) >= 0.0


@pytest.mark.parametrize("behaviour", [0, 1, 2])
def test_normalised_expert_targets_in_box(behaviour):
    batch = B.collect_batch(behaviour, 300, seed=1)
    assert batch.targets.shape == (300, B.HEAD_ACTION_DIMS[behaviour])
    assert np.all(np.abs(batch.targets) <= 1.0)


def test_to_world_action_uses_finger_rule():
    s = W.reset(0)
    a = B.to_world_action(np.array([1.0, -0.5, 0.0]), W.RETRACT, s)
    np.testing.assert_allclose(a.dpos, [0.03, -0.015, 0.0])
    assert a.daperture == -W.MAX_DAPERTURE and a.dyaw == 0.0


def test_success_window_fixed_denominator():
    w = B.SuccessWindow(4)
    assert w.push(True) == 0.25
    for _ in range(3):
        w.push(True)
    assert w.rate == 1.0
    assert w.push(False) == 0.75


def test_bc_converges_on_fixed_batch():
    net = B.BehaviourNet(0)
    batch = B.collect_batch(W.APPROACH, 256, seed=0)
    trace = B.fit_batch(net, batch, 2000, lr=1e-3)
    assert trace[0] / np.mean(trace[-20:]) >= 100.0


def test_zero_episodes_leave_net_unchanged():
    net = B.BehaviourNet(0)
    before = N.to_bytes(net.store)
    log = B.train_behaviour(net, W.APPROACH, (B.EXPERT,) * 3, 0)
    assert log.episodes == 0 and N.to_bytes(net.store) == before


def test_training_one_head_leaves_other_heads_alone():
    net = B.BehaviourNet(0)
    before = {h: net.store.digest(f"head.{h}") for h in B.HEAD_NAMES}
    features = net.store.digest("features")
    B.train_behaviour(net, W.GRASP, (B.EXPERT,) * 3, 20)
    assert net.store.digest("head.approach") == before["approach"]
    assert net.store.digest("head.retract") == before["retract"]
    assert net.store.digest("head.grasp") != before["grasp"]
    assert net.store.digest("features") != features


def test_frozen_features_untouched_by_training():
    net = B.BehaviourNet(0)
    net.store.freeze("features")
    features = net.store.digest("features")
    B.train_behaviour(net, W.RETRACT, (B.EXPERT,) * 3, 10)
    assert net.store.digest("features") == features


def test_approach_learns_within_3000_episodes():
    net = B.BehaviourNet(0)
    log = B.train_behaviour(net, W.APPROACH, (B.EXPERT,) * 3, 3000, seed=0)
    assert log.stop_reason == "converged"
    assert log.final_window == 1.0


@pytest.mark.parametrize("name,expected", [
    ("Sequential", ((B.EXPERT,) * 3, (B.NETWORK, B.EXPERT, B.EXPERT), (B.NETWORK, B.NETWORK, B.EXPERT))),
    ("SequentialFreezing", ((B.EXPERT,) * 3, (B.NETWORK, B.EXPERT, B.EXPERT), (B.NETWORK, B.NETWORK, B.EXPERT))),
    ("Separate", ((B.EXPERT,) * 3,) * 3),
    ("SeparateFreezing", ((B.EXPERT,) * 3,) * 3),
])
def test_scaffold_sources_in_training_log(name, expected):
    # tiny budget: one episode per phase is enough to read the trace
    plan = B.plan_for(name)
    log = B.run_strategy(plan, 3, seed=0, settings=B.StrategySettings(
        bc=B.BcSettings(patience=1)))
    sources = [tl.records[0].sources for tl in log.phase_logs]
    # the trained phase itself is network-driven; compare the scaffold positions
    for b, (got, want) in enumerate(zip(sources, expected)):
        for p in range(3):
            if p != b:
                assert got[p] == want[p], (name, b, p)


def test_freeze_schedule_per_plan():
    assert B.plan_for("SeparateFreezing").freeze_after_approach
    assert B.plan_for("SequentialFreezing").freeze_after_approach
    assert not B.plan_for("Separate").freeze_after_approach
    assert not B.plan_for("Sequential").freeze_after_approach
    assert B.plan_for("EndToEnd").end_to_end


def test_strategy_name_parsing():
    assert B.Strategy.parse("Separate + Freezing") is B.Strategy.SEPARATE_FREEZING
    assert B.Strategy.parse("end-to-end") is B.Strategy.END_TO_END
    with pytest.raises(ValueError):
        B.Strategy.parse("Random")


@pytest.mark.parametrize("name", ["SeparateFreezing", "SequentialFreezing"])
def test_feature_digest_constant_after_approach(name):
    log = B.run_strategy(name, 60, seed=1, settings=B.StrategySettings(
        bc=B.BcSettings(patience=1), eval_episodes=5))
    digests = set(log.feature_digests.values())
    assert len(log.feature_digests) >= 3 and len(digests) == 1


def test_evaluate_combined_with_experts():
    sources = (B.EXPERT,) * 3
    assert B.evaluate_combined(None, range(200), sources=sources) >= 0.99


def test_evaluate_combined_untrained_net_fails():
    assert B.evaluate_combined(B.BehaviourNet(3), range(1000)) < 0.05


def test_evaluate_combined_needs_seeds():
    with pytest.raises(ValueError):
        B.evaluate_combined(B.BehaviourNet(0), [])


def test_run_strategy_is_deterministic():
    kw = dict(settings=B.StrategySettings(bc=B.BcSettings(patience=10), eval_episodes=10))
    a = B.run_strategy("Separate", 80, seed=4, **kw)
    b = B.run_strategy("Separate", 80, seed=4, **kw)
    assert [(p.episode, p.window_success, p.phase) for p in a.curve] == \
        [(p.episode, p.window_success, p.phase) for p in b.curve]


def test_end_to_end_head_drives_whole_task():
    log = B.run_strategy("EndToEnd", 5, seed=0)
    assert log.rounds == 1 and {p.phase for p in log.curve} == {"d"}
    assert not log.completed


def test_expert_chain_agrees_with_combined_expert_run():
    rng = np.random.default_rng(0)
    for seed in range(30):
        assert B.run_combined_episode(None, seed, rng, (B.EXPERT,) * 3) == X.run_expert_chain(seed)[0]
