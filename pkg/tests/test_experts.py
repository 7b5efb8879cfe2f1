import numpy as np
import pytest

from choreo import experts as X
from choreo import world as W


def held_state(seed=5):
    s = W.reset(seed)
    for expert, done in zip(X.EXPERTS[:2], W.PHASE_PREDICATES[:2]):
        while not done(s):
            s = W.step(s, expert(s))
    return s


def test_gains_must_be_positive():
    with pytest.raises(ValueError):
        X.ExpertGains(kp_pos=0.0)
    with pytest.raises(ValueError):
        X.ExpertGains(kp_yaw=-1.0)


def test_approach_zero_at_hover():
    s = W.reset(2)
    s = W.with_gripper(s, gripper_pos=W.hover_point(s), gripper_yaw=s.block_yaw)
    a = X.expert_approach(s)
    assert np.all(a.dpos == 0.0) and a.dyaw == 0.0 and a.daperture == 0.0


def test_approach_saturates_far_away():
    s = W.reset(2)
    s = W.with_gripper(s, block_pos=s.gripper_pos + np.array([1.0, 0.0, -W.HOVER_HEIGHT]))
    a = X.expert_approach(s)
    assert a.dpos[0] == pytest.approx(0.03)
    np.testing.assert_allclose(a.dpos[1:], 0.0, atol=1e-15)


def test_grasp_closes_when_centred_and_aligned():
    s = W.reset(2)
    s = W.with_gripper(s, gripper_pos=s.block_pos.copy(), gripper_yaw=s.block_yaw)
    a = X.expert_grasp(s)
    assert a.daperture == -0.02
    np.testing.assert_allclose(a.dpos, 0.0, atol=1e-15)


def test_grasp_holds_fingers_when_misaligned():
    s = W.reset(2)
    s = W.with_gripper(s, gripper_pos=s.block_pos.copy(), gripper_yaw=s.block_yaw + 0.5)
    a = X.expert_grasp(s)
    assert a.daperture == 0.0 and a.dyaw < 0


def test_grasp_idle_once_attached():
    a = X.expert_grasp(held_state())
    assert np.all(a.dpos == 0.0) and a.dyaw == 0.0 and a.daperture == 0.0


def test_retract_zero_at_target():
    s = held_state()
    s = W.with_gripper(s, target_pos=s.block_pos.copy())
    np.testing.assert_array_equal(X.expert_retract(s).dpos, np.zeros(3))


def test_retract_saturates_upwards():
    s = held_state()
    s = W.with_gripper(s, target_pos=s.block_pos + np.array([0.0, 0.0, 1.0]))
    assert X.expert_retract(s).dpos[2] == pytest.approx(0.03)


def test_phase_controllers_close_the_loop_on_1000_seeds():
    approach_ok = grasp_ok = retract_ok = 0
    for seed in range(1000):
        ok, finished = X.run_expert_chain(seed)
        approach_ok += finished[0] >= 0
        grasp_ok += finished[1] >= 0
        retract_ok += finished[2] >= 0
        # predicates fire in order
        done = [f for f in finished if f >= 0]
        assert done == sorted(done)
    assert approach_ok == 1000
    assert grasp_ok >= 990
    assert retract_ok >= 990


def test_expert_actions_finite_and_within_limits():
    for seed in range(50):
        s = W.reset(seed)
        for expert, done in zip(X.EXPERTS, W.PHASE_PREDICATES):
            for _ in range(W.BEHAVIOUR_HORIZON):
                if done(s):
                    break
                a = expert(s)
                assert np.all(np.isfinite(a.dpos))
                assert np.all(np.abs(a.dpos) <= W.MAX_DPOS)
                assert abs(a.dyaw) <= W.MAX_DYAW and abs(a.daperture) <= W.MAX_DAPERTURE
                s = W.step(s, a)


def test_expert_success_rate_requires_seeds():
    with pytest.raises(ValueError):
        X.expert_success_rate([])
