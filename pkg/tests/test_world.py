import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from choreo import experts as X
from choreo import world as W


def aligned_near_block(seed=3, offset=(0.004, 0.0, 0.0), aperture=0.1):
    s = W.reset(seed)
    return W.with_gripper(
        s, gripper_pos=s.block_pos + np.array(offset), gripper_yaw=s.block_yaw,
        gripper_aperture=aperture)


def test_reset_is_deterministic():
    assert W.reset(7).same_as(W.reset(7))


def test_different_seeds_move_the_block():
    assert not np.array_equal(W.reset(7).block_pos, W.reset(8).block_pos)


@pytest.mark.parametrize("seed", [0, 1, 7, 12345])
def test_reset_contract(seed):
    s = W.reset(seed)
    assert not s.attached and s.step_count == 0
    assert s.gripper_aperture == W.APERTURE_MAX
    assert np.array_equal(s.gripper_pos, W.HOME_POS)
    assert W.BLOCK_SPAWN_LOW[0] <= s.block_pos[0] <= W.BLOCK_SPAWN_HIGH[0]
    assert W.BLOCK_SPAWN_LOW[1] <= s.block_pos[1] <= W.BLOCK_SPAWN_HIGH[1]
    assert -math.pi / 2 <= s.block_yaw < math.pi / 2
    assert W.TARGET_Z_RANGE[0] <= s.target_pos[2] <= W.TARGET_Z_RANGE[1]
    assert np.linalg.norm(s.target_pos - s.block_pos) >= 0.05
    assert not W.task_success(s)


def test_large_move_is_clamped():
    s = W.reset(0)
    s2 = W.step(s, W.Action(np.array([1.0, 0.0, 0.0])))
    assert s2.gripper_pos[0] - s.gripper_pos[0] == pytest.approx(0.03, abs=1e-15)
    assert s2.step_count == 1


def test_yaw_and_aperture_clamped():
    s = W.reset(0)
    s2 = W.step(s, W.Action(np.zeros(3), dyaw=5.0, daperture=1.0))
    assert s2.gripper_yaw == pytest.approx(0.1)
    assert s2.gripper_aperture == W.APERTURE_MAX
    s3 = W.step(s2, W.Action(np.zeros(3), daperture=-1.0))
    assert s3.gripper_aperture == pytest.approx(0.08)


def test_workspace_clamp():
    s = W.with_gripper(W.reset(0), gripper_pos=W.WORKSPACE_HIGH - 0.01)
    s2 = W.step(s, W.Action(np.full(3, 0.03)))
    np.testing.assert_array_equal(s2.gripper_pos, W.WORKSPACE_HIGH)


@pytest.mark.parametrize("bad", [
    W.Action(np.array([np.nan, 0.0, 0.0])),
    W.Action(np.zeros(3), dyaw=np.inf),
    W.Action(np.zeros(3), daperture=-np.inf),
])
def test_non_finite_action_rejected(bad):
    with pytest.raises(W.InvalidActionError):
        W.step(W.reset(0), bad)


def test_attachment_traced_by_hand():
    # aperture 0.04 - 0.02 = 0.02 <= 0.03, distance 0.004 < 0.005, yaw aligned
    s = aligned_near_block(aperture=0.04)
    s2 = W.step(s, W.Action(np.zeros(3), daperture=-0.08))
    assert s2.attached


def test_attachment_needs_closed_fingers():
    # a -0.08 request is clamped to -0.02, so from 0.1 it takes four steps
    s = aligned_near_block(aperture=0.1)
    close = W.Action(np.zeros(3), daperture=-0.08)
    apertures = []
    for _ in range(4):
        s = W.step(s, close)
        apertures.append((round(s.gripper_aperture, 10), s.attached))
    assert apertures == [(0.08, False), (0.06, False), (0.04, False), (0.02, True)]


def test_attachment_needs_yaw_alignment():
    s = W.with_gripper(aligned_near_block(aperture=0.04), gripper_yaw=W.reset(3).block_yaw + 0.3)
    assert not W.step(s, W.Action(np.zeros(3), daperture=-0.02)).attached


def test_attached_block_follows_gripper():
    s = W.step(aligned_near_block(aperture=0.04), W.Action(np.zeros(3), daperture=-0.02))
    assert s.attached
    s2 = W.step(s, W.Action(np.array([0.01, 0.0, 0.0])))
    assert s2.block_pos[0] - s.block_pos[0] == pytest.approx(0.01, abs=1e-15)


def test_release_when_opened():
    s = W.step(aligned_near_block(aperture=0.04), W.Action(np.zeros(3), daperture=-0.02))
    for _ in range(2):
        s = W.step(s, W.Action(np.zeros(3), daperture=0.02))
    assert s.gripper_aperture == pytest.approx(0.06)
    assert not s.attached


def test_observe_layout():
    s = W.reset(4)
    obs = W.observe(s, s)
    assert obs.shape == (28,)
    np.testing.assert_array_equal(obs[6:9], s.block_pos - s.gripper_pos)
    np.testing.assert_array_equal(obs[0:3], s.gripper_pos)
    np.testing.assert_array_equal(obs[25:28], s.target_pos)
    assert np.all(obs[14:25] == 0.0)


def test_observe_velocities_are_differences():
    s = W.reset(4)
    s2 = W.step(s, W.Action(np.array([0.01, -0.02, 0.0]), daperture=-0.01))
    obs = W.observe(s2, s)
    np.testing.assert_allclose(obs[20:23], [0.01, -0.02, 0.0], atol=1e-15)
    np.testing.assert_allclose(obs[23:25], [-0.005, -0.005], atol=1e-15)


def test_phase_predicates_at_block():
    s = W.step(aligned_near_block(offset=(0.0, 0.0, 0.0), aperture=0.04),
               W.Action(np.zeros(3), daperture=-0.02))
    assert W.approach_done(s) and W.grasp_done(s)
    far = np.linalg.norm(s.target_pos - s.block_pos) >= 0.01
    assert W.retract_done(s) is (not far)


def test_approach_threshold():
    s = W.reset(0)
    s = W.with_gripper(s, gripper_pos=W.hover_point(s) + np.array([0.02, 0.0, 0.0]))
    assert not W.approach_done(s)
    s = W.with_gripper(s, gripper_pos=W.hover_point(s) + np.array([0.009, 0.0, 0.0]))
    assert W.approach_done(s)


def test_retract_threshold_and_success():
    s = W.step(aligned_near_block(offset=(0.0, 0.0, 0.0), aperture=0.04),
               W.Action(np.zeros(3), daperture=-0.02))
    moved = W.with_gripper(s, target_pos=s.block_pos + np.array([0.0, 0.009, 0.0]))
    assert W.retract_done(moved) and W.task_success(moved)
    loose = W.with_gripper(moved, attached=False)
    assert not W.task_success(loose)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1),
       moves=st.lists(st.tuples(*[st.floats(-0.1, 0.1)] * 5), min_size=1, max_size=40))
def test_random_walks_keep_invariants(seed, moves):
    s = W.reset(seed)
    replay = W.reset(seed)
    for dx, dy, dz, dyaw, dap in moves:
        a = W.Action(np.array([dx, dy, dz]), dyaw, dap)
        s2 = W.step(s, a)
        assert np.all(s2.gripper_pos >= W.WORKSPACE_LOW) and np.all(s2.gripper_pos <= W.WORKSPACE_HIGH)
        assert np.linalg.norm(s2.gripper_pos - s.gripper_pos) <= 0.03 * math.sqrt(3) + 1e-12
        assert 0.0 <= s2.gripper_aperture <= W.APERTURE_MAX
        assert -math.pi <= s2.gripper_yaw < math.pi
        if s.attached and s2.attached:
            np.testing.assert_allclose(s2.block_pos - s2.gripper_pos,
                                       s.block_pos - s.gripper_pos, atol=1e-12)
            assert W.wrap_angle(s2.block_yaw - s2.gripper_yaw) == pytest.approx(
                W.wrap_angle(s.block_yaw - s.gripper_yaw), abs=1e-12)
        s = s2
        replay = W.step(replay, a)
    assert s.same_as(replay)


def test_expert_episode_is_bit_reproducible():
    def trajectory(seed):
        s, out = W.reset(seed), []
        for expert, done in zip(X.EXPERTS, W.PHASE_PREDICATES):
            for _ in range(W.BEHAVIOUR_HORIZON):
                if done(s):
                    break
                s = W.step(s, expert(s))
                out.append(s)
        return out

    a, b = trajectory(11), trajectory(11)
    assert len(a) == len(b) and all(x.same_as(y) for x, y in zip(a, b))


def test_attachment_rigid_during_expert_retract():
    s = W.reset(21)
    for expert, done in zip(X.EXPERTS[:2], W.PHASE_PREDICATES[:2]):
        while not done(s):
            s = W.step(s, expert(s))
    offset = s.block_pos - s.gripper_pos
    yaw_offset = W.wrap_angle(s.block_yaw - s.gripper_yaw)
    while not W.retract_done(s):
        s = W.step(s, X.expert_retract(s))
        assert s.attached
        np.testing.assert_allclose(s.block_pos - s.gripper_pos, offset, atol=1e-12)
        assert W.wrap_angle(s.block_yaw - s.gripper_yaw) == pytest.approx(yaw_offset, abs=1e-12)


def test_required_phase_latches_approach():
    s = W.reset(0)
    assert W.required_phase(s, approached=False) == W.APPROACH
    assert W.required_phase(s, approached=True) == W.GRASP
    held = W.step(aligned_near_block(offset=(0.0, 0.0, 0.0), aperture=0.04),
                  W.Action(np.zeros(3), daperture=-0.02))
    assert W.required_phase(held, approached=False) == W.RETRACT
