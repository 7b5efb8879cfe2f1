"""Hand-engineered proportional controllers for the three behaviours.

Gains act on normalised actions: the proportional term is clipped to [-1, 1]
and then scaled by the per-component action limit, which is the same space
the behaviour networks regress onto.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import world as W
from .world import Action, WorldState, wrap_angle


@dataclass(frozen=True)
class ExpertGains:
    kp_pos: float = 20.0
    kp_yaw: float = 5.0

    def __post_init__(self):
        if not (self.kp_pos > 0 and self.kp_yaw > 0):
            raise ValueError(f"gains must be strictly positive: {self}")


DEFAULT_GAINS = ExpertGains()


def _p_pos(error: np.ndarray, gains: ExpertGains) -> np.ndarray:
    return np.clip(gains.kp_pos * error, -1.0, 1.0) * W.MAX_DPOS


def _p_yaw(error: float, gains: ExpertGains) -> float:
    return float(np.clip(gains.kp_yaw * error, -1.0, 1.0)) * W.MAX_DYAW


def expert_approach(state: WorldState, gains: ExpertGains = DEFAULT_GAINS) -> Action:
    """Move to the hover point above the block, fingers left as they are.

    Yaw is not touched: the approach behaviour only acts in x, y, z, and yaw
    alignment belongs to the grasp.
    """
    return Action(_p_pos(W.hover_point(state) - state.gripper_pos, gains), 0.0, 0.0)


def expert_grasp(state: WorldState, gains: ExpertGains = DEFAULT_GAINS) -> Action:
    """Descend onto the block while matching its yaw, then close."""
    if state.attached:
        return Action.zero()
    yaw_err = wrap_angle(state.block_yaw - state.gripper_yaw)
    return Action(
        _p_pos(state.block_pos - state.gripper_pos, gains),
        _p_yaw(yaw_err, gains),
        grasp_aperture_rule(state),
    )


def expert_retract(state: WorldState, gains: ExpertGains = DEFAULT_GAINS) -> Action:
    """Carry the block towards the target with the fingers held shut."""
    return Action(_p_pos(state.target_pos - state.block_pos, gains), 0.0, -W.MAX_DAPERTURE)


def grasp_aperture_rule(state: WorldState) -> float:
    """Close while centred and aligned on an unheld block; otherwise hold."""
    if state.attached:
        return 0.0
    centred = np.linalg.norm(state.gripper_pos - state.block_pos) < W.GRASP_THRESHOLD
    aligned = abs(wrap_angle(state.gripper_yaw - state.block_yaw)) < W.YAW_TOLERANCE
    return -W.MAX_DAPERTURE if (centred and aligned) else 0.0


EXPERTS = (expert_approach, expert_grasp, expert_retract)


def aperture_rule(behaviour: int, state: WorldState) -> float:
    """Rule-based finger command paired with each behaviour's network output."""
    if behaviour == W.GRASP:
        return grasp_aperture_rule(state)
    if behaviour == W.RETRACT:
        return -W.MAX_DAPERTURE
    return 0.0


def run_expert_chain(seed: int, gains: ExpertGains = DEFAULT_GAINS,
                     horizon: int = W.BEHAVIOUR_HORIZON) -> tuple[bool, list[int]]:
    """Roll out approach -> grasp -> retract, each phase with its own step budget.

    Returns task success and the step index at which each phase finished
    (-1 for phases never completed).
    """
    state = W.reset(seed)
    finished = [-1, -1, -1]
    for phase, (expert, done) in enumerate(zip(EXPERTS, W.PHASE_PREDICATES)):
        for _ in range(horizon):
            if done(state):
                break
            state = W.step(state, expert(state, gains))
        if not done(state):
            return False, finished
        finished[phase] = state.step_count
    return W.task_success(state), finished


def expert_success_rate(seeds, gains: ExpertGains = DEFAULT_GAINS) -> float:
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    return sum(run_expert_chain(s, gains)[0] for s in seeds) / len(seeds)
