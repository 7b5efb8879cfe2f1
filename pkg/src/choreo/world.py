"""Kinematic pick-and-place world.

A rigid, contact-free stand-in for the Fetch pick-and-place benchmark.  The
gripper moves by clamped position / yaw / aperture increments, and the block
becomes rigidly attached to the gripper when the gripper is closed, centred on
the block and rotated to match the block's yaw.

All functions are pure: a :class:`WorldState` is never mutated in place.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

# workspace box (metres)
WORKSPACE_LOW = np.array([1.0, 0.4, 0.40])
WORKSPACE_HIGH = np.array([1.6, 1.1, 0.90])
TABLE_Z = 0.42
BLOCK_HALF_HEIGHT = 0.025
BLOCK_SPAWN_LOW = np.array([1.15, 0.55])
BLOCK_SPAWN_HIGH = np.array([1.45, 0.95])
TARGET_Z_RANGE = (0.45, 0.70)
TARGET_MIN_SEPARATION = 0.05

HOME_POS = np.array([1.30, 0.75, 0.65])
HOME_YAW = 0.0

APERTURE_MAX = 0.1
MAX_DPOS = 0.03
MAX_DYAW = 0.1
MAX_DAPERTURE = 0.02

HOVER_HEIGHT = 0.05
APPROACH_THRESHOLD = 0.01
GRASP_THRESHOLD = 0.005
RETRACT_THRESHOLD = 0.01
YAW_TOLERANCE = 0.1
CLOSE_APERTURE = 0.03
RELEASE_APERTURE = 0.05

BEHAVIOUR_HORIZON = 50
TASK_HORIZON = 150

OBS_DIM = 28


class InvalidActionError(ValueError):
    """Raised when an action carries a non-finite component."""


def wrap_angle(angle: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


@dataclass(frozen=True)
class Action:
    dpos: np.ndarray
    dyaw: float = 0.0
    daperture: float = 0.0

    @classmethod
    def zero(cls) -> "Action":
        return cls(np.zeros(3), 0.0, 0.0)

    def clamped(self) -> "Action":
        dpos = np.asarray(self.dpos, dtype=np.float64)
        if dpos.shape != (3,):
            raise InvalidActionError(f"dpos must have 3 components, got shape {dpos.shape}")
        if not (np.all(np.isfinite(dpos)) and math.isfinite(self.dyaw)
                and math.isfinite(self.daperture)):
            raise InvalidActionError(f"non-finite action component: {self}")
        return Action(
            np.clip(dpos, -MAX_DPOS, MAX_DPOS),
            min(max(float(self.dyaw), -MAX_DYAW), MAX_DYAW),
            min(max(float(self.daperture), -MAX_DAPERTURE), MAX_DAPERTURE),
        )


@dataclass(frozen=True)
class WorldState:
    gripper_pos: np.ndarray
    gripper_yaw: float
    gripper_aperture: float
    block_pos: np.ndarray
    block_yaw: float
    target_pos: np.ndarray
    attached: bool = False
    step_count: int = 0
    # block pose relative to the gripper, fixed at the moment of attachment
    grip_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    grip_yaw_offset: float = 0.0

    def same_as(self, other: "WorldState") -> bool:
        """Bitwise equality of every field."""
        return (
            self.gripper_pos.tobytes() == other.gripper_pos.tobytes()
            and self.block_pos.tobytes() == other.block_pos.tobytes()
            and self.target_pos.tobytes() == other.target_pos.tobytes()
            and self.grip_offset.tobytes() == other.grip_offset.tobytes()
            and self.gripper_yaw == other.gripper_yaw
            and self.gripper_aperture == other.gripper_aperture
            and self.block_yaw == other.block_yaw
            and self.grip_yaw_offset == other.grip_yaw_offset
            and self.attached == other.attached
            and self.step_count == other.step_count
        )


def reset(rng_seed: int) -> WorldState:
    """Spawn a block and target at random; gripper at home, open."""
    rng = np.random.default_rng(rng_seed)
    xy = rng.uniform(BLOCK_SPAWN_LOW, BLOCK_SPAWN_HIGH)
    block_pos = np.array([xy[0], xy[1], TABLE_Z + BLOCK_HALF_HEIGHT])
    block_yaw = float(rng.uniform(-math.pi / 2, math.pi / 2))
    while True:
        txy = rng.uniform(BLOCK_SPAWN_LOW, BLOCK_SPAWN_HIGH)
        target = np.array([txy[0], txy[1], rng.uniform(*TARGET_Z_RANGE)])
        if np.linalg.norm(target - block_pos) >= TARGET_MIN_SEPARATION:
            break
    return WorldState(
        gripper_pos=HOME_POS.copy(),
        gripper_yaw=HOME_YAW,
        gripper_aperture=APERTURE_MAX,
        block_pos=block_pos,
        block_yaw=block_yaw,
        target_pos=target,
    )


def step(state: WorldState, action: Action) -> WorldState:
    """Advance the world by one clamped action."""
    act = action.clamped()
    gripper_pos = np.clip(state.gripper_pos + act.dpos, WORKSPACE_LOW, WORKSPACE_HIGH)
    gripper_yaw = wrap_angle(state.gripper_yaw + act.dyaw)
    aperture = min(max(state.gripper_aperture + act.daperture, 0.0), APERTURE_MAX)

    attached = state.attached
    offset, yaw_offset = state.grip_offset, state.grip_yaw_offset
    block_pos, block_yaw = state.block_pos, state.block_yaw
    if attached and aperture > RELEASE_APERTURE:
        attached = False
    if attached:
        block_pos = gripper_pos + offset
        block_yaw = wrap_angle(gripper_yaw + yaw_offset)
    elif (aperture <= CLOSE_APERTURE
          and np.linalg.norm(gripper_pos - block_pos) < GRASP_THRESHOLD
          and abs(wrap_angle(gripper_yaw - block_yaw)) < YAW_TOLERANCE):
        attached = True
        offset = block_pos - gripper_pos
        yaw_offset = wrap_angle(block_yaw - gripper_yaw)

    return WorldState(
        gripper_pos=gripper_pos,
        gripper_yaw=gripper_yaw,
        gripper_aperture=aperture,
        block_pos=block_pos,
        block_yaw=block_yaw,
        target_pos=state.target_pos,
        attached=attached,
        step_count=state.step_count + 1,
        grip_offset=offset,
        grip_yaw_offset=yaw_offset,
    )


def observe(state: WorldState, prev: WorldState | None = None) -> np.ndarray:
    """28-entry observation; velocities are one-step differences against ``prev``.

    Layout: gripper_pos(3) block_pos(3) block-gripper(3) fingers(2)
    block yaw triple(3) block lin vel(3) block ang vel(3) gripper lin vel(3)
    finger vel(2) target_pos(3).
    """
    if prev is None:
        prev = state
    obs = np.empty(OBS_DIM)
    obs[0:3] = state.gripper_pos
    obs[3:6] = state.block_pos
    obs[6:9] = state.block_pos - state.gripper_pos
    obs[9:11] = state.gripper_aperture / 2.0
    obs[11] = math.sin(state.block_yaw)
    obs[12] = math.cos(state.block_yaw)
    obs[13] = wrap_angle(state.block_yaw - state.gripper_yaw)
    obs[14:17] = state.block_pos - prev.block_pos
    obs[17:19] = 0.0
    obs[19] = wrap_angle(state.block_yaw - prev.block_yaw)
    obs[20:23] = state.gripper_pos - prev.gripper_pos
    obs[23:25] = (state.gripper_aperture - prev.gripper_aperture) / 2.0
    obs[25:28] = state.target_pos
    return obs


def hover_point(state: WorldState) -> np.ndarray:
    return state.block_pos + np.array([0.0, 0.0, HOVER_HEIGHT])


def approach_done(state: WorldState) -> bool:
    # holding the block implies the approach is over
    if state.attached:
        return True
    return bool(np.linalg.norm(hover_point(state) - state.gripper_pos) < APPROACH_THRESHOLD)


def grasp_done(state: WorldState) -> bool:
    return state.attached and bool(
        np.linalg.norm(state.gripper_pos - state.block_pos) < GRASP_THRESHOLD)


def retract_done(state: WorldState) -> bool:
    return state.attached and bool(
        np.linalg.norm(state.target_pos - state.block_pos) < RETRACT_THRESHOLD)


def task_success(state: WorldState) -> bool:
    return retract_done(state)


APPROACH, GRASP, RETRACT = 0, 1, 2
BEHAVIOURS = ("approach", "grasp", "retract")
PHASE_PREDICATES = (approach_done, grasp_done, retract_done)


def required_phase(state: WorldState, approached: bool) -> int:
    """Behaviour the task currently calls for.

    ``approached`` latches once ``approach_done`` has held during the episode,
    because descending for the grasp leaves the hover point again.
    """
    if grasp_done(state):
        return RETRACT
    return GRASP if approached else APPROACH


def with_gripper(state: WorldState, **changes) -> WorldState:
    """Convenience for tests and demos: copy ``state`` with some fields replaced."""
    return replace(state, **changes)
