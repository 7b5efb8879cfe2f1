"""Behaviour cloning of the approach / grasp / retract networks.

One shared two-layer tanh feature extractor feeds a Gaussian action head per
behaviour.  Training is online: while a behaviour is active, the network
drives the gripper and after every environment step its reparameterised
action is regressed onto the expert's action with a single Adam step.

Five training strategies differ in what controls the phases around the one
being trained (expert or already-trained network) and in whether the feature
extractor is frozen once the approach behaviour is learnt.
"""
from __future__ import annotations

import enum
import hashlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import experts as X
from . import nncore as N
from . import world as W
from .nncore import graph as G

FEATURES = "features"
HIDDEN = 128
HEAD_NAMES = ("approach", "grasp", "retract")
# normalised action components each behaviour head predicts
HEAD_ACTION_DIMS = (3, 4, 3)
TASK_HEAD = "task"

PHASE_LABELS = ("a", "b", "c")

# fixed input standardisation: (obs - OBS_SHIFT) / OBS_SCALE
_CENTRE = (W.WORKSPACE_LOW + W.WORKSPACE_HIGH) / 2.0
OBS_SHIFT = np.concatenate([
    _CENTRE, _CENTRE, np.zeros(3),                 # positions, block - gripper
    np.full(2, W.APERTURE_MAX / 4.0),              # fingers
    np.zeros(3), np.zeros(3), np.zeros(3),         # yaw triple, block velocities
    np.zeros(3), np.zeros(2), _CENTRE,             # gripper / finger velocity, target
])
OBS_SCALE = np.concatenate([
    np.full(3, 0.2), np.full(3, 0.2), np.full(3, 0.05),
    np.full(2, W.APERTURE_MAX / 4.0),
    np.ones(3), np.full(3, W.MAX_DPOS), np.full(3, W.MAX_DYAW),
    np.full(3, W.MAX_DPOS), np.full(2, W.MAX_DAPERTURE / 2.0), np.full(3, 0.2),
])


class BehaviourNet:
    """Shared 28-128-128 tanh feature extractor plus per-behaviour heads.

    With ``end_to_end=True`` the net has a single ``task`` head emitting x, y, z
    for the whole episode instead of the three behaviour heads.
    """

    def __init__(self, rng: np.random.Generator | int = 0, end_to_end: bool = False):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.end_to_end = end_to_end
        self.store = N.ParameterStore()
        self.feature_specs = (
            N.DenseSpec(f"{FEATURES}.0", W.OBS_DIM, HIDDEN),
            N.DenseSpec(f"{FEATURES}.1", HIDDEN, HIDDEN),
        )
        for spec in self.feature_specs:
            N.init_dense(self.store, spec, rng)
        if end_to_end:
            heads = {TASK_HEAD: N.DenseSpec(f"head.{TASK_HEAD}", HIDDEN, 6, "identity")}
        else:
            heads = {
                name: N.DenseSpec(f"head.{name}", HIDDEN, 2 * k, "identity")
                for name, k in zip(HEAD_NAMES, HEAD_ACTION_DIMS)
            }
        self.head_specs = heads
        for spec in heads.values():
            N.init_dense(self.store, spec, rng)

    def head_name(self, behaviour: int) -> str:
        return TASK_HEAD if self.end_to_end else HEAD_NAMES[behaviour]

    def action_dim(self, behaviour: int) -> int:
        return 3 if self.end_to_end else HEAD_ACTION_DIMS[behaviour]

    def features(self, obs) -> N.Tensor:
        h = (np.asarray(obs) - OBS_SHIFT) / OBS_SCALE
        for spec in self.feature_specs:
            h = N.forward_dense(self.store, spec, h)
        return h

    def head(self, behaviour: int, feats) -> N.Tensor:
        return N.forward_dense(self.store, self.head_specs[self.head_name(behaviour)], feats)

    def policy(self, behaviour: int, obs, noise, feats=None) -> N.GaussianHeadOutput:
        if feats is None:
            feats = self.features(obs)
        return N.sample_squashed_gaussian(self.head(behaviour, feats), noise)

    def features_frozen(self) -> bool:
        return all(p.frozen for p in self.store if p.name.startswith(FEATURES))

    def clone(self) -> "BehaviourNet":
        twin = BehaviourNet.__new__(BehaviourNet)
        twin.end_to_end = self.end_to_end
        twin.feature_specs = self.feature_specs
        twin.head_specs = self.head_specs
        twin.store = N.ParameterStore()
        for p in self.store:
            twin.store.add(p.name, p.value)
            twin.store[p.name].requires_grad = p.requires_grad
        return twin

    def sync_from(self, other: "BehaviourNet") -> None:
        for p in self.store:
            p.value[...] = other.store[p.name].value


def bc_loss(predicted, target) -> N.Tensor:
    """Squared Euclidean distance between predicted and demonstrated actions."""
    predicted = predicted if isinstance(predicted, N.Tensor) else N.constant(predicted)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {target.shape}")
    return G.sum_squares(G.sub(predicted, target))


def normalise(action: W.Action, dim: int) -> np.ndarray:
    """Expert action scaled by the clamp limits, keeping the first ``dim`` components."""
    act = action.clamped()
    full = np.empty(4)
    full[:3] = act.dpos / W.MAX_DPOS
    full[3] = act.dyaw / W.MAX_DYAW
    return full[:dim]


def to_world_action(squashed: np.ndarray, behaviour: int, state: W.WorldState) -> W.Action:
    """Map a network output in (-1, 1)^k to a world action with rule-based fingers."""
    dyaw = squashed[3] * W.MAX_DYAW if squashed.shape[0] > 3 else 0.0
    return W.Action(squashed[:3] * W.MAX_DPOS, float(dyaw), X.aperture_rule(behaviour, state))


# ---- controllers ---------------------------------------------------------

EXPERT, NETWORK = "expert", "network"


def act(net: BehaviourNet | None, source: str, behaviour: int, state: W.WorldState,
        obs: np.ndarray, rng: np.random.Generator, feats=None) -> W.Action:
    """Action from an expert or (without gradient tracking) from a network head.

    ``feats`` may carry precomputed feature activations for ``obs``.
    """
    if source == EXPERT:
        return X.EXPERTS[behaviour](state)
    noise = rng.standard_normal(net.action_dim(behaviour))
    with N.no_grad():
        out = net.policy(behaviour, obs, noise, feats)
    return to_world_action(out.action.value, behaviour, state)


# ---- training ------------------------------------------------------------

class SuccessWindow:
    """Trailing success rate with a fixed denominator of ``size`` episodes."""

    def __init__(self, size: int = 100):
        self.size = size
        self.hits = deque(maxlen=size)

    def push(self, success: bool) -> float:
        self.hits.append(bool(success))
        return self.rate

    @property
    def rate(self) -> float:
        return sum(self.hits) / self.size


@dataclass
class EpisodeRecord:
    episode: int
    success: bool
    window: float
    phase: str
    sources: tuple[str, ...] = ()
    bc_loss: float = float("nan")


@dataclass
class TrainingLog:
    behaviour: int
    records: list[EpisodeRecord] = field(default_factory=list)
    stop_reason: str = "budget"

    @property
    def episodes(self) -> int:
        return len(self.records)

    @property
    def final_window(self) -> float:
        return self.records[-1].window if self.records else 0.0


@dataclass
class BcSettings:
    lr: float = 3e-4
    window: int = 100
    patience: int = 1000


class Trainer:
    """Per-run training context: network, optimiser and random streams.

    The gripper is driven by ``actor``, a copy of the network synced at the
    start of every episode, while the learner takes its Adam step after every
    environment step.  Episode success therefore measures the policy the
    episode started with rather than one adapting to the expert mid-episode.
    """

    def __init__(self, net: BehaviourNet, seed: int, settings: BcSettings | None = None):
        self.net = net
        self.actor = net.clone()
        self.settings = settings or BcSettings()
        self.optim = N.Adam(lr=self.settings.lr)
        seq = np.random.SeedSequence(seed)
        world_seq, noise_seq = seq.spawn(2)
        self.world_rng = np.random.default_rng(world_seq)
        self.noise_rng = np.random.default_rng(noise_seq)
        self.episode = 0

    def next_world_seed(self) -> int:
        return int(self.world_rng.integers(2**31 - 1))

    def bc_step(self, behaviour: int, state: W.WorldState, obs: np.ndarray,
                expert_phase: int | None = None) -> tuple[W.Action, float]:
        """Act with the network, regress onto the expert, take one optimiser step.

        ``expert_phase`` picks the demonstrating expert (and finger rule) when
        it differs from the head being trained, as in end-to-end training.
        """
        net = self.net
        phase = behaviour if expert_phase is None else expert_phase
        dim = net.action_dim(behaviour)
        target = normalise(X.EXPERTS[phase](state), dim)
        noise = self.noise_rng.standard_normal(dim)
        with N.no_grad():
            executed = self.actor.policy(behaviour, obs, noise).action.value
        out = net.policy(behaviour, obs, noise)
        loss = bc_loss(out.action, target)
        grads = N.backward(loss)
        if grads:
            self.optim.apply(net.store, grads)
        return to_world_action(executed, phase, state), float(loss.value)

    def run_episode(self, behaviour: int, sources: tuple[str, str, str]) -> tuple[bool, float]:
        """One BC episode for ``behaviour``; returns (success, mean loss).

        Phases before the trained one are driven by ``sources``; the episode
        ends as soon as the trained phase finishes or runs out of steps.  A
        failed scaffold phase ends the episode as a failure with no update.
        """
        self.actor.sync_from(self.net)
        state = W.reset(self.next_world_seed())
        prev = state
        losses = []
        for phase in range(behaviour + 1):
            done = W.PHASE_PREDICATES[phase]
            for _ in range(W.BEHAVIOUR_HORIZON):
                if done(state):
                    break
                obs = W.observe(state, prev)
                if phase == behaviour:
                    action, loss = self.bc_step(phase, state, obs)
                    losses.append(loss)
                else:
                    action = act(self.actor, sources[phase], phase, state, obs, self.noise_rng)
                prev, state = state, W.step(state, action)
            if not done(state):
                return False, _mean(losses)
        return True, _mean(losses)

    def run_task_episode(self) -> tuple[bool, float]:
        """End-to-end BC episode: one head drives x, y, z for the whole task."""
        self.actor.sync_from(self.net)
        state = W.reset(self.next_world_seed())
        prev = state
        approached = False
        losses = []
        for _ in range(W.TASK_HORIZON):
            if W.task_success(state):
                break
            approached = approached or W.approach_done(state)
            phase = W.required_phase(state, approached)
            obs = W.observe(state, prev)
            action, loss = self.bc_step(0, state, obs, expert_phase=phase)
            losses.append(loss)
            prev, state = state, W.step(state, action)
        return W.task_success(state), _mean(losses)

    def train(self, behaviour: int, sources: tuple[str, str, str], max_episodes: int,
              phase_label: str | None = None, offset: int = 0,
              on_record=None) -> TrainingLog:
        """Train until the success window hits 1.0, stalls, or episodes run out.

        ``on_record`` is called with each EpisodeRecord as soon as it exists.
        """
        s = self.settings
        log = TrainingLog(behaviour)
        window = SuccessWindow(s.window)
        best, since_best = -1.0, 0
        label = phase_label or PHASE_LABELS[behaviour]
        for i in range(max_episodes):
            if self.net.end_to_end:
                ok, loss = self.run_task_episode()
            else:
                ok, loss = self.run_episode(behaviour, sources)
            rate = window.push(ok)
            self.episode += 1
            log.records.append(EpisodeRecord(offset + i, ok, rate, label, tuple(sources), loss))
            if on_record is not None:
                on_record(log.records[-1])
            if rate >= 1.0:
                log.stop_reason = "converged"
                break
            if rate > best:
                best, since_best = rate, 0
            else:
                since_best += 1
                if since_best >= s.patience:
                    log.stop_reason = "plateau"
                    break
        return log


def _mean(xs) -> float:
    return float(np.mean(xs)) if xs else float("nan")


def train_behaviour(net: BehaviourNet, behaviour: int, scaffold: tuple[str, str, str],
                    episodes: int, seed: int = 0,
                    settings: BcSettings | None = None) -> TrainingLog:
    """Convenience wrapper: fresh trainer, one behaviour."""
    return Trainer(net, seed, settings).train(behaviour, scaffold, episodes)


# ---- strategies ----------------------------------------------------------

class Strategy(enum.Enum):
    SEQUENTIAL = "Sequential"
    SEQUENTIAL_FREEZING = "SequentialFreezing"
    SEPARATE = "Separate"
    SEPARATE_FREEZING = "SeparateFreezing"
    END_TO_END = "EndToEnd"

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        key = name.replace("+", "").replace(" ", "").replace("-", "").replace("_", "").lower()
        for s in cls:
            if s.value.lower() == key:
                return s
        raise ValueError(f"unknown strategy {name!r}")


TABLE_ORDER = tuple(Strategy)


@dataclass(frozen=True)
class StrategyPlan:
    strategy: Strategy
    # scaffold[b][p]: controller source for phase p while behaviour b trains
    scaffold: tuple[tuple[str, str, str], ...]
    freeze_after_approach: bool

    @property
    def end_to_end(self) -> bool:
        return self.strategy is Strategy.END_TO_END


def plan_for(strategy: Strategy | str) -> StrategyPlan:
    if isinstance(strategy, str):
        strategy = Strategy.parse(strategy)
    E, Nw, T = EXPERT, NETWORK, "trained"
    sequential = ((T, E, E), (Nw, T, E), (Nw, Nw, T))
    separate = ((T, E, E), (E, T, E), (E, E, T))
    table = {
        Strategy.SEQUENTIAL: (sequential, False),
        Strategy.SEQUENTIAL_FREEZING: (sequential, True),
        Strategy.SEPARATE: (separate, False),
        Strategy.SEPARATE_FREEZING: (separate, True),
        Strategy.END_TO_END: ((), False),
    }
    scaffold, freeze = table[strategy]
    return StrategyPlan(strategy, scaffold, freeze)


@dataclass
class CurvePoint:
    episode: int
    window_success: float
    phase: str


@dataclass
class StrategyLog:
    strategy: Strategy
    seed: int
    curve: list[CurvePoint] = field(default_factory=list)
    phase_logs: list[TrainingLog] = field(default_factory=list)
    completed: bool = False
    rounds: int = 0
    # feature-extractor checkpoint bytes after each phase, Freezing plans only
    feature_checkpoints: dict[str, bytes] = field(default_factory=dict, repr=False)
    net: BehaviourNet | None = field(default=None, repr=False)

    @property
    def episodes(self) -> int:
        return len(self.curve)

    @property
    def feature_digests(self) -> dict[str, str]:
        return {k: hashlib.sha256(v).hexdigest() for k, v in self.feature_checkpoints.items()}

    def task_curve(self) -> list[CurvePoint]:
        return [p for p in self.curve if p.phase == "d"]


@dataclass
class StrategySettings:
    bc: BcSettings = field(default_factory=BcSettings)
    eval_episodes: int = 100
    success_threshold: float = 0.9


def run_strategy(plan: StrategyPlan | Strategy | str, episode_budget: int, seed: int = 0,
                 settings: StrategySettings | None = None,
                 net: BehaviourNet | None = None,
                 log: StrategyLog | None = None) -> StrategyLog:
    """Execute a training strategy until the combined task succeeds or the budget runs out.

    A round trains (a), (b), (c) in turn with the plan's scaffolds, then runs
    ``eval_episodes`` of manually sequenced combination (phase "d").  Rounds
    repeat while the combination stays below ``success_threshold``.
    Every episode, training or evaluation, counts against the budget.
    Passing ``log`` lets a caller keep the partial curve if training raises.
    """
    if not isinstance(plan, StrategyPlan):
        plan = plan_for(plan)
    settings = settings or StrategySettings()
    seq = np.random.SeedSequence([seed, 0x5EED])
    init_seq, run_seq = seq.spawn(2)
    if net is None:
        net = BehaviourNet(np.random.default_rng(init_seq), end_to_end=plan.end_to_end)
    trainer = Trainer(net, int(run_seq.generate_state(1)[0]), settings.bc)
    if log is None:
        log = StrategyLog(plan.strategy, seed)
    log.net = net
    remaining = episode_budget

    def record(r: EpisodeRecord) -> None:
        log.curve.append(CurvePoint(r.episode, r.window, r.phase))

    if plan.end_to_end:
        tlog = trainer.train(0, (), remaining, phase_label="d", on_record=record)
        log.phase_logs.append(tlog)
        log.rounds = 1
        log.completed = any(p.window_success >= settings.success_threshold for p in log.curve)
        return log

    while remaining > 0:
        log.rounds += 1
        for b in range(3):
            if remaining <= 0:
                break
            sources = tuple(EXPERT if s == EXPERT else NETWORK for s in plan.scaffold[b])
            tlog = trainer.train(b, sources, remaining, offset=log.episodes, on_record=record)
            remaining -= tlog.episodes
            log.phase_logs.append(tlog)
            if b == W.APPROACH and plan.freeze_after_approach and not net.features_frozen():
                net.store.freeze(FEATURES)
            if plan.freeze_after_approach:
                log.feature_checkpoints[f"{log.rounds}{PHASE_LABELS[b]}"] = N.to_bytes(net.store, FEATURES)
        if remaining <= 0:
            break
        window = SuccessWindow(settings.bc.window)
        n_eval = min(settings.eval_episodes, remaining)
        for _ in range(n_eval):
            ok = run_combined_episode(net, trainer.next_world_seed(), trainer.noise_rng)
            log.curve.append(CurvePoint(log.episodes, window.push(ok), "d"))
        remaining -= n_eval
        if window.rate >= settings.success_threshold:
            log.completed = True
            break
    return log


# ---- combined evaluation -------------------------------------------------

def run_combined_episode(net: BehaviourNet | None, world_seed: int,
                         rng: np.random.Generator,
                         sources: tuple[str, str, str] = (NETWORK, NETWORK, NETWORK)) -> bool:
    """Manually sequenced episode: each behaviour runs until its predicate holds."""
    state = W.reset(world_seed)
    prev = state
    for phase, done in enumerate(W.PHASE_PREDICATES):
        for _ in range(W.BEHAVIOUR_HORIZON):
            if done(state):
                break
            obs = W.observe(state, prev)
            action = act(net, sources[phase], phase, state, obs, rng)
            prev, state = state, W.step(state, action)
        if not done(state):
            return False
    return W.task_success(state)


def evaluate_combined(net: BehaviourNet | None, seeds, rng_seed: int = 0,
                      sources: tuple[str, str, str] = (NETWORK, NETWORK, NETWORK)) -> float:
    """Fraction of seeds on which the manually sequenced behaviours complete the task."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("evaluate_combined needs at least one seed")
    rng = np.random.default_rng(rng_seed)
    return sum(run_combined_episode(net, s, rng, sources) for s in seeds) / len(seeds)


# ---- fixed-batch BC ------------------------------------------------------

@dataclass
class BcBatch:
    observations: np.ndarray  # (n, 28)
    targets: np.ndarray  # (n, k), each in [-1, 1]
    behaviour: int


def collect_batch(behaviour: int, n: int, seed: int = 0) -> BcBatch:
    """``n`` (observation, normalised expert action) pairs from expert rollouts."""
    rng = np.random.default_rng(seed)
    obs, targets = [], []
    dim = HEAD_ACTION_DIMS[behaviour]
    while len(obs) < n:
        state = W.reset(int(rng.integers(2**31 - 1)))
        prev = state
        for phase, done in enumerate(W.PHASE_PREDICATES[:behaviour + 1]):
            for _ in range(W.BEHAVIOUR_HORIZON):
                if done(state):
                    break
                action = X.EXPERTS[phase](state)
                if phase == behaviour:
                    obs.append(W.observe(state, prev))
                    targets.append(normalise(action, dim))
                prev, state = state, W.step(state, action)
    return BcBatch(np.array(obs[:n]), np.array(targets[:n]), behaviour)


def batch_loss(net: BehaviourNet, batch: BcBatch, noise: np.ndarray) -> N.Tensor:
    """Mean per-pair BC loss over the batch."""
    out = net.policy(batch.behaviour, batch.observations, noise)
    return G.scale(bc_loss(out.action, batch.targets), 1.0 / len(batch.targets))


def fit_batch(net: BehaviourNet, batch: BcBatch, steps: int, lr: float = 3e-4,
              seed: int = 0) -> list[float]:
    """Full-batch Adam on a fixed BC batch with fresh noise per step; returns the loss trace."""
    rng = np.random.default_rng(seed)
    optim = N.Adam(lr=lr)
    trace = []
    for _ in range(steps):
        loss = batch_loss(net, batch, rng.standard_normal(batch.targets.shape))
        optim.apply(net.store, N.backward(loss))
        trace.append(float(loss.value))
    return trace
