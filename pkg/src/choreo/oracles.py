"""Independent numerical oracles for the gradient engine and the return estimators.

Gradients are checked along random unit directions in parameter space against
central finite differences; advantage and return estimators against
quadratic-time brute-force sums taken straight from their definitions.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nncore as N
from .nncore import graph as G

FD_EPS = 1e-6
GRAD_TOLERANCE = 1e-5
RETURN_TOLERANCE = 1e-10


@dataclass
class OracleResult:
    name: str
    draws: int
    worst: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.worst <= self.tolerance

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.name}: worst {self.worst:.3e} <= {self.tolerance:.0e} "
                f"over {self.draws} draws ({self.seconds:.1f}s)")


def relative_error(a: float, b: float, floor: float = 1e-12) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def directional_check(store: N.ParameterStore, loss_fn: Callable[[], N.Tensor],
                      rng: np.random.Generator, eps: float = FD_EPS) -> float:
    """Relative error between the analytic and central-difference slope of
    ``loss_fn`` along one random unit direction over the trainable parameters."""
    grads = N.backward(loss_fn())
    params = [p for p in store if not p.frozen]
    direction = {p.name: rng.standard_normal(p.value.shape) for p in params}
    norm = np.sqrt(sum(np.sum(d * d) for d in direction.values()))
    analytic = 0.0
    for p in params:
        direction[p.name] /= norm
        if p.name in grads:
            analytic += float(np.sum(grads[p.name] * direction[p.name]))
    base = {p.name: p.value.copy() for p in params}

    def shifted(k: float) -> float:
        for p in params:
            p.value[...] = base[p.name] + k * direction[p.name]
        with N.no_grad():
            return float(loss_fn().value)

    try:
        numeric = (shifted(eps) - shifted(-eps)) / (2.0 * eps)
    finally:
        for p in params:
            p.value[...] = base[p.name]
    return relative_error(analytic, numeric)


def _timed(name: str, draws: int, tolerance: float, one_draw) -> OracleResult:
    start = time.perf_counter()
    worst = max(one_draw(i) for i in range(draws))
    return OracleResult(name, draws, worst, tolerance, time.perf_counter() - start)


# ---- gradient checks -----------------------------------------------------

def check_dense(draws: int = 100, seed: int = 0) -> OracleResult:
    def one(i):
        rng = np.random.default_rng([seed, i])
        store = N.ParameterStore()
        d_in, d_hid, d_out = (int(v) for v in rng.integers(2, 9, size=3))
        first = N.DenseSpec("d0", d_in, d_hid, "tanh")
        second = N.DenseSpec("d1", d_hid, d_out, "identity")
        N.init_dense(store, first, rng)
        N.init_dense(store, second, rng)
        store["d0.b"].value[...] = rng.normal(0, 0.3, d_hid)
        x = rng.standard_normal(d_in)
        weights = rng.standard_normal(d_out)

        def loss():
            out = N.forward_dense(store, second, N.forward_dense(store, first, x))
            return G.dot(out, weights)

        return directional_check(store, loss, rng)

    return _timed("dense", draws, GRAD_TOLERANCE, one)


def check_lstm(draws: int = 100, seed: int = 1, steps: int = 4) -> OracleResult:
    def one(i):
        rng = np.random.default_rng([seed, i])
        store = N.ParameterStore()
        spec = N.LstmSpec("lstm", int(rng.integers(2, 7)), int(rng.integers(2, 7)))
        N.init_lstm(store, spec, rng)
        xs = rng.standard_normal((steps, spec.in_dim))
        wh, wc = rng.standard_normal((2, spec.hidden_dim))

        def loss():
            state = N.zero_lstm_state(spec)
            for x in xs:
                _, state = N.forward_lstm(store, spec, x, state)
            return G.add(G.dot(state[0], wh), G.dot(state[1], wc))

        return directional_check(store, loss, rng)

    return _timed("lstm", draws, GRAD_TOLERANCE, one)


def check_gaussian_head(draws: int = 100, seed: int = 2) -> OracleResult:
    from .behaviours import bc_loss

    def one(i):
        rng = np.random.default_rng([seed, i])
        store = N.ParameterStore()
        k = int(rng.integers(1, 5))
        spec = N.DenseSpec("head", 6, 2 * k, "identity")
        N.init_dense(store, spec, rng)
        x = rng.standard_normal(6)
        noise = rng.standard_normal(k)
        target = rng.uniform(-1, 1, k)

        def loss():
            out = N.sample_squashed_gaussian(N.forward_dense(store, spec, x), noise)
            return bc_loss(out.action, target)

        return directional_check(store, loss, rng)

    return _timed("gaussian_head", draws, GRAD_TOLERANCE, one)


def check_behaviour_net(draws: int = 100, seed: int = 5) -> OracleResult:
    """BC loss through the full feature extractor and one behaviour head."""
    from .behaviours import HEAD_NAMES, BehaviourNet, bc_loss
    from .world import OBS_DIM, WORKSPACE_HIGH, WORKSPACE_LOW

    def one(i):
        rng = np.random.default_rng([seed, i])
        net = BehaviourNet(rng)
        behaviour = int(rng.integers(len(HEAD_NAMES)))
        k = net.action_dim(behaviour)
        obs = rng.normal(0.0, 0.05, OBS_DIM)
        obs[0:3] = rng.uniform(WORKSPACE_LOW, WORKSPACE_HIGH)
        noise = rng.standard_normal(k)
        target = rng.uniform(-1, 1, k)

        def loss():
            return bc_loss(net.policy(behaviour, obs, noise).action, target)

        return directional_check(net.store, loss, rng)

    return _timed("behaviour_net", draws, GRAD_TOLERANCE, one)


def synthetic_rollout(net, rng: np.random.Generator, length: int):
    from .choreographer import Rollout, RolloutStep, select_behaviour
    from .world import OBS_DIM, WORKSPACE_HIGH, WORKSPACE_LOW

    steps = []
    state = net.initial_state()
    for t in range(length):
        obs = rng.normal(0.0, 0.05, OBS_DIM)
        for lo in (0, 3, 25):
            obs[lo:lo + 3] = rng.uniform(WORKSPACE_LOW, WORKSPACE_HIGH)
        choice, logp, value, new_state = select_behaviour(net, obs, state, rng)
        steps.append(RolloutStep(obs, state, choice, logp, value,
                                 float(rng.normal()), t == length - 1 and rng.random() < 0.5))
        state = new_state
    return Rollout(steps, float(rng.normal()), steps[-1].terminal)


def check_actor_critic(draws: int = 100, seed: int = 3, length: int = 3) -> OracleResult:
    from .behaviours import BehaviourNet
    from .choreographer import A2cSettings, ChoreographerNet, a2c_loss

    behaviours = BehaviourNet(seed)
    settings = A2cSettings()

    def one(i):
        rng = np.random.default_rng([seed, i])
        net = ChoreographerNet(behaviours, rng)
        rollout = synthetic_rollout(net, rng, length)
        return directional_check(net.store, lambda: a2c_loss(net, rollout, settings)[0], rng)

    return _timed("actor_critic", draws, GRAD_TOLERANCE, one)


# ---- return estimators ---------------------------------------------------

def brute_force_return(rewards, gamma: float) -> np.ndarray:
    n = len(rewards)
    return np.array([sum(gamma ** (i - t) * rewards[i] for i in range(t, n)) for t in range(n)])


def brute_force_gae(rewards, values, terminals, gamma: float, lam: float) -> np.ndarray:
    """A_t = sum_l (gamma lam)^l delta_{t+l}, summed until the first terminal step."""
    n = len(rewards)
    delta = [rewards[t] + (0.0 if terminals[t] else gamma * values[t + 1]) - values[t]
             for t in range(n)]
    out = np.zeros(n)
    for t in range(n):
        for l in range(n - t):
            out[t] += (gamma * lam) ** l * delta[t + l]
            if terminals[t + l]:
                break
    return out


def check_returns(draws: int = 100, seed: int = 4) -> OracleResult:
    from .choreographer import discounted_return, gae

    def one(i):
        rng = np.random.default_rng([seed, i])
        n = int(rng.integers(1, 60))
        gamma, lam = rng.uniform(0, 1, 2)
        rewards = rng.normal(0, 5, n)
        values = rng.normal(0, 5, n + 1)
        terminals = rng.random(n) < 0.1
        e1 = np.max(np.abs(discounted_return(rewards, gamma) - brute_force_return(rewards, gamma)))
        e2 = np.max(np.abs(gae(rewards, values, terminals, gamma, lam)
                           - brute_force_gae(rewards, values, terminals, gamma, lam)))
        return float(max(e1, e2))

    return _timed("gae_and_returns", draws, RETURN_TOLERANCE, one)


ORACLES = (check_dense, check_lstm, check_gaussian_head, check_behaviour_net,
           check_actor_critic, check_returns)


def run_oracle_suite(draws: int = 100) -> list[OracleResult]:
    return [oracle(draws) for oracle in ORACLES]
