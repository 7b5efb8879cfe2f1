"""Dense, LSTM and squashed-Gaussian building blocks on top of the graph ops."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from . import graph as G
from .graph import Tensor
from .store import ParameterStore

LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 2.0


@dataclass(frozen=True)
class DenseSpec:
    name: str
    in_dim: int
    out_dim: int
    activation: Literal["tanh", "identity"] = "tanh"

    def __post_init__(self):
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ValueError(f"dense dims must be positive: {self}")
        if self.activation not in ("tanh", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class LstmSpec:
    name: str
    in_dim: int
    hidden_dim: int

    def __post_init__(self):
        if self.in_dim <= 0 or self.hidden_dim <= 0:
            raise ValueError(f"lstm dims must be positive: {self}")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_dense(store: ParameterStore, spec: DenseSpec, rng: np.random.Generator) -> None:
    store.add(f"{spec.name}.W", _uniform(rng, (spec.out_dim, spec.in_dim), spec.in_dim))
    store.add(f"{spec.name}.b", np.zeros(spec.out_dim))


def init_lstm(store: ParameterStore, spec: LstmSpec, rng: np.random.Generator) -> None:
    h = spec.hidden_dim
    store.add(f"{spec.name}.Wx", _uniform(rng, (4 * h, spec.in_dim), spec.in_dim))
    store.add(f"{spec.name}.Wh", _uniform(rng, (4 * h, h), h))
    b = np.zeros(4 * h)
    b[h:2 * h] = 1.0  # forget gate
    store.add(f"{spec.name}.b", b)


def _check_len(x, n: int, what: str, batch_ok: bool = False) -> None:
    got = np.shape(x.value if isinstance(x, Tensor) else x)
    if got == (n,) or (batch_ok and len(got) == 2 and got[1] == n):
        return
    raise ValueError(f"{what}: expected input of shape ({n},), got {got}")


def forward_dense(store: ParameterStore, spec: DenseSpec, x) -> Tensor:
    _check_len(x, spec.in_dim, spec.name, batch_ok=True)
    out = G.affine(store[f"{spec.name}.W"], x, store[f"{spec.name}.b"])
    return G.tanh(out) if spec.activation == "tanh" else out


def zero_lstm_state(spec: LstmSpec) -> tuple[Tensor, Tensor]:
    return G.constant(np.zeros(spec.hidden_dim)), G.constant(np.zeros(spec.hidden_dim))


def forward_lstm(store: ParameterStore, spec: LstmSpec, x, state):
    """One LSTM step.  Gate rows are ordered input, forget, output, candidate.

    Returns ``(h_new, (h_new, c_new))``.
    """
    _check_len(x, spec.in_dim, spec.name)
    h, c = (s if isinstance(s, Tensor) else G.constant(s) for s in state)
    _check_len(h, spec.hidden_dim, spec.name + " hidden state")
    _check_len(c, spec.hidden_dim, spec.name + " cell state")
    n = spec.hidden_dim
    z = G.add(G.affine(store[f"{spec.name}.Wx"], x, store[f"{spec.name}.b"]),
              G.matvec(store[f"{spec.name}.Wh"], h))
    gates = G.sigmoid(G.take(z, slice(0, 3 * n)))
    i = G.take(gates, slice(0, n))
    f = G.take(gates, slice(n, 2 * n))
    o = G.take(gates, slice(2 * n, 3 * n))
    cand = G.tanh(G.take(z, slice(3 * n, 4 * n)))
    c_new = G.add(G.mul(f, c), G.mul(i, cand))
    h_new = G.mul(o, G.tanh(c_new))
    return h_new, (h_new, c_new)


@dataclass
class GaussianHeadOutput:
    mu: Tensor
    log_sigma: Tensor
    action: Tensor

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.value)


def sample_squashed_gaussian(raw: Tensor, noise) -> GaussianHeadOutput:
    """Reparameterised sample ``tanh(mu + exp(log_sigma) * noise)``.

    The last axis of ``raw`` holds ``k`` means followed by ``k`` log standard
    deviations; the log standard deviations are clamped to [-5, 2].  Leading
    axes, if any, are batch axes and ``noise`` must match them.
    """
    raw = raw if isinstance(raw, Tensor) else G.constant(raw)
    k2 = raw.value.shape[-1]
    if k2 % 2:
        raise ValueError(f"head output must have even length, got {k2}")
    k = k2 // 2
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != raw.value.shape[:-1] + (k,):
        raise ValueError(f"noise must have shape {raw.value.shape[:-1] + (k,)}, got {noise.shape}")
    mu = G.take(raw, (Ellipsis, slice(0, k)))
    log_sigma = G.clip(G.take(raw, (Ellipsis, slice(k, k2))), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    pre = G.add(mu, G.mul(G.exp(log_sigma), noise))
    return GaussianHeadOutput(mu, log_sigma, G.tanh(pre))
