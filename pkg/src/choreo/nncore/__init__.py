"""Minimal float64 neural-network engine with reverse-mode gradients."""
from . import graph
from .graph import NonFiniteError, Tensor, constant, no_grad
from .layers import (
    DenseSpec,
    GaussianHeadOutput,
    LstmSpec,
    forward_dense,
    forward_lstm,
    init_dense,
    init_lstm,
    sample_squashed_gaussian,
    zero_lstm_state,
)
from .store import (
    Adam,
    Parameter,
    ParameterStore,
    apply_gradients,
    backward,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)

__all__ = [
    "Adam", "DenseSpec", "GaussianHeadOutput", "LstmSpec", "NonFiniteError",
    "Parameter", "ParameterStore", "Tensor", "apply_gradients", "backward",
    "constant", "forward_dense", "forward_lstm", "from_bytes", "graph",
    "init_dense", "init_lstm", "load_checkpoint", "no_grad", "sample_squashed_gaussian",
    "save_checkpoint", "to_bytes", "zero_lstm_state",
]
