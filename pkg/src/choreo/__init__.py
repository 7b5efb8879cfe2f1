"""Pick-and-place behaviours learnt by imitation, sequenced by a learnt choreographer.

Modules: ``world`` (kinematic task), ``experts`` (scripted controllers),
``nncore`` (autodiff, layers, Adam, checkpoints), ``behaviours`` (behaviour
cloning and training strategies), ``choreographer`` (actor-critic sequencer),
``harness`` (experiment runner and CLI).
"""
__version__ = "0.1.0"
