"""
Cloning the experts, and why freezing the features helps
========================================================

Each behaviour head is trained online from the expert's actions.  Sharing one
feature extractor means training grasp can undo approach unless the features
are frozen after approach is learnt.
"""

# %%
import numpy as np

from choreo import behaviours as B
from choreo import world as W

# A fixed batch of expert pairs is easy to fit: loss falls by orders of magnitude.
net = B.BehaviourNet(0)
batch = B.collect_batch(W.APPROACH, 256, seed=0)
trace = B.fit_batch(net, batch, 2000)
print(f"fixed-batch loss {trace[0]:.4f} -> {min(trace):.6f}")

# %%
# Online: train approach, then grasp, with and without freezing.
held_out = range(10**6, 10**6 + 200)
for freeze in (False, True):
    net = B.BehaviourNet(0)
    trainer = B.Trainer(net, seed=0)
    log = trainer.train(W.APPROACH, (B.EXPERT,) * 3, 3000)
    before = B.evaluate_combined(net, held_out, sources=(B.NETWORK, B.EXPERT, B.EXPERT))
    if freeze:
        net.store.freeze(B.FEATURES)
    trainer.train(W.GRASP, (B.EXPERT,) * 3, 1500)
    after = B.evaluate_combined(net, held_out, sources=(B.NETWORK, B.EXPERT, B.EXPERT))
    print(f"freeze={freeze}: approach learnt in {log.episodes} episodes; "
          f"held-out approach+experts {before:.2f} before grasp training, {after:.2f} after")
