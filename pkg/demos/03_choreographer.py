"""
Letting a learnt choreographer sequence the behaviours
======================================================

Train behaviours with the SeparateFreezing strategy, then train an LSTM
actor-critic to pick which behaviour runs at every step, under dense and
sparse rewards.  Pass a checkpoint path to skip the behaviour training.
"""

# %%
import sys
import time

import numpy as np

from choreo import behaviours as B
from choreo import choreographer as C
from choreo import nncore as N

net = B.BehaviourNet(0)
if len(sys.argv) > 1:
    N.load_checkpoint(net.store, sys.argv[1])
else:
    t0 = time.time()
    log = B.run_strategy(B.Strategy.SEPARATE_FREEZING, 20_000, seed=0)
    net = log.net
    print(f"SeparateFreezing: {log.episodes} episodes, completed {log.completed}, "
          f"{time.time() - t0:.0f}s")

held_out = range(10**6, 10**6 + 200)
print(f"hand-sequenced success {B.evaluate_combined(net, held_out):.2f}")

# %%
episodes = 1500
for mode in ("dense", "sparse"):
    chor = C.ChoreographerNet(net, 0)
    t0 = time.time()
    log = C.train_choreographer(chor, mode, episodes, seed=0)
    curve = np.array([p.window_success for p in log.curve])
    marks = ", ".join(f"{i}: {curve[i]:.2f}" for i in range(0, len(curve), 250))
    print(f"{mode}: {log.episodes} episodes ({log.stop_reason}), {time.time() - t0:.0f}s; {marks}")
