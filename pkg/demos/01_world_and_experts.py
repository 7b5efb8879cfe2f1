"""
The pick-and-place world and its scripted experts
=================================================

A block spawns at a random position and yaw.  The gripper must hover above
it, descend and close its fingers, then carry it to a target.  Three
proportional controllers solve the phases one after another.
"""

# %%
import numpy as np

from choreo import experts as X
from choreo import world as W

s = W.reset(7)
print("block at", np.round(s.block_pos, 3), "yaw", round(s.block_yaw, 3))
print("target at", np.round(s.target_pos, 3))
print("observation width", W.observe(s, s).shape[0])

# %%
# Walk the chain by hand and note when each phase predicate fires.
for phase, (expert, done) in enumerate(zip(X.EXPERTS, W.PHASE_PREDICATES)):
    steps = 0
    while not done(s) and steps < W.BEHAVIOUR_HORIZON:
        s = W.step(s, expert(s))
        steps += 1
    print(f"phase {phase}: {steps} steps, done {done(s)}, attached {s.attached}")
print("task success", W.task_success(s))

# %%
# The chain should succeed on essentially every seed.
rate = X.expert_success_rate(range(2000))
print(f"expert chain success over 2000 seeds: {rate:.4f}")
