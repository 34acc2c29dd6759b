"""Controls can be read back off a state transition.

A pendulum is driven by the hand-written swing-up controller.  From the
recorded (s, s') pairs alone the exact torque is recovered, a random search
finds no second torque that reaches the same s', and with bounded noise on s'
the recovered torque only moves inside a small interval.
"""
import numpy as np

from lfoeq.analysis import action_intervals
from lfoeq.dynamics import StateTransition, inverse_dynamics, uniqueness_probe
from lfoeq.envs import make_task
from lfoeq.expert import reference_controller, rollout_dataset

task = make_task("pendulum")
ds = rollout_dataset(task, reference_controller(task), 5, seed=0)
s, u, s1 = ds.transitions()
print(f"{len(s)} transitions, mean return {ds.returns.mean():.1f}")

u_rec = inverse_dynamics(task.model, StateTransition(s, s1))
print(f"max |recovered - applied| torque: {np.abs(u_rec - u).max():.2e}")

found = sum(uniqueness_probe(task.model, StateTransition(s[i], s1[i]), 1000, rng_seed=i).alternatives_found
            for i in range(0, len(s), 10))
print(f"alternative torques found by random search: {found}")

for eps in (0.0, 0.01, 0.02):
    width = action_intervals(task.model, s, s1, eps)
    print(f"noise bound {eps:<5}: recovered torque interval width {width.max():.3f}")
