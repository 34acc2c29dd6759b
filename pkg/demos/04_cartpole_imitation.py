"""GAIL (states and actions) and GAIfO (states only) on cartpole.

Demonstrations come from the linear reference controller; both imitators are
trained for a short budget with three seeds and their final deterministic
returns are compared against the pooled spread.  Takes a few minutes.
"""
import numpy as np

from lfoeq.analysis import equivalent, pooled_std, run_cells
from lfoeq.envs import make_task
from lfoeq.expert import reference_controller, rollout_dataset
from lfoeq.protocol import imitation_config

task = make_task("cartpole")
demos = rollout_dataset(task, reference_controller(task), 10, seed=0)
print(f"demonstrations: {len(demos)} trajectories, mean return {demos.returns.mean():.1f}")

config = imitation_config("cartpole").replace(total_env_steps=60_000, eval_every=5)
seeds = (0, 1, 2)
cells = [(demos, config.replace(mode="gail", seed=k)) for k in seeds]
cells += [(demos.strip_actions(), config.replace(mode="gaifo", seed=k)) for k in seeds]
curves = run_cells(cells)
gail = np.array([c.final_return for c in curves[:3]])
gaifo = np.array([c.final_return for c in curves[3:]])
print(f"gail  {gail.mean():.1f} ± {gail.std(ddof=1):.1f}")
print(f"gaifo {gaifo.mean():.1f} ± {gaifo.std(ddof=1):.1f}")
print(f"|difference| {abs(gail.mean() - gaifo.mean()):.1f}, pooled std {pooled_std(gail, gaifo):.1f}, "
      f"equivalent: {equivalent(gail, gaifo)}")
