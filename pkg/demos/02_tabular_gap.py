"""The state-action and state-transition objectives differ by exactly the
inverse-dynamics disagreement, which vanishes when each transition has only
one action that can cause it."""
import numpy as np

from lfoeq.tabular import kl_report, make_mdp, random_policy

rng = np.random.default_rng(0)
for kind, S, A in (("unique_action", 6, 3), ("multi_action", 3, 2), ("random_stochastic", 5, 3)):
    mdp = make_mdp(kind, S, A, rng_seed=1)
    rep = kl_report(mdp, random_policy(S, A, rng), random_policy(S, A, rng))
    print(f"{kind:<18} kl_sa={rep.kl_sa:.6f} kl_ss={rep.kl_ss:.6f} idd={rep.idd:.6f} "
          f"residual={rep.idd - (rep.kl_sa - rep.kl_ss):.1e}")
