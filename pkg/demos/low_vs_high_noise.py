"""Choosing between a quiet and a noisy copy of every action.

Each base action appears twice: once with noise 0.5 and once with a larger
noise level.  Both copies have the same mean reward, so the noisy copy is
never worth playing.  UCB gives both copies the same index, so which one it
plays is down to tie breaking (here the quiet copy comes first), and its
confidence set has to assume the worst noise level.  IDS weighs the
information an evaluation buys against its cost and prefers the quiet copy
for that reason.
"""
import numpy as np

from hetids import low_noise_subset, make_environment, run_experiment, run_trial

# %% One environment, one trial per policy
env = make_environment({"preset": "example1_pairs", "rho_high": 2.0}, seed=0)
print(f"{env.n} actions, noise levels {sorted(set(env.rho.tolist()))}")

for policy in ("ucb", "ids-ucb", "dids-ucb"):
    tr = run_trial(env, policy, T=500, seed=0)
    quiet = np.mean(tr.action % 2 == 0)
    print(f"{policy:9s} regret {tr.regret:7.2f}  share of quiet copies {quiet:.2f}")

# %% Against UCB on the quiet copies alone
# If IDS really ignores the noisy copies, it should do about as well as UCB
# given only the quiet half of the action set.
cfg = {"preset": "example1_pairs", "rho_high": 2.0}
ids = run_experiment(cfg, 20, ["ids-ucb"], T=500, workers=1)
ucb = run_experiment(cfg, 20, ["ucb"], T=500, workers=1, derive_env=low_noise_subset)
for name, res, p in (("ids-ucb, all actions", ids, "ids-ucb"), ("ucb, quiet only", ucb, "ucb")):
    mean, band = res.final(p)
    print(f"{name:22s} {mean:7.2f} +- {band:.2f}")
