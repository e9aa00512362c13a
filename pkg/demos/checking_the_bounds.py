"""Monte Carlo checks of the confidence sets and the regret inequality.

The confidence sets promise that the true parameter stays inside them at
every round with probability at least 1 - delta.  We count the trajectories
where it escapes at least once.  The deterministic policies also satisfy a
pathwise regret bound that can be checked exactly on every trace.
"""
from hetids import (
    CheckerConfig,
    check_confidence_coverage,
    check_theorem2,
    make_environment,
    run_trial,
)

# %% Anytime coverage of the weighted least-squares confidence set
cfg = CheckerConfig(delta=0.1, trials=300, horizon=100)
for kind in ("linear", "kernel"):
    print(check_confidence_coverage(cfg, kind).line())

# %% A wider target: coverage should track 1 - delta
print(check_confidence_coverage(CheckerConfig(delta=0.5, trials=300, horizon=100)).line())

# %% The pathwise bound R_T <= sqrt(sum psi_t * sum I_t) on a few traces
env = make_environment("heteroscedastic_linear", seed=3)
for policy in ("ucb", "w-ucb", "dids-ucb", "dids-f"):
    tr = run_trial(env, policy, T=500, seed=3)
    print(f"{policy:9s} regret {tr.regret:6.2f}  bound holds at every round: {check_theorem2(tr, env)}")
