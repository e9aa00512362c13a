"""Trial execution, aggregation and trace output."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .core import (
    STREAM_NOISE,
    STREAM_POLICY,
    ConfigError,
    Environment,
    RngStream,
    STREAM_ENV,
    fmt,
    make_environment,
)
from .policies import POLICY_IDS, Policy, PolicyConfig

log = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "trial", "t", "policy", "action", "y", "rho", "gap", "info",
    "beta", "psi_plus", "cum_regret", "info_sum",
)
DEFAULT_HORIZON = 5000


@dataclass
class Trace:
    policy: str
    trial: int
    deterministic: bool
    action: np.ndarray
    y: np.ndarray
    rho: np.ndarray
    gap: np.ndarray
    info: np.ndarray
    info_max: np.ndarray
    beta: np.ndarray
    psi_plus: np.ndarray
    atoms: np.ndarray
    weights: np.ndarray
    fallback: np.ndarray
    capped: np.ndarray
    chain: np.ndarray | None = None
    error: str | None = None

    @property
    def T(self) -> int:
        return len(self.action)

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.gap)

    @property
    def regret(self) -> float:
        return float(self.gap.sum())

    @property
    def info_sum(self) -> np.ndarray:
        return np.cumsum(self.info)

    @property
    def first_info_le_one(self) -> int | None:
        """First round (1-based) with ``max_x I_t(x) <= 1``, if any."""
        hit = np.flatnonzero(self.info_max <= 1.0)
        return int(hit[0]) + 1 if len(hit) else None

    @property
    def zero_info_rounds(self) -> np.ndarray:
        return np.flatnonzero(self.info <= 0.0)


def _policy_config(policy, overrides: Mapping | None, env: Environment | None = None) -> PolicyConfig:
    if isinstance(policy, PolicyConfig):
        return policy
    kw = dict(overrides or {})
    if env is not None and env.kernel is not None:
        # kernel truths get the kernel estimator unless told otherwise
        kw.setdefault("estimator", "kernel")
    return PolicyConfig(policy, **kw)


def run_trial(
    env: Environment,
    policy: str | PolicyConfig,
    T: int,
    seed: int,
    trial: int = 0,
    track_chain: bool = False,
    policy_overrides: Mapping | None = None,
) -> Trace:
    """Run ``T`` rounds of one policy on one environment.

    Noise and policy randomness come from independent sub-streams of
    ``seed``; the noise stream is shared by all policies with the same seed.
    A failing round ends the trial early with ``error`` set.
    """
    if T < 1:
        raise ValueError("horizon must be at least 1")
    cfg = _policy_config(policy, policy_overrides, env)
    noise = RngStream(seed, STREAM_NOISE).gen
    pol = Policy(cfg, env.features, env.rho, RngStream(seed, STREAM_POLICY), env.kernel, track_chain)
    values, rho_true, gaps = env.values, env.rho, env.gaps

    action = np.zeros(T, dtype=np.int64)
    cols = {k: np.zeros(T) for k in ("y", "info", "info_max", "beta", "psi")}
    atoms = np.full((T, 2), -1, dtype=np.int64)
    weights = np.zeros((T, 2))
    fallback = np.zeros(T, dtype=bool)
    capped = np.zeros(T, dtype=bool)
    chain = np.zeros((T, 3)) if track_chain else None
    error = None
    done = T
    for t in range(T):
        try:
            dec = pol.step()
            a = dec.action
            y = float(values[a] + rho_true[a] * noise.standard_normal())
            pol.update(a, y)
        except Exception as exc:  # noqa: BLE001 - recorded in the trace
            error = f"round {t + 1}: {type(exc).__name__}: {exc}"
            log.warning("trial %d (%s) aborted at %s", trial, cfg.kind, error)
            done = t
            break
        action[t] = a
        cols["y"][t] = y
        cols["info"][t] = dec.info
        cols["info_max"][t] = dec.info_max
        cols["beta"][t] = dec.beta
        cols["psi"][t] = dec.psi
        if dec.dist is not None:
            k = len(dec.dist.atoms)
            atoms[t, :k] = dec.dist.atoms
            weights[t, :k] = dec.dist.weights
        else:
            atoms[t, 0], weights[t, 0] = a, 1.0
        fallback[t] = dec.flags.get("fallback", False)
        capped[t] = dec.flags.get("info_capped", False)
        if chain is not None:
            chain[t] = dec.chain

    s = slice(0, done)
    return Trace(
        policy=cfg.kind,
        trial=trial,
        deterministic=cfg.deterministic,
        action=action[s],
        y=cols["y"][s],
        rho=rho_true[action[s]],
        gap=gaps[action[s]],
        info=cols["info"][s],
        info_max=cols["info_max"][s],
        beta=cols["beta"][s],
        psi_plus=cols["psi"][s],
        atoms=atoms[s],
        weights=weights[s],
        fallback=fallback[s],
        capped=capped[s],
        chain=None if chain is None else chain[s],
        error=error,
    )


def aggregate(curves) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise mean and twice the standard error over trials.

    Accepts traces or an array of cumulative regret curves (one row each).
    """
    rows = [c.cum_regret if isinstance(c, Trace) else np.asarray(c, dtype=float) for c in curves]
    if not rows:
        raise ValueError("nothing to aggregate")
    if len({len(r) for r in rows}) != 1:
        raise ValueError("all curves must have the same horizon")
    R = np.vstack(rows)
    mean = R.mean(axis=0)
    if R.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, 2.0 * R.std(axis=0, ddof=1) / np.sqrt(R.shape[0])


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentResult:
    policies: list[str]
    curves: dict[str, np.ndarray]
    mean: dict[str, np.ndarray]
    band: dict[str, np.ndarray]
    meta: dict[str, Any]
    traces: dict[tuple[str, int], Trace] = field(default_factory=dict)

    def final(self, policy: str) -> tuple[float, float]:
        return float(self.mean[policy][-1]), float(self.band[policy][-1])


def default_workers() -> int:
    env = os.environ.get("HETIDS_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"HETIDS_WORKERS must be an integer, got {env!r}", "workers") from None
    return os.cpu_count() or 1


def _trial_env(env_cfg, trial_seed, fixed_env, base_seed):
    seed = base_seed if fixed_env else trial_seed
    return make_environment(env_cfg, RngStream(seed, STREAM_ENV))


def _run_task(args):
    env_cfg, policies, T, trial, trial_seed, fixed_env, base_seed, overrides, track_chain, derive = args
    env = _trial_env(env_cfg, trial_seed, fixed_env, base_seed)
    if derive is not None:
        env = derive(env)
    return [
        run_trial(env, p, T, trial_seed, trial=trial, track_chain=track_chain, policy_overrides=overrides)
        for p in policies
    ]


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def run_experiment(
    preset: str | Mapping[str, Any],
    trials: int,
    policies: Sequence[str],
    base_seed: int = 0,
    T: int = DEFAULT_HORIZON,
    workers: int | None = None,
    fixed_env: bool = False,
    policy_overrides: Mapping | None = None,
    keep_traces: bool = False,
    track_chain: bool = False,
    derive_env=None,
) -> ExperimentResult:
    """Run every policy on ``trials`` environments.

    Trial ``k`` uses seed ``base_seed + k`` for its environment, noise and
    policy streams, so results do not depend on execution order or on the
    number of workers.  ``derive_env`` (a picklable callable) can transform
    each generated environment, e.g. to drop actions.
    """
    if trials < 1:
        raise ConfigError("trials must be at least 1", "trials")
    env_cfg = {"preset": preset} if isinstance(preset, str) else dict(preset)
    probe = make_environment(env_cfg, 0)  # fail fast on a bad preset
    policies = list(policies)
    if not policies:
        raise ConfigError("no policies given", "policies")
    for p in policies:
        if p not in POLICY_IDS:
            raise ConfigError(f"unknown policy {p!r}", "policies")
        _policy_config(p, policy_overrides, probe)
    workers = default_workers() if workers is None else max(1, int(workers))

    tasks = [
        (env_cfg, policies, T, k, base_seed + k, fixed_env, base_seed, policy_overrides, track_chain, derive_env)
        for k in range(trials)
    ]
    start = time.perf_counter()
    if workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, trials // (4 * workers))))
    else:
        results = [_run_task(t) for t in tasks]
    wall = time.perf_counter() - start

    curves, mean, band, traces = {}, {}, {}, {}
    for j, p in enumerate(policies):
        rows = [res[j] for res in results]
        bad = [tr.error for tr in rows if tr.error]
        if bad:
            raise RuntimeError(f"{len(bad)} {p} trials failed, first: {bad[0]}")
        curves[p] = np.vstack([tr.cum_regret for tr in rows])
        mean[p], band[p] = aggregate(curves[p])
        if keep_traces:
            for tr in rows:
                traces[(p, tr.trial)] = tr
    echo = {
        "environment": env_cfg,
        "policies": policies,
        "trials": trials,
        "horizon": T,
        "seed": base_seed,
        "fixed_env": fixed_env,
        "policy_overrides": dict(policy_overrides or {}),
    }
    meta = {
        "config": echo,
        "config_hash": config_hash(echo),
        "seeds": [base_seed + k for k in range(trials)],
        "wall_time_s": wall,
        "workers": workers,
    }
    return ExperimentResult(policies, curves, mean, band, meta, traces)


# ---------------------------------------------------------------------------
# output


def write_traces_csv(path, traces: Sequence[Trace]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for tr in traces:
            cr, gs = tr.cum_regret, tr.info_sum
            for t in range(tr.T):
                w.writerow([
                    tr.trial, t + 1, tr.policy, int(tr.action[t]), fmt(tr.y[t]),
                    fmt(tr.rho[t]), fmt(tr.gap[t]), fmt(tr.info[t]), fmt(tr.beta[t]),
                    fmt(tr.psi_plus[t]), fmt(cr[t]), fmt(gs[t]),
                ])


def write_aggregate_csv(path, result: ExperimentResult):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "t", "mean_regret", "band"])
        for p in result.policies:
            for t, (m, b) in enumerate(zip(result.mean[p], result.band[p])):
                w.writerow([p, t + 1, fmt(m), fmt(b)])


def write_meta_json(path, meta: Mapping[str, Any]):
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
