"""Action selection: UCB, Thompson sampling and information directed sampling.

The randomized IDS policy minimizes the surrogate ratio

    psi(mu) = E_mu[gap_plus]^2 / E_mu[info]

over sampling distributions.  Some minimizer is supported on at most two
actions, so an exhaustive pair search with a closed-form inner minimization
is exact on finite action sets.  DIDS restricts the minimization to single
actions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .core import ConfigError, as_generator
from .estimators import KernelState, LinearState
from .infogain import KINDS, InfoVector, info_target_all, log_variance_ratio

POLICY_IDS = (
    "ucb", "w-ucb", "ts", "w-ts",
    "ids-f", "dids-f", "ids-ucb", "dids-ucb",
    "ids-ts", "dids-ts", "ids-e", "dids-e",
    "uniform",
)
DETERMINISTIC = frozenset({"ucb", "w-ucb", "dids-f", "dids-ucb"})

# kind -> (selection rule, noise mode, information function)
_DEFAULTS = {
    "ucb": ("ucb", "uniform_bound", "F"),
    "w-ucb": ("ucb", "known_rho", "F"),
    "ts": ("ts", "uniform_bound", "F"),
    "w-ts": ("ts", "known_rho", "F"),
    "uniform": ("uniform", "known_rho", "F"),
}
for _k in ("f", "ucb", "ts", "e"):
    _DEFAULTS[f"ids-{_k}"] = ("ids", "known_rho", _k.upper())
    _DEFAULTS[f"dids-{_k}"] = ("dids", "known_rho", _k.upper())


# ---------------------------------------------------------------------------
# the surrogate ratio


@dataclass
class SamplingDistribution:
    atoms: tuple[int, ...]
    weights: tuple[float, ...]
    psi_plus: float
    fallback: bool = False

    def __post_init__(self):
        if not 1 <= len(self.atoms) <= 2 or len(self.atoms) != len(self.weights):
            raise ValueError("a sampling distribution has one or two atoms")
        if any(w < 0 or w > 1 for w in self.weights) or abs(sum(self.weights) - 1) > 1e-12:
            raise ValueError(f"invalid weights {self.weights}")

    def sample(self, rng) -> int:
        u = as_generator(rng).random()
        return self.atoms[0] if u < self.weights[0] or len(self.atoms) == 1 else self.atoms[1]

    def dense(self, n: int) -> np.ndarray:
        w = np.zeros(n)
        for a, p in zip(self.atoms, self.weights):
            w[a] += p
        return w


def _ratio(d, i):
    """``d^2 / i`` elementwise with ``0/0 = 0`` and ``d/0 = inf``."""
    d = np.asarray(d, dtype=float)
    i = np.asarray(i, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(i > 0, d * d / np.where(i > 0, i, 1.0), np.inf)
    return np.where(d == 0, 0.0, r)


def psi_plus(mu, gaps_plus, info) -> float:
    """Surrogate ratio of a distribution given as weights or atoms."""
    gaps_plus = np.asarray(gaps_plus, dtype=float)
    vals = np.asarray(getattr(info, "values", info), dtype=float)
    if isinstance(mu, SamplingDistribution):
        mu = mu.dense(len(gaps_plus))
    mu = np.asarray(mu, dtype=float)
    return float(_ratio(mu @ gaps_plus, mu @ vals))


def _pair_table(d, i):
    """Optimal mixing weight and value for every ordered pair ``(j, k)``.

    ``p[j, k]`` is the weight on ``j``.  Endpoints win ties against the
    interior stationary point, and ``p = 1`` wins against ``p = 0``.
    """
    d1, d2 = d[:, None], d[None, :]
    i1, i2 = i[:, None], i[None, :]
    best = np.broadcast_to(_ratio(d, i)[:, None], (len(d), len(d))).copy()
    p = np.ones_like(best)
    s0 = np.broadcast_to(_ratio(d, i)[None, :], best.shape)
    take = s0 < best
    best[take] = s0[take]
    p[take] = 0.0
    dd, di = d1 - d2, i1 - i2
    denom = dd * di
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(denom != 0, (di * d2 - 2.0 * dd * i2) / np.where(denom != 0, denom, 1.0), -1.0)
    inner = (q > 0) & (q < 1)
    if np.any(inner):
        qs = q[inner]
        si = _ratio(
            np.broadcast_to(d2, best.shape)[inner] + qs * dd[inner],
            np.broadcast_to(i2, best.shape)[inner] + qs * di[inner],
        )
        cur = best[inner]
        better = si < cur
        idx = np.flatnonzero(inner)[better]
        best.flat[idx] = si[better]
        p.flat[idx] = qs[better]
    return p, best


def minimize_pair(d1: float, i1: float, d2: float, i2: float) -> tuple[float, float]:
    """Minimize ``(p d1 + (1-p) d2)^2 / (p i1 + (1-p) i2)`` over ``p in [0, 1]``.

    Returns ``(p_star, psi_star)``; ``psi_star`` is ``inf`` when no mixture
    carries information and both gaps are positive.
    """
    if min(d1, d2, i1, i2) < 0:
        raise ValueError("gaps and informations must be non-negative")
    p, best = _pair_table(np.array([d1, d2], float), np.array([i1, i2], float))
    return float(p[0, 1]), float(best[0, 1])


def _undominated(d, i) -> np.ndarray:
    """Indices not dominated in (smaller gap, larger information).

    Equal pairs are resolved towards the lower index.  Replacing an atom by
    one that dominates it never increases the ratio, so the optimum is
    attained on the undominated set.
    """
    n = len(d)
    le = d[:, None] <= d[None, :]
    ge = i[:, None] >= i[None, :]
    strict = (d[:, None] < d[None, :]) | (i[:, None] > i[None, :])
    lower = np.arange(n)[:, None] < np.arange(n)[None, :]
    dom = le & ge & (strict | lower)
    return np.flatnonzero(~dom.any(axis=0))


def best_distribution(gaps_plus, info, prune: bool = True) -> SamplingDistribution:
    """Minimize the surrogate ratio over all distributions (pair search)."""
    d = np.asarray(gaps_plus, dtype=float)
    i = np.asarray(getattr(info, "values", info), dtype=float)
    if d.shape != i.shape or d.ndim != 1 or len(d) == 0:
        raise ValueError("gap and information vectors must have equal non-zero length")
    idx = _undominated(d, i) if prune else np.arange(len(d))
    if len(idx) == 1:
        j = int(idx[0])
        psi = float(_ratio(d[j], i[j]))
        if not math.isfinite(psi):
            return _fallback(d)
        return SamplingDistribution((j,), (1.0,), psi)
    dj, ij = d[idx], i[idx]
    p, best = _pair_table(dj, ij)
    best[np.tril_indices(len(idx))] = np.inf
    flat = int(np.argmin(best))
    psi = float(best.flat[flat])
    if not math.isfinite(psi):
        return _fallback(d)
    a, b = divmod(flat, len(idx))
    w = float(p[a, b])
    ja, jb = int(idx[a]), int(idx[b])
    if w >= 1.0:
        return SamplingDistribution((ja,), (1.0,), psi)
    if w <= 0.0:
        return SamplingDistribution((jb,), (1.0,), psi)
    return SamplingDistribution((ja, jb), (w, 1.0 - w), psi)


def _fallback(d) -> SamplingDistribution:
    j = int(np.argmin(d))
    return SamplingDistribution((j,), (1.0,), float(_ratio(d[j], 0.0)), fallback=True)


def select_ids(gaps_plus, info, rng) -> tuple[int, SamplingDistribution]:
    dist = best_distribution(gaps_plus, info)
    return dist.sample(rng), dist


def select_dids(gaps_plus, info) -> int:
    return _select_dids(gaps_plus, info)[0]


def _select_dids(gaps_plus, info):
    d = np.asarray(gaps_plus, dtype=float)
    r = _ratio(d, np.asarray(getattr(info, "values", info), dtype=float))
    j = int(np.argmin(r))
    if not math.isfinite(r[j]):
        return int(np.argmin(d)), True
    return j, False


def select_ucb(band) -> int:
    return int(np.argmax(band.means + band.beta * band.widths))


def _ts_cov_factor(state: LinearState) -> np.ndarray:
    try:
        return np.linalg.cholesky(state.V_inv)
    except np.linalg.LinAlgError:
        state.refresh()
        return np.linalg.cholesky(state.V_inv)


def sample_theta(state: LinearState, rng, size: int | None = None) -> np.ndarray:
    """Posterior draws ``theta ~ N(theta_hat, V^-1)``; shape ``(size, d)``."""
    L = _ts_cov_factor(state)
    z = as_generator(rng).standard_normal(state.dim if size is None else (size, state.dim))
    return state.theta_hat + z @ L.T


def select_ts(state: LinearState, actions, rng) -> int:
    if not isinstance(state, LinearState):
        raise ConfigError("Thompson sampling needs the linear estimator", "estimator")
    X = getattr(actions, "features", actions)
    return int(np.argmax(np.asarray(X) @ sample_theta(state, rng)))


def psi_ucb_closed_form(beta: float, sigma_ucb: float, rho_ucb: float, constant: float = 4.0) -> float:
    """Ratio of the UCB action, ``c beta^2 sigma^2 / log(1 + sigma^2/rho^2)``.

    ``constant=4`` is the exact singleton value (the UCB gap bound is
    ``2 beta sigma``).  ``constant=8`` gives a looser variant of the same
    expression.
    """
    if not (beta > 0 and sigma_ucb > 0 and rho_ucb > 0):
        raise ValueError("beta, sigma and rho must be positive")
    return constant * beta**2 * sigma_ucb**2 / math.log1p((sigma_ucb / rho_ucb) ** 2)


# ---------------------------------------------------------------------------
# stateful policies


@dataclass
class PolicyConfig:
    kind: str
    delta: float = 0.01
    norm_bound: float = 1.0
    lam: float = 1.0
    noise_mode: str | None = None
    info_kind: str | None = None
    m: int = 10
    estimator: str = "linear"
    kernel: Any = None
    max_points: int = 10_000

    def __post_init__(self):
        if self.kind not in _DEFAULTS:
            raise ConfigError(f"unknown policy {self.kind!r}", "policies")
        rule, mode, info = _DEFAULTS[self.kind]
        self.noise_mode = self.noise_mode or mode
        self.info_kind = self.info_kind or info
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)", "delta")
        if self.m < 1:
            raise ConfigError("ensemble size must be at least 1", "ensemble_size")
        if not self.lam > 0:
            raise ConfigError("lambda must be positive", "lambda")
        if self.norm_bound < 0:
            raise ConfigError("norm bound must be non-negative", "norm_bound")
        if self.noise_mode not in ("known_rho", "uniform_bound"):
            raise ConfigError(f"unknown noise mode {self.noise_mode!r}", "noise_mode")
        if self.info_kind not in KINDS:
            raise ConfigError(f"unknown information kind {self.info_kind!r}", "info_kind")
        if self.estimator not in ("linear", "kernel"):
            raise ConfigError(f"unknown estimator {self.estimator!r}", "estimator")
        if self.estimator == "kernel" and (rule == "ts" or self.info_kind in ("TS", "E")):
            raise ConfigError(f"{self.kind} needs the linear estimator", "estimator")

    @property
    def rule(self) -> str:
        return _DEFAULTS[self.kind][0]

    @property
    def deterministic(self) -> bool:
        return self.rule in ("ucb", "dids")


@dataclass
class Decision:
    action: int
    beta: float
    info: float
    info_max: float
    psi: float
    dist: SamplingDistribution | None = None
    chain: tuple[float, float, float] | None = None
    flags: dict = field(default_factory=dict)


class Policy:
    """A policy bound to a finite action set with known noise levels."""

    def __init__(self, config: PolicyConfig, features, rho, rng, kernel=None, track_chain=False):
        self.config = config
        self.X = np.asarray(features, dtype=float)
        self.n, self.d = self.X.shape
        rho = np.asarray(rho, dtype=float)
        if np.any(rho <= 0):
            raise ConfigError("policies need strictly positive noise levels", "rho")
        if config.noise_mode == "uniform_bound":
            rho = np.full(self.n, rho.max())
        self.rho = rho
        self.rho2 = rho * rho
        self.rng = as_generator(rng)
        self.track_chain = track_chain
        if config.estimator == "linear":
            self.est = LinearState(self.d, config.lam)
            self.B = math.sqrt(config.lam) * config.norm_bound
        else:
            kern = config.kernel or kernel
            if kern is None:
                raise ConfigError("kernel estimator needs a kernel", "kernel")
            self.est = KernelState(kern, config.lam, anchors=self.X, max_points=config.max_points)
            self.B = config.norm_bound

    # posterior over the action set ---------------------------------------
    def _posterior(self):
        if isinstance(self.est, LinearState):
            XV = self.X @ self.est.V_inv
            var = np.maximum(np.einsum("ij,ij->i", XV, self.X), 0.0)
            means = self.X @ self.est.theta_hat
            return means, var, lambda j: XV @ self.X[j]
        est = self.est
        return est.anchor_mean.copy(), est.anchor_var.copy(), est.anchor_covariance

    def _ts_proposals(self, size):
        thetas = sample_theta(self.est, self.rng, size)
        return np.argmax(self.X @ thetas.T, axis=0)

    def _target_info(self, var, cov, j, kind):
        vt = var[j]
        c = cov(j)
        after = vt - c * c / (self.rho2 + var)
        vals, capped = log_variance_ratio(vt, after)
        return InfoVector(vals, kind, int(j), capped)

    def information(self, var, cov, j_ucb) -> InfoVector:
        kind = self.config.info_kind
        if kind == "F":
            return InfoVector(np.log1p(var / self.rho2), "F")
        if kind == "UCB":
            return self._target_info(var, cov, j_ucb, "UCB")
        if kind == "TS":
            return self._target_info(var, cov, int(self._ts_proposals(1)[0]), "TS")
        props = self._ts_proposals(self.config.m)
        parts = [self._target_info(var, cov, int(j), "E") for j in props]
        return InfoVector(
            np.mean([p.values for p in parts], axis=0), "E",
            tuple(int(j) for j in props), any(p.capped for p in parts),
        )

    def step(self) -> Decision:
        """One decision round; does not observe the outcome."""
        means, var, cov = self._posterior()
        widths = np.sqrt(var)
        beta = self.est.beta(self.config.delta, self.B)
        upper = means + beta * widths
        j_ucb = int(np.argmax(upper))
        gaps_plus = np.maximum(upper[j_ucb] - (means - beta * widths), 0.0)
        rule = self.config.rule
        if rule == "ts":
            # the proposal draw comes first so TS and IDS-TS consume the
            # stream in the same order
            action = int(self._ts_proposals(1)[0])
        info = self.information(var, cov, j_ucb)
        flags = {"info_capped": info.capped}
        dist = None
        if rule == "ids":
            dist = best_distribution(gaps_plus, info)
            action = dist.sample(self.rng)
            psi = dist.psi_plus
            flags["fallback"] = dist.fallback
        elif rule == "dids":
            action, fb = _select_dids(gaps_plus, info)
            psi = float(_ratio(gaps_plus[action], info.values[action]))
            flags["fallback"] = fb
        else:
            if rule == "ucb":
                action = j_ucb
            elif rule == "uniform":
                action = int(self.rng.integers(self.n))
            psi = float(_ratio(gaps_plus[action], info.values[action]))
        chain = None
        if self.track_chain:
            ids = best_distribution(gaps_plus, info).psi_plus if dist is None else dist.psi_plus
            dids = float(np.min(_ratio(gaps_plus, info.values)))
            ucb = float(_ratio(gaps_plus[j_ucb], info.values[j_ucb]))
            chain = (ids, dids, ucb)
            flags["ucb_width"] = float(widths[j_ucb])
            flags["ucb_rho"] = float(self.rho[j_ucb])
            flags["ucb_index"] = j_ucb
        return Decision(
            action=action,
            beta=beta,
            info=float(info.values[action]),
            info_max=float(info.values.max()),
            psi=psi,
            dist=dist,
            chain=chain,
            flags=flags,
        )

    def update(self, action: int, y: float):
        self.est.update(self.X[action], y, self.rho[action])


def make_policy(kind: str | PolicyConfig, features, rho, rng, kernel=None, track_chain=False, **overrides) -> Policy:
    cfg = kind if isinstance(kind, PolicyConfig) else PolicyConfig(kind, **overrides)
    if overrides and isinstance(kind, PolicyConfig):
        cfg = replace(cfg, **overrides)
    return Policy(cfg, features, rho, rng, kernel=kernel, track_chain=track_chain)


def step(policy: Policy) -> tuple[int, Decision]:
    dec = policy.step()
    return dec.action, dec
