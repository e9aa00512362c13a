"""Monte-Carlo and oracle checks of the concentration and ratio statements.

Coverage checks simulate many independent trajectories and count those on
which an anytime statement fails at some round.  A check passes when the
empirical coverage is at least ``1 - delta - 3 * sqrt(delta (1 - delta) / n)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.special import ndtr

from .core import ConfigError, KernelTruth, RngStream, make_kernel, unit_ball, unit_sphere
from .estimators import KernelState, LinearState
from .harness import Trace
from .policies import _ratio

Z_TOL = 3.0


@dataclass
class CoverageReport:
    name: str
    trials: int
    failures: int
    target: float
    z: float = Z_TOL

    @property
    def coverage(self) -> float:
        return 1.0 - self.failures / self.trials

    @property
    def tolerance(self) -> float:
        d = 1.0 - self.target
        return self.z * math.sqrt(d * (1.0 - d) / self.trials)

    @property
    def passed(self) -> bool:
        return self.coverage >= self.target - self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "trials": self.trials,
            "failures": self.failures,
            "coverage": self.coverage,
            "target": self.target,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: coverage {self.coverage:.4f} "
                f">= {self.target:.3f} - {self.tolerance:.4f}")


@dataclass(frozen=True)
class CheckerConfig:
    delta: float = 0.1
    horizon: int = 200
    trials: int = 2000
    seed: int = 0
    workers: int = 1
    # regression checks
    dim: int = 2
    lam: float = 1.0
    norm_bound: float = 1.0
    true_norm: float = 1.0
    rho_low: float = 0.1
    rho_high: float = 1.0
    lengthscale: float = 0.5
    n_centers: int = 10
    probes: int = 20
    # martingale checks
    generator: str = "bernoulli"
    b: float = 1.0
    l: float = 1.0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)", "delta")
        if self.trials < 1 or self.horizon < 1:
            raise ConfigError("trials and horizon must be positive", "trials")
        if not self.l > 0:
            raise ConfigError("mixing sequence must be positive", "l")


def _map(fn, args, workers):
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, args, chunksize=max(1, len(args) // (4 * workers))))
    return [fn(a) for a in args]


def _chunks(cfg: CheckerConfig, size=100):
    return [(cfg, range(s, min(s + size, cfg.trials))) for s in range(0, cfg.trials, size)]


# ---------------------------------------------------------------------------
# regression confidence sets


def _linear_failures(args) -> int:
    cfg, trials = args
    fails = 0
    for k in trials:
        rng = RngStream(cfg.seed, (1, k)).gen
        theta = cfg.true_norm * unit_sphere(rng, cfg.dim)
        st = LinearState(cfg.dim, cfg.lam)
        xs = unit_ball(rng, cfg.horizon, cfg.dim)
        rhos = rng.uniform(cfg.rho_low, cfg.rho_high, cfg.horizon)
        eps = rng.standard_normal(cfg.horizon)
        for t in range(cfg.horizon):
            x = xs[t]
            st.update(x, float(x @ theta + rhos[t] * eps[t]), float(rhos[t]))
            err = st.theta_hat - theta
            if math.sqrt(max(err @ st.V @ err, 0.0)) > st.beta(cfg.delta, cfg.norm_bound * math.sqrt(cfg.lam)):
                fails += 1
                break
    return fails


def _kernel_failures(args) -> int:
    cfg, trials = args
    kern = make_kernel("rbf", cfg.lengthscale)
    fails = 0
    for k in trials:
        rng = RngStream(cfg.seed, (2, k)).gen
        centers = unit_ball(rng, cfg.n_centers, cfg.dim)
        coef = rng.standard_normal(cfg.n_centers)
        coef *= cfg.true_norm / KernelTruth(kern, centers, coef).rkhs_norm
        f = KernelTruth(kern, centers, coef)
        probes = unit_ball(rng, cfg.probes, cfg.dim)
        f_probe = f(probes)
        st = KernelState(kern, cfg.lam, anchors=probes, max_points=cfg.horizon)
        xs = unit_ball(rng, cfg.horizon, cfg.dim)
        fx = f(xs)
        rhos = rng.uniform(cfg.rho_low, cfg.rho_high, cfg.horizon)
        eps = rng.standard_normal(cfg.horizon)
        for t in range(cfg.horizon):
            st.update(xs[t], float(fx[t] + rhos[t] * eps[t]), float(rhos[t]))
            beta = st.beta(cfg.delta, cfg.norm_bound)
            if np.any(np.abs(st.anchor_mean - f_probe) > beta * np.sqrt(st.anchor_var)):
                fails += 1
                break
    return fails


def check_confidence_coverage(config: CheckerConfig, estimator_kind: str = "linear") -> CoverageReport:
    """Anytime coverage of the weighted least-squares / kernel confidence sets.

    Linear: fails when ``||theta_hat - theta*||_V > beta`` at some round.
    Kernel: fails when ``|mu_hat(x) - f*(x)| > beta * sigma(x)`` at some
    round for some probe point ``x``.
    """
    if config.true_norm > config.norm_bound:
        raise ConfigError(
            f"norm bound {config.norm_bound} is below the true norm {config.true_norm}",
            "norm_bound",
        )
    if not config.rho_low > 0 or config.rho_high < config.rho_low:
        raise ConfigError("need 0 < rho_low <= rho_high", "rho_low")
    fn = {"linear": _linear_failures, "kernel": _kernel_failures}.get(estimator_kind)
    if fn is None:
        raise ConfigError(f"unknown estimator {estimator_kind!r}", "estimator")
    fails = sum(_map(fn, _chunks(config), config.workers))
    return CoverageReport(f"confidence_{estimator_kind}", config.trials, fails, 1 - config.delta)


# ---------------------------------------------------------------------------
# non-negative processes and their conditional means


def _clip_gauss_mean(mu, s, b):
    """``E[clip(Z, 0, b)]`` for ``Z ~ N(mu, s^2)``."""
    def G(u):
        return u * ndtr(u) + np.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
    return b - s * (G((b - mu) / s) - G(-mu / s))


def nonnegative_process(generator: str, trials: int, T: int, b: float, rng):
    """Paths ``X`` and conditional means ``m``, both ``(trials, T)``."""
    if generator == "deterministic":
        m = np.full((trials, T), 0.5 * b)
        return m.copy(), m
    if generator == "bernoulli":
        m = np.full((trials, T), 0.5 * b)
        return b * (rng.random((trials, T)) < 0.5), m
    if generator == "bernoulli_adaptive":
        X = np.zeros((trials, T))
        m = np.zeros((trials, T))
        ones = np.zeros(trials)
        for t in range(T):
            p = 0.1 + 0.8 * (ones + 1) / (t + 2)
            m[:, t] = b * p
            X[:, t] = b * (rng.random(trials) < p)
            ones += X[:, t] / b
        return X, m
    if generator == "example8":
        # Ber(1/2) until the first success, zero afterwards
        X = np.zeros((trials, T))
        m = np.zeros((trials, T))
        alive = np.ones(trials, dtype=bool)
        for t in range(T):
            m[:, t] = np.where(alive, 0.5, 0.0)
            hit = alive & (rng.random(trials) < 0.5)
            X[:, t] = hit
            alive &= ~hit
        return X, m
    if generator == "bounded_gaussian":
        mu = 0.5 * b
        s = 0.5 * b
        m = np.full((trials, T), _clip_gauss_mean(mu, s, b))
        return np.clip(rng.normal(mu, s, (trials, T)), 0.0, b), m
    raise ConfigError(f"unknown generator {generator!r}", "generator")


def conditional_mean_bound(M_X, b, delta, l=1.0, form="linear"):
    """Right-hand sides of the two conditional-mean inequalities.

    ``form="linear"``: bound on ``sum m`` given ``sum X`` (``M_X``).
    ``form="sqrt"``: bound on ``sum (m - X)`` given ``sum m`` (``M_X``).
    """
    if form == "linear":
        return 2.0 * M_X + 4.0 * b * math.log(1.0 / delta) + 8.0 * b * math.log(4.0 * b) + 1.0
    v = b * M_X + l
    return np.sqrt(2.0 * v * np.log(np.sqrt(v / l) / delta))


def check_conditional_mean(config: CheckerConfig, form: str = "linear") -> CoverageReport:
    """Anytime coverage of the conditional-mean concentration inequalities.

    ``form="linear"``: ``sum m <= 2 sum X + 4 b log(1/delta) + 8 b log(4b) + 1``
    (needs ``b >= 1``).  ``form="sqrt"``: the square-root deviation bound with
    constant mixing sequence ``l``.
    """
    if form not in ("linear", "sqrt"):
        raise ConfigError(f"unknown form {form!r}", "form")
    if form == "linear" and config.b < 1:
        raise ConfigError("the linear form needs b >= 1", "b")
    rng = RngStream(config.seed, (3,)).gen
    X, m = nonnegative_process(config.generator, config.trials, config.horizon, config.b, rng)
    if np.any(X > config.b) or np.any(X < 0):
        raise ValueError(f"generator {config.generator!r} violates 0 <= X_t <= b")
    SX, SM = np.cumsum(X, axis=1), np.cumsum(m, axis=1)
    if form == "linear":
        ok = SM <= conditional_mean_bound(SX, config.b, config.delta, form="linear")
    else:
        ok = SM - SX <= conditional_mean_bound(SM, config.b, config.delta, config.l, form="sqrt")
    fails = int(np.sum(~ok.all(axis=1)))
    return CoverageReport(f"conditional_mean_{form}_{config.generator}", config.trials, fails, 1 - config.delta)


# ---------------------------------------------------------------------------
# supermartingale differences bounded from above


def variance_proxy(second_moment, U):
    """Per-round ``C_t^2``: the second moment if it reaches ``U^2``,
    else ``(U + E[xi^2]/U)^2 / 4``."""
    second_moment = np.asarray(second_moment, dtype=float)
    U = np.asarray(U, dtype=float)
    if np.any(U <= 0):
        raise ValueError("upper bounds U_t must be positive")
    return np.where(second_moment >= U * U, second_moment, 0.25 * (U + second_moment / U) ** 2)


def supermartingale_bound(A, l, delta):
    v = np.asarray(A) + l
    return np.sqrt(2.0 * v * np.log(np.sqrt(v / l) / delta))


def supermartingale_process(generator: str, trials: int, T: int, rng):
    """Differences ``xi``, upper bounds ``U`` and conditional second moments."""
    if generator == "zero":
        z = np.zeros((trials, T))
        return z, np.ones((trials, T)), z.copy()
    if generator == "bernoulli_centered":
        xi = np.zeros((trials, T))
        sm = np.zeros((trials, T))
        S = np.zeros(trials)
        for t in range(T):
            p = 0.5 + 0.4 * np.tanh(S)
            x = rng.random(trials) < p
            xi[:, t] = x - p
            sm[:, t] = p * (1 - p)
            S += xi[:, t]
        return xi, np.ones((trials, T)), sm
    if generator == "clipped_gaussian":
        U, s = 1.0, 2.0
        a = U / s
        phi = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
        Phi = float(ndtr(a))
        second = s * s * (Phi - a * phi) + U * U * (1.0 - Phi)
        xi = np.minimum(rng.normal(0.0, s, (trials, T)), U)
        return xi, np.full((trials, T), U), np.full((trials, T), second)
    raise ConfigError(f"unknown generator {generator!r}", "generator")


def check_supermartingale_bound(config: CheckerConfig) -> CoverageReport:
    """Anytime coverage of ``S_T <= sqrt(2 (A_T + l) log(sqrt((A_T + l)/l) / delta))``."""
    rng = RngStream(config.seed, (4,)).gen
    xi, U, sm = supermartingale_process(config.generator, config.trials, config.horizon, rng)
    if np.any(xi > U + 1e-12):
        raise ValueError(f"generator {config.generator!r} violates xi_t <= U_t")
    A = np.cumsum(variance_proxy(sm, U), axis=1)
    S = np.cumsum(xi, axis=1)
    ok = S <= supermartingale_bound(A, config.l, config.delta)
    fails = int(np.sum(~ok.all(axis=1)))
    return CoverageReport(f"supermartingale_{config.generator}", config.trials, fails, 1 - config.delta)


# ---------------------------------------------------------------------------
# full-simplex oracle for the two-atom property


def project_simplex(V: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row onto the probability simplex."""
    V = np.atleast_2d(V)
    n = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    k = np.arange(1, n + 1)
    cond = U - css / k > 0
    r = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = css[np.arange(V.shape[0]), r] / (r + 1)
    return np.maximum(V - tau[:, None], 0.0)


def _psi_rows(W, d, i):
    return _ratio(W @ d, W @ i)


def full_simplex_min(gaps_plus, info, starts: int = 50, grid: int = 10**6,
                     iters: int = 3000, seed: int = 0) -> float:
    """Minimum of the surrogate ratio over the whole simplex.

    Independent of the pair search: random Dirichlet points and the
    vertices seed a batch of projected-gradient runs with per-run step
    adaptation.
    """
    d = np.asarray(gaps_plus, dtype=float)
    i = np.asarray(getattr(info, "values", info), dtype=float)
    n = len(d)
    rng = np.random.default_rng(seed)

    best_val, best_pt = np.inf, None
    for s in range(0, grid, 100_000):
        W = rng.dirichlet(np.ones(n), size=min(100_000, grid - s))
        v = _psi_rows(W, d, i)
        j = int(np.argmin(v))
        if v[j] < best_val:
            best_val, best_pt = float(v[j]), W[j]
    vert = _psi_rows(np.eye(n), d, i)
    if vert.min() < best_val:
        best_val, best_pt = float(vert.min()), np.eye(n)[int(np.argmin(vert))]
    if best_val == 0.0:
        return 0.0

    W = np.vstack([best_pt, rng.dirichlet(np.ones(n), size=starts - 1)])
    f = _psi_rows(W, d, i)
    step = np.full(W.shape[0], 1e-2)
    last = f.min()
    for it in range(iters):
        if it and it % 100 == 0:
            # stop once a hundred iterations no longer move the best value
            if f.min() >= last * (1 - 1e-15):
                break
            last = f.min()
        D, I = W @ d, W @ i
        with np.errstate(divide="ignore", invalid="ignore"):
            G = (2 * D / I)[:, None] * d[None, :] - (D * D / (I * I))[:, None] * i[None, :]
        G[~np.isfinite(G)] = 0.0
        Wn = project_simplex(W - step[:, None] * G)
        fn = _psi_rows(Wn, d, i)
        acc = fn <= f
        W[acc], f[acc] = Wn[acc], fn[acc]
        step = np.where(acc, step * 1.5, step * 0.5)
        step = np.clip(step, 1e-14, 1e6)
    return float(min(best_val, f.min()))


# ---------------------------------------------------------------------------
# pathwise regret bounds


def theorem2_margins(trace: Trace, env=None) -> np.ndarray:
    """``sqrt(sum psi_t * sum I_t) - R_T`` at every prefix.

    Uses the true gaps and the realized information of the played actions.
    Rounds with ``I_t = 0`` are left out of both sums (they are listed in
    ``trace.zero_info_rounds``) but their gaps still count as regret.
    """
    gap = trace.gap if env is None else np.asarray(env.gaps)[trace.action]
    info = trace.info
    keep = info > 0
    psi = np.where(keep, _ratio(gap, np.where(keep, info, 1.0)), 0.0)
    bound = np.sqrt(np.cumsum(psi) * np.cumsum(np.where(keep, info, 0.0)))
    return bound - np.cumsum(gap)


def check_theorem2(trace: Trace, env=None, rtol: float = 1e-9) -> bool:
    """Pathwise ``R_T <= sqrt(sum psi_t * sum I_t)`` for a deterministic policy."""
    if not trace.deterministic:
        raise ValueError(f"{trace.policy} is randomized; the pathwise bound needs a deterministic policy")
    gap = trace.gap if env is None else np.asarray(env.gaps)[trace.action]
    R = np.cumsum(gap)
    margins = theorem2_margins(trace, env)
    return bool(np.all(margins >= -rtol * R))


def theorem1_diagnostic(trace: Trace, env, delta: float = 0.01) -> np.ndarray:
    """Heuristic margin of the randomized-policy bound at every prefix.

    The realized information sum stands in for the worst-case information
    gain and the surrogate ratio for the true ratio, so a negative margin is
    a warning rather than a violation.
    """
    gap = np.asarray(env.gaps)[trace.action]
    R = np.cumsum(gap)
    G = np.maximum(np.cumsum(trace.info), 1e-300)
    Psi = np.cumsum(np.where(np.isfinite(trace.psi_plus), trace.psi_plus, 0.0))
    T = np.arange(1, len(gap) + 1)
    if np.all(trace.info <= 1.0):
        inner = 2 * G + 4 * math.log(2 / delta) + 8 * math.log(4) + 1
    else:
        inner = 2 * G + 4 * G * math.log(2 / delta) + 8 * G * np.log(np.maximum(4 * G, 1.0)) + 1
    tail = 4 * env.gap_bound * np.log(8 * math.pi**2 * T**2 / (3 * delta) * (np.log(T) + 1))
    return 1.25 * np.sqrt(Psi * inner) + tail - R


# ---------------------------------------------------------------------------
# the default suite


def default_suite(trials: int = 2000, delta: float = 0.1, seed: int = 0, workers: int = 1):
    """(name, callable) pairs for every coverage check."""
    reg = CheckerConfig(delta=delta, horizon=200, trials=trials, seed=seed, workers=workers)
    mart = replace(reg, horizon=500)
    return [
        ("confidence_linear", lambda: check_confidence_coverage(reg, "linear")),
        ("confidence_kernel", lambda: check_confidence_coverage(reg, "kernel")),
        *[
            (f"conditional_mean_{form}_{g}",
             lambda g=g, form=form: check_conditional_mean(replace(mart, generator=g), form))
            for g in ("bernoulli", "example8", "bounded_gaussian")
            for form in ("linear", "sqrt")
        ],
        *[
            (f"supermartingale_{g}", lambda g=g: check_supermartingale_bound(replace(mart, generator=g)))
            for g in ("bernoulli_centered", "clipped_gaussian")
        ],
    ]


def report_dicts(reports):
    return [r.to_dict() for r in reports]


__all__ = [
    "CheckerConfig", "CoverageReport", "asdict",
    "check_confidence_coverage", "check_conditional_mean", "check_supermartingale_bound",
    "full_simplex_min", "check_theorem2", "theorem2_margins", "theorem1_diagnostic",
    "project_simplex", "variance_proxy", "default_suite",
]
