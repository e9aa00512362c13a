"""Actions, noise, environments and seeded randomness.

The action set is always finite: an ``(n, d)`` feature matrix.  Rewards are
``f(x) + eps`` with ``eps ~ N(0, rho(x)**2)``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

PRESETS = ("homoscedastic_linear", "heteroscedastic_linear", "example1_pairs", "rkhs_rbf")

_ALIASES = {
    "homoscedastic": "homoscedastic_linear",
    "heteroscedastic": "heteroscedastic_linear",
    "example1": "example1_pairs",
    "rkhs": "rkhs_rbf",
}

# named sub-streams of a trial seed
STREAM_ENV = 0
STREAM_NOISE = 1
STREAM_POLICY = 2


class ConfigError(ValueError):
    """Invalid environment/policy/experiment configuration.

    ``key`` names the offending configuration entry when known.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class RngStream:
    """Reproducible random stream identified by ``(seed, stream)``.

    Identical ``(seed, stream)`` pairs produce bit-identical draws.  The
    wrapped :class:`numpy.random.Generator` is exposed as ``gen``.
    """

    def __init__(self, seed: int, stream: int | Sequence[int] = 0):
        self.seed = int(seed)
        key = (stream,) if np.isscalar(stream) else tuple(stream)
        self.stream = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed & ((1 << 64) - 1), spawn_key=self.stream)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, k: int) -> "RngStream":
        return RngStream(self.seed, self.stream + (int(k),))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.gen
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None or isinstance(rng, (int, np.integer)):
        return np.random.default_rng(rng)
    raise TypeError(f"cannot use {type(rng).__name__} as a random stream")


# --------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class RBFKernel:
    lengthscale: float = 0.5

    def __call__(self, a, b) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        sq = (
            np.sum(a * a, axis=1)[:, None]
            + np.sum(b * b, axis=1)[None, :]
            - 2.0 * a @ b.T
        )
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-0.5 * sq / self.lengthscale**2)

    def diag(self, a) -> np.ndarray:
        return np.ones(np.atleast_2d(a).shape[0])


@dataclass(frozen=True)
class LinearKernel:
    def __call__(self, a, b) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return a @ b.T

    def diag(self, a) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        return np.sum(a * a, axis=1)


def make_kernel(name: str = "rbf", lengthscale: float = 0.5):
    if name == "rbf":
        if lengthscale <= 0:
            raise ConfigError("kernel lengthscale must be positive", "lengthscale")
        return RBFKernel(float(lengthscale))
    if name == "linear":
        return LinearKernel()
    raise ConfigError(f"unknown kernel {name!r}", "kernel")


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class ActionSet:
    features: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = np.array(self.features, dtype=float, copy=True)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise ConfigError("action set must be a non-empty list of vectors", "actions")
        if feats.shape[1] == 0:
            raise ConfigError("action dimension must be at least 1", "actions")
        if not np.all(np.isfinite(feats)):
            raise ConfigError("action features must be finite", "actions")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.labels is not None and len(self.labels) != feats.shape[0]:
            raise ConfigError("one label per action required", "labels")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class NoiseModel:
    """Per-action Gaussian noise scale.

    kind is one of ``constant``, ``per_action``, ``uniform_range`` or
    ``duplicate_pair``; ``rho`` holds the realized per-action values.
    """

    kind: str
    rho: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float, copy=True).reshape(-1)
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)


@dataclass(frozen=True)
class LinearTruth:
    theta: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.theta


@dataclass(frozen=True)
class KernelTruth:
    """``f(x) = sum_i coef[i] * k(centers[i], x)``."""

    kernel: Any
    centers: np.ndarray
    coef: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return self.kernel(x, self.centers) @ self.coef

    @property
    def rkhs_norm(self) -> float:
        gram = self.kernel(self.centers, self.centers)
        return float(np.sqrt(max(self.coef @ gram @ self.coef, 0.0)))


@dataclass(frozen=True)
class Environment:
    actions: ActionSet
    truth: LinearTruth | KernelTruth
    noise: NoiseModel
    values: np.ndarray
    gaps: np.ndarray
    gap_bound: float
    preset: str = "explicit"

    @property
    def n(self) -> int:
        return self.actions.n

    @property
    def dim(self) -> int:
        return self.actions.dim

    @property
    def features(self) -> np.ndarray:
        return self.actions.features

    @property
    def rho(self) -> np.ndarray:
        return self.noise.rho

    @property
    def kernel(self):
        return getattr(self.truth, "kernel", None)

    @property
    def best_action(self) -> int:
        return int(np.argmin(self.gaps))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def build_environment(
    actions: ActionSet,
    truth: LinearTruth | KernelTruth,
    noise: NoiseModel,
    preset: str = "explicit",
) -> Environment:
    """Assemble an environment and precompute gaps."""
    if isinstance(truth, LinearTruth):
        theta = np.asarray(truth.theta, dtype=float).reshape(-1)
        if theta.shape[0] != actions.dim:
            raise ConfigError(
                f"theta has dimension {theta.shape[0]} but actions have dimension {actions.dim}",
                "theta",
            )
        truth = LinearTruth(_frozen(theta))
    elif np.atleast_2d(truth.centers).shape[1] != actions.dim:
        raise ConfigError("kernel centers and actions differ in dimension", "centers")
    if noise.rho.shape[0] != actions.n:
        raise ConfigError("one noise level per action required", "rho")
    if np.any(noise.rho < 0) or not np.all(np.isfinite(noise.rho)):
        raise ConfigError("noise levels must be finite and non-negative", "rho")
    values = np.asarray(truth(actions.features), dtype=float).reshape(-1)
    gaps = values.max() - values
    gaps[gaps < 0] = 0.0
    return Environment(
        actions=actions,
        truth=truth,
        noise=noise,
        values=_frozen(values),
        gaps=_frozen(gaps),
        gap_bound=float(gaps.max()),
        preset=preset,
    )


# --------------------------------------------------------------------------
# generators


def unit_ball(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """Uniform samples in the d-dimensional Euclidean unit ball."""
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.random(n) ** (1.0 / d)
    return g * r[:, None]


def unit_sphere(rng: np.random.Generator, d: int) -> np.ndarray:
    g = rng.standard_normal(d)
    return g / np.linalg.norm(g)


def _get(cfg: Mapping, key: str, default, cast=float):
    val = cfg.get(key, default)
    if val is None:
        return None
    try:
        return cast(val)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key!r}: {val!r}", key) from None


def _vec(val, key):
    if isinstance(val, str):
        val = [v for v in val.replace(";", ",").split(",") if v.strip()]
    try:
        return np.array([float(v) for v in np.ravel(val)])
    except (TypeError, ValueError):
        raise ConfigError(f"bad vector for {key!r}: {val!r}", key) from None


def _matrix(val, key):
    if isinstance(val, str):
        rows = [r for r in val.split(";") if r.strip()]
        try:
            return np.array([[float(v) for v in r.split(",")] for r in rows])
        except ValueError:
            raise ConfigError(f"bad matrix for {key!r}: {val!r}", key) from None
    return np.atleast_2d(np.asarray(val, dtype=float))


def canonical_preset(name: str) -> str:
    name = str(name).strip()
    name = _ALIASES.get(name, name)
    if name not in PRESETS and name != "explicit":
        raise ConfigError(f"unknown preset {name!r}", "preset")
    return name


def _theta(cfg, rng, d, key="theta"):
    if cfg.get(key) is not None:
        theta = _vec(cfg[key], key)
        if theta.shape[0] != d:
            raise ConfigError(
                f"theta has dimension {theta.shape[0]} but actions have dimension {d}", key
            )
        return theta
    if cfg.get("theta_mode", "per_trial") == "fixed":
        return unit_sphere(np.random.default_rng(_get(cfg, "theta_seed", 0, int)), d)
    return unit_sphere(rng, d)


def _positive(value, key):
    if value is None or not value > 0:
        raise ConfigError(f"{key} must be positive, got {value!r}", key)
    return value


def make_environment(config: str | Mapping[str, Any], seed: int | RngStream = 0) -> Environment:
    """Build an environment from a preset name or a config mapping.

    Presets: ``homoscedastic_linear``, ``heteroscedastic_linear``,
    ``example1_pairs`` and ``rkhs_rbf``.  A mapping without ``preset`` (or
    with ``preset = explicit``) must supply ``actions``, ``theta`` and
    ``rho``.  Random draws come from ``seed``'s environment sub-stream.
    """
    cfg: dict[str, Any] = {"preset": config} if isinstance(config, str) else dict(config)
    preset = canonical_preset(cfg.get("preset", "explicit"))
    if isinstance(seed, RngStream):
        rng = seed.gen
    else:
        rng = RngStream(int(seed), STREAM_ENV).gen

    if preset == "explicit":
        if cfg.get("actions") is None:
            raise ConfigError("explicit environment needs 'actions'", "actions")
        actions = ActionSet(_matrix(cfg["actions"], "actions"), cfg.get("labels"))
        rho = _vec(cfg.get("rho", 1.0), "rho")
        if rho.shape[0] == 1:
            rho = np.full(actions.n, rho[0])
        if rho.shape[0] != actions.n:
            raise ConfigError("one noise level per action required", "rho")
        if np.any(rho < 0):
            raise ConfigError("noise levels must be non-negative", "rho")
        kind = "constant" if np.all(rho == rho[0]) else "per_action"
        noise = NoiseModel(kind, rho)
        if cfg.get("centers") is not None:
            kern = make_kernel(cfg.get("kernel", "rbf"), _get(cfg, "lengthscale", 0.5))
            truth = KernelTruth(kern, _frozen(_matrix(cfg["centers"], "centers")),
                                _frozen(_vec(cfg["coef"], "coef")))
        else:
            if cfg.get("theta") is None:
                raise ConfigError("explicit environment needs 'theta'", "theta")
            truth = LinearTruth(_vec(cfg["theta"], "theta"))
        return build_environment(actions, truth, noise, preset)

    n = _get(cfg, "n_actions", 30, int)
    if n < 1:
        raise ConfigError("n_actions must be at least 1", "n_actions")
    d = _get(cfg, "dim", 2 if preset == "rkhs_rbf" else 3, int)
    if d < 1:
        raise ConfigError("dim must be at least 1", "dim")

    if preset == "homoscedastic_linear":
        rho0 = _positive(_get(cfg, "rho", 0.5), "rho")
        feats = unit_ball(rng, n, d)
        theta = _theta(cfg, rng, d)
        noise = NoiseModel("constant", np.full(n, rho0), {"rho": rho0})
        return build_environment(ActionSet(feats), LinearTruth(theta), noise, preset)

    if preset == "heteroscedastic_linear":
        lo = _positive(_get(cfg, "rho_low", 0.1), "rho_low")
        hi = _get(cfg, "rho_high", 1.0)
        if hi < lo:
            raise ConfigError("rho_high must be at least rho_low", "rho_high")
        feats = unit_ball(rng, n, d)
        theta = _theta(cfg, rng, d)
        rho = rng.uniform(lo, hi, n)
        noise = NoiseModel("uniform_range", rho, {"lo": lo, "hi": hi})
        return build_environment(ActionSet(feats), LinearTruth(theta), noise, preset)

    if preset == "example1_pairs":
        lo = _positive(_get(cfg, "rho_low", 0.5), "rho_low")
        hi = _positive(_get(cfg, "rho_high", 2.0), "rho_high")
        if not hi > lo:
            raise ConfigError("rho_high must exceed rho_low", "rho_high")
        if cfg.get("base_actions") is not None:
            base = _matrix(cfg["base_actions"], "base_actions")
            if base.shape[0] == 1 and d == 1 and base.shape[1] > 1:
                base = base.T
        else:
            base = unit_ball(rng, _get(cfg, "n_base", 15, int), d)
        theta = _theta(cfg, rng, base.shape[1])
        low_only = str(cfg.get("low_only", "false")).lower() in ("1", "true", "yes")
        if low_only:
            feats, rho = base, np.full(base.shape[0], lo)
            labels = tuple(f"s{k}-low" for k in range(base.shape[0]))
            noise = NoiseModel("constant", rho, {"rho": lo})
        else:
            # low-noise copy first so lowest-index tie breaking favours it
            feats = np.repeat(base, 2, axis=0)
            rho = np.tile([lo, hi], base.shape[0])
            labels = tuple(f"s{k}-{tag}" for k in range(base.shape[0]) for tag in ("low", "high"))
            noise = NoiseModel("duplicate_pair", rho, {"rho_low": lo, "rho_high": hi})
        return build_environment(ActionSet(feats, labels), LinearTruth(theta), noise, preset)

    # rkhs_rbf
    kern = make_kernel("rbf", _get(cfg, "lengthscale", 0.5))
    feats = unit_ball(rng, n, d)
    if cfg.get("centers") is not None:
        centers = _matrix(cfg["centers"], "centers")
    else:
        centers = unit_ball(rng, _get(cfg, "n_centers", 10, int), d)
    if cfg.get("coef") is not None:
        coef = _vec(cfg["coef"], "coef")
    else:
        coef = rng.standard_normal(centers.shape[0])
        norm = KernelTruth(kern, centers, coef).rkhs_norm
        coef = coef * (_get(cfg, "rkhs_norm", 1.0) / norm)
    if cfg.get("rho_low") is not None:
        lo, hi = _get(cfg, "rho_low", 0.1), _get(cfg, "rho_high", 1.0)
        _positive(lo, "rho_low")
        noise = NoiseModel("uniform_range", rng.uniform(lo, hi, n), {"lo": lo, "hi": hi})
    else:
        rho0 = _positive(_get(cfg, "rho", 0.1), "rho")
        noise = NoiseModel("constant", np.full(n, rho0), {"rho": rho0})
    truth = KernelTruth(kern, _frozen(centers), _frozen(coef))
    return build_environment(ActionSet(feats), truth, noise, preset)


def low_noise_subset(env: Environment) -> Environment:
    """Keep only the low-noise member of every duplicated pair."""
    if env.noise.kind != "duplicate_pair":
        raise ValueError("environment has no duplicated pairs")
    keep = np.arange(0, env.n, 2)
    labels = None if env.actions.labels is None else tuple(env.actions.labels[i] for i in keep)
    lo = env.noise.params["rho_low"]
    return build_environment(
        ActionSet(env.features[keep], labels),
        env.truth,
        NoiseModel("constant", env.rho[keep], {"rho": lo}),
        env.preset,
    )


def _check_index(env: Environment, action) -> int:
    a = int(action)
    if not 0 <= a < env.n or a != action:
        raise IndexError(f"action {action} out of range for {env.n} actions")
    return a


def evaluate(env: Environment, action: int, rng) -> float:
    """Noisy evaluation ``f(x) + rho(x) * z`` with ``z`` standard normal."""
    a = _check_index(env, action)
    z = as_generator(rng).standard_normal()
    return float(env.values[a] + env.rho[a] * z)


def true_gap(env: Environment, action: int) -> float:
    return float(env.gaps[_check_index(env, action)])


def environment_csv(env: Environment) -> str:
    """CSV text with columns ``index, x_1..x_d, rho, gap``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index"] + [f"x_{j + 1}" for j in range(env.dim)] + ["rho", "gap"])
    for i in range(env.n):
        w.writerow([i] + [fmt(v) for v in env.features[i]] + [fmt(env.rho[i]), fmt(env.gaps[i])])
    return buf.getvalue()


def fmt(v) -> str:
    return format(float(v), ".17g")
