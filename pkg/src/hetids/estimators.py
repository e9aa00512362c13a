"""Weighted least squares and heteroscedastic kernel ridge regression.

Both estimators keep sufficient statistics that are updated one observation
at a time.  Widths are on the scale of the posterior standard deviation, so
the confidence interval at ``x`` is ``mean(x) +/- beta * width(x)``.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

NEG_VAR_TOL = 1e-9


class NumericalBreakdown(RuntimeError):
    pass


def _check_obs(x, y, rho):
    if not (rho > 0) or not math.isfinite(rho):
        raise ValueError(f"noise level must be positive and finite, got {rho!r}")
    if not math.isfinite(y) or not np.all(np.isfinite(x)):
        raise ValueError("observation contains non-finite values")


def _check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta!r}")


def _clamp_var(v):
    """Clamp tiny negative variances produced by cancellation."""
    v = np.asarray(v, dtype=float)
    if np.any(v < -NEG_VAR_TOL):
        warnings.warn(
            f"negative posterior variance {float(v.min()):.3g} clamped to zero",
            RuntimeWarning,
            stacklevel=3,
        )
    return np.maximum(v, 0.0)


class LinearState:
    """Regularized weighted least squares in R^d.

    ``V = V0 + sum x x^T / rho^2`` and ``b = sum x y / rho^2``.  ``V_inv`` is
    tracked with Sherman-Morrison updates and refreshed from a Cholesky
    factorization every ``refresh_every`` observations.
    """

    def __init__(self, dim: int, lam: float = 1.0, V0=None, refresh_every: int = 128):
        if V0 is None:
            if not lam > 0:
                raise ValueError("regularizer must be positive")
            V0 = lam * np.eye(dim)
        V0 = np.array(V0, dtype=float)
        if V0.shape != (dim, dim):
            raise ValueError("V0 must be a dim x dim matrix")
        self.dim = dim
        self.V0 = V0
        self.V = V0.copy()
        self.V_inv = np.linalg.inv(V0)
        self.b = np.zeros(dim)
        self.theta_hat = np.zeros(dim)
        sign, logdet = np.linalg.slogdet(V0)
        if sign <= 0:
            raise ValueError("V0 must be positive definite")
        self.logdet_V0 = float(logdet)
        self.logdet_V = float(logdet)
        self.t = 0
        self.refresh_every = refresh_every

    def copy(self) -> "LinearState":
        new = object.__new__(LinearState)
        new.__dict__.update(self.__dict__)
        for k in ("V0", "V", "V_inv", "b", "theta_hat"):
            setattr(new, k, getattr(self, k).copy())
        return new

    def update(self, x, y: float, rho: float) -> "LinearState":
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"expected a {self.dim}-vector, got shape {x.shape}")
        _check_obs(x, y, rho)
        r2 = rho * rho
        u = self.V_inv @ x
        s = float(x @ u)
        self.logdet_V += math.log1p(s / r2)
        self.V_inv -= np.outer(u, u) / (r2 + s)
        self.V += np.outer(x, x) / r2
        self.b += x * (y / r2)
        self.t += 1
        # a near-noiseless observation makes the rank-one update lose precision
        if (self.refresh_every and self.t % self.refresh_every == 0) or s / r2 > 1e8:
            self.refresh()
        # solving against V keeps theta_hat accurate when V is badly conditioned
        self.theta_hat = np.linalg.solve(self.V, self.b)
        return self

    def refresh(self):
        """Recompute ``V_inv`` and ``log det V`` from scratch."""
        c, low = cho_factor(self.V, lower=True)
        self.V_inv = cho_solve((c, low), np.eye(self.dim))
        self.V_inv = 0.5 * (self.V_inv + self.V_inv.T)
        self.logdet_V = float(2.0 * np.sum(np.log(np.diag(c))))
        self.theta_hat = cho_solve((c, low), self.b)

    def mean(self, X) -> np.ndarray:
        return np.atleast_2d(X) @ self.theta_hat

    def variance(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _clamp_var(np.einsum("ij,jk,ik->i", X, self.V_inv, X))

    def covariance(self, X, z) -> np.ndarray:
        """``x^T V^-1 z`` for every row ``x`` of ``X``."""
        return np.atleast_2d(X) @ (self.V_inv @ np.asarray(z, dtype=float).reshape(-1))

    def predict(self, x):
        """Mean and width at a single point, or arrays for a matrix of points."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("query contains non-finite values")
        m, w = self.mean(x), np.sqrt(self.variance(x))
        if x.ndim == 1:
            return float(m[0]), float(w[0])
        return m, w

    def beta(self, delta: float, B: float = 1.0) -> float:
        return beta_linear(self, delta, B)


class KernelState:
    """Kernel ridge regression with per-observation noise levels.

    Keeps a growing Cholesky factor ``L`` of ``K + lam * Sigma`` and
    ``z = L^-1 y``.  When ``anchors`` (a fixed finite query set) are given,
    ``W = L^-1 k(points, anchors)`` is extended row by row so that anchor
    means, widths and covariances cost O(t) per anchor instead of a fresh
    triangular solve.
    """

    def __init__(self, kernel, lam: float = 1.0, anchors=None, max_points: int = 10_000):
        if not lam > 0:
            raise ValueError("regularizer must be positive")
        self.kernel = kernel
        self.lam = float(lam)
        self.max_points = max_points
        self.t = 0
        self.logdet_ratio = 0.0
        self._cap = 0
        self.points = self.rhos = self.ys = self.L = self.z = None
        self.anchors = None if anchors is None else np.atleast_2d(np.asarray(anchors, float))
        if self.anchors is not None:
            self._k_anchor = kernel(self.anchors, self.anchors)
            self._kdiag_anchor = np.diag(self._k_anchor).copy()
            self.anchor_mean = np.zeros(self.anchors.shape[0])
            self.anchor_var = self._kdiag_anchor / self.lam
            self.W = None

    # storage ------------------------------------------------------------
    def _grow(self, dim):
        cap = max(64, 2 * self._cap)
        cap = min(cap, self.max_points)
        if cap <= self.t:
            raise NumericalBreakdown(f"kernel state is capped at {self.max_points} points")

        def ext(a, shape):
            new = np.zeros(shape)
            if a is not None:
                new[tuple(slice(0, s) for s in a.shape)] = a
            return new

        self.points = ext(self.points, (cap, dim))
        self.rhos = ext(self.rhos, (cap,))
        self.ys = ext(self.ys, (cap,))
        self.L = ext(self.L, (cap, cap))
        self.z = ext(self.z, (cap,))
        if self.anchors is not None:
            self.W = ext(self.W, (cap, self.anchors.shape[0]))
        self._cap = cap

    @property
    def chol(self) -> np.ndarray:
        return self.L[: self.t, : self.t] if self.t else np.zeros((0, 0))

    def gram(self) -> np.ndarray:
        """Directly assembled ``K_T + lam * Sigma_T``."""
        P = self.points[: self.t]
        return self.kernel(P, P) + self.lam * np.diag(self.rhos[: self.t] ** 2)

    # updates ------------------------------------------------------------
    def update(self, x, y: float, rho: float) -> "KernelState":
        x = np.asarray(x, dtype=float).reshape(-1)
        _check_obs(x, y, rho)
        if self.t >= self._cap:
            self._grow(x.shape[0])
        t = self.t
        kxx = float(self.kernel.diag(x[None, :])[0])
        if t:
            kx = self.kernel(self.points[:t], x[None, :])[:, 0]
            l = solve_triangular(self.L[:t, :t], kx, lower=True, check_finite=False)
            ll = float(l @ l)
        else:
            l, ll = np.zeros(0), 0.0
        var = max(kxx - ll, 0.0) / self.lam
        piv2 = kxx - ll + self.lam * rho * rho
        self.points[t] = x
        self.rhos[t] = rho
        self.ys[t] = y
        self.t = t + 1
        if not piv2 > 1e-12 * (kxx + self.lam * rho * rho):
            self._refactor()
        else:
            piv = math.sqrt(piv2)
            self.L[t, :t] = l
            self.L[t, t] = piv
            self.z[t] = (y - l @ self.z[:t]) / piv
            if self.anchors is not None:
                row = (self.kernel(x[None, :], self.anchors)[0] - l @ self.W[:t]) / piv
                self.W[t] = row
                self.anchor_mean += row * self.z[t]
                self.anchor_var -= row * row / self.lam
                np.maximum(self.anchor_var, 0.0, out=self.anchor_var)
        self.logdet_ratio += math.log1p(var / (rho * rho))
        return self

    def _refactor(self):
        t = self.t
        try:
            L = np.linalg.cholesky(self.gram())
        except np.linalg.LinAlgError:
            raise NumericalBreakdown("K + lam*Sigma is not positive definite") from None
        self.L[:t, :t] = L
        self.z[:t] = solve_triangular(L, self.ys[:t], lower=True)
        if self.anchors is not None:
            Ka = self.kernel(self.points[:t], self.anchors)
            self.W[:t] = solve_triangular(L, Ka, lower=True)
            self.anchor_mean = self.W[:t].T @ self.z[:t]
            self.anchor_var = np.maximum(
                (self._kdiag_anchor - np.sum(self.W[:t] ** 2, axis=0)) / self.lam, 0.0
            )

    # queries ------------------------------------------------------------
    def _solve(self, K):
        return solve_triangular(self.L[: self.t, : self.t], K, lower=True, check_finite=False)

    def mean(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.t:
            return np.zeros(X.shape[0])
        Wq = self._solve(self.kernel(self.points[: self.t], X))
        return Wq.T @ self.z[: self.t]

    def variance(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        kd = self.kernel.diag(X)
        if not self.t:
            return kd / self.lam
        Wq = self._solve(self.kernel(self.points[: self.t], X))
        return _clamp_var((kd - np.sum(Wq * Wq, axis=0)) / self.lam)

    def covariance(self, X, z) -> np.ndarray:
        """Posterior covariance ``k_t(x, z)`` for every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        z = np.asarray(z, dtype=float).reshape(1, -1)
        kxz = self.kernel(X, z)[:, 0]
        if not self.t:
            return kxz / self.lam
        P = self.points[: self.t]
        Wq = self._solve(self.kernel(P, X))
        wz = self._solve(self.kernel(P, z))[:, 0]
        return (kxz - Wq.T @ wz) / self.lam

    def predict(self, x):
        x = np.asarray(x, dtype=float)
        m, w = self.mean(x), np.sqrt(self.variance(x))
        if x.ndim == 1:
            return float(m[0]), float(w[0])
        return m, w

    def anchor_covariance(self, j: int) -> np.ndarray:
        """Posterior covariance between every anchor and anchor ``j``."""
        c = self._k_anchor[:, j].copy()
        if self.t:
            W = self.W[: self.t]
            c -= W.T @ W[:, j]
        return c / self.lam

    def beta(self, delta: float, B: float = 1.0) -> float:
        return beta_rkhs(self, delta, B)


# ---------------------------------------------------------------------------
# functional interface


def wls_update(state: LinearState, x, y: float, rho: float) -> LinearState:
    """Add one weighted observation; mutates and returns ``state``."""
    return state.update(x, y, rho)


def wls_predict(state: LinearState, x) -> tuple[float, float]:
    return state.predict(x)


def krr_update(state: KernelState, x, y: float, rho: float) -> KernelState:
    return state.update(x, y, rho)


def krr_predict(state: KernelState, x) -> tuple[float, float]:
    return state.predict(x)


def _beta(log_ratio: float, delta: float) -> float:
    return math.sqrt(2.0 * (0.5 * max(log_ratio, 0.0) + math.log(1.0 / delta)))


def beta_linear(state: LinearState, delta: float, B: float = 1.0) -> float:
    """Anytime confidence scale; ``B`` bounds ``||theta*||_{V0}``."""
    _check_delta(delta)
    return _beta(state.logdet_V - state.logdet_V0, delta) + B


def beta_rkhs(state: KernelState, delta: float, B: float = 1.0) -> float:
    """Anytime confidence scale; ``B`` bounds the RKHS norm of ``f*``."""
    _check_delta(delta)
    return _beta(state.logdet_ratio, delta) + math.sqrt(state.lam) * B


@dataclass
class ConfidenceBand:
    beta: float
    means: np.ndarray
    widths: np.ndarray

    @property
    def upper(self) -> np.ndarray:
        return self.means + self.beta * self.widths

    @property
    def lower(self) -> np.ndarray:
        return self.means - self.beta * self.widths


def confidence_band(state, X, delta: float, B: float = 1.0) -> ConfidenceBand:
    means, widths = state.predict(np.atleast_2d(X))
    return ConfidenceBand(state.beta(delta, B), means, widths)


def gap_surrogate(band: ConfidenceBand, actions=None) -> np.ndarray:
    """Optimistic gap bound: best upper bound minus each lower bound."""
    upper = band.means + band.beta * band.widths
    lower = band.means - band.beta * band.widths
    return np.maximum(upper.max() - lower, 0.0)


def conditional_variances(var_target: float, cov_target, var_all, rho_all) -> np.ndarray:
    """Variance at a target after a hypothetical evaluation of each candidate.

    Vectorised over candidates; ``cov_target[i]`` is the posterior covariance
    of candidate ``i`` with the target.
    """
    denom = np.asarray(rho_all, dtype=float) ** 2 + np.asarray(var_all, dtype=float)
    cov = np.asarray(cov_target, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        red = np.where(denom > 0, cov * cov / denom, 0.0)
    return _clamp_var(var_target - red)


def conditional_width(state, target, candidate, rho_candidate: float) -> float:
    """Width at ``target`` after evaluating ``candidate`` (outcome-free)."""
    if rho_candidate < 0:
        raise ValueError("noise level must be non-negative")
    target = np.asarray(target, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    vt = float(state.variance(target)[0])
    vx = float(state.variance(candidate)[0])
    c = float(state.covariance(candidate, target)[0])
    v = conditional_variances(vt, [c], [vx], [rho_candidate])[0]
    return float(math.sqrt(v))


def dump_beta_csv(path, rows):
    """Write ``(t, logdet_V, beta)`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "logdet_V", "beta"])
        for t, ld, b in rows:
            w.writerow([int(t), format(ld, ".17g"), format(b, ".17g")])
