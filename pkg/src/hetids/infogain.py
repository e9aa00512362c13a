"""Information gain functions.

``F``    log(1 + sigma(x)^2 / rho(x)^2), information about the whole function
``UCB``  log variance ratio at the UCB action after evaluating x
``TS``   same, with a Thompson sampling proposal as target
``E``    average of ``TS`` over several proposals
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import conditional_variances

KINDS = ("F", "UCB", "TS", "E")

# floor on the post-evaluation variance and the cap it implies
VAR_FLOOR = 1e-300
INFO_CAP = 700.0


@dataclass
class InfoVector:
    values: np.ndarray
    kind: str
    target: int | tuple[int, ...] | None = None
    capped: bool = False

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


def info_full(width, rho):
    """``log(1 + width^2 / rho^2)``; works elementwise on arrays."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise ValueError("noise level must be positive")
    w = np.asarray(width, dtype=float)
    out = np.log1p((w / rho) ** 2)
    return float(out) if out.ndim == 0 else out


def log_variance_ratio(var_before: float, var_after):
    """``log(var_before / var_after)`` clamped to ``[0, INFO_CAP]``.

    Candidates that drive ``var_after`` below the floor get ``INFO_CAP``.
    Returns the values and whether the floor was hit.
    """
    var_after = np.asarray(var_after, dtype=float)
    if not var_before > 0:
        return np.zeros_like(var_after), False
    floored = var_after < VAR_FLOOR
    vals = math.log(var_before) - np.log(np.maximum(var_after, VAR_FLOOR))
    vals = np.where(floored, INFO_CAP, np.clip(vals, 0.0, INFO_CAP))
    return vals, bool(np.any(floored))


def info_target(state, target, candidate, rho_candidate: float) -> float:
    """Information about ``f(target)`` gained by evaluating ``candidate``."""
    if not rho_candidate > 0:
        raise ValueError("noise level must be positive")
    target = np.asarray(target, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    vt = float(state.variance(target)[0])
    if vt <= 0:
        return 0.0
    vx = float(state.variance(candidate)[0])
    c = float(state.covariance(candidate, target)[0])
    after = conditional_variances(vt, [c], [vx], [rho_candidate])
    return float(log_variance_ratio(vt, after)[0][0])


def info_ensemble(state, proposals, candidate, rho_candidate: float) -> float:
    """Mean of :func:`info_target` over a list of proposal targets."""
    proposals = list(proposals)
    if not proposals:
        raise ValueError("need at least one proposal")
    return float(np.mean([info_target(state, p, candidate, rho_candidate) for p in proposals]))


# ---------------------------------------------------------------------------
# vectorised over a finite action set


def info_full_all(var_all, rho_all) -> InfoVector:
    return InfoVector(np.log1p(np.asarray(var_all) / np.asarray(rho_all) ** 2), "F")


def info_target_all(var_all, cov_target, target: int, rho_all, kind: str = "UCB") -> InfoVector:
    """Target information for every action given the posterior covariance
    ``cov_target`` of each action with action ``target``."""
    vt = float(var_all[target])
    after = conditional_variances(vt, cov_target, var_all, rho_all)
    vals, capped = log_variance_ratio(vt, after)
    return InfoVector(vals, kind, target, capped)


def info_ensemble_all(var_all, covs, targets, rho_all) -> InfoVector:
    """Average of target informations; ``covs[i]`` pairs with ``targets[i]``."""
    parts = [info_target_all(var_all, c, j, rho_all) for c, j in zip(covs, targets)]
    if not parts:
        raise ValueError("need at least one proposal")
    vals = np.mean([p.values for p in parts], axis=0)
    return InfoVector(vals, "E", tuple(int(j) for j in targets), any(p.capped for p in parts))
