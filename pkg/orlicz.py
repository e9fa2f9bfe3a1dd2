"""
orlicz.py
---------
Empirical psi_alpha (Orlicz) norms of scalar samples and psi_alpha
metrics/diameters of classes of linear functionals.

    ||Y||_{psi_alpha} = inf{u > 0 : E exp(|Y|^alpha / u^alpha) <= 2}

The expectation is replaced by the sample mean; the root in u is found by
bisection on data normalised by max|y|.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np
from scipy.optimize import bisect

from config import config
from empirical import ClassKind, IndexClass, class_directions
from errors import ParameterError
from logger import get_logger
from measures import MeasureSpec, rng_for, sample

log = get_logger("orlicz")

BOOTSTRAP_STREAM = 1 << 21
HOLDOUT_STREAM = 1 << 29


@dataclass
class OrliczEstimate:
    alpha: float
    value: float
    sample_size: int
    ci_low: float
    ci_high: float
    kind: str = "estimate"      # "estimate" or "lower_bound"

    def to_dict(self) -> dict:
        return asdict(self)


def _check_alpha(alpha: float) -> None:
    if not (alpha >= 1):
        raise ParameterError(f"alpha must be >= 1, got {alpha!r}")


def _excess(z: np.ndarray, u: float, alpha: float) -> float:
    """mean(exp(z / u^alpha)) - 2 with z = (|y|/max|y|)^alpha."""
    return float(np.mean(np.exp(z / u ** alpha))) - 2.0


def _psi_value(y: np.ndarray, alpha: float) -> float:
    top = float(y.max())
    if top == 0.0:
        return 0.0
    z = (y / top) ** alpha
    lower = 1.0 / math.log(2.0 * y.size) ** (1.0 / alpha)
    upper = 1e3
    # at `lower` the largest term alone is exp(log 2N) = 2N, so the mean is >= 2
    if _excess(z, lower, alpha) <= 0.0:
        return top * lower
    rtol = config.bisection_rtol
    u = bisect(lambda s: _excess(z, s, alpha), lower, upper, xtol=1e-15, rtol=rtol, maxiter=200)
    # bisect returns a midpoint; move to the feasible side of the root
    while _excess(z, u, alpha) > 0.0:
        u *= 1.0 + rtol / 4.0
    return top * u


def psi_norm_empirical(values, alpha: float, n_boot: int | None = None, seed: int = 0) -> OrliczEstimate:
    """
    Smallest u with mean(exp(|y|^alpha/u^alpha)) <= 2.

    n_boot bootstrap resamples (config default) give a percentile interval,
    widened to contain the point estimate. n_boot=0 skips the bootstrap.
    """
    _check_alpha(alpha)
    y = np.abs(np.asarray(values, dtype=float)).ravel()
    if y.size == 0:
        raise ParameterError("psi_norm_empirical needs at least one value")
    if not np.all(np.isfinite(y)):
        raise ParameterError("psi_norm_empirical got non-finite values")

    value = _psi_value(y, alpha)
    n_boot = config.bootstrap_resamples if n_boot is None else int(n_boot)
    ci_low = ci_high = value
    if n_boot > 0 and value > 0 and y.size > 1:
        rng = rng_for(seed, BOOTSTRAP_STREAM)
        boot = np.array([_psi_value(y[rng.integers(0, y.size, size=y.size)], alpha) for _ in range(n_boot)])
        ci_low = min(float(np.percentile(boot, 2.5)), value)
        ci_high = max(float(np.percentile(boot, 97.5)), value)
    return OrliczEstimate(alpha=float(alpha), value=value, sample_size=int(y.size), ci_low=ci_low, ci_high=ci_high)


def psi_metric(t1, t2, spec: MeasureSpec, alpha: float, sample_size: int, seed: int,
               n_boot: int = 0) -> OrliczEstimate:
    """psi_alpha distance ||<t1 - t2, X>||_{psi_alpha} under spec."""
    _check_alpha(alpha)
    diff = np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float)
    if diff.shape != (spec.n,):
        raise ParameterError(f"Vectors of shape {diff.shape} do not match dimension {spec.n}")
    if not np.any(diff):
        return OrliczEstimate(alpha=float(alpha), value=0.0, sample_size=int(sample_size), ci_low=0.0, ci_high=0.0)
    rows = sample(spec, sample_size, seed).rows
    return psi_norm_empirical(rows @ diff, alpha, n_boot=n_boot, seed=seed)


def _psi_gradient(rows: np.ndarray, t: np.ndarray, u: float, alpha: float) -> np.ndarray:
    """Gradient in t of the implicit root u(t) of mean(exp(|<t,X>|^alpha/u^alpha)) = 2."""
    y = rows @ t
    a = np.abs(y)
    weights = np.exp((a / u) ** alpha)
    d_t = (weights * alpha * a ** (alpha - 1) * np.sign(y)) @ rows / (u ** alpha * len(y))
    d_u = -float(np.mean(weights * alpha * a ** alpha)) / u ** (alpha + 1)
    if d_u == 0.0:
        return np.zeros_like(t)
    return -d_t / d_u


def _sphere_direction(rows: np.ndarray, cls: IndexClass, alpha: float, budget: int, seed: int) -> np.ndarray:
    """Unit t maximising ||<w*t, X>||_psi on rows: scored net plus implicit-gradient ascent."""
    weights = cls.scale_vector()
    weighted_rows = rows * weights
    screen = weighted_rows[: min(config.psi_screen_rows, len(rows))]
    dirs = class_directions(cls, budget, seed) / weights
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    projections = screen @ dirs.T
    scores = np.array([_psi_value(np.abs(projections[:, j]), alpha) for j in range(dirs.shape[0])])
    order = np.argsort(-scores, kind="stable")[: config.psi_restarts]

    best_dir, best = dirs[order[0]], -math.inf
    for start in order:
        u_dir = dirs[start]
        value = _psi_value(np.abs(weighted_rows @ u_dir), alpha)
        for i in range(1, config.psi_iterations + 1):
            grad = _psi_gradient(weighted_rows, u_dir, value, alpha)
            grad -= (grad @ u_dir) * u_dir
            norm = np.linalg.norm(grad)
            if norm < 1e-12:
                break
            candidate = u_dir + (0.5 / math.sqrt(i)) * grad / norm
            candidate /= np.linalg.norm(candidate)
            cand_value = _psi_value(np.abs(weighted_rows @ candidate), alpha)
            if cand_value > value:
                u_dir, value = candidate, cand_value
        if value > best:
            best_dir, best = u_dir, value
    return best_dir


def psi_diameter(cls: IndexClass, spec: MeasureSpec, alpha: float, budget: int, seed: int,
                 sample_size: int | None = None) -> float:
    """
    psi_alpha diameter of the class under spec.

    Finite classes and nets: max over all pairs on a shared sample.
    l1 ball: 2 * max over the coordinate vertices (exact for the sample).
    Sphere: a net of `budget` directions and gradient ascent choose a
    direction on one sample; 2 * its psi norm on an independent holdout
    sample is returned (lower bound).

    sample_size draws are used per sample (config.psi_sample_size by default).
    """
    _check_alpha(alpha)
    if cls.n != spec.n:
        raise ParameterError(f"Class dimension {cls.n} does not match measure dimension {spec.n}")
    sample_size = config.psi_sample_size if sample_size is None else sample_size
    rows = sample(spec, sample_size, seed).rows

    if cls.kind in (ClassKind.FINITE_LIST, ClassKind.NET):
        vectors = cls.vectors
        if vectors.shape[0] < 2:
            return 0.0
        projections = rows @ vectors.T
        return max(
            _psi_value(np.abs(projections[:, i] - projections[:, j]), alpha)
            for i, j in combinations(range(vectors.shape[0]), 2)
        )

    if cls.kind is ClassKind.L1_BALL:
        weighted = rows * cls.scale_vector()
        return 2.0 * max(_psi_value(np.abs(weighted[:, i]), alpha) for i in range(cls.n))

    if cls.kind is ClassKind.SPHERE:
        if isinstance(budget, bool) or not isinstance(budget, (int, np.integer)) or budget < 1:
            raise ParameterError(f"Sphere net size must be a positive integer, got {budget!r}")
        direction = _sphere_direction(rows, cls, alpha, int(budget), seed)
        holdout = sample(spec, sample_size, seed, stream=HOLDOUT_STREAM).rows
        value = 2.0 * _psi_value(np.abs((holdout * cls.scale_vector()) @ direction), alpha)
        log.debug(f"psi_{alpha:g} sphere diameter (lower bound) n={cls.n}: {value:.4f}")
        return value

    raise ParameterError(f"psi_diameter does not support class kind {cls.kind}")
