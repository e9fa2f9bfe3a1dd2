"""
measures.py
-----------
Sampling distributions on R^n used throughout the lab.

Families:
  gaussian              standard normal coordinates (isotropic)
  rademacher_cube       uniform on the vertices {-1,+1}^n (isotropic)
  l1_ball_isotropic     uniform on B_1^n via exponential spacings; isotropic
                        once the scale is calibrated
  weighted_exponential  X_i = Y_i / sqrt(log(i+1)), Y_i ~ Exp(1); never isotropic
  custom_product        i.i.d. coordinates from a named scipy.stats distribution

Truncation at radius R replaces a row X with ||X|| > R by the zero vector,
i.e. rows follow the law of X * 1{||X|| <= R}.

Rows are generated in fixed-size blocks; block b of stream s is drawn from
SeedSequence(seed, spawn_key=(s, b)). A sample of k rows is therefore a
prefix of any larger sample with the same (spec, seed, stream).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping

import numpy as np
from numpy.random import SeedSequence, default_rng
from scipy import stats

from config import config
from errors import DegenerateMeasureError, ParameterError
from logger import get_logger

log = get_logger("measures")

SEED_MASK = (1 << 64) - 1
CALIBRATION_STREAM = 1 << 20


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

class Family(str, Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER_CUBE = "rademacher_cube"
    L1_BALL_ISOTROPIC = "l1_ball_isotropic"
    WEIGHTED_EXPONENTIAL = "weighted_exponential"
    CUSTOM_PRODUCT = "custom_product"


def _is_positive_int(value) -> bool:
    if isinstance(value, bool):
        return False
    try:
        return int(value) == value and int(value) >= 1
    except (TypeError, ValueError):
        return False


def _parse_bool(raw: str) -> bool:
    return str(raw).strip().lower() in ("1", "true", "yes", "on")


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, key...)."""
    return default_rng(SeedSequence(int(seed) & SEED_MASK, spawn_key=tuple(int(k) for k in key)))


def exponential_weights(n: int) -> np.ndarray:
    """Coordinate multipliers 1/sqrt(log(i+1)), i = 1..n."""
    return 1.0 / np.sqrt(np.log(np.arange(2, n + 2, dtype=float)))


@dataclass(frozen=True)
class MeasureSpec:
    family: Family
    n: int
    truncation_radius: float = math.inf
    scale: float = 1.0
    calibrated: bool = False
    symmetrized: bool = False   # weighted_exponential only: random signs
    recenter: bool = False      # consumed by the empirical module
    marginal: str = "laplace"   # custom_product only
    marginal_params: tuple[tuple[str, float], ...] = (("scale", 1 / math.sqrt(2)),)

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family(self.family))
        except ValueError as exc:
            raise ParameterError(f"Unknown measure family: {self.family!r}") from exc
        if not _is_positive_int(self.n):
            raise ParameterError(f"Dimension must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ParameterError(f"scale must be a positive real, got {self.scale!r}")
        if not (self.truncation_radius > 0):
            raise ParameterError(f"truncation_radius must be > 0 or inf, got {self.truncation_radius!r}")
        object.__setattr__(self, "marginal_params", tuple((str(k), float(v)) for k, v in self.marginal_params))
        if self.family is Family.CUSTOM_PRODUCT:
            self.marginal_distribution()

    # ── Derived properties ───────────────────────────────────────────────────

    @property
    def is_truncated(self) -> bool:
        return math.isfinite(self.truncation_radius)

    @property
    def is_isotropic(self) -> bool:
        if self.is_truncated:
            return False
        if self.family in (Family.GAUSSIAN, Family.RADEMACHER_CUBE):
            return self.scale == 1.0 or self.calibrated
        if self.family is Family.L1_BALL_ISOTROPIC:
            return self.calibrated
        if self.family is Family.CUSTOM_PRODUCT:
            return self.calibrated and abs(float(self.marginal_distribution().mean())) < 1e-12
        return False

    def marginal_distribution(self):
        dist = getattr(stats, self.marginal, None)
        if dist is None or not hasattr(dist, "rvs"):
            raise ParameterError(f"Unknown scipy.stats marginal: {self.marginal!r}")
        return dist(**dict(self.marginal_params))

    def with_dimension(self, n: int) -> MeasureSpec:
        return replace(self, n=n)

    def describe(self) -> str:
        radius = "inf" if not self.is_truncated else f"{self.truncation_radius:.4g}"
        return f"{self.family.value}(n={self.n}, scale={self.scale:.6g}, R={radius})"

    # ── Config block round trip ──────────────────────────────────────────────

    def to_config_block(self) -> dict[str, str]:
        return {
            "family": self.family.value,
            "n": str(self.n),
            "scale": repr(float(self.scale)),
            "truncation_radius": "inf" if not self.is_truncated else repr(float(self.truncation_radius)),
            "calibrated": str(self.calibrated).lower(),
            "symmetrized": str(self.symmetrized).lower(),
            "recenter": str(self.recenter).lower(),
            "marginal": self.marginal,
            "marginal_params": ",".join(f"{k}={v!r}" for k, v in self.marginal_params),
        }

    @classmethod
    def from_config_block(cls, block: Mapping[str, str], n: int | None = None) -> MeasureSpec:
        params = block.get("marginal_params", "").strip()
        marginal_params = tuple(
            (k.strip(), float(v)) for k, v in (item.split("=", 1) for item in params.split(",") if item.strip())
        )
        kwargs = dict(
            family=block.get("family", "gaussian").strip(),
            n=int(n if n is not None else block.get("n", "1")),
            scale=float(block.get("scale", "1.0")),
            truncation_radius=float(block.get("truncation_radius", "inf")),
            calibrated=_parse_bool(block.get("calibrated", "false")),
            symmetrized=_parse_bool(block.get("symmetrized", "false")),
            recenter=_parse_bool(block.get("recenter", "false")),
            marginal=block.get("marginal", "laplace").strip(),
        )
        if marginal_params:
            kwargs["marginal_params"] = marginal_params
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class SampleMatrix:
    rows: np.ndarray            # k x n, row i = X_i
    spec: MeasureSpec
    seed: int
    stream: int = 0

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    def prefix(self, k: int) -> SampleMatrix:
        return replace(self, rows=self.rows[:k].copy())

    def scaled(self, lam: float) -> SampleMatrix:
        return replace(self, rows=self.rows * lam, spec=replace(self.spec, scale=self.spec.scale * lam))

    def negated(self, index: int) -> SampleMatrix:
        rows = self.rows.copy()
        rows[index] = -rows[index]
        return replace(self, rows=rows)

    @classmethod
    def from_rows(cls, rows, spec: MeasureSpec | None = None, seed: int = 0) -> SampleMatrix:
        """Wrap fixed rows (tests and forced harness inputs)."""
        arr = np.atleast_2d(np.asarray(rows, dtype=float))
        if spec is None:
            spec = MeasureSpec(Family.GAUSSIAN, arr.shape[1])
        if spec.n != arr.shape[1]:
            raise ParameterError(f"Rows have dimension {arr.shape[1]}, spec has n={spec.n}")
        return cls(rows=arr, spec=spec, seed=seed)

    def to_csv(self, path: str) -> None:
        """One row per sample; metadata as '#' comment lines."""
        with open(path, "w", newline="", encoding="utf-8") as f:
            for key, value in self.spec.to_config_block().items():
                f.write(f"# {key}={value}\n")
            f.write(f"# k={self.k}\n# seed={self.seed}\n# stream={self.stream}\n")
            writer = csv.writer(f)
            writer.writerow([f"x{j + 1}" for j in range(self.n)])
            for row in self.rows:
                writer.writerow([repr(float(v)) for v in row])


@dataclass
class RadialStats:
    mean: float         # estimate of H_k = E max_i ||X_i||
    stderr: float
    k: int
    trials: int


# ---------------------------------------------------------------------------
# Raw draws
# ---------------------------------------------------------------------------

def _raw_block(spec: MeasureSpec, rows: int, rng: np.random.Generator) -> np.ndarray:
    n = spec.n
    family = spec.family
    if family is Family.GAUSSIAN:
        return rng.standard_normal((rows, n))
    if family is Family.RADEMACHER_CUBE:
        return 2.0 * rng.integers(0, 2, size=(rows, n)).astype(float) - 1.0
    if family is Family.L1_BALL_ISOTROPIC:
        # signed exponentials over the sum of n+1 exponentials: uniform on B_1^n
        spacings = rng.standard_exponential((rows, n + 1))
        signs = 2.0 * rng.integers(0, 2, size=(rows, n)) - 1.0
        return signs * spacings[:, :n] / spacings.sum(axis=1, keepdims=True)
    if family is Family.WEIGHTED_EXPONENTIAL:
        draws = rng.standard_exponential((rows, n)) * exponential_weights(n)
        if spec.symmetrized:
            draws *= 2.0 * rng.integers(0, 2, size=(rows, n)) - 1.0
        return draws
    return np.asarray(spec.marginal_distribution().rvs(size=(rows, n), random_state=rng), dtype=float)


def _draw_block(spec: MeasureSpec, rng: np.random.Generator) -> np.ndarray:
    block = _raw_block(spec, config.block_rows, rng) * spec.scale
    if spec.is_truncated:
        norms = np.linalg.norm(block, axis=1)
        block[norms > spec.truncation_radius] = 0.0
    return block


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def sample(spec: MeasureSpec, k: int, seed: int, stream: int = 0) -> SampleMatrix:
    """Draw k i.i.d. rows from spec; deterministic in (spec, k, seed, stream)."""
    if not _is_positive_int(k):
        raise ParameterError(f"Sample size k must be a positive integer, got {k!r}")
    k = int(k)
    n_blocks = -(-k // config.block_rows)
    blocks = [_draw_block(spec, rng_for(seed, stream, b)) for b in range(n_blocks)]
    rows = np.concatenate(blocks, axis=0)[:k]
    log.debug(f"sampled {k} rows from {spec.describe()} seed={seed} stream={stream}")
    return SampleMatrix(rows=rows, spec=spec, seed=int(seed), stream=int(stream))


def calibrate_isotropy(spec: MeasureSpec, sample_size: int = 100_000, seed: int = 0) -> float:
    """
    Scale s for which s*X has coordinate second moment 1.

    Uses the untruncated family at unit scale and averages E x_i^2 over
    coordinates.
    """
    raw = replace(spec, scale=1.0, truncation_radius=math.inf, calibrated=False)
    rows = sample(raw, sample_size, seed, stream=CALIBRATION_STREAM).rows
    second_moment = float(np.mean(rows * rows))
    if not (second_moment > 0 and math.isfinite(second_moment)):
        raise DegenerateMeasureError(f"Estimated second moment {second_moment} for {spec.describe()}")
    scale = 1.0 / math.sqrt(second_moment)
    log.debug(f"isotropy scale for {spec.family.value} n={spec.n}: {scale:.6f}")
    return scale


def isotropic_scale(spec: MeasureSpec) -> float | None:
    """Closed-form isotropy scale where the family has one."""
    if spec.family in (Family.GAUSSIAN, Family.RADEMACHER_CUBE):
        return 1.0
    if spec.family is Family.L1_BALL_ISOTROPIC:
        # E x_1^2 = 2 / ((n+1)(n+2)) for the uniform measure on B_1^n
        return math.sqrt((spec.n + 1) * (spec.n + 2) / 2.0)
    if spec.family is Family.CUSTOM_PRODUCT:
        dist = spec.marginal_distribution()
        second = float(dist.var() + dist.mean() ** 2)
        if not second > 0:
            raise DegenerateMeasureError(f"Marginal {spec.marginal} has zero second moment")
        return 1.0 / math.sqrt(second)
    return None


def with_isotropic_scale(spec: MeasureSpec, sample_size: int = 100_000, seed: int = 0,
                         exact: bool = False) -> MeasureSpec:
    scale = isotropic_scale(spec) if exact else None
    if scale is None:
        scale = calibrate_isotropy(spec, sample_size, seed)
    return replace(spec, scale=scale, calibrated=True)


def second_moment_matrix(spec: MeasureSpec) -> np.ndarray | None:
    """Closed-form E[X X^T]; None for truncated measures."""
    if spec.is_truncated:
        return None
    n, s2 = spec.n, spec.scale ** 2
    if spec.family in (Family.GAUSSIAN, Family.RADEMACHER_CUBE):
        return s2 * np.eye(n)
    if spec.family is Family.L1_BALL_ISOTROPIC:
        return s2 * 2.0 / ((n + 1) * (n + 2)) * np.eye(n)
    if spec.family is Family.WEIGHTED_EXPONENTIAL:
        w = exponential_weights(n)
        if spec.symmetrized:
            return s2 * 2.0 * np.diag(w * w)
        # E Y_i Y_j = 1 (i != j), E Y_i^2 = 2
        return s2 * (np.outer(w, w) + np.diag(w * w))
    dist = spec.marginal_distribution()
    mean, var = float(dist.mean()), float(dist.var())
    return s2 * (var * np.eye(n) + mean * mean * np.ones((n, n)))


def radial_stats(spec: MeasureSpec, k: int, trials: int, seed: int) -> RadialStats:
    """Monte Carlo estimate of H_k = E max_{i<=k} ||X_i||_2."""
    if not _is_positive_int(trials):
        raise ParameterError(f"trials must be a positive integer, got {trials!r}")
    maxima = np.array([
        np.linalg.norm(sample(spec, k, seed, stream=t).rows, axis=1).max()
        for t in range(int(trials))
    ])
    stderr = float(maxima.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return RadialStats(mean=float(maxima.mean()), stderr=stderr, k=int(k), trials=int(trials))


def truncate(spec: MeasureSpec, radius: float) -> MeasureSpec:
    """Spec whose samples are X * 1{||X|| <= radius}."""
    if not (radius > 0):
        raise ParameterError(f"Truncation radius must be positive, got {radius!r}")
    return replace(spec, truncation_radius=float(radius))
