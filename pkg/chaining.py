"""
chaining.py
-----------
Metric entropy on finite point clouds: greedy covering and packing numbers,
Dudley and 2-convex entropy integrals, a greedy admissible sequence for
gamma_2, Sudakov minoration, Gaussian widths and Hamming subset packings.

All covering-type quantities come from one farthest-point traversal started
at the 1-center of the cloud. With insertion radii r_1 = inf >= r_2 >= ...:

    greedy cover   N(eps) = min{j : r_{j+1} <= eps}
    greedy packing P(eps) = max{j : r_j >= 2 eps}      (pairwise >= 2 eps)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from itertools import combinations
from typing import Callable

import numpy as np

from bounds import ConstantSet
from config import config
from empirical import ClassKind, IndexClass
from errors import ParameterError
from logger import get_logger
from measures import MeasureSpec, rng_for, sample
from orlicz import _psi_value

log = get_logger("chaining")

WIDTH_STREAM = 1 << 25
PACKING_STREAM = 1 << 26
PACKING_CANDIDATES = 20_000
EXHAUSTIVE_PACKING_LIMIT = 100_000


class Metric(str, Enum):
    EUCLIDEAN = "euclidean"
    WEIGHTED_EUCLIDEAN = "weighted_euclidean"
    EMPIRICAL_PSI2 = "empirical_psi2"
    PRECOMPUTED = "precomputed"


@dataclass(eq=False)
class PointCloud:
    points: np.ndarray
    metric: Metric = Metric.EUCLIDEAN
    weights: np.ndarray | None = None
    distances: np.ndarray | None = None
    row_function: Callable[[int], np.ndarray] | None = None
    size_hint: int | None = None

    def __post_init__(self):
        self.metric = Metric(self.metric)
        if self.points is not None:
            self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.metric is Metric.WEIGHTED_EUCLIDEAN:
            if self.weights is None:
                raise ParameterError("weighted_euclidean metric needs weights")
            self.weights = np.asarray(self.weights, dtype=float)
        if self.metric is Metric.PRECOMPUTED and self.distances is None and self.row_function is None:
            raise ParameterError("precomputed metric needs a distance matrix or a row function")
        if self.size == 0:
            raise ParameterError("Point cloud is empty")

    # ── Constructors ─────────────────────────────────────────────────────────

    @classmethod
    def euclidean(cls, points) -> PointCloud:
        return cls(points=points)

    @classmethod
    def weighted(cls, points, weights) -> PointCloud:
        return cls(points=points, metric=Metric.WEIGHTED_EUCLIDEAN, weights=weights)

    @classmethod
    def precomputed(cls, distances, points=None) -> PointCloud:
        d = np.asarray(distances, dtype=float)
        pts = np.zeros((d.shape[0], 1)) if points is None else points
        return cls(points=pts, metric=Metric.PRECOMPUTED, distances=d)

    @classmethod
    def empirical_psi2(cls, points, spec: MeasureSpec, sample_budget: int, seed: int) -> PointCloud:
        """psi_2(spec) distances between the points, from one shared sample."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != spec.n:
            raise ParameterError(f"Points of dimension {pts.shape[1]} do not match measure dimension {spec.n}")
        projections = sample(spec, sample_budget, seed).rows @ pts.T
        m = pts.shape[0]
        d = np.zeros((m, m))
        for i in range(m):
            for j in range(i + 1, m):
                d[i, j] = d[j, i] = _psi_value(np.abs(projections[:, i] - projections[:, j]), 2.0)
        log.debug(f"empirical psi_2 distance matrix {m}x{m} from {sample_budget} draws")
        return cls(points=pts, metric=Metric.EMPIRICAL_PSI2, distances=d)

    # ── Distances ────────────────────────────────────────────────────────────

    @property
    def size(self) -> int:
        if self.distances is not None:
            return self.distances.shape[0]
        if self.size_hint is not None:
            return self.size_hint
        return self.points.shape[0]

    def row(self, i: int) -> np.ndarray:
        """Distances from point i to every point."""
        if self.distances is not None:
            return self.distances[i]
        if self.row_function is not None:
            return self.row_function(i)
        diff = self.points - self.points[i]
        if self.metric is Metric.WEIGHTED_EUCLIDEAN:
            diff = diff * self.weights
        return np.linalg.norm(diff, axis=1)

    def distance(self, i: int, j: int) -> float:
        return float(self.row(i)[j])

    def validate(self, triples: int = 100, seed: int = 0, tol: float = 1e-9) -> bool:
        """Symmetry, nonnegativity and zero diagonal on random triples; triangle inequality too for exact metrics."""
        rng = rng_for(seed, 7)
        m = self.size
        for _ in range(triples):
            i, j, l = (int(x) for x in rng.integers(0, m, size=3))
            dij, dji = self.distance(i, j), self.distance(j, i)
            if dij < 0 or abs(dij - dji) > tol * max(1.0, dij) or self.distance(i, i) != 0:
                return False
            if self.metric is not Metric.EMPIRICAL_PSI2:
                if dij > self.distance(i, l) + self.distance(l, j) + tol * max(1.0, dij):
                    return False
        return True


@dataclass
class Traversal:
    """Farthest-point traversal from the 1-center; ties break by lowest index."""
    order: np.ndarray
    radii: np.ndarray               # radii[j] = insertion radius of order[j]; radii[0] = inf
    diameter: float
    prefix_distances: dict[int, np.ndarray] = field(default_factory=dict)


def _admissible_sizes(m: int) -> list[int]:
    sizes = [1]
    s = 0
    while sizes[-1] < m:
        sizes.append(min(2 ** (2 ** s), m))
        s += 1
    return sizes


def traverse(cloud: PointCloud) -> Traversal:
    m = cloud.size
    eccentricity = np.empty(m)
    for i in range(m):
        eccentricity[i] = cloud.row(i).max()
    center = int(np.argmin(eccentricity))
    diameter = float(eccentricity.max())

    snapshots = set(_admissible_sizes(m))
    order = np.empty(m, dtype=int)
    radii = np.empty(m)
    order[0], radii[0] = center, math.inf
    mindist = cloud.row(center).astype(float).copy()
    prefix = {1: mindist.copy()}
    for j in range(1, m):
        nxt = int(np.argmax(mindist))
        order[j], radii[j] = nxt, mindist[nxt]
        mindist = np.minimum(mindist, cloud.row(nxt))
        if j + 1 in snapshots:
            prefix[j + 1] = mindist.copy()
    return Traversal(order=order, radii=radii, diameter=diameter, prefix_distances=prefix)


def _cover_from_radii(radii: np.ndarray, eps: float) -> int:
    # radii[j] is r_{j+1}; first j >= 1 with r_{j+1} <= eps, or m
    below = np.flatnonzero(radii[1:] <= eps)
    return int(below[0] + 1) if below.size else int(radii.size)


def _packing_from_radii(radii: np.ndarray, eps: float) -> int:
    return int(np.count_nonzero(radii >= 2.0 * eps))


def covering_numbers(cloud: PointCloud, epsilons, traversal: Traversal | None = None) -> list[int]:
    """Greedy cover sizes: an upper bound on N(eps), exact for eps >= diameter."""
    tr = traversal or traverse(cloud)
    return [_cover_from_radii(tr.radii, float(e)) for e in epsilons]


def packing_numbers(cloud: PointCloud, epsilons, traversal: Traversal | None = None) -> list[int]:
    """Sizes of greedy subsets with pairwise distance >= 2 eps."""
    tr = traversal or traverse(cloud)
    return [_packing_from_radii(tr.radii, float(e)) for e in epsilons]


def entropy_grid(diameter: float) -> np.ndarray:
    """diam, diam*r, ..., diam*r^scales."""
    return diameter * config.grid_ratio ** np.arange(config.grid_scales + 1)


def _step_integral(cloud: PointCloud, tr: Traversal, integrand: Callable[[float, float, int], float],
                   tail: Callable[[float, int], float]) -> float:
    if cloud.size == 1 or tr.diameter == 0:
        return 0.0
    grid = entropy_grid(tr.diameter)
    total = 0.0
    for hi, lo in zip(grid[:-1], grid[1:]):
        total += integrand(hi, lo, _cover_from_radii(tr.radii, lo))
    return total + tail(grid[-1], cloud.size)


def dudley_gamma2_upper(cloud: PointCloud, traversal: Traversal | None = None) -> float:
    """integral of sqrt(log N(eps)) over the geometric grid (step upper sum) plus eps_min*sqrt(log m)."""
    tr = traversal or traverse(cloud)
    return _step_integral(
        cloud, tr,
        lambda hi, lo, n_cov: (hi - lo) * math.sqrt(math.log(n_cov)),
        lambda eps, m: eps * math.sqrt(math.log(m)),
    )


def two_convex_gamma2_upper(cloud: PointCloud, traversal: Traversal | None = None) -> float:
    """(integral of eps*log N(eps))^{1/2}, same grid and tail convention as dudley_gamma2_upper."""
    tr = traversal or traverse(cloud)
    value = _step_integral(
        cloud, tr,
        lambda hi, lo, n_cov: (hi * hi - lo * lo) / 2.0 * math.log(n_cov),
        lambda eps, m: eps * eps / 2.0 * math.log(m),
    )
    return math.sqrt(value)


@dataclass
class AdmissibleSequence:
    value: float
    sizes: list[int]
    sets: list[list[int]]       # indices of T_s in the cloud
    argmax: int                 # point attaining the sup


def admissible_gamma2(cloud: PointCloud, traversal: Traversal | None = None) -> AdmissibleSequence:
    """
    Greedy admissible sequence: T_0 = 1-center, T_s = first |T_s| traversal
    points with sizes 1, 2, 4, 16, 256, ... . Value = sup_t sum_s 2^{s/2} d(t, T_s).
    """
    tr = traversal or traverse(cloud)
    sizes = _admissible_sizes(cloud.size)
    total = np.zeros(cloud.size)
    for s, size in enumerate(sizes):
        total += 2.0 ** (s / 2.0) * tr.prefix_distances.get(size, np.zeros(cloud.size))
    argmax = int(np.argmax(total))
    return AdmissibleSequence(
        value=float(total[argmax]),
        sizes=sizes,
        sets=[tr.order[:size].tolist() for size in sizes],
        argmax=argmax,
    )


def sudakov_lower(cloud: PointCloud, traversal: Traversal | None = None) -> float:
    """max over the grid of eps * sqrt(log P(eps)), P the greedy 2eps-separated packing."""
    if cloud.metric not in (Metric.EUCLIDEAN, Metric.PRECOMPUTED):
        raise ParameterError(f"sudakov_lower needs a euclidean or precomputed metric, got {cloud.metric.value}")
    tr = traversal or traverse(cloud)
    if cloud.size == 1 or tr.diameter == 0:
        return 0.0
    return max(float(e) * math.sqrt(math.log(_packing_from_radii(tr.radii, e))) for e in entropy_grid(tr.diameter))


@dataclass
class WidthEstimate:
    mean: float
    stderr: float
    trials: int


def gaussian_width(cls: IndexClass, trials: int, seed: int) -> WidthEstimate:
    """Monte Carlo E sup_{t in cls} |<g, t>| with the exact per-draw supremum."""
    if isinstance(trials, bool) or int(trials) < 1:
        raise ParameterError(f"trials must be a positive integer, got {trials!r}")
    g = rng_for(seed, WIDTH_STREAM).standard_normal((int(trials), cls.n))
    if cls.kind is ClassKind.SPHERE:
        sups = np.linalg.norm(g * cls.scale_vector(), axis=1)
    elif cls.kind is ClassKind.L1_BALL:
        sups = np.abs(g * cls.scale_vector()).max(axis=1)
    elif cls.kind in (ClassKind.FINITE_LIST, ClassKind.NET):
        sups = np.abs(g @ cls.vectors.T).max(axis=1)
    else:
        raise ParameterError(f"gaussian_width does not support class kind {cls.kind}")
    stderr = float(sups.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return WidthEstimate(mean=float(sups.mean()), stderr=stderr, trials=int(trials))


# ---------------------------------------------------------------------------
# Subset packing of E_ell
# ---------------------------------------------------------------------------

@dataclass
class SubsetPacking:
    sets: list[tuple[int, ...]]
    min_symdiff: int
    log_size: float
    target: float


def subset_packing(k: int, ell: int, lam: float = 0.5, min_symdiff: int | None = None,
                   constants: ConstantSet | None = None, seed: int = 0,
                   candidates: int = PACKING_CANDIDATES) -> SubsetPacking:
    """
    Greedy packing of the ell-subsets of {0..k-1} with |I xor J| >= min_symdiff
    (default ceil(lam*ell)). Lexicographic candidates when C(k, ell) is small,
    `candidates` seeded random draws otherwise. Target: (1-lam)*ell*log(c*k/ell).
    """
    if not (1 <= ell <= k):
        raise ParameterError(f"Need 1 <= ell <= k, got ell={ell}, k={k}")
    if not (0 < lam <= 0.5):
        raise ParameterError(f"lambda must lie in (0, 1/2], got {lam}")
    constants = constants or ConstantSet()
    separation = math.ceil(lam * ell) if min_symdiff is None else int(min_symdiff)

    if math.comb(k, ell) <= EXHAUSTIVE_PACKING_LIMIT:
        pool = combinations(range(k), ell)
    else:
        rng = rng_for(seed, PACKING_STREAM)
        pool = (tuple(sorted(rng.choice(k, size=ell, replace=False).tolist())) for _ in range(candidates))

    # |I xor J| = 2 (ell - |I and J|) for ell-subsets
    max_overlap = ell - separation / 2.0
    chosen: list[tuple[int, ...]] = []
    masks = np.zeros((64, k))
    for cand in pool:
        mask = np.zeros(k)
        mask[list(cand)] = 1.0
        c = len(chosen)
        if c and (masks[:c] @ mask).max() > max_overlap:
            continue
        if c == masks.shape[0]:
            masks = np.vstack([masks, np.zeros_like(masks)])
        masks[c] = mask
        chosen.append(tuple(cand))
    target = (1.0 - lam) * ell * math.log(constants.c6 * k / ell)
    log.debug(f"subset packing k={k} ell={ell}: {len(chosen)} sets at symdiff >= {separation}")
    return SubsetPacking(sets=chosen, min_symdiff=separation, log_size=math.log(len(chosen)), target=target)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class ChainingReport:
    scales: list[float]
    covering_numbers: list[int]
    dudley_upper: float
    two_convex_upper: float
    admissible_gamma2_upper: float
    sudakov_lower: float | None
    gaussian_width: float | None = None
    gaussian_width_stderr: float | None = None
    semantics: str = "net lower-bound / construction upper-bound"

    def to_json(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(asdict(self), f, indent=2)

    def covering_curve_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("epsilon,N,logN\n")
            for eps, n_cov in zip(self.scales, self.covering_numbers):
                f.write(f"{eps!r},{n_cov},{math.log(n_cov)!r}\n")


def chaining_report(cloud: PointCloud, width_class: IndexClass | None = None,
                    width_trials: int = 2000, seed: int = 0) -> ChainingReport:
    tr = traverse(cloud)
    scales = entropy_grid(tr.diameter).tolist() if tr.diameter > 0 else [0.0]
    covers = covering_numbers(cloud, scales, tr) if tr.diameter > 0 else [1]
    sudakov = sudakov_lower(cloud, tr) if cloud.metric in (Metric.EUCLIDEAN, Metric.PRECOMPUTED) else None
    report = ChainingReport(
        scales=scales,
        covering_numbers=covers,
        dudley_upper=dudley_gamma2_upper(cloud, tr),
        two_convex_upper=two_convex_gamma2_upper(cloud, tr),
        admissible_gamma2_upper=admissible_gamma2(cloud, tr).value,
        sudakov_lower=sudakov,
    )
    if width_class is not None:
        width = gaussian_width(width_class, width_trials, seed)
        report.gaussian_width, report.gaussian_width_stderr = width.mean, width.stderr
    return report


def weighted_vertex_cloud(weights) -> PointCloud:
    """
    The 2n vertices +-e_i of B_1^n under |x| = ||w * x||_2.

    Distances are generated row by row: d(+-e_i, +-e_j) = sqrt(w_i^2 + w_j^2)
    for i != j, d(e_i, -e_i) = 2 w_i.
    """
    w = np.asarray(weights, dtype=float)
    n = w.size
    coord = np.concatenate([np.arange(n), np.arange(n)])
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    sq = (w * w)[coord]

    def row(i: int) -> np.ndarray:
        d = np.sqrt(sq[i] + sq)
        same = coord == coord[i]
        d[same] = np.where(sign[same] == sign[i], 0.0, 2.0 * w[coord[i]])
        return d

    return PointCloud(points=None, metric=Metric.PRECOMPUTED, row_function=row, size_hint=2 * n)
