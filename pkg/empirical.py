"""
empirical.py
------------
Suprema of empirical processes indexed by classes of linear functionals
f_t(x) = <x, t>:

  deviation_sup     sup_t | k^-1 sum_i |<X_i,t>|^p - E|<X,t>|^p |
  tail_count_sup    sup_t |{i : |<X_i,t>| >= u}|           (per level u)
  top_ell_sum_sup   sup_{|t|=1, |I|=ell} sum_{i in I} |<X_i,t>|

Every operation has an exact small-instance route and a scalable heuristic;
heuristic values are lower bounds on the true supremum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations, product

import numpy as np
from scipy import special
from scipy.optimize import minimize

from config import config
from errors import MethodError, ParameterError
from logger import get_logger
from measures import Family, MeasureSpec, SampleMatrix, exponential_weights, rng_for, sample, second_moment_matrix

log = get_logger("empirical")

DIRECTION_STREAM = 1 << 22
REFERENCE_STREAM = 1 << 23
RESTART_STREAM = 1 << 24

CUBE_ENUMERATION_DIM = 12
CHUNK = 4096
MC_NET_CAP = 2048
GROWTH_STARTS = 32
RANDOM_TAIL_DIRECTIONS = 64


# ---------------------------------------------------------------------------
# Index classes and direction nets
# ---------------------------------------------------------------------------

class ClassKind(str, Enum):
    SPHERE = "sphere"
    FINITE_LIST = "finite_list"
    L1_BALL = "l1_ball"
    NET = "net"


class Method(str, Enum):
    EIGEN_EXACT = "eigen_exact"
    NET_LOWER = "net_lower"
    GRADIENT_HEURISTIC = "gradient_heuristic"
    ENUMERATION_EXACT = "enumeration_exact"
    LOCAL_SEARCH = "local_search"


@dataclass(frozen=True, eq=False)
class IndexClass:
    """
    Indexing set T of the functionals <., t>.

    sphere / l1_ball may carry coordinate weights w, in which case the class
    is {w * t : t in S^{n-1}} (resp. B_1^n).
    """
    kind: ClassKind
    n: int
    vectors: np.ndarray | None = None
    resolution: float | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ClassKind(self.kind))
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise ParameterError(f"Class dimension must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if self.kind in (ClassKind.FINITE_LIST, ClassKind.NET):
            if self.vectors is None:
                raise ParameterError(f"{self.kind.value} class needs vectors")
            vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
            if vectors.shape[1] != self.n or vectors.shape[0] == 0:
                raise ParameterError(f"Vectors of shape {vectors.shape} do not fit dimension {self.n}")
            if not np.all(np.isfinite(vectors)):
                raise ParameterError("Class vectors must be finite")
            object.__setattr__(self, "vectors", vectors)
        if self.weights is not None:
            weights = np.asarray(self.weights, dtype=float)
            if weights.shape != (self.n,) or not np.all(weights > 0) or not np.all(np.isfinite(weights)):
                raise ParameterError("Class weights must be n positive finite reals")
            object.__setattr__(self, "weights", weights)

    @classmethod
    def sphere(cls, n: int, weights=None) -> IndexClass:
        return cls(ClassKind.SPHERE, n, weights=weights)

    @classmethod
    def l1_ball(cls, n: int, weights=None) -> IndexClass:
        return cls(ClassKind.L1_BALL, n, weights=weights)

    @classmethod
    def finite(cls, vectors) -> IndexClass:
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        return cls(ClassKind.FINITE_LIST, vectors.shape[1], vectors=vectors)

    @classmethod
    def net(cls, vectors, resolution: float) -> IndexClass:
        vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
        return cls(ClassKind.NET, vectors.shape[1], vectors=vectors, resolution=float(resolution))

    @property
    def is_symmetric(self) -> bool:
        if self.kind in (ClassKind.SPHERE, ClassKind.L1_BALL):
            return True
        rows = {tuple(v) for v in self.vectors}
        return all(tuple(-v) in rows for v in self.vectors)

    @property
    def radius(self) -> float:
        """sup_{t in T} ||t||_2."""
        if self.kind in (ClassKind.SPHERE, ClassKind.L1_BALL):
            return float(self.scale_vector().max())
        return float(np.linalg.norm(self.vectors, axis=1).max())

    def scale_vector(self) -> np.ndarray:
        return np.ones(self.n) if self.weights is None else self.weights


def sphere_directions(n: int, size: int, seed: int) -> np.ndarray:
    """`size` uniform points on S^{n-1} (normalised Gaussians)."""
    g = rng_for(seed, DIRECTION_STREAM).standard_normal((int(size), n))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.maximum(norms, np.finfo(float).tiny)


def l1_sphere_points(n: int, size: int, seed: int) -> np.ndarray:
    """Uniform points on the boundary of B_1^n."""
    rng = rng_for(seed, DIRECTION_STREAM, 1)
    spacings = rng.standard_exponential((int(size), n))
    signs = 2.0 * rng.integers(0, 2, size=(int(size), n)) - 1.0
    return signs * spacings / spacings.sum(axis=1, keepdims=True)


def net_size(n: int) -> int:
    return int(min(config.net_cap, 20 ** min(n, 8)))


def class_directions(cls: IndexClass, budget: int, seed: int) -> np.ndarray:
    """Candidate elements of the class (rows), in class coordinates."""
    if cls.kind in (ClassKind.FINITE_LIST, ClassKind.NET):
        return cls.vectors
    weights = cls.scale_vector()
    if cls.kind is ClassKind.SPHERE:
        return sphere_directions(cls.n, budget, seed) * weights
    vertices = np.diag(weights)
    extra = max(int(budget) - cls.n, 0)
    if extra == 0:
        return vertices
    return np.vstack([vertices, l1_sphere_points(cls.n, extra, seed) * weights])


# ---------------------------------------------------------------------------
# Population moments
# ---------------------------------------------------------------------------

@dataclass
class MomentEstimate:
    value: float
    stderr: float
    exact: bool


def _gaussian_abs_moment(p: float) -> float:
    """E|g|^p for standard normal g."""
    return 2.0 ** (p / 2.0) * math.gamma((p + 1.0) / 2.0) / math.sqrt(math.pi)


class PopulationMoments:
    """E|<X,t>|^p for a measure: closed forms where available, else a seeded reference sample."""

    def __init__(self, spec: MeasureSpec, seed: int = 0, reference_size: int | None = None):
        self.spec = spec
        self.seed = int(seed)
        self.reference_size = int(reference_size or config.reference_sample)
        self.recentered = bool(spec.recenter)
        self.second_moment = None if spec.recenter else second_moment_matrix(spec)
        self._reference: np.ndarray | None = None

    @property
    def _plain(self) -> bool:
        return not self.spec.is_truncated and not self.spec.recenter

    @property
    def _gaussian(self) -> bool:
        return self._plain and self.spec.family is Family.GAUSSIAN

    @property
    def _enumerable(self) -> bool:
        return (self.spec.family is Family.RADEMACHER_CUBE and not self.spec.is_truncated
                and self.spec.n <= CUBE_ENUMERATION_DIM)

    def is_closed_form(self, p: float) -> bool:
        return self._gaussian or self._enumerable or (p == 2 and self.second_moment is not None)

    @property
    def reference(self) -> np.ndarray:
        if self._reference is None:
            if self._enumerable:
                ref = np.array(list(product((-1.0, 1.0), repeat=self.spec.n))) * self.spec.scale
            else:
                ref = sample(self.spec, self.reference_size, self.seed, stream=REFERENCE_STREAM).rows
                log.debug(f"reference sample of {self.reference_size} rows for {self.spec.describe()}")
            if self.recentered:
                ref = ref - ref.mean(axis=0)
            self._reference = ref
        return self._reference

    def values(self, directions: np.ndarray, p: float) -> np.ndarray:
        T = np.atleast_2d(directions)
        if self._gaussian:
            return _gaussian_abs_moment(p) * (self.spec.scale * np.linalg.norm(T, axis=1)) ** p
        if p == 2 and self.second_moment is not None:
            return np.einsum("mi,ij,mj->m", T, self.second_moment, T)
        return _mean_abs_power(self.reference, T, p)

    def gradients(self, directions: np.ndarray, p: float) -> np.ndarray:
        T = np.atleast_2d(directions)
        if self._gaussian:
            norms = np.linalg.norm(T, axis=1, keepdims=True)
            return _gaussian_abs_moment(p) * self.spec.scale ** p * p * norms ** (p - 2) * T
        if p == 2 and self.second_moment is not None:
            return 2.0 * T @ self.second_moment
        return _abs_power_gradient(self.reference, T, p)

    def moment(self, t, p: float) -> MomentEstimate:
        if not (p >= 1):
            raise ParameterError(f"p must be >= 1, got {p!r}")
        t = np.asarray(t, dtype=float)
        if t.shape != (self.spec.n,):
            raise ParameterError(f"Direction of shape {t.shape} does not match dimension {self.spec.n}")
        if not np.any(t):
            return MomentEstimate(0.0, 0.0, True)
        if self._gaussian:
            return MomentEstimate(float(self.values(t, p)[0]), 0.0, True)
        if p == 2 and self.second_moment is not None:
            return MomentEstimate(float(t @ self.second_moment @ t), 0.0, True)
        support = np.flatnonzero(t)
        if self._plain and support.size == 1:
            exact = self._coordinate_moment(int(support[0]), abs(float(t[support[0]])), p)
            if exact is not None:
                return MomentEstimate(exact, 0.0, True)
        vals = np.abs(self.reference @ t) ** p
        if self._enumerable:
            return MomentEstimate(float(vals.mean()), 0.0, True)
        return MomentEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)), False)

    def _coordinate_moment(self, j: int, c: float, p: float) -> float | None:
        s = self.spec.scale
        family = self.spec.family
        if family is Family.RADEMACHER_CUBE:
            return (c * s) ** p
        if family is Family.L1_BALL_ISOTROPIC:
            # |x_j| ~ Beta(1, n) under the uniform measure on B_1^n
            n = self.spec.n
            return (c * s) ** p * n * float(special.beta(p + 1.0, n))
        if family is Family.WEIGHTED_EXPONENTIAL:
            w = float(exponential_weights(self.spec.n)[j])
            return (c * s * w) ** p * math.gamma(p + 1.0)
        if family is Family.CUSTOM_PRODUCT:
            dist = self.spec.marginal_distribution()
            return (c * s) ** p * float(dist.expect(lambda x: np.abs(x) ** p))
        return None


def population_moment(spec: MeasureSpec, t, p: float, seed: int = 0) -> MomentEstimate:
    """E|<X,t>|^p; closed form where available, Monte Carlo with stderr otherwise."""
    return PopulationMoments(spec, seed).moment(t, p)


def _mean_abs_power(rows: np.ndarray, directions: np.ndarray, p: float) -> np.ndarray:
    out = np.empty(directions.shape[0])
    for start in range(0, directions.shape[0], CHUNK):
        block = np.abs(rows @ directions[start:start + CHUNK].T)
        out[start:start + CHUNK] = np.mean(block ** p, axis=0)
    return out


def _abs_power_gradient(rows: np.ndarray, directions: np.ndarray, p: float) -> np.ndarray:
    y = rows @ directions.T
    coeff = p * np.abs(y) ** (p - 1) * np.sign(y)
    return coeff.T @ rows / rows.shape[0]


# ---------------------------------------------------------------------------
# Deviation supremum
# ---------------------------------------------------------------------------

@dataclass
class DeviationResult:
    value: float
    argmax_direction: np.ndarray
    method: Method
    p: float
    recentered: bool = False

    @property
    def is_exact(self) -> bool:
        return self.method in (Method.EIGEN_EXACT, Method.ENUMERATION_EXACT)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "argmax_direction": [float(x) for x in self.argmax_direction],
            "method": self.method.value,
            "p": self.p,
            "recentered": self.recentered,
        }


def export_directions(path: str, results: list[DeviationResult]) -> None:
    """Write argmax directions, one row per result."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        n = len(results[0].argmax_direction) if results else 0
        writer.writerow(["method", "p", "value"] + [f"t{j + 1}" for j in range(n)])
        for r in results:
            writer.writerow([r.method.value, r.p, repr(r.value)] + [repr(float(x)) for x in r.argmax_direction])


def _sample_rows(smp: SampleMatrix) -> np.ndarray:
    rows = smp.rows
    if smp.spec.recenter:
        rows = rows - rows.mean(axis=0)
    return rows


def _eigen_exact(rows: np.ndarray, cls: IndexClass, pop: PopulationMoments, p: float) -> DeviationResult:
    if p != 2:
        raise MethodError(f"eigen_exact needs p = 2, got p = {p}")
    if cls.kind is not ClassKind.SPHERE:
        raise MethodError(f"eigen_exact needs the sphere class, got {cls.kind.value}")
    if pop.second_moment is None:
        raise MethodError("eigen_exact needs a closed-form second-moment matrix (untruncated, not recentered)")
    w = cls.scale_vector()
    gram = rows.T @ rows / rows.shape[0]
    diff = (gram - pop.second_moment) * np.outer(w, w)
    eigvals, eigvecs = np.linalg.eigh(diff)
    idx = 0 if abs(eigvals[0]) >= abs(eigvals[-1]) else len(eigvals) - 1
    return DeviationResult(float(abs(eigvals[idx])), eigvecs[:, idx] * w, Method.EIGEN_EXACT, 2.0)


def _net_lower(rows: np.ndarray, cls: IndexClass, pop: PopulationMoments, p: float,
               budget: int, seed: int) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    if not pop.is_closed_form(p) and cls.kind in (ClassKind.SPHERE, ClassKind.L1_BALL):
        budget = min(budget, MC_NET_CAP)
    directions = class_directions(cls, budget, seed)
    signed = _mean_abs_power(rows, directions, p) - pop.values(directions, p)
    best = int(np.argmax(np.abs(signed)))
    return float(abs(signed[best])), directions[best].copy(), directions, signed


def _sphere_objective(rows, pop, p, w, sign):
    """Signed deviation f(u) = sign * (emp - pop) at t = w*u and its u-gradient."""
    k = rows.shape[0]

    def value(U):
        T = U * w
        return sign * (_mean_abs_power(rows, T, p) - pop.values(T, p))

    def gradient(U):
        T = U * w
        y = rows @ T.T
        g_emp = (p * np.abs(y) ** (p - 1) * np.sign(y)).T @ rows / k
        return sign[:, None] * (g_emp - pop.gradients(T, p)) * w

    return value, gradient


def _gradient_heuristic(rows, cls, pop, p, net_best, net_dirs, net_signed, seed):
    w = cls.scale_vector()
    n = cls.n
    restarts = config.gradient_restarts
    rng = rng_for(seed, RESTART_STREAM)

    top = np.argsort(-np.abs(net_signed), kind="stable")[: restarts // 2]
    starts = net_dirs[top] / w
    random_starts = rng.standard_normal((restarts - len(top), n))
    U = np.vstack([starts, random_starts])
    U /= np.linalg.norm(U, axis=1, keepdims=True)

    raw = _mean_abs_power(rows, U * w, p) - pop.values(U * w, p)
    sign = np.where(raw >= 0, 1.0, -1.0)
    value, gradient = _sphere_objective(rows, pop, p, w, sign)

    best_vals = value(U)
    best_U = U.copy()
    for i in range(1, config.gradient_iterations + 1):
        G = gradient(U)
        G -= np.sum(G * U, axis=1, keepdims=True) * U
        norms = np.linalg.norm(G, axis=1, keepdims=True)
        U = U + (1.0 / math.sqrt(i)) * G / np.maximum(norms, 1e-300)
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        vals = value(U)
        better = vals > best_vals
        best_vals[better] = vals[better]
        best_U[better] = U[better]

    best_value, best_dir = -math.inf, None
    for r in np.argsort(-best_vals, kind="stable")[: config.polish_starts]:
        s = sign[r:r + 1]
        f, g = _sphere_objective(rows, pop, p, w, s)

        def objective(v):
            nv = np.linalg.norm(v)
            u = (v / nv)[None, :]
            return -float(f(u)[0])

        def jac(v):
            nv = np.linalg.norm(v)
            u = v / nv
            grad = g(u[None, :])[0]
            return -(grad - (grad @ u) * u) / nv

        res = minimize(objective, best_U[r], jac=jac, method="BFGS", options={"gtol": 1e-12, "maxiter": 200})
        u = res.x / np.linalg.norm(res.x)
        polished = float(f(u[None, :])[0])
        candidate, direction = (polished, u) if polished > best_vals[r] else (float(best_vals[r]), best_U[r])
        if candidate > best_value:
            best_value, best_dir = candidate, direction

    if best_value >= net_best:
        return best_value, best_dir * w
    return net_best, None


def deviation_sup(smp: SampleMatrix, cls: IndexClass, p: float,
                  method: Method | str = Method.GRADIENT_HEURISTIC,
                  population: PopulationMoments | None = None,
                  budget: int | None = None, seed: int = 0) -> DeviationResult:
    """sup over the class of |k^-1 sum_i |<X_i,t>|^p - E|<X,t>|^p|."""
    if not (p >= 1):
        raise ParameterError(f"p must be >= 1, got {p!r}")
    method = Method(method)
    if cls.n != smp.n:
        raise ParameterError(f"Class dimension {cls.n} does not match sample dimension {smp.n}")
    pop = population or PopulationMoments(smp.spec, seed)
    rows = _sample_rows(smp)

    if method is Method.EIGEN_EXACT:
        result = _eigen_exact(rows, cls, pop, p)
        result.recentered = pop.recentered
        return result
    if method not in (Method.NET_LOWER, Method.GRADIENT_HEURISTIC):
        raise MethodError(f"deviation_sup does not support method {method.value}")

    budget = net_size(cls.n) if budget is None else int(budget)
    net_best, net_dir, net_dirs, net_signed = _net_lower(rows, cls, pop, p, budget, seed)
    if method is Method.NET_LOWER or cls.kind is not ClassKind.SPHERE:
        if method is Method.GRADIENT_HEURISTIC and cls.kind is ClassKind.L1_BALL:
            log.warning("gradient ascent is not available on the l1 ball; returning the net value")
        return DeviationResult(net_best, net_dir, Method.NET_LOWER, float(p), pop.recentered)

    value, direction = _gradient_heuristic(rows, cls, pop, p, net_best, net_dirs, net_signed, seed)
    if direction is None:
        direction = net_dir
    return DeviationResult(value, direction, Method.GRADIENT_HEURISTIC, float(p), pop.recentered)


# ---------------------------------------------------------------------------
# Uniform tail counts
# ---------------------------------------------------------------------------

@dataclass
class TailCounts:
    levels: np.ndarray
    counts: np.ndarray
    method: Method
    candidates: int = 0

    @property
    def is_exact(self) -> bool:
        return self.method is Method.ENUMERATION_EXACT


def _affine_min_norm_directions(points: np.ndarray) -> np.ndarray:
    """
    Unit directions of the min-norm points of the affine hulls of each batch
    of points (batch x s x n). Degenerate hulls give zero rows.
    """
    s = points.shape[1]
    gram = points @ points.transpose(0, 2, 1)
    ones = np.ones((points.shape[0], s, 1))
    out = np.zeros((points.shape[0], points.shape[2]))
    try:
        y = np.linalg.solve(gram, ones)
        ok = np.ones(points.shape[0], dtype=bool)
    except np.linalg.LinAlgError:
        y = np.zeros_like(ones)
        ok = np.zeros(points.shape[0], dtype=bool)
        for b in range(points.shape[0]):
            try:
                y[b] = np.linalg.solve(gram[b], ones[b])
                ok[b] = True
            except np.linalg.LinAlgError:
                continue
    total = y.sum(axis=(1, 2))
    ok &= np.isfinite(total) & (np.abs(total) > 1e-300)
    x = np.einsum("bs,bsn->bn", y[:, :, 0], points)
    x[ok] /= total[ok, None]
    norms = np.linalg.norm(x, axis=1)
    ok &= norms > 1e-12
    out[ok] = x[ok] / norms[ok, None]
    return out


def _enumerated_tail_directions(rows: np.ndarray) -> np.ndarray:
    """Min-norm directions of every signed subset of at most n rows (global sign fixed)."""
    k, n = rows.shape
    found = []
    for size in range(1, min(n, k) + 1):
        subsets = np.array(list(combinations(range(k), size)))
        signs = np.array([(1.0,) + rest for rest in product((1.0, -1.0), repeat=size - 1)])
        points = rows[subsets][:, None, :, :] * signs[None, :, :, None]
        found.append(_affine_min_norm_directions(points.reshape(-1, size, n)))
    return np.vstack(found)


def _grown_tail_directions(rows: np.ndarray) -> np.ndarray:
    """Greedy growth: add rows by decreasing |<X_j,t>|, refit t by least squares on signed rows."""
    norms = np.linalg.norm(rows, axis=1)
    starts = np.argsort(-norms, kind="stable")[:GROWTH_STARTS]
    found = []
    for i in starts:
        if norms[i] == 0:
            continue
        t = rows[i] / norms[i]
        chosen = [int(i)]
        stale = 0
        best = 1
        while len(chosen) < rows.shape[0] and stale < 3:
            proj = rows @ t
            order = np.argsort(-np.abs(proj), kind="stable")
            nxt = next(int(j) for j in order if j not in chosen)
            chosen.append(nxt)
            signed = rows[chosen] * np.sign(rows[chosen] @ t + 1e-300)[:, None]
            cand, *_ = np.linalg.lstsq(signed, np.ones(len(chosen)), rcond=None)
            cn = np.linalg.norm(cand)
            if cn == 0:
                break
            t = cand / cn
            found.append(t)
            count = int(np.sum(np.abs(rows @ t) >= np.min(np.abs(signed @ t))))
            if count > best:
                best, stale = count, 0
            else:
                stale += 1
    return np.array(found) if found else np.zeros((0, rows.shape[1]))


def tail_count_sup(smp: SampleMatrix, cls: IndexClass, levels, budget: int | None = None,
                   seed: int = 0, exact: bool | None = None) -> TailCounts:
    """
    For each level u, sup over the class of |{i : |<X_i,t>| >= u}|.

    Sphere classes with k <= config.tail_enumeration_rows are solved exactly
    by enumerating signed row subsets; otherwise a net plus greedy growth
    gives a lower bound. Finite classes are always exact.
    """
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or levels.size == 0 or np.any(levels <= 0) or np.any(np.diff(levels) <= 0):
        raise ParameterError("levels must be positive and strictly increasing")
    if cls.n != smp.n:
        raise ParameterError(f"Class dimension {cls.n} does not match sample dimension {smp.n}")
    rows = _sample_rows(smp)
    k = rows.shape[0]

    if cls.kind in (ClassKind.FINITE_LIST, ClassKind.NET):
        directions, method = cls.vectors, Method.ENUMERATION_EXACT
        weighted = rows
    else:
        w = cls.scale_vector()
        weighted = rows * w
        budget = net_size(cls.n) if budget is None else int(budget)
        if cls.kind is ClassKind.L1_BALL:
            directions = class_directions(IndexClass.l1_ball(cls.n), budget, seed)
            method = Method.NET_LOWER
        else:
            can_enumerate = k <= config.tail_enumeration_rows
            if exact and not can_enumerate:
                raise MethodError(f"exact tail counts need k <= {config.tail_enumeration_rows}, got {k}")
            use_exact = can_enumerate if exact is None else bool(exact)
            parts = [sphere_directions(cls.n, RANDOM_TAIL_DIRECTIONS, seed)]
            if use_exact:
                parts.append(_enumerated_tail_directions(weighted))
                method = Method.ENUMERATION_EXACT
            else:
                parts.append(sphere_directions(cls.n, budget, seed + 1))
                parts.append(_grown_tail_directions(weighted))
                method = Method.GRADIENT_HEURISTIC
            directions = np.vstack(parts)

    counts = np.zeros(levels.size, dtype=int)
    for start in range(0, directions.shape[0], CHUNK):
        proj = np.abs(weighted @ directions[start:start + CHUNK].T)
        for j, u in enumerate(levels):
            counts[j] = max(counts[j], int((proj >= u).sum(axis=0).max()))
    log.debug(f"tail counts over {directions.shape[0]} directions ({method.value}): {counts.tolist()}")
    return TailCounts(levels=levels, counts=counts, method=method, candidates=int(directions.shape[0]))


# ---------------------------------------------------------------------------
# Top-ell signed sums
# ---------------------------------------------------------------------------

@dataclass
class TopEllResult:
    value: float
    method: Method
    subset: tuple[int, ...] = ()
    signs: tuple[float, ...] = ()
    direction: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def is_exact(self) -> bool:
        return self.method is Method.ENUMERATION_EXACT


def _enumeration_size(k: int, ell: int) -> int:
    return math.comb(k, ell) * 2 ** (ell - 1)


def _top_ell_enumeration(rows: np.ndarray, ell: int) -> TopEllResult:
    k, n = rows.shape
    signs = np.array([(1.0,) + rest for rest in product((1.0, -1.0), repeat=ell - 1)])
    batch = max(1, (4 * 1024 * 1024) // (signs.shape[0] * n * ell))
    best, best_subset, best_signs = -1.0, (), ()
    combos = combinations(range(k), ell)
    while True:
        chunk = [c for _, c in zip(range(batch), combos)]
        if not chunk:
            break
        idx = np.array(chunk)
        sums = np.einsum("se,ben->bsn", signs, rows[idx])
        norms = np.linalg.norm(sums, axis=2)
        flat = int(np.argmax(norms))
        b, s = divmod(flat, norms.shape[1])
        if norms[b, s] > best:
            best, best_subset, best_signs = float(norms[b, s]), tuple(int(i) for i in idx[b]), tuple(signs[s])
    total = (rows[list(best_subset)] * np.array(best_signs)[:, None]).sum(axis=0)
    direction = total / best if best > 0 else np.zeros(n)
    return TopEllResult(best, Method.ENUMERATION_EXACT, best_subset, best_signs, direction)


def _top_ell_local_search(rows: np.ndarray, ell: int) -> TopEllResult:
    k, n = rows.shape
    best = TopEllResult(-1.0, Method.LOCAL_SEARCH)
    norms = np.linalg.norm(rows, axis=1)
    for start in range(k):
        if norms[start] == 0:
            continue
        t = rows[start] / norms[start]
        chosen = None
        # alternate top-ell selection and direction refit until stable
        for _ in range(4 * k):
            proj = rows @ t
            order = np.argsort(-np.abs(proj), kind="stable")[:ell]
            eps = np.where(proj[order] >= 0, 1.0, -1.0)
            key = (tuple(sorted(order.tolist())), tuple(eps[np.argsort(order)]))
            total = eps @ rows[order]
            tn = np.linalg.norm(total)
            if key == chosen or tn == 0:
                break
            chosen, t = key, total / tn
        members = np.array(order)
        signs = eps.copy()
        total = signs @ rows[members]
        value = float(np.linalg.norm(total))
        # swap rows and flip signs while the norm increases
        improved = True
        while improved:
            improved = False
            inside = np.zeros(k, dtype=bool)
            inside[members] = True
            outside = np.flatnonzero(~inside)
            for pos in range(ell):
                removed = total - signs[pos] * rows[members[pos]]
                flipped = np.linalg.norm(removed - signs[pos] * rows[members[pos]])
                cand_val, cand = flipped, ("flip", None, None)
                if outside.size:
                    plus = np.linalg.norm(removed + rows[outside], axis=1)
                    minus = np.linalg.norm(removed - rows[outside], axis=1)
                    j_plus, j_minus = int(np.argmax(plus)), int(np.argmax(minus))
                    if plus[j_plus] > cand_val:
                        cand_val, cand = plus[j_plus], ("swap", outside[j_plus], 1.0)
                    if minus[j_minus] > cand_val:
                        cand_val, cand = minus[j_minus], ("swap", outside[j_minus], -1.0)
                if cand_val > value * (1 + 1e-12):
                    if cand[0] == "flip":
                        signs[pos] = -signs[pos]
                    else:
                        members[pos], signs[pos] = cand[1], cand[2]
                    total = signs @ rows[members]
                    value = float(np.linalg.norm(total))
                    improved = True
                    break
        if value > best.value:
            order = np.argsort(members)
            best = TopEllResult(value, Method.LOCAL_SEARCH, tuple(int(i) for i in members[order]),
                                tuple(float(s) for s in signs[order]), total / value if value > 0 else total)
    if best.value < 0:
        return TopEllResult(0.0, Method.LOCAL_SEARCH, tuple(range(ell)), (1.0,) * ell, np.zeros(n))
    return best


def top_ell_sum_sup(smp: SampleMatrix, ell: int, method: Method | str | None = None) -> TopEllResult:
    """
    sup over unit t and |I| = ell of sum_{i in I} |<X_i,t>|, computed as
    max over I and signs of ||sum_{i in I} eps_i X_i||_2.
    """
    rows = smp.rows
    k = rows.shape[0]
    if isinstance(ell, bool) or int(ell) != ell or not 1 <= ell <= k:
        raise ParameterError(f"ell must be in [1, {k}], got {ell!r}")
    ell = int(ell)
    feasible = k <= config.top_ell_enumeration_rows and _enumeration_size(k, ell) <= config.enumeration_limit
    if method is None:
        method = Method.ENUMERATION_EXACT if feasible else Method.LOCAL_SEARCH
    method = Method(method)
    if method is Method.ENUMERATION_EXACT:
        if not feasible:
            raise MethodError(f"enumeration over C({k},{ell}) signed subsets exceeds the configured limits")
        return _top_ell_enumeration(rows, ell)
    if method is Method.LOCAL_SEARCH:
        return _top_ell_local_search(rows, ell)
    raise MethodError(f"top_ell_sum_sup does not support method {method.value}")
