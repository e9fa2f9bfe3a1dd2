"""
geometry.py
-----------
The random operator Gamma x = sum_i <X_i, x> e_i, its kernel, diameters of
kernel sections K ∩ ker(Gamma) of symmetric convex bodies, and the fixed-point
radii that bound those diameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Callable

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import bisect, linprog

from bounds import ConstantSet
from chaining import PointCloud, admissible_gamma2, gaussian_width
from config import config
from empirical import IndexClass, sphere_directions
from errors import ParameterError, PreconditionError
from logger import get_logger
from measures import Family, MeasureSpec, SampleMatrix, rng_for, sample
from orlicz import psi_norm_empirical

log = get_logger("geometry")

SECTION_STREAM = 1 << 27
ELL_E_STREAM = 1 << 28
GAUSSIAN_PSI2 = math.sqrt(8.0 / 3.0)


# ---------------------------------------------------------------------------
# Operator and bodies
# ---------------------------------------------------------------------------

class Scaling(str, Enum):
    RAW = "raw"
    INV_SQRT_K = "inv_sqrt_k"


@dataclass(eq=False)
class RandomOperator:
    matrix: np.ndarray          # k x n, row i = X_i
    scaling: Scaling = Scaling.RAW

    def __post_init__(self):
        self.scaling = Scaling(self.scaling)
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise ParameterError("Operator matrix must be two-dimensional")
        if not np.all(np.isfinite(self.matrix)):
            raise ParameterError("Operator matrix must be finite")

    @classmethod
    def from_sample(cls, smp: SampleMatrix, scaling: Scaling | str = Scaling.RAW) -> RandomOperator:
        return cls(smp.rows, Scaling(scaling))

    @classmethod
    def empty(cls, n: int) -> RandomOperator:
        return cls(np.zeros((0, n)))

    @property
    def k(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    @property
    def effective(self) -> np.ndarray:
        if self.scaling is Scaling.INV_SQRT_K and self.k > 0:
            return self.matrix / math.sqrt(self.k)
        return self.matrix

    def prefix(self, k: int) -> RandomOperator:
        return RandomOperator(self.matrix[:k], self.scaling)


class BodyKind(str, Enum):
    L1_BALL = "l1_ball"
    L2_BALL = "l2_ball"
    FINITE_POLYTOPE = "finite_polytope"
    SCALED = "scaled"


@dataclass(frozen=True, eq=False)
class BodySpec:
    kind: BodyKind
    vertices: np.ndarray | None = None
    base: BodySpec | None = None
    rho: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", BodyKind(self.kind))
        if self.kind is BodyKind.FINITE_POLYTOPE:
            if self.vertices is None:
                raise ParameterError("finite_polytope needs vertices")
            verts = np.atleast_2d(np.asarray(self.vertices, dtype=float))
            rows = {tuple(v) for v in verts}
            if not all(tuple(-v) in rows for v in verts):
                raise ParameterError("Polytope vertex list must be sign-symmetric")
            object.__setattr__(self, "vertices", verts)
        if self.kind is BodyKind.SCALED:
            if self.base is None or not (self.rho > 0):
                raise ParameterError("scaled body needs a base body and rho > 0")

    @classmethod
    def l1_ball(cls) -> BodySpec:
        return cls(BodyKind.L1_BALL)

    @classmethod
    def l2_ball(cls) -> BodySpec:
        return cls(BodyKind.L2_BALL)

    @classmethod
    def polytope(cls, vertices) -> BodySpec:
        return cls(BodyKind.FINITE_POLYTOPE, vertices=vertices)

    @classmethod
    def scaled(cls, base: BodySpec, rho: float) -> BodySpec:
        return cls(BodyKind.SCALED, base=base, rho=float(rho))

    def gauge(self, x) -> float:
        """Minkowski functional ||x||_K."""
        x = np.asarray(x, dtype=float)
        if self.kind is BodyKind.L1_BALL:
            return float(np.abs(x).sum())
        if self.kind is BodyKind.L2_BALL:
            return float(np.linalg.norm(x))
        if self.kind is BodyKind.SCALED:
            return self.base.gauge(x) / self.rho
        # min sum(lambda) s.t. V^T lambda = x, lambda >= 0
        m = self.vertices.shape[0]
        res = linprog(np.ones(m), A_eq=self.vertices.T, b_eq=x, bounds=[(0, None)] * m, method="highs")
        return float(res.fun) if res.status == 0 else math.inf

    def contains(self, x, tol: float = 0.0) -> bool:
        return self.gauge(x) <= 1.0 + tol


# ---------------------------------------------------------------------------
# Kernel and section diameters
# ---------------------------------------------------------------------------

def kernel_basis(op: RandomOperator, tolerance: float | None = None) -> np.ndarray:
    """Orthonormal n x (n - r) basis of ker(Gamma); r the numerical rank at tolerance * sigma_max."""
    tol = config.rank_tolerance if tolerance is None else tolerance
    if op.k == 0 or not np.any(op.matrix):
        return np.eye(op.n)
    return null_space(op.effective, rcond=tol)


@dataclass
class SectionResult:
    diameter: float
    certificate: np.ndarray
    exact: bool
    method: str
    kernel_dim: int

    def to_dict(self) -> dict:
        return {
            "diameter": self.diameter,
            "certificate": [float(x) for x in self.certificate],
            "exact": self.exact,
            "method": self.method,
            "kernel_dim": self.kernel_dim,
        }


def _l1_certificate(x: np.ndarray) -> np.ndarray:
    """Rescale into B_1 with ||x||_1 <= 1 holding in floating point."""
    x = x / np.abs(x).sum()
    while np.abs(x).sum() > 1.0:
        x = x * (1.0 - 4 * np.finfo(float).eps)
    return x


def _l1_vertex_candidates(V: np.ndarray) -> np.ndarray:
    """Kernel directions vanishing on d-1 coordinates (the vertices of B_1 ∩ span V)."""
    n, d = V.shape
    found = []
    for zeros in combinations(range(n), d - 1):
        if d == 1:
            y = np.ones(1)
        else:
            ns = null_space(V[list(zeros)])
            if ns.shape[1] != 1:
                continue
            y = ns[:, 0]
        x = V @ y
        if np.abs(x).sum() > 1e-12:
            found.append(x / np.abs(x).sum())
    return np.array(found) if found else np.zeros((0, n))


def _min_l1_subgradient(V: np.ndarray, restarts: int, seed: int) -> np.ndarray:
    """Approximate argmin over unit y of ||V y||_1 (multi-start projected subgradient)."""
    d = V.shape[1]
    rng = rng_for(seed, SECTION_STREAM)
    Y = rng.standard_normal((restarts, d))
    Y /= np.linalg.norm(Y, axis=1, keepdims=True)
    best_Y = Y.copy()
    best_vals = np.abs(Y @ V.T).sum(axis=1)
    for i in range(1, config.section_iterations + 1):
        X = Y @ V.T
        G = np.sign(X) @ V
        G -= np.sum(G * Y, axis=1, keepdims=True) * Y
        norms = np.linalg.norm(G, axis=1, keepdims=True)
        Y = Y - (0.5 / math.sqrt(i)) * G / np.maximum(norms, 1e-300)
        Y /= np.linalg.norm(Y, axis=1, keepdims=True)
        vals = np.abs(Y @ V.T).sum(axis=1)
        better = vals < best_vals
        best_vals[better] = vals[better]
        best_Y[better] = Y[better]
    return best_Y[int(np.argmin(best_vals))]


def _polytope_section(V: np.ndarray, body: BodySpec, restarts: int, seed: int) -> np.ndarray:
    """Linearisation ascent of ||x||_2 over K ∩ span V via linear programs."""
    verts = body.vertices
    m, (n, d) = verts.shape[0], V.shape
    rng = rng_for(seed, SECTION_STREAM, 1)
    # variables (y in R^d, lambda in R^m): V y - verts^T lambda = 0, sum lambda <= 1
    A_eq = np.hstack([V, -verts.T])
    A_ub = np.concatenate([np.zeros(d), np.ones(m)])[None, :]
    bounds = [(None, None)] * d + [(0, None)] * m
    best = np.zeros(n)
    for _ in range(max(1, restarts)):
        c = V @ rng.standard_normal(d)
        x = np.zeros(n)
        for _ in range(50):
            res = linprog(-np.concatenate([V.T @ c, np.zeros(m)]), A_ub=A_ub, b_ub=[1.0],
                          A_eq=A_eq, b_eq=np.zeros(n), bounds=bounds, method="highs")
            if res.status != 0:
                break
            candidate = V @ res.x[:d]
            if np.linalg.norm(candidate) <= np.linalg.norm(x) * (1 + 1e-12):
                break
            x = candidate
            c = x / np.linalg.norm(x)
        if np.linalg.norm(x) > np.linalg.norm(best):
            best = x
    return best


def section_diameter(op: RandomOperator, body: BodySpec, restarts: int | None = None,
                     seed: int = 0) -> SectionResult:
    """
    Lower-bound estimate of diam(K ∩ ker Gamma) = 2 max{||x||_2 : x in K ∩ ker Gamma}
    with a certificate x; `exact` marks the enumerated or fine-net cases.
    """
    restarts = config.section_restarts if restarts is None else int(restarts)
    if body.kind is BodyKind.SCALED:
        inner = section_diameter(op, body.base, restarts, seed)
        cert = inner.certificate * body.rho
        return SectionResult(2.0 * float(np.linalg.norm(cert)), cert, inner.exact, inner.method, inner.kernel_dim)

    V = kernel_basis(op)
    n, d = op.n, V.shape[1]
    if d == 0:
        return SectionResult(0.0, np.zeros(n), True, "empty_kernel", 0)

    if body.kind is BodyKind.L2_BALL:
        cert = V[:, 0].copy()
        return SectionResult(2.0 * float(np.linalg.norm(cert)), cert, True, "sphere", d)

    if body.kind is BodyKind.FINITE_POLYTOPE:
        cert = _polytope_section(V, body, max(1, restarts // 8), seed)
        return SectionResult(2.0 * float(np.linalg.norm(cert)), cert, False, "linprog_ascent", d)

    if math.comb(n, d - 1) <= config.vertex_enumeration_limit:
        candidates = _l1_vertex_candidates(V)
        method, exact = "vertex_enumeration", True
    else:
        y = _min_l1_subgradient(V, restarts, seed)
        candidates = (V @ y)[None, :]
        method, exact = "subgradient", False
        if d <= 3:
            Y = sphere_directions(d, config.fine_net_points, seed)
            X = Y @ V.T
            X /= np.abs(X).sum(axis=1, keepdims=True)
            candidates = np.vstack([candidates / np.abs(candidates).sum(), X])
            method, exact = "fine_net", True
    norms = np.linalg.norm(candidates / np.abs(candidates).sum(axis=1, keepdims=True), axis=1)
    cert = _l1_certificate(candidates[int(np.argmax(norms))])
    if not exact:
        log.debug(f"l1 section diameter for kernel dimension {d} is a lower bound")
    return SectionResult(2.0 * float(np.linalg.norm(cert)), cert, exact, method, d)


# ---------------------------------------------------------------------------
# Profiles and fixed points
# ---------------------------------------------------------------------------

@dataclass
class SectionProfile:
    rhos: np.ndarray
    gamma2: np.ndarray          # V_rho: admissible gamma_2 of the net in psi_2
    widths: np.ndarray          # l_* of the net
    net_sizes: list[int] = field(default_factory=list)

    def gamma2_at(self, rho: float) -> float:
        return _ratio_lookup(self.rhos, self.gamma2, rho)

    def width_at(self, rho: float) -> float:
        return _ratio_lookup(self.rhos, self.widths, rho)


def _ratio_lookup(rhos: np.ndarray, values: np.ndarray, rho: float) -> float:
    """
    rho times value/rho at the largest grid point <= rho (the first one below the grid).

    Majorises the profile whenever value/rho is nonincreasing.
    """
    idx = max(int(np.searchsorted(rhos, rho, side="right")) - 1, 0)
    return float(rho * values[idx] / rhos[idx])


def _section_net(body: BodySpec, n: int, rho: float, size: int, seed: int) -> np.ndarray:
    """Points of K ∩ rho S^{n-1}: rejection-sampled sphere points plus sparse sign vectors."""
    points = rho * sphere_directions(n, size, seed)
    kept = [x for x in points if body.contains(x, tol=1e-12)]
    rng = rng_for(seed, SECTION_STREAM, 2)
    for s in range(1, n + 1):
        for _ in range(max(1, size // (4 * n))):
            x = np.zeros(n)
            support = rng.choice(n, size=s, replace=False)
            x[support] = rng.choice([-1.0, 1.0], size=s)
            x *= rho / math.sqrt(s)
            if body.contains(x, tol=1e-12):
                kept.append(x)
    return np.array(kept) if kept else np.zeros((0, n))


def section_profile(body: BodySpec, spec: MeasureSpec, rhos, net_points: int = 256,
                    sample_budget: int = 5000, width_trials: int = 500, seed: int = 0) -> SectionProfile:
    """V_rho and l_* profiles of K ∩ rho S^{n-1} on finite nets."""
    rhos = np.sort(np.asarray(rhos, dtype=float))
    n = spec.n
    gamma2, widths, sizes = [], [], []
    for j, rho in enumerate(rhos):
        net = _section_net(body, n, float(rho), net_points, seed + j)
        sizes.append(int(net.shape[0]))
        if net.shape[0] == 0:
            gamma2.append(0.0)
            widths.append(0.0)
            continue
        if spec.family is Family.GAUSSIAN and not spec.is_truncated:
            cloud = PointCloud.euclidean(net * GAUSSIAN_PSI2 * spec.scale)
        else:
            cloud = PointCloud.empirical_psi2(net, spec, sample_budget, seed)
        gamma2.append(admissible_gamma2(cloud).value)
        widths.append(gaussian_width(IndexClass.finite(net), width_trials, seed).mean)
    return SectionProfile(rhos=rhos, gamma2=np.array(gamma2), widths=np.array(widths), net_sizes=sizes)


@dataclass
class FixedPointResult:
    rho: float
    grid: list[float]
    residuals: list[float]
    diagnostic: str
    variant: str

    def to_dict(self) -> dict:
        return {"rho": self.rho, "grid": self.grid, "residuals": self.residuals,
                "diagnostic": self.diagnostic, "variant": self.variant}


def _fixed_point(bound: Callable[[float], float], profile: Callable[[float], float], variant: str,
                 rho_range: tuple[float, float]) -> FixedPointResult:
    """Smallest rho with rho >= bound(profile(rho)): geometric grid scan, then bisection."""
    lo, hi = rho_range
    grid = np.geomspace(lo, hi, config.fixed_point_grid)
    ratios = np.array([profile(r) / r for r in grid])
    repaired = np.maximum.accumulate(ratios[::-1])[::-1]
    diagnostic = "ok"
    if np.any(repaired > ratios):
        diagnostic = "profile repaired to a nonincreasing envelope"
        log.warning(f"{variant}: profile/rho is not nonincreasing on the grid; using its upper envelope")

    def envelope(r: float) -> float:
        value = profile(r)
        idx = int(np.searchsorted(grid, r, side="left"))
        tail = float(repaired[idx]) if idx < len(grid) else 0.0
        return value if value / r >= tail else r * tail

    def rhs(r: float) -> float:
        return bound(envelope(r))

    residuals = [float(r - rhs(r)) for r in grid]
    satisfied = [i for i, res in enumerate(residuals) if res >= 0]
    if not satisfied:
        log.warning(f"{variant}: inequality never satisfied on [{lo:g}, {hi:g}]")
        note = "no grid point satisfies the inequality"
        return FixedPointResult(math.inf, grid.tolist(), residuals,
                                note if diagnostic == "ok" else f"{diagnostic}; {note}", variant)
    i = satisfied[0]
    if i == 0:
        return FixedPointResult(float(grid[0]), grid.tolist(), residuals,
                                diagnostic + "; satisfied at the lower grid edge", variant)
    rho = bisect(lambda r: r - rhs(r), float(grid[i - 1]), float(grid[i]), xtol=1e-300, rtol=1e-13, maxiter=500)
    # report the satisfied side of the bracket
    while rho - rhs(rho) < 0:
        rho = math.nextafter(rho, math.inf)
    return FixedPointResult(float(rho), grid.tolist(), residuals, diagnostic, variant)


def q_star(profile: Callable[[float], float], k: int, constants: ConstantSet, variant: str = "intro",
           rho_range: tuple[float, float] = (1e-6, 1e6)) -> FixedPointResult:
    """
    Smallest rho with
      intro:     rho >= c5 V_rho sqrt(log V_rho) / sqrt(k)   (log clamped at 0)
      section4:  rho >= c5 V_rho sqrt(V_rho / k)
    """
    if k < 1:
        raise ParameterError(f"k must be positive, got {k}")
    c = constants.c5
    if variant == "intro":
        def bound(value):
            value = max(value, 0.0)
            return c * value * math.sqrt(max(math.log(value), 0.0) if value > 0 else 0.0) / math.sqrt(k)
    elif variant == "section4":
        def bound(value):
            value = max(value, 0.0)
            return c * value * math.sqrt(value / k)
    else:
        raise ParameterError(f"Unknown q_star variant {variant!r}")
    return _fixed_point(bound, profile, f"q_star[{variant}]", rho_range)


def r_star(width_profile: Callable[[float], float], k: int, alpha: float, constants: ConstantSet,
           rho_range: tuple[float, float] = (1e-6, 1e6)) -> FixedPointResult:
    """Smallest rho with rho >= c9 alpha^2 l_*(K ∩ rho S^{n-1}) / sqrt(k)."""
    if k < 1:
        raise ParameterError(f"k must be positive, got {k}")

    def bound(value):
        return constants.c9 * alpha * alpha * max(value, 0.0) / math.sqrt(k)

    return _fixed_point(bound, width_profile, "r_star", rho_range)


# ---------------------------------------------------------------------------
# l_E for the psi_2(nu) norm
# ---------------------------------------------------------------------------

@dataclass
class EllEstimate:
    value: float
    stderr: float
    ratio: float            # value / D
    radius: float


def ell_E_estimate(spec: MeasureSpec, trials: int, seed: int, sample_size: int = 20_000) -> EllEstimate:
    """
    Monte Carlo E||sum_i g_i e_i||_E with ||t||_E = ||<t, Y>||_{psi_2(nu)},
    nu the truncated measure of spec.
    """
    if not spec.is_truncated:
        raise PreconditionError("ell_E_estimate needs a finite truncation radius")
    if trials < 1:
        raise ParameterError(f"trials must be positive, got {trials}")
    rows = sample(spec, sample_size, seed).rows
    g = rng_for(seed, ELL_E_STREAM).standard_normal((int(trials), spec.n))
    norms = np.array([psi_norm_empirical(rows @ gi, 2.0, n_boot=0).value for gi in g])
    stderr = float(norms.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    value = float(norms.mean())
    return EllEstimate(value=value, stderr=stderr, ratio=value / spec.truncation_radius,
                       radius=float(spec.truncation_radius))
