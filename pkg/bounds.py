"""
bounds.py
---------
Closed-form evaluators for the tail, subset-sum and deviation bounds used by
the harness, plus the truncation split f = phi(f) + psi(f).

Every absolute constant comes from a ConstantSet (all 1.0 by default) and is
fit afterwards by the harness. Logarithms are natural.

Constant names used here:
  c1  Bernstein exponent, residual moment prefactor, subgaussian sums, radial gamma_2
  c2  truncation level, residual moment scale, combined/truncated bounds,
      success probabilities, sphere gamma_2, Paouris
  c3  tail envelope, bounded part, truncated-process epsilon term, expected deviation
  c4  kappa_p
  c5  q_star          c6  subset packing target     c7  entropy bound
  c8  psphere sample size    c9  r_star               c10 ell_E ratio
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Mapping

import numpy as np
from scipy.optimize import brentq

from errors import ParameterError
from logger import get_logger

log = get_logger("bounds")

CONSTANT_NAMES = tuple(f"c{i}" for i in range(1, 11)) + ("v", "v1", "v2")


def _positive(**values: float) -> None:
    for name, value in values.items():
        if not (value > 0 and math.isfinite(value)):
            raise ParameterError(f"{name} must be a positive finite real, got {value!r}")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass
class ConstantSet:
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0
    c5: float = 1.0
    c6: float = 1.0
    c7: float = 1.0
    c8: float = 1.0
    c9: float = 1.0
    c10: float = 1.0
    v: float = 1.0
    v1: float = 1.0
    v2: float = 1.0
    calibrated: bool = False
    multipliers: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in CONSTANT_NAMES:
            value = float(getattr(self, name))
            _positive(**{name: value})
            setattr(self, name, value)

    def multiplier(self, family: str) -> float:
        return float(self.multipliers.get(family, 1.0))

    def with_multipliers(self, multipliers: Mapping[str, float]) -> ConstantSet:
        merged = {**self.multipliers, **{k: float(v) for k, v in multipliers.items()}}
        return replace(self, multipliers=merged, calibrated=True)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_config_block(self) -> dict[str, str]:
        block = {name: repr(getattr(self, name)) for name in CONSTANT_NAMES}
        block["calibrated"] = str(self.calibrated).lower()
        for family, value in sorted(self.multipliers.items()):
            block[f"multiplier.{family}"] = repr(value)
        return block

    @classmethod
    def from_config_block(cls, block: Mapping[str, str]) -> ConstantSet:
        known = {f.name for f in fields(cls)}
        kwargs: dict = {}
        multipliers: dict[str, float] = {}
        for key, raw in block.items():
            if key.startswith("multiplier."):
                multipliers[key.split(".", 1)[1]] = float(raw)
            elif key == "calibrated":
                kwargs["calibrated"] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif key in known:
                kwargs[key] = float(raw)
            else:
                raise ParameterError(f"Unknown constant {key!r}")
        return cls(**kwargs, multipliers=multipliers)


@dataclass
class DecompositionParams:
    A: float            # >= gamma_2(F, psi_2)
    B: float            # >= diam(F, psi_1)
    p: float
    v: float
    k: int
    theta: float | None = None

    def __post_init__(self):
        _positive(A=self.A, B=self.B, v=self.v)
        if not (self.p >= 1):
            raise ParameterError(f"p must be >= 1, got {self.p!r}")
        if int(self.k) != self.k or self.k < 1:
            raise ParameterError(f"k must be a positive integer, got {self.k!r}")

    def with_theta(self, constants: ConstantSet) -> DecompositionParams:
        return replace(self, theta=truncation_level(self, constants))


# ---------------------------------------------------------------------------
# Tail and subset-sum bounds
# ---------------------------------------------------------------------------

def bernstein_tail(t: float, k: int, psi1: float, constants: ConstantSet) -> float:
    """2 exp(-c1 k min(t/psi1, t^2/psi1^2)) for averages of k mean-zero psi_1 variables."""
    _positive(t=t, k=k, psi1=psi1)
    ratio = t / psi1
    return 2.0 * math.exp(-constants.c1 * k * min(ratio, ratio * ratio))


def subgaussian_sum_bound(a, psi2: float, constants: ConstantSet) -> float:
    """psi_2 norm bound c1 ||a||_2 ||X||_{psi_2} for sum_i a_i X_i."""
    _positive(psi2=psi2)
    return constants.c1 * psi2 * float(np.linalg.norm(np.asarray(a, dtype=float)))


def _check_subset(ell: int, k: int) -> None:
    if not (1 <= ell <= k):
        raise ParameterError(f"Need 1 <= ell <= k, got ell={ell}, k={k}")


def subset_sum_bound_psi1(ell: int, k: int, gamma2: float, diam_psi1: float, v1: float, v2: float) -> float:
    """v1 sqrt(ell) gamma_2 + v2 diam_psi1 ell log(e k / ell)."""
    _check_subset(ell, k)
    return v1 * math.sqrt(ell) * gamma2 + v2 * diam_psi1 * ell * math.log(math.e * k / ell)


def subset_sum_bound_psi2(ell: int, k: int, gamma2: float, diam_psi2: float, v: float) -> float:
    """v (sqrt(ell) gamma_2 + diam_psi2 ell sqrt(log(e k / ell)))."""
    _check_subset(ell, k)
    return v * (math.sqrt(ell) * gamma2 + diam_psi2 * ell * math.sqrt(math.log(math.e * k / ell)))


def success_probability(v1: float, v2: float, constants: ConstantSet, form: str = "corollary") -> float:
    """1 - exp(-c2 min{v1^2, v2}) (corollary form) or 1 - exp(-c2 min{v1, v2}) (intro form)."""
    _positive(v1=v1, v2=v2)
    first = v1 * v1 if form == "corollary" else v1
    if form not in ("corollary", "intro"):
        raise ParameterError(f"Unknown envelope form {form!r}")
    return 1.0 - math.exp(-constants.c2 * min(first, v2))


def subset_sum_probability(v: float, constants: ConstantSet) -> float:
    _positive(v=v)
    return 1.0 - math.exp(-constants.c2 * v * v)


def _envelope_branches(t, k, gamma2, diam_psi1, v1, v2, constants, form):
    if form not in ("corollary", "intro"):
        raise ParameterError(f"Unknown envelope form {form!r}")
    v_first = v1 * v1 if form == "corollary" else v1
    first = constants.c3 * v_first * gamma2 ** 2 / (t * t)
    second = math.e * k * math.exp(-t / (constants.c3 * diam_psi1 * v2))
    return first, second


def tail_envelope(t: float, k: int, gamma2: float, diam_psi1: float, v1: float, v2: float,
                  constants: ConstantSet, form: str = "corollary") -> float:
    """
    max{c3 v1^2 gamma_2^2 / t^2, e k exp(-t / (c3 alpha v2))}, alpha = diam_psi1.

    form="intro" uses v1 in place of v1^2.
    """
    _positive(t=t, diam_psi1=diam_psi1)
    return max(_envelope_branches(t, k, gamma2, diam_psi1, v1, v2, constants, form))


def envelope_crossover(k: int, gamma2: float, diam_psi1: float, v1: float, v2: float,
                       constants: ConstantSet, form: str = "corollary") -> float | None:
    """
    Largest t at which the two envelope branches are equal; above it the
    quadratic branch dominates. None when the quadratic branch dominates everywhere.
    """
    _positive(gamma2=gamma2, diam_psi1=diam_psi1)

    def gap(t: float) -> float:
        first, second = _envelope_branches(t, k, gamma2, diam_psi1, v1, v2, constants, form)
        return math.log(first) - math.log(second)

    # log-gap is convex in t with its minimum at 2 c3 alpha v2
    t_min = 2.0 * constants.c3 * diam_psi1 * v2
    if gap(t_min) >= 0:
        return None
    hi = 2.0 * t_min
    while gap(hi) < 0:
        hi *= 2.0
    return float(brentq(gap, t_min, hi, xtol=1e-14, rtol=1e-12))


# ---------------------------------------------------------------------------
# Truncation decomposition
# ---------------------------------------------------------------------------

def truncation_level(params: DecompositionParams, constants: ConstantSet) -> float:
    """Smallest admissible theta: max{c2 v B log(c2 B^2 k v / A^2 + 1), c2 p B log(c2 p B + 1)}."""
    c2, A, B, p, v, k = constants.c2, params.A, params.B, params.p, params.v, params.k
    first = c2 * v * B * math.log(c2 * B * B * k * v / (A * A) + 1.0)
    second = c2 * p * B * math.log(c2 * p * B + 1.0)
    return max(first, second)


def truncated_theta(A: float, B: float, p: float, k: int, constants: ConstantSet) -> float:
    """theta for the truncated-measure bound: max{c2 B log(c2 k B^2/A^2 + 1), c2 p B log(c2 p B + 1)}."""
    _positive(A=A, B=B, k=k)
    c2 = constants.c2
    return max(c2 * B * math.log(c2 * k * B * B / (A * A) + 1.0), c2 * p * B * math.log(c2 * p * B + 1.0))


def split(values, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """
    phi = sgn(x) min(|x|, theta), psi = x - phi, elementwise.

    phi + psi reproduces x exactly and |phi| <= theta.
    """
    if not (theta > 0):
        raise ParameterError(f"theta must be positive, got {theta!r}")
    x = np.array(values, dtype=float, ndmin=1)
    phi = np.clip(x, -theta, theta)
    psi = x - phi
    # x - theta can round for |x| > 2 theta; a neighbouring float restores the exact sum
    for i in np.flatnonzero(phi + psi != x):
        for candidate in (np.nextafter(psi.flat[i], np.inf), np.nextafter(psi.flat[i], -np.inf)):
            if phi.flat[i] + candidate == x.flat[i]:
                psi.flat[i] = candidate
                break
    return phi, psi


def residual_moment_bound(B: float, p: float, theta: float, constants: ConstantSet) -> float:
    """c1 (2 p B)^p exp(-theta / (c2 B)) bounds E|f|^p 1{|f| >= theta}."""
    _positive(B=B, p=p)
    if theta < 0:
        raise ParameterError(f"theta must be nonnegative, got {theta!r}")
    return constants.c1 * (2.0 * p * B) ** p * math.exp(-theta / (constants.c2 * B))


def kappa(p: float, A: float, theta: float, constants: ConstantSet) -> float:
    """c4 theta^{p-2} (p < 2), c4 log A (p = 2), c4 A^{p-2} (p > 2)."""
    if not (p >= 1):
        raise ParameterError(f"p must be >= 1, got {p!r}")
    if p < 2:
        _positive(theta=theta)
        return constants.c4 * theta ** (p - 2.0)
    if p == 2:
        if not (A > 1):
            raise ParameterError(f"kappa_2 needs A > 1, got {A!r}")
        return constants.c4 * math.log(A)
    _positive(A=A)
    return constants.c4 * A ** (p - 2.0)


def kappa_tilde(p: float, H_k: float) -> float:
    """1 (p < 2), log H_k (p = 2), H_k^{p-2} (p > 2)."""
    if not (p >= 1):
        raise ParameterError(f"p must be >= 1, got {p!r}")
    _positive(H_k=H_k)
    if p < 2:
        return 1.0
    if p == 2:
        return math.log(H_k)
    return H_k ** (p - 2.0)


def bounded_part_bound(gamma2: float, p: float, theta: float, k: int, v: float, constants: ConstantSet) -> float:
    """c3 p theta^{p-1} v gamma_2 / sqrt(k)."""
    _positive(theta=theta, k=k)
    return constants.c3 * p * theta ** (p - 1.0) * v * gamma2 / math.sqrt(k)


def combined_deviation_bound(A: float, B: float, p: float, k: int, v: float, constants: ConstantSet) -> float:
    """c2 v (p theta^{p-1} A/sqrt(k) + A^2/k (theta^{p-2} + kappa_p + 1)), theta from truncation_level."""
    params = DecompositionParams(A=A, B=B, p=p, v=v, k=k)
    theta = truncation_level(params, constants)
    kp = kappa(p, A, theta, constants)
    return constants.c2 * v * (p * theta ** (p - 1.0) * A / math.sqrt(k)
                               + A * A / k * (theta ** (p - 2.0) + kp + 1.0))


def truncated_process_bound(A: float, B: float, p: float, k: int, H_k: float, eps: float,
                            constants: ConstantSet) -> float:
    """c2 (theta^{p-1} A/sqrt(k) + A^2/k (theta^{p-2} + kappa~_p)) + c3 B^{1/2} eps."""
    _positive(eps=eps)
    theta = truncated_theta(A, B, p, k, constants)
    kt = kappa_tilde(p, H_k)
    return (constants.c2 * (theta ** (p - 1.0) * A / math.sqrt(k) + A * A / k * (theta ** (p - 2.0) + kt))
            + constants.c3 * math.sqrt(B) * eps)


def expected_deviation_bound(gamma2: float, k: int, alpha: float, constants: ConstantSet) -> float:
    """c3 alpha gamma_2 / sqrt(k) for the p = 2 deviation in expectation."""
    _positive(k=k, alpha=alpha)
    return constants.c3 * alpha * gamma2 / math.sqrt(k)


# ---------------------------------------------------------------------------
# Geometric scalings
# ---------------------------------------------------------------------------

def radial_gamma2_bound(H_k: float, n: int, constants: ConstantSet) -> float:
    """c1 H_k sqrt(log n) for gamma_2 of the sphere under the truncated measure."""
    _positive(H_k=H_k)
    return constants.c1 * H_k * math.sqrt(math.log(max(n, 2)))


def sphere_gamma2_bound(n: int, constants: ConstantSet) -> float:
    """c2 sqrt(n log n)."""
    return constants.c2 * math.sqrt(n * math.log(max(n, 2)))


def entropy_bound(n: int, eps: float, constants: ConstantSet) -> float:
    """log N(B_2^n, eps B_E) <= c7 n / eps^2 for eps >= 1/2, c7 n log(1/eps) below."""
    _positive(eps=eps)
    if eps >= 0.5:
        return constants.c7 * n / (eps * eps)
    return constants.c7 * n * math.log(1.0 / eps)


def paouris_bound(n: int, constants: ConstantSet) -> float:
    """c2 sqrt(n) for (E||X||^p)^{1/p} under an isotropic log-concave measure."""
    return constants.c2 * math.sqrt(n)


def psphere_sample_size(n: int, p: float, constants: ConstantSet) -> float:
    """c8 n^{p/2} log n samples for the p-th moment deviation on the sphere (p > 2)."""
    if not (p > 2):
        raise ParameterError(f"psphere sample size needs p > 2, got {p!r}")
    return constants.c8 * n ** (p / 2.0) * math.log(max(n, 2))
