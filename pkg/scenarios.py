"""
scenarios.py
------------
Per-trial statistics for each harness scenario.

A scenario takes one TrialSpec (measure, n, k, trial seed) and returns
Measurements: a measured statistic next to the bound it is compared with.
The Measurement param is "<envelope>" or "<envelope>|<detail>"; constants are
calibrated per envelope.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

import bounds
from bounds import ConstantSet
from chaining import PointCloud, admissible_gamma2, dudley_gamma2_upper, gaussian_width, weighted_vertex_cloud
from empirical import IndexClass, Method, deviation_sup, sphere_directions, tail_count_sup, top_ell_sum_sup
from errors import ConfigError
from geometry import BodySpec, RandomOperator, ell_E_estimate, q_star, r_star, section_diameter, section_profile
from logger import get_logger
from measures import Family, MeasureSpec, SampleMatrix, exponential_weights, sample, second_moment_matrix, truncate
from orlicz import psi_diameter

log = get_logger("scenarios")

GEOMETRY_NET = 256
GEOMETRY_SAMPLE = 20_000
WIDTH_TRIALS = 500


@dataclass
class TrialSpec:
    scenario: str
    spec: MeasureSpec               # already at dimension n
    n: int
    k: int
    trial: int
    seed: int                       # derived trial seed
    base_seed: int                  # experiment seed, shared by cached class geometry
    p: float
    epsilon: float
    delta: float
    constants: ConstantSet
    options: dict[str, str] = field(default_factory=dict)
    rows: np.ndarray | None = None  # test hook: replaces the sampled rows


@dataclass
class Measurement:
    param: str
    measured: float
    bound: float


def envelope_of(param: str) -> str:
    return param.split("|", 1)[0]


def _draw(trial: TrialSpec) -> SampleMatrix:
    if trial.rows is not None:
        return SampleMatrix.from_rows(np.asarray(trial.rows, dtype=float)[: trial.k], trial.spec, trial.seed)
    return sample(trial.spec, trial.k, trial.seed)


def _float_list(raw: str | None) -> list[float] | None:
    if raw is None or not raw.strip():
        return None
    return [float(x) for x in raw.replace(";", ",").split(",") if x.strip()]


# ---------------------------------------------------------------------------
# Cached class geometry (one estimate per measure and experiment seed)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphereGeometry:
    gamma2: float       # gamma_2(S^{n-1}, psi_2) estimate
    diam_psi1: float
    diam_psi2: float


@lru_cache(maxsize=64)
def sphere_geometry(spec: MeasureSpec, seed: int) -> SphereGeometry:
    sphere = IndexClass.sphere(spec.n)
    diam1 = psi_diameter(sphere, spec, 1.0, GEOMETRY_NET, seed, sample_size=GEOMETRY_SAMPLE)
    diam2 = psi_diameter(sphere, spec, 2.0, GEOMETRY_NET, seed, sample_size=GEOMETRY_SAMPLE)
    width = gaussian_width(sphere, WIDTH_TRIALS, seed).mean
    geo = SphereGeometry(gamma2=max(width * diam2 / 2.0, 1e-12), diam_psi1=max(diam1, 1e-12),
                         diam_psi2=max(diam2, 1e-12))
    log.debug(f"sphere geometry for {spec.describe()}: {geo}")
    return geo


@lru_cache(maxsize=16)
def _kernel_profile(spec: MeasureSpec, body_name: str, seed: int):
    n = spec.n
    rhos = np.geomspace(1.0 / math.sqrt(n), 1.0, 8)
    return section_profile(_body(body_name), spec, rhos, net_points=128, sample_budget=2000,
                           width_trials=200, seed=seed)


def _body(name: str) -> BodySpec:
    if name == "l1_ball":
        return BodySpec.l1_ball()
    if name == "l2_ball":
        return BodySpec.l2_ball()
    raise ConfigError(f"Unknown body {name!r}")


def default_levels(n: int) -> list[float]:
    return [math.sqrt(n) * 2.0 ** (j / 2.0) for j in range(-2, 4)]


def default_ells(k: int) -> list[int]:
    ells, ell = [], 1
    while ell < k:
        ells.append(ell)
        ell *= 2
    return ells + [k]


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

def phase2(trial: TrialSpec) -> list[Measurement]:
    """p-th moment deviation over the sphere against c3 alpha gamma_2 / sqrt(k)."""
    smp = _draw(trial)
    cls = IndexClass.sphere(trial.n)
    exact = trial.p == 2 and second_moment_matrix(trial.spec) is not None and not trial.spec.recenter
    method = Method.EIGEN_EXACT if exact else Method.GRADIENT_HEURISTIC
    result = deviation_sup(smp, cls, trial.p, method=method, seed=trial.seed)
    geo = sphere_geometry(trial.spec, trial.base_seed)
    bound = bounds.expected_deviation_bound(geo.gamma2, trial.k, geo.diam_psi1 / 2.0, trial.constants)
    return [Measurement("expected_deviation", result.value, bound)]


def psphere(trial: TrialSpec) -> list[Measurement]:
    """p > 2 deviation over the sphere against sqrt(c8 n^{p/2} log n / k)."""
    smp = _draw(trial)
    result = deviation_sup(smp, IndexClass.sphere(trial.n), trial.p, method=Method.GRADIENT_HEURISTIC,
                           seed=trial.seed)
    needed = bounds.psphere_sample_size(trial.n, trial.p, trial.constants)
    return [Measurement("psphere", result.value, math.sqrt(needed / trial.k))]


def tailenv(trial: TrialSpec) -> list[Measurement]:
    """Uniform tail counts over the sphere against the two-branch envelope, one record per level."""
    smp = _draw(trial)
    levels = _float_list(trial.options.get("levels")) or default_levels(trial.n)
    counts = tail_count_sup(smp, IndexClass.sphere(trial.n), levels, seed=trial.seed)
    geo = sphere_geometry(trial.spec, trial.base_seed)
    form = trial.options.get("form", "corollary")
    c = trial.constants
    return [
        Measurement(f"tail|u={u:.6g}", float(count),
                    bounds.tail_envelope(u, trial.k, geo.gamma2, geo.diam_psi1, c.v1, c.v2, c, form))
        for u, count in zip(counts.levels, counts.counts)
    ]


def topell(trial: TrialSpec) -> list[Measurement]:
    """Largest ell-subset sums sup_t sum_{i in I} |<X_i,t>| against both subset-sum bounds."""
    smp = _draw(trial)
    raw = _float_list(trial.options.get("ells"))
    ells = [int(e) for e in raw if 1 <= e <= trial.k] if raw else default_ells(trial.k)
    geo = sphere_geometry(trial.spec, trial.base_seed)
    c = trial.constants
    out = []
    for ell in ells:
        value = top_ell_sum_sup(smp, ell).value
        out.append(Measurement(f"subset_psi1|ell={ell}", value,
                               bounds.subset_sum_bound_psi1(ell, trial.k, geo.gamma2, geo.diam_psi1, c.v1, c.v2)))
        out.append(Measurement(f"subset_psi2|ell={ell}", value,
                               bounds.subset_sum_bound_psi2(ell, trial.k, geo.gamma2, geo.diam_psi2, c.v)))
    return out


def counterexample(trial: TrialSpec) -> list[Measurement]:
    """sup over B_1^n of <t, X> for the weighted exponential vector: the largest |coordinate| of one draw."""
    smp = _draw(trial)
    measured = float(np.abs(smp.rows[0]).max())
    return [Measurement("growth", measured, math.sqrt(math.log(trial.n + 1)))]


def kernel(trial: TrialSpec) -> list[Measurement]:
    """Diameter of K ∩ ker Gamma against both q_star variants and r_star."""
    smp = _draw(trial)
    body_name = trial.options.get("body", "l1_ball")
    op = RandomOperator.from_sample(smp, trial.options.get("scaling", "raw"))
    measured = section_diameter(op, _body(body_name), seed=trial.seed).diameter
    profile = _kernel_profile(trial.spec, body_name, trial.base_seed)
    c = trial.constants
    out = []
    for variant in ("intro", "section4"):
        rho = q_star(profile.gamma2_at, trial.k, c, variant).rho
        out.append(Measurement(f"q_star_{variant}", measured, rho))
    rho = r_star(profile.width_at, trial.k, 1.0, c).rho
    out.append(Measurement("r_star", measured, rho))
    return out


def paouris(trial: TrialSpec) -> list[Measurement]:
    """max_i ||X_i|| and (mean ||X_i||^p)^{1/p} against c2 sqrt(n)."""
    smp = _draw(trial)
    norms = np.linalg.norm(smp.rows, axis=1)
    bound = bounds.paouris_bound(trial.n, trial.constants)
    moment = float(np.mean(norms ** trial.p) ** (1.0 / trial.p))
    return [
        Measurement("radial", float(norms.max()), bound),
        Measurement(f"moment|p={trial.p:g}", moment, bound),
    ]


def gamma_trunc(trial: TrialSpec) -> list[Measurement]:
    """gamma_2 of a sphere net in psi_2 of the truncated measure, and the l_E / D ratio."""
    spec = trial.spec
    if not spec.is_truncated:
        factor = float(trial.options.get("truncation_factor", "4"))
        spec = truncate(spec, factor * math.sqrt(trial.n))
    net = sphere_directions(trial.n, int(trial.options.get("net_points", "64")), trial.seed)
    cloud = PointCloud.empirical_psi2(net, spec, int(trial.options.get("sample_budget", "2000")), trial.seed)
    gamma2 = admissible_gamma2(cloud).value
    ell = ell_E_estimate(spec, int(trial.options.get("ell_trials", "20")), trial.seed,
                         sample_size=int(trial.options.get("sample_budget", "2000")))
    c = trial.constants
    return [
        Measurement("sphere_gamma2", gamma2, bounds.sphere_gamma2_bound(trial.n, c)),
        Measurement("radial_gamma2", gamma2, bounds.radial_gamma2_bound(spec.truncation_radius, trial.n, c)),
        Measurement("ell_E", ell.ratio, c.c10),
    ]


SCENARIOS: dict[str, Callable[[TrialSpec], list[Measurement]]] = {
    "phase2": phase2,
    "psphere": psphere,
    "tailenv": tailenv,
    "topell": topell,
    "counterexample": counterexample,
    "kernel": kernel,
    "paouris": paouris,
    "gamma_trunc": gamma_trunc,
}


def validate(scenario: str, spec: MeasureSpec, p: float, options: dict[str, str]) -> None:
    """Scenario-specific parameter checks; raises ConfigError before any sampling."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"Unknown scenario {scenario!r}; expected one of {sorted(SCENARIOS)}")
    if not (p >= 1):
        raise ConfigError(f"p must be >= 1, got {p}")
    if scenario == "psphere" and not p > 2:
        raise ConfigError(f"psphere needs p > 2, got {p}")
    if scenario == "counterexample" and spec.family is not Family.WEIGHTED_EXPONENTIAL:
        raise ConfigError("counterexample runs on the weighted_exponential family")
    if scenario == "paouris" and spec.family is Family.WEIGHTED_EXPONENTIAL:
        raise ConfigError("paouris needs an isotropic family")
    if scenario == "kernel":
        _body(options.get("body", "l1_ball"))
        if options.get("scaling", "raw") not in ("raw", "inv_sqrt_k"):
            raise ConfigError(f"Unknown operator scaling {options['scaling']!r}")
    if scenario == "tailenv":
        levels = _float_list(options.get("levels"))
        if levels and (min(levels) <= 0 or any(b <= a for a, b in zip(levels, levels[1:]))):
            raise ConfigError("levels must be positive and strictly increasing")
        if options.get("form", "corollary") not in ("corollary", "intro"):
            raise ConfigError(f"Unknown envelope form {options['form']!r}")


def counterexample_dudley(n: int, scale: float = 1.0) -> float:
    """Dudley bound for the vertices of B_1^n under the weighted Euclidean metric."""
    return dudley_gamma2_upper(weighted_vertex_cloud(scale * exponential_weights(n)))
