import math

import numpy as np
import pytest

from bounds import (
    ConstantSet,
    DecompositionParams,
    bernstein_tail,
    bounded_part_bound,
    combined_deviation_bound,
    entropy_bound,
    envelope_crossover,
    expected_deviation_bound,
    kappa,
    kappa_tilde,
    paouris_bound,
    psphere_sample_size,
    radial_gamma2_bound,
    residual_moment_bound,
    sphere_gamma2_bound,
    split,
    subgaussian_sum_bound,
    subset_sum_bound_psi1,
    subset_sum_bound_psi2,
    subset_sum_probability,
    success_probability,
    tail_envelope,
    truncated_process_bound,
    truncated_theta,
    truncation_level,
)
from errors import ParameterError

ONES = ConstantSet()


# ── Constants ────────────────────────────────────────────────────────────────

def test_constant_set_round_trip():
    consts = ConstantSet(c3=2.5, v1=0.5).with_multipliers({"tail": 3.0})
    assert consts.calibrated
    assert consts.multiplier("tail") == 3.0
    assert consts.multiplier("other") == 1.0
    assert ConstantSet.from_config_block(consts.to_config_block()) == consts


@pytest.mark.parametrize("bad", [dict(c1=0.0), dict(c2=-1.0), dict(v=math.inf), dict(c5=math.nan)])
def test_constants_must_be_positive_and_finite(bad):
    with pytest.raises(ParameterError):
        ConstantSet(**bad)


def test_unknown_constant_in_block():
    with pytest.raises(ParameterError):
        ConstantSet.from_config_block({"c11": "1.0"})


# ── Tail and subset sums ─────────────────────────────────────────────────────

def test_bernstein_examples():
    assert bernstein_tail(3.0, 1, 3.0, ONES) == pytest.approx(2.0 / math.e)
    for k in (1, 4, 10):
        assert bernstein_tail(0.5, k, 1.0, ONES) == pytest.approx(2.0 * math.exp(-k / 4))
        assert bernstein_tail(2.0, k, 1.0, ONES) == pytest.approx(2.0 * math.exp(-2 * k))
    with pytest.raises(ParameterError):
        bernstein_tail(0.0, 1, 1.0, ONES)


def test_subgaussian_sum_bound():
    assert subgaussian_sum_bound([3.0, 4.0], 2.0, ONES) == pytest.approx(10.0)


def test_subset_sum_bounds():
    k, gamma2, diam = 9, 2.0, 0.5
    assert subset_sum_bound_psi1(k, k, gamma2, diam, 1.5, 2.0) == pytest.approx(1.5 * 3.0 * gamma2 + 2.0 * diam * k)
    assert subset_sum_bound_psi1(1, k, gamma2, diam, 1.0, 1.0) == pytest.approx(gamma2 + diam * math.log(math.e * k))
    assert subset_sum_bound_psi2(k, k, gamma2, diam, 2.0) == pytest.approx(2.0 * (3.0 * gamma2 + diam * k))
    with pytest.raises(ParameterError):
        subset_sum_bound_psi1(0, k, gamma2, diam, 1.0, 1.0)
    with pytest.raises(ParameterError):
        subset_sum_bound_psi2(k + 1, k, gamma2, diam, 1.0)


def test_success_probabilities():
    assert success_probability(2.0, 3.0, ONES) == pytest.approx(1.0 - math.exp(-3.0))
    assert success_probability(2.0, 3.0, ONES, form="intro") == pytest.approx(1.0 - math.exp(-2.0))
    assert subset_sum_probability(2.0, ONES) == pytest.approx(1.0 - math.exp(-4.0))
    with pytest.raises(ParameterError):
        success_probability(1.0, 1.0, ONES, form="other")


def test_tail_envelope_examples():
    assert tail_envelope(1.0, 1, 1.0, 1.0, 1.0, 1.0, ONES) == pytest.approx(1.0)
    assert tail_envelope(2.0, 1, 1.0, 1.0, 2.0, 1.0, ONES) == pytest.approx(1.0)
    assert tail_envelope(2.0, 1, 1.0, 1.0, 2.0, 1.0, ONES, form="intro") == pytest.approx(max(0.5, math.e * math.exp(-2.0)))


def test_envelope_crossover():
    args = (1000, 1.0, 1.0, 1.0, 1.0, ONES)
    t = envelope_crossover(*args)
    assert t is not None
    quadratic = 1.0 / (t * t)
    exponential = math.e * 1000 * math.exp(-t)
    assert quadratic == pytest.approx(exponential, rel=1e-9)
    above = 1.5 * t
    assert tail_envelope(above, *args) == pytest.approx(1.0 / (above * above))
    # gamma_2 large enough that the quadratic branch is always on top
    assert envelope_crossover(1, 100.0, 1.0, 1.0, 1.0, ONES) is None


# ── Truncation decomposition ─────────────────────────────────────────────────

def test_truncation_level_example():
    params = DecompositionParams(A=1.0, B=1.0, p=1.0, v=1.0, k=1)
    assert truncation_level(params, ONES) == pytest.approx(math.log(2.0))
    assert params.with_theta(ONES).theta == pytest.approx(math.log(2.0))
    with pytest.raises(ParameterError):
        DecompositionParams(A=1.0, B=1.0, p=0.5, v=1.0, k=1)
    with pytest.raises(ParameterError):
        DecompositionParams(A=1.0, B=1.0, p=1.0, v=1.0, k=0)


def test_truncation_level_grows_with_k():
    levels = [truncation_level(DecompositionParams(A=2.0, B=1.0, p=2.0, v=1.0, k=k), ONES) for k in (1, 10, 100, 1000)]
    assert levels == sorted(levels)
    assert levels[-1] > levels[0]


def test_truncated_theta():
    assert truncated_theta(1.0, 1.0, 1.0, 1, ONES) == pytest.approx(math.log(2.0))


def test_split_example():
    phi, psi = split([3.0, -0.5, 1.0], 1.0)
    assert phi.tolist() == [1.0, -0.5, 1.0]
    assert psi.tolist() == [2.0, 0.0, 0.0]


def test_split_reconstructs_exactly():
    x = np.random.default_rng(0).standard_cauchy(10_000) * 1e3
    theta = 0.7
    phi, psi = split(x, theta)
    assert np.array_equal(phi + psi, x)
    assert np.all(np.abs(phi) <= theta)
    assert np.all(psi[np.abs(x) <= theta] == 0)
    with pytest.raises(ParameterError):
        split(x, 0.0)


@pytest.mark.parametrize("theta", [0.05, 1.0, 40.0])
def test_split_is_a_contraction_with_aligned_parts(theta):
    rng = np.random.default_rng(1)
    x = rng.standard_cauchy(10_000) * 5.0
    y = x + rng.standard_normal(10_000)
    phi_x, psi_x = split(x, theta)
    phi_y, _ = split(y, theta)
    assert np.all(np.abs(phi_x - phi_y) <= np.abs(x - y))
    assert np.all(phi_x * psi_x >= 0)


@pytest.mark.parametrize("p", [1.0, 2.0, 3.5])
def test_split_power_domination(p):
    x = np.random.default_rng(2).standard_t(3, 10_000) * 2.0
    theta = 1.3
    phi, _ = split(x, theta)
    big = np.abs(x) >= theta
    assert np.all(np.abs(x) ** p <= np.abs(phi) ** p + np.abs(x) ** p * big)


def test_split_commutes_with_dyadic_scaling():
    x = np.random.default_rng(3).standard_normal(1000) * 4.0
    phi, psi = split(x, 1.5)
    phi8, psi8 = split(8.0 * x, 12.0)
    assert np.array_equal(phi8, 8.0 * phi)
    assert np.array_equal(psi8, 8.0 * psi)


def test_residual_moment_examples():
    assert residual_moment_bound(1.0, 1.0, 0.0, ONES) == pytest.approx(2.0)
    assert residual_moment_bound(1.0, 1.0, math.log(4.0), ONES) == pytest.approx(0.5)
    with pytest.raises(ParameterError):
        residual_moment_bound(1.0, 1.0, -1.0, ONES)


def test_kappa_examples():
    assert kappa(1.5, 10.0, 4.0, ONES) == pytest.approx(0.5)
    assert kappa(2.0, math.e, 4.0, ONES) == pytest.approx(1.0)
    assert kappa(3.0, 5.0, 4.0, ONES) == pytest.approx(5.0)
    with pytest.raises(ParameterError):
        kappa(2.0, 1.0, 4.0, ONES)
    assert kappa_tilde(1.5, 7.0) == 1.0
    assert kappa_tilde(2.0, math.e) == pytest.approx(1.0)
    assert kappa_tilde(4.0, 3.0) == pytest.approx(9.0)
    with pytest.raises(ParameterError):
        kappa_tilde(0.5, 3.0)


def test_combined_deviation_bound_example():
    theta = 2.0 * math.log(3.0)
    expected = 2.0 * theta * math.e + math.e ** 2 * 3.0
    assert combined_deviation_bound(math.e, 1.0, 2.0, 1, 1.0, ONES) == pytest.approx(expected)


def test_truncated_process_bound_example():
    value = truncated_process_bound(1.0, 1.0, 1.0, 1, 5.0, 0.25, ONES)
    assert value == pytest.approx(2.0 + 1.0 / math.log(2.0) + 0.25)
    with pytest.raises(ParameterError):
        truncated_process_bound(1.0, 1.0, 1.0, 1, 5.0, 0.0, ONES)


def test_bounded_part_and_expected_deviation():
    assert bounded_part_bound(2.0, 2.0, 3.0, 4, 1.0, ONES) == pytest.approx(2.0 * 3.0 * 2.0 / 2.0)
    assert expected_deviation_bound(3.0, 9, 2.0, ConstantSet(c3=0.5)) == pytest.approx(1.0)


# ── Geometric scalings ───────────────────────────────────────────────────────

def test_geometric_scalings():
    assert radial_gamma2_bound(2.0, 100, ONES) == pytest.approx(2.0 * math.sqrt(math.log(100)))
    assert paouris_bound(16, ConstantSet(c2=2.0)) == pytest.approx(8.0)
    assert entropy_bound(10, 1.0, ONES) == pytest.approx(10.0)
    assert entropy_bound(10, 0.25, ONES) == pytest.approx(10.0 * math.log(4.0))
    assert psphere_sample_size(16, 4.0, ONES) == pytest.approx(256.0 * math.log(16.0))
    with pytest.raises(ParameterError):
        psphere_sample_size(16, 2.0, ONES)


# ── Monotonicity and homogeneity ─────────────────────────────────────────────

def random_draw(rng) -> dict:
    return dict(
        A=rng.uniform(1.5, 10.0), B=rng.uniform(0.1, 5.0), p=float(rng.choice([2.0, 2.5, 3.0, 4.0])),
        v=rng.uniform(0.5, 3.0), k=int(rng.integers(1, 1000)), t=rng.uniform(0.1, 20.0),
        gamma2=rng.uniform(0.1, 10.0), diam=rng.uniform(0.1, 5.0), v1=rng.uniform(0.5, 3.0),
        v2=rng.uniform(0.5, 3.0), theta=rng.uniform(0.1, 10.0), H=rng.uniform(1.5, 10.0),
        eps=rng.uniform(0.01, 1.0), n=int(rng.integers(2, 500)), a=rng.standard_normal(5),
    )


INCREASING = {
    "subgaussian_sum_bound": (lambda d, c: subgaussian_sum_bound(d["a"], d["diam"], c), ("c1",)),
    "success_probability": (lambda d, c: success_probability(d["v1"], d["v2"], c), ("c2",)),
    "subset_sum_probability": (lambda d, c: subset_sum_probability(d["v"], c), ("c2",)),
    "tail_envelope": (lambda d, c: tail_envelope(d["t"], d["k"], d["gamma2"], d["diam"], d["v1"], d["v2"], c),
                      ("c3",)),
    "truncation_level": (lambda d, c: truncation_level(
        DecompositionParams(A=d["A"], B=d["B"], p=d["p"], v=d["v"], k=d["k"]), c), ("c2",)),
    "truncated_theta": (lambda d, c: truncated_theta(d["A"], d["B"], d["p"], d["k"], c), ("c2",)),
    "residual_moment_bound": (lambda d, c: residual_moment_bound(d["B"], d["p"], d["theta"], c), ("c1", "c2")),
    "kappa": (lambda d, c: kappa(d["p"], d["A"], d["theta"], c), ("c4",)),
    "bounded_part_bound": (lambda d, c: bounded_part_bound(d["gamma2"], d["p"], d["theta"], d["k"], d["v"], c),
                           ("c3",)),
    "combined_deviation_bound": (lambda d, c: combined_deviation_bound(d["A"], d["B"], d["p"], d["k"], d["v"], c),
                                 ("c2", "c4")),
    "truncated_process_bound": (lambda d, c: truncated_process_bound(d["A"], d["B"], d["p"], d["k"], d["H"],
                                                                     d["eps"], c), ("c2", "c3")),
    "expected_deviation_bound": (lambda d, c: expected_deviation_bound(d["gamma2"], d["k"], d["diam"], c), ("c3",)),
    "radial_gamma2_bound": (lambda d, c: radial_gamma2_bound(d["H"], d["n"], c), ("c1",)),
    "sphere_gamma2_bound": (lambda d, c: sphere_gamma2_bound(d["n"], c), ("c2",)),
    "entropy_bound": (lambda d, c: entropy_bound(d["n"], d["eps"], c), ("c7",)),
    "paouris_bound": (lambda d, c: paouris_bound(d["n"], c), ("c2",)),
    "psphere_sample_size": (lambda d, c: psphere_sample_size(d["n"], d["p"] + 0.5, c), ("c8",)),
}


@pytest.mark.parametrize("name", sorted(INCREASING))
def test_evaluators_never_decrease_in_their_constants(name):
    evaluate, names = INCREASING[name]
    rng = np.random.default_rng(sorted(INCREASING).index(name))
    for _ in range(50):
        draw = random_draw(rng)
        base = ConstantSet(**{c: rng.uniform(0.2, 3.0) for c in names})
        before = evaluate(draw, base)
        for c in names:
            bumped = ConstantSet(**{**{x: getattr(base, x) for x in names}, c: 1.25 * getattr(base, c)})
            assert evaluate(draw, bumped) >= before * (1.0 - 1e-12)


def test_bernstein_tail_shrinks_with_its_rate():
    tails = [bernstein_tail(0.5, 20, 1.0, ConstantSet(c1=c1)) for c1 in (0.1, 0.5, 1.0, 4.0)]
    assert tails == sorted(tails, reverse=True)


@pytest.mark.parametrize("lam", [0.3, 1.0, 7.5])
def test_subset_sum_bounds_scale_with_the_class(lam):
    for ell, k in ((1, 1), (3, 50), (50, 50)):
        assert subset_sum_bound_psi1(ell, k, lam * 2.0, lam * 0.7, 1.3, 0.4) == pytest.approx(
            lam * subset_sum_bound_psi1(ell, k, 2.0, 0.7, 1.3, 0.4), rel=1e-12)
        assert subset_sum_bound_psi2(ell, k, lam * 2.0, lam * 0.7, 1.1) == pytest.approx(
            lam * subset_sum_bound_psi2(ell, k, 2.0, 0.7, 1.1), rel=1e-12)


@pytest.mark.parametrize("lam", [0.3, 2.0, 7.5])
def test_envelope_is_dimensionless(lam):
    for t in (0.5, 3.0, 12.0):
        assert tail_envelope(lam * t, 40, lam * 1.5, lam * 0.8, 1.0, 1.0, ONES) == pytest.approx(
            tail_envelope(t, 40, 1.5, 0.8, 1.0, 1.0, ONES), rel=1e-12)
    base = envelope_crossover(1000, 1.0, 1.0, 1.0, 1.0, ONES)
    assert base is not None
    assert envelope_crossover(1000, lam, lam, 1.0, 1.0, ONES) == pytest.approx(lam * base, rel=1e-9)


@pytest.mark.parametrize("lam", [0.25, 3.0])
def test_linear_evaluators(lam):
    a = np.array([1.0, -2.0, 0.5])
    assert subgaussian_sum_bound(lam * a, 1.7, ONES) == pytest.approx(lam * subgaussian_sum_bound(a, 1.7, ONES))
    assert subgaussian_sum_bound(a, lam * 1.7, ONES) == pytest.approx(lam * subgaussian_sum_bound(a, 1.7, ONES))
    assert expected_deviation_bound(lam * 2.0, 16, 1.1, ONES) == pytest.approx(
        lam * expected_deviation_bound(2.0, 16, 1.1, ONES))
    assert expected_deviation_bound(2.0, 16, lam * 1.1, ONES) == pytest.approx(
        lam * expected_deviation_bound(2.0, 16, 1.1, ONES))
    assert bounded_part_bound(lam * 2.0, 3.0, 1.5, 9, 1.0, ONES) == pytest.approx(
        lam * bounded_part_bound(2.0, 3.0, 1.5, 9, 1.0, ONES))
