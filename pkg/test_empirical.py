import csv
import math

import numpy as np
import pytest
from scipy import special

from empirical import (
    IndexClass,
    Method,
    PopulationMoments,
    deviation_sup,
    export_directions,
    population_moment,
    sphere_directions,
    tail_count_sup,
    top_ell_sum_sup,
)
from errors import MethodError, ParameterError
from measures import Family, MeasureSpec, SampleMatrix, sample, truncate, with_isotropic_scale

GAUSS2 = MeasureSpec(Family.GAUSSIAN, 2)


def rows_of(rows, spec=GAUSS2) -> SampleMatrix:
    return SampleMatrix.from_rows(rows, spec)


# ── Index classes ─────────────────────────────────────────────────────────────

def test_index_class_basics():
    assert IndexClass.sphere(3).is_symmetric
    assert IndexClass.finite([[1.0, 0.0], [-1.0, 0.0]]).is_symmetric
    assert not IndexClass.finite([[1.0, 0.0]]).is_symmetric
    assert IndexClass.l1_ball(3, weights=[1.0, 2.0, 0.5]).radius == 2.0
    assert IndexClass.finite([[3.0, 4.0]]).radius == 5.0
    with pytest.raises(ParameterError):
        IndexClass.sphere(0)
    with pytest.raises(ParameterError):
        IndexClass.sphere(2, weights=[1.0, -1.0])
    with pytest.raises(ParameterError):
        IndexClass.finite([[np.inf, 0.0]])


def test_sphere_directions_are_unit():
    dirs = sphere_directions(5, 100, seed=0)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)


# ── Population moments ───────────────────────────────────────────────────────

def test_population_moment_closed_forms():
    t = np.array([0.6, -0.8, 0.0])
    gauss = MeasureSpec(Family.GAUSSIAN, 3)
    est = population_moment(gauss, 2.0 * t, 2.0)
    assert est.exact and est.value == pytest.approx(4.0)
    assert population_moment(gauss, t, 1.0).value == pytest.approx(math.sqrt(2 / math.pi))
    cube = MeasureSpec(Family.RADEMACHER_CUBE, 4)
    assert population_moment(cube, [0.5, 0.5, 0.5, 0.5], 2.0).value == pytest.approx(1.0)
    assert population_moment(cube, [1.0, 0.0, 0.0, 0.0], 5.0).value == pytest.approx(1.0)
    assert population_moment(cube, [0.5, 0.5, 0.5, 0.5], 4.0).exact


def test_population_moment_coordinate_forms():
    n = 4
    l1 = with_isotropic_scale(MeasureSpec(Family.L1_BALL_ISOTROPIC, n), exact=True)
    e1 = np.eye(n)[0]
    assert population_moment(l1, e1, 2.0).value == pytest.approx(1.0)
    expected = l1.scale ** 3 * n * special.beta(4.0, n)
    est = population_moment(l1, e1, 3.0)
    assert est.exact and est.value == pytest.approx(expected)
    expo = MeasureSpec(Family.WEIGHTED_EXPONENTIAL, 3)
    assert population_moment(expo, [0.0, 0.0, 2.0], 3.0).value == pytest.approx(
        (2.0 / math.sqrt(math.log(4))) ** 3 * 6.0)


def test_population_moment_monte_carlo_and_edge_cases():
    trunc = truncate(MeasureSpec(Family.GAUSSIAN, 2), 1.0)
    est = population_moment(trunc, [1.0, 0.0], 2.0)
    assert not est.exact and 0 < est.value < 0.5 and est.stderr > 0
    assert population_moment(trunc, [0.0, 0.0], 2.0).value == 0.0
    with pytest.raises(ParameterError):
        population_moment(GAUSS2, [1.0, 0.0, 0.0], 2.0)
    with pytest.raises(ParameterError):
        population_moment(GAUSS2, [1.0, 0.0], 0.5)


# ── Deviation supremum ───────────────────────────────────────────────────────

def test_deviation_examples():
    assert deviation_sup(rows_of(np.eye(2)), IndexClass.sphere(2), 2.0, Method.EIGEN_EXACT).value == pytest.approx(0.5)
    skew = rows_of([[math.sqrt(2.0), 0.0], [0.0, 0.0]])
    result = deviation_sup(skew, IndexClass.sphere(2), 2.0, Method.EIGEN_EXACT)
    assert result.value == pytest.approx(1.0)
    assert abs(result.argmax_direction[1]) == pytest.approx(1.0)
    assert result.is_exact


def test_constant_deviation_on_orthonormal_rows():
    heuristic = deviation_sup(rows_of(np.eye(2)), IndexClass.sphere(2), 2.0)
    assert heuristic.value == pytest.approx(0.5, rel=1e-9)
    assert heuristic.method is Method.GRADIENT_HEURISTIC


def test_method_ordering():
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 50, seed=1)
    sphere = IndexClass.sphere(3)
    net = deviation_sup(smp, sphere, 2.0, Method.NET_LOWER, budget=500)
    heuristic = deviation_sup(smp, sphere, 2.0, budget=500)
    exact = deviation_sup(smp, sphere, 2.0, Method.EIGEN_EXACT)
    assert net.value <= heuristic.value + 1e-12
    assert heuristic.value == pytest.approx(exact.value, abs=1e-6)


def test_heuristic_dominates_the_net_for_other_moments():
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 40, seed=2)
    net = deviation_sup(smp, IndexClass.sphere(3), 3.0, Method.NET_LOWER, budget=300)
    heuristic = deviation_sup(smp, IndexClass.sphere(3), 3.0, budget=300)
    assert net.value <= heuristic.value + 1e-12
    assert np.linalg.norm(heuristic.argmax_direction) == pytest.approx(1.0)


def test_l1_class_returns_the_net_value():
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 30, seed=3)
    result = deviation_sup(smp, IndexClass.l1_ball(3), 2.0, budget=200)
    assert result.method is Method.NET_LOWER
    assert np.abs(result.argmax_direction).sum() == pytest.approx(1.0)


def test_eigen_exact_preconditions():
    smp = sample(MeasureSpec(Family.GAUSSIAN, 2), 10, seed=0)
    with pytest.raises(MethodError):
        deviation_sup(smp, IndexClass.sphere(2), 3.0, Method.EIGEN_EXACT)
    with pytest.raises(MethodError):
        deviation_sup(smp, IndexClass.l1_ball(2), 2.0, Method.EIGEN_EXACT)
    trunc = sample(truncate(MeasureSpec(Family.GAUSSIAN, 2), 1.0), 10, seed=0)
    with pytest.raises(MethodError):
        deviation_sup(trunc, IndexClass.sphere(2), 2.0, Method.EIGEN_EXACT)
    with pytest.raises(ParameterError):
        deviation_sup(smp, IndexClass.sphere(3), 2.0)
    with pytest.raises(ParameterError):
        deviation_sup(smp, IndexClass.sphere(2), 0.5)

def test_heuristic_matches_eigen_exact_at_p2():
    gaps = []
    for i in range(100):
        n, k = 2 + i % 7, 8 + (7 * i) % 57
        smp = sample(MeasureSpec(Family.GAUSSIAN, n), k, seed=100 + i)
        sphere = IndexClass.sphere(n)
        exact = deviation_sup(smp, sphere, 2.0, Method.EIGEN_EXACT)
        heuristic = deviation_sup(smp, sphere, 2.0, seed=i)
        gaps.append(abs(heuristic.value - exact.value))
    assert max(gaps) <= 1e-6


def test_p3_heuristic_reaches_a_dense_net():
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 40, seed=2)
    sphere = IndexClass.sphere(3)
    dense = deviation_sup(smp, sphere, 3.0, Method.NET_LOWER, budget=100_000, seed=5)
    heuristic = deviation_sup(smp, sphere, 3.0)
    assert heuristic.value >= 0.99 * dense.value


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_negating_a_row_leaves_the_deviation_unchanged(p):
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 30, seed=8)
    flipped = smp.rows.copy()
    flipped[[0, 7, 19]] *= -1.0
    sphere = IndexClass.sphere(3)
    base = deviation_sup(smp, sphere, p, budget=500)
    other = deviation_sup(rows_of(flipped, smp.spec), sphere, p, budget=500)
    assert other.value == pytest.approx(base.value, rel=1e-12)
    if p == 2.0:
        assert deviation_sup(rows_of(flipped, smp.spec), sphere, p, Method.EIGEN_EXACT).value == pytest.approx(
            deviation_sup(smp, sphere, p, Method.EIGEN_EXACT).value, rel=1e-12)



def test_shared_population_object_is_reused():
    spec = truncate(MeasureSpec(Family.GAUSSIAN, 2), 2.0)
    pop = PopulationMoments(spec, seed=0, reference_size=5000)
    smp = sample(spec, 20, seed=4)
    a = deviation_sup(smp, IndexClass.sphere(2), 2.0, Method.NET_LOWER, population=pop, budget=100)
    b = deviation_sup(smp, IndexClass.sphere(2), 2.0, Method.NET_LOWER, population=pop, budget=100)
    assert a.value == b.value


def test_export_directions(tmp_path):
    smp = rows_of(np.eye(2))
    results = [deviation_sup(smp, IndexClass.sphere(2), 2.0, Method.EIGEN_EXACT)]
    path = tmp_path / "dirs.csv"
    export_directions(str(path), results)
    with open(path, newline="") as f:
        table = list(csv.reader(f))
    assert table[0] == ["method", "p", "value", "t1", "t2"]
    assert table[1][0] == "eigen_exact"


# ── Tail counts ──────────────────────────────────────────────────────────────

def test_tail_counts_on_orthonormal_rows():
    counts = tail_count_sup(rows_of(np.eye(2)), IndexClass.sphere(2), [1e-9, 0.7, 0.8, 2.0])
    assert counts.is_exact
    assert counts.counts.tolist() == [2, 2, 1, 0]


def test_tail_count_extremes():
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 30, seed=5)
    big = 2.0 * np.linalg.norm(smp.rows, axis=1).max()
    counts = tail_count_sup(smp, IndexClass.sphere(3), [1e-12, big], budget=500)
    assert counts.counts.tolist() == [30, 0]
    assert not counts.is_exact


def test_tail_counts_exact_dominates_heuristic():
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 8, seed=6)
    levels = [0.25, 0.5, 1.0, 1.5]
    exact = tail_count_sup(smp, IndexClass.sphere(3), levels)
    heuristic = tail_count_sup(smp, IndexClass.sphere(3), levels, budget=2000, exact=False)
    assert exact.is_exact
    assert np.all(exact.counts >= heuristic.counts)
    assert np.all(np.diff(exact.counts) <= 0)


def test_tail_counts_finite_class_is_exact():
    smp = rows_of([[1.0, 0.0], [0.5, 0.5], [0.0, 2.0]])
    counts = tail_count_sup(smp, IndexClass.finite([[1.0, 0.0], [0.0, 1.0]]), [0.4, 1.0])
    assert counts.is_exact
    assert counts.counts.tolist() == [2, 1]


def test_tail_count_level_validation():
    smp = rows_of(np.eye(2))
    for levels in ([], [0.0, 1.0], [1.0, 0.5], [1.0, 1.0]):
        with pytest.raises(ParameterError):
            tail_count_sup(smp, IndexClass.sphere(2), levels)
    big = sample(GAUSS2, 20, seed=0)
    with pytest.raises(MethodError):
        tail_count_sup(big, IndexClass.sphere(2), [1.0], exact=True)

def angle_sweep_counts(rows: np.ndarray, levels) -> list[int]:
    """Exact planar tail counts: the count is constant between the angles where some |<X_i,t>| crosses u."""
    radii = np.linalg.norm(rows, axis=1)
    phases = np.arctan2(rows[:, 1], rows[:, 0])
    result = []
    for u in levels:
        reach = radii >= u
        offsets = np.arccos(np.clip(u / radii[reach], -1.0, 1.0))
        cuts = np.concatenate([phases[reach] + offsets, phases[reach] - offsets, [0.0]]) % np.pi
        cuts = np.sort(cuts)
        mids = np.concatenate([(cuts[:-1] + cuts[1:]) / 2.0, [(cuts[-1] + cuts[0] + np.pi) / 2.0 % np.pi]])
        thetas = np.concatenate([mids, np.linspace(0.0, np.pi, 20_000, endpoint=False)])
        dirs = np.column_stack([np.cos(thetas), np.sin(thetas)])
        result.append(int((np.abs(rows @ dirs.T) >= u).sum(axis=0).max()))
    return result


@pytest.mark.parametrize("seed", range(5))
def test_planar_tail_counts_match_an_angle_sweep(seed):
    smp = sample(GAUSS2, 6, seed=seed)
    levels = [0.3, 0.6, 1.0, 1.5, 2.0]
    counts = tail_count_sup(smp, IndexClass.sphere(2), levels)
    assert counts.is_exact
    assert counts.counts.tolist() == angle_sweep_counts(smp.rows, levels)


@pytest.mark.parametrize("scale", [0.5, 2.0, 8.0])
def test_tail_counts_scale_with_the_levels(scale):
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 9, seed=11)
    levels = np.array([0.2, 0.5, 0.9, 1.4, 2.2])
    base = tail_count_sup(smp, IndexClass.sphere(3), levels)
    scaled = tail_count_sup(rows_of(scale * smp.rows, smp.spec), IndexClass.sphere(3), scale * levels)
    assert scaled.counts.tolist() == base.counts.tolist()



# ── Top-ell sums ─────────────────────────────────────────────────────────────

def test_top_ell_examples():
    smp = rows_of(np.eye(2))
    assert top_ell_sum_sup(smp, 2).value == pytest.approx(math.sqrt(2.0))
    rows = np.array([[3.0, 4.0], [1.0, 0.0], [0.0, -2.0]])
    one = top_ell_sum_sup(rows_of(rows), 1)
    assert one.value == pytest.approx(5.0)
    assert one.subset == (0,)


def test_top_ell_full_set_and_signs():
    rows = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    result = top_ell_sum_sup(rows_of(rows), 3)
    assert result.value == pytest.approx(math.sqrt(5.0))
    total = (rows[list(result.subset)] * np.array(result.signs)[:, None]).sum(axis=0)
    assert np.linalg.norm(total) == pytest.approx(result.value)
    assert result.direction @ total == pytest.approx(result.value)


def test_local_search_never_beats_enumeration():
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 12, seed=7)
    for ell in (1, 3, 6):
        exact = top_ell_sum_sup(smp, ell)
        local = top_ell_sum_sup(smp, ell, Method.LOCAL_SEARCH)
        assert exact.is_exact and not local.is_exact
        assert local.value <= exact.value + 1e-9


def test_top_ell_limits():
    smp = sample(GAUSS2, 25, seed=0)
    assert top_ell_sum_sup(smp, 3).method is Method.LOCAL_SEARCH
    with pytest.raises(MethodError):
        top_ell_sum_sup(smp, 3, Method.ENUMERATION_EXACT)
    with pytest.raises(ParameterError):
        top_ell_sum_sup(smp, 0)
    with pytest.raises(ParameterError):
        top_ell_sum_sup(smp, 26)


def test_local_search_agrees_with_enumeration_on_small_instances():
    agree = 0
    for i in range(100):
        n, k, ell = 2 + i % 3, 6 + i % 7, 1 + i % 4
        smp = sample(MeasureSpec(Family.GAUSSIAN, n), k, seed=200 + i)
        exact = top_ell_sum_sup(smp, ell, Method.ENUMERATION_EXACT)
        local = top_ell_sum_sup(smp, ell, Method.LOCAL_SEARCH)
        assert local.value <= exact.value + 1e-9
        agree += local.value >= exact.value - 1e-9
    assert agree >= 95


def test_top_ell_is_monotone_and_subadditive_in_ell():
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 10, seed=12)
    values = [top_ell_sum_sup(smp, ell).value for ell in range(1, 11)]
    assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))
    for a in range(1, 10):
        for b in range(1, 11 - a):
            assert values[a + b - 1] <= values[a - 1] + values[b - 1] + 1e-9


@pytest.mark.parametrize("scale", [0.25, 3.0, -2.0])
def test_top_ell_scales_with_the_rows(scale):
    smp = sample(MeasureSpec(Family.GAUSSIAN, 3), 9, seed=13)
    for ell in (1, 4, 9):
        base = top_ell_sum_sup(smp, ell).value
        scaled = top_ell_sum_sup(rows_of(scale * smp.rows, smp.spec), ell).value
        assert scaled == pytest.approx(abs(scale) * base, rel=1e-12)
