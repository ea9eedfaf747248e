import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evosnn.genome import GenomeConfig, VariationParams, random_genome
from evosnn.nsga import (
    ObjectivePoint,
    Population,
    crowding_distance,
    dominates,
    fast_nondominated_sort,
    make_offspring,
    nsga2_generation,
    select_survivors,
)

pts = st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=30)


def brute_fronts(points):
    """Peel fronts by repeated O(n^2) dominance checks."""
    left = list(range(len(points)))
    fronts = []
    while left:
        front = [i for i in left if not any(dominates(points[j], points[i]) for j in left)]
        fronts.append(front)
        left = [i for i in left if i not in front]
    return fronts


def test_dominance():
    assert dominates((1, 1), (1, 2))
    assert not dominates((1, 1), (1, 1))
    assert not dominates((0, 2), (2, 0))
    assert dominates(ObjectivePoint(0, 0), ObjectivePoint(0, 1, "predicted"))
    with pytest.raises(ValueError):
        ObjectivePoint(float("nan"), 0)


def test_sort_example():
    assert fast_nondominated_sort([(1, 2), (2, 1), (2, 2), (3, 3)]) == [[0, 1], [2], [3]]


@settings(max_examples=300, deadline=None)
@given(points=pts)
def test_sort_matches_brute_force(points):
    fronts = fast_nondominated_sort(points)
    assert fronts == brute_fronts(points)
    assert sorted(i for f in fronts for i in f) == list(range(len(points)))


def test_crowding_examples():
    d = crowding_distance([(0, 3), (1, 2), (2, 1), (3, 0)])
    assert np.isinf(d[0]) and np.isinf(d[3])
    assert d[1] == pytest.approx(2 / 3 + 2 / 3)
    assert np.all(np.isinf(crowding_distance([(1, 1), (2, 0)])))
    flat = crowding_distance([(1, 5), (1, 5), (1, 5)])
    assert np.isinf(flat[0]) and np.isinf(flat[2]) and flat[1] == 0


def test_survivors_prefer_front_then_spread():
    points = [(0, 4), (1, 3), (1.1, 2.9), (2, 2), (4, 0), (5, 5)]
    keep = select_survivors(points, 4)
    assert 5 not in keep
    assert {0, 4} <= set(keep)
    assert 2 not in keep  # crowded next to 1


def _pop(n=10, seed=0):
    cfg = GenomeConfig(l=2, b=3)
    rng = np.random.default_rng(seed)
    genomes = [random_genome(cfg, rng=rng) for _ in range(n)]
    return Population(genomes, [(float(g.genes.sum() % 7), float(g.genes[:5].sum())) for g in genomes])


def score(gs):
    return [(float(g.genes.sum() % 7), float(g.genes[:5].sum())) for g in gs]


def test_offspring_distinct():
    pop = _pop()
    kids = make_offspring(pop, 10, VariationParams(), np.random.default_rng(0))
    keys = [k.key for k in kids]
    assert len(set(keys)) == 10
    assert not set(keys) & {g.key for g in pop.genomes}


def test_elitism_keeps_first_front():
    pop = _pop(12, seed=1)
    first = {pop.genomes[i].key for i in fast_nondominated_sort(pop.points)[0]}
    nxt = nsga2_generation(pop, score, VariationParams(), np.random.default_rng(2))
    assert len(nxt) == 12
    merged_points = list(nxt.points)
    best_front = {nxt.genomes[i].key for i in fast_nondominated_sort(merged_points)[0]}
    # every old non-dominated genome either survives or is dominated by a survivor
    for key in first - {g.key for g in nxt.genomes}:
        p = pop.points[[g.key for g in pop.genomes].index(key)]
        assert any(dominates(q, p) for q in nxt.points)
    assert best_front


def test_generation_deterministic():
    a = nsga2_generation(_pop(), score, VariationParams(), np.random.default_rng(5))
    b = nsga2_generation(_pop(), score, VariationParams(), np.random.default_rng(5))
    assert [g.key for g in a.genomes] == [g.key for g in b.genomes]


def test_disabled_generation_only_reranks():
    pop = _pop()
    out = nsga2_generation(pop, score, VariationParams(), np.random.default_rng(0), enabled=False)
    assert {g.key for g in out.genomes} == {g.key for g in pop.genomes}
