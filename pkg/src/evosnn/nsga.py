"""NSGA-II building blocks for two-objective minimisation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .genome import Genome, VariationParams, polynomial_mutation, two_point_crossover


@dataclass(frozen=True)
class ObjectivePoint:
    f1: float
    f2: float
    provenance: str = "measured"  # or "predicted"

    def __post_init__(self):
        if not (np.isfinite(self.f1) and np.isfinite(self.f2)):
            raise ValueError("objective values must be finite")
        if self.provenance not in ("measured", "predicted"):
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def as_tuple(self) -> tuple[float, float]:
        return (self.f1, self.f2)


def _xy(p) -> tuple[float, float]:
    if isinstance(p, ObjectivePoint):
        return p.f1, p.f2
    return float(p[0]), float(p[1])


def _as_array(points) -> np.ndarray:
    if isinstance(points, np.ndarray):
        return points.astype(np.float64, copy=False).reshape(-1, 2)
    return np.asarray([_xy(p) for p in points], dtype=np.float64).reshape(-1, 2)


def dominates(a, b) -> bool:
    """True iff ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    a1, a2 = _xy(a)
    b1, b2 = _xy(b)
    return a1 <= b1 and a2 <= b2 and (a1 < b1 or a2 < b2)


def fast_nondominated_sort(points) -> list[list[int]]:
    """Partition point indices into successive non-dominated fronts.

    Each front lists indices in ascending order.
    """
    P = _as_array(points)
    n = len(P)
    if n == 0:
        return []
    x, y = P[:, 0], P[:, 1]
    le = (x[:, None] <= x[None, :]) & (y[:, None] <= y[None, :])
    lt = (x[:, None] < x[None, :]) | (y[:, None] < y[None, :])
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(count == 0)
    while len(current):
        fronts.append([int(i) for i in current])
        count = count - dom[current].sum(axis=0)
        count[current] = -1
        current = np.flatnonzero(count == 0)
    return fronts


def crowding_distance(points) -> np.ndarray:
    """NSGA-II crowding distance within one front.

    Boundary points of each objective get ``inf``; objectives with zero
    range contribute nothing. Ties are ordered stably by index.
    """
    P = _as_array(points)
    n = len(P)
    if n == 0:
        raise ValueError("crowding distance of an empty front")
    dist = np.zeros(n)
    for m in range(P.shape[1]):
        order = np.argsort(P[:, m], kind="stable")
        vals = P[order, m]
        span = vals[-1] - vals[0]
        dist[order[0]] = np.inf
        dist[order[-1]] = np.inf
        if span <= 0 or n < 3:
            continue
        dist[order[1:-1]] += (vals[2:] - vals[:-2]) / span
    return dist


def rank_and_crowding(points) -> tuple[np.ndarray, np.ndarray]:
    fronts = fast_nondominated_sort(points)
    n = sum(len(f) for f in fronts)
    rank = np.empty(n, dtype=np.int64)
    crowd = np.empty(n)
    pts = [_xy(p) for p in points]
    for r, front in enumerate(fronts):
        rank[front] = r
        crowd[front] = crowding_distance([pts[i] for i in front])
    return rank, crowd


def sort_order(points) -> np.ndarray:
    """Indices sorted best first by (front rank, -crowding), ties by index."""
    rank, crowd = rank_and_crowding(points)
    return np.lexsort((np.arange(len(rank)), -crowd, rank))


def select_survivors(points, n: int) -> list[int]:
    """Environmental selection: best ``n`` indices by rank, then crowding."""
    return [int(i) for i in sort_order(points)[:n]]


def binary_tournament(rank: np.ndarray, crowd: np.ndarray, rng: np.random.Generator) -> int:
    i, j = rng.integers(0, len(rank), size=2)
    if (rank[i], -crowd[i]) <= (rank[j], -crowd[j]):
        return int(i)
    return int(j)


@dataclass
class Population:
    genomes: list[Genome]
    points: list[tuple[float, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.genomes)


Scorer = Callable[[Sequence[Genome]], list[tuple[float, float]]]
Transform = Callable[[Genome], Genome]


def make_offspring(
    pop: Population,
    n: int,
    variation: VariationParams,
    rng: np.random.Generator,
    transform: Transform | None = None,
    max_tries: int = 20,
) -> list[Genome]:
    """Tournament, crossover and mutation until ``n`` new distinct children exist.

    Children identical to a parent-population member or an earlier child are
    discarded; after ``max_tries * n`` attempts duplicates are accepted.
    """
    rank, crowd = rank_and_crowding(pop.points)
    seen = {g.key for g in pop.genomes}
    out: list[Genome] = []
    attempts = 0
    while len(out) < n:
        a = pop.genomes[binary_tournament(rank, crowd, rng)]
        b = pop.genomes[binary_tournament(rank, crowd, rng)]
        for child in two_point_crossover(a, b, variation, rng=rng):
            child = polynomial_mutation(child, variation, rng=rng)
            if transform is not None:
                child = transform(child)
            attempts += 1
            if child.key in seen and attempts < max_tries * n:
                continue
            seen.add(child.key)
            out.append(child)
            if len(out) == n:
                break
    return out


def nsga2_generation(
    pop: Population,
    scorer: Scorer,
    variation: VariationParams,
    rng: np.random.Generator,
    transform: Transform | None = None,
    enabled: bool = True,
) -> Population:
    """One generation: offspring of size ``len(pop)``, then elitist selection.

    ``scorer`` maps genomes to ``(f1, f2)``; in the search loop f1 comes from
    the predictor and f2 from a forward-only spike measurement. With
    ``enabled=False`` no offspring are made and the population is re-ranked.
    """
    n = len(pop)
    if enabled:
        kids = make_offspring(pop, n, variation, rng, transform)
        kid_points = list(scorer(kids))
    else:
        kids, kid_points = [], []
    genomes = pop.genomes + kids
    points = list(pop.points) + kid_points
    keep = select_survivors(points, n)
    return Population([genomes[i] for i in keep], [points[i] for i in keep])
