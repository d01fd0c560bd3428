"""Shared builders for randomized exact instances used across the suite."""

from __future__ import annotations

import math

import numpy as np

from calma.core import (
    Dataset,
    ExpectationEngine,
    FiniteDistribution,
    Hypothesis,
    HypothesisClass,
    TablePredictor,
    make_class,
)


def random_distribution(
    rng: np.random.Generator,
    n_points: int = 12,
    dim: int = 2,
    bayes_range: tuple[float, float] = (0.0, 1.0),
) -> FiniteDistribution:
    points = rng.normal(size=(n_points, dim))
    mass = rng.uniform(0.2, 1.0, size=n_points)
    mass = mass / mass.sum()
    mass[-1] = 1.0 - math.fsum(mass[:-1].tolist())
    bayes = rng.uniform(*bayes_range, size=n_points)
    return FiniteDistribution(points, mass, bayes)


def table_hypothesis(points: np.ndarray, values: np.ndarray, tag: str, bound: float = 1.0) -> Hypothesis:
    lookup = {row.tobytes(): v for row, v in zip(np.ascontiguousarray(points, dtype=np.float64), values)}

    def fn(X):
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        return np.array([lookup[row.tobytes()] for row in X])

    return Hypothesis(fn, bound, tag)


def random_class(
    rng: np.random.Generator,
    dist: FiniteDistribution,
    k: int = 3,
    values: str = "real",
) -> HypothesisClass:
    """Table-backed class over the support; 'real' in [-1,1], 'boolean' in {0,1},
    'ternary' in {-1,0,1}."""
    members = []
    for i in range(k):
        if values == "boolean":
            v = rng.integers(0, 2, size=dist.n).astype(float)
        elif values == "ternary":
            v = rng.integers(-1, 2, size=dist.n).astype(float)
        else:
            v = rng.uniform(-1, 1, size=dist.n)
        members.append(table_hypothesis(dist.points, v, f"h{i}"))
    return make_class(members)


def random_predictor(
    rng: np.random.Generator,
    dist: FiniteDistribution,
    lo: float = 0.0,
    hi: float = 1.0,
) -> TablePredictor:
    return TablePredictor(dist.points, rng.uniform(lo, hi, size=dist.n))


def random_instance(rng, n_points=12, dim=2, k=3, bayes_range=(0.0, 1.0), pred_range=(0.0, 1.0)):
    dist = random_distribution(rng, n_points, dim, bayes_range)
    engine = ExpectationEngine.exact(dist)
    cls = random_class(rng, dist, k)
    pred = random_predictor(rng, dist, *pred_range)
    return dist, engine, cls, pred


def bernoulli_dataset(rng: np.random.Generator, dist: FiniteDistribution, n: int) -> Dataset:
    idx = rng.choice(dist.n, size=n, p=dist.mass)
    y = (rng.random(n) < dist.bayes[idx]).astype(float)
    return Dataset(dist.points[idx], y)
