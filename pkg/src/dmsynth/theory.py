"""Finite-class generalization bound and a Monte-Carlo check of it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BoundParams:
    log_cardinality: float  # log |F|
    delta: float
    sample_size: int

    def __post_init__(self):
        if not (math.isfinite(self.log_cardinality) and self.log_cardinality >= 0):
            raise ValueError("log_cardinality must be finite and >= 0")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie strictly inside (0, 1)")
        if int(self.sample_size) != self.sample_size or self.sample_size < 1:
            raise ValueError("sample_size must be a positive integer")


def gen_bound(p: BoundParams) -> float:
    """sqrt((log|F| + log(1/delta)) / |S|)."""
    return math.sqrt((p.log_cardinality - math.log(p.delta)) / p.sample_size)


def hoeffding_tail(n: int, t: float, ranges) -> float:
    """Hoeffding bound exp(-2 t^2 / sum (b_i - a_i)^2) on P[sum X - E sum X >= t].

    ``ranges`` is either n pairs (a_i, b_i) or a single pair shared by all n
    variables.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not t > 0:
        raise ValueError("t must be positive")
    r = np.asarray(ranges, dtype=float).reshape(-1, 2)
    if r.shape[0] == 1:
        r = np.repeat(r, n, axis=0)
    if r.shape[0] != n:
        raise ValueError(f"expected {n} ranges, got {r.shape[0]}")
    widths = r[:, 1] - r[:, 0]
    if np.any(widths <= 0):
        raise ValueError("every range needs b_i > a_i")
    return math.exp(-2.0 * t * t / float(np.sum(widths**2)))


@dataclass(frozen=True)
class FiniteClassExperiment:
    """Threshold classifiers h_j(x) = 1[x >= theta_j] on x ~ U(0, 1) with
    label y = 1[x >= boundary], flipped with probability ``label_noise``.
    The 0-1 loss is bounded in [0, 1]."""

    thresholds: tuple[float, ...] = field(default_factory=lambda: tuple(np.linspace(0.0, 1.0, 50)))
    boundary: float = 0.5
    label_noise: float = 0.1
    population_size: int = 100_000
    population_seed: int = 12345

    @property
    def cardinality(self) -> int:
        return len(self.thresholds)

    def population(self) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.population_seed)
        x = rng.random(self.population_size)
        y = (x >= self.boundary).astype(int)
        flip = rng.random(self.population_size) < self.label_noise
        return x, np.where(flip, 1 - y, y)

    def losses(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """0-1 loss matrix, shape (num_hypotheses, n)."""
        th = np.asarray(self.thresholds)[:, None]
        pred = (x[None, :] >= th).astype(int)
        return (pred != y[None, :]).astype(float)


@dataclass
class ViolationResult:
    empirical_rate: float
    analytic_cap: float
    per_hypothesis_rates: np.ndarray
    trials: int

    @property
    def slack(self) -> float:
        """Three binomial standard errors at the cap."""
        p = min(self.analytic_cap, 1.0)
        return 3.0 * math.sqrt(p * (1.0 - p) / self.trials)


def bound_violation_mc(
    exp: FiniteClassExperiment, sample_size: int, t: float, trials: int, seed: int = 0
) -> ViolationResult:
    """Estimate P[sup_f (Test_D(f) - Train_S(f)) >= t] and compare with |F| exp(-2|S|t^2).

    D is the experiment's fixed finite population, so Test_D is exact and
    S is drawn i.i.d. from it with replacement.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x, y = exp.population()
    L = exp.losses(x, y)
    test = L.mean(axis=1)
    rng = np.random.default_rng(seed)
    hits = np.zeros(exp.cardinality, dtype=int)
    sup_hits = 0
    for _ in range(trials):
        idx = rng.integers(0, x.size, size=sample_size)
        gap = test - L[:, idx].mean(axis=1)
        over = gap >= t
        hits += over
        sup_hits += bool(over.any())
    cap = exp.cardinality * math.exp(-2.0 * sample_size * t * t)
    return ViolationResult(sup_hits / trials, cap, hits / trials, trials)
