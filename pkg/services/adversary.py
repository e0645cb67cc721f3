"""Malicious-node behaviour and the analytical attack-success calculator.

Conspiracy model: among A participating nodes a fraction q is malicious and a committee
of M = floor(A*p) seats is drawn as if at random. The attack succeeds when malicious
nodes hold strictly more than half of the seats, i.e. X >= floor(M/2) + 1 with
X ~ Hypergeometric(population A, successes K = floor(A*q), draws M).
"""
import csv
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from services.learning import ParamVector
from utils.errors import InvalidArgument
from utils.helpers import format_probability

logger = logging.getLogger(__name__)

COLLUSION_LOW = 0.90
COLLUSION_HIGH = 1.00
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class AttackConfig:
    malicious_fraction: float = 0.0
    noise_sigma: float = 1.0
    collusion: bool = False
    suppress_honest: bool = False
    # noise_sigma scales the round's median absolute honest-delta coordinate
    relative_sigma: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.malicious_fraction <= 1.0:
            raise InvalidArgument("malicious_fraction must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be non-negative")


@dataclass(frozen=True)
class AttackAnalysisQuery:
    A: int
    p: float
    q: float

    def __post_init__(self):
        if self.A < 1:
            raise InvalidArgument("A must be a positive integer")
        if not 0.0 < self.p <= 1.0:
            raise InvalidArgument("committee fraction p must lie in (0, 1]")
        if not 0.0 <= self.q <= 1.0:
            raise InvalidArgument("malicious fraction q must lie in [0, 1]")

    @property
    def committee_seats(self) -> int:
        return math.floor(self.A * self.p + _FLOOR_EPS)

    @property
    def malicious_nodes(self) -> int:
        return min(self.A, math.floor(self.A * self.q + _FLOOR_EPS))


def poison_delta(delta: ParamVector, sigma: float, seed: int) -> ParamVector:
    """Add i.i.d. N(0, sigma^2) noise to every coordinate."""
    if sigma < 0:
        raise InvalidArgument("sigma must be non-negative")
    if sigma == 0:
        return ParamVector(delta.values.copy(), delta.shape)
    noise = np.random.default_rng(seed).normal(0.0, sigma, size=len(delta))
    return ParamVector(delta.values + noise, delta.shape)


def collusion_score(is_malicious_update: bool, honest_score: float, seed: int, suppress_honest: bool = False) -> float:
    """Score a colluding committee member reports instead of its honest one."""
    if is_malicious_update:
        return float(np.random.default_rng(seed).uniform(COLLUSION_LOW, COLLUSION_HIGH))
    return 0.0 if suppress_honest else honest_score


def _log_comb(n, r):
    return gammaln(n + 1) - gammaln(r + 1) - gammaln(n - r + 1)


def attack_success_prob(query: AttackAnalysisQuery) -> float:
    """Exact P[X >= floor(M/2) + 1], summed in the log domain."""
    population = query.A
    seats = query.committee_seats
    malicious = query.malicious_nodes
    if seats < 1:
        raise InvalidArgument(f"committee of floor({query.A}*{query.p}) = 0 seats")

    low = seats // 2 + 1
    high = min(seats, malicious)
    # hypergeometric support also needs seats - x <= population - malicious
    low = max(low, seats - (population - malicious))
    if low > high:
        return 0.0

    x = np.arange(low, high + 1, dtype=np.float64)
    log_terms = (
        _log_comb(malicious, x)
        + _log_comb(population - malicious, seats - x)
        - _log_comb(population, seats)
    )
    return float(min(1.0, max(0.0, np.exp(logsumexp(log_terms)))))


def sweep_success_prob(A: int, p_grid: Sequence[float], q_grid: Sequence[float]) -> np.ndarray:
    """attack_success_prob over a p x q grid (rows follow p)."""
    if len(p_grid) == 0 or len(q_grid) == 0:
        raise InvalidArgument("sweep grids must be non-empty")
    matrix = np.empty((len(p_grid), len(q_grid)))
    for i, p in enumerate(p_grid):
        for j, q in enumerate(q_grid):
            matrix[i, j] = attack_success_prob(AttackAnalysisQuery(A, p, q))
    return matrix


def write_sweep_csv(path, p_grid: Sequence[float], q_grid: Sequence[float], matrix: np.ndarray):
    """CSV with header p,q,probability, row-major over p then q."""
    path = Path(path)
    if path.parent and str(path.parent) not in ("", "."):
        os.makedirs(path.parent, exist_ok=True)
    try:
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["p", "q", "probability"])
            for i, p in enumerate(p_grid):
                for j, q in enumerate(q_grid):
                    writer.writerow([f"{p:g}", f"{q:g}", format_probability(matrix[i, j])])
        logger.info(f"Sweep with {matrix.size} points written to {path}")
    except OSError as e:
        logger.error(f"Error writing sweep {path}: {e}")
        raise
