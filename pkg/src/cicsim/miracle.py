"""Multi-round adaptive consensus by parallel sequential likelihood tests.

Each candidate state root gets one running score. With c_{k,j} submissions
for root k out of C_j total in round j, the score after round i is the exact
integer

    L_{k,i} = sum_{j<=i} (2 c_{k,j} - C_j) C_j,

and a root wins as soon as its score strictly exceeds the real-valued
threshold T derived from the stake-pool size M, the per-node inclusion
probability q, the design Byzantine fraction f_max, and the error budget
beta. The scheme is a bank of sequential probability ratio tests, one per
root, under a Gaussian approximation of the per-round membership counts;
at most one score can ever exceed a positive threshold, and an adversary
maximizes its acceptance chance by pooling all submissions on a single
incorrect root (both properties are exercised in the test suite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional


class DegenerateParams(ValueError):
    """Parameter combination outside the scheme's domain."""


class NoSolution(ValueError):
    """A sizing search found no admissible operating point."""


@dataclass(frozen=True)
class ConsensusParams:
    """Operating point: pool size M, Byzantine design fraction, per-node
    inclusion probability, and error budget."""

    m_total: int
    f_max: float
    q: float
    beta: float

    def __post_init__(self) -> None:
        if self.m_total <= 0:
            raise DegenerateParams("pool size must be positive")
        if not 0.0 < self.f_max < 0.5:
            raise DegenerateParams("design Byzantine fraction must lie in (0, 0.5)")
        if not 0.0 < self.q <= 1.0:
            raise DegenerateParams("inclusion probability must lie in (0, 1]")
        # beta = 0.5 gives a zero threshold; values above 0.5 void the
        # guarantees but keep the algebra meaningful, so only (0, 1) is hard.
        if not 0.0 < self.beta < 1.0:
            raise DegenerateParams("error budget must lie in (0, 1)")

    def moments(self, f: float):
        """Gaussian moments of honest/Byzantine membership counts at actual
        Byzantine fraction f: (mu_h, var_h, mu_b, var_b)."""
        m, q = self.m_total, self.q
        mu_h = q * (1.0 - f) * m
        mu_b = q * f * m
        return mu_h, mu_h * (1.0 - q), mu_b, mu_b * (1.0 - q)


def threshold(params: ConsensusParams) -> float:
    """Acceptance threshold for the integer score.

    ln((1-beta)/beta) * 2 q (1-q) M (1-f_max) f_max / ((1-f_max) - f_max)
    """
    f = params.f_max
    denom = (1.0 - f) - f
    if denom <= 0.0:
        raise DegenerateParams("threshold diverges as f_max reaches 1/2")
    rate = 2.0 * params.q * (1.0 - params.q) * params.m_total * (1.0 - f) * f
    return math.log((1.0 - params.beta) / params.beta) * rate / denom


@dataclass(frozen=True)
class RoundTally:
    """Submission counts of one round, grouped by root."""

    round_index: int
    counts: Mapping[bytes, int]

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.counts.values()):
            raise ValueError("counts are non-negative")

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@dataclass(frozen=True)
class LikelihoodTable:
    """Exact integer running scores per root.

    A root first seen in round j is back-charged the sum of squared totals of
    the earlier rounds, so its score equals the full sum from round 1
    regardless of when it first appeared.
    """

    scores: Mapping[bytes, int] = field(default_factory=dict)
    rounds_elapsed: int = 0
    charge: int = 0  # sum of C_j^2 over elapsed rounds

    def score(self, root: bytes) -> int:
        return self.scores.get(root, -self.charge)

    def leader(self):
        if not self.scores:
            return None, None
        best = max(self.scores, key=lambda r: (self.scores[r], r))
        return best, self.scores[best]


def update_likelihoods(table: LikelihoodTable, tally: RoundTally) -> LikelihoodTable:
    """Fold one round into the table: every known root gets its increment,
    roots absent from the round contribute -C_j^2."""
    if tally.round_index != table.rounds_elapsed + 1:
        raise ValueError(
            f"tally for round {tally.round_index}, table at {table.rounds_elapsed}")
    total = tally.total
    scores = {root: s - total * total for root, s in table.scores.items()}
    for root, count in tally.counts.items():
        if count == 0 and root not in scores:
            continue
        base = scores.get(root, -table.charge - total * total)
        scores[root] = base + 2 * count * total
    return LikelihoodTable(scores=scores, rounds_elapsed=tally.round_index,
                           charge=table.charge + total * total)


@dataclass(frozen=True)
class Decision:
    accepted: bool
    root: Optional[bytes] = None


CONTINUE = Decision(accepted=False)


def step(table: LikelihoodTable, params: ConsensusParams) -> Decision:
    """Accept the root whose score strictly exceeds the threshold, else
    continue (a score exactly at the threshold continues)."""
    gate = threshold(params)
    root, best = table.leader()
    if root is not None and best > gate:
        return Decision(accepted=True, root=root)
    return CONTINUE


def expected_rounds(params: ConsensusParams, f: float) -> float:
    """Wald approximation of the expected round count at actual Byzantine
    fraction f, for the single-incorrect-root adversary."""
    if f <= 0.0:
        raise DegenerateParams("the approximation needs a non-empty Byzantine side")
    if f > params.f_max:
        raise DegenerateParams("actual fraction above the design fraction")
    beta = params.beta
    mu_h, var_h, mu_b, var_b = params.moments(f)
    numerator = ((1.0 - beta) * math.log((1.0 - beta) / beta)
                 + beta * math.log(beta / (1.0 - beta)))
    drift = (((mu_h - mu_b) ** 2 + var_h - var_b) / (2.0 * var_b)
             + 0.5 * math.log(var_b / var_h))
    return numerator / drift


def solve_q_for_expected_rounds(m_total: int, f_max: float, beta: float,
                                target_rounds: float) -> float:
    """Inclusion probability q at which the design-point expected round
    count equals `target_rounds` (bisection; the count falls as q grows)."""
    lo, hi = 1e-9, 1.0 - 1e-9

    def rounds_at(q: float) -> float:
        return expected_rounds(ConsensusParams(m_total, f_max, q, beta), f_max)

    if rounds_at(hi) > target_rounds:
        raise NoSolution("target below the achievable round count at q -> 1")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rounds_at(mid) > target_rounds:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def one_round_q(m_total: int, f_max: float, beta: float) -> float:
    """Smallest q at which an all-honest first round crosses the threshold.

    With a single root and the expected qM submissions, the round-1 score is
    (qM)^2; bisect for the q where it meets the threshold. The expected set
    size q*M is the headline design figure.
    """
    log_odds = math.log((1.0 - beta) / beta)
    rate = (1.0 - f_max) * f_max / ((1.0 - f_max) - f_max)
    if log_odds <= 0.0 or rate <= 0.0:
        raise NoSolution("degenerate error budget or design fraction")

    def excess(q: float) -> float:
        return q * m_total - 2.0 * log_odds * rate * (1.0 - q)

    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def ns1_size(f_max: float, m_total: int, beta: float) -> int:
    """Execution-set size for the one-shot majority baseline.

    Smallest n whose probability of a Byzantine majority stays below beta,
    estimated by the local-limit form of the Binomial(n, f_max) majority
    tail, exp(-n KL(1/2 || f_max)) * sqrt(2 / (pi n)). Saturates at the pool
    size when no admissible n exists below it.
    """
    if not 0.0 < f_max < 0.5:
        raise DegenerateParams("design Byzantine fraction must lie in (0, 0.5)")
    if not 0.0 < beta < 1.0:
        raise DegenerateParams("error budget must lie in (0, 1)")
    kl = -0.5 * math.log(4.0 * f_max * (1.0 - f_max))
    for n in range(1, m_total + 1):
        if math.exp(-n * kl) * math.sqrt(2.0 / (math.pi * n)) < beta:
            return n
    return m_total
