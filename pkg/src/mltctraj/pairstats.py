"""Pairwise condition association and temporal direction tests.

For every qualifying pair of conditions in a stratum we run a two-sided
Fisher exact test on the 2x2 co-occurrence table, Bonferroni-correct the
p-values over the pairs tested in that stratum, and, for the significant
ones, an exact binomial test on how often one condition was first
diagnosed before the other.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .cohort import FirstDiagnosisSequence, Stratum, first_date_matrix
from .config import PipelineConfig

logger = logging.getLogger(__name__)

FORWARD, BACKWARD, UNDIRECTED = "forward", "backward", "undirected"

# relative slack when comparing point probabilities of tables
_FISHER_RTOL = 1e-12


@dataclass(frozen=True)
class ContingencyTable:
    """Patient counts: both conditions, only the first, only the second, neither."""

    n11: int
    n10: int
    n01: int
    n00: int

    def __post_init__(self) -> None:
        if min(self.n11, self.n10, self.n01, self.n00) < 0:
            raise ValueError(f"negative cell in {self}")

    @property
    def total(self) -> int:
        return self.n11 + self.n10 + self.n01 + self.n00

    def as_array(self) -> np.ndarray:
        return np.array([[self.n11, self.n10], [self.n01, self.n00]])


@dataclass(frozen=True)
class PairStats:
    """Test results for one condition pair, ``c1 < c2``.

    ``n_fwd`` counts patients whose first ``c1`` precedes first ``c2`` by at
    least the minimum separation, ``n_bwd`` the reverse.  ``binomial_p``
    and ``direction`` are ``None`` for pairs that failed the association
    test, since the direction test is only run on significant pairs.
    """

    c1: int
    c2: int
    table: ContingencyTable
    fisher_p: float
    adjusted_p: float
    significant: bool
    n_fwd: int
    n_bwd: int
    binomial_p: float | None = None
    direction: str | None = None

    @property
    def n11(self) -> int:
        return self.table.n11

    def allowed_steps(self) -> list[tuple[int, int]]:
        """Orientations this pair may be traversed in when composing trajectories."""
        if not self.significant or self.direction is None:
            return []
        if self.direction == FORWARD:
            return [(self.c1, self.c2)]
        if self.direction == BACKWARD:
            return [(self.c2, self.c1)]
        return [(self.c1, self.c2), (self.c2, self.c1)]


# ---------------------------------------------------------------------------
# Exact tests
# ---------------------------------------------------------------------------

def _hypergeom_weights(n: int, r1: int, c1: int) -> tuple[int, list[float]]:
    """Unnormalised hypergeometric probabilities over the support of ``n11``.

    Built from the mode outwards with the ratio recurrence, which keeps the
    relative error at a few ulps per step (much better than lgamma
    differences for large ``n``).
    """
    lo = max(0, r1 + c1 - n)
    hi = min(r1, c1)
    size = hi - lo + 1
    mode = min(max((r1 + 1) * (c1 + 1) // (n + 2), lo), hi)
    w = [0.0] * size
    w[mode - lo] = 1.0
    base = n - r1 - c1
    for x in range(mode, hi):
        w[x + 1 - lo] = w[x - lo] * ((r1 - x) * (c1 - x)) / ((x + 1) * (base + x + 1))
    for x in range(mode, lo, -1):
        w[x - 1 - lo] = w[x - lo] * (x * (base + x)) / ((r1 - x + 1) * (c1 - x + 1))
    return lo, w


def fisher_exact_two_sided(table: ContingencyTable | Sequence[int]) -> float:
    """Two-sided Fisher exact test p-value.

    Sums the probabilities of all tables with the observed margins whose
    point probability does not exceed that of the observed table.

    Parameters
    ----------
    table : ContingencyTable or sequence of 4 ints
        ``(n11, n10, n01, n00)``.

    Returns
    -------
    float
        p-value in [0, 1].
    """
    if not isinstance(table, ContingencyTable):
        table = ContingencyTable(*(int(v) for v in table))
    n = table.total
    if n == 0:
        raise ValueError("Fisher test on an all-zero table")
    r1 = table.n11 + table.n10
    c1 = table.n11 + table.n01
    lo, w = _hypergeom_weights(n, r1, c1)
    observed = w[table.n11 - lo] * (1.0 + _FISHER_RTOL)
    total = math.fsum(w)
    tail = math.fsum(v for v in w if v <= observed)
    return min(1.0, tail / total)


def bonferroni_adjust(p_values: Sequence[float], alpha: float = 0.001,
                      ) -> list[tuple[float, bool]]:
    """Bonferroni-adjusted p-values and significance flags (``adjusted < alpha``)."""
    m = len(p_values)
    out = []
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p-value outside [0, 1]: {p}")
        adj = min(1.0, p * m)
        out.append((adj, adj < alpha))
    return out


def _upper_tail(n: int, k: int) -> Fraction:
    """P(X >= k) for X ~ Binomial(n, 1/2), exactly."""
    term = math.comb(n, k)
    acc = 0
    for i in range(k, n + 1):
        acc += term
        term = term * (n - i) // (i + 1)
    return Fraction(acc, 2 ** n)


def binomial_direction_test(n_fwd: int, n_bwd: int, direction_alpha: float = 0.05,
                            alternative: str = "two_sided") -> tuple[float, str]:
    """Exact binomial test of ordered counts against p = 0.5.

    The two-sided p-value is the doubled upper tail at ``max(n_fwd, n_bwd)``,
    capped at 1; ``alternative="one_sided"`` returns the undoubled tail.
    The direction goes to the majority order when ``p < direction_alpha``.
    """
    n = n_fwd + n_bwd
    if n_fwd < 0 or n_bwd < 0 or n == 0:
        raise ValueError("binomial direction test needs at least one ordered patient")
    tail = _upper_tail(n, max(n_fwd, n_bwd))
    if alternative == "two_sided":
        p = float(min(Fraction(1), 2 * tail))
    elif alternative == "one_sided":
        p = float(tail)
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    if p < direction_alpha and n_fwd != n_bwd:
        return p, FORWARD if n_fwd > n_bwd else BACKWARD
    return p, UNDIRECTED


# ---------------------------------------------------------------------------
# Stratum-level orchestration
# ---------------------------------------------------------------------------

def _pair_counts(days: np.ndarray, present: np.ndarray, i: int, j: int,
                 min_separation_days: int) -> tuple[np.ndarray, int, int]:
    both = present[:, i] & present[:, j]
    gap = days[:, j] - days[:, i]
    sep = max(1, min_separation_days)
    n_fwd = int(np.count_nonzero(both & (gap >= sep)))
    n_bwd = int(np.count_nonzero(both & (gap <= -sep)))
    return both, n_fwd, n_bwd


def enumerate_candidate_pairs(stratum: Stratum,
                              sequences: Mapping[str, FirstDiagnosisSequence],
                              min_pair_patients: int = 10,
                              min_separation_days: int = 183) -> list[tuple[int, int]]:
    """Pairs with at least ``min_pair_patients`` patients having both
    conditions first-diagnosed at least ``min_separation_days`` apart."""
    conditions = sorted({c for pid in stratum.patient_ids
                         for c in sequences[pid].conditions})
    mat = first_date_matrix(sequences, stratum.patient_ids, conditions)
    out = []
    for i, j in combinations(range(len(conditions)), 2):
        _, n_fwd, n_bwd = _pair_counts(mat.days, mat.present, i, j, min_separation_days)
        if n_fwd + n_bwd >= min_pair_patients:
            out.append((conditions[i], conditions[j]))
    return out


def significant_pairs(stratum: Stratum, sequences: Mapping[str, FirstDiagnosisSequence],
                      config: PipelineConfig | None = None) -> list[PairStats]:
    """Test every candidate pair of a stratum.

    Returns all tested pairs (not only the significant ones) sorted by
    ``n11`` descending, then by ``(c1, c2)``.  Filter on ``significant``
    for the pairs that feed trajectory building.

    With ``config.strict_table`` the 2x2 table treats patients who have
    both conditions within the minimum separation as not co-affected: they
    are dropped from the table altogether, so its total is the stratum size
    minus those patients.
    """
    config = config or PipelineConfig()
    if len(stratum) == 0:
        raise ValueError(f"stratum {stratum.name} is empty")
    candidates = enumerate_candidate_pairs(stratum, sequences, config.min_pair_patients,
                                           config.min_separation_days)
    conditions = sorted({c for pair in candidates for c in pair})
    mat = first_date_matrix(sequences, stratum.patient_ids, conditions)
    col = {c: j for j, c in enumerate(conditions)}
    n_total = len(mat.patient_ids)

    rows = []
    for a, b in candidates:
        i, j = col[a], col[b]
        both, n_fwd, n_bwd = _pair_counts(mat.days, mat.present, i, j,
                                          config.min_separation_days)
        has_a, has_b = mat.present[:, i], mat.present[:, j]
        n11 = int(np.count_nonzero(both))
        n10 = int(np.count_nonzero(has_a & ~has_b))
        n01 = int(np.count_nonzero(~has_a & has_b))
        n00 = n_total - n11 - n10 - n01
        if config.strict_table:
            n11 = n_fwd + n_bwd
        table = ContingencyTable(n11, n10, n01, n00)
        rows.append((a, b, table, fisher_exact_two_sided(table), n_fwd, n_bwd))

    adjusted = bonferroni_adjust([r[3] for r in rows], config.alpha)
    out = []
    for (a, b, table, p, n_fwd, n_bwd), (adj, sig) in zip(rows, adjusted):
        binom_p = direction = None
        if sig:
            binom_p, direction = binomial_direction_test(
                n_fwd, n_bwd, config.direction_alpha, config.direction_test)
        out.append(PairStats(a, b, table, p, adj, sig, n_fwd, n_bwd, binom_p, direction))
    out.sort(key=lambda ps: (-ps.n11, ps.c1, ps.c2))
    logger.info("stratum %s: %d candidate pairs, %d significant", stratum.name,
                len(out), sum(ps.significant for ps in out))
    return out
