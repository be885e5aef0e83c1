"""Compose significant directed pairs into multi-condition trajectories."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cohort import FirstDiagnosisSequence, Stratum, first_date_matrix
from .config import PipelineConfig
from .pairstats import PairStats

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Trajectory:
    conditions: tuple[int, ...]
    patient_ids: frozenset[str]

    def __post_init__(self) -> None:
        if len(set(self.conditions)) != len(self.conditions):
            raise ValueError(f"repeated condition in trajectory {self.conditions}")

    @property
    def support(self) -> int:
        return len(self.patient_ids)

    def __len__(self) -> int:
        return len(self.conditions)


def allowed_steps(pairs: Iterable[PairStats]) -> dict[int, set[int]]:
    """Directed adjacency ``a -> {b}`` over significant pairs."""
    succ: dict[int, set[int]] = defaultdict(set)
    for ps in pairs:
        for a, b in ps.allowed_steps():
            succ[a].add(b)
    return succ


def build_candidate_trajectories(pairs: Sequence[PairStats], length: int = 3,
                                 require_all_pairs: bool = False,
                                 ) -> list[tuple[int, ...]]:
    """All sequences of distinct conditions chained by significant pairs.

    Each consecutive step ``(c_i, c_i+1)`` must be a significant pair in its
    preferred direction (either direction when the pair is undirected).
    With ``require_all_pairs`` every ordered pair in the sequence, not just
    the consecutive ones, must be allowed.
    """
    if length < 2:
        raise ValueError("trajectory length must be >= 2")
    succ = allowed_steps(pairs)
    out: list[tuple[int, ...]] = []

    def extend(path: list[int]) -> None:
        if len(path) == length:
            out.append(tuple(path))
            return
        for nxt in sorted(succ.get(path[-1], ())):
            if nxt in path:
                continue
            if require_all_pairs and any(nxt not in succ.get(p, ()) for p in path):
                continue
            path.append(nxt)
            extend(path)
            path.pop()

    for start in sorted(succ):
        extend([start])
    return out


def count_trajectory_support(candidate: Sequence[int],
                             sequences: Mapping[str, FirstDiagnosisSequence],
                             stratum: Stratum | Iterable[str] | None = None,
                             min_gap_days: int = 0) -> Trajectory:
    """Patients whose first diagnoses follow ``candidate`` in strictly
    increasing date order; other conditions may appear in between."""
    if isinstance(stratum, Stratum):
        pids = stratum.patient_ids
    else:
        pids = sequences.keys() if stratum is None else stratum
    step = max(1, min_gap_days)
    matched = []
    for pid in pids:
        first = sequences[pid].first_dates
        try:
            days = [first[c].toordinal() for c in candidate]
        except KeyError:
            continue
        if all(b - a >= step for a, b in zip(days, days[1:])):
            matched.append(pid)
    return Trajectory(tuple(candidate), frozenset(matched))


def dedup_trajectories(trajectories: Iterable[Trajectory], min_traj_patients: int = 10,
                       ) -> list[Trajectory]:
    """Keep the best-supported ordering of each condition set.

    Ties go to the lexicographically smallest sequence.  Sets whose best
    ordering has fewer than ``min_traj_patients`` patients are dropped.
    """
    groups: dict[frozenset[int], list[Trajectory]] = defaultdict(list)
    for t in trajectories:
        groups[frozenset(t.conditions)].append(t)
    kept = []
    for members in groups.values():
        best = min(members, key=lambda t: (-t.support, t.conditions))
        rivals = [t for t in members if t.support == best.support and t is not best]
        if rivals and best.support >= min_traj_patients:
            logger.warning("tie between orderings %s with support %d; keeping %s",
                           sorted([best.conditions] + [t.conditions for t in rivals]),
                           best.support, best.conditions)
        if best.support >= min_traj_patients:
            kept.append(best)
    return sort_trajectories(kept)


def sort_trajectories(trajectories: Iterable[Trajectory]) -> list[Trajectory]:
    return sorted(trajectories, key=lambda t: (-t.support, t.conditions))


def mine_trajectories(stratum: Stratum, sequences: Mapping[str, FirstDiagnosisSequence],
                      pairs: Sequence[PairStats],
                      config: PipelineConfig | None = None) -> list[Trajectory]:
    """Build, count and deduplicate trajectories for one stratum."""
    config = config or PipelineConfig()
    significant = [ps for ps in pairs if ps.significant]
    candidates = build_candidate_trajectories(significant, config.traj_length,
                                              config.require_all_pairs)
    if not candidates:
        return []
    conditions = sorted({c for cand in candidates for c in cand})
    mat = first_date_matrix(sequences, stratum.patient_ids, conditions)
    col = {c: j for j, c in enumerate(conditions)}
    pids = np.array(mat.patient_ids, dtype=object)
    step = max(1, config.traj_min_gap_days)

    counted = []
    for cand in candidates:
        idx = [col[c] for c in cand]
        mask = mat.present[:, idx].all(axis=1)
        days = mat.days[:, idx]
        mask &= (np.diff(days, axis=1) >= step).all(axis=1)
        counted.append(Trajectory(cand, frozenset(pids[mask].tolist())))
    kept = dedup_trajectories(counted, config.min_traj_patients)
    logger.info("stratum %s: %d candidate trajectories, %d retained", stratum.name,
                len(candidates), len(kept))
    return kept
