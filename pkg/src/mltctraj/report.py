"""Per-cluster summaries of trajectory clusters.

System percentages are computed over condition slots (three per
length-3 trajectory) in a cluster; condition percentages over the
cluster's trajectories.  Patient-level figures (mortality, long stays,
age, causes of death) use the unique patients supporting any of the
cluster's trajectories.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date
from typing import Mapping, Sequence

import numpy as np

from .cohort import (SYSTEM_CATEGORIES, Catalog, Cohort, CohortError,
                     FirstDiagnosisSequence, first_diagnosis_sequences, patient_ages)
from .config import PipelineConfig
from .pairstats import PairStats
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

DAYS_PER_YEAR = 365.25


@dataclass
class ClusterReport:
    cluster_label: int
    n_traj: int
    n_patients_total: int
    n_patients_unique: int
    system_distribution: dict[str, float]
    condition_prevalence: dict[int, float]
    n_deaths: int
    mortality_pct: float
    person_years: float
    mortality_rate_per_100py: float
    mean_age: float
    sd_age: float | None
    n_long_stay: int | None = None
    long_stay_pct: float | None = None
    cause_of_death_top5: list[tuple[str, float]] = field(default_factory=list)
    patient_ids: frozenset[str] = frozenset()


def _labels(cluster_result) -> np.ndarray:
    return np.asarray(getattr(cluster_result, "labels", cluster_result))


def cluster_members(labels: Sequence[int], trajectories: Sequence[Trajectory],
                    ) -> dict[int, frozenset[str]]:
    """Unique supporting patients per cluster label."""
    out: dict[int, set[str]] = {}
    for lab, t in zip(labels, trajectories):
        out.setdefault(int(lab), set()).update(t.patient_ids)
    return {k: frozenset(v) for k, v in out.items()}


def _death_in_study(cohort: Cohort, pid: str) -> date | None:
    death = cohort.patients[pid].death_date
    return death if death is not None and death <= cohort.study_end else None


def person_years(cohort: Cohort, patient_ids) -> dict[str, float]:
    """Years from first recorded diagnosis to death or study end."""
    first: dict[str, date] = {}
    wanted = set(patient_ids)
    for ev in cohort.events:
        if ev.patient_id in wanted:
            prev = first.get(ev.patient_id)
            if prev is None or ev.event_date < prev:
                first[ev.patient_id] = ev.event_date
    out = {}
    for pid in sorted(wanted):
        if pid not in first:
            continue
        end = _death_in_study(cohort, pid) or cohort.study_end
        out[pid] = max(0, (end - first[pid]).days) / DAYS_PER_YEAR
    return out


def cause_of_death_top5(cohort: Cohort, cluster_membership: Mapping[int, Sequence[str]],
                        ) -> dict[int, list[tuple[str, float]]]:
    """Five most frequent cause-of-death categories per cluster, as % of deaths.

    Only deceased patients with a recorded cause count.  Ties on the count
    are broken alphabetically.
    """
    out = {}
    for label, pids in cluster_membership.items():
        causes = Counter(cohort.patients[p].cause_of_death_category for p in pids
                         if _death_in_study(cohort, p) is not None
                         and cohort.patients[p].cause_of_death_category)
        total = sum(causes.values())
        ranked = sorted(causes.items(), key=lambda kv: (-kv[1], kv[0]))[:5]
        out[label] = [(cat, 100.0 * n / total) for cat, n in ranked]
    return out


def pair_timing_stats(pair: PairStats | tuple[int, int],
                      sequences: Mapping[str, FirstDiagnosisSequence],
                      patient_ids=None) -> tuple[float, float | None]:
    """Mean and sample SD, in years, of the gap between the two first diagnoses.

    Taken over patients having both conditions, whichever came first.  The
    SD is ``None`` for a single patient.
    """
    c1, c2 = (pair.c1, pair.c2) if isinstance(pair, PairStats) else pair
    pids = sequences.keys() if patient_ids is None else patient_ids
    gaps = []
    for pid in pids:
        seq = sequences.get(pid)
        if seq is None:
            continue
        first = seq.first_dates
        if c1 in first and c2 in first:
            gaps.append(abs((first[c2] - first[c1]).days) / DAYS_PER_YEAR)
    if not gaps:
        raise ValueError(f"no patient has both conditions {c1} and {c2}")
    arr = np.array(gaps)
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else None
    return float(arr.mean()), sd


def cluster_report(cluster_result, trajectories: Sequence[Trajectory], cohort: Cohort,
                   catalog: Catalog | None = None, config: PipelineConfig | None = None,
                   sequences: Mapping[str, FirstDiagnosisSequence] | None = None,
                   ) -> list[ClusterReport]:
    """Summaries for every cluster, largest (by unique patients) first.

    Raises ``CohortError`` if long-stay reporting is enabled but the cohort
    was loaded without hospital stays.
    """
    catalog = catalog or cohort.catalog
    config = config or PipelineConfig()
    labels = _labels(cluster_result)
    if len(labels) != len(trajectories):
        raise ValueError("one cluster label per trajectory required")
    if config.report_long_stay and cohort.stays is None:
        raise CohortError("long hospital stay reporting needs hospital_stays.csv; "
                          "provide it or set report_long_stay = false")
    if sequences is None:
        sequences = first_diagnosis_sequences(cohort)
    ages, _ = patient_ages(cohort, sequences, config)
    members = cluster_members(labels, trajectories)
    causes = cause_of_death_top5(cohort, members)
    long_stayers = None
    if config.report_long_stay:
        long_stayers = {s.patient_id for s in cohort.stays
                        if s.length_days > config.long_stay_days}

    reports = []
    for label in sorted(members):
        trajs = [t for lab, t in zip(labels, trajectories) if int(lab) == label]
        pids = members[label]
        slots = Counter(catalog.category(c) for t in trajs for c in t.conditions)
        n_slots = sum(slots.values())
        system = {cat: 100.0 * slots.get(cat, 0) / n_slots for cat in SYSTEM_CATEGORIES}
        cond_counts = Counter(c for t in trajs for c in set(t.conditions))
        prevalence = {c: 100.0 * n / len(trajs) for c, n in sorted(cond_counts.items())}
        n_unique = len(pids)
        deaths = sum(1 for p in pids if _death_in_study(cohort, p) is not None)
        py = person_years(cohort, pids)
        total_py = math.fsum(py.values())
        age_values = np.array([ages[p] for p in sorted(pids)], dtype=float)
        rep = ClusterReport(
            cluster_label=label,
            n_traj=len(trajs),
            n_patients_total=sum(t.support for t in trajs),
            n_patients_unique=n_unique,
            system_distribution=system,
            condition_prevalence=prevalence,
            n_deaths=deaths,
            mortality_pct=100.0 * deaths / n_unique if n_unique else 0.0,
            person_years=total_py,
            mortality_rate_per_100py=100.0 * deaths / total_py if total_py > 0 else 0.0,
            mean_age=float(age_values.mean()) if n_unique else math.nan,
            sd_age=float(age_values.std(ddof=1)) if n_unique > 1 else None,
            cause_of_death_top5=causes[label],
            patient_ids=pids,
        )
        if long_stayers is not None:
            rep.n_long_stay = len(pids & long_stayers)
            rep.long_stay_pct = 100.0 * rep.n_long_stay / n_unique if n_unique else 0.0
        reports.append(rep)
    reports.sort(key=lambda r: (-r.n_patients_unique, r.cluster_label))
    return reports
