"""Seeded synthetic cohorts with planted trajectory archetypes.

Patients drawn for an archetype receive its conditions in order, separated
by normally distributed gaps.  With probability ``1 - penetrance`` one
condition of the sequence is left out.  On top of that come per-condition
background diagnoses, a Poisson number of random extra conditions, repeat
events, demographics, deaths and hospital stays.

All randomness comes from one ``numpy.random.Generator`` (PCG64) seeded
with ``SynthSpec.seed``, consumed in a fixed order, so a spec always
produces the same records.  A ground-truth ``truth.csv`` records which
archetype and planted cluster each patient was drawn for.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import tomli

from .cohort import (CATALOG_COLUMNS, DIAGNOSIS_COLUMNS, PATIENT_COLUMNS,
                     STAY_COLUMNS, SYSTEM_CATEGORIES, Catalog, default_catalog,
                     load_catalog)

TRUTH_COLUMNS = ("patient_id", "archetype_id", "planted_cluster", "penetrant")


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class ArchetypeSpec:
    conditions: tuple[int, ...]
    mean_gap_days: float
    sd_gap_days: float
    penetrance: float
    member_count: int
    cluster: str = "cluster0"

    def __post_init__(self) -> None:
        if len(self.conditions) < 3:
            raise SynthSpecError("an archetype needs at least 3 conditions")
        if len(set(self.conditions)) != len(self.conditions):
            raise SynthSpecError(f"archetype repeats a condition: {self.conditions}")
        if not 0.0 < self.penetrance <= 1.0:
            raise SynthSpecError("penetrance must lie in (0, 1]")
        if self.mean_gap_days <= 0 or self.sd_gap_days < 0:
            raise SynthSpecError("gaps must be positive")
        if self.member_count < 0:
            raise SynthSpecError("member_count must be non-negative")


@dataclass(frozen=True)
class Demographics:
    male_fraction: float = 0.5
    birth_year_min: int = 1935
    birth_year_max: int = 1982
    wimd_missing: float = 0.05
    ethnicity: Mapping[str, float] = field(
        default_factory=lambda: {"White": 0.93, "Asian": 0.03, "Black": 0.02,
                                 "Mixed": 0.02})
    ethnicity_missing: float = 0.05


@dataclass(frozen=True)
class Mortality:
    death_probability: float = 0.3
    cause_weights: Mapping[str, float] = field(
        default_factory=lambda: {"circulatory": 0.3, "respiratory": 0.25,
                                 "nervous": 0.15, "neoplasms": 0.12,
                                 "digestive": 0.1, "mental": 0.08})


@dataclass(frozen=True)
class Stays:
    rate: float = 1.5
    mean_length_days: float = 5.0


@dataclass(frozen=True)
class SynthSpec:
    archetypes: tuple[ArchetypeSpec, ...]
    seed: int
    background_prevalence: Mapping[int, float] = field(default_factory=dict)
    noise_rate: float = 0.0
    n_background: int = 0
    repeat_rate: float = 0.5
    secondary_fraction: float = 0.3
    study_start: date = date(2000, 1, 1)
    study_end: date = date(2021, 12, 31)
    demographics: Demographics = field(default_factory=Demographics)
    mortality: Mortality = field(default_factory=Mortality)
    stays: Stays = field(default_factory=Stays)
    catalog: Catalog = field(default_factory=default_catalog)

    def __post_init__(self) -> None:
        if self.seed is None:
            raise SynthSpecError("seed is mandatory")
        for cid, p in self.background_prevalence.items():
            if cid not in self.catalog:
                raise SynthSpecError(f"background prevalence for unknown condition {cid}")
            _check_prob(f"background prevalence of {cid}", p)
        for arch in self.archetypes:
            for cid in arch.conditions:
                if cid not in self.catalog:
                    raise SynthSpecError(f"archetype references unknown condition {cid}")
        for name in ("secondary_fraction",):
            _check_prob(name, getattr(self, name))
        if self.noise_rate < 0 or self.repeat_rate < 0:
            raise SynthSpecError("rates must be non-negative")
        d = self.demographics
        _check_prob("male_fraction", d.male_fraction)
        _check_prob("wimd_missing", d.wimd_missing)
        _check_prob("ethnicity_missing", d.ethnicity_missing)
        if d.birth_year_min > d.birth_year_max:
            raise SynthSpecError("birth_year_min > birth_year_max")
        if date(d.birth_year_max, 12, 31) >= self.study_start:
            raise SynthSpecError("patients must be born before the study starts")
        _check_prob("death_probability", self.mortality.death_probability)
        for cat in self.mortality.cause_weights:
            if cat not in SYSTEM_CATEGORIES:
                raise SynthSpecError(f"unknown cause of death category {cat!r}")
        window = (self.study_end - self.study_start).days
        for arch in self.archetypes:
            if arch.mean_gap_days * (len(arch.conditions) - 1) >= window:
                raise SynthSpecError(f"archetype {arch.conditions} does not fit the "
                                     "study window")

    @property
    def clusters(self) -> list[str]:
        return list(dict.fromkeys(a.cluster for a in self.archetypes))

    @property
    def n_patients(self) -> int:
        return self.n_background + sum(a.member_count for a in self.archetypes)


def _check_prob(name: str, p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise SynthSpecError(f"{name} must lie in [0, 1], got {p}")


# ---------------------------------------------------------------------------
# Spec files
# ---------------------------------------------------------------------------

def spec_from_dict(data: Mapping[str, Any], base_dir: Path | None = None) -> SynthSpec:
    """Build a :class:`SynthSpec` from parsed TOML.

    Conditions may be given by id or by catalog name.  Archetypes live in
    ``[[clusters]]`` tables, each with its own ``[[clusters.archetypes]]``.
    """
    data = dict(data)
    catalog = default_catalog()
    if "catalog" in data:
        path = Path(data.pop("catalog"))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        catalog = load_catalog(path)

    archetypes = []
    for i, cl in enumerate(data.pop("clusters", [])):
        cl = dict(cl)
        name = str(cl.pop("name", f"cluster{i}"))
        for arch in cl.pop("archetypes", []):
            arch = dict(arch)
            conds = tuple(catalog.id_for(c) for c in arch.pop("conditions"))
            try:
                archetypes.append(ArchetypeSpec(conditions=conds, cluster=name, **arch))
            except TypeError as exc:
                raise SynthSpecError(f"archetype in cluster {name!r}: {exc}") from None
        if cl:
            raise SynthSpecError(f"unknown keys in cluster {name!r}: {sorted(cl)}")

    prevalence = {catalog.id_for(k): float(v)
                  for k, v in dict(data.pop("background_prevalence", {})).items()}
    sections = {}
    for key, kind in (("demographics", Demographics), ("mortality", Mortality),
                      ("stays", Stays)):
        if key in data:
            try:
                sections[key] = kind(**data.pop(key))
            except TypeError as exc:
                raise SynthSpecError(f"[{key}]: {exc}") from None
    for key in ("study_start", "study_end"):
        if key in data and isinstance(data[key], str):
            data[key] = date.fromisoformat(data[key])
    if "seed" not in data:
        raise SynthSpecError("seed is mandatory")
    try:
        return SynthSpec(archetypes=tuple(archetypes), background_prevalence=prevalence,
                         catalog=catalog, **sections, **data)
    except TypeError as exc:
        raise SynthSpecError(str(exc)) from None


def load_synth_spec(path: str | Path) -> SynthSpec:
    path = Path(path)
    with path.open("rb") as fh:
        return spec_from_dict(tomli.load(fh), base_dir=path.parent)


def planted_two_group_spec(seed: int = 2024, members_per_archetype: int = 250,
                           n_background: int = 500, penetrance: float = 0.8,
                           noise_rate: float = 0.2,
                           background_rate: float = 0.05) -> SynthSpec:
    """Two planted groups of five archetypes over disjoint condition pools.

    Within a group the archetypes share conditions, so each group's
    trajectory network is connected while the two groups never touch.
    Conditions outside both pools get ``background_rate`` prevalence.
    """
    catalog = default_catalog()
    pools = {
        "cardiometabolic": ["Hypertension", "Diabetes", "Coronary Heart Disease",
                            "Cardiac Arrhythmias", "Chronic Kidney Disease",
                            "Heart Failure", "Stroke", "Peripheral Vascular Disease"],
        "neuro_digestive": ["Epilepsy", "Mental Illness", "Reflux Disorders",
                            "Chronic Constipation", "Dysphagia", "Insomnia",
                            "Osteoporosis", "Neuropathic Pain"],
    }
    # increasing index triples keep every pool consistently ordered; no
    # condition is used by more than two archetypes
    patterns = [(0, 1, 2), (1, 3, 4), (0, 3, 5), (2, 6, 7), (4, 5, 6)]
    archetypes = []
    used = set()
    for cluster, names in pools.items():
        ids = [catalog.id_for(n) for n in names]
        used.update(ids)
        for pat in patterns:
            archetypes.append(ArchetypeSpec(
                conditions=tuple(ids[i] for i in pat), mean_gap_days=700.0,
                sd_gap_days=250.0, penetrance=penetrance,
                member_count=members_per_archetype, cluster=cluster))
    prevalence = {cid: background_rate for cid in catalog.ids if cid not in used}
    return SynthSpec(archetypes=tuple(archetypes), seed=seed,
                     background_prevalence=prevalence, noise_rate=noise_rate,
                     n_background=n_background, catalog=catalog,
                     demographics=Demographics(birth_year_min=1945, birth_year_max=1990))


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass
class SynthRecords:
    patients: list[tuple]
    diagnoses: list[tuple]
    stays: list[tuple]
    truth: list[tuple]
    catalog: Catalog


def _uniform_date(rng: np.random.Generator, lo: date, hi: date) -> date:
    span = (hi - lo).days
    return lo + timedelta(days=int(rng.integers(0, span + 1))) if span > 0 else lo


def _weighted_choice(rng: np.random.Generator, weights: Mapping[str, float]) -> str:
    keys = sorted(weights)
    w = np.array([weights[k] for k in keys], dtype=float)
    return keys[int(rng.choice(len(keys), p=w / w.sum()))]


def _fmt(d: date | None) -> str:
    return d.isoformat() if d is not None else ""


def generate_records(spec: SynthSpec) -> SynthRecords:
    rng = np.random.default_rng(spec.seed)
    start, end = spec.study_start, spec.study_end
    catalog = spec.catalog
    all_ids = catalog.ids
    demo, mort = spec.demographics, spec.mortality

    assignments: list[tuple[int | None, ArchetypeSpec | None]] = []
    for idx, arch in enumerate(spec.archetypes):
        assignments += [(idx, arch)] * arch.member_count
    assignments += [(None, None)] * spec.n_background
    width = max(5, len(str(len(assignments))))

    patients, diagnoses, stays, truth = [], [], [], []
    for num, (arch_idx, arch) in enumerate(assignments, start=1):
        pid = f"P{num:0{width}d}"
        sex = "male" if rng.random() < demo.male_fraction else "female"
        birth = _uniform_date(rng, date(demo.birth_year_min, 1, 1),
                              date(demo.birth_year_max, 12, 31))
        first: dict[int, date] = {}
        penetrant = ""
        if arch is not None:
            hops = len(arch.conditions) - 1
            gaps = [max(1, int(round(rng.normal(arch.mean_gap_days, arch.sd_gap_days))))
                    for _ in range(hops)]
            window = (end - start).days
            while sum(gaps) > window:
                gaps = [max(1, g // 2) for g in gaps]
            t0 = _uniform_date(rng, start, end - timedelta(days=sum(gaps)))
            dates = [t0]
            for g in gaps:
                dates.append(dates[-1] + timedelta(days=g))
            conds = list(arch.conditions)
            fires = bool(rng.random() < arch.penetrance)
            penetrant = "1" if fires else "0"
            if not fires:
                drop = int(rng.integers(len(conds)))
                del conds[drop], dates[drop]
            first.update(zip(conds, dates))
        for cid in sorted(spec.background_prevalence):
            hit = rng.random() < spec.background_prevalence[cid]
            if hit and cid not in first:
                first[cid] = _uniform_date(rng, start, end)
        n_noise = int(rng.poisson(spec.noise_rate)) if spec.noise_rate > 0 else 0
        if n_noise:
            free = [c for c in all_ids if c not in first]
            picks = rng.choice(len(free), size=min(n_noise, len(free)), replace=False)
            for j in sorted(int(p) for p in picks):
                first[free[j]] = _uniform_date(rng, start, end)

        events = []
        for cid in sorted(first):
            when = first[cid]
            extra = int(rng.poisson(spec.repeat_rate)) if spec.repeat_rate > 0 else 0
            for d in [when] + [_uniform_date(rng, when, end) for _ in range(extra)]:
                src = "secondary" if rng.random() < spec.secondary_fraction else "primary"
                events.append((pid, cid, d, src))
        events.sort(key=lambda e: (e[2], e[1], e[3]))
        diagnoses += [(p, str(c), _fmt(d), s) for p, c, d, s in events]

        death = cause = None
        if rng.random() < mort.death_probability:
            last = max(first.values()) if first else start
            if last < end:
                death = _uniform_date(rng, last + timedelta(days=1), end)
                cause = _weighted_choice(rng, mort.cause_weights)
        wimd = "" if rng.random() < demo.wimd_missing else str(int(rng.integers(1, 6)))
        eth = ("" if rng.random() < demo.ethnicity_missing or not demo.ethnicity
               else _weighted_choice(rng, demo.ethnicity))
        patients.append((pid, sex, _fmt(birth), _fmt(death), cause or "", wimd, eth))

        n_stays = int(rng.poisson(spec.stays.rate)) if spec.stays.rate > 0 else 0
        for _ in range(n_stays):
            adm = _uniform_date(rng, start, death or end)
            length = int(rng.poisson(spec.stays.mean_length_days))
            stays.append((pid, _fmt(adm), _fmt(adm + timedelta(days=length))))

        truth.append((pid, "" if arch_idx is None else str(arch_idx),
                      "" if arch is None else arch.cluster, penetrant))
    return SynthRecords(patients, diagnoses, stays, truth, catalog)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    tmp = path.with_name(path.name + ".partial")
    with tmp.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    tmp.replace(path)


def generate_cohort(spec: SynthSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write ``patients.csv``, ``diagnoses.csv``, ``hospital_stays.csv``,
    ``catalog.csv`` and ``truth.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = generate_records(spec)
    catalog_rows = [(c, rec.catalog.name(c), rec.catalog.category(c))
                    for c in rec.catalog.ids]
    files = {
        "catalog": (out / "catalog.csv", CATALOG_COLUMNS, catalog_rows),
        "patients": (out / "patients.csv", PATIENT_COLUMNS, rec.patients),
        "diagnoses": (out / "diagnoses.csv", DIAGNOSIS_COLUMNS, rec.diagnoses),
        "hospital_stays": (out / "hospital_stays.csv", STAY_COLUMNS, rec.stays),
        "truth": (out / "truth.csv", TRUTH_COLUMNS, rec.truth),
    }
    for path, header, rows in files.values():
        _write_csv(path, header, rows)
    return {name: path for name, (path, _, _) in files.items()}


def load_truth(path: str | Path) -> dict[str, tuple[int | None, str | None]]:
    """``patient_id -> (archetype index, planted cluster)`` from ``truth.csv``."""
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            arch = int(row["archetype_id"]) if row["archetype_id"] else None
            out[row["patient_id"]] = (arch, row["planted_cluster"] or None)
    return out


def planted_trajectory_labels(member_sets: Sequence[frozenset[str] | set[str]],
                              truth: Mapping[str, tuple[int | None, str | None]],
                              ) -> list[str | None]:
    """Majority planted cluster among each trajectory's supporting patients.

    Background patients are ignored; a trajectory supported only by them
    gets ``None``.  Majority ties go to the alphabetically first cluster.
    """
    labels = []
    for members in member_sets:
        counts = Counter(truth[p][1] for p in members if truth[p][1] is not None)
        if not counts:
            labels.append(None)
            continue
        top = max(counts.values())
        labels.append(min(c for c, v in counts.items() if v == top))
    return labels


# ---------------------------------------------------------------------------
# Partition agreement
# ---------------------------------------------------------------------------

def _comb2(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sum(x * (x - 1) / 2.0))


def adjusted_rand_index(labels_a: Sequence, labels_b: Sequence) -> float:
    """Pair-counting adjusted Rand index (Hubert & Arabie).

    Returns 1.0 in the degenerate case where the expected and maximum index
    coincide (e.g. both labelings put everything in one cluster).
    """
    a, b = list(labels_a), list(labels_b)
    if len(a) != len(b):
        raise ValueError(f"labelings differ in length ({len(a)} vs {len(b)})")
    if len(a) < 2:
        raise ValueError("need at least 2 labelled items")
    _, ia = np.unique(np.array(a, dtype=object).astype(str), return_inverse=True)
    _, ib = np.unique(np.array(b, dtype=object).astype(str), return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    index = _comb2(table)
    sum_a = _comb2(table.sum(axis=1))
    sum_b = _comb2(table.sum(axis=0))
    expected = sum_a * sum_b / _comb2(len(a))
    max_index = (sum_a + sum_b) / 2.0
    if math.isclose(max_index, expected, rel_tol=0.0, abs_tol=1e-12):
        return 1.0
    return (index - expected) / (max_index - expected)
