"""Loading, validation and stratification of longitudinal diagnosis data.

A cohort is four CSV files (patients, diagnoses, optional hospital stays
and a condition catalog).  After loading, everything is immutable; the
downstream stages only read from it.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import PipelineConfig

logger = logging.getLogger(__name__)

SYSTEM_CATEGORIES = (
    "circulatory", "digestive", "musculoskeletal", "nervous", "mental",
    "respiratory", "endocrine", "genitourinary", "blood", "ear", "eye",
    "skin", "neoplasms",
)
SEXES = ("male", "female")
AGE_GROUPS = ("under_45", "ge_45")
SOURCES = ("primary", "secondary")

PATIENT_COLUMNS = ("patient_id", "sex", "birth_date", "death_date",
                   "cause_of_death_category", "wimd_quintile", "ethnicity")
DIAGNOSIS_COLUMNS = ("patient_id", "condition_id", "event_date", "source")
STAY_COLUMNS = ("patient_id", "admission_date", "discharge_date")
CATALOG_COLUMNS = ("condition_id", "name", "system_category")

# 40 long-term conditions and their body-system category.
DEFAULT_CONDITIONS = (
    ("Addisons Disease", "endocrine"),
    ("Anaemia", "blood"),
    ("Barretts Oesophagus", "digestive"),
    ("Bronchiectasis", "respiratory"),
    ("Cancer", "neoplasms"),
    ("Cardiac Arrhythmias", "circulatory"),
    ("Cerebral Palsy", "nervous"),
    ("Chronic Airway Diseases", "respiratory"),
    ("Chronic Arthritis", "musculoskeletal"),
    ("Chronic Constipation", "digestive"),
    ("Chronic Diarrhoea", "digestive"),
    ("Chronic Kidney Disease", "genitourinary"),
    ("Chronic Pain Conditions", "musculoskeletal"),
    ("Chronic Pneumonia", "respiratory"),
    ("Cirrhosis", "digestive"),
    ("Coronary Heart Disease", "circulatory"),
    ("Dementia", "mental"),
    ("Diabetes", "endocrine"),
    ("Dysphagia", "digestive"),
    ("Epilepsy", "nervous"),
    ("Heart Failure", "circulatory"),
    ("Hearing Loss", "ear"),
    ("Hypertension", "circulatory"),
    ("Inflammatory Bowel Disease", "digestive"),
    ("Insomnia", "nervous"),
    ("Interstitial Lung Disease", "respiratory"),
    ("Mental Illness", "mental"),
    ("Menopausal And Perimenopausal", "genitourinary"),
    ("Multiple Sclerosis", "nervous"),
    ("Neuropathic Pain", "nervous"),
    ("Osteoporosis", "musculoskeletal"),
    ("Parkinsons", "nervous"),
    ("Peripheral Vascular Disease", "circulatory"),
    ("Polycystic Ovary Syndrome", "endocrine"),
    ("Psoriasis", "skin"),
    ("Reflux Disorders", "digestive"),
    ("Stroke", "nervous"),
    ("Thyroid Disorders", "endocrine"),
    ("Tourette", "mental"),
    ("Visual Impairment", "eye"),
)


class CohortError(ValueError):
    """Raised for missing files, malformed rows or unresolved keys."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionDef:
    condition_id: int
    name: str
    system_category: str

    def __post_init__(self) -> None:
        if self.system_category not in SYSTEM_CATEGORIES:
            raise CohortError(
                f"condition {self.condition_id}: unknown system category "
                f"{self.system_category!r}")


class Catalog(Mapping[int, ConditionDef]):
    """Condition catalog keyed by ``condition_id``."""

    def __init__(self, conditions: Iterable[ConditionDef]):
        self._by_id: dict[int, ConditionDef] = {}
        for cond in conditions:
            if cond.condition_id in self._by_id:
                raise CohortError(f"duplicate condition_id {cond.condition_id}")
            self._by_id[cond.condition_id] = cond
        if len(self._by_id) < 2:
            raise CohortError("catalog needs at least 2 conditions")

    def __getitem__(self, condition_id: int) -> ConditionDef:
        return self._by_id[condition_id]

    def __iter__(self):
        return iter(sorted(self._by_id))

    def __len__(self) -> int:
        return len(self._by_id)

    @property
    def ids(self) -> list[int]:
        return sorted(self._by_id)

    def name(self, condition_id: int) -> str:
        return self._by_id[condition_id].name

    def category(self, condition_id: int) -> str:
        return self._by_id[condition_id].system_category

    def id_for(self, key: int | str) -> int:
        """Resolve a condition by id or (case-insensitive) name."""
        if isinstance(key, int) or (isinstance(key, str) and key.isdigit()):
            cid = int(key)
            if cid in self._by_id:
                return cid
        else:
            wanted = key.strip().lower()
            for cond in self._by_id.values():
                if cond.name.lower() == wanted:
                    return cond.condition_id
        raise CohortError(f"unknown condition {key!r}")


def default_catalog() -> Catalog:
    return Catalog(ConditionDef(i, name, cat)
                   for i, (name, cat) in enumerate(DEFAULT_CONDITIONS, start=1))


@dataclass(frozen=True)
class Patient:
    patient_id: str
    sex: str
    birth_date: date
    death_date: date | None = None
    cause_of_death_category: str | None = None
    wimd_quintile: int | None = None
    ethnicity: str | None = None

    def __post_init__(self) -> None:
        if self.sex not in SEXES:
            raise CohortError(f"patient {self.patient_id}: sex must be male/female")
        if self.death_date is not None and self.death_date < self.birth_date:
            raise CohortError(f"patient {self.patient_id}: death before birth")
        if self.wimd_quintile is not None and not 1 <= self.wimd_quintile <= 5:
            raise CohortError(f"patient {self.patient_id}: wimd_quintile outside 1..5")
        if (self.cause_of_death_category is not None
                and self.cause_of_death_category not in SYSTEM_CATEGORIES):
            raise CohortError(f"patient {self.patient_id}: unknown cause of death "
                              f"category {self.cause_of_death_category!r}")


@dataclass(frozen=True)
class DiagnosisEvent:
    patient_id: str
    condition_id: int
    event_date: date
    source: str = "primary"


@dataclass(frozen=True)
class HospitalStay:
    patient_id: str
    admission_date: date
    discharge_date: date

    @property
    def length_days(self) -> int:
        return (self.discharge_date - self.admission_date).days


@dataclass(frozen=True)
class FirstDiagnosisSequence:
    """First diagnosis date of each condition, in chronological order.

    Ties on the same date are ordered by ``condition_id``; ``tied`` reports
    whether any such tie exists.
    """

    patient_id: str
    entries: tuple[tuple[int, date], ...]

    @property
    def conditions(self) -> tuple[int, ...]:
        return tuple(c for c, _ in self.entries)

    @property
    def first_dates(self) -> dict[int, date]:
        return dict(self.entries)

    @property
    def tied(self) -> bool:
        dates = [d for _, d in self.entries]
        return len(set(dates)) < len(dates)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class Stratum:
    sex: str
    age_group: str
    patient_ids: frozenset[str]
    # patients without events, placed by their age at study end
    flagged: frozenset[str] = frozenset()

    @property
    def name(self) -> str:
        return stratum_name(self.sex, self.age_group)

    def __len__(self) -> int:
        return len(self.patient_ids)


def stratum_name(sex: str, age_group: str) -> str:
    return f"{sex}_{'lt45' if age_group == 'under_45' else 'ge45'}"


STRATUM_NAMES = tuple(stratum_name(s, a) for s in SEXES for a in AGE_GROUPS)


@dataclass(frozen=True)
class Cohort:
    patients: Mapping[str, Patient]
    events: tuple[DiagnosisEvent, ...]
    catalog: Catalog
    stays: tuple[HospitalStay, ...] | None = None
    study_start: date = date(2000, 1, 1)
    study_end: date = date(2021, 12, 31)
    n_dropped_events: int = 0

    def __len__(self) -> int:
        return len(self.patients)

    @property
    def patient_ids(self) -> list[str]:
        return sorted(self.patients)

    def events_by_patient(self) -> dict[str, list[DiagnosisEvent]]:
        grouped: dict[str, list[DiagnosisEvent]] = {pid: [] for pid in self.patients}
        for ev in self.events:
            grouped[ev.patient_id].append(ev)
        return grouped

    def stays_by_patient(self) -> dict[str, list[HospitalStay]]:
        if self.stays is None:
            raise CohortError("cohort has no hospital stays file")
        grouped: dict[str, list[HospitalStay]] = {pid: [] for pid in self.patients}
        for stay in self.stays:
            grouped[stay.patient_id].append(stay)
        return grouped


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def _read_rows(path: Path, columns: Sequence[str]):
    if not path.is_file():
        raise CohortError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(columns):
            raise CohortError(
                f"{path.name}: expected header {','.join(columns)}, got "
                f"{','.join(header) if header else '<empty>'}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise CohortError(f"{path.name}:{lineno}: expected {len(columns)} "
                                  f"fields, got {len(row)}")
            yield lineno, dict(zip(columns, (v.strip() for v in row)))


def _parse_date(value: str, where: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise CohortError(f"{where}: bad date {value!r}") from None


def _optional(value: str) -> str | None:
    return value if value != "" else None


def load_catalog(path: str | Path) -> Catalog:
    path = Path(path)
    conditions = []
    for lineno, row in _read_rows(path, CATALOG_COLUMNS):
        where = f"{path.name}:{lineno}"
        try:
            cid = int(row["condition_id"])
        except ValueError:
            raise CohortError(f"{where}: condition_id must be an integer") from None
        try:
            conditions.append(ConditionDef(cid, row["name"], row["system_category"]))
        except CohortError as exc:
            raise CohortError(f"{where}: {exc}") from None
    try:
        return Catalog(conditions)
    except CohortError as exc:
        raise CohortError(f"{path.name}: {exc}") from None


def load_cohort(patients_path: str | Path, diagnoses_path: str | Path,
                stays_path: str | Path | None, catalog_path: str | Path,
                config: PipelineConfig | None = None) -> Cohort:
    """Load and validate a cohort from its CSV files.

    Diagnosis events outside ``[study_start, study_end]`` are dropped and
    counted in ``Cohort.n_dropped_events``.
    """
    config = config or PipelineConfig()
    catalog = load_catalog(catalog_path)

    patients_path = Path(patients_path)
    patients: dict[str, Patient] = {}
    for lineno, row in _read_rows(patients_path, PATIENT_COLUMNS):
        where = f"{patients_path.name}:{lineno}"
        pid = row["patient_id"]
        if not pid:
            raise CohortError(f"{where}: empty patient_id")
        if pid in patients:
            raise CohortError(f"{where}: duplicate patient_id {pid!r}")
        death = _optional(row["death_date"])
        wimd = _optional(row["wimd_quintile"])
        try:
            patients[pid] = Patient(
                patient_id=pid,
                sex=row["sex"].lower(),
                birth_date=_parse_date(row["birth_date"], where),
                death_date=_parse_date(death, where) if death else None,
                cause_of_death_category=_optional(row["cause_of_death_category"]),
                wimd_quintile=int(wimd) if wimd else None,
                ethnicity=_optional(row["ethnicity"]),
            )
        except ValueError as exc:
            raise CohortError(f"{where}: {exc}") from None

    diagnoses_path = Path(diagnoses_path)
    events = []
    dropped = 0
    for lineno, row in _read_rows(diagnoses_path, DIAGNOSIS_COLUMNS):
        where = f"{diagnoses_path.name}:{lineno}"
        pid = row["patient_id"]
        if pid not in patients:
            raise CohortError(f"{where}: unknown patient_id {pid!r}")
        try:
            cid = int(row["condition_id"])
        except ValueError:
            raise CohortError(f"{where}: condition_id must be an integer") from None
        if cid not in catalog:
            raise CohortError(f"{where}: unknown condition_id {cid}")
        if row["source"] not in SOURCES:
            raise CohortError(f"{where}: source must be one of {SOURCES}")
        when = _parse_date(row["event_date"], where)
        if not config.study_start <= when <= config.study_end:
            dropped += 1
            continue
        events.append(DiagnosisEvent(pid, cid, when, row["source"]))
    if dropped:
        logger.warning("dropped %d diagnosis events outside the study window "
                       "%s..%s", dropped, config.study_start, config.study_end)

    stays = None
    if stays_path is not None:
        stays_path = Path(stays_path)
        stays = []
        for lineno, row in _read_rows(stays_path, STAY_COLUMNS):
            where = f"{stays_path.name}:{lineno}"
            pid = row["patient_id"]
            if pid not in patients:
                raise CohortError(f"{where}: unknown patient_id {pid!r}")
            adm = _parse_date(row["admission_date"], where)
            dis = _parse_date(row["discharge_date"], where)
            if dis < adm:
                raise CohortError(f"{where}: discharge before admission")
            stays.append(HospitalStay(pid, adm, dis))
        stays = tuple(stays)

    return Cohort(patients=patients, events=tuple(events), catalog=catalog,
                  stays=stays, study_start=config.study_start,
                  study_end=config.study_end, n_dropped_events=dropped)


def load_cohort_dir(input_dir: str | Path, config: PipelineConfig | None = None) -> Cohort:
    """Load ``patients.csv``, ``diagnoses.csv``, ``catalog.csv`` and, when
    present, ``hospital_stays.csv`` from one directory."""
    input_dir = Path(input_dir)
    stays = input_dir / "hospital_stays.csv"
    return load_cohort(input_dir / "patients.csv", input_dir / "diagnoses.csv",
                       stays if stays.is_file() else None,
                       input_dir / "catalog.csv", config)


# ---------------------------------------------------------------------------
# Sequences and strata
# ---------------------------------------------------------------------------

def first_diagnosis_sequences(cohort: Cohort) -> dict[str, FirstDiagnosisSequence]:
    """Earliest event date per (patient, condition), across both sources."""
    first: dict[str, dict[int, date]] = {pid: {} for pid in cohort.patients}
    for ev in cohort.events:
        seen = first[ev.patient_id]
        prev = seen.get(ev.condition_id)
        if prev is None or ev.event_date < prev:
            seen[ev.condition_id] = ev.event_date
    out = {}
    for pid in sorted(first):
        entries = sorted(first[pid].items(), key=lambda item: (item[1], item[0]))
        out[pid] = FirstDiagnosisSequence(pid, tuple(entries))
    return out


def age_on(birth: date, when: date) -> int:
    """Age in completed years on ``when``."""
    return when.year - birth.year - ((when.month, when.day) < (birth.month, birth.day))


def anchor_date(seq: FirstDiagnosisSequence | None, config: PipelineConfig,
                ) -> date | None:
    """Date at which a patient's stratification age is measured.

    Returns ``None`` when the anchor needs events the patient does not have.
    """
    if config.age_anchor == "age_at_study_start":
        return config.study_start
    if seq is None or len(seq) == 0:
        return None
    dates = sorted(d for _, d in seq.entries)
    if config.age_anchor == "age_at_first_event":
        return dates[0]
    # even count: the earlier of the two middle dates
    return dates[(len(dates) - 1) // 2]


def patient_ages(cohort: Cohort, sequences: Mapping[str, FirstDiagnosisSequence],
                 config: PipelineConfig | None = None) -> tuple[dict[str, int], set[str]]:
    """Stratification age per patient, plus the set of fallback-flagged ids."""
    config = config or PipelineConfig()
    ages, flagged = {}, set()
    for pid, patient in cohort.patients.items():
        when = anchor_date(sequences.get(pid), config)
        if when is None:
            when = config.study_end
            flagged.add(pid)
        ages[pid] = age_on(patient.birth_date, when)
    return ages, flagged


def stratify(cohort: Cohort, sequences: Mapping[str, FirstDiagnosisSequence] | None = None,
             config: PipelineConfig | None = None,
             age_threshold_years: int | None = None) -> list[Stratum]:
    """Split the cohort into the four sex x age-group strata.

    Order is male <45, male >=45, female <45, female >=45.  A patient is
    ``under_45`` iff their anchor age is strictly below the threshold.
    """
    config = config or PipelineConfig()
    if age_threshold_years is not None:
        config = config.replace(age_threshold=age_threshold_years)
    if sequences is None:
        sequences = first_diagnosis_sequences(cohort)
    ages, flagged = patient_ages(cohort, sequences, config)
    if flagged:
        logger.warning("%d patients without diagnosis events stratified by age at "
                       "study end", len(flagged))
    members: dict[tuple[str, str], set[str]] = defaultdict(set)
    for pid, patient in cohort.patients.items():
        group = "under_45" if ages[pid] < config.age_threshold else "ge_45"
        members[(patient.sex, group)].add(pid)
    return [Stratum(sex, group, frozenset(members[(sex, group)]),
                    frozenset(members[(sex, group)] & flagged))
            for sex in SEXES for group in AGE_GROUPS]


def get_stratum(strata: Sequence[Stratum], name: str) -> Stratum:
    for s in strata:
        if s.name == name:
            return s
    raise KeyError(f"unknown stratum {name!r}; expected one of {STRATUM_NAMES}")


# ---------------------------------------------------------------------------
# Descriptive statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DescriptiveRow:
    group: str
    level: str
    n: int
    mean_ltc: float | None
    sd_ltc: float | None
    mltc_pct: float | None
    physical_mental_pct: float | None
    one_ltc_pct: float | None
    zero_ltc_pct: float | None


@dataclass(frozen=True)
class DescriptiveReport:
    rows: tuple[DescriptiveRow, ...] = field(default_factory=tuple)

    def get(self, group: str, level: str) -> DescriptiveRow:
        for row in self.rows:
            if row.group == group and row.level == level:
                return row
        raise KeyError((group, level))

    def group(self, group: str) -> list[DescriptiveRow]:
        return [r for r in self.rows if r.group == group]


def _summarise(group: str, level: str, counts: Sequence[int],
               physical_mental: Sequence[bool]) -> DescriptiveRow:
    n = len(counts)
    if n == 0:
        return DescriptiveRow(group, level, 0, None, None, None, None, None, None)
    arr = np.asarray(counts, dtype=float)
    sd = None
    if n > 1:
        # counts are integers: take the variance exactly, round once
        total, squares = sum(counts), sum(c * c for c in counts)
        sd = math.sqrt(Fraction(n * squares - total * total, n * (n - 1)))
    return DescriptiveRow(
        group, level, n,
        mean_ltc=float(arr.mean()),
        sd_ltc=sd,
        mltc_pct=100.0 * float(np.sum(arr >= 2)) / n,
        physical_mental_pct=100.0 * sum(physical_mental) / n,
        one_ltc_pct=100.0 * float(np.sum(arr == 1)) / n,
        zero_ltc_pct=100.0 * float(np.sum(arr == 0)) / n,
    )


def descriptive_stats(cohort: Cohort, catalog: Catalog | None = None,
                      config: PipelineConfig | None = None) -> DescriptiveReport:
    """LTC burden summaries overall and by sex, age group, ethnicity and WIMD.

    Per subgroup: N, mean and sample SD of the number of distinct catalog
    conditions, % with two or more (MLTC), and % with at least one mental
    and one non-mental condition.  Missing ethnicity/WIMD form their own
    ``missing`` level so levels always sum to the total N.
    """
    catalog = catalog or cohort.catalog
    config = config or PipelineConfig()
    sequences = first_diagnosis_sequences(cohort)
    ages, _ = patient_ages(cohort, sequences, config)

    per_patient = {}
    for pid, seq in sequences.items():
        cats = [catalog.category(c) for c in seq.conditions]
        mental = any(c == "mental" for c in cats)
        physical = any(c != "mental" for c in cats)
        per_patient[pid] = (len(seq), mental and physical)

    def rows_for(group, keyfunc, levels):
        buckets = {lvl: [] for lvl in levels}
        for pid in sorted(cohort.patients):
            lvl = keyfunc(cohort.patients[pid])
            buckets.setdefault(lvl, []).append(per_patient[pid])
        return [_summarise(group, lvl, [c for c, _ in vals], [pm for _, pm in vals])
                for lvl, vals in buckets.items()]

    rows = rows_for("all", lambda p: "all", ["all"])
    rows += rows_for("sex", lambda p: p.sex, list(SEXES))
    rows += rows_for(
        "age_group",
        lambda p: "under_45" if ages[p.patient_id] < config.age_threshold else "ge_45",
        list(AGE_GROUPS))
    ethnicities = sorted({p.ethnicity for p in cohort.patients.values()
                          if p.ethnicity is not None})
    rows += rows_for("ethnicity", lambda p: p.ethnicity or "missing",
                     ethnicities + ["missing"])
    rows += rows_for("wimd_quintile",
                     lambda p: str(p.wimd_quintile) if p.wimd_quintile else "missing",
                     [str(q) for q in range(1, 6)] + ["missing"])
    return DescriptiveReport(tuple(rows))


@dataclass(frozen=True)
class FirstDateMatrix:
    """Dense patient x condition view of first diagnosis days.

    ``days`` holds proleptic ordinals (``date.toordinal``); cells where the
    patient never had the condition are 0 and ``present`` is False.
    """

    patient_ids: tuple[str, ...]
    condition_ids: tuple[int, ...]
    days: np.ndarray
    present: np.ndarray

    def column(self, condition_id: int) -> int:
        return self.condition_ids.index(condition_id)


def first_date_matrix(sequences: Mapping[str, FirstDiagnosisSequence],
                      patient_ids: Iterable[str],
                      condition_ids: Iterable[int]) -> FirstDateMatrix:
    pids = tuple(sorted(patient_ids))
    cids = tuple(sorted(condition_ids))
    col = {c: j for j, c in enumerate(cids)}
    days = np.zeros((len(pids), len(cids)), dtype=np.int64)
    present = np.zeros((len(pids), len(cids)), dtype=bool)
    for i, pid in enumerate(pids):
        seq = sequences.get(pid)
        if seq is None:
            continue
        for cid, when in seq.entries:
            j = col.get(cid)
            if j is not None:
                days[i, j] = when.toordinal()
                present[i, j] = True
    return FirstDateMatrix(pids, cids, days, present)
