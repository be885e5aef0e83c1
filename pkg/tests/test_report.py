import random
import statistics
from datetime import date, timedelta

import pytest

from mltctraj.cohort import (Cohort, CohortError, DiagnosisEvent, FirstDiagnosisSequence,
                             HospitalStay, Patient, default_catalog)
from mltctraj.config import PipelineConfig
from mltctraj.report import (DAYS_PER_YEAR, cause_of_death_top5, cluster_report,
                             pair_timing_stats, person_years)
from mltctraj.trajectory import Trajectory

EPILEPSY, INSOMNIA, REFLUX, HYPERTENSION, CKD, DIABETES = 20, 25, 36, 23, 12, 18


def d(s):
    return date.fromisoformat(s)


def fixture_cohort(stays=True):
    pats = [
        Patient("a", "male", d("1980-01-01"), d("2015-01-01"), "circulatory"),
        Patient("b", "male", d("1975-06-01"), d("2018-06-01"), "nervous"),
        Patient("c", "female", d("1970-01-01")),
        Patient("e", "female", d("1960-01-01"), d("2020-01-01"), "circulatory"),
        Patient("f", "male", d("1950-01-01")),
    ]
    ev = [DiagnosisEvent("a", EPILEPSY, d("2010-01-01")),
          DiagnosisEvent("a", INSOMNIA, d("2011-01-01")),
          DiagnosisEvent("a", REFLUX, d("2012-01-01")),
          DiagnosisEvent("b", EPILEPSY, d("2005-01-01")),
          DiagnosisEvent("b", INSOMNIA, d("2006-01-01")),
          DiagnosisEvent("b", REFLUX, d("2008-01-01")),
          DiagnosisEvent("c", EPILEPSY, d("2009-01-01")),
          DiagnosisEvent("c", INSOMNIA, d("2012-01-01")),
          DiagnosisEvent("c", REFLUX, d("2013-01-01")),
          DiagnosisEvent("e", HYPERTENSION, d("2001-01-01")),
          DiagnosisEvent("e", CKD, d("2004-01-01")),
          DiagnosisEvent("e", DIABETES, d("2007-01-01")),
          DiagnosisEvent("f", HYPERTENSION, d("2002-01-01")),
          DiagnosisEvent("f", CKD, d("2003-01-01")),
          DiagnosisEvent("f", DIABETES, d("2004-01-01"))]
    st = (HospitalStay("a", d("2012-03-01"), d("2012-03-06")),    # 5 days: long
          HospitalStay("c", d("2014-01-01"), d("2014-01-05")),    # 4 days: not long
          HospitalStay("f", d("2010-01-01"), d("2010-01-20")))
    return Cohort({p.patient_id: p for p in pats}, tuple(ev), default_catalog(),
                  st if stays else None)


TRAJS = [Trajectory((EPILEPSY, INSOMNIA, REFLUX), frozenset("abc")),
         Trajectory((EPILEPSY, REFLUX, INSOMNIA), frozenset("ab")),
         Trajectory((HYPERTENSION, CKD, DIABETES), frozenset("ef"))]


def test_report_hand_fixture():
    reports = cluster_report([0, 0, 1], TRAJS, fixture_cohort())
    nervous, cardio = reports
    assert nervous.cluster_label == 0 and cardio.cluster_label == 1
    assert (nervous.n_traj, nervous.n_patients_total, nervous.n_patients_unique) == (2, 5, 3)
    assert nervous.system_distribution["nervous"] == pytest.approx(400 / 6)
    assert nervous.system_distribution["digestive"] == pytest.approx(200 / 6)
    assert nervous.condition_prevalence == {EPILEPSY: 100.0, INSOMNIA: 100.0, REFLUX: 100.0}
    assert nervous.n_deaths == 2
    assert nervous.mortality_pct == pytest.approx(200 / 3)
    py = ((d("2015-01-01") - d("2010-01-01")).days + (d("2018-06-01") - d("2005-01-01")).days
          + (d("2021-12-31") - d("2009-01-01")).days) / DAYS_PER_YEAR
    assert nervous.person_years == pytest.approx(py, rel=1e-12)
    assert nervous.mortality_rate_per_100py == pytest.approx(200 / py, rel=1e-12)
    assert (nervous.n_long_stay, nervous.long_stay_pct) == (1, pytest.approx(100 / 3))
    assert nervous.cause_of_death_top5 == [("circulatory", 50.0), ("nervous", 50.0)]
    assert cardio.cause_of_death_top5 == [("circulatory", 100.0)]
    assert cardio.n_long_stay == 1
    # hypertension, kidney disease and diabetes sit in three different systems
    assert cardio.system_distribution["circulatory"] == pytest.approx(100 / 3)
    for r in reports:
        assert sum(r.system_distribution.values()) == pytest.approx(100.0)
        assert r.n_patients_unique <= r.n_patients_total


def test_single_trajectory_slot_shares():
    traj = [Trajectory((EPILEPSY, INSOMNIA, REFLUX), frozenset("abc"))]
    r = cluster_report([0], traj, fixture_cohort())[0]
    assert round(r.system_distribution["nervous"], 1) == 66.7
    assert round(r.system_distribution["digestive"], 1) == 33.3


def test_clusters_sorted_by_unique_patients():
    reports = cluster_report([1, 1, 0], TRAJS, fixture_cohort())
    assert [r.cluster_label for r in reports] == [1, 0]
    assert sum(r.n_traj for r in reports) == len(TRAJS)


def test_missing_stays_is_explicit():
    with pytest.raises(CohortError, match="hospital_stays.csv"):
        cluster_report([0, 0, 1], TRAJS, fixture_cohort(stays=False))
    reports = cluster_report([0, 0, 1], TRAJS, fixture_cohort(stays=False),
                             config=PipelineConfig(report_long_stay=False))
    assert reports[0].n_long_stay is None


def test_person_years_positive():
    cohort = fixture_cohort()
    py = person_years(cohort, "abcef")
    assert all(v > 0 for v in py.values())
    assert py["c"] == (d("2021-12-31") - d("2009-01-01")).days / DAYS_PER_YEAR


def _seqs(gaps):
    base = d("2001-01-01")
    return {f"p{i}": FirstDiagnosisSequence(f"p{i}", tuple(sorted(
        [(1, base), (2, base + timedelta(days=g))] if g >= 0 else
        [(2, base), (1, base - timedelta(days=g))], key=lambda e: (e[1], e[0]))))
        for i, g in enumerate(gaps)}


def test_pair_timing_two_points():
    mean, sd = pair_timing_stats((1, 2), _seqs([1461, -2922]))   # 4 and 8 years
    assert mean == pytest.approx(6.0)
    assert sd == pytest.approx(2 * 2 ** 0.5)


def test_pair_timing_single_and_empty():
    assert pair_timing_stats((1, 2), _seqs([730])) == (pytest.approx(730 / DAYS_PER_YEAR),
                                                       None)
    with pytest.raises(ValueError):
        pair_timing_stats((1, 3), _seqs([730]))


def test_pair_timing_thirty_gaps():
    rnd = random.Random(30)
    gaps = [rnd.choice([-1, 1]) * rnd.randint(0, 4000) for _ in range(30)]
    mean, sd = pair_timing_stats((1, 2), _seqs(gaps))
    years = [abs(g) / 365.25 for g in gaps]
    assert mean == pytest.approx(statistics.fmean(years), rel=1e-12)
    assert sd == pytest.approx(statistics.stdev(years), rel=1e-12)


def test_cause_of_death_top5_rules():
    pats = {}
    causes = (["respiratory"] * 3 + ["circulatory"] * 3 + ["nervous"] * 2 + ["mental"]
              + ["digestive"] + ["neoplasms"] + [None])
    for i, cause in enumerate(causes):
        pats[f"p{i}"] = Patient(f"p{i}", "male", d("1950-01-01"), d("2010-01-01"), cause)
    pats["alive"] = Patient("alive", "male", d("1950-01-01"))
    cohort = Cohort(pats, (), default_catalog())
    top = cause_of_death_top5(cohort, {0: list(pats)})[0]
    assert [c for c, _ in top] == ["circulatory", "respiratory", "nervous", "digestive",
                                   "mental"]
    assert top[0][1] == pytest.approx(300 / 11)
    three = cause_of_death_top5(cohort, {0: ["p0", "p3", "p6"]})[0]
    assert [c for c, _ in three] == ["circulatory", "nervous", "respiratory"]
    assert cause_of_death_top5(cohort, {0: ["alive"]})[0] == []
