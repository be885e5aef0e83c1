from __future__ import annotations

import csv
import sys
from datetime import date
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mltctraj.cohort import (CATALOG_COLUMNS, DIAGNOSIS_COLUMNS, PATIENT_COLUMNS,
                             STAY_COLUMNS, default_catalog)
from mltctraj.config import PipelineConfig
from mltctraj.pipeline import run_pipeline
from mltctraj.synth import generate_cohort, planted_two_group_spec


def write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else v for v in row])
    return path


def write_cohort(directory: Path, patients, diagnoses, stays=None, catalog=None) -> Path:
    """Write the cohort CSV files into ``directory``.

    ``patients`` rows may be short; missing trailing fields are left empty.
    """
    directory.mkdir(parents=True, exist_ok=True)
    cat = catalog or default_catalog()
    write_csv(directory / "catalog.csv", CATALOG_COLUMNS,
              [(c, cat.name(c), cat.category(c)) for c in cat.ids])
    padded = [tuple(p) + (None,) * (len(PATIENT_COLUMNS) - len(p)) for p in patients]
    write_csv(directory / "patients.csv", PATIENT_COLUMNS, padded)
    write_csv(directory / "diagnoses.csv", DIAGNOSIS_COLUMNS, diagnoses)
    if stays is not None:
        write_csv(directory / "hospital_stays.csv", STAY_COLUMNS, stays)
    return directory


def d(s: str) -> date:
    return date.fromisoformat(s)


@pytest.fixture(scope="session")
def planted_cohort_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("planted") / "input"
    generate_cohort(planted_two_group_spec(seed=2024), out)
    return out


@pytest.fixture(scope="session")
def planted_run(planted_cohort_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("planted_out")
    run = run_pipeline(PipelineConfig(), planted_cohort_dir, out)
    return run, out


@pytest.hookimpl(hookwrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
