"""Stage runners with persisted artifacts, and the full-pipeline driver.

Every stage reads what the previous stage wrote into the output directory,
so any stage can be re-run on its own.  Per-stratum artifacts are named
``<stage>_<sex>_<agegroup>.*``.  Files are written to ``<name>.partial``
and renamed on completion; when a stage fails, whatever it already wrote
is moved back to ``.partial`` so it cannot be mistaken for a finished
artifact.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .cluster import select_k_and_cluster
from .cohort import (STRATUM_NAMES, SYSTEM_CATEGORIES, Catalog, Cohort, FirstDiagnosisSequence,
                     Stratum, descriptive_stats, first_diagnosis_sequences,
                     load_catalog, load_cohort_dir, patient_ages, stratify)
from .config import PipelineConfig
from .pairstats import ContingencyTable, PairStats, significant_pairs
from .report import cluster_report, pair_timing_stats
from .trajectory import Trajectory, mine_trajectories
from .trajnet import build_network, similarity_matrix

logger = logging.getLogger(__name__)

STAGES = ("load", "stratify", "pairs", "trajectories", "network", "cluster", "report")
PAIR_COLUMNS = ("c1", "c2", "n11", "n10", "n01", "n00", "fisher_p", "adjusted_p",
                "significant", "n_fwd", "n_bwd", "binomial_p", "direction")
REPORT_DECIMALS = 2


class StageError(RuntimeError):
    def __init__(self, stage: str, stratum: str | None, cause: BaseException):
        self.stage, self.stratum, self.cause = stage, stratum, cause
        where = f"{stage}" + (f" [{stratum}]" if stratum else "")
        super().__init__(f"stage {where} failed: {cause}")


class MissingArtifactError(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# Low-level artifact IO
# ---------------------------------------------------------------------------

class ArtifactWriter:
    """Atomic writer that remembers which files a stage produced."""

    def __init__(self, out_dir: Path, stage: str, stratum: str | None = None):
        self.out_dir, self.stage, self.stratum = out_dir, stage, stratum
        self.entries: list[dict[str, Any]] = []

    def _commit(self, name: str, text: str, rows: int) -> Path:
        path = self.out_dir / name
        tmp = path.with_name(name + ".partial")
        tmp.write_text(text, encoding="utf-8", newline="")
        tmp.replace(path)
        self.entries.append({"stage": self.stage, "stratum": self.stratum,
                             "file": name, "rows": rows})
        return path

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        rows = [[_cell(v) for v in row] for row in rows]
        lines = [",".join(_quote(h) for h in header)]
        lines += [",".join(_quote(v) for v in row) for row in rows]
        return self._commit(name, "\n".join(lines) + "\n", len(rows))

    def text(self, name: str, text: str, rows: int) -> Path:
        return self._commit(name, text, rows)

    def json(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        docs = [dict(zip(header, (_json_value(v) for v in row))) for row in rows]
        return self._commit(name, json.dumps(docs, indent=1) + "\n", len(docs))


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, date):
        return v.isoformat()
    return str(v)


def _quote(s: str) -> str:
    return '"' + s.replace('"', '""') + '"' if any(ch in s for ch in ',"\n') else s


def _json_value(s: str) -> Any:
    if s == "":
        return None
    if s in ("true", "false"):
        return s == "true"
    for kind in (int, float):
        try:
            return kind(s)
        except ValueError:
            pass
    return s


def _fixed(x: float | None, decimals: int = REPORT_DECIMALS) -> str:
    return "" if x is None else f"{x:.{decimals}f}"


def _require(path: Path, stage_hint: str) -> Path:
    if not path.is_file():
        raise MissingArtifactError(f"missing upstream artifact {path.name} "
                                   f"(run the `{stage_hint}` stage first)")
    return path


def _read_csv(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# Artifact readers
# ---------------------------------------------------------------------------

def read_sequences(out_dir: Path) -> dict[str, FirstDiagnosisSequence]:
    rows = _read_csv(_require(out_dir / "sequences.csv", "describe"))
    entries: dict[str, list[tuple[int, date]]] = {}
    for r in rows:
        entries.setdefault(r["patient_id"], []).append(
            (int(r["condition_id"]), date.fromisoformat(r["first_date"])))
    return {pid: FirstDiagnosisSequence(pid, tuple(sorted(e, key=lambda x: (x[1], x[0]))))
            for pid, e in entries.items()}


def read_strata(out_dir: Path) -> list[Stratum]:
    rows = _read_csv(_require(out_dir / "strata.csv", "describe"))
    members: dict[str, set[str]] = {name: set() for name in STRATUM_NAMES}
    flagged: dict[str, set[str]] = {name: set() for name in STRATUM_NAMES}
    for r in rows:
        members[r["stratum"]].add(r["patient_id"])
        if r["flagged"] == "true":
            flagged[r["stratum"]].add(r["patient_id"])
    out = []
    for name in STRATUM_NAMES:
        sex, group = name.split("_")
        out.append(Stratum(sex, "under_45" if group == "lt45" else "ge_45",
                           frozenset(members[name]), frozenset(flagged[name])))
    return out


def _with_empty(sequences: Mapping[str, FirstDiagnosisSequence], pids: Iterable[str],
                ) -> dict[str, FirstDiagnosisSequence]:
    out = dict(sequences)
    for pid in pids:
        out.setdefault(pid, FirstDiagnosisSequence(pid, ()))
    return out


def read_pairs(out_dir: Path, stratum: str) -> list[PairStats]:
    rows = _read_csv(_require(out_dir / f"pairs_{stratum}.csv", "pairs"))
    out = []
    for r in rows:
        table = ContingencyTable(int(r["n11"]), int(r["n10"]), int(r["n01"]), int(r["n00"]))
        out.append(PairStats(
            int(r["c1"]), int(r["c2"]), table, float(r["fisher_p"]),
            float(r["adjusted_p"]), r["significant"] == "true", int(r["n_fwd"]),
            int(r["n_bwd"]), float(r["binomial_p"]) if r["binomial_p"] else None,
            r["direction"] or None))
    return out


def read_trajectories(out_dir: Path, stratum: str) -> list[Trajectory]:
    rows = _read_csv(_require(out_dir / f"trajectories_{stratum}.csv", "trajectories"))
    members_rows = _read_csv(_require(out_dir / f"trajectory_members_{stratum}.csv",
                                      "trajectories"))
    members: dict[int, set[str]] = {i: set() for i in range(len(rows))}
    for r in members_rows:
        members[int(r["traj_index"])].add(r["patient_id"])
    out = []
    for i, r in enumerate(rows):
        conds = tuple(int(r[k]) for k in sorted((k for k in r if k[0] == "c" and k[1:].isdigit()),
                                                 key=lambda k: int(k[1:])))
        t = Trajectory(conds, frozenset(members[i]))
        if t.support != int(r["support"]):
            raise ValueError(f"trajectory {i}: support {r['support']} does not match "
                             f"{t.support} member rows")
        out.append(t)
    return out


def read_similarity(out_dir: Path, stratum: str) -> np.ndarray:
    path = _require(out_dir / f"similarity_matrix_{stratum}.csv", "network")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)


def read_cluster_labels(out_dir: Path, stratum: str) -> np.ndarray:
    rows = _read_csv(_require(out_dir / f"clusters_{stratum}.csv", "cluster"))
    return np.array([int(r["cluster_label"]) for r in rows], dtype=int)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_load(cohort: Cohort, out_dir: Path) -> ArtifactWriter:
    w = ArtifactWriter(out_dir, "load")
    seqs = first_diagnosis_sequences(cohort)
    rows = [(pid, cid, d, seq.tied) for pid, seq in seqs.items() for cid, d in seq.entries]
    w.csv("sequences.csv", ("patient_id", "condition_id", "first_date", "tied"), rows)
    # later stages label network nodes from this copy
    w.csv("catalog.csv", ("condition_id", "name", "system_category"),
          [(c, d.name, d.system_category) for c, d in sorted(cohort.catalog.items())])
    return w


def stage_stratify(cohort: Cohort, config: PipelineConfig, out_dir: Path,
                   ) -> ArtifactWriter:
    w = ArtifactWriter(out_dir, "stratify")
    seqs = _with_empty(read_sequences(out_dir), cohort.patients)
    strata = stratify(cohort, seqs, config)
    ages, _ = patient_ages(cohort, seqs, config)
    rows = []
    for s in strata:
        for pid in sorted(s.patient_ids):
            rows.append((pid, s.sex, ages[pid], s.age_group, s.name, pid in s.flagged))
    rows.sort()
    w.csv("strata.csv", ("patient_id", "sex", "age", "age_group", "stratum", "flagged"),
          rows)
    report = descriptive_stats(cohort, cohort.catalog, config)
    w.csv("descriptive.csv",
          ("group", "level", "n", "mean_ltc", "sd_ltc", "mltc_pct",
           "physical_mental_pct", "one_ltc_pct", "zero_ltc_pct"),
          [(r.group, r.level, r.n, _fixed(r.mean_ltc), _fixed(r.sd_ltc),
            _fixed(r.mltc_pct), _fixed(r.physical_mental_pct), _fixed(r.one_ltc_pct),
            _fixed(r.zero_ltc_pct)) for r in report.rows])
    return w


def _stratum_inputs(out_dir: Path, stratum: str):
    strata = {s.name: s for s in read_strata(out_dir)}
    s = strata[stratum]
    return s, _with_empty(read_sequences(out_dir), s.patient_ids)


def stage_pairs(config: PipelineConfig, out_dir: Path, stratum: str) -> ArtifactWriter:
    w = ArtifactWriter(out_dir, "pairs", stratum)
    s, seqs = _stratum_inputs(out_dir, stratum)
    pairs = significant_pairs(s, seqs, config)
    w.csv(f"pairs_{stratum}.csv", PAIR_COLUMNS,
          [(p.c1, p.c2, p.table.n11, p.table.n10, p.table.n01, p.table.n00, p.fisher_p,
            p.adjusted_p, p.significant, p.n_fwd, p.n_bwd, p.binomial_p, p.direction)
           for p in pairs])
    return w


def stage_trajectories(config: PipelineConfig, out_dir: Path, stratum: str,
                       ) -> ArtifactWriter:
    w = ArtifactWriter(out_dir, "trajectories", stratum)
    pairs = read_pairs(out_dir, stratum)
    s, seqs = _stratum_inputs(out_dir, stratum)
    trajs = mine_trajectories(s, seqs, pairs, config)
    cols = tuple(f"c{i}" for i in range(1, config.traj_length + 1))
    w.csv(f"trajectories_{stratum}.csv", cols + ("support",),
          [t.conditions + (t.support,) for t in trajs])
    w.csv(f"trajectory_members_{stratum}.csv", ("traj_index", "patient_id"),
          [(i, pid) for i, t in enumerate(trajs) for pid in sorted(t.patient_ids)])
    return w


def _dot_id(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def network_dot(network, catalog: Catalog, name: str = "trajectory_network") -> str:
    lines = [f"graph {name} {{"]
    for c in network.nodes:
        lines.append(f"  {c} [label={_dot_id(catalog.name(c))}, "
                     f"system_category={_dot_id(catalog.category(c))}];")
    for (a, b), f in network.frequencies.items():
        lines.append(f"  {a} -- {b} [f={f}, w={1.0 / f ** 0.5!r}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def stage_network(config: PipelineConfig, out_dir: Path, stratum: str, catalog: Catalog,
                  ) -> ArtifactWriter:
    w = ArtifactWriter(out_dir, "network", stratum)
    trajs = read_trajectories(out_dir, stratum)
    net = build_network(trajs, config.edge_weighting)
    w.text(f"network_{stratum}.dot", network_dot(net, catalog, f"network_{stratum}"),
           len(net.frequencies))
    w.csv(f"network_edges_{stratum}.csv",
          ("c_i", "c_j", "name_i", "name_j", "frequency", "weight"),
          [(a, b, catalog.name(a), catalog.name(b), f, wt)
           for ((a, b), f), wt in zip(net.frequencies.items(), net.weights.values())])
    sim = similarity_matrix(net, trajs, config.clamp_similarity).values
    w.csv(f"similarity_matrix_{stratum}.csv", [str(i) for i in range(len(trajs))],
          [[float(v) for v in row] for row in sim])
    return w


def stage_cluster(config: PipelineConfig, out_dir: Path, stratum: str) -> ArtifactWriter:
    w = ArtifactWriter(out_dir, "cluster", stratum)
    sim = read_similarity(out_dir, stratum)
    trajs = read_trajectories(out_dir, stratum)
    if sim.shape != (len(trajs), len(trajs)):
        raise ValueError(f"similarity matrix shape {sim.shape} does not match "
                         f"{len(trajs)} trajectories")
    result = select_k_and_cluster(sim, config.k_min, config.k_max, config.seed)
    w.csv(f"ch_scores_{stratum}.csv", ("k", "score"), sorted(result.ch_scores.items()))
    cols = tuple(f"c{i}" for i in range(1, config.traj_length + 1))
    w.csv(f"clusters_{stratum}.csv", ("traj_index",) + cols + ("support", "cluster_label"),
          [(i,) + t.conditions + (t.support, int(lab))
           for i, (t, lab) in enumerate(zip(trajs, result.labels))])
    return w


REPORT_COLUMNS = (("cluster_label", "n_traj", "n_patients_total", "n_patients_unique",
                   "mean_age", "sd_age", "n_deaths", "mortality_pct", "person_years",
                   "mortality_rate_per_100py", "n_long_stay", "long_stay_pct")
                  + tuple(f"system_{c}_pct" for c in SYSTEM_CATEGORIES))


def stage_report(cohort: Cohort, config: PipelineConfig, out_dir: Path, stratum: str,
                 fmt: str = "csv") -> ArtifactWriter:
    w = ArtifactWriter(out_dir, "report", stratum)
    labels = read_cluster_labels(out_dir, stratum)
    trajs = read_trajectories(out_dir, stratum)
    pairs = read_pairs(out_dir, stratum)
    s, seqs = _stratum_inputs(out_dir, stratum)
    reports = cluster_report(labels, trajs, cohort, cohort.catalog, config, seqs)

    tables: list[tuple[str, Sequence[str], list[Sequence[Any]]]] = []
    rows = []
    for r in reports:
        rows.append((r.cluster_label, r.n_traj, r.n_patients_total, r.n_patients_unique,
                     _fixed(r.mean_age), _fixed(r.sd_age), r.n_deaths,
                     _fixed(r.mortality_pct), _fixed(r.person_years),
                     _fixed(r.mortality_rate_per_100py), r.n_long_stay,
                     _fixed(r.long_stay_pct))
                    + tuple(_fixed(r.system_distribution[c]) for c in SYSTEM_CATEGORIES))
    tables.append((f"cluster_report_{stratum}", REPORT_COLUMNS, rows))
    tables.append((f"cluster_conditions_{stratum}",
                   ("cluster_label", "condition_id", "name", "system_category", "pct"),
                   [(r.cluster_label, c, cohort.catalog.name(c), cohort.catalog.category(c),
                     _fixed(pct)) for r in reports for c, pct in r.condition_prevalence.items()]))
    tables.append((f"cause_of_death_{stratum}", ("cluster_label", "rank", "category", "pct"),
                   [(r.cluster_label, i, cat, _fixed(pct)) for r in reports
                    for i, (cat, pct) in enumerate(r.cause_of_death_top5, start=1)]))
    timing = []
    for p in pairs:
        if not p.significant:
            continue
        mean, sd = pair_timing_stats(p, seqs, s.patient_ids)
        timing.append((p.c1, p.c2, p.n11, p.direction, _fixed(mean), _fixed(sd)))
    tables.append((f"pair_timing_{stratum}",
                   ("c1", "c2", "n_patients", "direction", "mean_years", "sd_years"), timing))
    for name, header, body in tables:
        w.csv(f"{name}.csv", header, body)
        if fmt == "json":
            w.json(f"{name}.json", header, [[_cell(v) for v in row] for row in body])
    return w


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineRun:
    exit_status: int
    manifest: dict[str, Any]
    failures: list[StageError] = field(default_factory=list)


def resolve_strata(selection: str | Sequence[str] | None) -> list[str]:
    if selection is None or selection == "all":
        return list(STRATUM_NAMES)
    names = [selection] if isinstance(selection, str) else list(selection)
    for n in names:
        if n not in STRATUM_NAMES:
            raise ValueError(f"unknown stratum {n!r}; expected one of "
                             f"{', '.join(STRATUM_NAMES)} or all")
    return names


_STAGE_PREFIXES = {
    "pairs": ("pairs",),
    "trajectories": ("trajectories", "trajectory_members"),
    "network": ("network", "network_edges", "similarity_matrix"),
    "cluster": ("ch_scores", "clusters"),
    "report": ("cluster_report", "cluster_conditions", "cause_of_death", "pair_timing"),
}


def abandon_stage_outputs(out_dir: Path, stage: str, stratum: str) -> list[Path]:
    """Rename a stage's artifacts for ``stratum`` to ``*.partial``."""
    moved = []
    for prefix in _STAGE_PREFIXES[stage]:
        for ext in (".csv", ".json", ".dot"):
            path = out_dir / f"{prefix}_{stratum}{ext}"
            if path.exists():
                target = path.with_name(path.name + ".partial")
                path.replace(target)
                moved.append(target)
    return moved


def _run_stratum(cohort: Cohort, config: PipelineConfig, out_dir: Path, stratum: str,
                 fmt: str) -> tuple[list[dict], StageError | None]:
    steps = (
        ("pairs", lambda: stage_pairs(config, out_dir, stratum)),
        ("trajectories", lambda: stage_trajectories(config, out_dir, stratum)),
        ("network", lambda: stage_network(config, out_dir, stratum, cohort.catalog)),
        ("cluster", lambda: stage_cluster(config, out_dir, stratum)),
        ("report", lambda: stage_report(cohort, config, out_dir, stratum, fmt)),
    )
    entries: list[dict] = []
    for i, (stage, step) in enumerate(steps):
        try:
            entries += step().entries
        except Exception as exc:  # noqa: BLE001 - isolated per stratum
            # outputs of this and later stages would be stale or half written
            for later, _ in steps[i:]:
                abandon_stage_outputs(out_dir, later, stratum)
            logger.error("stratum %s: stage %s failed: %s", stratum, stage, exc)
            return entries, StageError(stage, stratum, exc)
    return entries, None


def run_pipeline(config: PipelineConfig, input_dir: str | Path, out_dir: str | Path,
                 strata: str | Sequence[str] | None = "all", fmt: str = "csv",
                 n_jobs: int | None = None) -> PipelineRun:
    """Run every stage for the selected strata and write ``manifest.json``.

    Cohort-level stages (load, stratify) abort the run on error.  Stratum
    stages fail independently: the failure is recorded and the remaining
    strata still run.  ``exit_status`` is 0 only if everything succeeded.
    """
    input_dir, out_dir = Path(input_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = resolve_strata(strata)
    entries: list[dict] = []
    failures: list[StageError] = []

    try:
        cohort = load_cohort_dir(input_dir, config)
        entries += stage_load(cohort, out_dir).entries
    except Exception as exc:
        raise StageError("load", None, exc) from exc
    try:
        entries += stage_stratify(cohort, config, out_dir).entries
    except Exception as exc:
        raise StageError("stratify", None, exc) from exc

    n_jobs = len(names) if n_jobs is None else n_jobs
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(
                lambda n: _run_stratum(cohort, config, out_dir, n, fmt), names))
    else:
        results = [_run_stratum(cohort, config, out_dir, n, fmt) for n in names]
    for stratum_entries, failure in results:
        entries += stratum_entries
        if failure is not None:
            failures.append(failure)

    stage_order = {s: i for i, s in enumerate(STAGES)}
    entries.sort(key=lambda e: (stage_order[e["stage"]], e["stratum"] or "", e["file"]))
    manifest = {
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config_hash": config.config_hash(),
        "config": config.to_dict(),
        "strata": names,
        "artifacts": entries,
        "failures": [{"stage": f.stage, "stratum": f.stratum, "error": str(f.cause)}
                     for f in failures],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n",
                                           encoding="utf-8")
    if failures:
        logger.error("%d strata failed: %s", len(failures),
                     "; ".join(str(f) for f in failures))
    return PipelineRun(1 if failures else 0, manifest, failures)


def read_catalog(out_dir: Path) -> Catalog:
    return load_catalog(_require(out_dir / "catalog.csv", "describe"))
