import csv
import json
import logging
import shutil
from pathlib import Path

import pytest

from mltctraj.cli import main
from mltctraj.cohort import STRATUM_NAMES
from mltctraj.config import PipelineConfig
from mltctraj.pipeline import (STAGES, ArtifactWriter, MissingArtifactError,
                               abandon_stage_outputs, read_cluster_labels, read_pairs,
                               read_similarity, read_trajectories, run_pipeline)

DEMO_SPEC = Path(__file__).resolve().parents[1] / "demos" / "specs" / "two_group.toml"
STRATUM = "male_ge45"


def rows(path):
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_manifest(planted_run):
    run, out = planted_run
    assert run.exit_status == 0 and run.failures == []
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["strata"] == list(STRATUM_NAMES)
    assert manifest["config_hash"] == PipelineConfig().config_hash()
    assert PipelineConfig.from_mapping(manifest["config"]) == PipelineConfig()
    seen = {(e["stage"], e["stratum"]) for e in manifest["artifacts"]}
    assert {("load", None), ("stratify", None)} <= seen
    for stage in STAGES[2:]:
        for s in STRATUM_NAMES:
            assert (stage, s) in seen
    for entry in manifest["artifacts"]:
        path = out / entry["file"]
        assert path.is_file()
        if path.suffix == ".csv":
            assert len(rows(path)) == entry["rows"]
    assert not list(out.glob("*.partial"))


def test_artifacts_read_back(planted_run):
    _, out = planted_run
    for s in STRATUM_NAMES:
        pairs = read_pairs(out, s)
        trajs = read_trajectories(out, s)
        sim = read_similarity(out, s)
        labels = read_cluster_labels(out, s)
        assert any(p.significant for p in pairs)
        assert sim.shape == (len(trajs), len(trajs))
        assert len(labels) == len(trajs)
        report = rows(out / f"cluster_report_{s}.csv")
        assert sum(int(r["n_traj"]) for r in report) == len(trajs)


@pytest.fixture(scope="module")
def staged(planted_run, tmp_path_factory):
    """Drive the per-stage CLI for one stratum on a freshly synthesized cohort."""
    base = tmp_path_factory.mktemp("cli")
    inp, out = base / "input", base / "out"
    assert main(["synth", "--spec", str(DEMO_SPEC), "--out", str(inp)]) == 0
    common = ["--input", str(inp), "--out", str(out), "--stratum", STRATUM]
    codes = [main([cmd] + common) for cmd in ("describe", "pairs", "trajectories",
                                              "network", "cluster")]
    codes.append(main(["report", "--format", "json"] + common))
    return codes, inp, out


def test_staged_cli_matches_run(staged, planted_run):
    codes, inp, out = staged
    assert codes == [0] * 6
    _, run_out = planted_run
    names = [p.name for p in out.iterdir() if STRATUM in p.name and p.suffix != ".json"]
    assert len(names) == 12
    for name in names + ["sequences.csv", "strata.csv", "descriptive.csv"]:
        assert (out / name).read_bytes() == (run_out / name).read_bytes(), name
    assert not (out / "pairs_female_lt45.csv").exists()


def test_json_mirrors_csv(staged):
    _, _, out = staged
    for table in ("cluster_report", "cluster_conditions", "cause_of_death", "pair_timing"):
        as_csv = rows(out / f"{table}_{STRATUM}.csv")
        as_json = json.loads((out / f"{table}_{STRATUM}.json").read_text())
        assert len(as_csv) == len(as_json)
        for c, j in zip(as_csv, as_json):
            assert list(c) == list(j)
            for key, text in c.items():
                value = j[key]
                if text == "":
                    assert value is None
                elif isinstance(value, float):
                    assert value == float(text)
                else:
                    assert str(value).lower() == text.lower()


def test_cluster_without_network_names_missing_artifact(staged, tmp_path, caplog):
    _, inp, _ = staged
    common = ["--input", str(inp), "--out", str(tmp_path), "--stratum", STRATUM]
    for cmd in ("describe", "pairs", "trajectories"):
        assert main([cmd] + common) == 0
    with caplog.at_level(logging.ERROR, logger="mltctraj"):
        assert main(["cluster"] + common) == 1
    assert f"similarity_matrix_{STRATUM}.csv" in caplog.text
    assert "network" in caplog.text
    assert not (tmp_path / f"clusters_{STRATUM}.csv").exists()


def test_pairs_before_describe_fails(tmp_path, caplog):
    with caplog.at_level(logging.ERROR, logger="mltctraj"):
        assert main(["pairs", "--out", str(tmp_path), "--stratum", STRATUM]) == 1
    assert "strata.csv" in caplog.text and "describe" in caplog.text


def test_missing_stays_fails_report_stage(planted_cohort_dir, tmp_path):
    inp = tmp_path / "input"
    shutil.copytree(planted_cohort_dir, inp)
    (inp / "hospital_stays.csv").unlink()
    run = run_pipeline(PipelineConfig(), inp, tmp_path / "out", strata=[STRATUM])
    assert run.exit_status == 1
    assert [(f.stage, f.stratum) for f in run.failures] == [("report", STRATUM)]
    assert "hospital_stays.csv" in str(run.failures[0])
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["failures"][0]["stage"] == "report"
    assert (tmp_path / "out" / f"clusters_{STRATUM}.csv").is_file()
    assert not (tmp_path / "out" / f"cluster_report_{STRATUM}.csv").exists()

    quiet = PipelineConfig(report_long_stay=False)
    assert run_pipeline(quiet, inp, tmp_path / "out2", strata=[STRATUM]).exit_status == 0
    assert main(["run", "--input", str(inp), "--out", str(tmp_path / "out3"),
                 "--stratum", STRATUM]) == 1


def test_failed_stage_leaves_partial(tmp_path):
    w = ArtifactWriter(tmp_path, "network", STRATUM)
    w.csv(f"network_edges_{STRATUM}.csv", ["a"], [[1]])
    w.text(f"network_{STRATUM}.dot", "graph {}\n", 0)
    (tmp_path / "network_edges_other.csv").write_text("a\n")
    moved = abandon_stage_outputs(tmp_path, "network", STRATUM)
    assert sorted(p.name for p in moved) == [f"network_edges_{STRATUM}.csv.partial",
                                             f"network_{STRATUM}.dot.partial"]
    assert (tmp_path / "network_edges_other.csv").exists()
    assert w.entries[0]["rows"] == 1


def test_writer_cells(tmp_path):
    w = ArtifactWriter(tmp_path, "pairs", STRATUM)
    path = w.csv("x.csv", ["f", "b", "n", "s"], [[0.1, True, None, 'a,"b"']])
    assert path.read_text() == 'f,b,n,s\n0.1,true,,"a,""b"""\n'


def test_bad_config_and_usage(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("alpha = 7\n")
    assert main(["pairs", "--out", str(tmp_path), "--config", str(cfg)]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["pairs", "--out", str(tmp_path), "--stratum", "everyone"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["run", "--out", str(tmp_path)])


def test_missing_artifact_error_type(tmp_path):
    with pytest.raises(MissingArtifactError, match="run the `trajectories` stage"):
        read_trajectories(tmp_path, STRATUM)


def test_config_hash_changes_with_seed(planted_cohort_dir, tmp_path):
    a = run_pipeline(PipelineConfig(), planted_cohort_dir, tmp_path / "a", strata=[STRATUM])
    b = run_pipeline(PipelineConfig(seed=7), planted_cohort_dir, tmp_path / "b",
                     strata=[STRATUM])
    assert a.manifest["config_hash"] != b.manifest["config_hash"]
