from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mltctraj.config import ConfigError, PipelineConfig


def test_defaults():
    c = PipelineConfig()
    assert (c.alpha, c.direction_alpha) == (0.001, 0.05)
    assert (c.min_pair_patients, c.min_separation_days) == (10, 183)
    assert (c.traj_length, c.min_traj_patients) == (3, 10)
    assert (c.k_min, c.k_max) == (2, 10)
    assert c.age_threshold == 45 and c.age_anchor == "median_event"
    assert c.study_start == date(2000, 1, 1) and c.study_end == date(2021, 12, 31)
    assert c.clamp_similarity and not c.strict_table and not c.require_all_pairs
    assert c.edge_weighting == "trajectory" and c.direction_test == "two_sided"


def test_from_file_parses_types_and_comments(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# thresholds\nalpha = 0.01\nk_max=6  # narrower sweep\n"
                    "study_start = 2005-01-01\nclamp_similarity = false\n\n")
    c = PipelineConfig.from_file(path)
    assert c.alpha == 0.01 and c.k_max == 6
    assert c.study_start == date(2005, 1, 1)
    assert c.clamp_similarity is False


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("alpha = 0.01\nbeta = 2\n")
    with pytest.raises(ConfigError, match="beta"):
        PipelineConfig.from_file(path)


@pytest.mark.parametrize("text", ["alpha = lots", "alpha\n", "alpha = 0\n",
                                  "k_min = 5\nk_max = 3\n", "edge_weighting = both\n",
                                  "alpha = 0.1\nalpha = 0.2\n"])
def test_invalid_values_rejected(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(path)


def test_text_round_trip(tmp_path):
    c = PipelineConfig(alpha=0.005, seed=7, strict_table=True)
    path = tmp_path / "c.cfg"
    path.write_text(c.to_text())
    again = PipelineConfig.from_file(path)
    assert again == c
    assert again.config_hash() == c.config_hash()


_changes = st.sampled_from([
    ("alpha", 0.002), ("direction_alpha", 0.01), ("min_pair_patients", 11),
    ("min_separation_days", 184), ("traj_length", 4), ("min_traj_patients", 9),
    ("k_min", 3), ("k_max", 9), ("seed", 1), ("clamp_similarity", False),
    ("edge_weighting", "patient"), ("require_all_pairs", True), ("strict_table", True),
    ("age_threshold", 50), ("age_anchor", "age_at_first_event"),
])


@given(_changes)
@settings(max_examples=30, deadline=None)
def test_hash_changes_iff_a_field_changes(change):
    key, value = change
    base = PipelineConfig()
    assert base.replace(**{key: value}).config_hash() != base.config_hash()
    assert base.replace(**{key: getattr(base, key)}).config_hash() == base.config_hash()
