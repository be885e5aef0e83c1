"""Disease trajectory mining and clustering for multiple long-term conditions.

The pipeline runs per sex x age-group stratum: pairwise association and
direction tests, length-3 trajectory mining, a trajectory condition
network with shortest-path similarity, spectral clustering with a
Calinski-Harabasz choice of k, and per-cluster reporting.
"""

from .cluster import (ClusterResult, calinski_harabasz, kmeans, select_k_and_cluster,
                      spectral_embed)
from .cohort import (Catalog, Cohort, CohortError, FirstDiagnosisSequence, Stratum,
                     default_catalog, descriptive_stats, first_diagnosis_sequences,
                     load_cohort, load_cohort_dir, stratify)
from .config import ConfigError, PipelineConfig
from .pairstats import (ContingencyTable, PairStats, binomial_direction_test,
                        bonferroni_adjust, fisher_exact_two_sided, significant_pairs)
from .pipeline import PipelineRun, StageError, run_pipeline
from .report import ClusterReport, cluster_report, pair_timing_stats
from .synth import (SynthSpec, adjusted_rand_index, generate_cohort, load_synth_spec,
                    planted_two_group_spec)
from .trajectory import Trajectory, mine_trajectories
from .trajnet import (TrajectoryNetwork, build_network, condition_similarity,
                      similarity_matrix, trajectory_similarity)

__version__ = "0.1.0"

__all__ = [
    "Catalog", "ClusterReport", "ClusterResult", "Cohort", "CohortError", "ConfigError",
    "ContingencyTable", "FirstDiagnosisSequence", "PairStats", "PipelineConfig",
    "PipelineRun", "StageError", "Stratum", "SynthSpec", "Trajectory",
    "TrajectoryNetwork", "adjusted_rand_index", "binomial_direction_test",
    "bonferroni_adjust", "build_network", "calinski_harabasz", "cluster_report",
    "condition_similarity", "default_catalog", "descriptive_stats",
    "first_diagnosis_sequences", "fisher_exact_two_sided", "generate_cohort", "kmeans",
    "load_cohort", "load_cohort_dir", "load_synth_spec", "mine_trajectories",
    "pair_timing_stats", "planted_two_group_spec", "run_pipeline",
    "select_k_and_cluster", "significant_pairs", "similarity_matrix", "spectral_embed",
    "stratify", "trajectory_similarity",
]
