"""
===============================================
From trajectories to a network and to clusters
===============================================

Three short trajectories share some conditions.  Adjacent conditions are
joined by edges whose weight shrinks as more trajectories use them; path
lengths turn into condition similarities, and averaging those over the
nine condition pairs of two trajectories gives a trajectory similarity.
"""

# %%
# Build the network
# -----------------

import numpy as np

from mltctraj.cluster import select_k_and_cluster
from mltctraj.trajnet import (build_network, condition_similarity, edge_weight,
                              shortest_path_length, similarity_matrix)

trajectories = [(1, 2, 3), (3, 2, 4), (4, 5, 1)]
net = build_network(trajectories)
for edge, f in sorted(net.frequencies.items()):
    print(f"edge {edge}: used by {f} trajectories, weight {edge_weight(f):.4f}")

# %%
# Distances and similarities
# --------------------------
#
# 2-3 appears twice, so the path 1-2-3 costs 1 + 1/sqrt(2).

print("d(1, 3) =", shortest_path_length(net, 1, 3))
print("s(1, 3) =", condition_similarity(net, 1, 3))
print(np.round(similarity_matrix(net, trajectories).values, 4))

# %%
# Spectral clustering on a block affinity
# ---------------------------------------
#
# Three groups of trajectories that mostly resemble their own group.  The
# Calinski-Harabasz score peaks at the true number of groups.

rng = np.random.default_rng(0)
groups = np.repeat([0, 1, 2], [6, 5, 7])
affinity = np.where(groups[:, None] == groups[None, :], 0.9, 0.05)
affinity += rng.uniform(0, 0.02, affinity.shape)
affinity = (affinity + affinity.T) / 2
np.fill_diagonal(affinity, 1.0)

result = select_k_and_cluster(affinity, seed=0)
for k, score in result.ch_scores.items():
    print(f"k={k:2d}  CH={score:10.2f}")
print("chosen k:", result.k_selected, "labels:", result.labels.tolist())
