import itertools
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_simple_path_lengths
from mltctraj.trajectory import Trajectory
from mltctraj.trajnet import (TrajectoryNetwork, build_network, condition_similarity,
                              edge_weight, shortest_path_length, similarity_matrix,
                              trajectory_similarity)

SQ2 = math.sqrt(2.0)

# Three-trajectory fixture used throughout: the edge 2-3 appears in two
# trajectories (f = 2, w = 1/sqrt 2), every other edge once (w = 1).
FIXTURE = [(1, 2, 3), (3, 2, 4), (4, 5, 1)]
# hand-derived distances and similarities
S13 = 1 / (1 + 1 / SQ2)           # 1-2-3
S35 = 1 / (2 + 1 / SQ2)           # 3-2-1-5 or 3-2-4-5
S34 = 1 / (1 + 1 / SQ2)           # 3-2-4
SUM_12 = S13 + 1 + 0.5 + 1 + 1 + 1 + 1 + 1 + S34       # T1 x T2
SUM_13 = 0.5 + 1 + 1 + 1 + 0.5 + 1 + S34 + S35 + S13   # T1 x T3
SUM_23 = S34 + S35 + S13 + 1 + 0.5 + 1 + 1 + 1 + 0.5   # T2 x T3
FIXTURE_MATRIX = np.array([[1.0, SUM_12 / 9, SUM_13 / 9],
                           [SUM_12 / 9, 1.0, SUM_23 / 9],
                           [SUM_13 / 9, SUM_23 / 9, 1.0]])


def test_edge_weights():
    assert edge_weight(1) == 1.0
    assert edge_weight(4) == 0.5
    assert edge_weight(9) == 1 / 3
    with pytest.raises(ValueError):
        edge_weight(0)


def test_single_trajectory_edges():
    net = build_network([(1, 2, 3)])
    assert net.frequencies == {(1, 2): 1, (2, 3): 1}
    assert net.nodes == (1, 2, 3)


def test_undirected_accumulation():
    net = build_network([(1, 2, 3), (3, 2, 4)])
    assert net.frequencies[(2, 3)] == 2


def test_adjacency_counted_once_per_trajectory():
    net = build_network([(1, 2, 3)] * 3)
    assert net.frequencies == {(1, 2): 3, (2, 3): 3}


def test_patient_weighting():
    ts = [Trajectory((1, 2, 3), frozenset("abc")), Trajectory((3, 2, 4), frozenset("de"))]
    net = build_network(ts, edge_weighting="patient")
    assert net.frequencies == {(1, 2): 3, (2, 3): 5, (2, 4): 2}


def test_network_errors():
    with pytest.raises(ValueError):
        build_network([])
    with pytest.raises(ValueError):
        TrajectoryNetwork((1, 2), {(1, 1): 1})
    with pytest.raises(KeyError):
        shortest_path_length(build_network([(1, 2, 3)]), 1, 7)


def test_edge_multiset_recount_37_trajectories():
    rnd = random.Random(37)
    trajs = [tuple(rnd.sample(range(1, 13), 3)) for _ in range(37)]
    net = build_network(trajs)
    recount = {}
    for t in trajs:
        for e in {tuple(sorted(p)) for p in zip(t, t[1:])}:
            recount[e] = recount.get(e, 0) + 1
    assert net.frequencies == recount
    for e, f in net.frequencies.items():
        assert 0 < net.weights[e] <= 1 and net.weights[e] == 1 / math.sqrt(f)


def test_two_hop_beats_direct_edge():
    net = TrajectoryNetwork((1, 2, 3), {(1, 3): 1, (1, 2): 9, (2, 3): 9})
    assert shortest_path_length(net, 1, 3) == pytest.approx(2 / 3, abs=1e-15)
    assert shortest_path_length(net, 1, 1) == 0.0
    assert condition_similarity(net, 1, 3) == 1.0
    assert condition_similarity(net, 1, 3, clamp=False) == pytest.approx(1.5)


def test_unreachable_and_reciprocal():
    net = TrajectoryNetwork((1, 2, 3, 4, 5), {(1, 2): 1, (2, 3): 1, (4, 5): 1})
    assert shortest_path_length(net, 1, 4) == math.inf
    assert condition_similarity(net, 1, 4) == 0.0
    assert condition_similarity(net, 1, 3) == 0.5
    assert condition_similarity(net, 2, 2) == 1.0
    assert trajectory_similarity(net, (1, 2, 3), (4, 5)) == 0.0


def test_trajectory_similarity_identical_all_ones():
    net = TrajectoryNetwork((1, 2, 3), {(1, 2): 4, (2, 3): 4, (1, 3): 4})
    assert trajectory_similarity(net, (1, 2, 3), (1, 2, 3)) == 1.0


def test_fixture_pairwise_nine_term_sum():
    net = build_network(FIXTURE)
    assert net.frequencies == {(1, 2): 1, (2, 3): 2, (2, 4): 1, (4, 5): 1, (1, 5): 1}
    assert trajectory_similarity(net, FIXTURE[0], FIXTURE[1]) == pytest.approx(
        SUM_12 / 9, abs=1e-12)
    assert trajectory_similarity(net, FIXTURE[1], FIXTURE[0]) == trajectory_similarity(
        net, FIXTURE[0], FIXTURE[1])


def test_fixture_matrix():
    values = similarity_matrix(build_network(FIXTURE), FIXTURE).values
    np.testing.assert_allclose(values, FIXTURE_MATRIX, rtol=0, atol=1e-12)
    assert np.array_equal(values, values.T)
    assert np.all(np.diag(values) == 1.0)


def test_single_trajectory_matrix():
    assert similarity_matrix(build_network([(1, 2, 3)]), [(1, 2, 3)]).values.tolist() == [[1.0]]


def test_permutation_equivariance():
    rnd = random.Random(2)
    trajs = [tuple(rnd.sample(range(1, 9), 3)) for _ in range(8)]
    net = build_network(trajs)
    base = similarity_matrix(net, trajs).values
    perm = list(range(8))
    rnd.shuffle(perm)
    permuted = similarity_matrix(net, [trajs[i] for i in perm]).values
    np.testing.assert_allclose(permuted, base[np.ix_(perm, perm)], atol=1e-15)


def _random_network(rnd, n_nodes):
    nodes = tuple(range(n_nodes))
    edges = {}
    for a, b in itertools.combinations(nodes, 2):
        if rnd.random() < 0.45:
            edges[(a, b)] = rnd.randint(1, 12)
    return TrajectoryNetwork(nodes, edges)


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 8))
@settings(max_examples=80, deadline=None)
def test_dijkstra_matches_path_enumeration(seed, n_nodes):
    net = _random_network(random.Random(seed), n_nodes)
    for a, b in itertools.product(net.nodes, repeat=2):
        oracle = all_simple_path_lengths(net.weights, net.nodes, a, b)
        got = shortest_path_length(net, a, b)
        assert got == oracle or abs(got - oracle) <= 1e-12


@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 12))
@settings(max_examples=40, deadline=None)
def test_triangle_inequality(seed, n_nodes):
    net = _random_network(random.Random(seed), n_nodes)
    for a, b, c in itertools.product(net.nodes, repeat=3):
        assert (shortest_path_length(net, a, c)
                <= shortest_path_length(net, a, b) + shortest_path_length(net, b, c) + 1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 8))
@settings(max_examples=40, deadline=None)
def test_raising_a_frequency_never_lengthens_paths(seed, n_nodes):
    rnd = random.Random(seed)
    net = _random_network(rnd, n_nodes)
    if not net.frequencies:
        return
    edge = rnd.choice(sorted(net.frequencies))
    bumped = dict(net.frequencies)
    bumped[edge] += rnd.randint(1, 5)
    net2 = TrajectoryNetwork(net.nodes, bumped)
    for a, b in itertools.product(net.nodes, repeat=2):
        assert shortest_path_length(net2, a, b) <= shortest_path_length(net, a, b)


@given(st.lists(st.permutations(list(range(1, 8))).map(lambda p: tuple(p[:3])),
                min_size=1, max_size=10), st.booleans())
@settings(max_examples=60, deadline=None)
def test_similarity_matrix_properties(trajs, clamp):
    values = similarity_matrix(build_network(trajs), trajs, clamp).values
    assert np.array_equal(values, values.T)
    assert np.all(np.diag(values) == 1.0)
    if clamp:
        assert np.all((values >= 0) & (values <= 1))
    else:
        assert np.all(values >= 0)
