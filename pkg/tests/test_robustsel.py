import itertools

import numpy as np
import pytest

from tunnelslam.errors import MissingOdometrySpan, SizeLimit
from tunnelslam.geom import Pose3, compose, exp_map, inverse
from tunnelslam.graphcore import DEFAULT_ODOMETRY_INFO, Edge
from tunnelslam.robustsel import (
    ConsistencyGraph,
    DEFAULT_GAMMA,
    OdometryChain,
    consistency_graph,
    max_clique,
    pairwise_consistency,
    pcm_filter,
)


def brute_force_max_clique(adjacency):
    """Largest clique by subset enumeration; lex-smallest among ties."""
    n = len(adjacency)
    best = []
    for size in range(n, 0, -1):
        found = []
        for combo in itertools.combinations(range(n), size):
            if all(adjacency[a][b] for a, b in itertools.combinations(combo, 2)):
                found.append(list(combo))
        if found:
            best = min(found)
            break
    return best


def random_graph(rng, n, p):
    adjacency = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            adjacency[i, j] = adjacency[j, i] = rng.random() < p
    return ConsistencyGraph(list(range(n)), adjacency, gamma=1.0)


def ladder_fixture(rng, steps=10, chain_noise=0.0):
    """Ground-truth poses for two robots plus their odometry chains."""
    step = exp_map(np.array([0.0, 0.0, 0.06, 1.2, 0.0, 0.0]))
    true = {}
    for robot in range(2):
        p = Pose3() if robot == 0 else exp_map(np.array([0, 0, 0.4, 1.0, 2.5, 0.0]))
        true[(robot, 0)] = p
        for i in range(1, steps):
            p = compose(p, step)
            true[(robot, i)] = p
    chains = {}
    for robot in range(2):
        edges = []
        for i in range(steps - 1):
            meas = compose(inverse(true[(robot, i)]), true[(robot, i + 1)])
            if chain_noise > 0.0:
                meas = compose(meas, exp_map(rng.normal(scale=chain_noise, size=6)))
            edges.append(Edge((robot, i), (robot, i + 1), meas, DEFAULT_ODOMETRY_INFO))
        chains[robot] = OdometryChain(edges)
    return true, chains


def make_loop(true, i, k, offset=None):
    meas = compose(inverse(true[(0, i)]), true[(1, k)])
    if offset is not None:
        meas = compose(meas, offset)
    return Edge((0, i), (1, k), meas, DEFAULT_ODOMETRY_INFO, kind="inter_robot")


class TestOdometryChain:
    def test_span_composes_and_inverts(self):
        rng = np.random.default_rng(0)
        true, chains = ladder_fixture(rng)
        pose, cov = chains[0].span(2, 7)
        expected = compose(inverse(true[(0, 2)]), true[(0, 7)])
        d = compose(inverse(expected), pose)
        assert np.linalg.norm(np.asarray(d.t)) < 1e-12
        back, cov_back = chains[0].span(7, 2)
        d = compose(pose, back)
        assert np.linalg.norm(np.asarray(d.t)) < 1e-12
        assert np.allclose(cov, cov_back)
        # five unit edges of summed covariance
        assert np.allclose(cov, 5 * np.linalg.inv(DEFAULT_ODOMETRY_INFO))

    def test_identity_span(self):
        rng = np.random.default_rng(1)
        _, chains = ladder_fixture(rng)
        pose, cov = chains[0].span(4, 4)
        assert np.linalg.norm(np.asarray(pose.t)) == 0.0
        assert np.all(cov == 0.0)

    def test_missing_span(self):
        edges = [
            Edge((0, 0), (0, 1), Pose3(t=[1, 0, 0]), np.eye(6)),
            Edge((0, 3), (0, 4), Pose3(t=[1, 0, 0]), np.eye(6)),
        ]
        chain = OdometryChain(edges)
        with pytest.raises(MissingOdometrySpan):
            chain.span(0, 4)
        with pytest.raises(MissingOdometrySpan):
            chain.span(1, 2)
        # a gapped chain still serves the spans it has
        pose, _ = chain.span(3, 4)
        assert np.allclose(pose.t, [1, 0, 0])

    def test_rejects_mixed_robots(self):
        edges = [
            Edge((0, 0), (0, 1), Pose3(t=[1, 0, 0]), np.eye(6)),
            Edge((1, 0), (1, 1), Pose3(t=[1, 0, 0]), np.eye(6)),
        ]
        with pytest.raises(ValueError):
            OdometryChain(edges)


class TestPairwiseConsistency:
    def test_exact_loops_score_zero(self):
        rng = np.random.default_rng(2)
        true, chains = ladder_fixture(rng)
        z1 = make_loop(true, 1, 2)
        z2 = make_loop(true, 6, 8)
        value = pairwise_consistency(z1, z2, chains[0], chains[1])
        assert value < 1e-16

    def test_perturbed_loop_scores_high(self):
        rng = np.random.default_rng(3)
        true, chains = ladder_fixture(rng)
        z1 = make_loop(true, 1, 1)
        z2 = make_loop(true, 6, 6, offset=Pose3(t=[5.0, 0.0, 0.0]))
        value = pairwise_consistency(z1, z2, chains[0], chains[1])
        # 25 m^2 over ~0.12 m^2 of stacked covariance
        assert value > 10 * DEFAULT_GAMMA

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(4)
        true, chains = ladder_fixture(rng, chain_noise=0.01)
        for _ in range(20):
            i, j = rng.integers(0, 10, size=2)
            k, l = rng.integers(0, 10, size=2)
            off = exp_map(rng.normal(scale=0.3, size=6))
            z1 = make_loop(true, int(i), int(k), offset=off)
            z2 = make_loop(true, int(j), int(l))
            v12 = pairwise_consistency(z1, z2, chains[0], chains[1])
            v21 = pairwise_consistency(z2, z1, chains[0], chains[1])
            assert abs(v12 - v21) < 1e-9

    def test_wrong_robot_pair_rejected(self):
        rng = np.random.default_rng(5)
        true, chains = ladder_fixture(rng)
        z1 = make_loop(true, 1, 2)
        with pytest.raises(ValueError):
            pairwise_consistency(z1, z1, chains[1], chains[0])


class TestMaxClique:
    def test_triangle_plus_pendant(self):
        adjacency = np.zeros((4, 4), dtype=bool)
        for a, b in [(0, 1), (1, 2), (0, 2), (2, 3)]:
            adjacency[a, b] = adjacency[b, a] = True
        graph = ConsistencyGraph([0, 1, 2, 3], adjacency, gamma=1.0)
        assert max_clique(graph) == [0, 1, 2]

    def test_complete_graph(self):
        adjacency = ~np.eye(5, dtype=bool)
        graph = ConsistencyGraph(list(range(5)), adjacency, gamma=1.0)
        assert max_clique(graph) == [0, 1, 2, 3, 4]

    def test_empty_and_single(self):
        assert max_clique(ConsistencyGraph([], np.zeros((0, 0), dtype=bool), 1.0)) == []
        graph = ConsistencyGraph([7], np.zeros((1, 1), dtype=bool), 1.0)
        assert max_clique(graph) == [7]

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(6)
        for trial in range(50):
            graph = random_graph(rng, 12, 0.5)
            got = max_clique(graph)
            want = brute_force_max_clique(graph.adjacency)
            assert got == want, f"trial {trial}: {got} vs {want}"

    def test_matches_brute_force_sizes_up_to_15(self):
        rng = np.random.default_rng(7)
        trials = 0
        for n in range(2, 16):
            for p in (0.2, 0.5, 0.8):
                for _ in range(5):
                    graph = random_graph(rng, n, p)
                    got = max_clique(graph)
                    want = brute_force_max_clique(graph.adjacency)
                    assert got == want
                    trials += 1
        assert trials == 14 * 3 * 5

    def test_lexicographic_tie_break(self):
        # two disjoint triangles: {0,2,4} and {1,3,5}; lex-smallest wins
        adjacency = np.zeros((6, 6), dtype=bool)
        for a, b in [(0, 2), (2, 4), (0, 4), (1, 3), (3, 5), (1, 5)]:
            adjacency[a, b] = adjacency[b, a] = True
        graph = ConsistencyGraph(list(range(6)), adjacency, gamma=1.0)
        assert max_clique(graph) == [0, 2, 4]

    def test_size_limit(self):
        n = 501
        graph = ConsistencyGraph(list(range(n)), np.zeros((n, n), dtype=bool), 1.0)
        with pytest.raises(SizeLimit):
            max_clique(graph)
        assert len(max_clique(graph, limit=501)) == 1

    def test_invalid_adjacency(self):
        bad = np.zeros((2, 2), dtype=bool)
        bad[0, 1] = True
        with pytest.raises(ValueError):
            ConsistencyGraph([0, 1], bad, 1.0)
        with pytest.raises(ValueError):
            ConsistencyGraph([0, 1], np.eye(2, dtype=bool), 1.0)


class TestPcmFilter:
    def test_all_consistent_returns_all(self):
        rng = np.random.default_rng(8)
        true, chains = ladder_fixture(rng)
        loops = [make_loop(true, i, i) for i in range(8)]
        kept = pcm_filter(loops, chains[0], chains[1])
        assert kept == loops

    def test_planted_outliers_removed(self):
        rng = np.random.default_rng(9)
        true, chains = ladder_fixture(rng)
        good = [make_loop(true, i, i) for i in (0, 2, 4, 5, 7, 9)]
        bad_offsets = [
            Pose3(t=[6.0, 0, 0]),
            Pose3(t=[0, -7.0, 0]),
            exp_map(np.array([0, 0, 1.0, 3.0, 3.0, 0.0])),
        ]
        bad = [make_loop(true, 2 * n, 2 * n + 1, offset=off)
               for n, off in enumerate(bad_offsets)]
        loops = [good[0], bad[0], good[1], good[2], bad[1], good[3], bad[2],
                 good[4], good[5]]
        kept = pcm_filter(loops, chains[0], chains[1])
        assert kept == good

    def test_output_pairs_satisfy_gamma(self):
        rng = np.random.default_rng(10)
        true, chains = ladder_fixture(rng, chain_noise=0.01)
        loops = [make_loop(true, i, i,
                           offset=exp_map(rng.normal(scale=0.05, size=6)))
                 for i in range(9)]
        loops += [make_loop(true, 1, 8, offset=Pose3(t=[4, 4, 0]))]
        kept = pcm_filter(loops, chains[0], chains[1])
        assert len(kept) >= 2
        for a, b in itertools.combinations(kept, 2):
            assert pairwise_consistency(a, b, chains[0], chains[1]) <= DEFAULT_GAMMA

    def test_empty_and_single(self):
        rng = np.random.default_rng(11)
        true, chains = ladder_fixture(rng)
        assert pcm_filter([], chains[0], chains[1]) == []
        one = [make_loop(true, 3, 3)]
        assert pcm_filter(one, chains[0], chains[1]) == one

    def test_mixed_robot_pairs_rejected(self):
        rng = np.random.default_rng(12)
        true, chains = ladder_fixture(rng)
        flipped = Edge((1, 0), (0, 0), Pose3(), DEFAULT_ODOMETRY_INFO,
                       kind="inter_robot")
        with pytest.raises(ValueError):
            pcm_filter([make_loop(true, 0, 0), flipped], chains[0], chains[1])

    def test_equals_exhaustive_search_random(self):
        # oracle: largest subset whose pairs all pass the gamma test,
        # lexicographic tie-break
        rng = np.random.default_rng(13)
        for trial in range(100):
            true, chains = ladder_fixture(rng, chain_noise=0.005)
            n = int(rng.integers(3, 11))
            loops = []
            for m in range(n):
                i = int(rng.integers(0, 10))
                k = int(rng.integers(0, 10))
                if rng.random() < 0.4:
                    off = exp_map(np.concatenate([
                        rng.normal(scale=0.4, size=3),
                        rng.normal(scale=3.0, size=3),
                    ]))
                else:
                    off = None
                loops.append(make_loop(true, i, k, offset=off))
            graph = consistency_graph(loops, chains[0], chains[1])
            want_idx = brute_force_max_clique(graph.adjacency)
            want = [loops[i] for i in want_idx]
            got = pcm_filter(loops, chains[0], chains[1])
            assert got == want, f"trial {trial}"
