import numpy as np
import pytest

from emmwsed.consensus import (NetworkConfigError, build_network, consensus_window, edge_count,
                               generate_network, metropolis_weights, run_consensus)
from emmwsed.stats import rng_stream

from oracles import bfs_connected


def test_complete_graph():
    net = generate_network(4, 1.0, rng_stream(0))
    assert len(net.edges) == 6


def test_edge_count_example():
    assert edge_count(10, 0.2) == 9
    net = generate_network(10, 0.2, rng_stream(1))
    assert len(net.edges) == 9


def test_generated_graphs_connected():
    for seed in range(100):
        net = generate_network(20, 0.2, rng_stream(seed))
        assert len(net.edges) == 38
        assert bfs_connected(20, net.edges)


def test_infeasible_connectivity():
    with pytest.raises(NetworkConfigError):
        generate_network(10, 0.1, rng_stream(0))
    with pytest.raises(NetworkConfigError):
        generate_network(10, 0.0, rng_stream(0))


def test_single_su():
    net = generate_network(1, 0.5, rng_stream(0))
    assert net.weights.shape == (1, 1) and net.weights[0, 0] == 1.0
    run = run_consensus([7.0], net.weights)
    assert run.iterations == 0 and run.consensus_value == 7.0


def test_metropolis_path_and_triangle():
    W = metropolis_weights(3, [(0, 1), (1, 2)])
    np.testing.assert_allclose(W, [[0.5, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0.5]])
    W = metropolis_weights(3, [(0, 1), (1, 2), (0, 2)])
    np.testing.assert_allclose(W, [[0, 0.5, 0.5], [0.5, 0, 0.5], [0.5, 0.5, 0]])


def test_weights_doubly_stochastic_symmetric_and_sparse():
    for seed in range(100):
        rng = rng_stream(seed)
        n = int(rng.integers(2, 40))
        c = float(rng.uniform(0.3, 1.0))
        if edge_count(n, c) < n - 1:
            c = 1.0
        net = generate_network(n, c, rng)
        W = net.weights
        np.testing.assert_allclose(W.sum(0), 1, atol=1e-12)
        np.testing.assert_allclose(W.sum(1), 1, atol=1e-12)
        np.testing.assert_array_equal(W, W.T)
        adj = np.eye(n, dtype=bool)
        for i, j in net.edges:
            adj[i, j] = adj[j, i] = True
        assert np.all(W[~adj] == 0)


def test_edge_list_export(tmp_path):
    net = build_network(3, [(0, 1), (2, 1)])
    assert net.to_edge_list() == "1 2\n2 3\n"
    net.write_edge_list(tmp_path / "g.txt")
    assert (tmp_path / "g.txt").read_text() == "1 2\n2 3\n"


def test_consensus_trivial_cases():
    W = metropolis_weights(3, [(0, 1), (1, 2), (0, 2)])
    assert run_consensus([4.0, 4.0, 4.0], W).iterations == 0
    run = run_consensus([0.0, 3.0, 3.0], W, tol=1e-12, max_iter=200)
    np.testing.assert_allclose(run.trace[1], [3.0, 1.5, 1.5])
    assert run.consensus_value == pytest.approx(2.0, rel=1e-9)


def test_nonconvergence_flagged():
    net = generate_network(10, 0.2, rng_stream(3))
    run = run_consensus(np.arange(10.0) + 1, net.weights, tol=1e-9, max_iter=2)
    assert not run.converged and run.iterations == 2


def test_mean_preservation_and_contraction():
    for seed in range(30):
        rng = rng_stream(seed, 1)
        net = generate_network(15, 0.25, rng)
        y0 = rng.chisquare(12, size=15)
        run = run_consensus(y0, net.weights, tol=1e-6, max_iter=2000)
        means = run.trace.mean(axis=1)
        np.testing.assert_allclose(means, y0.mean(), rtol=1e-9)
        dev = np.max(np.abs(run.trace - y0.mean()), axis=1)
        assert np.all(np.diff(dev) <= 1e-12)


def test_consensus_window():
    net = generate_network(6, 0.6, rng_stream(4))
    X = rng_stream(5).chisquare(12, size=(6, 20))
    out = consensus_window(X, net.weights, tol=0.01)
    np.testing.assert_allclose(out.values, X.mean(axis=0), rtol=1e-9)
    # D = 1 reduces to run_consensus
    single = consensus_window(X[:, :1], net.weights, tol=0.01)
    run = run_consensus(X[:, 0], net.weights, tol=0.01)
    assert single.iterations[0] == run.iterations
    assert single.values[0] == pytest.approx(run.consensus_value, rel=1e-12)
    # per-column iterations match independent runs
    for d in range(20):
        assert out.iterations[d] == run_consensus(X[:, d], net.weights, tol=0.01).iterations
    same = consensus_window(np.tile(X[:1], (6, 1)), net.weights)
    np.testing.assert_allclose(same.values, X[0])
    assert np.all(same.iterations == 0)


def _median_iterations(n, c, seeds=100):
    out = []
    for seed in range(seeds):
        rng = rng_stream(seed, n, int(c * 100))
        net = generate_network(n, c, rng)
        out.append(run_consensus(rng.chisquare(12, size=n), net.weights, tol=0.01).iterations)
    return float(np.median(out))


def test_iterations_fall_with_connectivity_and_size():
    a = _median_iterations(10, 0.2)
    b = _median_iterations(10, 0.5)
    c = _median_iterations(30, 0.2)
    assert b < a and c < a
    assert b <= 20
