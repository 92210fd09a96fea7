import itertools
from pathlib import Path

import networkx as nx
import numpy as np
import pytest

from conflict_graph import bipartite8, from_networkx, ring

INPUTS = Path(__file__).resolve().parent.parent / "inputs"


@pytest.fixture
def inputs_dir():
    return INPUTS


@pytest.fixture
def ring6():
    return ring(6)


@pytest.fixture
def bipartite():
    return bipartite8()


@pytest.fixture
def random_graph():
    """Seeded G(n, 0.4) graphs relabelled to links 1..n."""

    def build(n, seed, p=0.4):
        return from_networkx(nx.gnp_random_graph(n, p, seed=seed))

    return build


def _all_norms(graph, a):
    """‖Pa‖∞ for every priority vector, vectorized over all n! permutations."""
    n = graph.n
    adjacency = np.zeros((n, n), dtype=bool)
    for i, j in graph.edges:
        adjacency[i - 1, j - 1] = adjacency[j - 1, i - 1] = True
    perms = np.array(list(itertools.permutations(range(1, n + 1))))
    # higher[m, i, j]: j is a neighbor of i with higher priority under perms[m]
    higher = adjacency[None, :, :] & (perms[:, None, :] < perms[:, :, None])
    loads = a[None, :] + (higher * a[None, None, :]).sum(axis=2)
    return perms, loads.max(axis=1)


@pytest.fixture
def brute_min_norm():
    def minimum(graph, a):
        _, norms = _all_norms(graph, np.asarray(a, dtype=float))
        return float(norms.min())

    return minimum
