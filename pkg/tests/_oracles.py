"""Brute-force oracles, independent of the library's recursions."""

import itertools

from diamondgmc.lattice import CylinderPath, LatticeParams


def edge_label_chains(path: CylinderPath):
    """Edge labels per time slot, straight from the decision-tree layout.

    Time slot (j_1..j_n) crosses the edge labelled
    ((i_1, j_1), ..., (i_n, j_n)) where i_t is the branch decision at the
    node addressed by the segment prefix (j_1..j_{t-1}).  Nodes are read
    from the breadth-first array by level offset plus lexicographic rank.
    """
    s, n = path.params.s, path.generation
    labels = []
    for chain in itertools.product(range(1, s + 1), repeat=n):
        label = []
        for t in range(1, n + 1):
            prefix = chain[: t - 1]
            level = t - 1
            offset = (s**level - 1) // (s - 1)
            rank = 0
            for k, j in enumerate(prefix):
                rank += (j - 1) * s ** (level - 1 - k)
            label.append((path.decisions[offset + rank], chain[t - 1]))
        labels.append(tuple(label))
    return labels


def brute_shared_edges(p: CylinderPath, q: CylinderPath) -> int:
    """Number of time slots whose edge labels coincide."""
    return sum(a == b for a, b in zip(edge_label_chains(p), edge_label_chains(q)))


def all_paths(params: LatticeParams, n: int):
    """Every decision array, in raw lexicographic order (not index order)."""
    length = (params.s**n - 1) // (params.s - 1)
    return [
        CylinderPath(params, n, decisions)
        for decisions in itertools.product(range(1, params.b + 1), repeat=length)
    ]


def edge_index_from_label(params: LatticeParams, label) -> int:
    """Base-(b*s) integer of a label chain, top pair most significant."""
    idx = 0
    for i, j in label:
        idx = idx * (params.b * params.s) + (i - 1) * params.s + (j - 1)
    return idx


def brute_pair_histogram(params: LatticeParams, n: int) -> dict:
    """Histogram of shared-edge counts over all ordered path pairs."""
    paths = all_paths(params, n)
    out = {}
    for p in paths:
        for q in paths:
            k = brute_shared_edges(p, q)
            out[k] = out.get(k, 0) + 1
    return out
