"""Graph statistics on the positive part of a connectivity matrix."""

import logging
from typing import Mapping, Sequence, Union

import networkx as nx
import numpy as np

from resources.utils.errors import InvalidParameter, NoPositiveEdges

logger = logging.getLogger(__name__)


def edge_weights(C, absolute: bool = False) -> np.ndarray:
    """Off-diagonal weights: C+ (negatives and NaN dropped), or |C| when ``absolute``."""
    W = np.asarray(C, dtype=float).copy()
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise InvalidParameter(f"expected a square matrix, got shape {W.shape}")
    W = np.nan_to_num(W, nan=0.0)
    W = np.abs(W) if absolute else np.clip(W, 0.0, None)
    np.fill_diagonal(W, 0.0)
    return W


def to_graph(C, absolute: bool = False) -> nx.Graph:
    """Undirected graph with ``weight`` = correlation and ``length`` = 1 / weight."""
    W = edge_weights(C, absolute)
    G = nx.Graph()
    G.add_nodes_from(range(W.shape[0]))
    rows, cols = np.nonzero(np.triu(W, 1))
    for i, j in zip(rows.tolist(), cols.tolist()):
        G.add_edge(i, j, weight=float(W[i, j]), length=1.0 / float(W[i, j]))
    return G


def global_efficiency(C, absolute: bool = False) -> float:
    """Mean inverse weighted shortest-path length over ordered node pairs; unreachable pairs count 0."""
    G = to_graph(C, absolute)
    K = G.number_of_nodes()
    if K < 2:
        raise InvalidParameter("global efficiency needs at least two nodes")
    total = 0.0
    for source, lengths in nx.all_pairs_dijkstra_path_length(G, weight="length"):
        total += sum(1.0 / d for target, d in lengths.items() if target != source)
    return total / (K * (K - 1))


def _communities(partition: Union[Mapping[int, int], Sequence[int]], K: int) -> list[set]:
    labels = partition if isinstance(partition, Mapping) else dict(enumerate(partition))
    if sorted(labels) != list(range(K)):
        raise InvalidParameter("partition must assign every node exactly once")
    groups: dict = {}
    for node in range(K):
        groups.setdefault(labels[node], set()).add(node)
    return list(groups.values())


def modularity(C, partition, absolute: bool = False) -> float:
    """Newman weighted modularity of ``partition`` (node -> community) on C+."""
    G = to_graph(C, absolute)
    if G.number_of_edges() == 0:
        raise NoPositiveEdges("modularity is undefined without positive edges")
    return float(nx.community.modularity(G, _communities(partition, G.number_of_nodes()), weight="weight"))


def detect_communities(C, absolute: bool = False) -> list[int]:
    """Greedy modularity maximisation; communities are numbered by their lowest node."""
    G = to_graph(C, absolute)
    if G.number_of_edges() == 0:
        raise NoPositiveEdges("community detection needs positive edges")
    found = nx.community.greedy_modularity_communities(G, weight="weight")
    labels = [0] * G.number_of_nodes()
    for label, members in enumerate(sorted(found, key=min)):
        for node in members:
            labels[node] = label
    logger.debug("[NET] %d communities over %d nodes", len(found), G.number_of_nodes())
    return labels
