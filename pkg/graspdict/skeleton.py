"""Hand-object skeleton graph and its fixed pooling hierarchy (29 → 14 → 7)."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from graspdict import NUM_BOX_CORNERS, NUM_HAND_JOINTS, NUM_KEYPOINTS
from graspdict.numerics import ShapeMismatch

logger = logging.getLogger(__name__)

FINGERS = ("thumb", "index", "middle", "ring", "pinky")
JOINTS_PER_FINGER = 4

# Wrist with the proximal thumb joints, then (proximal, distal) pairs per
# finger, then the box corners paired along x'.
CLUSTERS_29_TO_14 = (
    (0, 1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14),
    (15, 16), (17, 18), (19, 20), (21, 22), (23, 24), (25, 26), (27, 28))
# One node per finger (the thumb keeps the wrist), box pairs along y'.
CLUSTERS_14_TO_7 = (
    (0, 1), (2, 3), (4, 5), (6, 7), (8, 9), (10, 11), (12, 13))


def hand_bones():
    bones = []
    for finger in range(len(FINGERS)):
        base = 1 + JOINTS_PER_FINGER * finger
        chain = [0] + list(range(base, base + JOINTS_PER_FINGER))
        bones.extend(zip(chain[:-1], chain[1:]))
    return bones


def box_edges():
    """Corner pairs that differ in exactly one sign bit."""
    edges = []
    for corner in range(NUM_BOX_CORNERS):
        for axis in range(3):
            other = corner | (1 << axis)
            if other != corner:
                edges.append((NUM_HAND_JOINTS + corner,
                              NUM_HAND_JOINTS + other))
    return edges


def wrist_bridges():
    return [(0, NUM_HAND_JOINTS + corner) for corner in range(NUM_BOX_CORNERS)]


class SkeletonGraph:

    def __init__(self, node_count, edges):
        self.node_count = node_count
        self.edges = [tuple(sorted(edge)) for edge in edges]
        adjacency = np.eye(node_count)
        for first, second in self.edges:
            adjacency[first, second] = adjacency[second, first] = 1.0
        self.adjacency = adjacency

    @property
    def propagation(self):
        """Row-normalized adjacency D^-1 (A + I)."""
        return self.adjacency / self.adjacency.sum(axis=1, keepdims=True)

    def is_connected(self):
        count, _ = connected_components(csr_matrix(self.adjacency),
                                        directed=False)
        return count == 1

    def pool(self, clusters):
        """Coarsen by the node clusters; returns ``(graph, pool, unpool)``.

        ``pool`` (coarse × fine) averages the members of a cluster,
        ``unpool`` (fine × coarse) copies a coarse node back to them.
        """
        members = sorted(node for cluster in clusters for node in cluster)
        if members != list(range(self.node_count)):
            raise ShapeMismatch(
                "Pooling clusters must partition the graph nodes")
        owner = {node: index for index, cluster in enumerate(clusters)
                 for node in cluster}
        pool = np.zeros((len(clusters), self.node_count))
        for index, cluster in enumerate(clusters):
            pool[index, list(cluster)] = 1.0 / len(cluster)
        unpool = (pool > 0).astype(np.float64).T
        coarse_edges = {tuple(sorted((owner[first], owner[second])))
                        for first, second in self.edges
                        if owner[first] != owner[second]}
        return SkeletonGraph(len(clusters), sorted(coarse_edges)), pool, unpool


@dataclass
class GraphLevel:
    graph: SkeletonGraph
    pool: np.ndarray = None
    unpool: np.ndarray = None


def hand_object_skeleton():
    return SkeletonGraph(NUM_KEYPOINTS,
                         hand_bones() + box_edges() + wrist_bridges())


def build_hierarchy():
    """Graph levels of 29, 14 and 7 nodes; ``pool`` maps level i to i+1."""
    levels = [GraphLevel(hand_object_skeleton())]
    for clusters in (CLUSTERS_29_TO_14, CLUSTERS_14_TO_7):
        coarse, pool, unpool = levels[-1].graph.pool(clusters)
        levels[-1].pool = pool
        levels[-1].unpool = unpool
        levels.append(GraphLevel(coarse))
    return levels
