"""Lloyd's k-means with k-means++ seeding."""

import logging

import numpy as np
from scipy.spatial.distance import cdist

from graspdict import InputError
from graspdict.numerics import make_rng

logger = logging.getLogger(__name__)


class TooFewPoints(InputError):
    pass


class LloydClusterer:

    def __init__(self, k, seed=0, max_iterations=300):
        self._k = int(k)
        self._seed = seed
        self._max_iterations = max_iterations
        self.centers = None
        self.labels = None
        self.objectives = []
        self.iterations = 0

    def fit(self, points):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] < 1:
            raise InputError("k-means needs a non-empty (n, d) point array")
        if self._k < 1 or points.shape[0] < self._k:
            raise TooFewPoints(
                f"Cannot form {self._k} clusters from {points.shape[0]} points")
        rng = make_rng(self._seed, "kmeans++")
        centers = self._seed_centers(points, rng)
        labels, distances = self._assign(points, centers)
        self.objectives = [distances.sum()]
        for iteration in range(1, self._max_iterations + 1):
            centers = self._update_centers(points, labels, distances)
            new_labels, distances = self._assign(points, centers)
            self.objectives.append(distances.sum())
            self.iterations = iteration
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        self.centers = centers
        self.labels = labels
        logger.debug("k-means converged after %d iterations, objective %.6g",
                     self.iterations, self.objectives[-1])
        return self

    def _seed_centers(self, points, rng):
        """k-means++: sample every further center with probability ~ D^2."""
        count = points.shape[0]
        chosen = [int(rng.integers(count))]
        closest = cdist(points, points[chosen], "sqeuclidean")[:, 0]
        while len(chosen) < self._k:
            total = closest.sum()
            if total > 0.0:
                candidate = int(rng.choice(count, p=closest / total))
            else:
                # All remaining points coincide with a center.
                candidate = int(rng.integers(count))
            chosen.append(candidate)
            closest = np.minimum(
                closest,
                cdist(points, points[[candidate]], "sqeuclidean")[:, 0])
        return points[chosen].copy()

    @staticmethod
    def _assign(points, centers):
        squared = cdist(points, centers, "sqeuclidean")
        labels = squared.argmin(axis=1)
        return labels, squared[np.arange(points.shape[0]), labels]

    def _update_centers(self, points, labels, distances):
        centers = np.empty((self._k, points.shape[1]))
        empty = []
        for cluster in range(self._k):
            members = points[labels == cluster]
            if len(members) == 0:
                empty.append(cluster)
            else:
                centers[cluster] = members.mean(axis=0)
        if empty:
            # Re-seed empty clusters with the points farthest from their
            # current centers.
            filled = [cluster for cluster in range(self._k)
                      if cluster not in empty]
            residual = cdist(points, centers[filled], "sqeuclidean").min(axis=1)
            for cluster in empty:
                farthest = int(residual.argmax())
                centers[cluster] = points[farthest]
                residual[farthest] = -1.0
            logger.debug("Re-seeded %d empty clusters", len(empty))
        return centers


def kmeans(points, k, seed=0, max_iterations=300):
    """Return the (k, d) cluster centers of ``points``."""
    return LloydClusterer(k, seed=seed, max_iterations=max_iterations).fit(
        points).centers
