"""Brute-force k-nearest neighbours (Minkowski distance, uniform weights)."""
from __future__ import annotations

import numpy as np


class KNeighbors:
    def __init__(self, k=2, p=2.0, chunk=64):
        self.k = k
        self.p = p
        self.chunk = chunk
        self.X = None
        self.y = None

    def fit(self, X, y) -> "KNeighbors":
        if len(X) < self.k:
            raise ValueError("fewer training rows than neighbours")
        self.X = np.asarray(X, dtype=float).copy()
        self.y = np.asarray(y, dtype=int).copy()
        return self

    def _dist(self, A):
        diff = np.abs(A[:, None, :] - self.X[None, :, :])
        if self.p == 2:
            return np.sqrt((diff * diff).sum(axis=2))
        if np.isinf(self.p):
            return diff.max(axis=2)
        return (diff**self.p).sum(axis=2) ** (1.0 / self.p)

    def neighbors(self, X) -> np.ndarray:
        """Indices of the k nearest training rows, nearest first; ties go to the lower index."""
        X = np.asarray(X, dtype=float)
        out = np.empty((len(X), self.k), dtype=np.int64)
        for s in range(0, len(X), self.chunk):
            D = self._dist(X[s:s + self.chunk])
            rows = np.arange(D.shape[0])
            for j in range(self.k):
                i = np.argmin(D, axis=1)  # first occurrence on ties
                out[s:s + D.shape[0], j] = i
                D[rows, i] = np.inf
        return out

    def score(self, X) -> np.ndarray:
        return self.y[self.neighbors(X)].mean(axis=1)

    def predict(self, X) -> np.ndarray:
        nb = self.neighbors(X)
        votes = self.y[nb].mean(axis=1)
        lab = (votes > 0.5).astype(int)
        tie = votes == 0.5
        lab[tie] = self.y[nb[tie, 0]]
        return lab

    def to_dict(self):
        return {"X": self.X.tolist(), "y": self.y.tolist()}

    def load(self, d):
        self.X = np.asarray(d["X"], dtype=float)
        self.y = np.asarray(d["y"], dtype=int)
        return self
