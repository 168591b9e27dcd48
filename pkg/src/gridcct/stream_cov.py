"""Streaming sample covariance and sample conditional covariances."""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import ModelError

__all__ = ["CovAccumulator", "SlidingCovAccumulator", "conditional_covariance", "RIDGE_REL"]

RIDGE_REL = 1e-10


class CovAccumulator:
    """Growing-window accumulator of sample mean and covariance.

    Keeps the count, the running mean and the centered scatter matrix
    ``sum (x - mean)(x - mean)^T`` (Welford/Chan update).  ``covariance()``
    returns the unbiased estimator, which equals
    ``(sum x x^T - n mean mean^T) / (n - 1)``.
    """

    def __init__(self, dim: int, variables=None):
        self.dim = int(dim)
        self.variables = tuple(variables) if variables is not None else tuple(range(dim))
        if len(self.variables) != self.dim:
            raise ModelError("variable list does not match dimension")
        self.n = 0
        self.mean = np.zeros(self.dim)
        self._scatter = np.zeros((self.dim, self.dim))

    def update(self, sample) -> "CovAccumulator":
        x = np.asarray(sample, dtype=float)
        if x.shape != (self.dim,):
            raise ModelError(f"sample has shape {x.shape}, expected ({self.dim},)")
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self._scatter += np.outer(delta, x - self.mean)
        return self

    def update_many(self, samples) -> "CovAccumulator":
        X = np.atleast_2d(np.asarray(samples, dtype=float))
        if X.shape[1] != self.dim:
            raise ModelError(f"samples have width {X.shape[1]}, expected {self.dim}")
        m = len(X)
        if m == 0:
            return self
        mb = X.mean(axis=0)
        Xc = X - mb
        delta = mb - self.mean
        total = self.n + m
        self._scatter += Xc.T @ Xc + np.outer(delta, delta) * (self.n * m / total)
        self.mean = self.mean + delta * (m / total)
        self.n = total
        return self

    def covariance(self) -> np.ndarray:
        if self.n < 2:
            raise ModelError("covariance needs at least two samples")
        C = self._scatter / (self.n - 1)
        return (C + C.T) / 2


class SlidingCovAccumulator:
    """Fixed-size FIFO window; statistics are recomputed exactly from the buffer."""

    def __init__(self, dim: int, window: int, variables=None):
        if window < 2:
            raise ModelError("window must hold at least two samples")
        self.dim = int(dim)
        self.window = int(window)
        self.variables = tuple(variables) if variables is not None else tuple(range(dim))
        self._buf: deque = deque(maxlen=self.window)

    @property
    def n(self) -> int:
        return len(self._buf)

    def update(self, sample) -> "SlidingCovAccumulator":
        x = np.asarray(sample, dtype=float)
        if x.shape != (self.dim,):
            raise ModelError(f"sample has shape {x.shape}, expected ({self.dim},)")
        self._buf.append(x)
        return self

    def update_many(self, samples) -> "SlidingCovAccumulator":
        for x in np.atleast_2d(np.asarray(samples, dtype=float)):
            self.update(x)
        return self

    @property
    def mean(self) -> np.ndarray:
        return np.mean(np.asarray(self._buf), axis=0)

    def covariance(self) -> np.ndarray:
        if self.n < 2:
            raise ModelError("covariance needs at least two samples")
        C = np.atleast_2d(np.cov(np.asarray(self._buf), rowvar=False))
        return (C + C.T) / 2


def _ridged(A):
    k = A.shape[0]
    return A + RIDGE_REL * np.trace(A) / k * np.eye(k)


def conditional_covariance(Sigma, i: int, j: int, S=()) -> float:
    """Sample conditional covariance with a tiny ridge on Sigma(S,S)."""
    Sigma = np.asarray(Sigma, dtype=float)
    S = list(S)
    if i in S or j in S:
        raise ModelError("conditioning set must exclude i and j")
    if not S:
        return float(Sigma[i, j])
    A = _ridged(Sigma[np.ix_(S, S)])
    return float(Sigma[i, j] - Sigma[i, S] @ np.linalg.solve(A, Sigma[S, j]))
