"""Susceptance matrix, DC power flow, hop distances and area partitioning."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .case_io import GridCase
from .errors import PowerFlowError

__all__ = [
    "SusceptanceMatrix",
    "SubNetwork",
    "build_susceptance_matrix",
    "solve_angles",
    "injections_from_angles",
    "hop_distances",
    "partition_areas",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SusceptanceMatrix:
    """Bus susceptance matrix B (P = B X) with its slack-reduced form.

    Rows and columns of ``full`` follow ``bus_ids``.  ``reduced`` drops the
    slack row/column and is indexed by ``variables`` (the non-slack buses),
    which is the variable order used by every statistical routine.
    """

    full: np.ndarray
    bus_ids: tuple[int, ...]
    slack: int

    @cached_property
    def index(self) -> dict[int, int]:
        return {b: i for i, b in enumerate(self.bus_ids)}

    @cached_property
    def slack_index(self) -> int:
        return self.index[self.slack]

    @cached_property
    def keep(self) -> np.ndarray:
        return np.array([i for i in range(len(self.bus_ids)) if i != self.slack_index])

    @cached_property
    def variables(self) -> tuple[int, ...]:
        return tuple(self.bus_ids[i] for i in self.keep)

    @cached_property
    def var_index(self) -> dict[int, int]:
        return {b: i for i, b in enumerate(self.variables)}

    @cached_property
    def reduced(self) -> np.ndarray:
        return _frozen(self.full[np.ix_(self.keep, self.keep)])

    @cached_property
    def measurement(self) -> np.ndarray:
        """H mapping non-slack angles to all bus injections (p x p-1)."""
        return _frozen(self.full[:, self.keep])

    @property
    def p(self) -> int:
        return len(self.bus_ids)


def build_susceptance_matrix(case: GridCase) -> SusceptanceMatrix:
    ids = tuple(case.bus_ids)
    idx = {b: i for i, b in enumerate(ids)}
    B = np.zeros((len(ids), len(ids)))
    for f, t, b in case.branches:
        i, j = idx[f], idx[t]
        B[i, j] -= b
        B[j, i] -= b
        B[i, i] += b
        B[j, j] += b
    return SusceptanceMatrix(_frozen(B), ids, case.slack)


def solve_angles(sm: SusceptanceMatrix, injections, balance_tol: float = 1e-9) -> np.ndarray:
    """DC power flow: angles (slack fixed at 0) for a balanced injection vector.

    ``injections`` may be a single vector of length p or a (n, p) batch.
    """
    P = np.asarray(injections, dtype=float)
    single = P.ndim == 1
    P = np.atleast_2d(P)
    if P.shape[1] != sm.p:
        raise PowerFlowError(f"expected {sm.p} injections, got {P.shape[1]}")
    imbalance = np.abs(P.sum(axis=1)).max()
    if imbalance > balance_tol * max(1.0, np.abs(P).max()):
        raise PowerFlowError(f"injections are unbalanced (sum {imbalance:.3e})")
    try:
        Xr = np.linalg.solve(sm.reduced, P[:, sm.keep].T).T
    except np.linalg.LinAlgError:
        raise PowerFlowError("reduced susceptance matrix is singular") from None
    X = np.zeros_like(P)
    X[:, sm.keep] = Xr
    return X[0] if single else X


def injections_from_angles(sm: SusceptanceMatrix, angles) -> np.ndarray:
    """Bus injections P_i = sum_j b_ij (X_i - X_j)."""
    return np.asarray(angles, dtype=float) @ sm.full.T


def hop_distances(case: GridCase) -> np.ndarray:
    """Unweighted graph distances between buses, in ``case.bus_ids`` order."""
    ids = case.bus_ids
    idx = {b: i for i, b in enumerate(ids)}
    A = np.zeros((len(ids), len(ids)))
    for f, t, _ in case.branches:
        A[idx[f], idx[t]] = A[idx[t], idx[f]] = 1
    d = shortest_path(A, method="D", unweighted=True, directed=False)
    return d.astype(int)


@dataclass(frozen=True)
class SubNetwork:
    area_id: int
    interior: frozenset
    border: frozenset
    augmented: frozenset
    edges: frozenset

    @property
    def buses(self) -> frozenset:
        return self.interior | self.border


def partition_areas(case: GridCase) -> list[SubNetwork]:
    """One SubNetwork per area, with border buses' outside neighbors appended."""
    g = case.graph()
    areas = case.areas
    out = []
    for area in sorted(set(areas.values())):
        members = {b for b, a in areas.items() if a == area}
        border = {b for b in members if any(areas[n] != area for n in g[b])}
        outside = {n for b in border for n in g[b] if areas[n] != area}
        augmented = members | outside
        edges = {(min(u, v), max(u, v)) for u, v in g.subgraph(augmented).edges}
        out.append(
            SubNetwork(area, frozenset(members - border), frozenset(border),
                       frozenset(augmented), frozenset(edges))
        )
    return out
