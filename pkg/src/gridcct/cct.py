"""Conditional Covariance Test for Gaussian graphical model selection.

An edge (i, j) is kept when every conditioning set S of at most ``eta``
other variables leaves a conditional covariance larger than ``xi`` in
magnitude.  The minimum over S is the pair's *witness*.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError, TuningError
from .gmrf import SampleMatrix, normalize_edges
from .stream_cov import RIDGE_REL

__all__ = [
    "CctConfig",
    "MarkovGraph",
    "TuningResult",
    "witness_matrix",
    "run_cct",
    "edit_distance",
    "tune_threshold",
    "default_xi_grid",
    "min_sample_guidance",
]

_CHUNK = 1024


@dataclass(frozen=True)
class CctConfig:
    xi: float
    eta: int = 2
    variables: tuple | None = None

    def __post_init__(self):
        if not self.xi > 0:
            raise ModelError("xi must be positive")
        if self.eta < 0:
            raise ModelError("eta must be nonnegative")


@dataclass(frozen=True)
class MarkovGraph:
    edges: frozenset
    witnesses: dict = field(compare=False)
    variables: tuple = ()
    xi: float = 0.0
    eta: int = 0

    def to_json_dict(self) -> dict:
        return {
            "variables": list(self.variables),
            "xi": self.xi,
            "eta": self.eta,
            "edges": [
                {"u": u, "v": v, "witness": self.witnesses[(u, v)]} for u, v in sorted(self.edges)
            ],
        }

    def adjacency(self) -> np.ndarray:
        idx = {b: i for i, b in enumerate(self.variables)}
        A = np.zeros((len(idx), len(idx)), dtype=int)
        for u, v in self.edges:
            A[idx[u], idx[v]] = A[idx[v], idx[u]] = 1
        return A


def _source(source, variables):
    """Return (Sigma, variables) from a covariance, accumulator or samples."""
    if isinstance(source, SampleMatrix):
        Sigma, names = np.cov(source.values, rowvar=False), source.variables
    elif hasattr(source, "covariance") and callable(source.covariance):
        Sigma, names = source.covariance(), tuple(source.variables)
    else:
        Sigma = np.asarray(source, dtype=float)
        names = tuple(variables) if variables is not None else tuple(range(len(Sigma)))
    Sigma = np.atleast_2d(Sigma)
    if Sigma.shape != (len(names), len(names)):
        raise ModelError("covariance shape does not match the variable list")
    return (Sigma + Sigma.T) / 2, names


def _effective_eta(eta, p):
    cap = max(p - 3, 0)
    if eta > cap:
        warnings.warn(f"eta={eta} exceeds p-3={cap} for {p} variables; using {cap}", stacklevel=3)
        return cap
    return eta


def witness_matrix(Sigma, eta: int = 2) -> np.ndarray:
    """min over |S| <= eta of |Sigma(i,j|S)| for every pair; diagonal is 0.

    Every conditioning set is evaluated (no early exit) so witnesses are
    exact minima.  Sigma(S,S) gets a ridge of 1e-10 * trace/|S|.
    """
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    p = Sigma.shape[0]
    W = np.abs(Sigma).copy()
    for size in range(1, min(eta, max(p - 2, 0)) + 1):
        combos = np.array(list(itertools.combinations(range(p), size)), dtype=int)
        for start in range(0, len(combos), _CHUNK):
            sets = combos[start : start + _CHUNK]
            A = Sigma[sets[:, :, None], sets[:, None, :]]
            ridge = RIDGE_REL * np.trace(A, axis1=1, axis2=2) / size
            A = A + ridge[:, None, None] * np.eye(size)
            X = Sigma[sets]  # (m, size, p)
            Y = np.linalg.solve(A, X)
            C = np.abs(Sigma[None] - np.einsum("msi,msj->mij", X, Y))
            m = len(sets)
            rows = np.repeat(np.arange(m), size)
            flat = sets.ravel()
            C[rows, flat, :] = np.inf
            C[rows, :, flat] = np.inf
            W = np.minimum(W, C.min(axis=0))
    np.fill_diagonal(W, 0.0)
    return W


def _edges_from_witness(W, names, xi):
    iu, ju = np.triu_indices(len(names), 1)
    keep = W[iu, ju] > xi
    return normalize_edges((names[i], names[j]) for i, j in zip(iu[keep], ju[keep]))


def _witness_dict(W, names):
    iu, ju = np.triu_indices(len(names), 1)
    out = {}
    for i, j in zip(iu, ju):
        u, v = names[i], names[j]
        out[(min(u, v), max(u, v))] = float(W[i, j])
    return out


def run_cct(source, config: CctConfig) -> MarkovGraph:
    """Learn the Markov graph from a covariance estimate.

    ``source`` is a covariance matrix (ordered like ``config.variables``), a
    stream accumulator, or a SampleMatrix.
    """
    Sigma, names = _source(source, config.variables)
    eta = _effective_eta(config.eta, len(names))
    W = witness_matrix(Sigma, eta)
    return MarkovGraph(_edges_from_witness(W, names, config.xi), _witness_dict(W, names),
                       names, config.xi, eta)


def edit_distance(a, b) -> int:
    """Number of edges present in exactly one of the two graphs."""
    return len(normalize_edges(a) ^ normalize_edges(b))


@dataclass(frozen=True)
class TuningResult:
    xi: float
    distance: int
    interval: tuple[float, float]
    eta: int
    grid: tuple
    distances: tuple
    min_edge_witness: float
    max_nonedge_witness: float
    misordered_pairs: int

    @property
    def witness_gap(self) -> float:
        """Ratio of weakest reference edge to strongest non-edge; > 1 means separable."""
        if self.max_nonedge_witness == 0:
            return math.inf
        return self.min_edge_witness / self.max_nonedge_witness

    def to_json_dict(self) -> dict:
        return {
            "xi": self.xi,
            "edit_distance": self.distance,
            "interval": list(self.interval),
            "eta": self.eta,
            "min_edge_witness": self.min_edge_witness,
            "max_nonedge_witness": self.max_nonedge_witness,
            "witness_gap": self.witness_gap if math.isfinite(self.witness_gap) else None,
            "misordered_pairs": self.misordered_pairs,
        }


def default_xi_grid(W, num: int = 400) -> np.ndarray:
    vals = np.asarray(W)[np.triu_indices(len(W), 1)]
    vals = vals[vals > 0]
    if vals.size == 0:
        return np.array([1e-12])
    return np.geomspace(vals.min() / 2, vals.max() * 2, num)


def tune_threshold(clean, reference, eta: int = 2, xi_grid=None, *, variables=None,
                   max_distance: int | None = None) -> TuningResult:
    """Pick xi as the midpoint of the widest grid run with minimal edit distance.

    Raises TuningError when the best distance exceeds ``max_distance``
    (default: no better than the empty graph).
    """
    Sigma, names = _source(clean, variables)
    eta = _effective_eta(eta, len(names))
    W = witness_matrix(Sigma, eta)
    reference = normalize_edges(reference)
    grid = np.sort(np.asarray(default_xi_grid(W) if xi_grid is None else xi_grid, dtype=float))
    if grid.size == 0:
        raise ValueError("empty xi grid")
    if np.any(grid <= 0):
        raise ValueError("xi grid must be positive")

    iu, ju = np.triu_indices(len(names), 1)
    wv = W[iu, ju]
    is_ref = np.array([(min(names[i], names[j]), max(names[i], names[j])) in reference
                       for i, j in zip(iu, ju)], dtype=bool)
    # distance(xi) = #ref edges with w <= xi + #non-edges with w > xi
    dist = np.array([int(np.sum(is_ref & (wv <= x)) + np.sum(~is_ref & (wv > x))) for x in grid])
    extra = len(reference - {(min(names[i], names[j]), max(names[i], names[j]))
                             for i, j in zip(iu, ju)})
    dist = dist + extra
    best = int(dist.min())

    runs, start = [], None
    for k, d in enumerate(dist):
        if d == best and start is None:
            start = k
        if d != best and start is not None:
            runs.append((start, k - 1))
            start = None
    if start is not None:
        runs.append((start, len(dist) - 1))
    lo, hi = max(runs, key=lambda r: (grid[r[1]] - grid[r[0]], -r[0]))
    edge_w = wv[is_ref]
    non_w = wv[~is_ref]
    min_edge = float(edge_w.min()) if edge_w.size else math.inf
    max_non = float(non_w.max()) if non_w.size else 0.0
    misordered = int(np.sum(non_w >= min_edge)) if edge_w.size else 0
    result = TuningResult(
        xi=float((grid[lo] + grid[hi]) / 2), distance=best,
        interval=(float(grid[lo]), float(grid[hi])), eta=eta,
        grid=tuple(float(g) for g in grid), distances=tuple(int(d) for d in dist),
        min_edge_witness=min_edge, max_nonedge_witness=max_non, misordered_pairs=misordered,
    )
    limit = max_distance if max_distance is not None else len(reference) - 1
    if reference and best > limit:
        raise TuningError(f"best edit distance {best} exceeds the bound {limit}", result)
    return result


def min_sample_guidance(j_min: float, p: int, C: float = 1.0) -> int:
    """Samples suggested by n = C * J_min^-2 * ln p (guidance only)."""
    if j_min <= 0 or p < 2:
        raise ValueError("need j_min > 0 and p >= 2")
    return math.ceil(C * j_min**-2 * math.log(p))
