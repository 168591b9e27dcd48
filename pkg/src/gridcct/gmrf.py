"""Gaussian Markov random field view of DC phasor fluctuations.

Independent zero-mean injection fluctuations P with common standard deviation
sigma give angle fluctuations X = B_r^{-1} P, whose precision matrix is
``B_r^T B_r / sigma**2``.  The same algebra applies to voltage magnitudes and
reactive injections, selected with ``channel="voltage"``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .case_io import GridCase
from .errors import ModelError
from .grid_model import SusceptanceMatrix, build_susceptance_matrix, solve_angles

__all__ = [
    "CHANNELS",
    "DEFAULT_SIGMA",
    "ZERO_TOL",
    "PrecisionModel",
    "SampleMatrix",
    "precision_from_b",
    "partial_correlations",
    "walk_summability_alpha",
    "predicted_markov_graph",
    "sample_gmrf",
    "conditional_covariance_exact",
    "normalize_edges",
]

CHANNELS = ("angle", "voltage")
DEFAULT_SIGMA = 0.03
ZERO_TOL = 1e-9


def normalize_edges(edges) -> frozenset:
    return frozenset((min(u, v), max(u, v)) for u, v in edges if u != v)


@dataclass(frozen=True, eq=False)
class PrecisionModel:
    J: np.ndarray
    sigma: float
    susceptance: SusceptanceMatrix
    channel: str = "angle"

    @property
    def variables(self) -> tuple[int, ...]:
        return self.susceptance.variables

    @cached_property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.J)

    @cached_property
    def R(self) -> np.ndarray:
        return partial_correlations(self.J)


def precision_from_b(sm: SusceptanceMatrix, sigma: float = DEFAULT_SIGMA,
                     channel: str = "angle") -> PrecisionModel:
    if sigma <= 0:
        raise ModelError("injection standard deviation must be positive")
    if channel not in CHANNELS:
        raise ModelError(f"unknown channel {channel!r}")
    Br = sm.reduced
    try:
        np.linalg.cholesky(Br)
    except np.linalg.LinAlgError:
        raise ModelError("reduced susceptance matrix is not positive definite") from None
    J = Br.T @ Br / sigma**2
    J = (J + J.T) / 2
    J.setflags(write=False)
    return PrecisionModel(J, float(sigma), sm, channel)


def partial_correlations(J) -> np.ndarray:
    """r_ij = -J_ij / sqrt(J_ii J_jj), zero on the diagonal."""
    J = np.asarray(J, dtype=float)
    d = np.sqrt(np.diag(J))
    R = -J / np.outer(d, d)
    np.fill_diagonal(R, 0.0)
    return R


def walk_summability_alpha(R) -> float:
    """Spectral norm of the entrywise absolute partial-correlation matrix.

    Values >= 1 mean the model is not walk-summable; that is reported, not
    raised.
    """
    Rbar = np.abs(np.asarray(R, dtype=float))
    return float(np.abs(np.linalg.eigvalsh((Rbar + Rbar.T) / 2)).max())


def predicted_markov_graph(source, mode: str = "first-neighbor") -> frozenset:
    """Markov graph over non-slack buses implied by the grid.

    ``first-neighbor`` is the branch adjacency; ``exact-two-hop`` is the
    nonzero pattern of J = B_r^T B_r.  ``source`` may be a PrecisionModel,
    a SusceptanceMatrix or a GridCase.
    """
    if isinstance(source, PrecisionModel):
        sm, J = source.susceptance, source.J
    else:
        sm = source if isinstance(source, SusceptanceMatrix) else build_susceptance_matrix(source)
        J = None
    names = sm.variables
    if mode == "first-neighbor":
        M = sm.reduced
    elif mode == "exact-two-hop":
        M = J if J is not None else sm.reduced.T @ sm.reduced
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rows, cols = np.nonzero(np.triu(np.abs(M) > ZERO_TOL, k=1))
    return normalize_edges((names[i], names[j]) for i, j in zip(rows, cols))


@dataclass(eq=False)
class SampleMatrix:
    """n samples x (p-1) variables with per-sample provenance."""

    values: np.ndarray
    variables: tuple[int, ...]
    corrupted: np.ndarray = None
    seed: object = None
    channel: str = "angle"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.variables = tuple(int(v) for v in self.variables)
        if self.values.shape[1] != len(self.variables):
            raise ModelError("sample width does not match variable list")
        if not np.all(np.isfinite(self.values)):
            raise ModelError("samples must be finite")
        if self.corrupted is None:
            self.corrupted = np.zeros(len(self.values), dtype=bool)
        self.corrupted = np.asarray(self.corrupted, dtype=bool)

    @property
    def n(self) -> int:
        return len(self.values)

    def to_csv(self, header_comment: str = "") -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.variables)
        for row in self.values:
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, channel: str = "angle") -> "SampleMatrix":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        rows = list(csv.reader(lines))
        if not rows:
            raise ModelError("empty sample CSV")
        header = [int(h) for h in rows[0]]
        values = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        return cls(values.reshape(-1, len(header)), tuple(header), channel=channel)


def sample_gmrf(model: PrecisionModel, sm: SusceptanceMatrix | None = None, n: int = 1000,
                seed=None, noise_sigma: float = 0.0) -> SampleMatrix:
    """Draw n DC power-flow solutions driven by i.i.d. Gaussian injections.

    The slack absorbs the balancing injection and is excluded from the
    returned variables.  Optional white measurement noise is added last.
    """
    if n < 2:
        raise ModelError("need at least two samples")
    if noise_sigma < 0:
        raise ModelError("noise_sigma must be nonnegative")
    sm = sm if sm is not None else model.susceptance
    rng = np.random.default_rng(seed)
    P = np.zeros((n, sm.p))
    P[:, sm.keep] = rng.normal(0.0, model.sigma, size=(n, sm.p - 1))
    P[:, sm.slack_index] = -P[:, sm.keep].sum(axis=1)
    X = solve_angles(sm, P)[:, sm.keep]
    if noise_sigma > 0:
        X = X + rng.normal(0.0, noise_sigma, size=X.shape)
    return SampleMatrix(X, sm.variables, seed=seed, channel=model.channel)


def conditional_covariance_exact(Sigma, i: int, j: int, S=()) -> float:
    """Schur complement Sigma(i,j) - Sigma(i,S) Sigma(S,S)^-1 Sigma(S,j).

    Indices are matrix positions.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    S = list(S)
    if i in S or j in S:
        raise ModelError("conditioning set must exclude i and j")
    if not S:
        return float(Sigma[i, j])
    A = Sigma[np.ix_(S, S)]
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise ModelError("Sigma(S,S) is singular") from None
    if np.diag(L).min() <= np.sqrt(np.finfo(float).eps) * np.sqrt(np.abs(np.diag(A)).max()):
        raise ModelError("Sigma(S,S) is singular")
    u = np.linalg.solve(L, Sigma[S, i])
    v = np.linalg.solve(L, Sigma[S, j])
    return float(Sigma[i, j] - u @ v)


def model_for_case(case: GridCase, sigma: float = DEFAULT_SIGMA, channel: str = "angle"):
    sm = build_susceptance_matrix(case)
    return sm, precision_from_b(sm, sigma, channel)
