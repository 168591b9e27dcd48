"""Alarm on Markov-graph/topology mismatch and localize attacked buses."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cct import CctConfig, run_cct, witness_matrix
from .errors import ModelError
from .gmrf import normalize_edges
from .grid_model import SubNetwork

__all__ = [
    "DEFAULT_SCORE_THRESHOLD",
    "DetectionReport",
    "AnomalyReport",
    "detect",
    "calibrate_tolerance",
    "estimate_precision",
    "conditional_kl",
    "anomaly_scores",
    "localize",
    "run_decentralized",
]

DEFAULT_SCORE_THRESHOLD = 0.3
DEFAULT_RIDGE_REL = 1e-6


@dataclass(frozen=True)
class DetectionReport:
    area_id: int | None
    learned: frozenset
    reference: frozenset
    edit_distance: int
    alarm: bool
    n: int
    xi: float
    eta: int
    tolerance: int

    def to_json_dict(self) -> dict:
        return {
            "area_id": self.area_id,
            "alarm": self.alarm,
            "edit_distance": self.edit_distance,
            "tolerance": self.tolerance,
            "n": self.n,
            "config": {"xi": self.xi, "eta": self.eta},
            "learned": [list(e) for e in sorted(self.learned)],
            "reference": [list(e) for e in sorted(self.reference)],
            "missing": [list(e) for e in sorted(self.reference - self.learned)],
            "spurious": [list(e) for e in sorted(self.learned - self.reference)],
        }


def detect(accumulator, reference, config: CctConfig, tolerance: int = 0,
           area_id: int | None = None) -> DetectionReport:
    """Run CCT on the accumulator and raise the alarm if the edit distance
    to ``reference`` exceeds ``tolerance``."""
    if accumulator.n < 2:
        raise ModelError("accumulator needs at least two samples")
    graph = run_cct(accumulator, config)
    reference = normalize_edges(reference)
    dist = len(graph.edges ^ reference)
    return DetectionReport(area_id, graph.edges, reference, dist, dist > tolerance,
                           accumulator.n, config.xi, graph.eta, int(tolerance))


def calibrate_tolerance(clean_covariances, reference, config: CctConfig,
                        quantile: float = 1.0) -> int:
    """Edit-distance tolerance from CCT runs on independent clean windows.

    Returns the given quantile (default: the maximum) of the observed clean
    edit distances, so clean windows of the same size stay below the alarm.
    """
    reference = normalize_edges(reference)
    names = config.variables
    dists = []
    for Sigma in clean_covariances:
        W = witness_matrix(Sigma, config.eta)
        iu, ju = np.triu_indices(len(names), 1)
        keep = W[iu, ju] > config.xi
        learned = normalize_edges((names[i], names[j]) for i, j in zip(iu[keep], ju[keep]))
        dists.append(len(learned ^ reference))
    if not dists:
        raise ValueError("no clean windows supplied")
    return int(math.ceil(np.quantile(dists, quantile)))


def estimate_precision(Sigma, ridge: float | None = None) -> np.ndarray:
    """Inverse of Sigma + ridge * I.

    The default ridge is 1e-6 * trace(Sigma) / dim.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    Sigma = (Sigma + Sigma.T) / 2
    k = Sigma.shape[0]
    if ridge is None:
        ridge = DEFAULT_RIDGE_REL * np.trace(Sigma) / k
    A = Sigma + ridge * np.eye(k)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise ModelError("covariance is not positive definite after the ridge") from None
    Linv = np.linalg.inv(L)
    J = Linv.T @ Linv
    return (J + J.T) / 2


def _check_pd(M, what):
    try:
        np.linalg.cholesky((M + M.T) / 2)
    except np.linalg.LinAlgError:
        raise ModelError(f"{what} is not positive definite") from None


def conditional_kl(J_a, Sigma_a, J_b) -> np.ndarray:
    """Per-variable expected KL between Gaussian full conditionals, under A.

    For variable i with lam = J_ii and l = J_{-i,i}, the conditional is
    N(-l.z / lam, 1 / lam).  Averaging KL(A_i || B_i) over z ~ A gives
    0.5 * [ln(lam_a/lam_b) + lam_b/lam_a - 1 + lam_b * u' W_a u] with
    u = l_a/lam_a - l_b/lam_b and W_a the covariance of z under A.
    """
    J_a, Sigma_a, J_b = (np.asarray(m, dtype=float) for m in (J_a, Sigma_a, J_b))
    la, lb = np.diag(J_a), np.diag(J_b)
    # columns J[:, i] / J_ii with the diagonal entry zeroed give l / lam
    U = J_a / la - J_b / lb
    np.fill_diagonal(U, 0.0)
    # u' W u with W = Sigma_a minus row/col i; the zeroed entry removes i
    quad = np.einsum("ki,kl,li->i", U, Sigma_a, U)
    return 0.5 * (np.log(la / lb) + lb / la - 1.0 + lb * quad)


@dataclass(frozen=True)
class AnomalyReport:
    variables: tuple
    scores: np.ndarray
    threshold: float
    flagged: frozenset
    J_ref: np.ndarray = field(repr=False)
    J_att: np.ndarray = field(repr=False)

    def ranking(self) -> list[int]:
        order = np.argsort(-self.scores, kind="stable")
        return [self.variables[i] for i in order]

    def to_json_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "flagged": sorted(self.flagged),
            "scores": {str(b): float(s) for b, s in zip(self.variables, self.scores)},
        }

    def to_csv(self) -> str:
        lines = ["bus_id,score"]
        lines += [f"{b},{float(s)!r}" for b, s in zip(self.variables, self.scores)]
        return "\n".join(lines) + "\n"


def anomaly_scores(J_ref, Sigma_ref, J_att, Sigma_att, variables=None,
                   threshold: float = DEFAULT_SCORE_THRESHOLD) -> AnomalyReport:
    """Correlation anomaly score a_i = max(d_i^{ref,att}, d_i^{att,ref})."""
    mats = [np.asarray(m, dtype=float) for m in (J_ref, Sigma_ref, J_att, Sigma_att)]
    k = mats[0].shape[0]
    if any(m.shape != (k, k) for m in mats):
        raise ModelError("all matrices must share one variable set")
    _check_pd(mats[0], "reference precision")
    _check_pd(mats[2], "attacked precision")
    d_ab = conditional_kl(mats[0], mats[1], mats[2])
    d_ba = conditional_kl(mats[2], mats[3], mats[0])
    scores = np.maximum(np.maximum(d_ab, d_ba), 0.0)
    variables = tuple(variables) if variables is not None else tuple(range(k))
    flagged = frozenset(b for b, s in zip(variables, scores) if s > threshold)
    return AnomalyReport(variables, scores, float(threshold), flagged, mats[0], mats[2])


def localize(report: AnomalyReport, threshold: float = DEFAULT_SCORE_THRESHOLD) -> frozenset:
    return frozenset(b for b, s in zip(report.variables, report.scores) if s > threshold)


def _per_area(value, area_id):
    return value[area_id] if isinstance(value, dict) else value


def run_decentralized(subnetworks: list[SubNetwork], accumulators, config, tolerance=0,
                      slack: int | None = None) -> list[DetectionReport]:
    """Detect independently in every area over its augmented bus set.

    ``accumulators``, ``config`` and ``tolerance`` may be dicts keyed by area
    id.  Each accumulator must cover exactly the augmented non-slack buses.
    """
    reports = []
    for sn in subnetworks:
        acc = accumulators[sn.area_id] if isinstance(accumulators, dict) else accumulators[
            subnetworks.index(sn)]
        expected = sorted(sn.augmented - {slack})
        if sorted(acc.variables) != expected:
            raise ModelError(f"accumulator for area {sn.area_id} does not cover its augmented set")
        cfg = _per_area(config, sn.area_id)
        if cfg.variables is None or tuple(cfg.variables) != tuple(acc.variables):
            cfg = CctConfig(cfg.xi, cfg.eta, tuple(acc.variables))
        members = set(acc.variables)
        reference = {e for e in sn.edges if e[0] in members and e[1] in members}
        reports.append(detect(acc, reference, cfg, _per_area(tolerance, sn.area_id), sn.area_id))
    return reports
