"""Stealthy deception attacks a = H d on connected bus subsets."""

from __future__ import annotations

import json
import math
import warnings
from functools import lru_cache
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np
from scipy import integrate, special

from .case_io import GridCase
from .errors import AttackError, ModelError
from .gmrf import SampleMatrix
from .grid_model import SusceptanceMatrix

__all__ = [
    "AttackSpec",
    "enumerate_connected_subsets",
    "expected_gaussian_norm",
    "build_attack",
    "attack_vectors",
    "corrupt_samples",
    "image_residual",
    "stealthiness_check",
]


def _adjacency(case: GridCase, exclude=()):
    adj = {b: set() for b in case.bus_ids if b not in exclude}
    for f, t, _ in case.branches:
        if f in adj and t in adj:
            adj[f].add(t)
            adj[t].add(f)
    return adj


def _esu(adj, kmax):
    """Each connected vertex set of size <= kmax exactly once (ESU scheme)."""
    for v in sorted(adj):
        stack = [(frozenset([v]), frozenset(u for u in adj[v] if u > v))]
        while stack:
            sub, ext = stack.pop()
            yield sub
            if len(sub) == kmax:
                continue
            nbhd = set().union(*(adj[s] for s in sub)) | sub
            ext = sorted(ext)
            while ext:
                w = ext.pop()
                new = set(ext) | {u for u in adj[w] if u > v and u not in nbhd}
                stack.append((sub | {w}, frozenset(new)))


def enumerate_connected_subsets(case: GridCase, kmin: int, kmax: int) -> list[tuple[int, ...]]:
    """Connected non-slack bus subsets with kmin <= size <= kmax.

    Sorted by size, then lexicographically.
    """
    if not 2 <= kmin <= kmax:
        raise AttackError("need 2 <= kmin <= kmax")
    limit = case.n_buses - 1
    if kmax > limit:
        warnings.warn(f"kmax={kmax} exceeds {limit} non-slack buses; clamped", stacklevel=2)
        kmax = limit
    adj = _adjacency(case, exclude={case.slack})
    found = {tuple(sorted(s)) for s in _esu(adj, kmax) if len(s) >= kmin}
    return sorted(found, key=lambda s: (len(s), s))


def expected_gaussian_norm(eigenvalues) -> float:
    """E||y|| for y ~ N(0, C) where C has the given eigenvalues.

    Uses E sqrt(Q) = (2 sqrt(pi))^-1 int_0^inf (1 - E exp(-tQ)) t^-3/2 dt with
    E exp(-tQ) = prod (1 + 2 t lam)^-1/2.
    """
    lam = np.asarray([x for x in np.ravel(eigenvalues) if x > 0], dtype=float)
    if lam.size == 0:
        return 0.0
    scale = lam.sum()
    lam = lam / scale

    def integrand(u):
        # t = u^2 / (1 - u)^2 maps [0, 1) onto [0, inf)
        if u <= 0:
            return 0.0
        t = (u / (1 - u)) ** 2
        dt = 2 * u / (1 - u) ** 3
        mgf = np.exp(-0.5 * np.sum(np.log1p(2 * t * lam)))
        return (1 - mgf) * t**-1.5 * dt

    val, _ = integrate.quad(integrand, 0, 1, limit=200, epsabs=1e-13, epsrel=1e-11)
    return float(math.sqrt(scale) * val / (2 * math.sqrt(math.pi)))


@lru_cache(maxsize=4096)
def _unit_norm(sm: SusceptanceMatrix, cols: tuple, sizing: str) -> float:
    """Expected norm of the attack (a or d) for unit-variance d coordinates."""
    if sizing == "d":
        return _chi_mean(len(cols))
    M = sm.measurement[:, list(cols)]
    return expected_gaussian_norm(np.linalg.eigvalsh(M.T @ M))


def _chi_mean(k):
    return math.sqrt(2) * math.exp(special.gammaln((k + 1) / 2) - special.gammaln(k / 2))


@dataclass(frozen=True)
class AttackSpec:
    """Attack on a connected bus subset.

    ``d`` holds one state perturbation per corrupted sample (rows) over the
    non-slack variables; it is zero outside the attacked buses.  ``scale`` is
    the per-coordinate standard deviation of d on the attacked buses.
    """

    attacked: tuple[int, ...]
    attack_size: float
    duration: int
    seed: int | None
    scale: float
    sizing: str = "a"
    d: np.ndarray = field(default=None, compare=False, repr=False)

    def to_json(self) -> str:
        doc = {
            "attacked": list(self.attacked), "attack_size": self.attack_size,
            "duration": self.duration, "seed": self.seed, "sizing": self.sizing,
            "scale": self.scale,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str, sm: SusceptanceMatrix) -> "AttackSpec":
        doc = json.loads(text)
        return build_attack(sm, doc["attacked"], doc["attack_size"], doc["duration"],
                            doc["seed"], sizing=doc.get("sizing", "a"))


def _branch_graph(sm: SusceptanceMatrix) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(sm.bus_ids)
    rows, cols = np.nonzero(np.triu(sm.full != 0, k=1))
    g.add_edges_from((sm.bus_ids[i], sm.bus_ids[j]) for i, j in zip(rows, cols))
    return g


def build_attack(sm: SusceptanceMatrix, attacked, attack_size: float,
                 duration: int, seed=None, sizing: str = "a") -> AttackSpec:
    """Draw i.i.d. Gaussian state perturbations on ``attacked``.

    With ``sizing="a"`` the scale is chosen so E||H d|| equals ``attack_size``;
    with ``sizing="d"`` so that E||d|| does.
    """
    attacked = tuple(sorted(int(b) for b in attacked))
    if not attacked:
        raise AttackError("attacked set is empty")
    if not attack_size > 0:
        raise AttackError("attack_size must be positive")
    if duration < 0:
        raise AttackError("duration must be nonnegative")
    if sm.slack in attacked:
        raise AttackError("the slack bus cannot be attacked")
    unknown = set(attacked) - set(sm.variables)
    if unknown:
        raise AttackError(f"unknown buses {sorted(unknown)}")
    g = _branch_graph(sm).subgraph(attacked)
    if not nx.is_connected(g):
        raise AttackError(f"attacked set {attacked} is not connected")
    cols = [sm.var_index[b] for b in attacked]
    if sizing not in ("a", "d"):
        raise AttackError(f"unknown sizing {sizing!r}")
    scale = attack_size / _unit_norm(sm, tuple(cols), sizing)
    rng = np.random.default_rng(seed)
    d = np.zeros((duration, len(sm.variables)))
    d[:, cols] = rng.normal(0.0, scale, size=(duration, len(cols)))
    d.setflags(write=False)
    return AttackSpec(attacked, float(attack_size), int(duration), seed, float(scale), sizing, d)


def attack_vectors(spec: AttackSpec, sm: SusceptanceMatrix) -> np.ndarray:
    """Measurement-space attacks a = H d, one row per corrupted sample."""
    return spec.d @ sm.measurement.T


def corrupt_samples(samples, spec: AttackSpec, sm: SusceptanceMatrix, start: int | None = None):
    """Apply the attack to consecutive samples (the newest ones by default).

    A SampleMatrix of non-slack angles gets X + d.  A raw (n, p) injection
    array gets P + a instead.
    """
    if isinstance(samples, SampleMatrix):
        X = samples.values.copy()
        if X.shape[1] != spec.d.shape[1]:
            raise ModelError("sample width does not match the attack")
        delta = spec.d
    else:
        X = np.atleast_2d(np.asarray(samples, dtype=float)).copy()
        if X.shape[1] != sm.p:
            raise ModelError("injection width does not match the grid")
        delta = attack_vectors(spec, sm)
    n = len(X)
    if spec.duration > n:
        raise ModelError("attack lasts longer than the sample stream")
    start = n - spec.duration if start is None else start
    if start < 0 or start + spec.duration > n:
        raise ModelError("attack window out of range")
    X[start : start + spec.duration] += delta
    if not isinstance(samples, SampleMatrix):
        return X
    flags = samples.corrupted.copy()
    flags[start : start + spec.duration] = True
    return replace(samples, values=X, corrupted=flags)


def _residual(z, H):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    coef, *_ = np.linalg.lstsq(H, z.T, rcond=None)
    return z - (H @ coef).T


def image_residual(a, sm: SusceptanceMatrix) -> float:
    """Largest ||(I - H H^+) a|| over the rows of ``a``."""
    return float(np.linalg.norm(_residual(a, sm.measurement), axis=1).max())


def stealthiness_check(z_attacked, sm: SusceptanceMatrix, z_clean=None) -> float:
    """Change of the DC least-squares residual caused by the attack.

    Returns max over samples of ||r(z^a) - r(z)||, where r is the residual of
    the fit z ~ H x.  Without ``z_clean`` the residual of ``z_attacked``
    itself is measured.
    """
    H = sm.measurement
    r = _residual(z_attacked, H)
    if z_clean is not None:
        r = r - _residual(z_clean, H)
    return float(np.linalg.norm(r, axis=1).max())
