"""Experiment protocol: tune, detection-rate sweeps, anomaly localization.

Every random draw comes from a generator seeded by ``(seed, purpose, ...)``
so results depend only on the manifest and the seed, never on task order.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attack import build_attack, corrupt_samples, enumerate_connected_subsets
from .case_io import GridCase, load_case
from .cct import CctConfig, tune_threshold
from .detect import (
    DEFAULT_SCORE_THRESHOLD,
    anomaly_scores,
    calibrate_tolerance,
    detect,
    estimate_precision,
    run_decentralized,
)
from .gmrf import (
    CHANNELS,
    DEFAULT_SIGMA,
    PrecisionModel,
    predicted_markov_graph,
    precision_from_b,
    sample_gmrf,
    walk_summability_alpha,
)
from .grid_model import SusceptanceMatrix, build_susceptance_matrix, partition_areas
from .stream_cov import CovAccumulator, SlidingCovAccumulator

log = logging.getLogger(__name__)

# purpose codes for seed derivation
_TUNE, _CALIB, _SWEEP, _ANOMALY, _SIMULATE, _PICK = 1, 2, 3, 4, 5, 6


_UNHASHED = ("out", "jobs")


class ManifestError(ValueError):
    """Invalid experiment manifest (usage/config error)."""


@dataclass
class AttackSweep:
    kmin: int = 2
    kmax: int | None = None
    sizes: list = field(default_factory=lambda: [0.7])
    reps: int = 100
    corrupted: list = field(default_factory=lambda: [0, 10, 20, 30, 50, 80, 130])
    subsets_per_k: int | None = None
    sizing: str = "a"


@dataclass
class AnomalyConfig:
    attacked: list = field(default_factory=lambda: [4, 5, 6])
    sizes: list = field(default_factory=lambda: [0.7])
    reps: int = 100
    samples: int = 500
    threshold: float = DEFAULT_SCORE_THRESHOLD
    ridge: float | None = None


@dataclass
class ExperimentManifest:
    case: str = "case14"
    channel: str = "angle"
    sigma_p: float = DEFAULT_SIGMA
    sigma_q: float = DEFAULT_SIGMA
    noise_sigma: float = 0.0
    eta: int = 2
    xi: float | None = None
    xi_grid: list | None = None
    reference: str = "first-neighbor"
    tune_samples: int = 500
    window: int = 500
    window_mode: str = "sliding"
    calibration_windows: int = 50
    tolerance: int | None = None
    decentralized: bool = False
    attack: AttackSweep = field(default_factory=AttackSweep)
    anomaly: AnomalyConfig = field(default_factory=AnomalyConfig)
    seed: int = 0
    out: str = "out"
    jobs: int = 1

    def __post_init__(self):
        if isinstance(self.attack, dict):
            self.attack = AttackSweep(**self.attack)
        if isinstance(self.anomaly, dict):
            self.anomaly = AnomalyConfig(**self.anomaly)
        self.validate()

    def validate(self):
        if self.channel not in CHANNELS:
            raise ManifestError(f"channel must be one of {CHANNELS}")
        if self.xi_grid is not None and len(self.xi_grid) == 0:
            raise ManifestError("xi_grid is empty")
        if self.xi is not None and not self.xi > 0:
            raise ManifestError("xi must be positive")
        if self.window_mode not in ("sliding", "growing"):
            raise ManifestError("window_mode must be 'sliding' or 'growing'")
        if self.reference not in ("first-neighbor", "exact-two-hop"):
            raise ManifestError("reference must be 'first-neighbor' or 'exact-two-hop'")
        if self.attack.reps < 1 or self.anomaly.reps < 1:
            raise ManifestError("repetitions must be >= 1")
        if self.window < 2 or self.tune_samples < 2:
            raise ManifestError("window and tune_samples must be >= 2")
        if any(c < 0 or (self.window_mode == "sliding" and c > self.window)
               for c in self.attack.corrupted):
            raise ManifestError("corrupted-sample counts must lie in [0, window]")
        if self.eta < 0:
            raise ManifestError("eta must be nonnegative")

    @property
    def sigma(self) -> float:
        return self.sigma_q if self.channel == "voltage" else self.sigma_p

    def to_dict(self) -> dict:
        return asdict(self)

    def sha256(self) -> str:
        """Hash of the fields that affect results (not ``out`` or ``jobs``)."""
        doc = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def header(self) -> str:
        return f"gridcct manifest_sha256={self.sha256()} seed={self.seed}"

    @classmethod
    def from_json(cls, text: str, **overrides) -> "ExperimentManifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ManifestError("manifest must be a JSON object")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ManifestError(str(exc)) from None

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentManifest":
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"manifest {path} does not exist")
        m = cls.from_json(path.read_text(), **overrides)
        case_path = Path(m.case)
        if not case_path.is_absolute() and not case_path.exists() and m.case.endswith(
                (".m", ".json")):
            m.case = str(path.parent / m.case)
        return m

    def with_overrides(self, **kw) -> "ExperimentManifest":
        m = copy.deepcopy(self)
        for k, v in kw.items():
            if v is not None:
                setattr(m, k, v)
        m.validate()
        return m


def rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass(eq=False)
class Context:
    """Case-level objects shared by all trials of one manifest."""

    manifest: ExperimentManifest
    case: GridCase
    sm: SusceptanceMatrix
    model: PrecisionModel
    reference: frozenset

    @classmethod
    def build(cls, manifest: ExperimentManifest, case: GridCase | None = None) -> "Context":
        case = case if case is not None else load_case(manifest.case)
        sm = build_susceptance_matrix(case)
        model = precision_from_b(sm, manifest.sigma, manifest.channel)
        return cls(manifest, case, sm, model, predicted_markov_graph(model, manifest.reference))

    @property
    def variables(self):
        return self.sm.variables

    def clean_window(self, n, rng):
        return sample_gmrf(self.model, self.sm, n, rng, self.manifest.noise_sigma)

    def areas(self):
        out = []
        for sn in partition_areas(self.case):
            names = tuple(sorted(sn.augmented - {self.case.slack}))
            ref = {e for e in sn.edges if e[0] in names and e[1] in names}
            if self.manifest.reference == "exact-two-hop":
                ref = {e for e in self.reference if e[0] in names and e[1] in names}
            out.append((sn, names, frozenset(ref)))
        return out


def _cov(values):
    return np.atleast_2d(np.cov(values, rowvar=False))


def _sub_cov(Sigma, variables, names):
    idx = [variables.index(b) for b in names]
    return Sigma[np.ix_(idx, idx)]


def _tune_one(Sigma, names, reference, manifest, clean_covs):
    if manifest.xi is not None:
        # fixed threshold: the one-point grid only reports its edit distance
        res = tune_threshold(Sigma, reference, manifest.eta, [manifest.xi], variables=names,
                             max_distance=10**9)
    else:
        res = tune_threshold(Sigma, reference, manifest.eta, manifest.xi_grid, variables=names)
    xi = res.xi
    cfg = CctConfig(xi, res.eta, names)
    if manifest.tolerance is not None:
        tol = int(manifest.tolerance)
    else:
        tol = calibrate_tolerance(clean_covs, reference, cfg)
    entry = res.to_json_dict()
    entry.update({"xi": xi, "tolerance": tol, "variables": list(names),
                  "reference_edges": len(reference)})
    return entry


def tune(manifest: ExperimentManifest, ctx: Context | None = None) -> dict:
    """Tune xi on clean data and calibrate the alarm tolerance.

    Raises TuningError when no threshold beats the empty graph.
    """
    ctx = ctx or Context.build(manifest)
    clean = ctx.clean_window(manifest.tune_samples, rng_for(manifest.seed, _TUNE))
    Sigma = _cov(clean.values)
    calib = []
    if manifest.tolerance is None:
        for k in range(manifest.calibration_windows):
            w = ctx.clean_window(manifest.window, rng_for(manifest.seed, _CALIB, k))
            calib.append(_cov(w.values))
    names = ctx.variables
    out = {
        "manifest_sha256": manifest.sha256(),
        "seed": manifest.seed,
        "case": ctx.case.name or manifest.case,
        "channel": manifest.channel,
        "reference": manifest.reference,
        "alpha": walk_summability_alpha(ctx.model.R),
    }
    out["walk_summable"] = out["alpha"] < 1
    out["global"] = _tune_one(Sigma, names, ctx.reference, manifest, calib)
    if manifest.decentralized:
        areas = {}
        for sn, sub, ref in ctx.areas():
            covs = [_sub_cov(C, names, sub) for C in calib]
            areas[str(sn.area_id)] = _tune_one(_sub_cov(Sigma, names, sub), sub, ref,
                                               manifest, covs)
        out["areas"] = areas
    return out


def _configs(tuned: dict):
    g = tuned["global"]
    glob = (CctConfig(g["xi"], g["eta"], tuple(g["variables"])), g["tolerance"])
    areas = {}
    for aid, e in tuned.get("areas", {}).items():
        areas[int(aid)] = (CctConfig(e["xi"], e["eta"], tuple(e["variables"])), e["tolerance"])
    return glob, areas


def _window_samples(ctx, subset, size, count, rng):
    m = ctx.manifest
    n = m.window if m.window_mode == "sliding" else m.window + count
    samples = ctx.clean_window(n, rng)
    if count:
        spec = build_attack(ctx.sm, subset, size, count, rng, sizing=m.attack.sizing)
        samples = corrupt_samples(samples, spec, ctx.sm)
    return samples


def _accumulate(values, variables, mode, window):
    acc = (SlidingCovAccumulator(len(variables), window, variables) if mode == "sliding"
           else CovAccumulator(len(variables), variables))
    return acc.update_many(values)


def detection_trial(ctx: Context, tuned: dict, subset, size, count, rng) -> bool:
    """One window with ``count`` corrupted samples; returns the alarm."""
    m = ctx.manifest
    samples = _window_samples(ctx, subset, size, count, rng)
    (cfg, tol), area_cfgs = _configs(tuned)
    if not m.decentralized:
        acc = _accumulate(samples.values, ctx.variables, m.window_mode, m.window)
        return detect(acc, ctx.reference, cfg, tol).alarm
    accs, cfgs, tols, subnets = {}, {}, {}, []
    for sn, names, _ in ctx.areas():
        idx = [ctx.variables.index(b) for b in names]
        accs[sn.area_id] = _accumulate(samples.values[:, idx], names, m.window_mode, m.window)
        cfgs[sn.area_id], tols[sn.area_id] = area_cfgs[sn.area_id]
        subnets.append(sn)
    reports = run_decentralized(subnets, accs, cfgs, tols, slack=ctx.case.slack)
    return any(r.alarm for r in reports)


def _sweep_subsets(ctx):
    a = ctx.manifest.attack
    kmax = a.kmax if a.kmax is not None else default_kmax(ctx.case)
    subsets = enumerate_connected_subsets(ctx.case, a.kmin, kmax)
    if a.subsets_per_k is None:
        return subsets
    rng = rng_for(ctx.manifest.seed, _PICK)
    picked = []
    for k in range(a.kmin, kmax + 1):
        pool = [s for s in subsets if len(s) == k]
        if len(pool) > a.subsets_per_k:
            idx = sorted(rng.choice(len(pool), a.subsets_per_k, replace=False))
            pool = [pool[i] for i in idx]
        picked.extend(pool)
    return picked


def default_kmax(case: GridCase) -> int:
    """Largest attacked-set size swept by default (six for 14 buses, eight for 30)."""
    return 8 if case.n_buses >= 30 else 6


def _subset_rows(args):
    manifest, tuned, index, subset = args
    ctx = Context.build(manifest)
    rows = []
    a = manifest.attack
    for si, size in enumerate(a.sizes):
        for ci, count in enumerate(a.corrupted):
            hits = 0
            for r in range(a.reps):
                rng = rng_for(manifest.seed, _SWEEP, index, si, ci, r)
                hits += detection_trial(ctx, tuned, subset, size, count, rng)
            rows.append({"k": len(subset), "attacked_set": list(subset), "attack_size": size,
                         "corrupted_samples": count, "detections": hits, "reps": a.reps})
    return index, rows


def sweep(manifest: ExperimentManifest, tuned: dict, checkpoint_dir=None) -> list[dict]:
    """Detection rate per (subset, size, corrupted count).

    With ``checkpoint_dir`` every finished subset is stored as JSON and
    reused on the next call, so an interrupted sweep resumes.
    """
    ctx = Context.build(manifest)
    subsets = _sweep_subsets(ctx)
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)
    done, todo = {}, []
    for i, s in enumerate(subsets):
        f = ckpt / f"subset_{i:06d}.json" if ckpt else None
        if f and f.exists():
            doc = json.loads(f.read_text())
            if doc.get("subset") == list(s):
                done[i] = doc["rows"]
                continue
        todo.append((manifest, tuned, i, s))
    log.info("sweep: %d subsets (%d from checkpoints)", len(subsets), len(done))

    def store(i, rows):
        done[i] = rows
        if ckpt:
            tmp = ckpt / f"subset_{i:06d}.json.tmp"
            tmp.write_text(json.dumps({"subset": list(subsets[i]), "rows": rows}))
            os.replace(tmp, ckpt / f"subset_{i:06d}.json")

    if manifest.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(manifest.jobs) as pool:
            for i, rows in pool.map(_subset_rows, todo, chunksize=1):
                store(i, rows)
    else:
        for task in todo:
            store(*_subset_rows(task))
    return [row for i in sorted(done) for row in done[i]]


def aggregate_curve(rows: list[dict]) -> list[dict]:
    """Mean detection rate per (attack size, corrupted count) over all rows."""
    acc: dict = {}
    for r in rows:
        key = (r["attack_size"], r["corrupted_samples"])
        hits, trials = acc.get(key, (0, 0))
        acc[key] = (hits + r["detections"], trials + r["reps"])
    return [{"attack_size": s, "corrupted_samples": c, "detection_rate": h / t, "trials": t}
            for (s, c), (h, t) in sorted(acc.items())]


def anomaly_trial(ctx: Context, attacked, size, rng, samples=None, ridge=None,
                  threshold=DEFAULT_SCORE_THRESHOLD):
    """Scores for one fully attacked window against the topology model."""
    n = samples or ctx.manifest.anomaly.samples
    clean = ctx.clean_window(n, rng)
    spec = build_attack(ctx.sm, attacked, size, n, rng, sizing=ctx.manifest.attack.sizing)
    att = corrupt_samples(clean, spec, ctx.sm)
    Sigma_att = _cov(att.values)
    J_att = estimate_precision(Sigma_att, ridge)
    return anomaly_scores(ctx.model.J, ctx.model.covariance, J_att, np.linalg.inv(J_att),
                          ctx.variables, threshold)


def anomaly(manifest: ExperimentManifest, attacked=None, sizes=None) -> dict:
    """Per-bus anomaly scores averaged over repetitions, per attack size."""
    ctx = Context.build(manifest)
    cfg = manifest.anomaly
    attacked = tuple(sorted(attacked if attacked is not None else cfg.attacked))
    if not attacked:
        raise ManifestError("attacked set is empty")
    sizes = list(sizes if sizes is not None else cfg.sizes)
    k = len(attacked)
    results = []
    for si, size in enumerate(sizes):
        S = []
        top = exact = 0
        for r in range(cfg.reps):
            rep = anomaly_trial(ctx, attacked, size, rng_for(manifest.seed, _ANOMALY, si, r),
                                cfg.samples, cfg.ridge, cfg.threshold)
            S.append(rep.scores)
            top += set(rep.ranking()[:k]) == set(attacked)
            exact += rep.flagged == frozenset(attacked)
        S = np.array(S)
        att_mask = np.array([b in attacked for b in ctx.variables])
        results.append({
            "attack_size": size,
            "mean": S.mean(axis=0).tolist(),
            "std": S.std(axis=0, ddof=1).tolist() if cfg.reps > 1 else [0.0] * S.shape[1],
            "top_k_rate": top / cfg.reps,
            "exact_flag_rate": exact / cfg.reps,
            "false_flag_rate": float((S[:, ~att_mask] > cfg.threshold).mean()),
            "gap": float(S[:, att_mask].mean() - S[:, ~att_mask].mean()),
            "min_attacked_minus_max_other": float(
                (S[:, att_mask].min(axis=1) - S[:, ~att_mask].max(axis=1)).mean()),
        })
    return {"variables": list(ctx.variables), "attacked": list(attacked),
            "threshold": cfg.threshold, "reps": cfg.reps, "samples": cfg.samples,
            "results": results}


def simulate(manifest: ExperimentManifest, n: int, attacked=None, size=None, corrupted=0):
    """Clean (optionally attacked) sample stream for the manifest's case."""
    ctx = Context.build(manifest)
    rng = rng_for(manifest.seed, _SIMULATE)
    samples = ctx.clean_window(n, rng)
    if attacked and corrupted:
        spec = build_attack(ctx.sm, attacked, size, corrupted, rng, sizing=manifest.attack.sizing)
        samples = corrupt_samples(samples, spec, ctx.sm)
    return samples
