"""Command line entry point: ``gridcct <subcommand> ...``.

Exit codes: 0 success, 1 pipeline error, 2 usage/config error, 3 tuning failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .case_io import load_case, to_canonical_json
from .cct import CctConfig
from .detect import anomaly_scores, detect, estimate_precision, run_decentralized
from .errors import CaseParseError, GridCctError, TuningError
from .gmrf import SampleMatrix, predicted_markov_graph
from .grid_model import build_susceptance_matrix, partition_areas
from .stream_cov import CovAccumulator
from .svg import bar_chart, line_chart

log = logging.getLogger("gridcct")

EXIT_OK, EXIT_PIPELINE, EXIT_USAGE, EXIT_TUNING = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _csv(header_comment, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _manifest(args) -> ex.ExperimentManifest:
    overrides = {"seed": args.seed, "out": args.out, "channel": args.channel}
    if getattr(args, "case", None):
        overrides["case"] = args.case
    if args.manifest:
        m = ex.ExperimentManifest.load(args.manifest, **overrides)
    else:
        m = ex.ExperimentManifest(**{k: v for k, v in overrides.items() if v is not None})
    if args.reps is not None:
        m.attack.reps = m.anomaly.reps = args.reps
    if getattr(args, "xi_grid", None) is not None:
        m.xi_grid = args.xi_grid
    m.validate()
    return m


def _tuned(args, m) -> dict:
    path = Path(args.tuned) if args.tuned else Path(m.out) / "tuned.json"
    if not path.exists():
        raise UsageError(f"tuned config {path} not found; run `gridcct tune` first")
    return json.loads(path.read_text())


def cmd_parse(args):
    case = load_case(args.case)
    text = to_canonical_json(case)
    if args.out:
        out = Path(args.out)
        _write(out / f"{case.name or 'case'}.json", text)
        if args.matrix_csv:
            sm = build_susceptance_matrix(case)
            rows = [[b, *(repr(float(v)) for v in row)] for b, row in zip(sm.bus_ids, sm.full)]
            _write(out / f"{case.name or 'case'}_B.csv",
                   _csv(f"gridcct susceptance matrix slack={case.slack}",
                        ["bus_id", *sm.bus_ids], rows))
    else:
        sys.stdout.write(text)


def cmd_predict_graph(args):
    m = _manifest(args)
    case = load_case(m.case)
    edges = sorted(predicted_markov_graph(case, args.mode))
    doc = {"case": case.name, "mode": args.mode,
           "variables": list(build_susceptance_matrix(case).variables),
           "edges": [list(e) for e in edges]}
    if args.out:
        _write(Path(m.out) / f"predicted_{args.mode}.json", _json(doc))
    else:
        sys.stdout.write(_json(doc))


def cmd_tune(args):
    m = _manifest(args)
    try:
        tuned = ex.tune(m)
    except TuningError as exc:
        log.error("tuning failed: %s", exc)
        if exc.result is not None:
            _write(Path(m.out) / "tuning_failure.json",
                   _json({"manifest_sha256": m.sha256(), "seed": m.seed,
                          "error": str(exc), "best": exc.result.to_json_dict()}))
        return EXIT_TUNING
    _write(Path(m.out) / "tuned.json", _json(tuned))
    g = tuned["global"]
    print(f"xi={g['xi']:.6g} edit_distance={g['edit_distance']} tolerance={g['tolerance']} "
          f"alpha={tuned['alpha']:.4f} walk_summable={tuned['walk_summable']}")
    return EXIT_OK


def cmd_simulate(args):
    m = _manifest(args)
    samples = ex.simulate(m, args.n, args.attacked, args.size, args.corrupted)
    header = m.header() + f" n={args.n} corrupted={args.corrupted}"
    _write(Path(m.out) / "samples.csv", samples.to_csv(header))


def cmd_sweep(args):
    m = _manifest(args)
    tuned = _tuned(args, m)
    ckpt = Path(m.out) / "checkpoints" / f"sweep_{m.sha256()[:16]}"
    rows = ex.sweep(m, tuned, checkpoint_dir=ckpt)
    out = Path(m.out)
    _write(out / "sweep.csv", _csv(
        m.header(), ["k", "attacked_set", "attack_size", "corrupted_samples", "detection_rate",
                     "reps"],
        [[r["k"], " ".join(map(str, r["attacked_set"])), r["attack_size"],
          r["corrupted_samples"], repr(r["detections"] / r["reps"]), r["reps"]] for r in rows]))
    curve = ex.aggregate_curve(rows)
    _write(out / "sweep_curve.csv", _csv(
        m.header(), ["attack_size", "corrupted_samples", "detection_rate", "trials"],
        [[c["attack_size"], c["corrupted_samples"], repr(c["detection_rate"]), c["trials"]]
         for c in curve]))
    if not args.no_svg:
        series = {}
        for c in curve:
            series.setdefault(f"attack size {c['attack_size']:g}", []).append(
                (c["corrupted_samples"], c["detection_rate"]))
        _write(out / "sweep_curve.svg", line_chart(
            series, f"Detection rate, {Path(m.case).stem}", "corrupted samples",
            "detection rate"))
    for c in curve:
        print(f"size={c['attack_size']:g} corrupted={c['corrupted_samples']} "
              f"rate={c['detection_rate']:.3f} trials={c['trials']}")


def cmd_anomaly(args):
    m = _manifest(args)
    _tuned(args, m)
    attacked = args.attacked if args.attacked is not None else m.anomaly.attacked
    if not attacked:
        raise UsageError("attacked set is empty")
    res = ex.anomaly(m, attacked, args.sizes)
    out = Path(m.out)
    rows = []
    for r in res["results"]:
        for b, mu, sd in zip(res["variables"], r["mean"], r["std"]):
            rows.append([r["attack_size"], b, repr(mu), repr(sd), int(b in res["attacked"])])
    _write(out / "anomaly.csv", _csv(
        m.header(), ["attack_size", "bus_id", "mean_score", "std_score", "attacked"], rows))
    summary = {k: v for k, v in res.items() if k != "results"}
    summary["manifest_sha256"], summary["seed"] = m.sha256(), m.seed
    summary["results"] = [{k: v for k, v in r.items() if k not in ("mean", "std")}
                          for r in res["results"]]
    _write(out / "anomaly_summary.json", _json(summary))
    if not args.no_svg:
        for r in res["results"]:
            _write(out / f"anomaly_{r['attack_size']:g}.svg", bar_chart(
                res["variables"], r["mean"],
                f"Anomaly score, attack size {r['attack_size']:g}", "bus", "mean score",
                threshold=res["threshold"], highlight=set(res["attacked"])))
    for r in res["results"]:
        print(f"size={r['attack_size']:g} top_k_rate={r['top_k_rate']:.3f} "
              f"exact_flag_rate={r['exact_flag_rate']:.3f}")


def cmd_detect(args):
    m = _manifest(args)
    tuned = _tuned(args, m)
    ctx = ex.Context.build(m)
    samples = SampleMatrix.from_csv(Path(args.samples).read_text(), channel=m.channel)
    if samples.variables != ctx.variables:
        raise UsageError("sample columns do not match the case's non-slack buses")
    values = samples.values[-m.window:]
    (cfg, tol), area_cfgs = ex._configs(tuned)
    doc = {"manifest_sha256": m.sha256(), "seed": m.seed}
    if args.decentralized:
        if not area_cfgs:
            raise UsageError("tuned config has no per-area entries (set decentralized: true)")
        subnets = partition_areas(ctx.case)
        accs = {}
        for sn in subnets:
            names = tuple(sorted(sn.augmented - {ctx.case.slack}))
            idx = [ctx.variables.index(b) for b in names]
            accs[sn.area_id] = CovAccumulator(len(names), names).update_many(values[:, idx])
        reports = run_decentralized(subnets, accs, {a: c for a, (c, _) in area_cfgs.items()},
                                    {a: t for a, (_, t) in area_cfgs.items()},
                                    slack=ctx.case.slack)
        doc["reports"] = [r.to_json_dict() for r in reports]
        alarm = any(r.alarm for r in reports)
    else:
        acc = CovAccumulator(len(ctx.variables), ctx.variables).update_many(values)
        report = detect(acc, ctx.reference, cfg, tol)
        doc["reports"] = [report.to_json_dict()]
        alarm = report.alarm
    doc["alarm"] = alarm
    if alarm:
        Sigma = np.atleast_2d(np.cov(values, rowvar=False))
        J_att = estimate_precision(Sigma, m.anomaly.ridge)
        rep = anomaly_scores(ctx.model.J, ctx.model.covariance, J_att, np.linalg.inv(J_att),
                             ctx.variables, m.anomaly.threshold)
        doc["anomaly"] = rep.to_json_dict()
    _write(Path(m.out) / "detect.json", _json(doc))
    print(f"alarm={alarm}" + (f" flagged={sorted(doc['anomaly']['flagged'])}" if alarm else ""))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="experiment manifest (JSON)")
    common.add_argument("--seed", type=int, help="override the manifest seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--reps", type=int, help="repetitions per sweep/anomaly point")
    common.add_argument("--channel", choices=["angle", "voltage"])
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gridcct", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("parse", parents=[common], help="case file -> canonical JSON")
    s.add_argument("case", help="bundled case name or path")
    s.add_argument("--matrix-csv", action="store_true", help="also write B as CSV")
    s.set_defaults(func=cmd_parse)

    s = sub.add_parser("predict-graph", parents=[common], help="Markov graph implied by topology")
    s.add_argument("--case")
    s.add_argument("--mode", choices=["first-neighbor", "exact-two-hop"],
                   default="first-neighbor")
    s.set_defaults(func=cmd_predict_graph)

    s = sub.add_parser("tune", parents=[common], help="tune xi and the alarm tolerance")
    s.add_argument("--case")
    s.add_argument("--xi-grid", type=_float_list, help="explicit comma-separated xi grid")
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("simulate", parents=[common], help="write a sample stream CSV")
    s.add_argument("--case")
    s.add_argument("-n", type=int, default=500)
    s.add_argument("--attacked", type=_int_list)
    s.add_argument("--size", type=float, default=0.7)
    s.add_argument("--corrupted", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    for name, func, help_ in (("sweep", cmd_sweep, "detection-rate sweep"),
                              ("anomaly", cmd_anomaly, "anomaly scores for one attack")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("--case")
        s.add_argument("--tuned", help="tuned config (default <out>/tuned.json)")
        s.add_argument("--no-svg", action="store_true")
        if name == "anomaly":
            s.add_argument("--attacked", type=_int_list)
            s.add_argument("--sizes", type=_float_list)
        s.set_defaults(func=func)

    s = sub.add_parser("detect", parents=[common], help="run detection on a sample CSV")
    s.add_argument("--case")
    s.add_argument("--samples", required=True)
    s.add_argument("--tuned")
    s.add_argument("--decentralized", action="store_true")
    s.set_defaults(func=cmd_detect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "xi_grid", None) == []:
            raise UsageError("xi grid is empty")
        code = args.func(args)
    except (UsageError, ex.ManifestError) as exc:
        print(f"gridcct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TuningError as exc:
        print(f"gridcct: tuning failed: {exc}", file=sys.stderr)
        return EXIT_TUNING
    except (GridCctError, OSError, CaseParseError) as exc:
        print(f"gridcct: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
