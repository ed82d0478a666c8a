"""Command-line front end.

    shapeopt sweep    --spec spec.json [--preset desk|paper] [--workers N] [--resume]
    shapeopt sizes    --spec spec.json --sizes 256,1024,8192 [--preset ...]
    shapeopt pmf      constellation.json [--out table.csv]
    shapeopt optimize --spec spec.json --out final.json [--resume trace.ndjson]

Exit codes: 0 success, 2 configuration error, 3 partial failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError
from .experiments import (
    PRESET_EVAL_SYMBOLS,
    PRESETS,
    ExperimentSpec,
    FiberEvaluator,
    _NdjsonWriter,
    _derive_seed,
    BASES,
    read_ndjson,
    report_amplitude_pmf,
    run_power_sweep,
    run_size_study,
)
from .exchange import write_constellation
from .optimizer import optimize


def _load_spec(path: str, preset: str | None) -> ExperimentSpec:
    try:
        spec = ExperimentSpec.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read spec {path}: {e}") from e
    if preset:
        link = PRESETS[preset](seed=spec.link.seed)
        link = replace(
            link,
            total_launch_power=spec.link.total_launch_power,
            edfa_noise_figure=spec.link.edfa_noise_figure,
            received_power_target=spec.link.received_power_target,
        )
        spec = replace(
            spec,
            link=link,
            optimizer=replace(spec.optimizer, eval_symbols=PRESET_EVAL_SYMBOLS[preset]),
        )
    spec.validate()
    return spec


def _cmd_sweep(args) -> int:
    spec = _load_spec(args.spec, args.preset)
    rows = run_power_sweep(spec, workers=args.workers, resume=args.resume)
    for r in rows:
        print(f"{r.strategy} @ {r.launch_power_dbm:+.2f} dBm: "
              f"MI = {r.mi_bits_per_4d:.4f} +- {r.mi_se:.4f} bits/4D [{r.status}]")
    return 3 if any(r.status != "ok" for r in rows) else 0


def _cmd_sizes(args) -> int:
    spec = _load_spec(args.spec, args.preset)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    rows = run_size_study(spec, sizes)
    for r in rows:
        gain = "" if r.gain_bits_per_4d is None else f" gain = {r.gain_bits_per_4d:+.4f}"
        print(f"{r.strategy} n_ball={r.n_ball}: MI = {r.mi_bits_per_4d:.4f}{gain} [{r.status}]")
    return 3 if any(r.status != "ok" for r in rows) else 0


def _cmd_pmf(args) -> int:
    rows = report_amplitude_pmf(args.constellation)
    header = ("energy", "size", "probability", "scale", "pruned")
    print(f"{'energy':>12} {'size':>8} {'probability':>14} {'scale':>8}  pruned")
    for r in rows[:-1]:
        print(f"{r['energy']:12.6f} {r['size']:8d} {r['probability']:14.8e} "
              f"{r['scale']:8.4f}  {'yes' if r['pruned'] else 'no'}")
    tot = rows[-1]
    print(f"{'total':>12} {tot['size']:8d} {tot['probability']:14.8e}")
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            for r in rows:
                w.writerow([r[k] for k in header])
    return 0


def _cmd_optimize(args) -> int:
    spec = _load_spec(args.spec, args.preset)
    power = spec.power_sweep[0]
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "trace.ndjson"
    resume_records = read_ndjson(args.resume) if args.resume else None

    base = BASES[spec.base]()
    link = replace(spec.link, total_launch_power=power)
    evaluator = FiberEvaluator(link, spec.optimizer.eval_symbols, spec.aux_mode)
    cfg = replace(spec.optimizer, seed=_derive_seed(spec.link.seed, power, 0))
    trace = optimize(base, evaluator, cfg, on_record=_NdjsonWriter(trace_path),
                     resume_records=resume_records)
    if trace.final_constellation is None:
        print("optimizer aborted before producing a constellation", file=sys.stderr)
        return 3
    acs = trace.final_classes
    write_constellation(
        args.out, trace.final_constellation,
        metadata={
            "base": spec.base,
            "launch_power_dbm": power,
            "class_scales": [c.scale for c in acs.classes],
            "class_probabilities": [c.class_probability for c in acs.classes],
        },
    )
    print(f"final MI = {trace.final_report.mi_bits_per_4d:.4f} bits/4D after "
          f"{trace.epochs_run} epochs; {trace.nonzero_points} live points in "
          f"{trace.nonzero_classes} amplitude classes -> {args.out}")
    return 3 if trace.aborted else 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="shapeopt", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="launch-power sweep for one strategy")
    p.add_argument("--spec", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("sizes", help="gain vs constellation size study")
    p.add_argument("--spec", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--sizes", required=True, help="comma-separated n_ball values")
    p.set_defaults(fn=_cmd_sizes)

    p = sub.add_parser("pmf", help="per-amplitude PMF report of a constellation file")
    p.add_argument("constellation")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_pmf)

    p = sub.add_parser("optimize", help="run the greedy optimizer, write the result")
    p.add_argument("--spec", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="trace.ndjson of an interrupted run")
    p.set_defaults(fn=_cmd_optimize)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
