"""Command line entry point: ``subbit {quantize,flip,report,synth,bits}``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .allocation import NMRatio, Strategy
from .errors import SubbitError, ValidationError
from .packing import bit_report, decode, nm_scaled_bits
from .pipeline import QuantConfig, evaluate_layer, flip_experiment, quantize_model
from .scoring import ScorerKind
from .tensorio import load_manifest, load_tensor, synth_model, write_manifest

log = logging.getLogger("subbit")


def _dump_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _fractions(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from exc


def _nm(text):
    try:
        return NMRatio.parse(text)
    except ValidationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def cmd_quantize(args):
    manifest = load_manifest(args.manifest)
    config = QuantConfig(
        scorer=args.scorer, strategy=args.strategy, nm=args.nm, block_size=args.block_size,
        lambda_rel=args.lambda_rel, sigma_ratio=args.sigma, grid_points=args.grid_points,
        salient_cap=args.salient_cap, renormalize=not args.no_renormalize, seed=args.seed,
        workers=args.workers,
    )
    out = Path(args.out)
    _, report = quantize_model(manifest, config, out)
    report_path = Path(args.report) if args.report else out / "report.json"
    _dump_json(report_path, report.to_dict(include_timings=args.timings))
    for entry in report.layers:
        b = entry["bits"]
        log.info("%s %s: avg bits %.3f (sign planes) / %.3f (packed), output error %.4g",
                 entry["name"], entry["nm"], b["avg_bits_paper"], b["avg_bits_packed"],
                 entry["output_error"])
    return 0


def cmd_flip(args):
    layer = decode(Path(args.packed).read_bytes())
    calib = Path(args.calib)
    size = calib.stat().st_size if calib.is_file() else 0
    if size % (4 * layer.cols):
        raise ValidationError(f"{calib}: size is not a multiple of {layer.cols} float32 columns")
    X = load_tensor(calib, size // (4 * layer.cols), layer.cols)
    W = load_tensor(args.weight, layer.rows, layer.cols) if args.weight else None
    rows = flip_experiment(layer, X, args.fractions, args.trials, args.seed, W)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["fraction", "mean_err", "std_err"])
        for frac, mean, std in rows:
            writer.writerow([repr(frac), repr(mean), repr(std)])
    return 0


def cmd_report(args):
    records = {}
    if args.calib:
        for entry in load_manifest(args.calib):
            records[entry.name] = entry
    layers = []
    for path in sorted(Path(args.packed).glob("*.stbl")):
        blob = path.read_bytes()
        layer = decode(blob)
        entry = {"name": layer.name, "file": path.name, "nm": str(layer.nm),
                 "bits": bit_report(layer, len(blob)).to_dict()}
        if layer.name in records:
            rec = records[layer.name].load()
            ev = evaluate_layer(rec.weight, layer, rec.calibration)
            entry.update(reconstruction_error=ev["frobenius_error"],
                         output_error=ev["output_error"], breakdown=ev["breakdown"])
        layers.append(entry)
    if not layers:
        raise ValidationError(f"no .stbl files under {args.packed}")
    _dump_json(args.out, {"layers": layers})
    return 0


def cmd_synth(args):
    records = synth_model(args.layers, args.n, args.m, args.r, args.seed, args.correlation)
    path = write_manifest(args.out, records)
    log.info("wrote %s", path)
    return 0


def cmd_bits(args):
    print(f"{nm_scaled_bits(args.base, args.nm.n, args.nm.m):.10g}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="subbit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="quantize every layer in a manifest")
    q.add_argument("--manifest", required=True)
    q.add_argument("--out", required=True, help="directory for <layer>.stbl files")
    q.add_argument("--nm", type=_nm, default=NMRatio(4, 8), help="target N:M (default 4:8)")
    q.add_argument("--strategy", choices=[s.value for s in Strategy], default="adaptive")
    q.add_argument("--scorer", choices=[s.value for s in ScorerKind], default="si")
    q.add_argument("--block-size", type=int, default=128)
    q.add_argument("--lambda-rel", type=float, default=0.01)
    q.add_argument("--sigma", type=float, default=2.0)
    q.add_argument("--grid-points", type=int, default=160)
    q.add_argument("--salient-cap", type=float, default=0.3)
    q.add_argument("--no-renormalize", action="store_true")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--workers", type=int, default=1)
    q.add_argument("--report", help="report path (default <out>/report.json)")
    q.add_argument("--timings", action="store_true",
                   help="include wall-clock stage timings (makes the report non-reproducible)")
    q.set_defaults(func=cmd_quantize)

    f = sub.add_parser("flip", help="sign-flip probe on one packed layer")
    f.add_argument("--packed", required=True)
    f.add_argument("--calib", required=True, help="calibration .f32 (rows inferred)")
    f.add_argument("--weight", help="original weight .f32; defaults to the unflipped reconstruction")
    f.add_argument("--fractions", type=_fractions, default=[0.0, 0.05, 0.1, 0.15])
    f.add_argument("--trials", type=int, default=20)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_flip)

    r = sub.add_parser("report", help="bit accounting (and errors) for packed layers")
    r.add_argument("--packed", required=True, help="directory of .stbl files")
    r.add_argument("--calib", help="manifest.json with the original weights and calibration")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("synth", help="write a synthetic model (manifest + tensors)")
    s.add_argument("--layers", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--r", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--correlation", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bits", help="base bits scaled by N/M")
    b.add_argument("--base", type=float, required=True)
    b.add_argument("--nm", type=_nm, required=True)
    b.set_defaults(func=cmd_bits)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SubbitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
