"""Command-line entry point: ``morisita <command> ...``.

Every command writes its outputs to files and a ``.manifest.json`` next to
the primary output recording the flags, seed, paths, version and run time.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .counting import ScaleSet
from .dataset import (
    BUTTERFLY_COLUMNS,
    ButterflyConfig,
    DataError,
    gen_butterfly,
    load_table,
    rescale_unit_interval,
    write_table,
)
from .estimation import AUTO_MIN_PAIRS, DEFAULT_CAP, InfeasibleError, estimate_id, suggest_scales, write_curve_csv
from .metrics import DEFAULT_K_GRID, evaluate_subset
from .selection import SelectionConfig, mbrm_select, monte_carlo_selection

log = logging.getLogger("morisita")

EXIT_OK = 0
EXIT_USAGE = 2  # argparse
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_INFEASIBLE = 5


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def write_manifest(out, command: str, args: argparse.Namespace, seed, inputs, outputs, started: float) -> Path:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": command,
        "flags": flags,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "duration_s": round(time.perf_counter() - started, 6),
    }
    path = _manifest_path(Path(out))
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", required=True, type=Path, help="CSV table of numeric features")
    p.add_argument("--no-header", action="store_true", help="first row holds data, columns become X1..XE")
    p.add_argument("--label-column", default=None, help="column to exclude from the features (name or 1-based index without header)")


def _add_scales(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scales", default="auto", help="'auto' or comma-separated cells per axis, e.g. 1,2,4,8")
    p.add_argument("--ratio", type=int, default=1, choices=(1, 2), help="auto mode: 1 = integers below 30, 2 = powers of two")
    p.add_argument("--max-scale", type=int, default=DEFAULT_CAP)
    p.add_argument("--min-pairs", type=int, default=AUTO_MIN_PAIRS, help="auto mode: same-cell pairs required at the finest scale")


def _scales(args, rescaled) -> ScaleSet:
    if args.scales == "auto":
        return suggest_scales(rescaled, args.ratio, args.max_scale, args.min_pairs)
    try:
        return ScaleSet(tuple(_int_list(args.scales)))
    except argparse.ArgumentTypeError as exc:
        raise ValueError(str(exc)) from None


def _load(args):
    m, labels = load_table(args.input, has_header=not args.no_header, label_column=args.label_column)
    return m, labels


def cmd_gen_butterfly(args) -> list[Path]:
    shuffle = tuple(_csv_list(args.shuffle)) if args.shuffle else ()
    cfg = ButterflyConfig(args.n, args.seed, args.noise, shuffle)
    write_table(args.out, gen_butterfly(cfg))
    return [args.out]


def cmd_estimate(args) -> list[Path]:
    m, _ = _load(args)
    r = rescale_unit_interval(m)
    scales = _scales(args, r)
    est = estimate_id(r, scales, args.m_order)
    doc = est.to_dict()
    doc["n_points"] = m.n_rows
    doc["features"] = list(m.names)
    args.out.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"ID = {est.id_value:.4f} (slope {est.slope:.4f}, R^2 {est.r_squared:.4f}, {len(est.scales_used)} scales)")
    return [args.out]


def cmd_curve(args) -> list[Path]:
    m, _ = _load(args)
    r = rescale_unit_interval(m)
    scales = _scales(args, r)
    write_curve_csv(args.out, r, scales, args.m_order)
    return [args.out]


def cmd_select(args) -> list[Path]:
    m, _ = _load(args)
    r = rescale_unit_interval(m)
    scales = _scales(args, r)
    cfg = SelectionConfig(
        scales,
        max_steps=args.c_steps,
        known_full_id=args.full_id,
        cutoff_epsilon=args.epsilon,
        gain_threshold=args.gain_threshold,
        tie_break=args.tie_break,
        jobs=args.jobs,
    )
    trace = mbrm_select(r, cfg)
    out = args.out
    csv_path = out.with_suffix(".csv")
    txt_path = out.with_suffix(".selected.txt")
    trace.write_json(out)
    trace.write_csv(csv_path)
    txt_path.write_text("".join(f"{n}\n" for n in trace.selected))
    flag = "" if trace.cutoff_found else " (no cut-off found)"
    print(f"selected {trace.selected_count}: {', '.join(trace.selected)}{flag}")
    return [out, csv_path, txt_path]


def _read_subset(args, m) -> list[str]:
    if args.subset:
        names = _csv_list(args.subset)
    else:
        text = Path(args.subset_file).read_text()
        if text.lstrip().startswith("{"):
            names = list(json.loads(text)["selected"])
        else:
            names = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not names:
        raise ValueError("empty feature subset")
    unknown = [n for n in names if n not in m.names]
    if unknown:
        raise ValueError(f"unknown features in subset: {', '.join(unknown)}")
    return names


def cmd_evaluate(args) -> list[Path]:
    m, labels = _load(args)
    if labels is None:
        raise ValueError("--label-column is required for evaluate")
    subset = _read_subset(args, m)
    report = evaluate_subset(
        m, labels, subset,
        repeats=args.repeats,
        test_fraction=args.test_fraction,
        k_grid=args.k_grid,
        seed=args.seed,
    )
    csv_path = args.out.with_suffix(".csv")
    report.write_json(args.out)
    report.write_csv(csv_path)
    print(f"OA {report.oa_mean:.2f} ({report.oa_sd:.2f})  kappa {report.kappa_mean:.2f} ({report.kappa_sd:.2f})")
    return [args.out, csv_path]


def cmd_monte_carlo(args) -> list[Path]:
    shuffle = tuple(_csv_list(args.shuffle)) if args.shuffle else ()
    base = ButterflyConfig(args.n, 0, args.noise, shuffle)
    scales = None if args.scales == "auto" else ScaleSet(tuple(_int_list(args.scales)))
    summary = monte_carlo_selection(
        base, args.runs,
        master_seed=args.seed,
        scales=scales,
        ratio=args.ratio,
        max_cap=args.max_scale,
        min_pairs=args.min_pairs,
        max_steps=args.c_steps,
        epsilon=args.epsilon,
        gain_threshold=args.gain_threshold,
        jobs=args.jobs,
    )
    out = args.out
    steps_csv = out.with_suffix(".steps.csv")
    trip_csv = out.with_suffix(".triplets.csv")
    out.write_text(json.dumps(summary.to_dict(), indent=2) + "\n")
    summary.write_steps_csv(steps_csv)
    summary.write_triplets_csv(trip_csv)
    top = max(summary.triplets.items(), key=lambda kv: kv[1])
    print(f"{args.runs} runs, modal first three {','.join(top[0])} x{top[1]}, full ID {summary.full_id_mean:.3f}")
    return [out, steps_csv, trip_csv]


def _add_selection_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--c-steps", type=int, default=None, help="stop the search after this many features")
    p.add_argument("--epsilon", type=float, default=0.02, help="relative Diff threshold for the cut-off")
    p.add_argument("--gain-threshold", type=float, default=0.4, help="cut-off once every later step adds less ID than this")
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="morisita", description="Morisita intrinsic dimension and MBRM feature selection")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-butterfly", help="sample the butterfly benchmark")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="noise sd as a fraction of each column's sd")
    p.add_argument("--shuffle", default="", help=f"columns to permute, subset of {','.join(BUTTERFLY_COLUMNS)}")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_butterfly)

    p = sub.add_parser("estimate", help="Morisita ID of a table")
    _add_input(p)
    _add_scales(p)
    p.add_argument("--m-order", type=int, default=2)
    p.add_argument("--out", type=Path, required=True, help="JSON output")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("curve", help="log-log Morisita curve as CSV")
    _add_input(p)
    _add_scales(p)
    p.add_argument("--m-order", type=int, default=2)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("select", help="MBRM forward selection")
    _add_input(p)
    _add_scales(p)
    _add_selection_flags(p)
    p.add_argument("--full-id", type=float, default=None, help="use this full-data ID instead of estimating it")
    p.add_argument("--tie-break", choices=("index", "name"), default="index")
    p.add_argument("--out", type=Path, required=True, help="JSON trace; .csv and .selected.txt are written beside it")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("evaluate", help="k-NN holdout evaluation of a feature subset")
    _add_input(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--subset", help="comma-separated feature names")
    g.add_argument("--subset-file", type=Path, help="one name per line, or a select JSON trace")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--k-grid", type=_int_list, default=list(DEFAULT_K_GRID))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="JSON report; a one-row .csv is written beside it")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("monte-carlo", help="repeat MBRM over seeded butterfly samples")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0, help="master seed for the run seeds")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--shuffle", default="")
    _add_scales(p)
    _add_selection_flags(p)
    p.add_argument("--out", type=Path, required=True, help="JSON summary; .steps.csv and .triplets.csv beside it")
    p.set_defaults(func=cmd_monte_carlo)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    started = time.perf_counter()
    try:
        outputs = args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    inputs = [args.input] if getattr(args, "input", None) else []
    write_manifest(outputs[0], args.command, args, getattr(args, "seed", None), inputs, outputs, started)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
