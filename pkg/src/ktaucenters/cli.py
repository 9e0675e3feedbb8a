"""Command-line interface: ``ktau cluster|simulate|segment|search``.

Exit status is 0 on success, 2 for unreadable or malformed input and 3 for
an invalid configuration.
"""
import argparse
import csv
import datetime as _dt
import io
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .evaluation import CSV_FIELDS, MethodSpec, SimScenario, fit_method, run_simulation
from .imaging import (
    extreme_outlier,
    geographic_search,
    pack_gray_cells,
    pack_rgb_cells,
)
from .pnm import PNMError, read_pnm, write_pnm

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_CONFIG = 0, 2, 3

PALETTE = [
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40), (148, 103, 189),
    (140, 86, 75), (227, 119, 194), (127, 127, 127), (188, 189, 34), (23, 190, 207),
]
OUTLIER_COLOR = (0, 0, 0)

log = logging.getLogger("ktaucenters")


class InputError(Exception):
    pass


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers

def _threads():
    raw = os.environ.get("KTAU_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"KTAU_THREADS must be an integer, got {raw!r}")


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_csv_matrix(path):
    """Parse a comma-separated numeric table; a non-numeric first row is a header."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}")
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path}: no data rows")
    start = 0
    if not all(_is_number(c.strip()) for c in rows[0] if c.strip()):
        start = 1
    width = None
    data = []
    for i, row in enumerate(rows[start:], start=start + 1):
        if width is None:
            width = len(row)
        if len(row) != width:
            raise InputError(f"{path}: row {i} has {len(row)} columns, expected {width}")
        vals = []
        for j, cell in enumerate(row, start=1):
            cell = cell.strip()
            if not cell:
                raise InputError(f"{path}: missing value at row {i}, column {j}")
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}: non-numeric value {cell!r} at row {i}, column {j}")
            if not np.isfinite(v):
                raise InputError(f"{path}: non-finite value at row {i}, column {j}")
            vals.append(v)
        data.append(vals)
    if not data:
        raise InputError(f"{path}: no data rows")
    return np.array(data)


def _method_spec(args, method=None):
    method = method or args.method
    if method == "tkmeans" and args.alpha is None:
        raise ConfigError("method tkmeans requires --alpha")
    if args.alpha is not None and not (0 <= args.alpha < 1):
        raise ConfigError("--alpha must lie in [0, 1)")
    if not (0 < args.beta < 1):
        raise ConfigError("--beta must lie in (0, 1)")
    if args.starts is not None and args.starts < 1:
        raise ConfigError("--starts must be positive")
    if args.max_iter is not None and args.max_iter < 1:
        raise ConfigError("--max-iter must be positive")
    if not args.tol > 0:
        raise ConfigError("--tol must be positive")
    return MethodSpec(
        method,
        alpha=args.alpha if method == "tkmeans" else None,
        n_starts=args.starts,
        max_iter=args.max_iter,
        beta=args.beta,
        tol=args.tol,
        n_jobs=_threads(),
    )


def _fit(X, spec, K, seed):
    if K < 1:
        raise ConfigError("--k must be positive")
    if K > X.shape[0]:
        raise ConfigError(f"K={K} exceeds the number of observations ({X.shape[0]})")
    try:
        return fit_method(X, spec, K, seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _config_echo(args, keys):
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _envelope(args, payload):
    doc = {"schema_version": SCHEMA_VERSION, "version": __version__}
    if not args.no_timestamp:
        doc["created"] = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    doc.update(payload)
    return doc


def _write_json(path, doc):
    text = json.dumps(doc, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _write_center_profiles(path, centers):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "index", "value"])
        for k, c in enumerate(np.asarray(centers)):
            for j, v in enumerate(c):
                w.writerow([k, j, repr(float(v))])


def _sibling(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix)


def _load_grid(args):
    if args.cell_size is None or args.cell_size < 1:
        raise ConfigError("--cell-size must be a positive integer")
    try:
        img = read_pnm(args.input)
    except (OSError, PNMError) as exc:
        raise InputError(f"cannot read raster {args.input}: {exc}")
    try:
        if img.ndim == 2:
            return pack_gray_cells(img, args.cell_size)
        return pack_rgb_cells(img, args.cell_size)
    except ValueError as exc:
        raise InputError(str(exc))


# ---------------------------------------------------------------------------
# subcommands

def cmd_cluster(args):
    X = read_csv_matrix(args.input)
    spec = _method_spec(args)
    res = _fit(X, spec, args.k, args.seed)
    doc = _envelope(args, {
        "command": "cluster",
        "config": _config_echo(args, ["input", "k", "method", "alpha", "beta", "starts",
                                      "tol", "max_iter"]),
        "seed": args.seed,
        "n": int(X.shape[0]),
        "p": int(X.shape[1]),
        **res.to_dict(),
    })
    _write_json(args.output, doc)
    if args.emit_plot_data and args.output:
        _write_center_profiles(_sibling(args.output, "_centers.csv"), res.centers)
    return EXIT_OK


def cmd_simulate(args):
    ks = args.k
    ps = args.p
    if not ks or not ps or any(k < 1 for k in ks) or any(p < 1 for p in ps):
        raise ConfigError("--k and --p need positive integers")
    if args.reps < 1:
        raise ConfigError("--reps must be at least 1")
    if not (0 <= args.contamination < 0.5):
        raise ConfigError("--contamination must lie in [0, 0.5)")
    specs = [_method_spec(args, m) for m in args.method]
    rows = []
    for K in ks:
        for p in ps:
            sc = SimScenario(K, p, args.contamination, replications=args.reps, seed=args.seed)
            rows.extend(run_simulation(sc, specs))

    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "mean_cer": repr(r["mean_cer"])})
    if args.output is None:
        sys.stdout.write(buf.getvalue())
    else:
        Path(args.output).write_text(buf.getvalue())
        doc = _envelope(args, {
            "command": "simulate",
            "contamination": args.contamination,
            "rows": rows,
        })
        _write_json(_sibling(args.output, ".json"), doc)
    return EXIT_OK


def cmd_segment(args):
    grid = _load_grid(args)
    spec = _method_spec(args)
    res = _fit(grid.features, spec, args.k, args.seed)
    colors = np.array(PALETTE * (res.K // len(PALETTE) + 1))[:res.K]
    pix = colors[res.assignment]
    pix[res.outlier_flag] = OUTLIER_COLOR
    out = args.output or "segmentation.ppm"
    write_pnm(out, pix.reshape(grid.rows, grid.cols, 3) / 255.0)
    flagged = [list(grid.coord(i)) for i in np.flatnonzero(res.outlier_flag)]
    doc = _envelope(args, {
        "command": "segment",
        "config": _config_echo(args, ["input", "k", "method", "alpha", "beta", "starts",
                                      "tol", "max_iter", "cell_size"]),
        "seed": args.seed,
        "rows": grid.rows,
        "cols": grid.cols,
        "colors": {str(k): list(map(int, c)) for k, c in enumerate(colors)},
        "outlier_color": list(OUTLIER_COLOR),
        "cluster_sizes": np.bincount(res.assignment, minlength=res.K).tolist(),
        "flagged": flagged,
    })
    _write_json(_sibling(out, ".json"), doc)
    if args.emit_plot_data:
        _write_center_profiles(_sibling(out, "_centers.csv"), res.centers)
    return EXIT_OK


def cmd_search(args):
    if args.mode == "geographic" and args.target_cluster is None:
        raise ConfigError("geographic mode requires --target-cluster")
    grid = _load_grid(args)
    spec = _method_spec(args)
    res = _fit(grid.features, spec, args.k, args.seed)
    if args.mode == "extreme":
        top = grid.linear_index(*extreme_outlier(res, grid))
        idx = set(np.flatnonzero(res.outlier_flag).tolist()) | {top}
        cands = [(*grid.coord(i), float(res.distances[i])) for i in idx]
        cands.sort(key=lambda c: (-c[2], c[0], c[1]))
    else:
        if not (0 <= args.target_cluster < res.K):
            raise ConfigError(f"--target-cluster must lie in [0, {res.K})")
        try:
            cands = geographic_search(res, grid, args.target_cluster,
                                      policy=spec_policy(spec), seed=args.seed)
        except ValueError as exc:
            raise ConfigError(str(exc))
    for r, c, s in cands:
        print(f"({r}, {c}, {s:.6g})")
    doc = _envelope(args, {
        "command": "search",
        "mode": args.mode,
        "config": _config_echo(args, ["input", "k", "method", "alpha", "beta", "starts",
                                      "tol", "max_iter", "cell_size", "target_cluster"]),
        "seed": args.seed,
        "candidates": [{"row": r, "col": c, "score": s} for r, c, s in cands],
    })
    if args.output:
        _write_json(args.output, doc)
    return EXIT_OK


def spec_policy(spec):
    from .robust_covariance import OutlierPolicy

    return OutlierPolicy(spec.beta)


# ---------------------------------------------------------------------------
# parser

def _common(p, method_nargs=None):
    p.add_argument("--method", default="iktau", nargs=method_nargs,
                   choices=["ktau", "iktau", "kmeans", "tkmeans"])
    p.add_argument("--alpha", type=float, default=None, help="trimming level for tkmeans")
    p.add_argument("--beta", type=float, default=0.01, help="outlier level of the ellipsoids")
    p.add_argument("--starts", type=int, default=None, help="number of starts")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None)
    p.add_argument("--no-timestamp", action="store_true")
    p.add_argument("--emit-plot-data", action="store_true",
                   help="also write plot-ready center-profile CSV files")


def build_parser():
    parser = argparse.ArgumentParser(prog="ktau", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("cluster", help="cluster the rows of a CSV file")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, required=True)
    _common(p)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("simulate", help="run the contaminated-mixture simulation")
    p.add_argument("--k", type=int, nargs="+", default=[3])
    p.add_argument("--p", type=int, nargs="+", default=[3])
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--contamination", type=float, default=0.05)
    _common(p, method_nargs="+")
    p.set_defaults(func=cmd_simulate, method=["kmeans", "iktau"])

    for name, func, helptext in (("segment", cmd_segment, "segment a PGM/PPM raster"),
                                 ("search", cmd_search, "search a raster for anomalous cells")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--input", required=True)
        p.add_argument("--k", type=int, required=True)
        p.add_argument("--cell-size", type=int, required=True)
        _common(p)
        if name == "search":
            p.add_argument("--mode", choices=["extreme", "geographic"], default="extreme")
            p.add_argument("--target-cluster", type=int, default=None)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
