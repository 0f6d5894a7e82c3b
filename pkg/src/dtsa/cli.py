"""Command-line entry point: synth, encode, train, evaluate.

Global flags (--seed, --threads, --config, --out) may also come from
DTSA_-prefixed environment variables; explicit flags win over the
environment, which wins over config-file values. Exit codes: 0 success,
1 usage or config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .baselines import BASELINE_METHODS, MetricReport, image_features, run_baseline, write_metric_table
from .config import (
    component_seed,
    dtsa_config_from,
    fingerprint_mapping,
    fingerprint_text,
    grid_config_from,
    parse_config_file,
)
from .errors import ConfigError, DataError, DtsaError, EmptyInput, NonFiniteLoss, NumericalError
from .gasf import encode_series_images, export_png, load_image_cache, save_image_cache
from .gmm import save_params
from .metrics import adjusted_rand_index
from .pipeline import dtsa_fit, save_catalog, save_report, select_k
from .series import load_series, normalize_series, save_series
from .synth import generate
from .net import save_weights

_ALL_METHODS = BASELINE_METHODS + ("dtsa",)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _env(name: str, default=None):
    return os.environ.get(f"DTSA_{name}", default)


def _build_parser() -> _Parser:
    parser = _Parser(prog="dtsa", description="Typical operating scenario extraction")
    parser.add_argument("--version", action="version", version=f"dtsa {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root RNG seed")
    common.add_argument("--threads", type=int, default=None, help="cap the numba thread pool")
    common.add_argument("--config", default=None, help="flat key=value config file")
    common.add_argument("--out", default=None, help="output directory")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a labeled synthetic series")
    p.add_argument("preset", nargs="?", default=None, help="low, medium, or high")
    p.add_argument("--days", type=int, default=None)

    p = sub.add_parser("encode", parents=[common], help="encode a series into scenario images")
    p.add_argument("input", help="series CSV")
    p.add_argument("--image-size", type=int, default=None)
    p.add_argument("--png", action="store_true", help="also export per-snapshot PNGs")

    p = sub.add_parser("train", parents=[common], help="fit the full pipeline")
    p.add_argument("input", help="series CSV")
    p.add_argument("--images", default=None, help="pre-encoded image cache")
    p.add_argument("--select-k", default=None, metavar="A..B", help="sweep K and pick by BIC")

    p = sub.add_parser("evaluate", parents=[common], help="compare methods on one dataset")
    p.add_argument("input", help="series CSV")
    p.add_argument("--methods", default=",".join(_ALL_METHODS))
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--q", type=int, default=None, help="PCA dimensions for pca_* baselines")
    return parser


def _resolve_common(args):
    config_path = args.config or _env("CONFIG")
    mapping = parse_config_file(config_path) if config_path else {}
    seed = args.seed
    if seed is None and _env("SEED") is not None:
        seed = int(_env("SEED"))
    if seed is None and "seed" in mapping:
        seed = int(mapping["seed"])
    if seed is None:
        seed = 0
    out = args.out or _env("OUT") or f"dtsa_{args.command}_out"
    threads = args.threads
    if threads is None and _env("THREADS") is not None:
        threads = int(_env("THREADS"))
    if threads is not None:
        _cap_threads(threads)
    config_hash = (
        fingerprint_text(open(config_path, "r", encoding="utf-8").read())
        if config_path
        else fingerprint_mapping(mapping)
    )
    return mapping, seed, out, config_hash


def _cap_threads(threads: int) -> None:
    if threads < 1:
        raise ConfigError("--threads must be at least 1")
    from . import _kernels

    if _kernels.HAS_NUMBA:
        try:
            _kernels._numba.set_num_threads(threads)
        except ValueError:
            pass  # cap above the available pool; nothing to do


def _write_manifest(out_dir, command, argv, config_hash, seed, inputs, outputs, started, timing=None):
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_hash": config_hash,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "version": __version__,
    }
    if timing:
        manifest["timing_seconds"] = timing
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _cmd_synth(args, argv) -> int:
    mapping, seed, out, config_hash = _resolve_common(args)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    if args.preset:
        mapping = dict(mapping, **{"grid.preset": args.preset})
    if args.days is not None:
        mapping = dict(mapping, **{"grid.days": str(args.days)})
    grid = grid_config_from(mapping, seed_override=component_seed(seed, "synth"))
    series = generate(grid)
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, "series.csv")
    save_series(series, csv_path)
    _write_manifest(out, "synth", argv, config_hash, seed, [], [csv_path], started)
    print(f"wrote {csv_path} ({len(series)} snapshots, {series.node_count} nodes)")
    return 0


def _cmd_encode(args, argv) -> int:
    mapping, seed, out, config_hash = _resolve_common(args)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    image_size = args.image_size or int(mapping.get("image_size", 32))
    series = load_series(args.input)
    images = encode_series_images(normalize_series(series), image_size)
    os.makedirs(out, exist_ok=True)
    cache_path = os.path.join(out, "images.bin")
    save_image_cache(images, cache_path)
    outputs = [cache_path]
    if args.png:
        png_dir = os.path.join(out, "png")
        os.makedirs(png_dir, exist_ok=True)
        for i, img in enumerate(images):
            p = os.path.join(png_dir, f"img_{i:05d}.png")
            export_png(img, p)
            outputs.append(p)
    _write_manifest(out, "encode", argv, config_hash, seed, [args.input], outputs, started)
    print(f"wrote {cache_path} ({len(images)} images, {image_size}x{image_size})")
    return 0


def _parse_k_range(spec: str):
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return range(int(lo), int(hi) + 1)
    return [int(tok) for tok in spec.split(",")]


def _cmd_train(args, argv) -> int:
    mapping, seed, out, config_hash = _resolve_common(args)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    config = dtsa_config_from(mapping, seed_override=seed)
    series = load_series(args.input)
    os.makedirs(out, exist_ok=True)
    outputs = []

    if args.select_k:
        from .pipeline import fit_encoded  # noqa: F401  (select_k shares images internally)

        best_k, table, (net, params, catalog, report) = select_k(
            series, config, _parse_k_range(args.select_k)
        )
        table_path = os.path.join(out, "bic_table.csv")
        with open(table_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["K", "SC", "AIC", "BIC", "error"])
            for row in table:
                writer.writerow(
                    [row["K"], repr(row["SC"]), repr(row["AIC"]), repr(row["BIC"]), row["error"]]
                )
        outputs.append(table_path)
        print(f"selected K={best_k} by BIC")
    else:
        if args.images:
            images = load_image_cache(args.images)
            from .pipeline import fit_encoded

            net, params, catalog, report = fit_encoded(series, images, config)
        else:
            net, params, catalog, report = dtsa_fit(series, config)

    catalog_path = os.path.join(out, "catalog.json")
    save_catalog(catalog, catalog_path)
    gmm_path = os.path.join(out, "gmm.json")
    save_params(params, gmm_path, config.em_config)
    weights_path = os.path.join(out, "weights.bin")
    save_weights(net, weights_path)
    report_path = os.path.join(out, "report.json")
    save_report(report, report_path)
    traces_path = os.path.join(out, "traces.csv")
    with open(traces_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "l_net", "l_clustering"])
        for row in report.loss_trace:
            writer.writerow(
                [row["iteration"], repr(row["loss"]), repr(row["l_net"]), repr(row["l_clustering"])]
            )
    outputs += [catalog_path, gmm_path, weights_path, report_path, traces_path]
    _write_manifest(
        out, "train", argv, config_hash, seed, [args.input], outputs, started,
        timing=report.wall_clock,
    )
    counts = ", ".join(str(s.member_count) for s in catalog.scenarios)
    print(f"wrote {catalog_path} (K={catalog.k}, members: {counts})")
    return 0


def _cmd_evaluate(args, argv) -> int:
    mapping, seed, out, config_hash = _resolve_common(args)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in _ALL_METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {_ALL_METHODS}")
    config = dtsa_config_from(mapping, seed_override=seed)
    if args.k is not None:
        config = replace(config, k=args.k)
    series = load_series(args.input)
    image_size = config.net_config.input_size
    images = encode_series_images(normalize_series(series), image_size)
    flat = image_features(images)
    labels_true = series.labels

    reports = []
    baseline_seed = component_seed(seed, "baseline")
    for method in methods:
        if method == "dtsa":
            t0 = time.perf_counter()
            net, params, catalog, train_report = dtsa_fit(series, config)
            runtime = time.perf_counter() - t0
            ari = (
                adjusted_rand_index(labels_true, catalog.assignment)
                if labels_true is not None
                else None
            )
            reports.append(
                MetricReport(
                    method="dtsa",
                    k=config.k,
                    sc=train_report.final_sc,
                    aic_value=train_report.final_aic,
                    bic_value=train_report.final_bic,
                    ari=ari,
                    runtime_s=runtime,
                )
            )
        else:
            reports.append(
                run_baseline(
                    method, flat, config.k, q=args.q, seed=baseline_seed, labels_true=labels_true
                )
            )
    os.makedirs(out, exist_ok=True)
    table_path = os.path.join(out, "comparison.csv")
    write_metric_table(reports, table_path)
    _write_manifest(out, "evaluate", argv, config_hash, seed, [args.input], [table_path], started)
    for r in reports:
        ari_txt = "" if r.ari is None else f" ARI={r.ari:.3f}"
        print(f"{r.method}: SC={r.sc:.4f} AIC={r.aic_value:.1f} BIC={r.bic_value:.1f}{ari_txt}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "synth":
            return _cmd_synth(args, argv)
        if args.command == "encode":
            return _cmd_encode(args, argv)
        if args.command == "train":
            return _cmd_train(args, argv)
        return _cmd_evaluate(args, argv)
    except ConfigError as exc:
        print(f"dtsa: config error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteLoss as exc:
        out = args.out or _env("OUT") or f"dtsa_{args.command}_out"
        os.makedirs(out, exist_ok=True)
        dump_path = os.path.join(out, "diagnostic_dump.json")
        with open(dump_path, "w", encoding="utf-8") as fh:
            json.dump({"error": str(exc), "state": exc.state}, fh, sort_keys=True, default=str)
        print(f"dtsa: numerical failure: {exc} (diagnostics: {dump_path})", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"dtsa: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (DataError, OSError) as exc:
        print(f"dtsa: data error: {exc}", file=sys.stderr)
        return 2
    except DtsaError as exc:
        print(f"dtsa: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
