"""Command-line surface: index building, querying, ARR evaluation, scheme
comparison, diagnostics, and the synthetic corpus generator.

Exit codes are a stable contract: 0 success, 2 usage/configuration
error, 3 data error, 4 incompatible signatures.  Tables go to stdout,
progress and timing to stderr.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import divergence, evaluate, store, synth
from .errors import (ConfigurationError, DataError, DegenerateSampleError,
                     IncompatibleSignatureError, TexretError, UsageError)
from .marginals import FAMILY_GG, FAMILY_TLS, GgParams, TlsParams, kurtosis
from .nsst import NsstConfig, nsst_decompose, export_subbands
from .signatures import (SCHEMES, chi_plot, extract_signature,
                         format_subband_id, parse_subband_id, subband_order)

log = logging.getLogger("texret")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INCOMPATIBLE = 4

VISIBLE_COMMANDS = ("index", "query", "evaluate", "compare-schemes",
                    "diagnose", "synth")


def _parse_dirs(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise UsageError(f"--dirs must be a comma-separated integer list, got {text!r}")


def _config_from_args(args) -> NsstConfig:
    dirs = _parse_dirs(args.dirs)
    if len(dirs) != args.scales:
        raise UsageError(
            f"--dirs lists {len(dirs)} direction counts but --scales is {args.scales}")
    try:
        return NsstConfig(scales=args.scales, directions_per_scale=dirs,
                          pyramid_filter_length=args.filter_length)
    except ConfigurationError as exc:
        raise UsageError(str(exc))


def _add_transform_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scales", type=int, default=3)
    p.add_argument("--dirs", default="4,8,16",
                   help="comma-separated directions per scale, coarse to fine")
    p.add_argument("--filter-length", type=int, default=8,
                   help="pyramid filter length (even)")
    p.add_argument("--stride", type=int, default=1,
                   help="row stride when fitting correlation matrices")
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texret",
        description="Texture image retrieval with shearlet-domain copula signatures")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="{" + ",".join(VISIBLE_COMMANDS) + "}")

    p = sub.add_parser("index", help="ingest a dataset directory and build an index")
    p.add_argument("--db", required=True, help="dataset directory")
    p.add_argument("--scheme", required=True, choices=SCHEMES)
    p.add_argument("--marginal", required=True, choices=(FAMILY_GG, FAMILY_TLS))
    p.add_argument("--out", required=True, help="index file to write")
    _add_transform_flags(p)

    p = sub.add_parser("query", help="rank indexed patches against a query image")
    p.add_argument("--index", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--top", type=int, required=True)
    p.add_argument("--patch", type=int, default=None,
                   help="patch number 0..15 when the image is 512x512")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--tls-divergence", choices=(divergence.TLS_BACKEND_CLOSED,
                                                divergence.TLS_BACKEND_NUMERIC),
                   default=divergence.TLS_BACKEND_CLOSED)

    p = sub.add_parser("evaluate", help="query every indexed patch and report ARR")
    p.add_argument("--index", required=True)
    p.add_argument("--nr", type=int, default=evaluate.DEFAULT_NR)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report", default=None, help="write the per-query TSV here")
    p.add_argument("--tls-divergence", choices=(divergence.TLS_BACKEND_CLOSED,
                                                divergence.TLS_BACKEND_NUMERIC),
                   default=divergence.TLS_BACKEND_CLOSED)

    p = sub.add_parser("compare-schemes",
                       help="build and evaluate one index per scheme")
    p.add_argument("--db", required=True)
    p.add_argument("--marginal", required=True, choices=(FAMILY_GG, FAMILY_TLS))
    p.add_argument("--schemes", required=True,
                   help="comma-separated scheme names")
    p.add_argument("--nr", type=int, default=evaluate.DEFAULT_NR)
    _add_transform_flags(p)

    p = sub.add_parser("diagnose",
                       help="subband histogram and dependence diagnostics")
    p.add_argument("--image", required=True)
    p.add_argument("--pair", required=True,
                   help="two subband ids like c0_s2_d3,c1_s2_d3 or 'auto'")
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--export-subbands", default=None,
                   help="also dump raw subband planes to this directory")
    _add_transform_flags(p)

    p = sub.add_parser("synth", help="generate a seeded synthetic texture corpus")
    p.add_argument("--out", required=True, help="directory to fill with images")
    p.add_argument("--classes", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=512)

    # internal: closed-form vs numeric oracle sweeps for CI
    p = sub.add_parser("oracle")
    p.add_argument("--family", required=True, choices=("gg", "tls", "copula"))
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--draws", type=int, default=10 ** 6)

    return parser


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------

def cmd_index(args) -> int:
    config = _config_from_args(args)
    t0 = time.perf_counter()
    records, manifest = store.ingest_dataset(args.db)
    if not records:
        raise DataError(f"no usable images in {args.db}")

    def progress(done, total):
        if done % 16 == 0 or done == total:
            print(f"extracted {done}/{total} signatures", file=sys.stderr)

    t1 = time.perf_counter()
    index = store.build_index(records, manifest, scheme=args.scheme,
                              family=args.marginal, config=config,
                              stride=args.stride, jobs=args.jobs,
                              progress=progress)
    t2 = time.perf_counter()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store.save_index(index, out)
    (out.parent / "manifest.tsv").write_text(manifest.to_tsv())
    fe = t2 - t1
    print(f"indexed {len(records)} patches from {len(manifest.rows)} images "
          f"-> {out}", file=sys.stderr)
    print(f"FE time: total {fe * 1000.0:.1f} ms, per patch "
          f"{fe / len(records) * 1000.0:.1f} ms (ingest {1000 * (t1 - t0):.1f} ms)",
          file=sys.stderr)
    return EXIT_OK


def _query_planes(args) -> np.ndarray:
    planes = store.load_query_image(args.image)
    _, h, w = planes.shape
    if h >= store.SOURCE_SIZE and w >= store.SOURCE_SIZE:
        if args.patch is None:
            raise UsageError("--patch is required for a 512x512 input image")
        if not 0 <= args.patch < store.PATCHES_PER_SOURCE:
            raise UsageError(f"--patch must be in 0..15, got {args.patch}")
        patches = store.split_patches(planes, Path(args.image).stem)
        return patches[args.patch].pixels
    if (h, w) != (store.PATCH_SIZE, store.PATCH_SIZE):
        raise DataError(
            f"query image must be {store.PATCH_SIZE}x{store.PATCH_SIZE} or at "
            f"least {store.SOURCE_SIZE}x{store.SOURCE_SIZE} with --patch; got {h}x{w}")
    return planes


def cmd_query(args) -> int:
    index = store.load_index(args.index)
    planes = _query_planes(args)
    sig = extract_signature(list(planes), index.scheme, index.family,
                            index.config, stride=index.stride,
                            patch_id="query")
    t0 = time.perf_counter()
    ranked = store.query_index(index, sig, top_k=args.top, jobs=args.jobs,
                               tls_backend=args.tls_divergence)
    sm = time.perf_counter() - t0
    for rank, (patch_id, jd) in enumerate(ranked, start=1):
        print(f"{rank}\t{patch_id}\t{jd:.9g}")
    print(f"SM time: {sm * 1000.0:.1f} ms over {len(index.entries)} entries",
          file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    index = store.load_index(args.index)
    t0 = time.perf_counter()
    report = evaluate.evaluate_index(index, nr=args.nr, jobs=args.jobs,
                                     tls_backend=args.tls_divergence)
    sm = time.perf_counter() - t0
    report.sm_seconds = sm
    report.sm_per_query = sm / max(1, len(report.outcomes))
    body = evaluate.report_tsv(report)
    if args.report:
        Path(args.report).write_text(body)
    else:
        sys.stdout.write(body)
    print(f"ARR = {report.arr:.6f} over {len(report.outcomes)} queries "
          f"(nr={report.nr})", file=sys.stderr)
    print(f"SM time: total {sm * 1000.0:.1f} ms, per query "
          f"{report.sm_per_query * 1000.0:.3f} ms", file=sys.stderr)
    return EXIT_OK


def cmd_compare_schemes(args) -> int:
    schemes = [s for s in args.schemes.split(",") if s]
    if not schemes:
        raise UsageError("--schemes lists no schemes")
    for s in schemes:
        if s not in SCHEMES:
            raise UsageError(f"unknown scheme {s!r}; choose from {SCHEMES}")
    config = _config_from_args(args)
    records, manifest = store.ingest_dataset(args.db)
    if not records:
        raise DataError(f"no usable images in {args.db}")

    print("scheme\tfe_total_s\tfe_per_image_s\tsm_total_s\tsm_per_query_s"
          "\ttotal_s\tarr")
    for scheme in schemes:
        t0 = time.perf_counter()
        index = store.build_index(records, manifest, scheme=scheme,
                                  family=args.marginal, config=config,
                                  stride=args.stride, jobs=args.jobs)
        fe = time.perf_counter() - t0
        t0 = time.perf_counter()
        report = evaluate.evaluate_index(index, nr=args.nr, jobs=args.jobs)
        sm = time.perf_counter() - t0
        n = len(records)
        print(f"{scheme}\t{fe:.3f}\t{fe / n:.6f}\t{sm:.3f}\t{sm / n:.6f}"
              f"\t{fe + sm:.3f}\t{report.arr:.6f}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    config = _config_from_args(args)
    planes = _query_planes(args)
    pyramids = [nsst_decompose(p, config) for p in planes]
    order = subband_order(config)

    if args.pair == "auto":
        s = config.scales
        first = (0, s, 1)
        second = (0, s, 2)
    else:
        parts = args.pair.split(",")
        if len(parts) != 2:
            raise UsageError("--pair needs two comma-separated subband ids")
        first, second = (parse_subband_id(p) for p in parts)
    for sid in (first, second):
        if sid not in order:
            raise UsageError(f"subband {format_subband_id(sid)} does not exist "
                             f"under this configuration")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def band_vector(sid):
        c, s, d = sid
        return pyramids[c].bands[(s, d)].ravel()

    for sid in dict.fromkeys((first, second)):
        vec = band_vector(sid)
        counts, edges = np.histogram(vec, bins=65)
        path = out_dir / f"hist_{format_subband_id(sid)}.csv"
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_center", "count"])
            centers = 0.5 * (edges[:-1] + edges[1:])
            for center, count in zip(centers, counts):
                writer.writerow([f"{center:.9g}", int(count)])
            writer.writerow([])
            writer.writerow(["# kurtosis", f"{kurtosis(vec):.6f}"])
        print(f"wrote {path}", file=sys.stderr)

    result = chi_plot(band_vector(first), band_vector(second))
    path = out_dir / (f"chiplot_{format_subband_id(first)}_"
                      f"{format_subband_id(second)}.csv")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "chi"])
        for lam, chi in zip(result.lam, result.chi):
            writer.writerow([f"{lam:.9g}", f"{chi:.9g}"])
        writer.writerow([])
        writer.writerow(["# pearson", f"{result.pearson:.6f}"])
        writer.writerow(["# spearman", f"{result.spearman:.6f}"])
        writer.writerow(["# kendall", f"{result.kendall:.6f}"])
        writer.writerow(["# band_halfwidth", f"{result.band_halfwidth:.6f}"])
    print(f"wrote {path}", file=sys.stderr)

    if args.export_subbands:
        export_subbands(pyramids, args.export_subbands)
        print(f"exported raw subbands to {args.export_subbands}", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    paths = synth.generate_corpus(args.out, classes=args.classes,
                                  seed=args.seed, size=args.size)
    print(f"wrote {len(paths)} class images to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_oracle(args) -> int:
    rng = np.random.default_rng(args.seed)
    writer = csv.writer(sys.stdout)
    if args.family == "gg":
        writer.writerow(["alpha_db", "beta_db", "alpha_q", "beta_q",
                         "closed", "numeric"])
        for _ in range(args.pairs):
            a1, a2 = rng.uniform(0.2, 5.0, 2)
            b1, b2 = rng.uniform(0.3, 4.0, 2)
            db, q = GgParams(a1, b1, 0.0), GgParams(a2, b2, 0.0)
            writer.writerow([a1, b1, a2, b2, divergence.kld_gg(db, q),
                             divergence.kld_gg_numeric(db, q)])
    elif args.family == "tls":
        writer.writerow(["sigma_db", "nu_db", "sigma_q", "nu_q",
                         "closed", "numeric"])
        for _ in range(args.pairs):
            s1, s2 = rng.uniform(0.5, 3.0, 2)
            n1, n2 = rng.uniform(1.0, 30.0, 2)
            db, q = TlsParams(0.0, s1, n1), TlsParams(0.0, s2, n2)
            writer.writerow([s1, n1, s2, n2, divergence.kld_tls_closed(db, q),
                             divergence.kld_tls_numeric(db, q)])
    else:
        writer.writerow(["dim", "closed", "mc", "mc_stderr"])
        for _ in range(args.pairs):
            dim = int(rng.integers(2, 5))
            sigma_db = _random_correlation(rng, dim)
            sigma_q = _random_correlation(rng, dim)
            closed = divergence.kld_gaussian_copula(sigma_db, sigma_q)
            est = divergence.kld_copula_numeric(
                sigma_db, sigma_q, n_draws=args.draws,
                seed=int(rng.integers(2 ** 31)))
            writer.writerow([dim, closed, est.value, est.stderr])
    return EXIT_OK


def _random_correlation(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.standard_normal((dim, dim + 2))
    cov = a @ a.T + 0.5 * np.eye(dim)
    d = np.sqrt(np.diag(cov))
    return cov / np.outer(d, d)


# ---------------------------------------------------------------------------

_HANDLERS = {
    "index": cmd_index,
    "query": cmd_query,
    "evaluate": cmd_evaluate,
    "compare-schemes": cmd_compare_schemes,
    "diagnose": cmd_diagnose,
    "synth": cmd_synth,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IncompatibleSignatureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (DataError, DegenerateSampleError, TexretError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
