"""Command-line front end: ``gradcomp {fit,compress,decompress,bench,grid}``.

Exit status: 0 success, 2 usage, 3 format, 4 corruption, 5 fit failure,
6 configuration. Outputs are written to a temp file and renamed into place,
so a failed command leaves no partial files.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import archive, coder, gennorm, harness, stats, tensorio
from .errors import (
    CodingError,
    ConfigError,
    CorruptionError,
    FitError,
    FormatError,
    InputError,
)
from .quantizer import Fp8Format, build_grid, dequantize, quantize

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_CORRUPT = 4
EXIT_FIT = 5
EXIT_CONFIG = 6

OUTPUT_DIR_ENV = "GRADCOMP_OUTPUT_DIR"


def _default_out(name):
    return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / name


def _read_gtf(path):
    try:
        return tensorio.read_records(path)
    except FileNotFoundError:
        raise FormatError(f"no such file: {path}") from None


def cmd_fit(args):
    records = _read_gtf(args.input)
    reports = []
    for rec in records:
        try:
            reports.append(stats.fit_report(rec.values.astype(np.float64), rec.epoch, rec.layer_label))
        except InputError as exc:
            raise FitError(f"record {rec.layer_label!r} epoch {rec.epoch}: {exc}") from None
    out = args.output or _default_out(Path(args.input).stem + ".fits.csv")
    tensorio.atomic_write(out, stats.fit_reports_to_csv(reports).encode())
    print(f"wrote {len(reports)} fit rows to {out}")
    return EXIT_OK


def cmd_compress(args):
    fmt = Fp8Format.parse(args.format)
    grid = build_grid(fmt)
    records = _read_gtf(args.input)
    entries = []
    for rec in records:
        x = rec.values.astype(np.float64)
        stream = quantize(x, grid)
        lengths = ()
        if args.coder == "lz78":
            blob = coder.lz78_encode(stream)
        else:
            if args.model == "empirical":
                cb = coder.build_huffman(coder.pmf_empirical(stream, grid))
                lengths = tuple(int(n) for n in cb.lengths)
            else:
                try:
                    p = gennorm.fit(x) if args.model == "gennorm" else gennorm.fit_norm(x)
                except InputError as exc:
                    raise FitError(f"record {rec.layer_label!r}: {exc}") from None
                tag = coder.ModelTag.GENNORM if args.model == "gennorm" else coder.ModelTag.NORM
                cb = coder.build_huffman(coder.pmf_from_model(p, grid, tag))
            blob = coder.encode(stream, cb)
        entries.append(archive.ArchiveEntry(rec.layer_label, rec.epoch, rec.shape, blob, lengths))
        bps = blob.bit_length / max(len(stream), 1)
        print(f"{rec.layer_label}\tepoch={rec.epoch}\tsymbols={len(stream)}\t"
              f"bits={blob.bit_length}\tbits_per_symbol={bps:.6f}")
    out = args.output or _default_out(Path(args.input).stem + ".gca")
    tensorio.atomic_write(out, archive.to_bytes(entries))
    return EXIT_OK


def cmd_decompress(args):
    try:
        raw = Path(args.input).read_bytes()
    except FileNotFoundError:
        raise FormatError(f"no such file: {args.input}") from None
    records = []
    for e in archive.from_bytes(raw):
        fmt = e.blob.fmt()
        if fmt is None:
            raise FormatError("blob carries no quantization format")
        grid = build_grid(fmt)
        if e.blob.model == coder.ModelTag.EMPIRICAL:
            lengths = np.asarray(e.code_lengths, dtype=np.int64)
            if lengths.size != grid.n_bins:
                raise FormatError("empirical entry lacks a codebook")
            cb = coder.Codebook(lengths, coder.canonical_codes(lengths),
                                coder.ModelTag.EMPIRICAL, None, fmt)
            stream = coder.decode(e.blob, cb)
        else:
            stream = coder.decode_blob(e.blob)
        values = dequantize(stream, grid).astype(np.float32)
        records.append(tensorio.GradientRecord(e.layer_label, e.epoch, e.shape, values))
    out = args.output or _default_out(Path(args.input).stem + ".out.gtf")
    tensorio.write_records(out, records)
    print(f"wrote {len(records)} records to {out}")
    return EXIT_OK


def default_config_text() -> str:
    return resources.files("gradcomp").joinpath("reference.cfg").read_text(encoding="utf-8")


def cmd_bench(args):
    if args.config:
        try:
            cfg = harness.BenchConfig.from_file(args.config)
        except FileNotFoundError:
            raise ConfigError(f"no such config file: {args.config}") from None
    else:
        cfg = harness.BenchConfig.from_text(default_config_text())
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out_dir = Path(args.output or cfg.output_dir or os.environ.get(OUTPUT_DIR_ENV, "bench-out"))
    result = harness.run_experiment(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {
        "ledger.csv": result.ledger.to_csv(),
        "rounds.csv": harness.round_reports_to_csv(result.rounds),
        "fits.csv": stats.fit_reports_to_csv(result.fit_reports),
    }
    for name, text in outputs.items():
        tensorio.atomic_write(out_dir / name, text.encode())
    for name in cfg.coders:
        print(f"{name}\tR={result.ledger.total(name)} bits")
    print(f"wrote {', '.join(outputs)} to {out_dir}")
    return EXIT_OK


def cmd_grid(args):
    grid = build_grid(Fp8Format.parse(args.format))
    text = grid.to_csv()
    if args.output:
        tensorio.atomic_write(args.output, text.encode())
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _format_arg(text):
    try:
        Fp8Format.parse(text)
    except (ValueError, InputError):
        raise argparse.ArgumentTypeError(f"invalid format {text!r}") from None
    return text


def build_parser():
    ap = argparse.ArgumentParser(prog="gradcomp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit GenNorm/normal models to every record of a GTF file")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compress", help="quantize and encode a GTF file into a GCA archive")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.add_argument("--model", choices=("gennorm", "norm", "empirical"), default="gennorm")
    p.add_argument("--coder", choices=("huffman", "lz78"), default="huffman")
    p.add_argument("--format", type=_format_arg, default="1,5,2")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="rebuild a GTF file of bin centers from a GCA archive")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("bench", help="run the federated benchmark and write CSV reports")
    p.add_argument("config", nargs="?")
    p.add_argument("-o", "--output", help="output directory")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("grid", help="dump the quantization grid as CSV")
    p.add_argument("--format", type=_format_arg, default="1,5,2")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_grid)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (CorruptionError, CodingError) as exc:
        print(f"corruption error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (FormatError, InputError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
