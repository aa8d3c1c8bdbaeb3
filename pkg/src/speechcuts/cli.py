"""
``speechcuts`` command line.

Data and counts go to stdout, diagnostics to stderr. Exit codes: 0 success,
1 user error (bad flags, bad input, failed validation), 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from speechcuts.cutset import CutSet, LazySource, combine, validate_cuts
from speechcuts.manifest import (
    ManifestParseError,
    ValidationReport,
    dumps_line,
    iter_jsonl,
    read_manifests,
    save_manifests,
    validate,
)
from speechcuts.utils import SpeechCutsError

logger = logging.getLogger("speechcuts")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


class _Output:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def info(self, msg: str) -> None:
        if not self.quiet:
            print(msg)


def _manifest_path(directory: Path, stem: str) -> Optional[Path]:
    for ext in (".jsonl.gz", ".jsonl"):
        p = directory / f"{stem}{ext}"
        if p.is_file():
            return p
    return None


def _out_name(directory: Path, stem: str, compress: bool) -> Path:
    return directory / f"{stem}.jsonl.gz" if compress else directory / f"{stem}.jsonl"


def _sniff_kind(path: Path) -> Optional[str]:
    for _, data in iter_jsonl(path):
        if "type" in data:
            return "cut"
        if "sources" in data:
            return "recording"
        if "storage_key" in data:
            return "features"
        return "supervision"
    return None


def _recordings_source(directory: Path):
    path = _manifest_path(directory, "recordings")
    if path is None:
        raise FileNotFoundError(f"no recordings.jsonl[.gz] in {directory}")
    return LazySource(read_manifests, path, "recording")


def _supervisions(directory: Path) -> list:
    path = _manifest_path(directory, "supervisions")
    return list(read_manifests(path, "supervision")) if path is not None else []


def load_cutset(path) -> CutSet:
    """A cuts file (lazy), or a directory with recordings/supervisions manifests."""
    p = Path(path)
    if p.is_dir():
        cuts_file = _manifest_path(p, "cuts")
        if cuts_file is not None:
            return CutSet.from_file(cuts_file)
        return CutSet.from_manifests(_recordings_source(p), _supervisions(p), lazy=True)
    if not p.exists():
        raise FileNotFoundError(f"{p} not found")
    return CutSet.from_file(p)


def _write_cuts(cuts: CutSet, out) -> int:
    out_path = Path(out)
    if out_path.parent and not out_path.parent.exists():
        out_path.parent.mkdir(parents=True, exist_ok=True)
    return save_manifests(cuts, out_path)


# commands
def cmd_validate(args, out: _Output) -> int:
    report = ValidationReport()
    recordings, supervisions, features, cuts = [], [], [], []
    paths: List[Path] = []
    for raw in args.paths:
        p = Path(raw)
        if p.is_dir():
            found = [q for q in (_manifest_path(p, s) for s in ("recordings", "supervisions", "features", "cuts")) if q]
            if not found:
                raise FileNotFoundError(f"no manifests found in {p}")
            paths.extend(found)
        elif p.exists():
            paths.append(p)
        else:
            raise FileNotFoundError(f"{p} not found")
    for p in paths:
        try:
            kind = _sniff_kind(p)
            if kind is None:
                continue
            items = list(read_manifests(p, kind))
        except (ManifestParseError, SpeechCutsError) as e:
            report.errors.append(f"{p}: {e}")
            continue
        {"recording": recordings, "supervision": supervisions, "features": features, "cut": cuts}[kind].extend(items)
    if recordings or supervisions or features:
        report.extend(validate(recordings, supervisions, features))
    if cuts:
        report.extend(validate_cuts(cuts))
    print(report.render(), file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_USER


def cmd_kaldi_import(args, out: _Output) -> int:
    from speechcuts.kaldi import import_kaldi

    recordings, supervisions = import_kaldi(
        args.kaldi_dir, default_sampling_rate=args.sampling_rate, gender_to_custom=args.gender_to_custom
    )
    dest = Path(args.out_dir)
    dest.mkdir(parents=True, exist_ok=True)
    save_manifests(recordings, _out_name(dest, "recordings", args.compress))
    save_manifests(supervisions, _out_name(dest, "supervisions", args.compress))
    out.info(f"imported {len(recordings)} recordings, {len(supervisions)} supervisions")
    return EXIT_OK


def cmd_kaldi_export(args, out: _Output) -> int:
    from speechcuts.kaldi import export_kaldi

    src = Path(args.manifest_dir)
    recordings = list(_recordings_source(src))
    supervisions = _supervisions(src)
    files = export_kaldi(recordings, supervisions, args.out_dir)
    out.info(f"exported {len(recordings)} recordings, {len(supervisions)} supervisions to {len(files)} files")
    return EXIT_OK


def cmd_cut(args, out: _Output) -> int:
    cuts = load_cutset(args.input)
    if args.mode == "trim-to-supervisions":
        result = cuts.trim_to_supervisions()
    else:
        if args.window is None:
            raise UsageError("windows mode needs --window")
        result = cuts.cut_into_windows(args.window, args.hop, keep_overlapping=args.keep_overlapping)
    n = _write_cuts(result, args.output)
    out.info(f"{n} cuts")
    return EXIT_OK


def cmd_describe(args, out: _Output) -> int:
    stats = load_cutset(args.input).describe(verbose=args.verbose)
    print(json.dumps(stats.to_dict(), sort_keys=True) if args.json else stats.render())
    return EXIT_OK


def cmd_sample_simulate(args, out: _Output) -> int:
    from speechcuts.sampling import SamplerConstraints, bucketing_sample, dynamic_sample, estimate_buckets

    cuts = load_cutset(args.input)
    constraints = SamplerConstraints(
        max_duration=args.max_duration,
        max_cuts=args.max_cuts,
        drop_last=args.drop_last,
        shuffle_seed=args.seed if args.shuffle else None,
        world_size=args.world_size,
        rank=args.rank,
        shuffle_buffer=args.shuffle_buffer,
    )
    if args.buckets > 1:
        batches = bucketing_sample(cuts, estimate_buckets(cuts, args.buckets), constraints)
    else:
        batches = dynamic_sample(cuts, constraints)
    num_batches = num_cuts = oversized = 0
    waste = 0.0
    with open(args.plan, "w", encoding="utf-8") as f:
        for batch in batches:
            f.write(dumps_line(batch.to_plan_dict()))
            num_batches += 1
            num_cuts += len(batch)
            oversized += batch.oversized
            waste += batch.padding_waste
    out.info(
        f"batches={num_batches} cuts={num_cuts} oversized={oversized} padding_waste={waste:.3f}"
    )
    return EXIT_OK


def cmd_synth(args, out: _Output) -> int:
    from speechcuts.synth import generate_synthetic_corpus

    corpus = generate_synthetic_corpus(
        args.out_dir,
        num_recordings=args.num_recordings,
        duration_range=(args.min_duration, args.max_duration),
        num_speakers=args.num_speakers,
        seed=args.seed,
        sampling_rate=args.sampling_rate,
        compress=args.compress,
    )
    out.info(f"{len(corpus.recordings)} recordings, {len(corpus.supervisions)} supervisions")
    return EXIT_OK


def cmd_combine(args, out: _Output) -> int:
    n = _write_cuts(combine(*(load_cutset(p) for p in args.inputs)), args.output)
    out.info(f"{n} cuts")
    return EXIT_OK


def cmd_subset(args, out: _Output) -> int:
    ids = None
    if args.ids_file is not None:
        with open(args.ids_file, encoding="utf-8") as f:
            ids = [line.strip() for line in f if line.strip()]
    given = sum(x is not None for x in (args.first, args.last, ids))
    if given != 1:
        raise UsageError("give exactly one of --first, --last, --ids-file")
    result = load_cutset(args.input).subset(first=args.first, last=args.last, ids=ids)
    n = _write_cuts(result, args.output)
    out.info(f"{n} cuts")
    return EXIT_OK


def cmd_split(args, out: _Output) -> int:
    parts = load_cutset(args.input).split(args.num_parts, shuffle=args.shuffle, seed=args.seed)
    dest = Path(args.out_dir)
    dest.mkdir(parents=True, exist_ok=True)
    width = len(str(args.num_parts - 1))
    for i, part in enumerate(parts):
        n = _write_cuts(part, _out_name(dest, f"cuts.{i:0{width}d}", args.compress))
        out.info(f"part {i}: {n} cuts")
    return EXIT_OK


def cmd_shuffle(args, out: _Output) -> int:
    cuts = load_cutset(args.input)
    result = cuts.lazy_shuffle(args.buffer_size, args.seed) if args.buffer_size else cuts.shuffle(args.seed)
    n = _write_cuts(result, args.output)
    out.info(f"{n} cuts")
    return EXIT_OK


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    """Global flags, accepted before or after the subcommand.

    Subcommand copies default to SUPPRESS so they never clobber a value given
    before the subcommand.
    """
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    flags.add_argument(
        "--compress", action=argparse.BooleanOptionalAction, default=d(True),
        help="gzip manifests written into directories (default on)",
    )
    flags.add_argument("--quiet", action="store_true", default=d(False), help="suppress counts on stdout")
    return flags


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(defaults=False)
    parser = _Parser(
        prog="speechcuts", description="Speech corpus manifests, cuts and batch planning.",
        parents=[_global_flags(defaults=True)],
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", parents=[common], help="validate manifest files or directories")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_validate)

    kaldi = sub.add_parser("kaldi", help="Kaldi data directory import/export")
    ksub = kaldi.add_subparsers(dest="kaldi_command", required=True, parser_class=_Parser)
    p = ksub.add_parser("import", parents=[common], help="Kaldi dir -> manifests")
    p.add_argument("kaldi_dir")
    p.add_argument("out_dir")
    p.add_argument("--sampling-rate", type=int, default=16000, help="rate assumed for command (pipe) entries")
    p.add_argument("--gender-to-custom", action="store_true", help="copy spk2gender into supervision custom fields")
    p.set_defaults(func=cmd_kaldi_import)
    p = ksub.add_parser("export", parents=[common], help="manifests dir -> Kaldi dir")
    p.add_argument("manifest_dir")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_kaldi_export)

    p = sub.add_parser("cut", parents=[common], help="make cuts from a manifest dir or cuts file")
    p.add_argument("mode", choices=["trim-to-supervisions", "windows"])
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--window", type=float)
    p.add_argument("--hop", type=float)
    p.add_argument("--keep-overlapping", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_cut)

    p = sub.add_parser("describe", parents=[common], help="corpus statistics")
    p.add_argument("input")
    p.add_argument("--verbose", action="store_true", help="include per-speaker totals")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("sample-simulate", parents=[common], help="write a batch plan as JSONL")
    p.add_argument("input")
    p.add_argument("plan")
    p.add_argument("--max-duration", type=float)
    p.add_argument("--max-cuts", type=int)
    p.add_argument("--buckets", type=int, default=1)
    p.add_argument("--world-size", type=int, default=1)
    p.add_argument("--rank", type=int, default=0)
    p.add_argument("--drop-last", action="store_true")
    p.add_argument("--shuffle", action="store_true", help="shuffle with --seed before batching")
    p.add_argument("--shuffle-buffer", type=int, default=10_000)
    p.set_defaults(func=cmd_sample_simulate)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("out_dir")
    p.add_argument("--num-recordings", type=int, default=10)
    p.add_argument("--min-duration", type=float, default=2.0)
    p.add_argument("--max-duration", type=float, default=10.0)
    p.add_argument("--num-speakers", type=int, default=4)
    p.add_argument("--sampling-rate", type=int, default=16000)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("combine", parents=[common], help="concatenate cut sets")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--output", "-o", required=True)
    p.set_defaults(func=cmd_combine)

    p = sub.add_parser("subset", parents=[common], help="select cuts")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--first", type=int)
    p.add_argument("--last", type=int)
    p.add_argument("--ids-file", help="file with one cut id per line")
    p.set_defaults(func=cmd_subset)

    p = sub.add_parser("split", parents=[common], help="split into balanced parts")
    p.add_argument("input")
    p.add_argument("out_dir")
    p.add_argument("--num-parts", type=int, required=True)
    p.add_argument("--shuffle", action="store_true")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("shuffle", parents=[common], help="shuffle cuts")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--buffer-size", type=int, default=0, help="streaming shuffle buffer; 0 = full shuffle")
    p.set_defaults(func=cmd_shuffle)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    out = _Output(args.quiet)
    try:
        return args.func(args, out)
    except UsageError as e:
        print(f"speechcuts: error: {e}", file=sys.stderr)
        return EXIT_USER
    except (SpeechCutsError, OSError, ValueError, KeyError) as e:
        message = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"speechcuts: error: {message}", file=sys.stderr)
        return EXIT_USER
    except Exception as e:  # noqa: BLE001
        logger.exception("internal error")
        print(f"speechcuts: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
