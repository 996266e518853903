"""Command-line entry point: ``roifilter {filter,evaluate,plot}``.

Exit codes: 0 success, 1 environment or I/O failure, 2 invalid input or
configuration. A failing command leaves no output files behind.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .feature_filter import DEFAULT_THRESHOLD, FilterConfigError, apply_filter, driving_whitelist, load_filter_config
from .ingestion import CORPUS_ENV, DumpFormatError, IngestionError, encode_detection_dump, load_corpus, load_detection_dump
from .overlap import CorrectnessGrade, FeatureComparison, compare_features, grade_answer, read_synonyms
from .pipeline import Variant, get_backend, run_pipeline
from .plotting import AggregatesFormatError, plot_aggregates
from .scoring import ScoringInputError, evaluate_run, get_provider

logger = logging.getLogger("roifilter")

EXIT_OK, EXIT_IO, EXIT_INVALID = 0, 1, 2

FORMATS_HELP = f"""\
file formats:
  detection dump   binary 'ROIF' v1: vocabulary block, then tagged column blocks
                   (class_ids u32, scores/boxes/normalized_boxes/roi_features f32 LE)
  whitelist        UTF-8, one class name per line, '#' comments
  synonyms         UTF-8, 'term = term' per line, '#' comments
  corpus root      manifest.jsonl  {{sample_id, camera, image_ref, question_ids}}
                   questions.jsonl {{id, text, sample_id}}
                   answers.jsonl   {{question_id, answers: [{{rater_id, answer, features}}]}}
                   ratings.csv     question_id,variant,rater_id,rating (1-5)
  the corpus root falls back to ${CORPUS_ENV}
"""


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _publish(staging: Path, out_dir: Path) -> None:
    """Move every staged file into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for src in sorted(staging.rglob("*")):
        if src.is_file():
            dst = out_dir / src.relative_to(staging)
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)


# -------------------------------------------------------------------- filter


def cmd_filter(dump: str, out: str, whitelist: str | None = None, threshold: float = DEFAULT_THRESHOLD) -> int:
    try:
        dets, vocab = load_detection_dump(dump)
    except (DumpFormatError, ValueError) as exc:
        raise CommandError(EXIT_INVALID, f"{dump}: {exc}")
    except OSError as exc:
        raise CommandError(EXIT_IO, f"{dump}: {exc}")
    try:
        if whitelist is None:
            cfg, _ = driving_whitelist(vocab, threshold)
        else:
            cfg = load_filter_config(whitelist, vocab, threshold)
    except FilterConfigError as exc:
        raise CommandError(EXIT_INVALID, str(exc))
    except OSError as exc:
        raise CommandError(EXIT_IO, f"{whitelist}: {exc}")

    filtered, trace = apply_filter(dets, cfg, vocab)
    out_path = Path(out)
    trace_path = out_path.with_name(out_path.name + ".trace.json")
    try:
        _write_atomic(out_path, encode_detection_dump(filtered, vocab))
        _write_atomic(trace_path, (json.dumps(trace.to_dict(), indent=2) + "\n").encode())
    except OSError as exc:
        out_path.unlink(missing_ok=True)
        raise CommandError(EXIT_IO, f"cannot write output: {exc}")
    print(f"kept {trace.output_count} of {trace.input_count} (dropped {len(trace.dropped_indices)})")
    return EXIT_OK


# ------------------------------------------------------------------ evaluate


@dataclass
class RunConfig:
    corpus: str | None = None
    out: str = "results"
    whitelist: str | None = None
    threshold: float = DEFAULT_THRESHOLD
    backend: str = "mock"
    seed: int = 0
    providers: list[str] = field(default_factory=lambda: ["hashing"])
    variants: list[str] = field(default_factory=lambda: ["pretrained", "filtered"])
    workers: int = 1
    synonyms: str | None = None
    backend_options: dict = field(default_factory=dict)

    def problems(self) -> list[str]:
        out = []
        if not 0.0 <= self.threshold <= 1.0:
            out.append(f"threshold {self.threshold} outside [0, 1]")
        if not self.variants:
            out.append("no variant selected")
        for v in self.variants:
            if v not in {x.value for x in Variant}:
                out.append(f"unknown variant {v!r}")
        if len(set(self.variants)) != len(self.variants):
            out.append("duplicate variant")
        if not self.providers:
            out.append("no embedding provider selected")
        if self.workers < 1:
            out.append("workers must be >= 1")
        return out


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


def cmd_evaluate(config: RunConfig) -> int:
    problems = config.problems()
    if problems:
        raise CommandError(EXIT_INVALID, "\n".join(problems))
    try:
        corpus = load_corpus(config.corpus)
    except IngestionError as exc:
        raise CommandError(EXIT_INVALID, f"corpus validation failed ({len(exc.problems)} problems):\n{exc}")

    options = dict(config.backend_options)
    if config.backend == "dump":
        options.setdefault("root", str(corpus.root))
    try:
        backend = get_backend(config.backend, config.seed, **options)
    except (KeyError, TypeError, ValueError) as exc:
        raise CommandError(EXIT_INVALID, f"backend {config.backend!r}: {exc}")
    except (ImportError, OSError) as exc:
        raise CommandError(EXIT_IO, f"backend {config.backend!r} unavailable: {exc}")
    try:
        providers = [get_provider(name) for name in config.providers]
    except (ImportError, OSError) as exc:
        raise CommandError(EXIT_IO, f"embedding provider unavailable: {exc}")
    try:
        synonyms = read_synonyms(config.synonyms)
    except ValueError as exc:
        raise CommandError(EXIT_INVALID, str(exc))
    except OSError as exc:
        raise CommandError(EXIT_IO, f"{config.synonyms}: {exc}")

    questions = {q.id: q for q in corpus.questions}
    jobs = [
        (sample, questions[qid], Variant(v))
        for sample in sorted(corpus.manifest, key=lambda e: e.sample_id)
        for qid in sorted(sample.question_ids)
        for v in config.variants
    ]

    cfg = None
    if Variant.FILTERED.value in config.variants:
        # The dump backend learns its vocabulary from the first dump.
        if jobs and config.backend == "dump":
            backend.extract_features(jobs[0][0].image_ref)
        try:
            if config.whitelist is None:
                cfg, _ = driving_whitelist(backend.vocabulary, config.threshold)
            else:
                cfg = load_filter_config(config.whitelist, backend.vocabulary, config.threshold)
        except FilterConfigError as exc:
            raise CommandError(EXIT_INVALID, str(exc))
        except OSError as exc:
            raise CommandError(EXIT_IO, f"{config.whitelist}: {exc}")

    def run(job):
        sample, question, variant = job
        return run_pipeline(sample, question, variant, backend, cfg)

    workers = 1 if getattr(backend, "serial", False) else config.workers
    try:
        if workers == 1:
            results = [run(j) for j in jobs]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, jobs))
    except (DumpFormatError, ValueError) as exc:
        raise CommandError(EXIT_INVALID, f"pipeline failed: {exc}")
    except OSError as exc:
        raise CommandError(EXIT_IO, f"pipeline failed: {exc}")
    results.sort(key=lambda r: (r.sample_id, r.question_id, r.variant.value))

    try:
        report = evaluate_run(results, corpus.answers, providers, corpus.ratings)
    except ScoringInputError as exc:
        raise CommandError(EXIT_INVALID, f"scoring inputs incomplete: {exc}")

    humans = {h.question_id: h for h in corpus.answers}
    grade_rows = []
    counts = {v: {g.label: 0 for g in reversed(CorrectnessGrade)} for v in config.variants}
    for res in results:
        grade = grade_answer(res.answer, humans[res.question_id].consensus_answer, synonyms)
        counts[res.variant.value][grade.label] += 1
        grade_rows.append([res.sample_id, res.question_id, res.variant.value, res.answer,
                           humans[res.question_id].consensus_answer, grade.label, grade.colour])

    comparisons = []
    if {"pretrained", "filtered"} <= set(config.variants):
        by_key = {(r.question_id, r.variant): r for r in results}
        for qid in sorted({r.question_id for r in results}):
            comparisons.append(compare_features(
                qid,
                humans[qid].observed_features,
                by_key[(qid, Variant.PRETRAINED)].observed_features,
                by_key[(qid, Variant.FILTERED)].observed_features,
            ))

    summary = {
        "backend": config.backend,
        "seed": config.seed,
        "threshold": config.threshold,
        "whitelist": None if cfg is None else sorted(cfg.whitelist),
        "providers": list(config.providers),
        "questions": len({r.question_id for r in results}),
        "grades": counts,
    }
    files = {
        "results.jsonl": "".join(r.to_json() + "\n" for r in results).encode("utf-8"),
        "similarity_rows.csv": _csv_bytes(
            ["provider", "variant", "question_id", "auto_score", "human_score"],
            [[r.provider, r.variant, r.question_id, repr(r.auto_score), repr(r.human_score)] for r in report.rows],
        ),
        "aggregates.json": _json_bytes(report.aggregates_json()),
        "grades.csv": _csv_bytes(
            ["sample_id", "question_id", "variant", "answer", "consensus", "grade", "colour"], grade_rows
        ),
        "summary.json": _json_bytes(summary),
    }
    if comparisons:
        files["feature_comparison.csv"] = _csv_bytes(FeatureComparison.CSV_FIELDS, [c.csv_row() for c in comparisons])

    out_dir = Path(config.out)
    try:
        out_dir.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryDirectory(dir=out_dir.parent, prefix=f".{out_dir.name}.") as tmp:
            for name, data in files.items():
                (Path(tmp) / name).write_bytes(data)
            _publish(Path(tmp), out_dir)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot write results: {exc}")

    for variant, c in counts.items():
        print(f"{variant}: " + ", ".join(f"{k}={n}" for k, n in c.items()))
    for (provider, variant), agg in report.aggregates.items():
        r = "undefined" if agg.pearson is None else f"{agg.pearson:.4f}"
        print(f"{provider} {variant}: mae={agg.mae:.4f} rmse={agg.rmse:.4f} pearson={r}")
    return EXIT_OK


# ---------------------------------------------------------------------- plot


def cmd_plot(aggregates: str, out_dir: str) -> int:
    try:
        data = json.loads(Path(aggregates).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CommandError(EXIT_INVALID, f"{aggregates}: {exc}")
    except OSError as exc:
        raise CommandError(EXIT_IO, f"{aggregates}: {exc}")
    out = Path(out_dir)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.TemporaryDirectory(dir=out.parent, prefix=f".{out.name}.") as tmp:
            paths = plot_aggregates(data, Path(tmp))
            _publish(Path(tmp), out)
    except AggregatesFormatError as exc:
        raise CommandError(EXIT_INVALID, f"{aggregates}: {exc}")
    except OSError as exc:
        raise CommandError(EXIT_IO, f"cannot write plots: {exc}")
    for p in paths:
        print(out / p.name)
    return EXIT_OK


# ----------------------------------------------------------------- argparse


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="roifilter",
        description="Human-guided detection filter and subjective scoring for VQA pipelines.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=FORMATS_HELP,
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter", help="filter a detection dump", epilog=FORMATS_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("dump")
    p.add_argument("--out", required=True, help="filtered dump path; the trace goes to <out>.trace.json")
    p.add_argument("--whitelist", help="whitelist file (default: bundled driving whitelist)")
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)

    p = sub.add_parser("evaluate", help="run both pipeline variants over a corpus and score them",
                       epilog=FORMATS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--corpus", help=f"corpus root (default: ${CORPUS_ENV})")
    p.add_argument("--out")
    p.add_argument("--whitelist")
    p.add_argument("--threshold", type=float)
    p.add_argument("--backend", help="'mock', 'dump' or package.module:factory")
    p.add_argument("--seed", type=int)
    p.add_argument("--providers", type=_csv_list, help="comma-separated, e.g. hashing,hashing:b")
    p.add_argument("--variants", type=_csv_list, help="comma-separated subset of pretrained,filtered")
    p.add_argument("--workers", type=int)
    p.add_argument("--synonyms")

    p = sub.add_parser("plot", help="bar charts (SVG) of an aggregates.json")
    p.add_argument("aggregates")
    p.add_argument("--out", required=True)
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        try:
            values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CommandError(EXIT_INVALID, f"{args.config}: {exc}")
        except OSError as exc:
            raise CommandError(EXIT_IO, f"{args.config}: {exc}")
        known = set(RunConfig.__dataclass_fields__)
        unknown = sorted(set(values) - known) if isinstance(values, dict) else ["<not an object>"]
        if unknown:
            raise CommandError(EXIT_INVALID, f"{args.config}: unknown keys {unknown}")
    for key in RunConfig.__dataclass_fields__:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise CommandError(EXIT_INVALID, str(exc))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        if args.command == "filter":
            return cmd_filter(args.dump, args.out, args.whitelist, args.threshold)
        if args.command == "evaluate":
            return cmd_evaluate(load_run_config(args))
        return cmd_plot(args.aggregates, args.out)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
