"""Command-line surface: one subcommand per pipeline step.

Every command reads one JSON config (plus ``--set key=value`` overrides),
writes its artifacts atomically under the output directory (one subdirectory
per seed), and records a manifest with the config hash and the hashes of its
input files. Exit code 0 on success; failures print a one-line diagnostic.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, default_config_names, load_config
from .data import Dataset
from .distill import DistillMode, noise_benchmark
from .errors import ArtifactMissingError, SpannerError
from . import pipeline
from .stage1 import Stage1Model, detect_candidates
from .stage2 import Stage2Model
from .synthetic import CorpusSpec, write_corpus
from .util import atomic_write_json, atomic_write_text, sha256_file
from .verify import grad_check_suite

log = logging.getLogger("spanner")


def _setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _load_run_config(args) -> RunConfig:
    config = load_config(args.config, args.set or [])
    cache_override = os.environ.get("SPANNER_CACHE_DIR")
    if cache_override:
        raw = config.to_dict()
        raw["knowledge"]["cache_dir"] = cache_override
        config = RunConfig.from_dict(raw)
    return config


def _base_dir(args) -> Path:
    return Path(args.config).resolve().parent


def _seed_dir(config: RunConfig, base: Path, seed: int) -> Path:
    out = base / config.output_dir / f"seed-{seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(
    out_dir: Path, command: str, config: RunConfig, seed: int,
    inputs: list[Path], artifacts: list[Path],
):
    manifest = {
        "command": command,
        "seed": seed,
        "config_sha256": config.config_hash(),
        "config": config.to_dict(),
        "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).exists()},
        "artifacts": [p.name for p in artifacts],
    }
    atomic_write_json(out_dir / f"{command}.manifest.json", manifest)


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ArtifactMissingError(
            f"missing {path.name}; run the {producer!r} command first"
        )
    return path


def _dataset_paths(config: RunConfig, base: Path) -> list[Path]:
    out = [base / config.dataset.train]
    if config.dataset.test:
        out.append(base / config.dataset.test)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_make_corpus(args) -> int:
    out_dir = Path(args.out)
    spec = CorpusSpec(sentences=args.sentences)
    corpus, snapshot = write_corpus(out_dir, spec, args.seed)
    print(f"wrote {corpus} and {snapshot}")
    return 0


def cmd_train_stage1(args) -> int:
    config = _load_run_config(args)
    base = _base_dir(args)
    train, _test = pipeline.load_dataset(config, base)
    for seed in config.seeds:
        out = _seed_dir(config, base, seed)
        teacher, shipped = pipeline.train_stage1_for_run(config, train, seed)
        shipped.save(out / "stage1.ckpt", seed)
        artifacts = [out / "stage1.ckpt"]
        if shipped is not teacher:
            teacher.save(out / "stage1-teacher.ckpt", seed)
            artifacts.append(out / "stage1-teacher.ckpt")
        _write_manifest(out, "train-stage1", config, seed,
                        _dataset_paths(config, base), artifacts)
        log.info("seed %d: stage-1 model saved to %s", seed, out / "stage1.ckpt")
    return 0


def cmd_harvest(args) -> int:
    config = _load_run_config(args)
    base = _base_dir(args)
    train, _test = pipeline.load_dataset(config, base)
    for seed in config.seeds:
        out = _seed_dir(config, base, seed)
        negatives = pipeline.harvest_for_run(config, train, seed)
        pipeline.write_candidates_jsonl(out / "fold_negatives.jsonl", negatives)
        _write_manifest(out, "harvest", config, seed,
                        _dataset_paths(config, base), [out / "fold_negatives.jsonl"])
        log.info("seed %d: %d fold negatives", seed, len(negatives))
    return 0


def cmd_fetch_knowledge(args) -> int:
    config = _load_run_config(args)
    base = _base_dir(args)
    train, test = pipeline.load_dataset(config, base)
    client = pipeline.wiki_client(config, base)
    surfaces = sorted(
        {
            span.surface
            for dataset in (train, test)
            for sentence in dataset.sentences
            for span in sentence.gold_spans()
        }
    )
    sources: dict[str, str] = {}
    for surface in surfaces:
        sources[surface] = client.fetch(surface).source
    out = base / config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_json(out / "knowledge_manifest.json", {
        "surfaces": sources,
        "misses": sorted(s for s, src in sources.items() if src == "miss"),
    })
    log.info("fetched %d surfaces (%d misses)", len(sources),
             sum(1 for s in sources.values() if s == "miss"))
    return 0


def cmd_train_stage2(args) -> int:
    config = _load_run_config(args)
    base = _base_dir(args)
    train, _test = pipeline.load_dataset(config, base)
    client = pipeline.wiki_client(config, base)
    for seed in config.seeds:
        out = _seed_dir(config, base, seed)
        negatives_path = _require(out / "fold_negatives.jsonl", "harvest")
        negatives = pipeline.read_candidates_jsonl(negatives_path, train.by_id())
        rows = pipeline.training_rows(
            train, negatives, needs_grounding=config.task == "gmner"
        )
        teacher, shipped = pipeline.train_stage2_for_run(config, rows, train, client, seed)
        shipped.save(out / "stage2.ckpt", seed)
        artifacts = [out / "stage2.ckpt"]
        if shipped is not teacher:
            teacher.save(out / "stage2-teacher.ckpt", seed)
            artifacts.append(out / "stage2-teacher.ckpt")
        _write_manifest(out, "train-stage2", config, seed,
                        _dataset_paths(config, base) + [negatives_path], artifacts)
        log.info("seed %d: stage-2 model saved to %s", seed, out / "stage2.ckpt")
    return 0


def cmd_distill(args) -> int:
    config = _load_run_config(args)
    base = _base_dir(args)
    if args.mode:
        raw = config.to_dict()
        raw["distill"]["mode"] = args.mode
        config = RunConfig.from_dict(raw)
    train, _test = pipeline.load_dataset(config, base)
    client = pipeline.wiki_client(config, base)
    for seed in config.seeds:
        out = _seed_dir(config, base, seed)
        if args.stage == 1:
            teacher, student = pipeline.train_stage1_for_run(config, train, seed)
            teacher.save(out / "stage1-teacher.ckpt", seed)
            student.save(out / "stage1-student.ckpt", seed)
            names = ["stage1-teacher.ckpt", "stage1-student.ckpt"]
        else:
            negatives_path = _require(out / "fold_negatives.jsonl", "harvest")
            negatives = pipeline.read_candidates_jsonl(negatives_path, train.by_id())
            rows = pipeline.training_rows(
                train, negatives, needs_grounding=config.task == "gmner"
            )
            teacher, student = pipeline.train_stage2_for_run(config, rows, train, client, seed)
            teacher.save(out / "stage2-teacher.ckpt", seed)
            student.save(out / "stage2-student.ckpt", seed)
            names = ["stage2-teacher.ckpt", "stage2-student.ckpt"]
        _write_manifest(out, "distill", config, seed,
                        _dataset_paths(config, base), [out / n for n in names])
        log.info("seed %d: wrote %s", seed, ", ".join(names))
    return 0


def cmd_predict(args) -> int:
    config = _load_run_config(args)
    base = _base_dir(args)
    _train, test = pipeline.load_dataset(config, base)
    client = pipeline.wiki_client(config, base)
    for seed in config.seeds:
        out = _seed_dir(config, base, seed)
        stage1 = Stage1Model.load(_require(out / "stage1.ckpt", "train-stage1"))
        stage2 = Stage2Model.load(_require(out / "stage2.ckpt", "train-stage2"))
        candidates = detect_candidates(stage1, test.sentences)
        pipeline.write_candidates_jsonl(out / "candidates.jsonl", candidates)
        bundles = pipeline.bundles_for(candidates, test.by_id(), client)
        from .stage2 import predict as stage2_predict

        predictions = stage2_predict(stage2, candidates, bundles, test.by_id(), config.stage2)
        pipeline.write_predictions_jsonl(out / "predictions.jsonl", predictions)
        _write_manifest(
            out, "predict", config, seed,
            _dataset_paths(config, base) + [out / "stage1.ckpt", out / "stage2.ckpt"],
            [out / "candidates.jsonl", out / "predictions.jsonl"],
        )
        log.info("seed %d: %d predictions", seed, len(predictions))
    return 0


def _format_report(reports: dict) -> str:
    buffer = io.StringIO()
    for metric, result in reports.items():
        tp, predicted, gold = result.counts
        buffer.write(
            f"{metric:>6}: P {result.precision:.4f}  R {result.recall:.4f}  "
            f"F1 {result.f1:.4f}  (tp {tp} / pred {predicted} / gold {gold})\n"
        )
        for name, scores in sorted(result.per_type.items()):
            buffer.write(
                f"        {name:<12} P {scores.precision:.4f}  R {scores.recall:.4f}  "
                f"F1 {scores.f1:.4f}\n"
            )
    return buffer.getvalue()


def cmd_evaluate(args) -> int:
    config = _load_run_config(args)
    base = _base_dir(args)
    _train, test = pipeline.load_dataset(config, base)
    per_seed = {}
    for seed in config.seeds:
        out = _seed_dir(config, base, seed)
        predictions_path = (
            Path(args.predictions) if args.predictions
            else _require(out / "predictions.jsonl", "predict")
        )
        predictions = pipeline.read_predictions_jsonl(predictions_path, test.by_id())
        reports = pipeline.evaluate_for_run(config, predictions, test)
        payload = {metric: result.to_dict() for metric, result in reports.items()}
        atomic_write_json(out / "report.json", payload)
        per_seed[seed] = payload
        print(f"seed {seed}")
        print(_format_report(reports), end="")
    aggregate = {"seeds": per_seed}
    for metric in next(iter(per_seed.values())):
        f1s = [per_seed[s][metric]["f1"] for s in per_seed]
        aggregate[metric] = {
            "mean_f1": float(np.mean(f1s)),
            "stddev_f1": float(np.std(f1s, ddof=1)) if len(f1s) > 1 else 0.0,
        }
    out_root = base / config.output_dir
    atomic_write_json(out_root / "report.json", aggregate)
    return 0


def cmd_noise_bench(args) -> int:
    config = _load_run_config(args)
    base = _base_dir(args)
    modes = [DistillMode(m) for m in (args.modes.split(",") if args.modes
                                      else ["off", "adaptive", "half", "full"])]
    rates = ([float(r) for r in args.rates.split(",")] if args.rates
             else list(config.noise_rates))
    report = noise_benchmark(config.noise_bench, rates, modes, list(config.seeds))
    out = base / config.output_dir
    out.mkdir(parents=True, exist_ok=True)

    rows_csv = io.StringIO()
    writer = csv.writer(rows_csv)
    writer.writerow(["noise_rate", "mode", "seed", "test_accuracy"])
    for row in report.rows:
        writer.writerow([row.noise_rate, row.mode, row.seed, f"{row.test_accuracy:.6f}"])
    atomic_write_text(out / "noise_bench.csv", rows_csv.getvalue())

    summary_csv = io.StringIO()
    writer = csv.writer(summary_csv)
    writer.writerow(["noise_rate", "mode", "mean_accuracy", "stddev", "runs"])
    for entry in report.summary():
        writer.writerow([
            entry["noise_rate"], entry["mode"],
            f"{entry['mean_accuracy']:.6f}", f"{entry['stddev']:.6f}", entry["runs"],
        ])
    atomic_write_text(out / "noise_bench_summary.csv", summary_csv.getvalue())
    print(summary_csv.getvalue(), end="")

    if args.check_ordering:
        rate = max(rates)
        adaptive = report.mean_accuracy(rate, "adaptive")
        violations = [
            mode for mode in ("half", "full")
            if mode in {m.value for m in modes}
            and adaptive < report.mean_accuracy(rate, mode)
        ]
        if violations:
            print(
                f"ordering violated at rate {rate}: adaptive < {', '.join(violations)}",
                file=sys.stderr,
            )
            return 3
    return 0


def cmd_grad_check(args) -> int:
    entries = grad_check_suite(h=args.h)
    worst = 0.0
    payload = {}
    for entry in entries:
        status = "ok" if entry.report.ok(args.tol) else "FAIL"
        print(
            f"{entry.name:<20} max rel err {entry.report.max_relative_error:.3e} "
            f"({entry.report.entries_checked} entries) {status}"
        )
        payload[entry.name] = {
            "max_relative_error": entry.report.max_relative_error,
            "entries": entry.report.entries_checked,
            "worst_parameter": entry.report.worst_parameter,
        }
        worst = max(worst, entry.report.max_relative_error)
    if args.out:
        atomic_write_json(Path(args.out), payload)
    return 0 if worst < args.tol else 4


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spanner",
        description="Two-stage span-candidate NER pipeline with knowledge "
                    "prompts, visual grounding, and self-distillation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (dotted path)")
        return p

    p = sub.add_parser("make-corpus", help="generate the synthetic multimodal corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--sentences", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_make_corpus)

    p = with_config(sub.add_parser("train-stage1", help="train the span detector"))
    p.set_defaults(fn=cmd_train_stage1)

    p = with_config(sub.add_parser("harvest", help="cross-fold non-entity negatives"))
    p.set_defaults(fn=cmd_harvest)

    p = with_config(sub.add_parser("fetch-knowledge", help="prefetch wiki snippets"))
    p.set_defaults(fn=cmd_fetch_knowledge)

    p = with_config(sub.add_parser("train-stage2", help="train the recognizer"))
    p.set_defaults(fn=cmd_train_stage2)

    p = with_config(sub.add_parser("distill", help="teacher/student run for one stage"))
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--mode", choices=("adaptive", "half", "full"))
    p.set_defaults(fn=cmd_distill)

    p = with_config(sub.add_parser("predict", help="detect, fetch knowledge, classify"))
    p.set_defaults(fn=cmd_predict)

    p = with_config(sub.add_parser("evaluate", help="score predictions against gold"))
    p.add_argument("--predictions", help="explicit predictions JSONL (default: artifact)")
    p.set_defaults(fn=cmd_evaluate)

    p = with_config(sub.add_parser("noise-bench", help="label-noise robustness benchmark"))
    p.add_argument("--rates", help="comma-separated noise rates")
    p.add_argument("--modes", help="comma-separated distillation modes")
    p.add_argument("--check-ordering", action="store_true",
                   help="exit nonzero when adaptive falls below the fixed blends")
    p.set_defaults(fn=cmd_noise_bench)

    p = sub.add_parser("grad-check", help="verify gradients against central differences")
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(fn=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.fn(args)
    except SpannerError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
