"""``gesturenet`` command-line entry point.

Commands::

    gesturenet synth      generate a synthetic corpus into run.corpus
    gesturenet flow       dump the encoded flow stream of one clip as GFVS
    gesturenet train      train one model per split, write checkpoints and loss logs
    gesturenet eval       score checkpoints on the held-out halves, write metric CSVs
    gesturenet reproduce  train + eval every model in model.compare, write summary.csv

All commands accept ``--config FILE``, ``--preset NAME``, ``--set key=value``
(repeatable) and ``--seed N``. Configuration and input errors exit with 2,
runtime failures with 1.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .autodiff import ParamStore
from .config import PRESETS, ConfigError, RunConfig
from .flow import encode_sequence_flow
from .metrics import EvalReport, evaluate_predictions
from .model import ModelParams, build_model
from .pipeline import TwoStreamPipeline
from .synth import Manifest, generate_corpus
from .training import LabeledClip, TrainingError, make_splits, predict, subseed, train
from .video import FrameSequence, VideoFormatError, decode_sequence, write_gfvs

log = logging.getLogger("gesturenet")


class UsageError(Exception):
    """Bad configuration or missing inputs (exit status 2)."""


@dataclass
class Corpus:
    manifest: Manifest
    clips: list[LabeledClip]
    pipeline: TwoStreamPipeline

    def hooks(self):
        records = {r.path: r for r in self.manifest.records}

        def train_hook(ref, rng):
            s = self.pipeline.sample(records[ref], "train", rng)
            return s.rgb, s.flow

        def eval_hook(ref):
            s = self.pipeline.sample(records[ref], "eval", None)
            return s.rgb, s.flow

        return train_hook, eval_hook


def open_corpus(cfg: RunConfig) -> Corpus:
    root = Path(cfg["run.corpus"])
    try:
        manifest = Manifest.read(root, cfg.task)
    except FileNotFoundError as exc:
        raise UsageError(f"corpus not found: {exc}") from None
    n_classes = cfg.train_config().n_classes
    bad = sorted({r.label for r in manifest.records if not 0 <= r.label < n_classes})
    if bad:
        raise UsageError(f"corpus labels {bad} do not fit the {cfg.task} task ({n_classes} classes)")
    absent = sorted(set(range(n_classes)) - {r.label for r in manifest.records})
    if absent:
        raise UsageError(f"corpus has no clips of class {absent} required by the {cfg.task} task")
    for r in manifest.records:
        if not manifest.clip_path(r).exists():
            raise UsageError(f"clip {manifest.clip_path(r)} listed in the manifest is missing")
    clips = [LabeledClip(r.path, r.label, r.duration) for r in manifest.records]
    return Corpus(manifest, clips, TwoStreamPipeline(manifest, cfg.preprocess_config(), cfg.flow_config()))


def corpus_splits(cfg: RunConfig, corpus: Corpus):
    tc = cfg.train_config()
    try:
        return make_splits(corpus.clips, tc.splits, tc.train_fraction, tc.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def checkpoint_path(out: Path, split: int) -> Path:
    return out / f"checkpoint_split{split}.gfck"


def run_train(cfg: RunConfig, out: Path, kind: Optional[str] = None, corpus: Optional[Corpus] = None) -> list[ModelParams]:
    """Train one model per split; writes checkpoints, ``loss_split<k>.csv`` and the config echo."""
    corpus = corpus or open_corpus(cfg)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    tc = cfg.train_config()
    spec = cfg.model_spec(kind)
    train_hook, _ = corpus.hooks()
    models = []
    for k, (train_set, _test) in enumerate(corpus_splits(cfg, corpus)):
        model = build_model(spec, subseed(tc.seed, "init", k))
        start = time.perf_counter()

        def on_epoch(entry, k=k):
            log.info("split %d epoch %d loss %.5f (%.1fs)", k, entry.epoch, entry.mean_train_loss, entry.wall_seconds)

        result = train(model, train_set, tc, train_hook, on_epoch)
        log.info("split %d trained in %.1fs", k, time.perf_counter() - start)
        model.store.save(checkpoint_path(out, k))
        # wall time is opt-in: it would make otherwise identical runs differ
        timed = cfg["train.log_wall_seconds"]
        header = ["epoch", "mean_train_loss", "clipped_steps"] + (["wall_seconds"] if timed else [])
        rows = [[e.epoch, repr(e.mean_train_loss), e.clipped_steps] + ([f"{e.wall_seconds:.3f}"] if timed else []) for e in result.epochs]
        _write_rows(out / f"loss_split{k}.csv", header, rows)
        models.append(model)
    return models


def run_eval(
    cfg: RunConfig,
    out: Path,
    kind: Optional[str] = None,
    corpus: Optional[Corpus] = None,
    checkpoints: Optional[Path] = None,
    checkpoint: Optional[Path] = None,
) -> EvalReport:
    """Score each split's held-out clips with its checkpoint (or one shared ``checkpoint``)."""
    corpus = corpus or open_corpus(cfg)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    spec = cfg.model_spec(kind)
    _, eval_hook = corpus.hooks()
    source = checkpoints or out
    report = EvalReport()
    for k, (_train, test_set) in enumerate(corpus_splits(cfg, corpus)):
        path = checkpoint or checkpoint_path(source, k)
        if not path.is_file():
            raise UsageError(f"checkpoint {path} does not exist")
        store = ParamStore.load(path)
        expected = build_model(spec, 0).store
        if store.names() != expected.names() or any(store[n].shape != expected[n].shape for n in store):
            raise UsageError(f"checkpoint {path} does not match the configured model")
        model = ModelParams(spec, store)
        metrics = evaluate_predictions(predict(model, test_set, eval_hook))
        log.info("split %d auc %.4f top1 %.4f", k, metrics.auc, metrics.top1)
        report.splits.append(metrics)
    report.write(out)
    return report


def run_reproduce(cfg: RunConfig, out: Path) -> dict[str, EvalReport]:
    """Train and evaluate every model kind in ``model.compare``; writes ``summary.csv``."""
    corpus = open_corpus(cfg)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    reports = {}
    for kind in cfg["model.compare"]:
        sub = out / kind
        run_train(cfg, sub, kind, corpus)
        reports[kind] = run_eval(cfg, sub, kind, corpus)
    _write_rows(
        out / "summary.csv",
        ["model", "auc", "acc"],
        [[kind, repr(r.mean_auc), repr(r.mean_top1)] for kind, r in reports.items()],
    )
    return reports


def run_synth(cfg: RunConfig) -> Manifest:
    out = Path(cfg["run.corpus"])
    try:
        spec = cfg.synth_spec()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        manifest = generate_corpus(spec, out)
    except OSError as exc:
        raise UsageError(str(exc)) from None
    cfg.write(out)
    return manifest


def run_flow(cfg: RunConfig, clip: Path, output: Path) -> FrameSequence:
    if not clip.exists():
        raise UsageError(f"clip {clip} does not exist")
    try:
        seq = decode_sequence(clip)
    except (VideoFormatError, OSError) as exc:
        raise UsageError(str(exc)) from None
    flow = FrameSequence(encode_sequence_flow(seq.frames, cfg.flow_config()), seq.fps, seq.source_id)
    output.parent.mkdir(parents=True, exist_ok=True)
    write_gfvs(flow, output)
    return flow


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gesturenet", description="Two-stream gesture recognition toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named bundle of overrides applied before --config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    common.add_argument("--seed", type=int, help="run seed (overrides run.seed)")
    common.add_argument("--out", type=Path, help="output directory (overrides run.out)")
    common.add_argument("--corpus", type=Path, help="corpus directory (overrides run.corpus)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p = sub.add_parser("flow", parents=[common], help="encode the flow stream of one clip")
    p.add_argument("--clip", type=Path, required=True, help="GFVS file or frame directory")
    p.add_argument("--output", type=Path, required=True, help="GFVS file to write")
    sub.add_parser("train", parents=[common], help="train one model per split")
    p = sub.add_parser("eval", parents=[common], help="evaluate checkpoints on held-out clips")
    p.add_argument("--checkpoints", type=Path, help="directory holding checkpoint_split<k>.gfck (default: --out)")
    p.add_argument("--checkpoint", type=Path, help="one checkpoint used for every split")
    sub.add_parser("reproduce", parents=[common], help="train and evaluate every compared model")
    return parser


def resolve(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    if args.corpus is not None:
        overrides.append(f"run.corpus={args.corpus}")
    return RunConfig.resolve(args.config, args.preset, overrides, args.seed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve(args)
        out = Path(cfg["run.out"])
        if args.command == "synth":
            manifest = run_synth(cfg)
            print(f"wrote {len(manifest.records)} clips to {cfg['run.corpus']}")
        elif args.command == "flow":
            flow = run_flow(cfg, args.clip, args.output)
            print(f"wrote {len(flow)} flow frames to {args.output}")
        elif args.command == "train":
            run_train(cfg, out)
            print(f"wrote checkpoints to {out}")
        elif args.command == "eval":
            report = run_eval(cfg, out, checkpoints=args.checkpoints, checkpoint=args.checkpoint)
            print(f"mean auc {report.mean_auc:.4f} top1 {report.mean_top1:.4f}")
        elif args.command == "reproduce":
            reports = run_reproduce(cfg, out)
            for kind, r in reports.items():
                print(f"{kind}: auc {r.mean_auc:.4f} acc {r.mean_top1:.4f}")
    except (ConfigError, UsageError) as exc:
        print(f"gesturenet: error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, ValueError, OSError) as exc:
        print(f"gesturenet: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
