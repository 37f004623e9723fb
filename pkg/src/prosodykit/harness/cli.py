"""Command-line entry point: ``prosodykit <command> --config FILE --seed N --out DIR``."""
from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from .. import diffusion
from ..f0proc import ContourError
from ..nn.checkpoint import CheckpointError, save_checkpoint
from ..nn.optim import NonFiniteError
from .config import ConfigError, RunConfig, dump_config, load_config
from .corpus import Corpus, generate_corpus, read_corpus, write_corpus
from .io import write_manifest, write_rows
from .training import TrainingError

log = logging.getLogger("prosodykit")

# exit codes per error category
EXIT = {"config": 2, "input": 3, "training": 4, "io": 5, "internal": 1}


class InputError(RuntimeError):
    """Missing or unusable input artefact (corpus, checkpoint)."""


SEED_MAX = 2 ** 64 - 1


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text!r}")
    if not 0 <= v <= SEED_MAX:
        raise argparse.ArgumentTypeError(f"seed out of u64 range: {v}")
    return v


class Run:
    """Shared per-invocation state: config, seed, output dir, emitted files."""

    def __init__(self, args):
        self.args = args
        self.cfg: RunConfig = load_config(args.config)
        self.seed = self.cfg.seed if args.seed is None else args.seed
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def emit(self, *paths):
        self.files.extend(Path(p) for p in paths)

    def corpus(self) -> Corpus:
        root = getattr(self.args, "corpus", None) or self.cfg.corpus_dir
        if root:
            try:
                return read_corpus(root)
            except FileNotFoundError as exc:
                raise InputError(str(exc)) from exc
        if (self.out / "corpus" / "utterances.csv").exists():
            return read_corpus(self.out / "corpus")
        log.info("no corpus given; generating one in memory from config and seed")
        return generate_corpus(self.cfg, self.seed)

    def checkpoint_path(self, default_name: str) -> Path:
        p = getattr(self.args, "checkpoint", None) or self.cfg.checkpoint
        path = Path(p) if p else self.out / default_name
        if not path.exists():
            raise InputError(f"checkpoint not found: {path} (run train-pitch first)")
        return path

    def figure(self, fn, *args):
        if not self.cfg.figures:
            return
        from . import plotting
        self.emit(getattr(plotting, fn)(*args))

    def finish(self, command):
        cfg_path = self.out / "config.used"
        cfg_path.write_text(dump_config(self.cfg))
        self.emit(cfg_path)
        write_manifest(self.out, command, self.seed, self.files, self.cfg.to_dict())


# ------------------------------------------------------------------ commands

def cmd_gen_corpus(run: Run):
    corpus = generate_corpus(run.cfg, run.seed)
    run.emit(*write_corpus(corpus, run.out / "corpus"))
    rows = []
    for s in corpus.speakers:
        utts = [u for u in corpus.utterances if u.speaker_id == s.id]
        vals = np.concatenate([u.contour.values[u.contour.voiced] for u in utts]) if utts else []
        split = "test" if s.heldout else "train/val"
        rows.append((s.id, split, len(utts), float(np.mean(vals)) if len(vals) else float("nan"),
                     s.base_pitch))
    run.emit(write_rows(run.out / "corpus_summary.csv",
                        ("speaker_id", "split", "n_utterances", "mean_voiced_hz", "base_pitch_hz"),
                        rows))
    counts = {k: len(corpus.split(k)) for k in ("train", "val", "test")}
    print(f"corpus: {counts['train']} train / {counts['val']} val / {counts['test']} test "
          f"utterances, {len(corpus.speakers)} speakers -> {run.out / 'corpus'}")


def cmd_train_pitch(run: Run):
    from .training import train_pitch_predictor
    corpus = run.corpus()
    cfg = run.cfg
    ckpt = run.out / "pitch.ckpt"
    res = train_pitch_predictor(cfg, corpus, run.seed, kind=cfg.pitch_head, checkpoint_path=ckpt)
    run.emit(ckpt, write_rows(run.out / "loss_curve.csv", ("step", "train_loss", "val_loss"),
                              res.curve))
    first = res.curve[0][1] if res.curve else float("nan")
    last = res.curve[-1][1] if res.curve else float("nan")
    run.emit(write_rows(run.out / "train_summary.csv", ("metric", "value"), [
        ("pitch_head", cfg.pitch_head), ("steps", cfg.pitch_steps),
        ("first_logged_loss", first), ("final_loss", last),
        ("best_val_loss", res.best_val), ("best_step", res.best_step)]))
    run.figure("plot_loss_curve", res.curve, run.out / "figures" / "loss_curve.png",
               f"{cfg.pitch_head} pitch head")
    print(f"{cfg.pitch_head}: loss {first:.4f} -> {last:.4f}, best val {res.best_val:.4f} "
          f"at step {res.best_step}; checkpoint {ckpt}")


def cmd_train_adaptor(run: Run):
    from .conditions import Conditioner
    from .training import (adaptor_data, corpus_stats, train_adaptor_probe,
                           train_duration_predictor)
    corpus, cfg = run.corpus(), run.cfg
    stats = corpus_stats(corpus, cfg.domain)
    cond = Conditioner(corpus, cfg.content_dim, cfg.speaker_dim, cfg.n_phones, run.seed)
    train = adaptor_data(corpus.split("train"), cond, stats, cfg.k_max)
    held = adaptor_data(corpus.split("test") or corpus.split("val"), cond, stats, cfg.k_max)
    kinds = ["hierarchical", "flat"] if cfg.adaptor_ablation else ["hierarchical"]
    rows, by_kind = [], {}
    for kind in kinds:
        probe = train_adaptor_probe(cfg, corpus, kind, run.seed, train_data=train, eval_data=held)
        by_kind[kind] = probe.metrics
        rows += [(kind,) + tuple(m) for m in probe.metrics]
        path = run.out / f"adaptor_{kind}.ckpt"
        save_checkpoint(path, probe.model.state_dict(),
                        {"kind": kind, "seed": run.seed, "probe_mse": probe.final_mse,
                         "jitter": probe.final_jitter, "config": cfg.to_dict()})
        run.emit(path)
        print(f"{kind}: held-out probe MSE {probe.final_mse:.4f}, jitter {probe.final_jitter:.4f}")
    run.emit(write_rows(run.out / "metrics.csv",
                        ("adaptor", "step", "train_loss", "probe_mse", "jitter"), rows))
    _, before, after = train_duration_predictor(cfg, corpus, run.seed)
    run.emit(write_rows(run.out / "durations.csv", ("metric", "value"),
                        [("untrained_val_mse", before), ("trained_val_mse", after)]))
    print(f"durations: val log-MSE {before:.4f} -> {after:.4f}")
    run.figure("plot_probe_metrics", by_kind, run.out / "figures" / "probe_metrics.png")


def cmd_sample(run: Run):
    from .sampling import export_samples, sample_contours
    from .training import load_pitch_checkpoint
    path = run.checkpoint_path("pitch.ckpt")
    pitch, ckpt_cfg, _ = load_pitch_checkpoint(path)
    # model shape comes from the checkpoint; sampling knobs from the current config
    cfg = ckpt_cfg.replace(sample_seeds=run.cfg.sample_seeds, sample_split=run.cfg.sample_split,
                           write_wav=run.cfg.write_wav, figures=run.cfg.figures)
    run.cfg = cfg
    corpus = run.corpus()
    utts = corpus.split(cfg.sample_split)
    if not utts:
        raise InputError(f"split {cfg.sample_split!r} is empty")
    res = sample_contours(pitch, corpus, utts, cfg, run.seed)
    run.emit(*export_samples(res, run.out, write_audio=cfg.write_wav))
    run.figure("plot_contours", res.utts, next(iter(res.contours.values())),
               run.out / "figures" / "contours.png")
    print(f"{len(utts)} {cfg.sample_split} utterances: voiced RMSE {res.rmse:.2f} Hz "
          f"(corpus-mean baseline {res.baseline_rmse:.2f} Hz), diversity {res.diversity:.2f} Hz")


def cmd_ablate(run: Run):
    from .ablation import paired_wins, run_ablation, write_report
    from .io import read_rows
    corpus = run.corpus()
    rows = run_ablation(run.cfg, corpus, run.seed, run.out)
    run.emit(*write_report(rows, run.out))
    run.emit(*sorted((run.out / "arms").glob("*")))
    run.figure("plot_ablation", read_rows(run.out / "ablation.csv"),
               run.out / "figures" / "ablation.png")
    for r, m, j, both, dd, rd in paired_wins(rows):
        print(f"run {r}: hierarchical lower MSE={bool(m)} lower jitter={bool(j)}; "
              f"diversity diffusion {dd:.3f} Hz vs regressor {rd:.3f} Hz")


def cmd_export_schedule(run: Run):
    cfg = run.cfg
    from .training import schedule_for
    sched = schedule_for(cfg)
    path = run.out / "schedule.csv"
    diffusion.dump_schedule(sched, path)
    run.emit(path)
    run.figure("plot_schedule", sched, run.out / "figures" / "schedule.png")
    print(f"T={sched.T} {cfg.schedule} schedule, beta {sched.betas[1]:.6g}..{sched.betas[-1]:.6g}"
          f" -> {path}")


COMMANDS = {
    "gen-corpus": (cmd_gen_corpus, "generate the synthetic corpus"),
    "train-pitch": (cmd_train_pitch, "train the pitch predictor"),
    "train-adaptor": (cmd_train_adaptor, "train the adaptor probe and duration regressor"),
    "sample": (cmd_sample, "sample contours from a pitch checkpoint"),
    "ablate": (cmd_ablate, "run the three-arm paired ablation"),
    "export-schedule": (cmd_export_schedule, "write the noise schedule table"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prosodykit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="key = value config file (defaults if omitted)")
        sp.add_argument("--seed", type=_seed, help="u64 seed (overrides the config seed)")
        sp.add_argument("--out", required=True, help="output directory")
        if name in ("train-pitch", "train-adaptor", "sample", "ablate"):
            sp.add_argument("--corpus", help="corpus directory written by gen-corpus")
        if name == "sample":
            sp.add_argument("--checkpoint", help="pitch checkpoint (default OUT/pitch.ckpt)")
    return p


def _category(exc: BaseException) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, (InputError, CheckpointError, ContourError)):
        return "input"
    if isinstance(exc, (NonFiniteError, TrainingError)):
        return "training"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        run = Run(args)
        COMMANDS[args.command][0](run)
        run.finish(args.command)
    except Exception as exc:  # categorized, then mapped to an exit code
        cat = _category(exc)
        print(f"error[{cat}]: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return EXIT[cat]
    return 0


if __name__ == "__main__":
    sys.exit(main())
