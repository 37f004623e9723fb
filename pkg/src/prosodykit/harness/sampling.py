"""Contour sampling, baseline comparison and export."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..excitation import synthesize, write_wav
from ..f0proc import MIN_VOICED_HZ, F0Contour, expand_to_samples, interpolate_unvoiced
from .config import RunConfig
from .corpus import Corpus
from .io import write_rows
from .metrics import inter_seed_diversity, jitter_metric, pooled_voiced_rmse
from .training import PitchRun, conditioner_for, pitch_data, predict_contours


def corpus_mean_hz(corpus: Corpus) -> float:
    """Mean voiced f0 over the training split, the constant-contour baseline."""
    vals = np.concatenate([u.contour.values[u.contour.voiced] for u in corpus.split("train")])
    return float(vals.mean())


def sample_seeds(seed: int, n: int) -> list:
    """Distinct sampling seeds derived from the run seed."""
    root = np.random.SeedSequence([seed, 0x5A])
    return [int(s.generate_state(1, np.uint32)[0]) for s in root.spawn(n)]


@dataclass
class SampleResult:
    utts: list
    contours: dict  # sampling seed -> list of Hz arrays
    rmse: float
    baseline_rmse: float
    diversity: float
    jitter: float
    rows: list = field(default_factory=list)


def sample_contours(run: PitchRun, corpus: Corpus, utts, cfg: RunConfig, seed: int,
                    n_seeds: int | None = None) -> SampleResult:
    n_seeds = cfg.sample_seeds if n_seeds is None else n_seeds
    if not utts:
        raise ValueError("no utterances to sample")
    cond = conditioner_for(run, corpus, cfg)
    data = pitch_data(utts, cond, run.stats)
    seeds = sample_seeds(seed, n_seeds)
    contours = {s: predict_contours(run, data, cfg, s) for s in seeds}
    gt = [u.contour.values for u in utts]
    voiced = [u.contour.voiced for u in utts]
    base = corpus_mean_hz(corpus)
    first = contours[seeds[0]]
    rows = []
    for s in seeds:
        for u, c in zip(utts, contours[s]):
            v = u.contour.voiced
            err = float(np.sqrt(np.mean((c[v] - u.contour.values[v]) ** 2)))
            rows.append((u.utt_id, u.speaker_id, u.split, s, u.n_frames, err,
                         jitter_metric(c, v)))
    return SampleResult(
        utts=list(utts), contours=contours,
        rmse=pooled_voiced_rmse(first, gt, voiced),
        baseline_rmse=pooled_voiced_rmse([np.full(len(g), base) for g in gt], gt, voiced),
        diversity=inter_seed_diversity(contours, voiced) if n_seeds > 1 else 0.0,
        jitter=float(np.mean([jitter_metric(c, v) for c, v in zip(first, voiced)])),
        rows=rows,
    )


SAMPLE_HEADER = ("utt_id", "speaker_id", "split", "sample_seed", "n_frames", "voiced_rmse_hz",
                 "jitter")
CONTOUR_HEADER = ("frame_index", "voiced", "f0_true_hz", "f0_pred_hz")


def export_samples(result: SampleResult, out_dir, write_audio=False) -> list:
    """Per-utterance contour CSVs (and optionally excitation WAVs) plus a summary."""
    out = Path(out_dir)
    (out / "contours").mkdir(parents=True, exist_ok=True)
    written = [write_rows(out / "samples.csv", SAMPLE_HEADER, result.rows)]
    for s, contours in result.contours.items():
        for u, c in zip(result.utts, contours):
            rows = [(i, int(v), float(t), float(p))
                    for i, (v, t, p) in enumerate(zip(u.contour.voiced, u.contour.values, c))]
            written.append(write_rows(out / "contours" / f"{u.utt_id}_s{s}.csv",
                                      CONTOUR_HEADER, rows))
            if write_audio:
                written.append(_excitation_wav(u, c, out / "wav" / f"{u.utt_id}_s{s}.wav"))
    summary = [("voiced_rmse_hz", result.rmse), ("baseline_rmse_hz", result.baseline_rmse),
               ("inter_seed_diversity_hz", result.diversity), ("jitter", result.jitter),
               ("n_utterances", len(result.utts)), ("n_seeds", len(result.contours))]
    written.append(write_rows(out / "sample_summary.csv", ("metric", "value"), summary))
    return written


def _excitation_wav(utt, hz, path):
    path.parent.mkdir(parents=True, exist_ok=True)
    voiced = utt.contour.voiced
    sr = utt.contour.sample_rate
    # samples may stray outside the valid voiced range early in training
    hz = np.clip(hz, MIN_VOICED_HZ, sr / 2)
    contour = F0Contour(np.where(voiced, hz, 0.0), voiced, utt.contour.hop, sr)
    f0, gate = expand_to_samples(interpolate_unvoiced(contour))
    write_wav(synthesize(f0, sr, gate=gate), path)
    return path
