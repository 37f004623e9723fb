"""Paired three-arm ablation: full model, regressor pitch head, flat adaptor."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .conditions import Conditioner
from .config import RunConfig
from .corpus import Corpus
from .io import write_rows
from .sampling import sample_contours
from .training import (adaptor_data, corpus_stats, load_pitch_checkpoint, train_adaptor_probe,
                       train_pitch_predictor)

log = logging.getLogger(__name__)

# arm -> (pitch head, adaptor)
ARMS = {
    "full": ("diffusion", "hierarchical"),
    "no_diffusion": ("regressor", "hierarchical"),
    "no_hierarchy": ("diffusion", "flat"),
}
REPORT_HEADER = ("arm", "run", "seed", "pitch_head", "adaptor", "voiced_rmse_hz",
                 "baseline_rmse_hz", "diversity_hz", "probe_mse", "jitter")


def run_seed(seed: int, run: int) -> int:
    """Paired seed for one run; every arm of a run shares it."""
    return int(np.random.SeedSequence([seed, run]).generate_state(1, np.uint32)[0])


class _Cache:
    """Per-component result files under ``arms/``; finished parts are reused."""

    def __init__(self, root: Path):
        self.root = root
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name, ext="json") -> Path:
        return self.root / f"{name}.{ext}"

    def get(self, name):
        p = self.path(name)
        return json.loads(p.read_text()) if p.exists() else None

    def put(self, name, value: dict):
        tmp = self.path(name, "json.tmp")
        tmp.write_text(json.dumps(value, sort_keys=True))
        tmp.replace(self.path(name))


def _pitch_component(cfg, corpus, head, seed, cache: _Cache, tag):
    name = f"{tag}_{head}"
    done = cache.get(name)
    if done is not None:
        return done
    ckpt = cache.path(name, "ckpt")
    if ckpt.exists():
        run, _, _ = load_pitch_checkpoint(ckpt)
    else:
        run = train_pitch_predictor(cfg, corpus, seed, steps=cfg.ablation_pitch_steps,
                                    kind=head, checkpoint_path=ckpt)
    res = sample_contours(run, corpus, corpus.split(cfg.sample_split), cfg, seed,
                          n_seeds=max(2, cfg.sample_seeds))
    out = {"voiced_rmse_hz": res.rmse, "baseline_rmse_hz": res.baseline_rmse,
           "diversity_hz": res.diversity}
    cache.put(name, out)
    return out


def _adaptor_component(cfg, corpus, kind, seed, cache: _Cache, tag, data):
    name = f"{tag}_{kind}"
    done = cache.get(name)
    if done is not None:
        return done
    probe = train_adaptor_probe(cfg, corpus, kind, seed, train_data=data[0], eval_data=data[1])
    out = {"probe_mse": probe.final_mse, "jitter": probe.final_jitter}
    cache.put(name, out)
    return out


def run_ablation(cfg: RunConfig, corpus: Corpus, seed: int, out_dir) -> list[dict]:
    """Run every arm for ``cfg.ablation_runs`` paired runs; returns report rows.

    Arms sharing a component within a run (for instance the diffusion head of
    ``full`` and ``no_hierarchy``) reuse one trained instance, which is what
    makes the comparison paired.
    """
    out = Path(out_dir)
    cache = _Cache(out / "arms")
    stats = corpus_stats(corpus, cfg.domain)
    data = None
    rows = []
    for r in range(cfg.ablation_runs):
        s = run_seed(seed, r)
        tag = f"run{r}"
        for arm, (head, kind) in ARMS.items():
            log.info("ablation run %d arm %s", r, arm)
            pitch = _pitch_component(cfg, corpus, head, s, cache, tag)
            if data is None and cache.get(f"{tag}_{kind}") is None:
                cond = Conditioner(corpus, cfg.content_dim, cfg.speaker_dim, cfg.n_phones, seed)
                data = (adaptor_data(corpus.split("train"), cond, stats, cfg.k_max),
                        adaptor_data(corpus.split("test") or corpus.split("val"), cond, stats,
                                     cfg.k_max))
            adapt = _adaptor_component(cfg, corpus, kind, s, cache, tag, data)
            rows.append({"arm": arm, "run": r, "seed": s, "pitch_head": head, "adaptor": kind,
                         **pitch, **adapt})
    return rows


def write_report(rows, out_dir) -> list[Path]:
    out = Path(out_dir)
    report = write_rows(out / "ablation.csv", REPORT_HEADER,
                        [[row[k] for k in REPORT_HEADER] for row in rows])
    summary = []
    for arm in ARMS:
        sub = [row for row in rows if row["arm"] == arm]
        summary.append([arm, len(sub)] + [float(np.mean([row[k] for row in sub]))
                                          for k in REPORT_HEADER[5:]])
    wins = paired_wins(rows)
    path = write_rows(out / "ablation_summary.csv", ("arm", "runs") + REPORT_HEADER[5:], summary)
    wins_path = write_rows(out / "ablation_pairs.csv",
                           ("run", "hier_lower_mse", "hier_lower_jitter", "both",
                            "diffusion_diversity_hz", "regressor_diversity_hz"), wins)
    return [report, path, wins_path]


def paired_wins(rows) -> list[tuple]:
    """Per run: does the hierarchical arm beat the flat arm, and head diversities."""
    by = {(row["run"], row["arm"]): row for row in rows}
    out = []
    for r in sorted({row["run"] for row in rows}):
        full, flat, reg = by[(r, "full")], by[(r, "no_hierarchy")], by[(r, "no_diffusion")]
        m = full["probe_mse"] < flat["probe_mse"]
        j = full["jitter"] < flat["jitter"]
        out.append((r, int(m), int(j), int(m and j), full["diversity_hz"], reg["diversity_hz"]))
    return out
