"""Objective stand-ins for listening tests: RMSE, inter-seed diversity, jitter."""
from __future__ import annotations

import numpy as np


def jitter_metric(trajectory, voiced=None) -> float:
    """Mean squared second difference normalized by variance.

    Only second differences whose three frames are all voiced count. A 2-D
    input ``(time, channels)`` is scored per channel and averaged. Constant
    input scores 0.
    """
    x = np.asarray(trajectory, dtype=np.float64)
    if x.ndim == 2:
        return float(np.mean([jitter_metric(x[:, c], voiced) for c in range(x.shape[1])]))
    if x.shape[0] < 3:
        raise ValueError("jitter needs at least 3 frames")
    v = np.ones(x.shape[0], dtype=bool) if voiced is None else np.asarray(voiced, dtype=bool)
    var = x[v].var() if v.sum() > 1 else 0.0
    d2 = x[2:] - 2 * x[1:-1] + x[:-2]
    ok = v[2:] & v[1:-1] & v[:-2]
    if var <= 1e-15 or not ok.any():
        return 0.0
    return float(np.mean(d2[ok] ** 2) / var)


def voiced_rmse(pred, target, voiced) -> float:
    v = np.asarray(voiced, dtype=bool)
    if not v.any():
        raise ValueError("no voiced frames")
    d = np.asarray(pred, dtype=np.float64)[v] - np.asarray(target, dtype=np.float64)[v]
    return float(np.sqrt(np.mean(d * d)))


def pooled_voiced_rmse(preds, targets, voiceds) -> float:
    """RMSE over the concatenated voiced frames of many utterances."""
    num = sum(float(np.sum((np.asarray(p)[v] - np.asarray(t)[v]) ** 2))
              for p, t, v in zip(preds, targets, voiceds))
    den = sum(int(np.sum(v)) for v in voiceds)
    return float(np.sqrt(num / den))


def inter_seed_diversity(samples_by_seed, voiceds) -> float:
    """Mean pairwise voiced RMSE between sample sets drawn with different seeds."""
    seeds = list(samples_by_seed)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    vals = []
    for i in range(len(seeds)):
        for j in range(i + 1, len(seeds)):
            vals.append(pooled_voiced_rmse(samples_by_seed[seeds[i]], samples_by_seed[seeds[j]],
                                           voiceds))
    return float(np.mean(vals))
