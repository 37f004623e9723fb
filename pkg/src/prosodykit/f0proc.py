"""Frame-level F0 contours: gap interpolation, normalization, sample expansion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_VOICED_HZ = 20.0
DOMAINS = ("linear_hz", "log_hz")


class ContourError(ValueError):
    pass


@dataclass(frozen=True)
class F0Contour:
    """Per-frame F0 in Hz with a voiced mask.

    In raw form unvoiced frames hold 0. After :func:`interpolate_unvoiced`
    they hold filled values while ``voiced`` is left untouched.
    """

    values: np.ndarray
    voiced: np.ndarray
    hop: int = 200
    sample_rate: int = 16000

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        voiced = np.asarray(self.voiced, dtype=bool)
        if values.ndim != 1 or values.shape != voiced.shape:
            raise ContourError("values and voiced must be 1-D and of equal length")
        if int(self.hop) <= 0 or int(self.sample_rate) <= 0:
            raise ContourError("hop and sample_rate must be positive")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ContourError("F0 values must be finite and non-negative")
        v = values[voiced]
        if v.size and (v.min() < MIN_VOICED_HZ or v.max() > self.sample_rate / 2):
            raise ContourError(
                f"voiced F0 outside [{MIN_VOICED_HZ}, {self.sample_rate / 2}] Hz")
        values.setflags(write=False)
        voiced.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "voiced", voiced)
        object.__setattr__(self, "hop", int(self.hop))
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @classmethod
    def from_raw(cls, values, hop=200, sample_rate=16000) -> "F0Contour":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, values > 0, hop, sample_rate)

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def all_unvoiced(self) -> bool:
        return not bool(self.voiced.any())

    @property
    def is_raw(self) -> bool:
        return bool(np.all((self.values == 0) == ~self.voiced))


@dataclass(frozen=True)
class ContourStats:
    mean: float
    std: float
    domain: str = "log_hz"

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ContourError(f"unknown domain {self.domain!r}")
        if not (math.isfinite(self.mean) and math.isfinite(self.std)):
            raise ContourError("normalization stats must be finite")
        if self.std <= 0:
            raise ContourError("normalization std must be positive")


@dataclass(frozen=True)
class NormalizedContour:
    z_values: np.ndarray
    mean: float
    std: float
    domain: str = "log_hz"
    sample_rate: int = 16000
    voiced: np.ndarray | None = field(default=None, compare=False)

    @property
    def stats(self) -> ContourStats:
        return ContourStats(self.mean, self.std, self.domain)


def interpolate_unvoiced(contour: F0Contour) -> F0Contour:
    """Fill unvoiced frames by linear interpolation between voiced neighbours.

    Leading and trailing unvoiced runs take the nearest voiced value. An
    entirely unvoiced contour comes back as all zeros; check
    ``result.all_unvoiced`` before using it.
    """
    voiced = contour.voiced
    if contour.all_unvoiced:
        return F0Contour(np.zeros(contour.n_frames), voiced, contour.hop, contour.sample_rate)
    idx = np.flatnonzero(voiced)
    # np.interp holds the end values outside [idx[0], idx[-1]]
    filled = np.interp(np.arange(contour.n_frames), idx, contour.values[idx])
    filled[voiced] = contour.values[voiced]
    return F0Contour(filled, voiced, contour.hop, contour.sample_rate)


def expand_to_samples(contour: F0Contour) -> tuple[np.ndarray, np.ndarray]:
    """Expand frame values to sample resolution.

    Frame ``i`` is anchored at sample ``i * hop + hop / 2``; samples between
    anchors are linearly interpolated and samples outside the first/last
    anchor hold the edge value. The voiced mask is expanded by the
    nearest-frame (containing frame) rule.

    Returns ``(f0, gate)`` with ``len(f0) == n_frames * hop``.
    """
    n, hop = contour.n_frames, contour.hop
    if n == 0:
        return np.zeros(0), np.zeros(0, dtype=bool)
    centers = np.arange(n) * hop + hop / 2.0
    f0 = np.interp(np.arange(n * hop, dtype=np.float64), centers, contour.values)
    gate = np.repeat(contour.voiced, hop)
    return f0, gate


def _forward_domain(values: np.ndarray, domain: str) -> np.ndarray:
    if domain == "log_hz":
        if np.any(values <= 0):
            raise ContourError("log-Hz normalization needs strictly positive values; "
                               "interpolate unvoiced frames first")
        return np.log(values)
    return values


def compute_stats(contours, domain: str = "log_hz") -> ContourStats:
    """Mean and std over the voiced frames of a collection of contours."""
    pooled = [c.values[c.voiced] for c in contours]
    pooled = np.concatenate(pooled) if pooled else np.zeros(0)
    if pooled.size < 2:
        raise ContourError("need at least two voiced frames to compute stats")
    g = _forward_domain(pooled, domain)
    return ContourStats(float(g.mean()), float(g.std()), domain)


def normalize(contour: F0Contour, stats: ContourStats) -> NormalizedContour:
    g = _forward_domain(contour.values, stats.domain)
    z = (g - stats.mean) / stats.std
    return NormalizedContour(z, stats.mean, stats.std, stats.domain,
                             contour.sample_rate, contour.voiced)


def denormalize(nc: NormalizedContour) -> tuple[np.ndarray, np.ndarray]:
    """Map normalized values back to Hz, clamped to ``[0, sample_rate / 2]``.

    Returns ``(values_hz, clamped)`` where ``clamped`` marks frames that hit
    either bound.
    """
    g = np.asarray(nc.z_values, dtype=np.float64) * nc.std + nc.mean
    hz = np.exp(g) if nc.domain == "log_hz" else g
    nyquist = nc.sample_rate / 2
    clamped = (hz < 0) | (hz > nyquist)
    return np.clip(hz, 0.0, nyquist), clamped


def write_contour(contour: F0Contour, path) -> None:
    """Write the two-column text format; unvoiced frames are written as 0."""
    values = np.where(contour.voiced, contour.values, 0.0)
    lines = [f"# hop={contour.hop} sample_rate={contour.sample_rate}", "frame_index,f0_hz"]
    lines += [f"{i},{v:.6f}" for i, v in enumerate(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_contour(path) -> F0Contour:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ContourError(f"{path}: missing '# hop=... sample_rate=...' header")
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
    try:
        hop, sr = int(meta["hop"]), int(meta["sample_rate"])
    except (KeyError, ValueError) as exc:
        raise ContourError(f"{path}: malformed header {lines[0]!r}") from exc
    rows = [ln for ln in lines[1:] if ln and not ln.startswith("frame_index")]
    values = np.array([float(r.split(",")[1]) for r in rows], dtype=np.float64)
    return F0Contour.from_raw(values, hop, sr)
