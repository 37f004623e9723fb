"""Harmonic sine excitation driven by a sample-level F0 track."""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_K_MAX = 200
WAV_RATES = (8000, 16000, 22050, 24000, 44100, 48000)
_PCM_SCALE = 32767.0


@dataclass(frozen=True)
class ExcitationSignal:
    samples: np.ndarray
    sample_rate: int
    k_max: int = DEFAULT_K_MAX

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def harmonic_count(f0, f_s, k_max=DEFAULT_K_MAX):
    """Largest harmonic index kept below Nyquist, capped at ``k_max``.

    Works on scalars or arrays; ``f0 <= 0`` yields 0 harmonics.
    """
    if f_s <= 0 or k_max < 1:
        raise ValueError("f_s must be positive and k_max >= 1")
    f0 = np.asarray(f0, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.floor(f_s / (2.0 * np.where(f0 > 0, f0, 1.0)))
    k = np.where(f0 > 0, np.minimum(k, k_max), 0).astype(np.int64)
    return int(k) if k.ndim == 0 else k


def running_phase(f0: np.ndarray, f_s: int) -> np.ndarray:
    """Inclusive cumulative sum of f0, reduced modulo ``f_s``.

    ``sin(2*pi*k*phi/f_s)`` has period ``f_s / k`` in ``phi`` for every
    integer ``k``, so the reduction leaves all harmonics unchanged.
    """
    return np.mod(np.cumsum(np.asarray(f0, dtype=np.float64)), f_s)


def synthesize(f0: np.ndarray, f_s: int, k_max: int = DEFAULT_K_MAX,
               gate: np.ndarray | None = None) -> ExcitationSignal:
    """Sum of ``K[n]`` unit sinusoids at multiples of the running phase.

    ``K[n]`` is re-evaluated every sample, so during a glide harmonics drop
    out (or come in) as they cross Nyquist. Samples with ``f0 == 0`` or a
    false ``gate`` are exactly zero; the phase accumulator keeps running
    through them.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    if f0.ndim != 1:
        raise ValueError("f0 track must be 1-D")
    if not np.all(np.isfinite(f0)) or np.any(f0 < 0):
        raise ValueError("f0 track must be finite and non-negative")
    tracked = f0 if gate is None else np.where(np.asarray(gate, dtype=bool), f0, 0.0)
    if f0.size == 0:
        return ExcitationSignal(np.zeros(0), f_s, k_max)

    theta = 2.0 * np.pi * running_phase(tracked, f_s) / f_s
    k_n = harmonic_count(tracked, f_s, k_max)
    out = np.zeros_like(theta)
    top = int(k_n.max())
    for k in range(1, top + 1):
        active = k_n >= k
        out[active] += np.sin(k * theta[active])
    return ExcitationSignal(out, f_s, k_max)


def write_wav(sig: ExcitationSignal, path, normalize_peak: bool = True) -> float:
    """Write 16-bit mono PCM. Returns the gain applied before quantization.

    With ``normalize_peak`` the peak maps to 0.9 of full scale; a silent
    signal is written unscaled. Without it, samples are clipped to [-1, 1].
    """
    if sig.sample_rate not in WAV_RATES:
        raise ValueError(f"unsupported WAV sample rate {sig.sample_rate}")
    x = np.asarray(sig.samples, dtype=np.float64)
    gain = 1.0
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    if normalize_peak and peak > 0:
        gain = 0.9 / peak
    pcm = np.round(np.clip(x * gain, -1.0, 1.0) * _PCM_SCALE).astype("<i2")
    with wave.open(str(Path(path)), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sig.sample_rate)
        w.writeframes(pcm.tobytes())
    return gain


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(Path(path)), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit mono PCM")
        rate = w.getframerate()
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / _PCM_SCALE, rate


def wav_duration(path) -> float:
    with wave.open(str(Path(path)), "rb") as w:
        return w.getnframes() / w.getframerate()


def write_csv(sig: ExcitationSignal, path) -> None:
    lines = ["sample_index,value"]
    lines += [f"{i},{v:.9g}" for i, v in enumerate(sig.samples)]
    Path(path).write_text("\n".join(lines) + "\n")


def amplitude_bound(f0, f_s, k_max=DEFAULT_K_MAX):
    """Upper bound on ``|p[n]|``: one unit per retained harmonic."""
    return harmonic_count(f0, f_s, k_max)


__all__ = [
    "ExcitationSignal", "harmonic_count", "running_phase", "synthesize",
    "write_wav", "read_wav", "wav_duration", "write_csv", "amplitude_bound",
    "DEFAULT_K_MAX",
]
