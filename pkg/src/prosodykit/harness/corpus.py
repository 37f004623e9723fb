"""Synthetic tone-language pitch corpus with known underlying contours."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..f0proc import F0Contour, read_contour, write_contour
from .config import RunConfig

TONES = ("level", "rise", "fall", "dip", "neutral")
SPLITS = ("train", "val", "test")


def tone_shape(tone: int, u: np.ndarray) -> np.ndarray:
    """Pitch offset over token progress ``u`` in [0, 1], in units of the speaker range."""
    if tone == 0:
        return np.full_like(u, 0.4)
    if tone == 1:
        return -0.4 + 0.9 * u
    if tone == 2:
        return 0.5 - 1.0 * u
    if tone == 3:
        return -0.1 - 0.6 * np.sin(np.pi * u)
    return np.zeros_like(u)


@dataclass(frozen=True)
class SyntheticSpeaker:
    id: int
    base_pitch: float
    pitch_range: float
    declination_slope: float
    vibrato_rate: float
    vibrato_depth: float
    tempo: float
    heldout: bool = False

    def __post_init__(self):
        if not 80 <= self.base_pitch <= 400:
            raise ValueError(f"base pitch {self.base_pitch} outside [80, 400] Hz")
        if self.pitch_range <= 0:
            raise ValueError("pitch range must be positive")

    def descriptor(self) -> np.ndarray:
        """Centred speaker statistics seen by the speaker-encoder stand-in."""
        return np.array([
            np.log(self.base_pitch / 170.0) / 0.35,
            (self.pitch_range / self.base_pitch - 0.25) / 0.06,
            (self.declination_slope / self.base_pitch * 1000 + 0.35) / 0.15,
            (self.vibrato_rate - 5.25) / 0.7,
            (self.vibrato_depth / self.base_pitch - 0.01) / 0.003,
            (self.tempo - 1.0) / 0.1,
        ])


@dataclass
class SyntheticUtterance:
    utt_id: str
    speaker_id: int
    split: str
    phones: np.ndarray
    tones: np.ndarray
    durations: np.ndarray
    contour: F0Contour  # observed, raw form (0 on unvoiced frames)
    clean: np.ndarray  # underlying contour in Hz, defined on every frame

    def __post_init__(self):
        if int(self.durations.sum()) != self.contour.n_frames:
            raise ValueError(f"{self.utt_id}: contour length != sum(durations)")

    @property
    def n_frames(self) -> int:
        return self.contour.n_frames


@dataclass
class Corpus:
    speakers: list
    utterances: list
    phone_durations: np.ndarray
    sample_rate: int = 16000
    hop: int = 200

    def split(self, name: str) -> list:
        return [u for u in self.utterances if u.split == name]

    def speaker(self, sid: int) -> SyntheticSpeaker:
        return self.speakers[sid]

    def check_disjoint(self):
        seen = {u.speaker_id for u in self.split("train")}
        held = {u.speaker_id for u in self.split("test")}
        ids = [u.utt_id for u in self.utterances]
        if seen & held:
            raise AssertionError(f"held-out speakers leak into training: {sorted(seen & held)}")
        if len(ids) != len(set(ids)):
            raise AssertionError("utterance ids are not unique")


def _make_speakers(cfg: RunConfig, rng) -> list:
    n = cfg.n_speakers
    base = np.exp(np.linspace(np.log(105.0), np.log(290.0), n) + rng.uniform(-0.03, 0.03, n))
    heldout = set()
    if cfg.n_heldout_speakers:
        # interior speakers only, so held-out pitch stays inside the seen range
        picks = np.linspace(1, n - 2, cfg.n_heldout_speakers) if n > 2 else [n - 1]
        heldout = {int(round(p)) for p in picks}
    speakers = []
    for i in range(n):
        b = float(base[i])
        speakers.append(SyntheticSpeaker(
            id=i,
            base_pitch=b,
            pitch_range=float(b * rng.uniform(0.16, 0.34)),
            declination_slope=float(-b * rng.uniform(0.1, 0.6) / 1000.0),
            vibrato_rate=float(rng.uniform(4.0, 6.5)),
            vibrato_depth=float(b * rng.uniform(0.005, 0.015)),
            tempo=float(rng.uniform(0.85, 1.15)),
            heldout=i in heldout,
        ))
    return speakers


def _smooth(x: np.ndarray, width: int = 5) -> np.ndarray:
    pad = width // 2
    xp = np.pad(x, pad, mode="edge")
    return np.convolve(xp, np.ones(width) / width, mode="valid")


def _unvoiced_runs(durations, fraction, rng) -> np.ndarray:
    n = int(durations.sum())
    voiced = np.ones(n, dtype=bool)
    if fraction <= 0:
        return voiced
    starts = np.concatenate([[0], np.cumsum(durations)[:-1]])
    target = int(round(fraction * n))
    for tok in rng.permutation(len(durations)):
        if (~voiced).sum() >= target:
            break
        run = min(int(rng.integers(2, 7)), target - int((~voiced).sum()),
                  int(durations[tok]) - 1)
        if run > 0:
            voiced[starts[tok]:starts[tok] + run] = False
    return voiced


def _make_utterance(idx, spk: SyntheticSpeaker, split, cfg: RunConfig, phone_dur, rng):
    n_tok = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
    phones = rng.integers(0, cfg.n_phones, n_tok)
    tones = rng.integers(0, len(TONES), n_tok)
    dur = phone_dur[phones] * spk.tempo * np.exp(rng.normal(0.0, 0.15, n_tok))
    durations = np.maximum(3, np.round(dur)).astype(np.int64)
    n = int(durations.sum())

    frame = np.arange(n, dtype=np.float64)
    shape = np.concatenate([tone_shape(int(t), (np.arange(d) + 0.5) / d)
                            for t, d in zip(tones, durations)])
    t_sec = frame * cfg.hop / cfg.sample_rate
    phase = rng.uniform(0, 2 * np.pi)
    clean = (spk.base_pitch + spk.declination_slope * (frame - n / 2)
             + spk.pitch_range * shape
             + spk.vibrato_depth * np.sin(2 * np.pi * spk.vibrato_rate * t_sec + phase))
    clean = np.clip(_smooth(clean), 50.0, 600.0)
    observed = clean * (1.0 + cfg.f0_noise * rng.standard_normal(n))
    observed = np.clip(observed, 50.0, 600.0)
    voiced = _unvoiced_runs(durations, cfg.unvoiced_fraction, rng)
    # written to 6 decimals on disk; round here so memory matches a reload
    observed = np.round(np.where(voiced, observed, 0.0), 6)
    contour = F0Contour(observed, voiced, cfg.hop, cfg.sample_rate)
    return SyntheticUtterance(f"utt{idx:05d}", spk.id, split, phones, tones, durations,
                              contour, np.round(clean, 6))


def generate_corpus(cfg: RunConfig, seed: int | None = None) -> Corpus:
    """Deterministic corpus; test holds every utterance of the held-out speakers."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    speakers = _make_speakers(cfg, rng)
    phone_dur = rng.uniform(7.0, 14.0, cfg.n_phones)
    utts = []
    for i in range(cfg.n_utterances):
        spk = speakers[int(rng.integers(0, cfg.n_speakers))]
        if spk.heldout:
            split = "test"
        else:
            split = "val" if rng.random() < cfg.val_fraction else "train"
        utts.append(_make_utterance(i, spk, split, cfg, phone_dur, rng))
    corpus = Corpus(speakers, utts, phone_dur, cfg.sample_rate, cfg.hop)
    corpus.check_disjoint()
    return corpus


_SPEAKER_FIELDS = ("id", "base_pitch", "pitch_range", "declination_slope", "vibrato_rate",
                   "vibrato_depth", "tempo", "heldout")


def write_corpus(corpus: Corpus, root) -> list:
    """Write speakers.csv, utterances.csv and per-utterance contour files."""
    root = Path(root)
    (root / "contours").mkdir(parents=True, exist_ok=True)
    written = []
    with open(root / "speakers.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_SPEAKER_FIELDS)
        for s in corpus.speakers:
            w.writerow([s.id] + [repr(float(getattr(s, k))) for k in _SPEAKER_FIELDS[1:-1]]
                       + [int(s.heldout)])
    written.append(root / "speakers.csv")
    with open(root / "phones.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("phone", "mean_frames"))
        for i, d in enumerate(corpus.phone_durations):
            w.writerow((i, repr(float(d))))
    written.append(root / "phones.csv")
    with open(root / "utterances.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("utt_id", "speaker_id", "split", "phones", "tones", "durations", "hop",
                    "sample_rate"))
        for u in corpus.utterances:
            w.writerow((u.utt_id, u.speaker_id, u.split, " ".join(map(str, u.phones)),
                        " ".join(map(str, u.tones)), " ".join(map(str, u.durations)),
                        corpus.hop, corpus.sample_rate))
    written.append(root / "utterances.csv")
    for u in corpus.utterances:
        p = root / "contours" / f"{u.utt_id}.f0"
        write_contour(u.contour, p)
        pc = root / "contours" / f"{u.utt_id}.clean.f0"
        write_contour(F0Contour(u.clean, np.ones_like(u.clean, dtype=bool), corpus.hop,
                                corpus.sample_rate), pc)
        written += [p, pc]
    return written


def _ints(field: str) -> np.ndarray:
    return np.array([int(x) for x in field.split()], dtype=np.int64)


def read_corpus(root) -> Corpus:
    root = Path(root)
    if not (root / "utterances.csv").exists():
        raise FileNotFoundError(f"no corpus at {root} (run gen-corpus first)")
    with open(root / "speakers.csv") as fh:
        rows = list(csv.DictReader(fh))
    speakers = [SyntheticSpeaker(id=int(r["id"]), heldout=bool(int(r["heldout"])),
                                 **{k: float(r[k]) for k in _SPEAKER_FIELDS[1:-1]})
                for r in rows]
    with open(root / "phones.csv") as fh:
        phone_dur = np.array([float(r["mean_frames"]) for r in csv.DictReader(fh)])
    utts = []
    hop, sr = 200, 16000
    with open(root / "utterances.csv") as fh:
        for r in csv.DictReader(fh):
            hop, sr = int(r["hop"]), int(r["sample_rate"])
            contour = read_contour(root / "contours" / f"{r['utt_id']}.f0")
            clean = read_contour(root / "contours" / f"{r['utt_id']}.clean.f0").values
            utts.append(SyntheticUtterance(r["utt_id"], int(r["speaker_id"]), r["split"],
                                           _ints(r["phones"]), _ints(r["tones"]),
                                           _ints(r["durations"]), contour, clean.copy()))
    corpus = Corpus(speakers, utts, phone_dur, sr, hop)
    corpus.check_disjoint()
    return corpus
