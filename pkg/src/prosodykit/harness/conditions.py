"""Text-side and speaker-side stand-ins producing C_t and S."""
from __future__ import annotations

import numpy as np

from ..adaptor import length_regulate
from ..f0proc import ContourStats, interpolate_unvoiced, normalize
from ..nn.layers import Module
from .corpus import TONES, Corpus, SyntheticSpeaker, SyntheticUtterance

# fixed seeds offset from the run seed so the stand-ins differ from corpus draws
_CONTENT_SEED = 7919
_SPEAKER_SEED = 104729


class ContentEncoder(Module):
    """Summed phone and tone embedding tables."""

    def __init__(self, n_phones, dim, seed=0, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(seed + _CONTENT_SEED)
        self.dim = dim
        self.add_param("phone_emb", rng.normal(0, 1.0, (n_phones, dim)).astype(dtype))
        self.add_param("tone_emb", rng.normal(0, 1.0, (len(TONES), dim)).astype(dtype))

    def encode(self, phones, tones) -> np.ndarray:
        return self.params["phone_emb"][phones] + self.params["tone_emb"][tones]

    def accumulate(self, phones, tones, d_content):
        """Scatter a token-level gradient back into the tables."""
        np.add.at(self.grads["phone_emb"], phones, d_content)
        np.add.at(self.grads["tone_emb"], tones, d_content)


class SpeakerTable:
    """Speaker-encoder stand-in: fixed random projection of speaker statistics.

    Held-out speakers get meaningful, never-trained embeddings because the
    projection is shared.
    """

    def __init__(self, dim, seed=0):
        rng = np.random.default_rng(seed + _SPEAKER_SEED)
        self.dim = dim
        self.proj = rng.normal(0, 1.0, (dim, 6)) / np.sqrt(6)

    def embed(self, speaker: SyntheticSpeaker) -> np.ndarray:
        return np.tanh(self.proj @ speaker.descriptor())


def token_progress(durations) -> np.ndarray:
    """Position of every frame inside its token, in (0, 1)."""
    return np.concatenate([(np.arange(d) + 0.5) / d for d in durations])


def frame_features(content_tokens, durations) -> np.ndarray:
    """Regulated content plus within-token progress and utterance time.

    Repetition alone gives every frame of a token the same vector; the two
    extra channels let a local convolution shape contours inside a token.
    """
    frames = length_regulate(content_tokens, durations)
    u = token_progress(durations)
    pos = np.arange(len(u)) / 200.0
    return np.concatenate([frames, u[:, None], pos[:, None]], axis=1)


def regulate_backward(d_frames, durations) -> np.ndarray:
    """Sum frame-level gradients within each token."""
    starts = np.concatenate([[0], np.cumsum(durations)[:-1]]).astype(np.int64)
    return np.add.reduceat(d_frames, starts, axis=0)


def utterance_target(utt: SyntheticUtterance, stats: ContourStats) -> np.ndarray:
    """Normalized observed contour (unvoiced gaps interpolated)."""
    filled = interpolate_unvoiced(utt.contour)
    return normalize(filled, stats).z_values


def clean_target(utt: SyntheticUtterance, stats: ContourStats) -> np.ndarray:
    g = np.log(utt.clean) if stats.domain == "log_hz" else utt.clean
    return (g - stats.mean) / stats.std


def batch_pad(seqs, dtype=np.float32):
    """Right-pad a list of ``(T, ...)`` arrays; returns ``(batch, mask)``."""
    T = max(len(s) for s in seqs)
    first = np.asarray(seqs[0])
    out = np.zeros((len(seqs), T) + first.shape[1:], dtype=dtype)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
        mask[i, :len(s)] = True
    return out, mask


class Conditioner:
    """Bundles the content encoder and speaker table for one corpus."""

    def __init__(self, corpus: Corpus, content_dim, speaker_dim, n_phones, seed=0):
        self.corpus = corpus
        self.content = ContentEncoder(n_phones, content_dim, seed)
        self.speakers = SpeakerTable(speaker_dim, seed)
        self._spk = {s.id: self.speakers.embed(s) for s in corpus.speakers}

    def speaker_embedding(self, sid: int) -> np.ndarray:
        return self._spk[sid]

    def tokens(self, utt: SyntheticUtterance) -> np.ndarray:
        return self.content.encode(utt.phones, utt.tones)

    def frame_conditions(self, utt: SyntheticUtterance) -> np.ndarray:
        return frame_features(self.tokens(utt), utt.durations)

    def regulated(self, utt: SyntheticUtterance) -> np.ndarray:
        return length_regulate(self.tokens(utt), utt.durations)
