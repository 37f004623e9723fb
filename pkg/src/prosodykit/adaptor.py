"""Hierarchical prosody adaptor.

The excitation signal is downsampled four times (factors 20, 10, 10, 2) into
sub-frame, frame, ~phoneme and ~word rate sequences. Content queries attend
over each level in turn and the speaker embedding is injected through
style-adaptive layer norm ahead of every fusion unit:

    h <- h + attend(saln(h, S), level)

Zero-initialized attention output projections therefore leave the
regulated content untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn.layers import (Dense, DownsampleConv, Module, SiLU, Tanh, downsampled_length,
                        layer_norm, layer_norm_backward, masked_softmax,
                        sinusoidal_embedding, softmax_backward)

FACTORS = (20, 10, 10, 2)
LEVEL_ROLES = ("sub-frame", "frame", "phoneme", "word")
HOP = 200


def pyramid_lengths(n: int, factors=FACTORS) -> list[int]:
    out = []
    for f in factors:
        n = downsampled_length(n, f)
        out.append(n)
    return out


def level_positions(length: int, cumulative_factor: int, hop: int = HOP) -> np.ndarray:
    """Centres of a level's steps, in frame units."""
    return (np.arange(length) + 0.5) * cumulative_factor / hop


@dataclass
class ProsodyPyramid:
    levels: list  # (batch, L_l, channels) per level
    masks: list  # (batch, L_l) bool per level
    factors: tuple = FACTORS
    hop: int = HOP

    @property
    def cumulative_factors(self) -> list[int]:
        return list(np.cumprod(self.factors))

    @property
    def lengths(self) -> np.ndarray:
        """Valid length of every level for every batch row, ``(batch, n_levels)``."""
        return np.stack([m.sum(axis=1) for m in self.masks], axis=1)

    def positions(self, level: int) -> np.ndarray:
        return level_positions(self.levels[level].shape[1], self.cumulative_factors[level],
                               self.hop)


def _batch_signal(x, lengths):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if lengths is None:
        lengths = np.full(x.shape[0], x.shape[1])
    return x, np.asarray(lengths, dtype=np.int64)


def _level_mask(lengths, L):
    return np.arange(L)[None, :] < lengths[:, None]


def meanpool_pyramid(x, lengths=None, factors=FACTORS, hop=HOP) -> ProsodyPyramid:
    """Deterministic pyramid: mean over each block of valid inputs.

    A trailing partial block averages only the samples it actually covers,
    so a constant input stays constant at every level.
    """
    x, lengths = _batch_signal(x, lengths)
    if np.any(lengths < 1):
        raise ValueError("excitation must be non-empty")
    B = x.shape[0]
    vals = x * _level_mask(lengths, x.shape[1])
    counts = _level_mask(lengths, x.shape[1]).astype(np.float64)
    levels, masks = [], []
    for f in factors:
        L = downsampled_length(vals.shape[1], f)
        pad = L * f - vals.shape[1]
        s = np.pad(vals, ((0, 0), (0, pad))).reshape(B, L, f).sum(axis=2)
        c = np.pad(counts, ((0, 0), (0, pad))).reshape(B, L, f).sum(axis=2)
        lengths = -(-lengths // f)
        vals = np.where(c > 0, s / np.maximum(c, 1), 0.0)
        counts = (c > 0).astype(np.float64)
        levels.append(vals[..., None])
        masks.append(_level_mask(lengths, L))
    return ProsodyPyramid(levels, masks, tuple(factors), hop)


class LearnedPyramid(Module):
    """Strided-convolution pyramid (kernel 2f, stride f) with SiLU between stages."""

    def __init__(self, channels, factors=FACTORS, input_scale=0.1, rng=None, dtype=np.float32,
                 hop=HOP):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.factors, self.input_scale, self.dtype, self.hop = tuple(factors), input_scale, dtype, hop
        self.stages = [DownsampleConv(1 if i == 0 else channels, channels, f, rng, dtype)
                       for i, f in enumerate(factors)]
        self.acts = [SiLU() for _ in factors]

    def forward(self, x, lengths=None) -> ProsodyPyramid:
        x, lengths = _batch_signal(x, lengths)
        in_mask = _level_mask(lengths, x.shape[1])
        h = (x * in_mask * self.input_scale).astype(self.dtype)[..., None]
        levels, masks = [], []
        for conv, act, f in zip(self.stages, self.acts, self.factors):
            h = act.forward(conv.forward(h))
            lengths = -(-lengths // f)
            m = _level_mask(lengths, h.shape[1])
            h = h * m[..., None]
            levels.append(h)
            masks.append(m)
        self._cache = (in_mask, masks)
        return ProsodyPyramid(levels, masks, self.factors, self.hop)

    def backward(self, dlevels):
        in_mask, masks = self._saved()
        dh = None
        for i in reversed(range(len(self.stages))):
            g = dlevels[i] if dh is None else dh + dlevels[i]
            g = g * masks[i][..., None]
            dh = self.stages[i].backward(self.acts[i].backward(g))
        return dh[..., 0] * in_mask * self.input_scale


def build_pyramid(samples, lengths=None, learned: LearnedPyramid | None = None) -> ProsodyPyramid:
    """Mean-pool pyramid by default; pass a :class:`LearnedPyramid` for the trainable path."""
    if learned is None:
        return meanpool_pyramid(samples, lengths)
    return learned.forward(samples, lengths)


def length_regulate(content, durations):
    """Repeat token ``i`` ``durations[i]`` times along the first axis."""
    durations = np.asarray(durations)
    if durations.ndim != 1 or len(durations) != len(content):
        raise ValueError("one duration per token required")
    if np.any(durations < 1) or not np.all(durations == np.round(durations)):
        raise ValueError("durations must be positive integers")
    return np.repeat(np.asarray(content), durations.astype(np.int64), axis=0)


def regulate_batch(contents, durations_list, dtype=np.float32):
    """Length-regulate and right-pad a batch; returns ``(frames, mask)``."""
    seqs = [length_regulate(c, d) for c, d in zip(contents, durations_list)]
    F = max(len(s) for s in seqs)
    out = np.zeros((len(seqs), F, seqs[0].shape[1]), dtype=dtype)
    mask = np.zeros((len(seqs), F), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
        mask[i, :len(s)] = True
    return out, mask


class CrossAttention(Module):
    """Single-head attention from content queries onto one pyramid level.

    Time encodings, when used, are concatenated to queries and keys before
    projection; their projection rows start as ``pos_gain * I`` so that at
    initialization each query favours keys that are close in time.
    """

    def __init__(self, d_model, kv_dim=None, pos_dim=0, pos_gain=2.0, rng=None,
                 dtype=np.float32, zero_output=True):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        kv_dim = d_model if kv_dim is None else kv_dim
        if pos_dim > d_model:
            raise ValueError("pos_dim must not exceed d_model")
        self.d_model, self.kv_dim, self.pos_dim = d_model, kv_dim, pos_dim
        self.q = Dense(d_model + pos_dim, d_model, rng, dtype)
        self.k = Dense(kv_dim + pos_dim, d_model, rng, dtype)
        self.v = Dense(kv_dim, d_model, rng, dtype)
        self.o = Dense(d_model, d_model, rng, dtype, zero=zero_output)
        if pos_dim:
            eye = pos_gain * np.eye(pos_dim, d_model, dtype=dtype)
            self.q.params["weight"][d_model:] = eye
            self.k.params["weight"][kv_dim:] = eye
        self.weights = None

    def forward(self, queries, kv, q_pos=None, k_pos=None, key_mask=None, residual=True):
        B, Q, _ = queries.shape
        L = kv.shape[1]
        if L == 0:
            raise ValueError("empty key/value sequence")
        qi, ki = queries, kv
        if self.pos_dim:
            qi = np.concatenate([queries, np.broadcast_to(q_pos, (B, Q, self.pos_dim))], -1)
            ki = np.concatenate([kv, np.broadcast_to(k_pos, (B, L, self.pos_dim))], -1)
        qh = self.q.forward(qi)
        kh = self.k.forward(ki)
        vh = self.v.forward(kv)
        scale = 1.0 / np.sqrt(self.d_model)
        scores = qh @ kh.transpose(0, 2, 1) * scale
        km = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, :]
        A = masked_softmax(scores, km).astype(queries.dtype, copy=False)
        ctx = A @ vh
        out = self.o.forward(ctx)
        self.weights = A
        self._cache = (A, qh, kh, vh, scale, residual)
        return out + queries if residual else out

    def backward(self, dout):
        A, qh, kh, vh, scale, residual = self._saved()
        dctx = self.o.backward(dout)
        dA = dctx @ vh.transpose(0, 2, 1)
        dv = A.transpose(0, 2, 1) @ dctx
        ds = softmax_backward(dA, A) * scale
        dq = ds @ kh
        dk = ds.transpose(0, 2, 1) @ qh
        dqi = self.q.backward(dq)
        dki = self.k.backward(dk)
        dkv = self.v.backward(dv) + dki[..., :self.kv_dim]
        dqueries = dqi[..., :self.d_model]
        if residual:
            dqueries = dqueries + dout
        return dqueries, dkv


def cross_attend(queries, keys_values, attn: CrossAttention, residual=True):
    """Unbatched convenience wrapper: ``(Q, d) x (L, kv_dim) -> (Q, d)``."""
    out = attn.forward(np.asarray(queries)[None], np.asarray(keys_values)[None],
                       residual=residual)
    return out[0]


class SALN(Module):
    """Layer norm over channels with scale and shift predicted from the speaker.

    ``out = gamma(S) * norm(h) + delta(S)``; both maps start at zero weight
    with bias 1 (gamma) and 0 (delta), i.e. plain layer norm.
    """

    def __init__(self, d_model, speaker_dim, eps=1e-5, dtype=np.float32):
        super().__init__()
        if d_model < 2:
            raise ValueError("SALN needs at least two channels")
        self.d_model, self.eps = d_model, eps
        self.gamma = Dense(speaker_dim, d_model, dtype=dtype, zero=True, bias=1.0)
        self.delta = Dense(speaker_dim, d_model, dtype=dtype, zero=True, bias=0.0)

    def forward(self, h, speaker):
        if h.shape[-1] != self.d_model:
            raise ValueError(f"channel count {h.shape[-1]} != {self.d_model}")
        xhat, ln_cache = layer_norm(h, self.eps)
        g = self.gamma.forward(speaker)
        b = self.delta.forward(speaker)
        self._cache = (xhat, ln_cache, g)
        return g[:, None, :] * xhat + b[:, None, :]

    def backward(self, dout):
        xhat, ln_cache, g = self._saved()
        dspk = self.gamma.backward((dout * xhat).sum(axis=1)) + self.delta.backward(dout.sum(axis=1))
        dh = layer_norm_backward(dout * g[:, None, :], ln_cache)
        return dh, dspk


def saln(h, speaker, norm: SALN):
    """Unbatched convenience wrapper: ``(T, d), (d_s,) -> (T, d)``."""
    return norm.forward(np.asarray(h)[None], np.asarray(speaker)[None])[0]


@dataclass
class ConditionBundle:
    content: np.ndarray  # (tokens, d_c)
    speaker: np.ndarray  # (d_s,)
    durations: np.ndarray  # (tokens,) positive ints

    @property
    def n_frames(self) -> int:
        return int(np.sum(self.durations))


@dataclass
class AdaptorOutput:
    fused: np.ndarray  # (frames, d_c)


FUSION_ORDERS = {"coarse_to_fine": (3, 2, 1, 0), "fine_to_coarse": (0, 1, 2, 3)}


class HierarchicalAdaptor(Module):
    """Coarse-to-fine cross-attention fusion with SALN ahead of every unit."""

    def __init__(self, d_model, speaker_dim, kv_dim=None, factors=FACTORS, hop=HOP,
                 fusion_order="coarse_to_fine", learned_pyramid=True, pos_dim=32,
                 pos_scale=1.5, pos_period=1000.0, input_scale=0.1, rng=None,
                 dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        if fusion_order not in FUSION_ORDERS:
            raise ValueError(f"unknown fusion order {fusion_order!r}")
        self.d_model, self.dtype, self.hop = d_model, dtype, hop
        self.order = FUSION_ORDERS[fusion_order]
        self.pos_dim, self.pos_scale, self.pos_period = pos_dim, pos_scale, pos_period
        self.pyramid = (LearnedPyramid(d_model, factors, input_scale, rng, dtype, hop)
                        if learned_pyramid else None)
        if kv_dim is None:
            kv_dim = d_model if learned_pyramid else 1
        self.norms = [SALN(d_model, speaker_dim, dtype=dtype) for _ in factors]
        self.attns = [CrossAttention(d_model, kv_dim, pos_dim, rng=rng, dtype=dtype)
                      for _ in factors]

    def _encode_time(self, positions):
        if not self.pos_dim:
            return None
        return sinusoidal_embedding(positions * self.pos_scale, self.pos_dim,
                                    self.pos_period).astype(self.dtype)

    def forward(self, content, speaker, frame_mask, pyramid: ProsodyPyramid):
        """``content`` is already length-regulated, ``(batch, frames, d)``."""
        content = np.asarray(content, dtype=self.dtype)
        speaker = np.asarray(speaker, dtype=self.dtype)
        fm = np.asarray(frame_mask, dtype=self.dtype)[..., None]
        q_pos = self._encode_time(np.arange(content.shape[1]) + 0.5)
        h = content
        for lvl in self.order:
            kv = np.asarray(pyramid.levels[lvl], dtype=self.dtype)
            hn = self.norms[lvl].forward(h, speaker)
            k_pos = self._encode_time(pyramid.positions(lvl))
            h = h + self.attns[lvl].forward(hn, kv, q_pos, k_pos, pyramid.masks[lvl],
                                            residual=False)
        self._cache = fm
        return h * fm

    def backward(self, dout):
        fm = self._saved()
        dh = dout * fm
        dlevels = [None] * len(self.attns)
        dspk = 0.0
        for lvl in reversed(self.order):
            dhn, dlevels[lvl] = self.attns[lvl].backward(dh)
            dres, ds = self.norms[lvl].backward(dhn)
            dh = dh + dres
            dspk = dspk + ds
        grads = {"content": dh, "speaker": dspk, "levels": dlevels}
        return grads

    def forward_excitation(self, content, speaker, frame_mask, samples, lengths):
        """Trainable path: build the learned pyramid, then fuse."""
        if self.pyramid is None:
            raise RuntimeError("adaptor was built without a learned pyramid")
        pyr = self.pyramid.forward(samples, lengths)
        return self.forward(content, speaker, frame_mask, pyr)

    def backward_excitation(self, dout):
        grads = self.backward(dout)
        grads["samples"] = self.pyramid.backward(grads.pop("levels"))
        return grads

    def adapt(self, bundle: ConditionBundle, pyramid: ProsodyPyramid) -> AdaptorOutput:
        frames = length_regulate(bundle.content, bundle.durations)[None]
        mask = np.ones(frames.shape[:2], dtype=bool)
        out = self.forward(frames, np.asarray(bundle.speaker)[None], mask, pyramid)
        return AdaptorOutput(out[0])


class FlatAdaptor(Module):
    """Ablation path: encode frame-level F0 pointwise and add it to the content."""

    def __init__(self, d_model, hidden=32, rng=None, dtype=np.float32, zero_output=True):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.dtype = dtype
        self.enc_in = Dense(1, hidden, rng, dtype)
        self.enc_act = Tanh()
        self.enc_out = Dense(hidden, d_model, rng, dtype, zero=zero_output)

    def forward(self, content, frame_f0, frame_mask):
        content = np.asarray(content, dtype=self.dtype)
        frame_f0 = np.asarray(frame_f0, dtype=self.dtype)
        if frame_f0.shape != content.shape[:2]:
            raise ValueError("frame F0 length must match the regulated content")
        fm = np.asarray(frame_mask, dtype=self.dtype)[..., None]
        e = self.enc_out.forward(self.enc_act.forward(self.enc_in.forward(frame_f0[..., None])))
        self._cache = fm
        return (content + e) * fm

    def backward(self, dout):
        fm = self._saved()
        d = dout * fm
        df0 = self.enc_in.backward(self.enc_act.backward(self.enc_out.backward(d)))[..., 0]
        return {"content": d, "frame_f0": df0}

    def adapt_flat(self, bundle: ConditionBundle, frame_f0) -> AdaptorOutput:
        frames = length_regulate(bundle.content, bundle.durations)[None]
        f0 = np.asarray(frame_f0)[None]
        if f0.shape[1] != frames.shape[1]:
            raise ValueError("frame F0 length must equal sum(durations)")
        return AdaptorOutput(self.forward(frames, f0, np.ones(f0.shape, dtype=bool))[0])


class DurationPredictor(Module):
    """Two dense layers mapping (token content, speaker) to log-duration."""

    def __init__(self, content_dim, speaker_dim, hidden=32, rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.dtype, self.content_dim = dtype, content_dim
        self.hidden = Dense(content_dim + speaker_dim, hidden, rng, dtype)
        self.act = Tanh()
        self.out = Dense(hidden, 1, dtype=dtype, zero=True)

    def forward(self, content, speaker):
        """``(batch, tokens, d_c), (batch, d_s) -> (batch, tokens)`` log-durations."""
        content = np.asarray(content, dtype=self.dtype)
        speaker = np.asarray(speaker, dtype=self.dtype)
        spk = np.broadcast_to(speaker[:, None, :], content.shape[:2] + speaker.shape[-1:])
        x = np.concatenate([content, spk], axis=-1)
        return self.out.forward(self.act.forward(self.hidden.forward(x)))[..., 0]

    def backward(self, dy):
        dx = self.hidden.backward(self.act.backward(self.out.backward(dy[..., None])))
        return {"content": dx[..., :self.content_dim],
                "speaker": dx[..., self.content_dim:].sum(axis=1)}

    def predict(self, content, speaker):
        return durations_from_log(self.forward(np.asarray(content)[None],
                                               np.asarray(speaker)[None])[0])


def durations_from_log(log_durations):
    """Round ``exp`` of predicted log-durations and clamp to at least one frame."""
    return np.maximum(1, np.round(np.exp(np.asarray(log_durations, dtype=np.float64)))).astype(
        np.int64)
