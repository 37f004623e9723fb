"""Conditional noise predictor eps(x_t, C_t, S, t) and a direct pitch regressor.

Conditioning enters by projection and addition ahead of a short stack of
gated, same-padded convolutions (dilations 1 and 2).
"""
from __future__ import annotations

import numpy as np

from .nn.layers import Conv1d, Dense, GatedTanh, Module, SiLU, sinusoidal_embedding


class GatedBlock(Module):
    def __init__(self, hidden, dilation, rng, dtype):
        super().__init__()
        self.conv = Conv1d(hidden, 2 * hidden, 3, dilation, rng, dtype)
        self.gate = GatedTanh()
        self.res = Dense(hidden, hidden, rng, dtype)

    def forward(self, h, mask=None):
        z = self.gate.forward(self.conv.forward(h, mask))
        return h + self.res.forward(z)

    def backward(self, dh):
        dz = self.res.backward(dh)
        return dh + self.conv.backward(self.gate.backward(dz))


def _check_inputs(cond, speaker, length, mask):
    if cond.ndim != 3 or cond.shape[1] != length:
        raise ValueError(f"condition time length {cond.shape[1:2]} != {length}")
    if speaker.ndim != 2 or speaker.shape[0] != cond.shape[0]:
        raise ValueError("speaker must be (batch, dim) matching the condition batch")
    if mask is not None and mask.shape != cond.shape[:2]:
        raise ValueError("mask must be (batch, time)")


class _ConvStack(Module):
    """Shared trunk: gated blocks followed by SiLU and a scalar output head."""

    def __init__(self, hidden, n_blocks, dilations, rng, dtype):
        super().__init__()
        self.blocks = [GatedBlock(hidden, dilations[i % len(dilations)], rng, dtype)
                       for i in range(n_blocks)]
        self.out_act = SiLU()
        self.out_proj = Dense(hidden, 1, dtype=dtype, zero=True)

    def forward(self, h, mask):
        for blk in self.blocks:
            h = blk.forward(h, mask)
        y = self.out_proj.forward(self.out_act.forward(h))[..., 0]
        return y if mask is None else y * mask

    def backward(self, dy, mask):
        if mask is not None:
            dy = dy * mask
        dh = self.out_act.backward(self.out_proj.backward(dy[..., None]))
        for blk in reversed(self.blocks):
            dh = blk.backward(dh)
        return dh


class Denoiser(Module):
    def __init__(self, cond_dim, speaker_dim, hidden=64, n_blocks=2, step_dim=32,
                 dilations=(1, 2), rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.dtype = dtype
        self.cond_dim, self.speaker_dim, self.hidden, self.step_dim = (
            cond_dim, speaker_dim, hidden, step_dim)
        self.in_proj = Dense(1, hidden, rng, dtype)
        self.cond_proj = Dense(cond_dim, hidden, rng, dtype)
        self.speaker_proj = Dense(speaker_dim, hidden, rng, dtype)
        self.step_proj = Dense(step_dim, hidden, rng, dtype)
        self.step_act = SiLU()
        self.step_out = Dense(hidden, hidden, rng, dtype)
        self.trunk = _ConvStack(hidden, n_blocks, dilations, rng, dtype)

    def forward(self, x_t, t, cond, speaker, mask=None):
        x_t = np.asarray(x_t, dtype=self.dtype)
        cond = np.asarray(cond, dtype=self.dtype)
        speaker = np.asarray(speaker, dtype=self.dtype)
        _check_inputs(cond, speaker, x_t.shape[1], mask)
        mask = None if mask is None else np.asarray(mask, dtype=self.dtype)
        emb = sinusoidal_embedding(np.broadcast_to(t, (x_t.shape[0],)), self.step_dim)
        s = self.step_out.forward(self.step_act.forward(
            self.step_proj.forward(emb.astype(self.dtype))))
        g = self.speaker_proj.forward(speaker) + s
        h = self.in_proj.forward(x_t[..., None]) + self.cond_proj.forward(cond) + g[:, None, :]
        self._cache = mask
        return self.trunk.forward(h, mask)

    def backward(self, dy):
        mask = self._cache
        if self.trunk.out_proj._cache is None:
            raise RuntimeError("Denoiser.backward called before forward")
        dh = self.trunk.backward(np.asarray(dy, dtype=self.dtype), mask)
        dx = self.in_proj.backward(dh)[..., 0]
        dcond = self.cond_proj.backward(dh)
        dg = dh.sum(axis=1)
        dspeaker = self.speaker_proj.backward(dg)
        self.step_proj.backward(self.step_act.backward(self.step_out.backward(dg)))
        return {"x_t": dx, "cond": dcond, "speaker": dspeaker}

    def predictor(self, cond, speaker, mask=None):
        """Close over conditions: returns ``predict(x_t, t)`` for the sampler."""
        def predict(x_t, t):
            return self.forward(x_t, t, cond, speaker, mask).astype(np.float64)
        return predict


class PitchRegressor(Module):
    """Deterministic frame-level pitch head trained with plain MSE."""

    def __init__(self, cond_dim, speaker_dim, hidden=64, n_blocks=2, dilations=(1, 2),
                 rng=None, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.dtype = dtype
        self.cond_proj = Dense(cond_dim, hidden, rng, dtype)
        self.speaker_proj = Dense(speaker_dim, hidden, rng, dtype)
        self.trunk = _ConvStack(hidden, n_blocks, dilations, rng, dtype)

    def forward(self, cond, speaker, mask=None):
        cond = np.asarray(cond, dtype=self.dtype)
        speaker = np.asarray(speaker, dtype=self.dtype)
        _check_inputs(cond, speaker, cond.shape[1], mask)
        mask = None if mask is None else np.asarray(mask, dtype=self.dtype)
        h = self.cond_proj.forward(cond) + self.speaker_proj.forward(speaker)[:, None, :]
        self._cache = mask
        return self.trunk.forward(h, mask)

    def backward(self, dy):
        mask = self._cache
        if self.trunk.out_proj._cache is None:
            raise RuntimeError("PitchRegressor.backward called before forward")
        dh = self.trunk.backward(np.asarray(dy, dtype=self.dtype), mask)
        dcond = self.cond_proj.backward(dh)
        dspeaker = self.speaker_proj.backward(dh.sum(axis=1))
        return {"cond": dcond, "speaker": dspeaker}
