"""Small layer set with explicit forward/backward.

Each module caches what its backward pass needs from the most recent
forward call, so a module instance may be applied once per
forward/backward cycle. Parameter gradients accumulate into ``grads``
until :meth:`Module.zero_grad`.

Sequence tensors are laid out ``(batch, time, channels)``.
"""
from __future__ import annotations

import numpy as np


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def add_param(self, name: str, value: np.ndarray) -> np.ndarray:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, p in self.params.items():
            yield prefix + name, p
        for cname, child in self.children():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_grads(self, prefix=""):
        for name, g in self.grads.items():
            yield prefix + name, g
        for cname, child in self.children():
            yield from child.named_grads(f"{prefix}{cname}.")

    def parameters(self) -> dict[str, np.ndarray]:
        return dict(self.named_parameters())

    def gradients(self) -> dict[str, np.ndarray]:
        return dict(self.named_grads())

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)
        for _, child in self.children():
            child.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.parameters()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p[...] = value

    def n_params(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def _saved(self):
        if self._cache is None:
            raise RuntimeError(f"{type(self).__name__}.backward called before forward")
        return self._cache


def glorot(rng, fan_in, fan_out, shape, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Dense(Module):
    """Affine map over the last axis."""

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32, zero=False, bias=0.0):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        if zero or rng is None:
            w = np.zeros((n_in, n_out), dtype=dtype)
        else:
            w = glorot(rng, n_in, n_out, (n_in, n_out), dtype)
        self.add_param("weight", w)
        self.add_param("bias", np.full(n_out, bias, dtype=dtype))

    def forward(self, x):
        self._cache = x
        return x @ self.params["weight"] + self.params["bias"]

    def backward(self, dy):
        x = self._saved()
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        self.grads["weight"] += x2.T @ dy2
        self.grads["bias"] += dy2.sum(axis=0)
        return dy @ self.params["weight"].T


class Conv1d(Module):
    """Same-padded dilated convolution along time.

    With a mask, inputs at padded positions are zeroed first so a padded
    batch row sees exactly the zero padding it would see on its own.
    """

    def __init__(self, n_in, n_out, kernel=3, dilation=1, rng=None, dtype=np.float32,
                 zero=False):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("kernel must be odd for same padding")
        self.n_in, self.n_out, self.kernel, self.dilation = n_in, n_out, kernel, dilation
        shape = (kernel, n_in, n_out)
        if zero or rng is None:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = glorot(rng, kernel * n_in, n_out, shape, dtype)
        self.add_param("weight", w)
        self.add_param("bias", np.zeros(n_out, dtype=dtype))

    def forward(self, x, mask=None):
        if mask is not None:
            x = x * mask[..., None]
        B, T, C = x.shape
        k, d = self.kernel, self.dilation
        pad = d * (k // 2)
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        cols = np.stack([xp[:, j * d:j * d + T] for j in range(k)], axis=2)
        cols = cols.reshape(B, T, k * C)
        self._cache = (cols, mask, x.shape)
        return cols @ self.params["weight"].reshape(k * C, self.n_out) + self.params["bias"]

    def backward(self, dy):
        cols, mask, (B, T, C) = self._saved()
        k, d = self.kernel, self.dilation
        w2 = self.params["weight"].reshape(k * C, self.n_out)
        dy2 = dy.reshape(-1, self.n_out)
        self.grads["weight"] += (cols.reshape(-1, k * C).T @ dy2).reshape(k, C, self.n_out)
        self.grads["bias"] += dy2.sum(axis=0)
        dcols = (dy @ w2.T).reshape(B, T, k, C)
        pad = d * (k // 2)
        dxp = np.zeros((B, T + 2 * pad, C), dtype=dy.dtype)
        for j in range(k):
            dxp[:, j * d:j * d + T] += dcols[:, :, j]
        dx = dxp[:, pad:pad + T]
        if mask is not None:
            dx = dx * mask[..., None]
        return dx


def downsampled_length(n, factor):
    return -(-n // factor)


class DownsampleConv(Module):
    """Strided convolution: kernel ``2 * factor``, stride ``factor``.

    Output step ``j`` sees input samples ``[j*f - f/2, j*f + 3f/2)``, so it
    is centred on block ``j``; inputs are zero padded on both sides and the
    output length is ``ceil(n / factor)``.
    """

    def __init__(self, n_in, n_out, factor, rng=None, dtype=np.float32):
        super().__init__()
        if factor < 2 or factor % 2:
            raise ValueError("factor must be an even integer >= 2")
        self.n_in, self.n_out, self.factor = n_in, n_out, factor
        shape = (2 * factor, n_in, n_out)
        if rng is None:
            w = np.zeros(shape, dtype=dtype)
        else:
            w = glorot(rng, 2 * factor * n_in, n_out, shape, dtype)
        self.add_param("weight", w)
        self.add_param("bias", np.zeros(n_out, dtype=dtype))

    def forward(self, x):
        B, N, C = x.shape
        f = self.factor
        L = downsampled_length(N, f)
        xp = np.zeros((B, (L + 1) * f, C), dtype=x.dtype)
        xp[:, f // 2:f // 2 + N] = x
        blocks = xp.reshape(B, L + 1, f * C)
        cols = np.concatenate([blocks[:, :-1], blocks[:, 1:]], axis=-1)
        self._cache = (cols, x.shape)
        w2 = self.params["weight"].reshape(2 * f * C, self.n_out)
        return cols @ w2 + self.params["bias"]

    def backward(self, dy):
        cols, (B, N, C) = self._saved()
        f = self.factor
        L = dy.shape[1]
        w2 = self.params["weight"].reshape(2 * f * C, self.n_out)
        dy2 = dy.reshape(-1, self.n_out)
        self.grads["weight"] += (cols.reshape(-1, 2 * f * C).T @ dy2).reshape(2 * f, C, self.n_out)
        self.grads["bias"] += dy2.sum(axis=0)
        dcols = dy @ w2.T
        dblocks = np.zeros((B, L + 1, f * C), dtype=dy.dtype)
        dblocks[:, :-1] += dcols[..., :f * C]
        dblocks[:, 1:] += dcols[..., f * C:]
        return dblocks.reshape(B, (L + 1) * f, C)[:, f // 2:f // 2 + N]


class Tanh(Module):
    def forward(self, x):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._saved()
        return dy * (1.0 - y * y)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class SiLU(Module):
    def forward(self, x):
        s = sigmoid(x)
        self._cache = (x, s)
        return x * s

    def backward(self, dy):
        x, s = self._saved()
        return dy * s * (1.0 + x * (1.0 - s))


class GatedTanh(Module):
    """``tanh(a) * sigmoid(b)`` over the two channel halves of the input."""

    def forward(self, x):
        a, b = np.split(x, 2, axis=-1)
        ta, sb = np.tanh(a), sigmoid(b)
        self._cache = (ta, sb)
        return ta * sb

    def backward(self, dy):
        ta, sb = self._saved()
        da = dy * sb * (1.0 - ta * ta)
        db = dy * ta * sb * (1.0 - sb)
        return np.concatenate([da, db], axis=-1)


def layer_norm(x, eps=1e-5):
    """Normalize over the last axis; returns ``(y, cache)``."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat, (xhat, inv)


def layer_norm_backward(dy, cache):
    xhat, inv = cache
    return inv * (dy - dy.mean(axis=-1, keepdims=True)
                  - xhat * (dy * xhat).mean(axis=-1, keepdims=True))


def masked_softmax(scores, mask=None):
    """Softmax over the last axis; ``mask`` (broadcastable) marks valid keys."""
    if mask is not None:
        scores = np.where(mask, scores, -np.inf)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dA, A):
    return A * (dA - (dA * A).sum(axis=-1, keepdims=True))


def sinusoidal_embedding(positions, dim, max_period=10000.0):
    """``[sin(p * w_i), cos(p * w_i)]`` with ``w_i = max_period ** (-2i / dim)``."""
    if dim < 2 or dim % 2:
        raise ValueError("embedding dim must be a positive even integer")
    p = np.asarray(positions, dtype=np.float64)[..., None]
    freqs = max_period ** (-2.0 * np.arange(dim // 2) / dim)
    return np.concatenate([np.sin(p * freqs), np.cos(p * freqs)], axis=-1)
