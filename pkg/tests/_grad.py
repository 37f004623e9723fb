"""Finite-difference cases shared by the layer tests and the acceptance suite.

Every case builds a double-precision module at hidden 8 / time 16 and
returns ``(module, forward, backward, inputs)`` for ``check_gradients``.
"""
import numpy as np

from prosodykit import adaptor as A
from prosodykit.denoiser import Denoiser, GatedBlock, PitchRegressor
from prosodykit.nn import layers as L

F64 = np.float64
B, T, H = 2, 16, 8


def _mask():
    m = np.ones((B, T), bool)
    m[1, 11:] = False
    return m


def _simple(module, x, mask=None):
    inputs = {"x": x}
    if mask is None:
        return module, lambda: module.forward(inputs["x"]), lambda dy: {"x": module.backward(dy)}, inputs
    return (module, lambda: module.forward(inputs["x"], mask),
            lambda dy: {"x": module.backward(dy)}, inputs)


def dense(rng):
    return _simple(L.Dense(5, H, rng, F64), rng.standard_normal((B, T, 5)))


def conv1d(rng):
    return _simple(L.Conv1d(H, 6, 3, 2, rng, F64), rng.standard_normal((B, T, H)), _mask())


def downsample(rng):
    return _simple(L.DownsampleConv(3, 4, 4, rng, F64), rng.standard_normal((B, 37, 3)))


def tanh(rng):
    return _simple(L.Tanh(), rng.standard_normal((B, T, H)))


def silu(rng):
    return _simple(L.SiLU(), rng.standard_normal((B, T, H)))


def gated_tanh(rng):
    return _simple(L.GatedTanh(), rng.standard_normal((B, T, 2 * H)))


class _Fn(L.Module):
    """Wrap a stateless forward/backward pair as a parameterless module."""

    def __init__(self, fwd, bwd):
        super().__init__()
        self.fwd, self.bwd = fwd, bwd

    def forward(self, x):
        y, self._cache = self.fwd(x)
        return y

    def backward(self, dy):
        return self.bwd(dy, self._saved())


def layer_norm(rng):
    m = _Fn(lambda x: L.layer_norm(x), L.layer_norm_backward)
    return _simple(m, rng.standard_normal((B, T, H)) * 3 + 1)


def softmax(rng):
    mask = np.ones((B, 1, T), bool)
    mask[0, 0, 12:] = False

    def fwd(x):
        a = L.masked_softmax(x, mask)
        return a, a

    m = _Fn(fwd, L.softmax_backward)
    return _simple(m, rng.standard_normal((B, 4, T)))


def gated_block(rng):
    return _simple(GatedBlock(H, 2, rng, F64), rng.standard_normal((B, T, H)), _mask())


def cross_attention(rng):
    m = A.CrossAttention(H, 3, pos_dim=4, rng=rng, dtype=F64, zero_output=False)
    inputs = {"q": rng.standard_normal((B, T, H)), "kv": rng.standard_normal((B, 5, 3))}
    q_pos = L.sinusoidal_embedding(np.arange(T) + 0.5, 4)
    k_pos = L.sinusoidal_embedding(np.arange(5) * 3.2, 4)
    km = np.ones((B, 5), bool)
    km[1, 3:] = False

    def fwd():
        return m.forward(inputs["q"], inputs["kv"], q_pos, k_pos, km)

    def bwd(dy):
        dq, dkv = m.backward(dy)
        return {"q": dq, "kv": dkv}

    return m, fwd, bwd, inputs


def saln(rng):
    m = A.SALN(H, 5, dtype=F64)
    for d in (m.gamma, m.delta):
        d.params["weight"][...] = rng.standard_normal(d.params["weight"].shape) * 0.3
    inputs = {"h": rng.standard_normal((B, T, H)), "s": rng.standard_normal((B, 5))}

    def bwd(dy):
        dh, ds = m.backward(dy)
        return {"h": dh, "s": ds}

    return m, lambda: m.forward(inputs["h"], inputs["s"]), bwd, inputs


def learned_pyramid(rng):
    m = A.LearnedPyramid(4, (4, 2, 2, 2), input_scale=0.5, rng=rng, dtype=F64, hop=8)
    inputs = {"x": rng.standard_normal((B, T * 8))}
    lengths = np.array([T * 8, T * 8 - 21])

    def fwd():
        pyr = m.forward(inputs["x"], lengths)
        return np.concatenate([lv.reshape(B, -1) for lv in pyr.levels], axis=1)

    def bwd(dy):
        pyr_shapes = [lv.shape for lv in m.forward(inputs["x"], lengths).levels]
        parts, pos = [], 0
        for s in pyr_shapes:
            n = s[1] * s[2]
            parts.append(dy[:, pos:pos + n].reshape(s))
            pos += n
        return {"x": m.backward(parts)}

    return m, fwd, bwd, inputs


def flat_adaptor(rng):
    m = A.FlatAdaptor(H, hidden=6, rng=rng, dtype=F64, zero_output=False)
    inputs = {"content": rng.standard_normal((B, T, H)), "frame_f0": rng.standard_normal((B, T))}
    mask = _mask()
    return (m, lambda: m.forward(inputs["content"], inputs["frame_f0"], mask), m.backward, inputs)


def duration_predictor(rng):
    m = A.DurationPredictor(H, 4, hidden=6, rng=rng, dtype=F64)
    m.out.params["weight"][...] = rng.standard_normal(m.out.params["weight"].shape)
    inputs = {"content": rng.standard_normal((B, 7, H)), "speaker": rng.standard_normal((B, 4))}
    return m, lambda: m.forward(inputs["content"], inputs["speaker"]), m.backward, inputs


def _unzero(module, rng):
    """Give zero-initialized output projections random weights so every path is live."""
    for name, p in module.named_parameters():
        if not np.any(p) and "bias" not in name:
            p[...] = rng.standard_normal(p.shape) * 0.5


def denoiser(rng):
    m = Denoiser(6, 4, hidden=H, n_blocks=2, step_dim=8, rng=rng, dtype=F64)
    _unzero(m, rng)
    inputs = {"x_t": rng.standard_normal((B, T)), "cond": rng.standard_normal((B, T, 6)),
              "speaker": rng.standard_normal((B, 4))}
    t = np.array([3, 77])
    mask = _mask()
    return (m, lambda: m.forward(inputs["x_t"], t, inputs["cond"], inputs["speaker"], mask),
            m.backward, inputs)


def regressor(rng):
    m = PitchRegressor(6, 4, hidden=H, n_blocks=2, rng=rng, dtype=F64)
    _unzero(m, rng)
    inputs = {"cond": rng.standard_normal((B, T, 6)), "speaker": rng.standard_normal((B, 4))}
    mask = _mask()
    return m, lambda: m.forward(inputs["cond"], inputs["speaker"], mask), m.backward, inputs


def hierarchical_meanpool(rng):
    """Composed adaptor over a fixed mean-pool pyramid; levels are inputs."""
    factors, hop = (2, 4, 2, 2), 8
    m = A.HierarchicalAdaptor(H, 4, factors=factors, hop=hop, learned_pyramid=False, pos_dim=4,
                              rng=rng, dtype=F64)
    _unzero(m, rng)
    for n in m.norms:
        for d in (n.gamma, n.delta):
            d.params["weight"][...] = rng.standard_normal(d.params["weight"].shape) * 0.3
    lengths = np.array([T * hop, T * hop - 50])
    pyr = A.meanpool_pyramid(rng.standard_normal((B, T * hop)), lengths, factors, hop)
    inputs = {"content": rng.standard_normal((B, T, H)), "speaker": rng.standard_normal((B, 4))}
    inputs.update({f"level{i}": lv.copy() for i, lv in enumerate(pyr.levels)})
    frame_mask = np.arange(T)[None] < (-(-lengths // hop))[:, None]

    def fwd():
        p = A.ProsodyPyramid([inputs[f"level{i}"] for i in range(4)], pyr.masks, factors, hop)
        return m.forward(inputs["content"], inputs["speaker"], frame_mask, p)

    def bwd(dy):
        g = m.backward(dy)
        out = {"content": g["content"], "speaker": g["speaker"]}
        out.update({f"level{i}": d for i, d in enumerate(g["levels"])})
        return out

    return m, fwd, bwd, inputs


def hierarchical_excitation(rng):
    """Full trainable path: learned pyramid from samples, then fusion."""
    factors, hop = (2, 4, 2, 2), 8
    m = A.HierarchicalAdaptor(H, 4, factors=factors, hop=hop, learned_pyramid=True, pos_dim=4,
                              input_scale=0.5, rng=rng, dtype=F64)
    _unzero(m, rng)
    lengths = np.array([T * hop, T * hop - 50])
    inputs = {"content": rng.standard_normal((B, T, H)), "speaker": rng.standard_normal((B, 4)),
              "samples": rng.standard_normal((B, T * hop))}
    frame_mask = np.arange(T)[None] < (-(-lengths // hop))[:, None]

    def fwd():
        return m.forward_excitation(inputs["content"], inputs["speaker"], frame_mask,
                                    inputs["samples"], lengths)

    return m, fwd, m.backward_excitation, inputs


LAYER_CASES = {
    "dense": dense, "conv1d": conv1d, "downsample_conv": downsample, "tanh": tanh,
    "silu": silu, "gated_tanh": gated_tanh, "layer_norm": layer_norm, "softmax": softmax,
}
DENOISER_CASES = {"gated_block": gated_block, "denoiser": denoiser, "regressor": regressor}
ADAPTOR_CASES = {
    "cross_attention": cross_attention, "saln": saln, "learned_pyramid": learned_pyramid,
    "flat_adaptor": flat_adaptor, "duration_predictor": duration_predictor,
    "hierarchical_meanpool": hierarchical_meanpool,
    "hierarchical_excitation": hierarchical_excitation,
}
ALL_CASES = {**LAYER_CASES, **DENOISER_CASES, **ADAPTOR_CASES}
# sampling keeps the big composed cases inside the time budget
MAX_PER_ARRAY = {"hierarchical_excitation": 60, "hierarchical_meanpool": 120}


def run_case(name, seed=0):
    from prosodykit.nn.gradcheck import check_gradients
    rng = np.random.default_rng(seed)
    module, fwd, bwd, inputs = ALL_CASES[name](rng)
    return check_gradients(module, fwd, bwd, inputs, rng, eps=1e-5,
                           max_per_array=MAX_PER_ARRAY.get(name))
