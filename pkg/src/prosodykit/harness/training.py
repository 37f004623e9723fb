"""Training and evaluation loops for the pitch predictor, adaptor probe and durations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import diffusion
from ..adaptor import DurationPredictor, FlatAdaptor, HierarchicalAdaptor
from ..denoiser import Denoiser, PitchRegressor
from ..excitation import synthesize
from ..f0proc import (ContourStats, NormalizedContour, compute_stats, denormalize,
                      expand_to_samples, interpolate_unvoiced)
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.layers import Dense, Module
from ..nn.optim import AdamW, clip_grad_norm
from .conditions import (Conditioner, batch_pad, clean_target, regulate_backward,
                         utterance_target)
from .config import RunConfig
from .corpus import Corpus
from .metrics import jitter_metric

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def corpus_stats(corpus: Corpus, domain="log_hz") -> ContourStats:
    return compute_stats([u.contour for u in corpus.split("train")], domain)


def schedule_for(cfg: RunConfig) -> diffusion.NoiseSchedule:
    if cfg.beta_start > 0:
        return diffusion.make_schedule(cfg.schedule, cfg.T, cfg.beta_start, cfg.beta_end)
    return diffusion.make_schedule(cfg.schedule, cfg.T)


# ---------------------------------------------------------------- pitch data

@dataclass
class PitchData:
    utts: list
    x0: list
    cond: list
    speaker: list
    voiced: list

    def __len__(self):
        return len(self.utts)

    def batch(self, idx, dtype=np.float32):
        x0, mask = batch_pad([self.x0[i] for i in idx], dtype)
        cond, _ = batch_pad([self.cond[i] for i in idx], dtype)
        spk = np.stack([self.speaker[i] for i in idx]).astype(dtype)
        return x0, cond, spk, mask


def pitch_data(utts, conditioner: Conditioner, stats: ContourStats) -> PitchData:
    return PitchData(
        utts=list(utts),
        x0=[utterance_target(u, stats) for u in utts],
        cond=[conditioner.frame_conditions(u) for u in utts],
        speaker=[conditioner.speaker_embedding(u.speaker_id) for u in utts],
        voiced=[u.contour.voiced for u in utts],
    )


def build_denoiser(cfg: RunConfig, seed: int) -> Denoiser:
    return Denoiser(cfg.content_dim + 2, cfg.speaker_dim, cfg.hidden, cfg.n_blocks,
                    cfg.step_dim, rng=np.random.default_rng(seed + 1))


def build_regressor(cfg: RunConfig, seed: int) -> PitchRegressor:
    return PitchRegressor(cfg.content_dim + 2, cfg.speaker_dim, cfg.hidden, cfg.n_blocks,
                          rng=np.random.default_rng(seed + 2))


def _batches(n, size, rng):
    """Endless stream of index batches drawn from successive permutations."""
    while True:
        perm = rng.permutation(n)
        for s in range(0, n - size + 1 if n >= size else 1, size):
            yield perm[s:s + size]


def _chunks(n, size):
    return [np.arange(s, min(n, s + size)) for s in range(0, n, size)]


@dataclass
class EvalNoise:
    """Fixed steps and noise per utterance so validation loss is reproducible."""

    t: np.ndarray
    noise: list

    @classmethod
    def draw(cls, data: PitchData, T: int, seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))
        t = rng.integers(1, T + 1, size=len(data))
        noise = [rng.standard_normal(len(x)).astype(np.float32) for x in data.x0]
        return cls(t, noise)


def validation_loss(net: Denoiser, data: PitchData, schedule, eval_noise: EvalNoise,
                    batch_size=32) -> float:
    """Frame-weighted epsilon loss over the whole set."""
    total, count = 0.0, 0
    for idx in _chunks(len(data), batch_size):
        x0, cond, spk, mask = data.batch(idx)
        noise, _ = batch_pad([eval_noise.noise[i] for i in idx])
        res = diffusion.diffusion_loss(x0, net.predictor(cond, spk, mask), schedule, None,
                                       mask=mask, t=eval_noise.t[idx], noise=noise)
        n = int(mask.sum())
        total += res.loss * n
        count += n
    return total / count


def regressor_loss(net: PitchRegressor, data: PitchData, batch_size=32) -> float:
    total, count = 0.0, 0
    for idx in _chunks(len(data), batch_size):
        x0, cond, spk, mask = data.batch(idx)
        loss, _ = diffusion.masked_mse(net.forward(cond, spk, mask), x0, mask)
        n = int(mask.sum())
        total += loss * n
        count += n
    return total / count


@dataclass
class PitchRun:
    net: Module
    stats: ContourStats
    curve: list = field(default_factory=list)  # (step, train_loss, val_loss or None)
    best_val: float = float("inf")
    best_step: int = 0
    kind: str = "diffusion"
    content_state: dict | None = None
    seed: int = 0  # training seed; fixes the content and speaker stand-ins


def _check_finite(loss, step, what):
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite {what} loss at step {step}: {loss}")


def train_pitch_predictor(cfg: RunConfig, corpus: Corpus, seed: int, steps=None,
                          kind="diffusion", checkpoint_path=None) -> PitchRun:
    """Train the diffusion pitch predictor (or the MSE regressor with ``kind='regressor'``).

    The best validation checkpoint is written to ``checkpoint_path`` when given,
    and the returned network holds those best weights.
    """
    steps = cfg.pitch_steps if steps is None else steps
    stats = corpus_stats(corpus, cfg.domain)
    cond = Conditioner(corpus, cfg.content_dim, cfg.speaker_dim, cfg.n_phones, seed)
    train = pitch_data(corpus.split("train"), cond, stats)
    val = pitch_data(corpus.split("val") or corpus.split("train")[:32], cond, stats)
    schedule = schedule_for(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    net = build_denoiser(cfg, seed) if kind == "diffusion" else build_regressor(cfg, seed)
    opt = AdamW(net.parameters(), cfg.lr, (cfg.beta1, cfg.beta2), cfg.weight_decay)
    content_opt = None
    if cfg.condition_grad == "clip" and kind == "diffusion":
        content_opt = AdamW(cond.content.parameters(), cfg.lr, (cfg.beta1, cfg.beta2),
                            cfg.weight_decay)
    eval_noise = EvalNoise.draw(val, cfg.T, seed)

    def evaluate():
        if kind == "diffusion":
            return validation_loss(net, val, schedule, eval_noise)
        return regressor_loss(net, val)

    run = PitchRun(net, stats, kind=kind, seed=seed)
    best_state = net.state_dict()
    window = []
    batches = _batches(len(train), cfg.batch_size, rng)
    for step in range(1, steps + 1):
        idx = next(batches)
        x0, c, s, m = train.batch(idx)
        net.zero_grad()
        if kind == "diffusion":
            res = diffusion.diffusion_loss(x0, net.predictor(c, s, m), schedule, rng, mask=m)
            loss, grad = res.loss, res.grad
        else:
            loss, grad = diffusion.masked_mse(net.forward(c, s, m), x0, m)
        _check_finite(loss, step, kind)
        in_grads = net.backward(grad)
        if content_opt is not None:
            _content_update(cond, train, idx, in_grads["cond"], cfg, content_opt)
        opt.step(net.gradients())
        window.append(loss)
        val_loss = None
        if step % cfg.eval_every == 0 or step == steps:
            val_loss = evaluate()
            _check_finite(val_loss, step, "validation")
            if val_loss < run.best_val:
                run.best_val, run.best_step = val_loss, step
                best_state = net.state_dict()
        if step % cfg.log_every == 0 or step == steps:
            run.curve.append((step, float(np.mean(window)), val_loss))
            log.info("%s step %d loss %.4f%s", kind, step, np.mean(window),
                     "" if val_loss is None else f" val {val_loss:.4f}")
            window = []
    if steps == 0:
        run.best_val = evaluate()
    net.load_state_dict(best_state)
    run.content_state = cond.content.state_dict()
    if checkpoint_path is not None:
        save_pitch_checkpoint(checkpoint_path, run, cfg, seed)
    return run


def _content_update(cond: Conditioner, data: PitchData, idx, d_cond, cfg, opt):
    """Literal-reading mode: clipped input gradients train the content tables."""
    d_cont = d_cond[..., :cfg.content_dim]
    clipped, _ = clip_grad_norm([d_cont], cfg.input_clip_norm)
    cond.content.zero_grad()
    for row, i in enumerate(idx):
        utt = data.utts[i]
        F = utt.n_frames
        d_tok = regulate_backward(clipped[0][row, :F], utt.durations)
        cond.content.accumulate(utt.phones, utt.tones, d_tok)
    opt.step(cond.content.gradients())
    # later batches must see the updated tables
    for j, utt in enumerate(data.utts):
        if j in set(idx.tolist()):
            data.cond[j] = cond.frame_conditions(utt)


def save_pitch_checkpoint(path, run: PitchRun, cfg: RunConfig, seed: int):
    arrays = {f"net.{k}": v for k, v in run.net.state_dict().items()}
    arrays.update({f"content.{k}": v for k, v in (run.content_state or {}).items()})
    manifest = {
        "kind": run.kind, "seed": seed, "best_step": run.best_step,
        "best_val": run.best_val, "stats": [run.stats.mean, run.stats.std, run.stats.domain],
        "config": cfg.to_dict(),
    }
    save_checkpoint(path, arrays, manifest)


def load_pitch_checkpoint(path):
    arrays, manifest = load_checkpoint(path)
    cfg = RunConfig(**manifest["config"]).validate()
    seed = manifest["seed"]
    net = build_denoiser(cfg, seed) if manifest["kind"] == "diffusion" else build_regressor(cfg, seed)
    net.load_state_dict({k[4:]: v for k, v in arrays.items() if k.startswith("net.")})
    content = {k[8:]: v for k, v in arrays.items() if k.startswith("content.")}
    mean, std, domain = manifest["stats"]
    run = PitchRun(net, ContourStats(mean, std, domain), kind=manifest["kind"],
                   best_val=manifest["best_val"], best_step=manifest["best_step"],
                   content_state=content, seed=seed)
    return run, cfg, seed


def conditioner_for(run: PitchRun, corpus: Corpus, cfg: RunConfig) -> Conditioner:
    cond = Conditioner(corpus, cfg.content_dim, cfg.speaker_dim, cfg.n_phones, run.seed)
    if run.content_state:
        cond.content.load_state_dict(run.content_state)
    return cond


def predict_contours(run: PitchRun, data: PitchData, cfg: RunConfig, seed: int,
                     batch_size=32) -> list:
    """Sample (diffusion) or predict (regressor) contours in Hz, zeroed on unvoiced frames."""
    schedule = schedule_for(cfg)
    out = []
    for ci, idx in enumerate(_chunks(len(data), batch_size)):
        _, cond, spk, mask = data.batch(idx)
        if run.kind == "diffusion":
            z = diffusion.sample(run.net.predictor(cond, spk, mask), mask.shape, schedule,
                                 seed=np.random.SeedSequence([seed, ci]), mask=mask)
        else:
            z = run.net.forward(cond, spk, mask).astype(np.float64)
        for row, i in enumerate(idx):
            F = len(data.x0[i])
            nc = NormalizedContour(z[row, :F], run.stats.mean, run.stats.std, run.stats.domain,
                                   cfg.sample_rate)
            hz, _ = denormalize(nc)
            out.append(np.where(data.voiced[i], hz, 0.0))
    return out


# ------------------------------------------------------------- adaptor probe

@dataclass
class AdaptorData:
    utts: list
    content: list  # regulated (F, d)
    speaker: list
    samples: list  # excitation (F * hop,)
    f0_in: list  # normalized observed contour (F,)
    target: list  # normalized clean contour (F,)
    voiced: list

    def __len__(self):
        return len(self.utts)

    def batch(self, idx, dtype=np.float32):
        content, fmask = batch_pad([self.content[i] for i in idx], dtype)
        samples, _ = batch_pad([self.samples[i] for i in idx], dtype)
        lengths = np.array([len(self.samples[i]) for i in idx])
        f0_in, _ = batch_pad([self.f0_in[i] for i in idx], dtype)
        target, _ = batch_pad([self.target[i] for i in idx], dtype)
        voiced, _ = batch_pad([self.voiced[i] for i in idx], bool)
        spk = np.stack([self.speaker[i] for i in idx]).astype(dtype)
        return dict(content=content, frame_mask=fmask, samples=samples, lengths=lengths,
                    f0_in=f0_in, target=target, voiced=voiced & fmask, speaker=spk)


def excitation_for(utt, k_max=200) -> np.ndarray:
    """Excitation from the interpolated contour, gated by the expanded voiced mask."""
    filled = interpolate_unvoiced(utt.contour)
    f0, gate = expand_to_samples(filled)
    return synthesize(f0, utt.contour.sample_rate, k_max, gate).samples.astype(np.float32)


def adaptor_data(utts, conditioner: Conditioner, stats: ContourStats, k_max=200) -> AdaptorData:
    return AdaptorData(
        utts=list(utts),
        content=[conditioner.regulated(u) for u in utts],
        speaker=[conditioner.speaker_embedding(u.speaker_id) for u in utts],
        samples=[excitation_for(u, k_max) for u in utts],
        f0_in=[utterance_target(u, stats) for u in utts],
        target=[clean_target(u, stats) for u in utts],
        voiced=[u.contour.voiced for u in utts],
    )


class ProbeModel(Module):
    """Adaptor (hierarchical or flat) followed by a linear frame-level pitch probe."""

    def __init__(self, kind: str, cfg: RunConfig, seed: int):
        super().__init__()
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xADA]))
        self.kind = kind
        if kind == "hierarchical":
            self.adaptor = HierarchicalAdaptor(cfg.adaptor_dim, cfg.speaker_dim,
                                               fusion_order=cfg.fusion_order,
                                               pos_dim=cfg.pos_dim, hop=cfg.hop, rng=rng)
        elif kind == "flat":
            self.adaptor = FlatAdaptor(cfg.adaptor_dim, rng=rng)
        else:
            raise ValueError(f"unknown adaptor kind {kind!r}")
        self.probe = Dense(cfg.adaptor_dim, 1, zero=True)

    def forward(self, b):
        if self.kind == "hierarchical":
            cs = self.adaptor.forward_excitation(b["content"], b["speaker"], b["frame_mask"],
                                                 b["samples"], b["lengths"])
        else:
            cs = self.adaptor.forward(b["content"], b["f0_in"], b["frame_mask"])
        return self.probe.forward(cs)[..., 0], cs

    def backward(self, dpred):
        dcs = self.probe.backward(dpred[..., None])
        if self.kind == "hierarchical":
            self.adaptor.backward_excitation(dcs)
        else:
            self.adaptor.backward(dcs)


@dataclass
class ProbeRun:
    model: ProbeModel
    metrics: list = field(default_factory=list)  # (step, train_loss, probe_mse, jitter)
    final_mse: float = float("nan")
    final_jitter: float = float("nan")
    predictions: list = field(default_factory=list)


def evaluate_probe(model: ProbeModel, data: AdaptorData, batch_size=8):
    """Pooled voiced probe MSE, mean per-utterance jitter, and the predictions."""
    se, n, jit, preds = 0.0, 0, [], []
    for idx in _chunks(len(data), batch_size):
        b = data.batch(idx)
        pred, _ = model.forward(b)
        v = b["voiced"]
        se += float(np.sum(((pred - b["target"]) ** 2)[v]))
        n += int(v.sum())
        for row, i in enumerate(idx):
            F = len(data.target[i])
            p = pred[row, :F].astype(np.float64)
            preds.append(p)
            jit.append(jitter_metric(p, data.voiced[i]))
    return se / n, float(np.mean(jit)), preds


def train_adaptor_probe(cfg: RunConfig, corpus: Corpus, kind: str, seed: int, steps=None,
                        train_data: AdaptorData | None = None,
                        eval_data: AdaptorData | None = None) -> ProbeRun:
    """Train adaptor + probe to recover the clean contour; evaluate on held-out speakers."""
    steps = cfg.adaptor_steps if steps is None else steps
    stats = corpus_stats(corpus, cfg.domain)
    if train_data is None or eval_data is None:
        cond = Conditioner(corpus, cfg.content_dim, cfg.speaker_dim, cfg.n_phones, seed)
        train_data = train_data or adaptor_data(corpus.split("train"), cond, stats, cfg.k_max)
        eval_data = eval_data or adaptor_data(corpus.split("test") or corpus.split("val"),
                                              cond, stats, cfg.k_max)
    model = ProbeModel(kind, cfg, seed)
    opt = AdamW(model.parameters(), cfg.adaptor_lr, (cfg.beta1, cfg.beta2), cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0B]))
    run = ProbeRun(model)
    mse, jit, _ = evaluate_probe(model, eval_data)
    run.metrics.append((0, float("nan"), mse, jit))
    window = []
    batches = _batches(len(train_data), cfg.adaptor_batch, rng)
    for step in range(1, steps + 1):
        b = train_data.batch(next(batches))
        # cosine decay to 10% keeps the final weights from landing on a noisy step
        opt.lr = cfg.adaptor_lr * (0.55 + 0.45 * np.cos(np.pi * (step - 1) / max(1, steps)))
        model.zero_grad()
        pred, _ = model.forward(b)
        loss, grad = diffusion.masked_mse(pred, b["target"], b["voiced"])
        _check_finite(loss, step, f"{kind} probe")
        model.backward(grad.astype(np.float32))
        opt.step(model.gradients())
        window.append(loss)
        if step % cfg.adaptor_eval_every == 0 or step == steps:
            mse, jit, _ = evaluate_probe(model, eval_data)
            run.metrics.append((step, float(np.mean(window)), mse, jit))
            log.info("%s probe step %d train %.4f heldout mse %.4f jitter %.4f",
                     kind, step, np.mean(window), mse, jit)
            window = []
    run.final_mse, run.final_jitter, run.predictions = evaluate_probe(model, eval_data)
    return run


# --------------------------------------------------------------- durations

def train_duration_predictor(cfg: RunConfig, corpus: Corpus, seed: int, steps=None):
    """Fit log-durations; returns ``(model, untrained_val_mse, trained_val_mse)``."""
    steps = cfg.duration_steps if steps is None else steps
    cond = Conditioner(corpus, cfg.content_dim, cfg.speaker_dim, cfg.n_phones, seed)
    model = DurationPredictor(cfg.content_dim, cfg.speaker_dim,
                              rng=np.random.default_rng(seed + 3))

    def tensors(utts):
        tok, mask = batch_pad([cond.tokens(u) for u in utts])
        logd, _ = batch_pad([np.log(u.durations.astype(np.float64)) for u in utts])
        spk = np.stack([cond.speaker_embedding(u.speaker_id) for u in utts]).astype(np.float32)
        return tok, spk, logd, mask

    train = corpus.split("train")
    val = tensors(corpus.split("val") or train[:32])

    def val_mse():
        tok, spk, logd, mask = val
        return diffusion.masked_mse(model.forward(tok, spk), logd, mask)[0]

    before = val_mse()
    opt = AdamW(model.parameters(), cfg.adaptor_lr, (cfg.beta1, cfg.beta2), cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD0]))
    batches = _batches(len(train), cfg.batch_size, rng)
    for _ in range(steps):
        tok, spk, logd, mask = tensors([train[i] for i in next(batches)])
        model.zero_grad()
        loss, grad = diffusion.masked_mse(model.forward(tok, spk), logd, mask)
        model.backward(grad.astype(np.float32))
        opt.step(model.gradients())
    return model, before, val_mse()
