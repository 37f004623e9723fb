"""DDPM core: variance schedules, forward corruption, epsilon loss, ancestral sampling.

Everything here is independent of the network. A denoiser is any callable
``predict(x_t, t) -> eps_hat`` where ``t`` holds one integer step per batch
row; conditioning is closed over by the caller.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

# reference schedule: 1e-4 .. 0.02 over 1000 steps
REFERENCE_T = 1000
REFERENCE_BETA_START = 1e-4
REFERENCE_BETA_END = 0.02


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables indexed by step ``t`` in ``1..T``; index 0 holds the ``t = 0`` convention.

    ``alpha_bars[0] == 1`` and ``posterior_vars[0]`` is unused (0).
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    posterior_vars: np.ndarray

    @property
    def T(self) -> int:
        return self.betas.shape[0] - 1

    def check_t(self, t, allow_zero=True):
        t = np.asarray(t)
        lo = 0 if allow_zero else 1
        if np.any(t < lo) or np.any(t > self.T):
            raise ScheduleError(f"step index out of range [{lo}, {self.T}]: {t}")
        return t.astype(np.int64)


def schedule_from_betas(betas) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise ScheduleError("need at least one beta")
    if np.any(betas <= 0) or np.any(betas >= 1):
        raise ScheduleError("betas must lie in (0, 1)")
    if np.any(np.diff(betas) < 0):
        raise ScheduleError("betas must be non-decreasing")
    b = np.concatenate([[0.0], betas])
    a = 1.0 - b
    ab = np.cumprod(a)
    post = np.zeros_like(b)
    post[1:] = (1.0 - ab[:-1]) / (1.0 - ab[1:]) * b[1:]
    for arr in (b, a, ab, post):
        arr.setflags(write=False)
    return NoiseSchedule(b, a, ab, post)


def make_schedule(kind: str = "linear", T: int = 100, beta_start: float | None = None,
                  beta_end: float | None = None) -> NoiseSchedule:
    """Linear beta schedule.

    Without explicit bounds, the reference 1e-4..0.02 range (defined for
    1000 steps) is rescaled by ``1000 / T`` so shorter chains still end near
    pure noise.
    """
    if kind != "linear":
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    if T < 1:
        raise ScheduleError("T must be >= 1")
    scale = REFERENCE_T / T
    if beta_start is None:
        beta_start = REFERENCE_BETA_START * scale
    if beta_end is None:
        beta_end = REFERENCE_BETA_END * scale
    if not (0 < beta_start <= beta_end < 1):
        raise ScheduleError("need 0 < beta_start <= beta_end < 1")
    return schedule_from_betas(np.linspace(beta_start, beta_end, T))


def _per_row(coef: np.ndarray, t, x: np.ndarray) -> np.ndarray:
    """Gather ``coef[t]`` and shape it to broadcast against ``x`` row-wise."""
    c = coef[t]
    if np.ndim(c) == 0:
        return c
    return c.reshape(c.shape + (1,) * (x.ndim - c.ndim))


def forward_step(x_prev, t, schedule: NoiseSchedule, noise):
    """One corruption step ``q(x_t | x_{t-1})``."""
    t = schedule.check_t(t, allow_zero=False)
    x_prev = np.asarray(x_prev)
    b = _per_row(schedule.betas, t, x_prev)
    return (np.sqrt(1.0 - b) * x_prev + np.sqrt(b) * noise).astype(
        np.result_type(x_prev, np.float32), copy=False)


def forward_marginal(x0, t, schedule: NoiseSchedule, noise):
    """Closed-form ``q(x_t | x_0)``; ``t = 0`` returns ``x0``."""
    t = schedule.check_t(t)
    x0 = np.asarray(x0)
    ab = _per_row(schedule.alpha_bars, t, x0)
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise).astype(
        np.result_type(x0, np.float32), copy=False)


def predict_x0(x_t, t, eps, schedule: NoiseSchedule):
    """Invert the closed form given a noise estimate."""
    t = schedule.check_t(t)
    ab = _per_row(schedule.alpha_bars, t, np.asarray(x_t))
    return (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)


def eps_for_target(x_t, t, x0, schedule: NoiseSchedule):
    """The noise that makes ``x_t`` consistent with ``x0`` at step ``t``."""
    t = schedule.check_t(t, allow_zero=False)
    ab = _per_row(schedule.alpha_bars, t, np.asarray(x_t))
    return (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray  # d loss / d eps_hat
    t: np.ndarray
    noise: np.ndarray
    x_t: np.ndarray
    eps_hat: np.ndarray


def masked_mse(pred, target, mask=None):
    """Masked mean squared error and its gradient w.r.t. ``pred``."""
    diff = pred - target
    if mask is None:
        mask = np.ones(diff.shape, dtype=bool)
    m = np.asarray(mask, dtype=diff.dtype)
    count = float(m.sum())
    if count == 0:
        raise ValueError("mask selects no positions")
    loss = float((diff * diff * m).sum() / count)
    grad = (2.0 / count) * diff * m
    return loss, grad


def diffusion_loss(x0, predict, schedule: NoiseSchedule, rng: np.random.Generator,
                   mask=None, t=None, noise=None) -> LossResult:
    """Simplified epsilon-prediction objective averaged over unmasked positions.

    ``x0`` is ``(batch, time)``. Steps are drawn uniformly from ``1..T`` per
    batch row unless given; noise is drawn from ``rng`` unless given.
    """
    x0 = np.asarray(x0)
    if x0.ndim < 1 or x0.shape[0] == 0:
        raise ValueError("empty batch")
    if t is None:
        t = rng.integers(1, schedule.T + 1, size=x0.shape[0])
    t = schedule.check_t(t, allow_zero=False)
    if noise is None:
        noise = rng.standard_normal(x0.shape).astype(x0.dtype, copy=False)
    x_t = forward_marginal(x0, t, schedule, noise)
    if mask is not None:
        x_t = x_t * np.asarray(mask, dtype=x_t.dtype)
    eps_hat = predict(x_t, t)
    loss, grad = masked_mse(eps_hat, noise, mask)
    return LossResult(loss, grad, t, noise, x_t, eps_hat)


def reverse_mean(x_t, t, eps_hat, schedule: NoiseSchedule):
    t = schedule.check_t(t, allow_zero=False)
    a = _per_row(schedule.alphas, t, np.asarray(x_t))
    ab = _per_row(schedule.alpha_bars, t, np.asarray(x_t))
    return (x_t - (1.0 - a) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(a)


def reverse_step(x_t, t, predict, schedule: NoiseSchedule, noise):
    """One ancestral step ``x_t -> x_{t-1}``; noise is ignored at ``t = 1``."""
    t = schedule.check_t(t, allow_zero=False)
    t_rows = np.broadcast_to(t, (np.asarray(x_t).shape[0],)) if np.ndim(t) == 0 else t
    eps_hat = predict(x_t, t_rows)
    mean = reverse_mean(x_t, t_rows, eps_hat, schedule)
    sigma = np.sqrt(_per_row(schedule.posterior_vars, t_rows, np.asarray(x_t)))
    return (mean + sigma * noise).astype(np.asarray(x_t).dtype, copy=False)


def sample(predict, shape, schedule: NoiseSchedule, seed=0, mask=None, dtype=np.float64,
           trajectory: list | None = None):
    """Ancestral sampling from ``x_T ~ N(0, I)`` down to ``x_0``.

    Deterministic given ``seed``. With a mask, padded positions are pinned
    to zero at every step so they cannot leak into neighbours.
    """
    shape = tuple(shape)
    if any(s < 1 for s in shape):
        raise ValueError("every sample dimension must be >= 1")
    rng = np.random.default_rng(seed)
    m = None if mask is None else np.asarray(mask, dtype=dtype)
    x = rng.standard_normal(shape).astype(dtype)
    if m is not None:
        x = x * m
    for step in range(schedule.T, 0, -1):
        z = rng.standard_normal(shape).astype(dtype) if step > 1 else np.zeros(shape, dtype)
        t = np.full(shape[0], step, dtype=np.int64)
        x = reverse_step(x, t, predict, schedule, z)
        if m is not None:
            x = x * m
        if trajectory is not None:
            trajectory.append(x.copy())
    return x


def dump_schedule(schedule: NoiseSchedule, path) -> None:
    lines = ["t,beta,alpha_bar,posterior_var"]
    for t in range(1, schedule.T + 1):
        lines.append(f"{t},{float(schedule.betas[t])!r},{float(schedule.alpha_bars[t])!r},"
                     f"{float(schedule.posterior_vars[t])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_schedule(path) -> NoiseSchedule:
    rows = Path(path).read_text().splitlines()[1:]
    betas = [float(r.split(",")[1]) for r in rows if r]
    return schedule_from_betas(betas)
