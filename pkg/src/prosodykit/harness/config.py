"""Run configuration: flat ``key = value`` files, validated against :class:`RunConfig`."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0

    # corpus
    n_speakers: int = 32
    n_heldout_speakers: int = 4
    n_utterances: int = 512
    val_fraction: float = 0.1
    min_tokens: int = 8
    max_tokens: int = 14
    n_phones: int = 24
    sample_rate: int = 16000
    hop: int = 200
    f0_noise: float = 0.08
    unvoiced_fraction: float = 0.10

    # conditions
    content_dim: int = 64
    speaker_dim: int = 16

    # pitch predictor
    domain: str = "log_hz"
    T: int = 100
    schedule: str = "linear"
    beta_start: float = 0.0  # 0 -> reference range rescaled to T
    beta_end: float = 0.0
    hidden: int = 64
    n_blocks: int = 2
    step_dim: int = 32
    pitch_head: str = "diffusion"  # diffusion | regressor
    condition_grad: str = "stop"  # stop | clip
    input_clip_norm: float = 1.0
    pitch_steps: int = 5000
    batch_size: int = 16
    lr: float = 1e-4
    beta1: float = 0.8
    beta2: float = 0.99
    weight_decay: float = 0.01
    log_every: int = 100
    eval_every: int = 500

    # adaptor probe
    k_max: int = 200
    adaptor_dim: int = 64
    adaptor_steps: int = 1200
    adaptor_batch: int = 8
    adaptor_lr: float = 2e-3
    adaptor_eval_every: int = 200
    fusion_order: str = "coarse_to_fine"
    pos_dim: int = 32
    duration_steps: int = 400
    adaptor_ablation: bool = False  # also train the flat path in train-adaptor

    # sampling / ablation
    sample_seeds: int = 2
    sample_split: str = "val"  # held-out utterances of seen speakers
    write_wav: bool = False
    ablation_runs: int = 3
    ablation_pitch_steps: int = 1500
    figures: bool = True

    # paths; empty means "derive from --out"
    corpus_dir: str = ""
    checkpoint: str = ""

    def validate(self) -> "RunConfig":
        positive = ["n_speakers", "n_utterances", "min_tokens", "max_tokens", "n_phones",
                    "sample_rate", "hop", "content_dim", "speaker_dim", "T", "hidden",
                    "n_blocks", "step_dim", "batch_size", "log_every", "eval_every", "k_max",
                    "adaptor_dim", "adaptor_batch", "adaptor_eval_every", "sample_seeds",
                    "ablation_runs"]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("pitch_steps", "adaptor_steps", "duration_steps", "ablation_pitch_steps",
                     "n_heldout_speakers", "pos_dim"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_speakers - self.n_heldout_speakers < 1 or self.n_speakers < 2:
            raise ConfigError("need >= 2 speakers with at least one seen speaker")
        if self.n_utterances < 64:
            raise ConfigError("need >= 64 utterances")
        if self.min_tokens > self.max_tokens:
            raise ConfigError("min_tokens must not exceed max_tokens")
        if not 0 <= self.val_fraction < 1 or not 0 <= self.unvoiced_fraction < 0.5:
            raise ConfigError("val_fraction / unvoiced_fraction out of range")
        if self.f0_noise < 0:
            raise ConfigError("f0_noise must be non-negative")
        if self.domain not in ("log_hz", "linear_hz"):
            raise ConfigError(f"domain must be log_hz or linear_hz, got {self.domain!r}")
        if self.pitch_head not in ("diffusion", "regressor"):
            raise ConfigError("pitch_head must be 'diffusion' or 'regressor'")
        if self.condition_grad not in ("stop", "clip"):
            raise ConfigError("condition_grad must be 'stop' or 'clip'")
        if self.fusion_order not in ("coarse_to_fine", "fine_to_coarse"):
            raise ConfigError("fusion_order must be coarse_to_fine or fine_to_coarse")
        if self.sample_split not in ("train", "val", "test"):
            raise ConfigError("sample_split must be train, val or test")
        if self.step_dim % 2 or self.pos_dim % 2:
            raise ConfigError("step_dim and pos_dim must be even")
        if self.pos_dim > self.adaptor_dim:
            raise ConfigError("pos_dim must not exceed adaptor_dim")
        if self.adaptor_dim != self.content_dim:
            raise ConfigError("adaptor_dim must equal content_dim (content is the query stream)")
        if not (0 <= self.beta_start <= self.beta_end < 1):
            raise ConfigError("need 0 <= beta_start <= beta_end < 1")
        for name in ("lr", "adaptor_lr", "input_clip_norm"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        return self

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(name, typ, raw: str):
    raw = raw.strip().strip('"').strip("'")
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {typ.__name__}") from exc


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines (``#`` comments allowed); unknown keys are rejected."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {f.name: _TYPES[f.type] if isinstance(f.type, str) else f.type
             for f in fields(RunConfig)}
    values = dataclasses.asdict(base or RunConfig())
    for key, raw in cp["run"].items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, known[key], raw)
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
