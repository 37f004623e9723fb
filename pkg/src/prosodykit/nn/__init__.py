from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import check_gradients, numerical_grad, relative_error
from .layers import (Conv1d, Dense, DownsampleConv, GatedTanh, Module, SiLU, Tanh,
                     layer_norm, layer_norm_backward, masked_softmax, sinusoidal_embedding,
                     softmax_backward)
from .optim import AdamW, NonFiniteError, adamw_step, clip_grad_norm, global_norm

__all__ = [
    "AdamW", "Conv1d", "Dense", "DownsampleConv", "GatedTanh", "Module", "NonFiniteError",
    "SiLU", "Tanh", "adamw_step", "check_gradients", "clip_grad_norm", "global_norm",
    "layer_norm", "layer_norm_backward", "load_checkpoint", "masked_softmax",
    "numerical_grad", "relative_error", "save_checkpoint", "sinusoidal_embedding",
    "softmax_backward",
]
