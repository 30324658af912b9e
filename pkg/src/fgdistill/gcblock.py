"""Global-context relation extractor: softmax pooling over all pixels plus a
bottleneck transform, added back to every pixel through a residual connection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import (
    Parameter,
    Tensor,
    add,
    conv1x1,
    layer_norm,
    mul,
    relu,
    reshape,
    softmax_t,
    tensor_sum,
)


@dataclass
class GcBlockParams:
    """Trainable weights of one global-context block over C feature channels."""

    w_k: Parameter  # (1, C) context-logit projection
    w_v1: Parameter  # (C_mid, C) bottleneck down
    w_v2: Parameter  # (C, C_mid) bottleneck up
    ln_gamma: Parameter  # (C_mid,)
    ln_beta: Parameter  # (C_mid,)
    reduction: int

    @property
    def channels(self) -> int:
        return self.w_k.shape[1]

    @property
    def mid_channels(self) -> int:
        return self.w_v1.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.w_k, self.w_v1, self.w_v2, self.ln_gamma, self.ln_beta]


def init_gcblock(
    channels: int, rng: np.random.Generator, reduction: int = 2, name: str = "gc"
) -> GcBlockParams:
    """Fresh block: w_v2 zeroed so the residual starts as the identity."""
    if channels < 1 or reduction < 1:
        raise ParameterError(f"bad GcBlock sizes C={channels} reduction={reduction}")
    mid = max(1, channels // reduction)
    uniform = lambda shape: rng.uniform(-0.1, 0.1, size=shape)
    return GcBlockParams(
        w_k=Parameter(uniform((1, channels)), f"{name}.w_k"),
        w_v1=Parameter(uniform((mid, channels)), f"{name}.w_v1"),
        w_v2=Parameter(np.zeros((channels, mid)), f"{name}.w_v2"),
        ln_gamma=Parameter(np.ones(mid), f"{name}.ln_gamma"),
        ln_beta=Parameter(np.zeros(mid), f"{name}.ln_beta"),
        reduction=reduction,
    )


def _as_chw(f) -> tuple[Tensor, bool]:
    f = f if isinstance(f, Tensor) else Tensor(f)
    if f.ndim == 4:
        if f.shape[0] != 1:
            raise DimensionError(f"GcBlock works per image; got batch {f.shape[0]}")
        return reshape(f, f.shape[1:]), True
    if f.ndim != 3:
        raise DimensionError(f"expected (C,H,W) or (1,C,H,W), got {f.shape}")
    return f, False


def context_pool(f, w_k: Parameter) -> Tensor:
    """Softmax-attention pooling of all pixels into one length-C context vector."""
    f, _ = _as_chw(f)
    c, h, w = f.shape
    logits = reshape(conv1x1(f, w_k), (h * w,))
    weights = softmax_t(logits, axis=0, temperature=1.0)
    return tensor_sum(mul(f, reshape(weights, (1, h, w))), axes=(1, 2))


def transform(ctx: Tensor, params: GcBlockParams) -> Tensor:
    """Bottleneck transform w_v2(relu(layer_norm(w_v1 @ ctx))); length C in, length C out."""
    c = params.channels
    if ctx.shape != (c,):
        raise DimensionError(f"context vector must be ({c},), got {ctx.shape}")
    x = reshape(ctx, (c, 1, 1))
    down = conv1x1(x, params.w_v1)
    normed = layer_norm(down, params.ln_gamma, params.ln_beta, axes=0)
    up = conv1x1(relu(normed), params.w_v2)
    return reshape(up, (c,))


def relation(f, params: GcBlockParams) -> Tensor:
    """R(F): input features plus the transformed pooled context at every pixel."""
    f, was_rank4 = _as_chw(f)
    c = f.shape[0]
    if c != params.channels:
        raise DimensionError(
            f"features have {c} channels, block expects {params.channels}"
        )
    delta = transform(context_pool(f, params.w_k), params)
    out = add(f, reshape(delta, (c, 1, 1)))
    return reshape(out, (1,) + out.shape) if was_rank4 else out
