"""The reusable self-attention block that aggregates a token group to one vector.

One invocation maps N input vectors (which already carry their position
embeddings) to a single d_model feature:

1. project each token to per-head key/query/value vectors,
2. attention weights: softmax over j of (Q_i . K_j) / sqrt(d_head),
3. per-head weighted sum of values,
4. concatenate heads,
5. token update: input + Drop(Norm(ReLU(W_a . concat + b_a))),
6. mean over the N updated tokens.

Position embeddings are always added by the caller, never here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, UsageError
from .rng import Rng


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int = 128
    n_heads: int = 8
    d_head: int = 32
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_model < 1 or self.n_heads < 1 or self.d_head < 1:
            raise ConfigError(
                f"attention dims must be >= 1, got d_model={self.d_model}, "
                f"n_heads={self.n_heads}, d_head={self.d_head}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def heads_width(self) -> int:
        return self.n_heads * self.d_head

    def param_count(self) -> int:
        """Learnable scalars in one block: 3 QKV projections, output projection, bias."""
        return 3 * (self.heads_width * self.d_model) + self.d_model * self.heads_width + self.d_model


@dataclass
class AttentionParams:
    """One block's learnable matrices.

    wk/wq/wv: (n_heads*d_head, d_model); wa: (d_model, n_heads*d_head); ba: (d_model,).
    """

    wk: Tensor
    wq: Tensor
    wv: Tensor
    wa: Tensor
    ba: Tensor

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        return [
            (f"{prefix}.wk", self.wk),
            (f"{prefix}.wq", self.wq),
            (f"{prefix}.wv", self.wv),
            (f"{prefix}.wa", self.wa),
            (f"{prefix}.ba", self.ba),
        ]

    def validate(self, config: AttentionConfig) -> None:
        hw, d = config.heads_width, config.d_model
        for name, t, want in (
            ("wk", self.wk, (hw, d)),
            ("wq", self.wq, (hw, d)),
            ("wv", self.wv, (hw, d)),
            ("wa", self.wa, (d, hw)),
            ("ba", self.ba, (d,)),
        ):
            if t.shape != want:
                raise ShapeError(f"attention param {name} has shape {t.shape}, expected {want}")


def init_attention_params(config: AttentionConfig, rng: Rng, dtype=np.float32) -> AttentionParams:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; bias starts at zero."""
    hw, d = config.heads_width, config.d_model

    def draw(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return ad.parameter(rng.uniform(shape, -bound, bound), dtype=dtype)

    return AttentionParams(
        wk=draw((hw, d), d),
        wq=draw((hw, d), d),
        wv=draw((hw, d), d),
        wa=draw((d, hw), hw),
        ba=ad.parameter(np.zeros(d), dtype=dtype),
    )


def positional_embedding(position: int, d_model: int) -> np.ndarray:
    """Sinusoid vector for one index: channel 2k is sin(pos / 10000^(2k/d)), 2k+1 the cosine."""
    if position < 0:
        raise UsageError(f"position must be >= 0, got {position}")
    out = np.empty(d_model, dtype=np.float64)
    for c in range(d_model):
        k = c // 2
        angle = position / (10000.0 ** (2.0 * k / d_model))
        out[c] = math.sin(angle) if c % 2 == 0 else math.cos(angle)
    return out


class PositionEmbeddingTable:
    """Precomputed sinusoid rows, one per index 0..max_positions-1."""

    def __init__(self, max_positions: int, d_model: int):
        if max_positions < 1:
            raise ConfigError(f"max_positions must be >= 1, got {max_positions}")
        self.max_positions = max_positions
        self.d_model = d_model
        self.rows = np.stack([positional_embedding(i, d_model) for i in range(max_positions)])

    def row(self, position: int) -> np.ndarray:
        if not 0 <= position < self.max_positions:
            raise UsageError(f"position {position} outside table of {self.max_positions}")
        return self.rows[position]

    def block(self, positions, dtype=np.float32) -> np.ndarray:
        """Rows for a list of indices, cast for use inside a forward pass."""
        return np.stack([self.row(p) for p in positions]).astype(dtype)


def _as_inputs_tensor(inputs, d_model: int) -> Tensor:
    x = inputs if isinstance(inputs, Tensor) else ad.constant(np.asarray(inputs))
    if x.ndim != 2:
        raise ShapeError(f"attention inputs must be (N, d_model), got {x.shape}")
    if x.shape[0] == 0:
        raise UsageError("attention needs at least one input token")
    if x.shape[1] != d_model:
        raise ShapeError(f"input width {x.shape[1]} does not match d_model {d_model}")
    return x


def attend_batch(
    x: Tensor,
    params: AttentionParams,
    config: AttentionConfig,
    training: bool = False,
    rng: Rng | None = None,
    weights_out: list | None = None,
) -> Tensor:
    """Run the block on a batch of token groups: (B, N, d_model) -> (B, d_model).

    When `weights_out` is a list, the per-head attention weights are appended
    to it as a (B, n_heads, N, N) array (detached from the tape).
    """
    if x.ndim != 3:
        raise ShapeError(f"attend_batch needs (B, N, d_model), got {x.shape}")
    b, n, d = x.shape
    if n == 0:
        raise UsageError("attention needs at least one input token")
    if d != config.d_model:
        raise ShapeError(f"input width {d} does not match d_model {config.d_model}")
    params.validate(config)
    h, dh, hw = config.n_heads, config.d_head, config.heads_width

    def split_heads(t: Tensor) -> Tensor:
        # (B, N, H*dh) -> (B*H, N, dh)
        t = ad.reshape(t, (b, n, h, dh))
        t = ad.transpose(t, (0, 2, 1, 3))
        return ad.reshape(t, (b * h, n, dh))

    k = split_heads(ad.linear(x, params.wk))
    q = split_heads(ad.linear(x, params.wq))
    v = split_heads(ad.linear(x, params.wv))

    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(dh))
    lam = ad.softmax(scores, axis=-1)
    if weights_out is not None:
        weights_out.append(lam.data.reshape(b, h, n, n).copy())

    ctx = ad.matmul(lam, v)                                   # (B*H, N, dh)
    ctx = ad.reshape(ctx, (b, h, n, dh))
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, n, hw))

    branch = ad.linear(ctx, params.wa, params.ba)             # back to d_model
    branch = ad.relu(branch)
    branch = ad.layer_norm(branch, axis=-1)
    branch = ad.dropout(branch, config.dropout_rate, training, rng)
    updated = ad.add(x, branch)
    return ad.mean(updated, axis=1)


def attend(
    inputs,
    params: AttentionParams,
    config: AttentionConfig,
    training: bool = False,
    rng: Rng | None = None,
) -> Tensor:
    """Aggregate N tokens (N, d_model) to a single d_model vector."""
    x = _as_inputs_tensor(inputs, config.d_model)
    n, d = x.shape
    out = attend_batch(ad.reshape(x, (1, n, d)), params, config, training, rng)
    return ad.reshape(out, (d,))


def attention_weights(inputs, params: AttentionParams, config: AttentionConfig):
    """Eval-mode attention matrices: (per-head (H, N, N), head-averaged (N, N))."""
    x = _as_inputs_tensor(inputs, config.d_model)
    n, d = x.shape
    captured: list = []
    attend_batch(ad.reshape(x, (1, n, d)), params, config, training=False, weights_out=captured)
    per_head = captured[0][0]
    return per_head, per_head.mean(axis=0)
