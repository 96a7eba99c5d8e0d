"""Toy pre-norm transformer encoder producing per-layer hidden embeddings.

Stands in for a pre-trained SSL encoder at desk scale.  Each block is

    h = x + MHA(LN(x))
    y = h + FFN(LN(h))

with sinusoidal positional encodings added once to the input.  The stack
returned by :func:`encode` holds the output of every block, layer-last
(T x H x L), so that ``stack[..., l]`` is the output of block ``l + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as tn
from .tensor import Tensor

LN_EPS = 1e-5


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 6
    hidden_dim: int = 16
    num_heads: int = 2
    ffn_dim: int = 32
    seed: int = 0
    positional: bool = True

    def __post_init__(self):
        for name in ("num_layers", "hidden_dim", "num_heads", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden_dim % self.num_heads:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} is not divisible by num_heads {self.num_heads}"
            )


@dataclass
class BlockParams:
    ln1_gain: Tensor
    ln1_bias: Tensor
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class EmbeddingStack:
    """All layer embeddings of one utterance, shape T x H x L."""

    data: Tensor
    utterance_id: str = ""

    def __post_init__(self):
        if not isinstance(self.data, Tensor):
            self.data = Tensor(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"stack must be a non-empty T x H x L tensor, got {self.data.shape}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.data.shape[1]

    @property
    def num_layers(self) -> int:
        return self.data.shape[2]

    def layer(self, l: int) -> np.ndarray:
        """1-based layer slice as a T x H array."""
        return self.data.data[:, :, l - 1]


def init_encoder(
    config: EncoderConfig,
    rng: np.random.Generator | None = None,
    zero_output_proj: bool = False,
) -> list[BlockParams]:
    """Random blocks; weights ~ U(-1/sqrt(H), 1/sqrt(H)), biases 0, LN gains 1.

    ``zero_output_proj`` zeroes the attention output and second FFN matrices,
    which makes every block an identity map until it is trained.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    H, F = config.hidden_dim, config.ffn_dim
    bound = 1.0 / np.sqrt(H)

    def w(shape, zero=False):
        if zero:
            return Tensor(np.zeros(shape), requires_grad=True)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    def b(n):
        return Tensor(np.zeros(n), requires_grad=True)

    blocks = []
    for _ in range(config.num_layers):
        blocks.append(
            BlockParams(
                ln1_gain=Tensor(np.ones(H), requires_grad=True),
                ln1_bias=b(H),
                w_q=w((H, H)),
                b_q=b(H),
                w_k=w((H, H)),
                b_k=b(H),
                w_v=w((H, H)),
                b_v=b(H),
                w_o=w((H, H), zero_output_proj),
                b_o=b(H),
                ln2_gain=Tensor(np.ones(H), requires_grad=True),
                ln2_bias=b(H),
                w_ff1=w((H, F)),
                b_ff1=b(F),
                w_ff2=w((F, H), zero_output_proj),
                b_ff2=b(H),
            )
        )
    return blocks


def encoder_tensors(blocks: list[BlockParams]) -> dict[str, Tensor]:
    out = {}
    for i, blk in enumerate(blocks):
        for name, t in blk.tensors().items():
            out[f"{i}.{name}"] = t
    return out


def set_frozen(params, frozen: bool) -> None:
    """Flip ``requires_grad`` on every tensor of a block list / dict / dataclass."""
    if isinstance(params, Tensor):
        params.requires_grad = not frozen
        return
    if isinstance(params, dict):
        items = params.values()
    elif isinstance(params, (list, tuple)):
        items = params
    else:
        items = params.tensors().values()
    for p in items:
        set_frozen(p, frozen)


def positional_encoding(T: int, H: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    i = np.arange(H)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / H)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    mu = tn.sum_over_axis(x, -1, keepdims=True) / x.shape[-1]
    d = x - mu
    var = tn.sum_over_axis(d * d, -1, keepdims=True) / x.shape[-1]
    return d / tn.sqrt(var + LN_EPS) * gain + bias


def gelu(x: Tensor) -> Tensor:
    c = np.sqrt(2.0 / np.pi)
    return 0.5 * x * (1.0 + tn.tanh(c * (x + 0.044715 * x * x * x)))


def self_attention(x: Tensor, p: BlockParams, num_heads: int) -> Tensor:
    *lead, T, H = x.shape
    dh = H // num_heads

    def heads(t: Tensor) -> Tensor:
        # (..., T, H) -> (..., heads, T, dh)
        return tn.swapaxes(tn.reshape(t, (*lead, T, num_heads, dh)), -2, -3)

    q = heads(x @ p.w_q + p.b_q)
    k = heads(x @ p.w_k + p.b_k)
    v = heads(x @ p.w_v + p.b_v)
    scores = (q @ tn.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
    ctx = tn.softmax(scores, axis=-1) @ v
    ctx = tn.reshape(tn.swapaxes(ctx, -2, -3), (*lead, T, H))
    return ctx @ p.w_o + p.b_o


def block_forward(x: Tensor, p: BlockParams, num_heads: int) -> Tensor:
    h = x + self_attention(layer_norm(x, p.ln1_gain, p.ln1_bias), p, num_heads)
    f = gelu(layer_norm(h, p.ln2_gain, p.ln2_bias) @ p.w_ff1 + p.b_ff1) @ p.w_ff2 + p.b_ff2
    return h + f


def encode(
    inputs,
    config: EncoderConfig,
    params: list[BlockParams],
    utterance_id: str = "",
) -> EmbeddingStack:
    """Run the full stack on a T x H input sequence."""
    x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
    if x.ndim != 2 or x.shape[1] != config.hidden_dim:
        raise ValueError(
            f"encoder input must be T x {config.hidden_dim}, got {x.shape}"
        )
    if x.shape[0] < 1:
        raise ValueError("encoder input has no frames")
    if len(params) < config.num_layers:
        raise ValueError(f"need {config.num_layers} blocks, got {len(params)}")
    if config.positional:
        x = x + positional_encoding(x.shape[0], config.hidden_dim)
    outs = []
    for l in range(config.num_layers):
        x = block_forward(x, params[l], config.num_heads)
        outs.append(x)
    return EmbeddingStack(tn.stack(outs, axis=-1), utterance_id)


def refine_layers(stack: Tensor, params: list[BlockParams], num_heads: int) -> Tensor:
    """Apply block ``l`` to stored layer slice ``l`` (fine-tuning adapter).

    ``stack`` is (..., T, H, K); only the first K blocks are used.  With zero
    output projections this is the identity.
    """
    K = stack.shape[-1]
    if K > len(params):
        raise ValueError(f"stack has {K} layers but only {len(params)} blocks exist")
    outs = [block_forward(stack[..., l], params[l], num_heads) for l in range(K)]
    return tn.stack(outs, axis=-1)


def truncate(stack: EmbeddingStack, k: int) -> EmbeddingStack:
    """Keep the first ``k`` layer slices."""
    L = stack.num_layers
    if not 1 <= k <= L:
        raise ValueError(f"layer cap K={k} outside [1, {L}]")
    if k == L:
        return stack
    return EmbeddingStack(tn.getitem(stack.data, (Ellipsis, slice(0, k))), stack.utterance_id)
