"""Attentive merging of stacked layer embeddings.

Pipeline over a (..., T, H, L) stack:

1. squeeze   -- average over frames, project H -> 1, swish:   (..., L)
2. excite    -- L -> s -> L with swish then sigmoid:           (..., L) gates
3. reweight  -- scale each layer slice by its gate
4. merge     -- flatten each frame to H*L (layer-major), then three bias-free
                linear maps H*L -> i -> i -> H

Here s = L // 2 and i = H * L // 4, both clamped to at least 1.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as tn
from .encoder import EmbeddingStack
from .tensor import Tensor


def excitation_dim(num_layers: int) -> int:
    return max(1, num_layers // 2)


def bottleneck_dim(hidden_dim: int, num_layers: int) -> int:
    return max(1, hidden_dim * num_layers // 4)


@dataclass
class AttMParams:
    w_sq: Tensor  # H x 1
    w_ex1: Tensor  # L x s
    w_ex2: Tensor  # s x L
    w_l1: Tensor  # (H*L) x i
    w_l2: Tensor  # i x i
    w_l3: Tensor  # i x H

    @property
    def hidden_dim(self) -> int:
        return self.w_sq.shape[0]

    @property
    def num_layers(self) -> int:
        return self.w_ex1.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_tensors(cls, tensors: dict[str, Tensor]) -> "AttMParams":
        p = cls(**{f.name: tensors[f.name] for f in fields(cls)})
        p.validate()
        return p

    def validate(self) -> None:
        H, L = self.hidden_dim, self.num_layers
        s, i = excitation_dim(L), bottleneck_dim(H, L)
        expected = {
            "w_sq": (H, 1),
            "w_ex1": (L, s),
            "w_ex2": (s, L),
            "w_l1": (H * L, i),
            "w_l2": (i, i),
            "w_l3": (i, H),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"AttM {name} has shape {got}, expected {shape} for H={H}, L={L}")


def init_attm(hidden_dim: int, num_layers: int, rng: np.random.Generator) -> AttMParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per matrix."""
    H, L = hidden_dim, num_layers
    s, i = excitation_dim(L), bottleneck_dim(H, L)

    def w(rows, cols):
        bound = 1.0 / np.sqrt(rows)
        return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)

    return AttMParams(
        w_sq=w(H, 1),
        w_ex1=w(L, s),
        w_ex2=w(s, L),
        w_l1=w(H * L, i),
        w_l2=w(i, i),
        w_l3=w(i, H),
    )


def _stack_tensor(stack) -> Tensor:
    if isinstance(stack, EmbeddingStack):
        return stack.data
    return stack if isinstance(stack, Tensor) else Tensor(stack)


def squeeze(stack, w_sq: Tensor) -> Tensor:
    """x_sq[l] = swish(mean_t(X[t, :, l]) . w_sq)."""
    x = _stack_tensor(stack)
    if x.ndim < 3 or w_sq.shape != (x.shape[-2], 1):
        raise ValueError(f"squeeze: stack {x.shape} incompatible with w_sq {w_sq.shape}")
    pooled = tn.mean_over_axis(x, -3)  # (..., H, L)
    proj = tn.swapaxes(pooled, -1, -2) @ w_sq  # (..., L, 1)
    return tn.swish(tn.reshape(proj, proj.shape[:-1]))


def excite(x_sq: Tensor, w_ex1: Tensor, w_ex2: Tensor) -> Tensor:
    """Per-layer gates sigmoid(swish(x_sq W1) W2), each in (0, 1)."""
    L = x_sq.shape[-1]
    if w_ex1.shape[0] != L or w_ex2.shape != (w_ex1.shape[1], L):
        raise ValueError(
            f"excite: x_sq length {L} incompatible with {w_ex1.shape} / {w_ex2.shape}"
        )
    row = tn.reshape(x_sq, (*x_sq.shape[:-1], 1, L))
    gates = tn.sigmoid(tn.swish(row @ w_ex1) @ w_ex2)
    return tn.reshape(gates, x_sq.shape)


def reweight(stack, weights) -> Tensor:
    """Hadamard product of the stack with one gate per layer."""
    x = _stack_tensor(stack)
    w = weights if isinstance(weights, Tensor) else Tensor(weights)
    if w.shape[-1] != x.shape[-1]:
        raise ValueError(f"reweight: {w.shape[-1]} weights for {x.shape[-1]} layers")
    return x * tn.reshape(w, (*w.shape[:-1], 1, 1, w.shape[-1]))


def flatten_frames(x_att: Tensor) -> Tensor:
    """(..., T, H, L) -> (..., T, H*L) with element (h, l) at index h + H*l."""
    *lead, T, H, L = x_att.shape
    return tn.reshape(tn.swapaxes(x_att, -1, -2), (*lead, T, L * H))


def merge_projection(x_att: Tensor, w_l1: Tensor, w_l2: Tensor, w_l3: Tensor) -> Tensor:
    x_att = _stack_tensor(x_att)
    H, L = x_att.shape[-2], x_att.shape[-1]
    if w_l1.shape[0] != H * L or w_l3.shape[1] != H:
        raise ValueError(
            f"merge_projection: stack {x_att.shape} incompatible with "
            f"{w_l1.shape}, {w_l2.shape}, {w_l3.shape}"
        )
    return flatten_frames(x_att) @ w_l1 @ w_l2 @ w_l3


def attm_forward(stack, params: AttMParams) -> tuple[Tensor, Tensor]:
    """Merged (..., T, H) embedding and the (..., L) attention weights."""
    x = _stack_tensor(stack)
    if x.shape[-2:] != (params.hidden_dim, params.num_layers):
        raise ValueError(
            f"stack {x.shape} does not match AttM dims H={params.hidden_dim}, L={params.num_layers}"
        )
    weights = excite(squeeze(x, params.w_sq), params.w_ex1, params.w_ex2)
    merged = merge_projection(reweight(x, weights), params.w_l1, params.w_l2, params.w_l3)
    return merged, weights
