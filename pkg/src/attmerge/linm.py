"""Linear merging: one positive scalar per layer, weighted sum over layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .encoder import EmbeddingStack
from .tensor import Tensor


@dataclass
class LinMParams:
    """Unconstrained ``theta``; effective weights are softplus(theta) > 0."""

    theta: Tensor

    @property
    def num_layers(self) -> int:
        return self.theta.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"theta": self.theta}

    @classmethod
    def from_tensors(cls, tensors: dict[str, Tensor]) -> "LinMParams":
        theta = tensors["theta"]
        if theta.ndim != 1:
            raise ValueError(f"LinM theta must be a vector, got {theta.shape}")
        return cls(theta)


def init_linm(num_layers: int) -> LinMParams:
    # theta = 0 gives equal weights, so the untrained export is uniform
    return LinMParams(Tensor(np.zeros(num_layers), requires_grad=True))


def layer_weights(params: LinMParams) -> Tensor:
    return tn.softplus(params.theta)


def linm_merge(stack, params: LinMParams) -> Tensor:
    """X_lin[..., t, h] = sum_l w_l * X[..., t, h, l]."""
    x = stack.data if isinstance(stack, EmbeddingStack) else stack
    L = params.num_layers
    if x.shape[-1] != L:
        raise ValueError(f"linm_merge: {L} weights for {x.shape[-1]} layers")
    w = tn.reshape(layer_weights(params), (L, 1))
    out = x @ w
    return tn.reshape(out, out.shape[:-1])


def normalized_weights(params: LinMParams) -> np.ndarray:
    """Effective weights rescaled to sum to one."""
    w = layer_weights(params).data
    return w / w.sum()
