"""Binary classifier heads over a merged (..., T, H) embedding sequence.

``recurrent_head`` is a single-layer LSTM.  ``pooling_head`` is a reduced
attentive-statistics-pooling classifier standing in for ECAPA-TDNN: only the
frame projection, attention pooling and the mean/std statistics are kept.

Both return logits ordered (bonafide, spoof).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import tensor as tn
from .tensor import Tensor

STD_EPS = 1e-8


@dataclass
class RecurrentHeadParams:
    w_x: Tensor  # H x 4r, gate order (input, forget, cell, output)
    w_h: Tensor  # r x 4r
    b: Tensor  # 4r
    w_out: Tensor  # r x 2
    b_out: Tensor  # 2

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_tensors(cls, tensors: dict[str, Tensor]) -> "RecurrentHeadParams":
        return cls(**{f.name: tensors[f.name] for f in fields(cls)})


@dataclass
class PoolingHeadParams:
    w_frame: Tensor  # H x p
    b_frame: Tensor  # p
    w_att: Tensor  # p x 1
    b_att: Tensor  # 1
    w_out: Tensor  # 2p x 2
    b_out: Tensor  # 2

    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_tensors(cls, tensors: dict[str, Tensor]) -> "PoolingHeadParams":
        return cls(**{f.name: tensors[f.name] for f in fields(cls)})


def _uniform(rng, rows, cols):
    bound = 1.0 / np.sqrt(rows)
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


def _zeros(*shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def init_recurrent_head(input_dim: int, hidden_size: int, rng: np.random.Generator) -> RecurrentHeadParams:
    r = hidden_size
    b = np.zeros(4 * r)
    b[r : 2 * r] = 1.0  # forget-gate bias
    return RecurrentHeadParams(
        w_x=_uniform(rng, input_dim, 4 * r),
        w_h=_uniform(rng, r, 4 * r),
        b=Tensor(b, requires_grad=True),
        w_out=_uniform(rng, r, 2),
        b_out=_zeros(2),
    )


def init_pooling_head(input_dim: int, pool_dim: int, rng: np.random.Generator) -> PoolingHeadParams:
    return PoolingHeadParams(
        w_frame=_uniform(rng, input_dim, pool_dim),
        b_frame=_zeros(pool_dim),
        w_att=_uniform(rng, pool_dim, 1),
        b_att=_zeros(1),
        w_out=_uniform(rng, 2 * pool_dim, 2),
        b_out=_zeros(2),
    )


def _check_sequence(x: Tensor, width: int, who: str) -> None:
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ValueError(f"{who}: empty sequence, got shape {x.shape}")
    if x.shape[-1] != width:
        raise ValueError(f"{who}: expected feature width {width}, got {x.shape[-1]}")


def recurrent_head(x: Tensor, params: RecurrentHeadParams, readout: str = "final") -> Tensor:
    """LSTM over frames; ``readout`` is 'final' (last state) or 'mean'."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    _check_sequence(x, params.w_x.shape[0], "recurrent_head")
    if readout not in ("final", "mean"):
        raise ValueError(f"unknown readout {readout!r}")
    r = params.hidden_size
    T = x.shape[-2]
    lead = x.shape[:-2]
    xw = x @ params.w_x + params.b
    h = Tensor(np.zeros((*lead, r)))
    c = Tensor(np.zeros((*lead, r)))
    states = []
    for t in range(T):
        z = xw[..., t, :] + h @ params.w_h if t else xw[..., t, :]
        i = tn.sigmoid(z[..., 0:r])
        f = tn.sigmoid(z[..., r : 2 * r])
        g = tn.tanh(z[..., 2 * r : 3 * r])
        o = tn.sigmoid(z[..., 3 * r : 4 * r])
        c = f * c + i * g
        h = o * tn.tanh(c)
        states.append(h)
    if readout == "mean":
        h = tn.mean_over_axis(tn.stack(states, axis=-2), -2)
    return h @ params.w_out + params.b_out


def pooling_statistics(x: Tensor, params: PoolingHeadParams) -> tuple[Tensor, Tensor]:
    """Attention-weighted mean and std of the projected frames, each (..., p).

    The std is shifted so that zero variance maps to exactly zero while the
    square root stays differentiable.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    _check_sequence(x, params.w_frame.shape[0], "pooling_head")
    h = tn.swish(x @ params.w_frame + params.b_frame)  # (..., T, p)
    att = tn.softmax(h @ params.w_att + params.b_att, axis=-2)  # (..., T, 1)
    mean = tn.sum_over_axis(att * h, -2)
    centred = h - tn.reshape(mean, (*mean.shape[:-1], 1, mean.shape[-1]))
    var = tn.sum_over_axis(att * centred * centred, -2)
    std = tn.sqrt(var + STD_EPS) - np.sqrt(STD_EPS)
    return mean, std


def pooling_head(x: Tensor, params: PoolingHeadParams) -> Tensor:
    mean, std = pooling_statistics(x, params)
    return tn.concat([mean, std], axis=-1) @ params.w_out + params.b_out


def detection_score(logits) -> float | np.ndarray:
    """logit(bonafide) - logit(spoof); higher means more bona fide."""
    z = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=float)
    score = z[..., 0] - z[..., 1]
    return float(score) if np.ndim(score) == 0 else score
