"""Finite-difference checks for every trainable block at toy dimensions."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as tn
from .attm import attm_forward, init_attm
from .encoder import BlockParams, EncoderConfig, block_forward, init_encoder, positional_encoding
from .heads import (
    init_pooling_head,
    init_recurrent_head,
    pooling_head,
    recurrent_head,
    RecurrentHeadParams,
    PoolingHeadParams,
)
from .linm import LinMParams, linm_merge
from .seeding import stream
from .tensor import Tensor, grad_check

TOLERANCE = 1e-4
STEP = 1e-5

Objective = tuple[Callable[..., Tensor], list[Tensor]]


def _ce(logits: Tensor, target: int) -> Tensor:
    return -tn.log_softmax(logits, axis=-1)[target]


def encoder_objective(rng, T=7, H=8, L=6, num_heads=2, ffn_dim=16) -> Objective:
    """Random probe against the whole stack.

    Finite differences perturb one entry at a time, so blocks below the
    perturbed one see the same inputs as the unperturbed pass.  Their outputs
    are cached and reused when no tape is recording; the values are the ones
    a full recomputation would give.
    """
    cfg = EncoderConfig(num_layers=L, hidden_dim=H, num_heads=num_heads, ffn_dim=ffn_dim)
    blocks = init_encoder(cfg, rng)
    # perturb gains/biases/output maps away from their special init values
    for blk in blocks:
        for t in blk.tensors().values():
            t.data = t.data + rng.normal(0.0, 0.1, size=t.shape)
    x = rng.normal(size=(T, H))
    if cfg.positional:
        x = x + positional_encoding(T, H)
    probe = rng.normal(size=(T, H, L))
    names = list(blocks[0].tensors())
    n = len(names)
    flat = [t for blk in blocks for t in blk.tensors().values()]

    # block inputs and outputs on the unperturbed pass
    base_in, base_out = [], []
    h = Tensor(x)
    for blk in blocks:
        base_in.append(h)
        h = block_forward(h, blk, num_heads)
        base_out.append(h)

    def f(*params):
        start = 0
        if not tn.recording():
            start = next((k for k, (a, b) in enumerate(zip(params, flat)) if a is not b), len(flat)) // n
        outs = list(base_out[:start])
        if start < L:
            h = base_in[start]
            for l in range(start, L):
                h = block_forward(h, BlockParams(**dict(zip(names, params[l * n : (l + 1) * n]))), num_heads)
                outs.append(h)
        return tn.sum_over_axis(tn.stack(outs, axis=-1) * probe)

    return f, flat


def attm_objective(rng, T=7, H=8, L=6) -> Objective:
    params = init_attm(H, L, rng)
    x = rng.normal(size=(T, H, L))
    probe = rng.normal(size=(T, H))
    gate_probe = rng.normal(size=L)
    names = list(params.tensors())

    def f(*ts):
        p = type(params)(**dict(zip(names, ts)))
        merged, w = attm_forward(Tensor(x), p)
        return tn.sum_over_axis(merged * probe) + tn.sum_over_axis(w * gate_probe)

    return f, list(params.tensors().values())


def linm_objective(rng, T=7, H=8, L=6, r=5) -> Objective:
    """LinM feeding a recurrent head, cross-entropy on one label."""
    theta = Tensor(rng.normal(size=L), requires_grad=True)
    head = init_recurrent_head(H, r, rng)
    x = rng.normal(size=(T, H, L))
    head_names = list(head.tensors())

    def f(th, *hs):
        merged = linm_merge(Tensor(x), LinMParams(th))
        return _ce(recurrent_head(merged, RecurrentHeadParams(**dict(zip(head_names, hs)))), 1)

    return f, [theta, *head.tensors().values()]


def recurrent_objective(rng, T=7, H=8, r=5) -> Objective:
    head = init_recurrent_head(H, r, rng)
    x = rng.normal(size=(T, H))
    names = list(head.tensors())

    def f(*ts):
        return _ce(recurrent_head(Tensor(x), RecurrentHeadParams(**dict(zip(names, ts)))), 0)

    return f, list(head.tensors().values())


def pooling_objective(rng, T=7, H=8, p=6) -> Objective:
    head = init_pooling_head(H, p, rng)
    x = rng.normal(size=(T, H))
    names = list(head.tensors())

    def f(*ts):
        return _ce(pooling_head(Tensor(x), PoolingHeadParams(**dict(zip(names, ts)))), 1)

    return f, list(head.tensors().values())


BLOCKS: dict[str, Callable] = {
    "encoder": encoder_objective,
    "attm": attm_objective,
    "linm": linm_objective,
    "recurrent_head": recurrent_objective,
    "pooling_head": pooling_objective,
}


def check_block(name: str, seed: int = 0, h: float = STEP) -> float:
    f, params = BLOCKS[name](stream(seed, "gradcheck", name))
    return grad_check(f, params, h)


def check_all(seed: int = 0, h: float = STEP) -> dict[str, float]:
    return {name: check_block(name, seed, h) for name in BLOCKS}
