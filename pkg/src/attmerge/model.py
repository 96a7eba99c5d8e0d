"""Full countermeasure: encoder adapter -> layer merge -> classifier head.

Inputs are stored embedding stacks (the frozen upstream features).  The toy
encoder is applied as a per-layer refinement (block ``l`` on slice ``l``),
initialised with zero output projections so that it starts as the identity
and only changes the stack once it is unfrozen and trained.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as tn
from .attm import AttMParams, attm_forward, init_attm
from .encoder import EncoderConfig, encoder_tensors, init_encoder, refine_layers, set_frozen
from .encoder import BlockParams
from .heads import (
    detection_score,
    PoolingHeadParams,
    RecurrentHeadParams,
    init_pooling_head,
    init_recurrent_head,
    pooling_head,
    recurrent_head,
)
from .linm import LinMParams, init_linm, linm_merge
from .seeding import stream
from .tensor import Tensor

MERGE_MODES = ("attm", "linm", "none")
HEAD_KINDS = ("recurrent", "pooling")


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 6
    hidden_dim: int = 16
    num_heads: int = 2
    ffn_dim: int = 32
    layer_cap: int = 6
    merge: str = "attm"
    head: str = "recurrent"
    recurrent_hidden: int = 16
    pool_dim: int = 16
    readout: str = "final"
    seed: int = 0

    def __post_init__(self):
        if self.merge not in MERGE_MODES:
            raise ValueError(f"merge must be one of {MERGE_MODES}, got {self.merge!r}")
        if self.head not in HEAD_KINDS:
            raise ValueError(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if not 1 <= self.layer_cap <= self.num_layers:
            raise ValueError(f"layer cap K={self.layer_cap} outside [1, {self.num_layers}]")
        self.encoder_config()  # validates dims

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            num_layers=self.num_layers,
            hidden_dim=self.hidden_dim,
            num_heads=self.num_heads,
            ffn_dim=self.ffn_dim,
            seed=self.seed,
            positional=False,
        )


class Model:
    def __init__(self, config: ModelConfig, encoder: list[BlockParams], merge, head):
        self.config = config
        self.encoder = encoder
        self.merge = merge
        self.head = head

    @classmethod
    def create(cls, config: ModelConfig) -> "Model":
        rng = stream(config.seed, "init")
        H, K = config.hidden_dim, config.layer_cap
        encoder = init_encoder(config.encoder_config(), rng, zero_output_proj=True)
        if config.merge == "attm":
            merge = init_attm(H, K, rng)
        elif config.merge == "linm":
            merge = init_linm(K)
        else:
            merge = None
        if config.head == "recurrent":
            head = init_recurrent_head(H, config.recurrent_hidden, rng)
        else:
            head = init_pooling_head(H, config.pool_dim, rng)
        return cls(config, encoder, merge, head)

    # -- parameters -----------------------------------------------------------

    def groups(self) -> dict[str, dict[str, Tensor]]:
        return {
            "encoder": encoder_tensors(self.encoder[: self.config.layer_cap]),
            "merge": self.merge.tensors() if self.merge is not None else {},
            "head": self.head.tensors(),
        }

    def named_tensors(self) -> dict[str, Tensor]:
        return {
            f"{group}.{name}": t
            for group, tensors in self.groups().items()
            for name, t in tensors.items()
        }

    def set_frozen(self, group: str, frozen: bool) -> None:
        set_frozen(self.groups()[group], frozen)

    def meta(self) -> dict:
        return {"model": asdict(self.config)}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], meta: dict) -> "Model":
        config = ModelConfig(**meta["model"])
        model = cls.create(config)
        named = model.named_tensors()
        missing = sorted(set(named) - set(arrays))
        if missing:
            raise ValueError(f"checkpoint lacks tensors: {', '.join(missing[:8])}")
        for name, t in named.items():
            if arrays[name].shape != t.shape:
                raise ValueError(
                    f"checkpoint tensor {name} has shape {arrays[name].shape}, expected {t.shape}"
                )
            t.data = np.array(arrays[name], dtype=np.float64)
        return model

    # -- forward --------------------------------------------------------------

    def merge_stack(self, x: Tensor) -> tuple[Tensor, Tensor | None]:
        """(..., T, H, K) stack -> (..., T, H) merged sequence and AttM weights."""
        cfg = self.config
        if x.shape[-2:] != (cfg.hidden_dim, cfg.layer_cap):
            raise ValueError(
                f"input stack {x.shape} does not match H={cfg.hidden_dim}, K={cfg.layer_cap}"
            )
        x = refine_layers(x, self.encoder, cfg.num_heads)
        if cfg.merge == "attm":
            return attm_forward(x, self.merge)
        if cfg.merge == "linm":
            return linm_merge(x, self.merge), None
        # baseline: the top kept layer goes straight to the classifier
        return x[..., cfg.layer_cap - 1], None

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        merged, _ = self.merge_stack(x)
        if self.config.head == "recurrent":
            return recurrent_head(merged, self.head, self.config.readout)
        return pooling_head(merged, self.head)

    def attention_weights(self, x) -> np.ndarray:
        if self.config.merge != "attm":
            raise ValueError("attention weights exist only for the attm merge")
        x = x if isinstance(x, Tensor) else Tensor(x)
        _, w = self.merge_stack(x)
        return w.data

    def scores(self, x) -> np.ndarray:
        return np.atleast_1d(detection_score(self.forward(x)))
