"""Cross-entropy training with a warm-up / decay / unfreeze schedule.

Epochs are 1-based.  For ``epoch <= warmup_epochs`` the learning rate ramps
linearly up to ``peak_lr``; afterwards it decays as ``peak_lr * gamma**(epoch
- warmup_epochs)``.  The encoder stays frozen before ``unfreeze_epoch`` (and
forever under the "fixed" strategy); merge block and head always train.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .evaluation import BONAFIDE, compute_eer
from .model import Model
from .seeding import stream
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)

STRATEGIES = ("fine-tuned", "fixed")


@dataclass(frozen=True)
class Schedule:
    warmup_epochs: int = 5
    decay_rate: float = 0.9
    unfreeze_epoch: int = 11
    peak_lr: float = 1e-4
    total_epochs: int = 20

    def __post_init__(self):
        if not 0 < self.decay_rate < 1:
            raise ValueError(f"decay_rate must be in (0, 1), got {self.decay_rate}")
        if self.peak_lr <= 0:
            raise ValueError(f"peak_lr must be positive, got {self.peak_lr}")
        if not 1 <= self.warmup_epochs < self.unfreeze_epoch <= self.total_epochs:
            raise ValueError(
                "need 1 <= warmup_epochs < unfreeze_epoch <= total_epochs, got "
                f"{self.warmup_epochs}, {self.unfreeze_epoch}, {self.total_epochs}"
            )


def _check_epoch(epoch: int, s: Schedule) -> None:
    if not 1 <= epoch <= s.total_epochs:
        raise ValueError(f"epoch {epoch} outside [1, {s.total_epochs}]")


def lr_at(epoch: int, s: Schedule) -> float:
    _check_epoch(epoch, s)
    if epoch <= s.warmup_epochs:
        return s.peak_lr * epoch / s.warmup_epochs
    return s.peak_lr * s.decay_rate ** (epoch - s.warmup_epochs)


def frozen_at(epoch: int, s: Schedule, strategy: str = "fine-tuned") -> frozenset[str]:
    """Names of the parameter groups that must not be updated at ``epoch``."""
    _check_epoch(epoch, s)
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if strategy == "fixed" or epoch < s.unfreeze_epoch:
        return frozenset({"encoder"})
    return frozenset()


class Adam:
    """Adam with optional decoupled weight decay.

    Decay touches only matrices (ndim >= 2); biases, gains and per-layer
    scalars such as the LinM weights are never decayed.
    """

    def __init__(
        self,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray], lr: float) -> None:
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            if not p.requires_grad or name not in grads:
                continue
            g = grads[name]
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            t = self.t.get(name, 0) + 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self.m[name], self.v[name], self.t[name] = m, v, t
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data = p.data - lr * update


@dataclass
class TrainState:
    seed: int = 0
    epoch: int = 1
    optimizer: Adam = field(default_factory=Adam)
    frozen: frozenset[str] = frozenset()


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean 2-class cross-entropy; targets are 0 (bonafide) / 1 (spoof)."""
    onehot = np.eye(logits.shape[-1])[np.asarray(targets, dtype=int)]
    nll = -tn.sum_over_axis(tn.log_softmax(logits, axis=-1) * onehot, -1)
    return tn.sum_over_axis(nll) / nll.size


def targets_of(labels) -> np.ndarray:
    return np.array([0 if lab == BONAFIDE else 1 for lab in labels], dtype=int)


@dataclass
class Batch:
    x: np.ndarray  # B x T x H x K
    y: np.ndarray  # B
    ids: list[str]


def make_batches(utterances, batch_size: int, rng: np.random.Generator | None = None) -> list[Batch]:
    """Shuffle (if ``rng``), then cut equal-length runs into batches."""
    order = np.arange(len(utterances)) if rng is None else rng.permutation(len(utterances))
    by_len: dict[int, list[int]] = {}
    for i in order:
        by_len.setdefault(utterances[i].data.shape[0], []).append(int(i))
    batches = []
    for T in sorted(by_len):
        idx = by_len[T]
        for start in range(0, len(idx), batch_size):
            chunk = [utterances[i] for i in idx[start : start + batch_size]]
            batches.append(
                Batch(
                    x=np.stack([u.data for u in chunk]),
                    y=targets_of([u.label for u in chunk]),
                    ids=[u.utterance_id for u in chunk],
                )
            )
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def apply_freeze(model: Model, frozen: frozenset[str]) -> None:
    for group in model.groups():
        model.set_frozen(group, group in frozen)


def train_epoch(
    batches: list[Batch],
    model: Model,
    state: TrainState,
    schedule: Schedule,
    strategy: str = "fine-tuned",
    lr: float | None = None,
) -> float:
    """One pass over ``batches``; returns the mean batch loss.

    ``lr`` overrides the scheduled rate (used by tests and probes).
    """
    if not batches:
        raise ValueError("train_epoch needs at least one batch")
    state.frozen = frozen_at(state.epoch, schedule, strategy)
    apply_freeze(model, state.frozen)
    rate = lr_at(state.epoch, schedule) if lr is None else lr
    params = model.named_tensors()
    losses = []
    for k, batch in enumerate(batches):
        with Tape() as tape:
            loss = cross_entropy(model.forward(batch.x), batch.y)
        value = loss.item()
        if not np.isfinite(value):
            raise tn.NonFiniteError(
                f"non-finite loss {value} at epoch {state.epoch}, batch {k} "
                f"(first id {batch.ids[0] if batch.ids else '?'})"
            )
        names = [n for n, p in params.items() if p.requires_grad]
        grads = tape.gradient(loss, [params[n] for n in names])
        if rate > 0:
            state.optimizer.step(params, dict(zip(names, grads)), rate)
        losses.append(value)
    state.epoch += 1
    return float(np.mean(losses))


def score_utterances(
    model: Model, utterances, batch_size: int = 64, workers: int = 1
) -> dict[str, float]:
    """Detection score per utterance id, in input order.

    ``workers > 1`` scores batches on a thread pool; batches are formed the
    same way either way, so the result does not depend on the worker count.
    """
    batches = make_batches(utterances, batch_size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda b: model.scores(b.x), batches))
    else:
        outputs = [model.scores(b.x) for b in batches]
    scores = {}
    for batch, out in zip(batches, outputs):
        for uid, s in zip(batch.ids, out):
            scores[uid] = float(s)
    return {u.utterance_id: scores[u.utterance_id] for u in utterances}


def dataset_eer(model: Model, utterances, workers: int = 1) -> float:
    scores = score_utterances(model, utterances, workers=workers)
    bona = [scores[u.utterance_id] for u in utterances if u.label == BONAFIDE]
    spoof = [scores[u.utterance_id] for u in utterances if u.label != BONAFIDE]
    return compute_eer((bona, spoof))


@dataclass
class LogRow:
    epoch: int
    lr: float
    frozen_flag: bool
    train_loss: float
    dev_eer: float


def fit(
    model: Model,
    train,
    dev,
    schedule: Schedule,
    strategy: str = "fine-tuned",
    batch_size: int = 16,
    seed: int = 0,
    epochs: int | None = None,
    weight_decay: float = 0.0,
) -> tuple[list[LogRow], dict[str, np.ndarray]]:
    """Train for ``epochs`` (default ``total_epochs``) epochs.

    Returns the per-epoch log and a snapshot of the parameters with the
    lowest dev EER (latest epoch wins ties).  The model is left holding
    that best snapshot.
    """
    state = TrainState(seed=seed, optimizer=Adam(weight_decay=weight_decay))
    shuffle = stream(seed, "shuffle")
    n_epochs = schedule.total_epochs if epochs is None else epochs
    rows: list[LogRow] = []
    best_eer, best = np.inf, None
    for _ in range(n_epochs):
        epoch = state.epoch
        batches = make_batches(train, batch_size, shuffle)
        rate = lr_at(epoch, schedule)
        loss = train_epoch(batches, model, state, schedule, strategy)
        dev_eer = dataset_eer(model, dev) if dev else float("nan")
        rows.append(LogRow(epoch, rate, "encoder" in state.frozen, loss, dev_eer))
        log.info("epoch %d lr %.3g frozen %s loss %.4f dev EER %.4f",
                 epoch, rate, "encoder" in state.frozen, loss, dev_eer)
        if best is None or not dev or dev_eer <= best_eer:
            best_eer = dev_eer
            best = {n: t.data.copy() for n, t in model.named_tensors().items()}
    for n, t in model.named_tensors().items():
        t.data = best[n]
    return rows, best
