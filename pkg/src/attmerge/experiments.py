"""Experiment drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attm import bottleneck_dim, excitation_dim
from .config import RunConfig
from .dataio import Utterance, generate_synthetic, load_dataset
from .evaluation import average_eer
from .model import Model
from .trainer import LogRow, dataset_eer, fit

LOG_COLUMNS = ("epoch", "lr", "frozen_flag", "train_loss", "dev_eer")


def synthetic_utterances(cfg: RunConfig, split: str, num_utts: int | None = None) -> list[Utterance]:
    """Generate a split in memory, without touching the disk."""
    spec = cfg.synthetic_spec(split)
    if num_utts is not None:
        spec = dataclasses.replace(spec, num_utts=num_utts)
    return [
        Utterance(stack.utterance_id, stack.data.data, label)
        for stack, label in generate_synthetic(spec)
    ]


def cap_layers(utts: list[Utterance], k: int) -> list[Utterance]:
    """Keep only the first ``k`` layers of every stack."""
    return [Utterance(u.utterance_id, u.data[..., :k], u.label) for u in utts]


def train_model(cfg: RunConfig, train, dev) -> tuple[Model, list[LogRow]]:
    model = Model.create(cfg.model_config())
    rows, _ = fit(
        model,
        train,
        dev,
        cfg.schedule(),
        strategy=cfg.strategy,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        weight_decay=cfg.weight_decay,
    )
    return model, rows


def log_csv(rows: list[LogRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for r in rows:
        writer.writerow([r.epoch, repr(r.lr), str(r.frozen_flag).lower(), repr(r.train_loss), repr(r.dev_eer)])
    return buf.getvalue()


def read_log_csv(text: str) -> list[LogRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(
            LogRow(
                int(rec["epoch"]),
                float(rec["lr"]),
                rec["frozen_flag"] == "true",
                float(rec["train_loss"]),
                float(rec["dev_eer"]),
            )
        )
    return rows


@dataclass
class GridRow:
    layer_cap: int
    squeeze_dim: int
    bottleneck_dim: int
    eers: dict[str, float]

    @property
    def average(self) -> float:
        return average_eer(list(self.eers.values()))


def truncation_grid(
    cfg: RunConfig,
    layer_caps,
    train: list[Utterance],
    dev: list[Utterance],
    evals: dict[str, list[Utterance]],
    workers: int = 1,
) -> list[GridRow]:
    """Train one model per layer cap K on the first K layers and score every eval set."""
    rows = []
    for k in layer_caps:
        run = cfg.replace(layer_cap=k)
        model, _ = train_model(run, cap_layers(train, k), cap_layers(dev, k))
        eers = {name: dataset_eer(model, cap_layers(utts, k), workers) for name, utts in evals.items()}
        rows.append(GridRow(k, excitation_dim(k), bottleneck_dim(cfg.hidden_dim, k), eers))
    return rows


def grid_csv(rows: list[GridRow]) -> str:
    """One row per layer cap; EER columns are percentages, one per dataset, then Avg."""
    names = list(rows[0].eers) if rows else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layers", "squeeze_dim", "bottleneck_dim", *names, "Avg"])
    for r in rows:
        cells = [f"{100 * r.eers[n]:.2f}" for n in names]
        writer.writerow([f"1-{r.layer_cap}", r.squeeze_dim, r.bottleneck_dim, *cells, f"{100 * r.average:.2f}"])
    return buf.getvalue()


def load_named(paths) -> dict[str, list[Utterance]]:
    """Dataset directories keyed by their base name (must be unique)."""
    out = {}
    for p in paths:
        name = Path(p).name
        if name in out:
            raise ValueError(f"two datasets share the name {name!r}")
        out[name] = load_dataset(p)
    return out


def band_mass(weights: np.ndarray, band: tuple[int, int]) -> float:
    """Share of normalized weight on the 1-based inclusive layer ``band``."""
    lo, hi = band
    return float(np.sum(weights[lo - 1 : hi]))
