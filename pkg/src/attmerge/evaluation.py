"""Equal error rate, DET points and cross-dataset averaging.

Conventions: scores are "higher = bona fide".  At threshold t a spoof trial
is falsely accepted when ``score >= t`` and a bona fide trial is falsely
rejected when ``score < t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

BONAFIDE = "bonafide"
SPOOF = "spoof"
LABELS = (BONAFIDE, SPOOF)


@dataclass(frozen=True)
class ScoreRecord:
    utterance_id: str
    label: str
    score: float


class ScoreSet:
    """Labelled detection scores; ids must be unique."""

    def __init__(self, records: Iterable[ScoreRecord | tuple]):
        recs = [r if isinstance(r, ScoreRecord) else ScoreRecord(*r) for r in records]
        seen = set()
        for r in recs:
            if r.label not in LABELS:
                raise ValueError(f"unknown label {r.label!r} for {r.utterance_id}")
            if r.utterance_id in seen:
                raise ValueError(f"duplicate utterance id {r.utterance_id!r}")
            seen.add(r.utterance_id)
        self.records = recs

    @classmethod
    def from_arrays(cls, bonafide: Sequence[float], spoof: Sequence[float]) -> "ScoreSet":
        recs = [ScoreRecord(f"b{i}", BONAFIDE, float(s)) for i, s in enumerate(bonafide)]
        recs += [ScoreRecord(f"s{i}", SPOOF, float(s)) for i, s in enumerate(spoof)]
        return cls(recs)

    @classmethod
    def join(cls, keys: Mapping[str, str], scores: Mapping[str, float]) -> "ScoreSet":
        """Pair a key map with a score map; every keyed id needs a score."""
        missing = sorted(set(keys) - set(scores))
        if missing:
            raise ValueError(f"{len(missing)} keyed ids have no score: {', '.join(missing[:10])}")
        return cls(ScoreRecord(u, keys[u], float(scores[u])) for u in keys)

    def __len__(self) -> int:
        return len(self.records)

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        bona = np.array([r.score for r in self.records if r.label == BONAFIDE], dtype=float)
        spoof = np.array([r.score for r in self.records if r.label == SPOOF], dtype=float)
        if bona.size == 0 or spoof.size == 0:
            raise ValueError(
                f"EER needs both classes (got {bona.size} bonafide, {spoof.size} spoof)"
            )
        return bona, spoof


def _as_arrays(scores) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(scores, ScoreSet):
        return scores.split()
    bona, spoof = scores
    bona, spoof = np.asarray(bona, dtype=float), np.asarray(spoof, dtype=float)
    if bona.size == 0 or spoof.size == 0:
        raise ValueError("EER needs both classes")
    return bona, spoof


def det_points(scores) -> list[tuple[float, float]]:
    """(FAR, FRR) at every distinct score used as threshold, ascending.

    A final reject-all point (1 past the largest score, FAR=0, FRR=1) closes
    the curve so that it always spans both error extremes.
    """
    far, frr, _ = _det_arrays(*_as_arrays(scores))
    return list(zip(far.tolist(), frr.tolist()))


def _det_arrays(bona: np.ndarray, spoof: np.ndarray):
    thresholds = np.unique(np.concatenate([bona, spoof]))
    b_sorted = np.sort(bona)
    s_sorted = np.sort(spoof)
    # bona fide strictly below t; spoof at or above t
    n_rejected = np.searchsorted(b_sorted, thresholds, side="left")
    n_accepted = spoof.size - np.searchsorted(s_sorted, thresholds, side="left")
    far = np.append(n_accepted / spoof.size, 0.0)
    frr = np.append(n_rejected / bona.size, 1.0)
    return far, frr, np.append(thresholds, np.inf)


def crossing(far: Sequence[float], frr: Sequence[float]) -> float:
    """Where FAR - FRR first reaches zero, linearly interpolated."""
    # the lowest threshold accepts every spoof, so the curve starts with d > 0
    prev_d = far[0] - frr[0]
    if prev_d <= 0:
        return float(far[0])
    for k in range(1, len(far)):
        d = far[k] - frr[k]
        if d == 0:
            return float(far[k])
        if d < 0:
            alpha = prev_d / (prev_d - d)
            return float(far[k - 1] + alpha * (far[k] - far[k - 1]))
        prev_d = d
    raise ValueError("FAR - FRR never changes sign")


def compute_eer(scores) -> float:
    """EER in [0, 1] from a ScoreSet or a (bonafide, spoof) pair of arrays."""
    far, frr, _ = _det_arrays(*_as_arrays(scores))
    return crossing(far, frr)


def average_eer(eers: Sequence[float]) -> float:
    if len(eers) == 0:
        raise ValueError("cannot average an empty list of EERs")
    return float(np.mean(np.asarray(eers, dtype=float)))
