"""Registration quality metrics: Dice overlap and group-level t-map statistics."""

from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence

import numpy as np

from .volume import BrainMask, GridShape, LabelVolume, ScalarVolume, check_mask


@dataclass(frozen=True, eq=False)
class TMap:
    """Voxelwise one-sample t statistics.

    Voxels where every subject has the same value hold ``+inf``/``-inf``
    (non-zero mean) or 0 (zero mean).
    """

    t: np.ndarray
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("a t-map needs at least 2 subjects")
        t = np.array(self.t, dtype=float)
        if t.ndim != 3 or np.any(np.isnan(t)):
            raise ValueError("t-map must be a 3D array without NaN")
        t.flags.writeable = False
        object.__setattr__(self, "t", t)

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.t.shape)


@dataclass(frozen=True)
class ThresholdReport:
    threshold: float
    count: int
    peak: float

    def as_dict(self):
        return {"threshold": self.threshold, "count": self.count, "peak": self.peak}


@dataclass(frozen=True)
class DiceResult:
    scores: Dict[int, float]
    mean: float
    skipped: tuple = ()

    def as_dict(self):
        return {
            "scores": {str(k): v for k, v in self.scores.items()},
            "mean": self.mean,
            "skipped": list(self.skipped),
        }


def dice(a: LabelVolume, b: LabelVolume, labels: Optional[Iterable[int]] = None) -> DiceResult:
    """Per-label Dice ``2|A_k & B_k| / (|A_k| + |B_k|)`` and their mean.

    Labels present in neither volume are skipped and left out of the mean.
    With ``labels=None`` every non-zero label found in either volume is used.
    """
    la, lb = a.labels, b.labels
    if la.shape != lb.shape:
        raise ValueError(f"shape mismatch: {la.shape} vs {lb.shape}")
    if labels is None:
        labels = np.union1d(np.unique(la), np.unique(lb))
        labels = labels[labels > 0]
    labels = sorted({int(k) for k in labels})
    if not labels:
        raise ValueError("no labels requested")
    if labels[0] <= 0:
        raise ValueError("labels must be positive")
    scores, skipped = {}, []
    for k in labels:
        in_a, in_b = la == k, lb == k
        total = int(in_a.sum()) + int(in_b.sum())
        if total == 0:
            skipped.append(k)
            continue
        scores[k] = 2.0 * int(np.sum(in_a & in_b)) / total
    if not scores:
        raise ValueError("none of the requested labels is present")
    return DiceResult(scores, float(np.mean(list(scores.values()))), tuple(skipped))


def zscore_map(v: ScalarVolume, mask: Optional[BrainMask] = None) -> ScalarVolume:
    """Standardise the masked voxels with population std; outside voxels become 0."""
    sel = check_mask(mask, v.data.shape)
    vals = v.data[sel]
    if vals.size == 0:
        raise ValueError("empty domain")
    mean = vals.mean()
    std = np.sqrt(np.mean((vals - mean) ** 2))
    if std == 0:
        raise ValueError("zero variance")
    out = np.zeros_like(v.data)
    out[sel] = (vals - mean) / std
    return ScalarVolume(out, v.spacing)


def one_sample_tmap(maps: Sequence[ScalarVolume], mask: Optional[BrainMask] = None) -> TMap:
    """t = mean / (s / sqrt(n)) per voxel with the (n - 1) sample std. Outside the mask t = 0."""
    if len(maps) < 2:
        raise ValueError("one-sample t-test needs at least 2 maps")
    shape = maps[0].data.shape
    if any(m.data.shape != shape for m in maps):
        raise ValueError("all maps must share one shape")
    sel = check_mask(mask, shape)
    stack = np.stack([m.data for m in maps])
    n = stack.shape[0]
    mean = stack.mean(axis=0)
    s = stack.std(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = mean / (s / np.sqrt(n))
        t = np.where(s == 0, np.sign(mean) * np.inf, t)
    t = np.where((s == 0) & (mean == 0), 0.0, t)
    return TMap(np.where(sel, t, 0.0), n)


def threshold_report(tm: TMap, T: float) -> ThresholdReport:
    """Voxels strictly above ``T`` (``+inf`` counts) and the map's peak value."""
    count = int(np.sum(tm.t > T))
    return ThresholdReport(float(T), count, float(np.max(tm.t)))


def overlap_count(tmA: TMap, TA: float, tmB: TMap, TB: float) -> int:
    if tmA.t.shape != tmB.t.shape:
        raise ValueError(f"shape mismatch: {tmA.t.shape} vs {tmB.t.shape}")
    return int(np.sum((tmA.t > TA) & (tmB.t > TB)))
