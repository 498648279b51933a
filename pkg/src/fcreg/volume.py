"""Volumetric containers shared by every other module.

All arrays are indexed ``[x, y, z]`` (and ``[x, y, z, t]`` for time series).
On disk the layout is x-fastest, t-slowest, which is what numpy produces for
these arrays with ``order="F"``; see :mod:`fcreg.pipeline.nifti`.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np


class GridShape(NamedTuple):
    nx: int
    ny: int
    nz: int
    nt: int = 1

    @property
    def spatial(self) -> Tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def nvox(self) -> int:
        return self.nx * self.ny * self.nz


class VoxelIndex(NamedTuple):
    x: int
    y: int
    z: int


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


def _spacing(spacing):
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3 or not all(np.isfinite(s) and s > 0 for s in sp):
        raise ValueError(f"spacing must be three positive finite values, got {spacing!r}")
    return sp


def _check_finite(a, what):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass(frozen=True, eq=False)
class ScalarVolume:
    """3D intensity image, ``data[x, y, z]``."""

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"ScalarVolume needs a non-empty 3D array, got shape {data.shape}")
        _check_finite(data, "ScalarVolume")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _spacing(self.spacing))

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.data.shape)


@dataclass(frozen=True, eq=False)
class TimeSeriesVolume:
    """4D functional image, ``data[x, y, z, t]`` with at least two frames."""

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = _frozen(self.data, np.float64)
        if data.ndim != 4 or min(data.shape[:3]) < 1:
            raise ValueError(f"TimeSeriesVolume needs a 4D array, got shape {data.shape}")
        if data.shape[3] < 2:
            raise ValueError("TimeSeriesVolume needs at least 2 time points")
        _check_finite(data, "TimeSeriesVolume")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", _spacing(self.spacing))

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.data.shape)

    def frame(self, t: int) -> ScalarVolume:
        return ScalarVolume(self.data[..., t], self.spacing)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Per-voxel displacement ``vectors[x, y, z, :] = (ux, uy, uz)``.

    Components are in voxel units of the grid the field is applied to. A
    warped image samples the moving image at ``p - u(p)``.
    """

    vectors: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        v = _frozen(self.vectors, np.float64)
        if v.ndim != 4 or v.shape[3] != 3 or min(v.shape[:3]) < 1:
            raise ValueError(f"DisplacementField needs shape (nx, ny, nz, 3), got {v.shape}")
        _check_finite(v, "DisplacementField")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "spacing", _spacing(self.spacing))

    @classmethod
    def zeros(cls, shape, spacing=(1.0, 1.0, 1.0)):
        return cls(np.zeros(tuple(shape)[:3] + (3,)), spacing)

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.vectors.shape[:3])

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.vectors**2, axis=-1))


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Integer parcellation, 0 is background."""

    labels: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        raw = np.asarray(self.labels)
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or np.any(raw != np.round(raw)):
                raise ValueError("LabelVolume values must be integers")
        lab = _frozen(raw, np.int64)
        if lab.ndim != 3 or min(lab.shape) < 1:
            raise ValueError(f"LabelVolume needs a 3D array, got shape {lab.shape}")
        if np.any(lab < 0):
            raise ValueError("LabelVolume values must be non-negative")
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "spacing", _spacing(self.spacing))

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.labels.shape)


@dataclass(frozen=True, eq=False)
class BrainMask:
    inside: np.ndarray

    def __post_init__(self):
        m = _frozen(self.inside, bool)
        if m.ndim != 3:
            raise ValueError(f"BrainMask needs a 3D array, got shape {m.shape}")
        object.__setattr__(self, "inside", m)

    @property
    def shape(self) -> GridShape:
        return GridShape(*self.inside.shape)


def check_mask(mask: Optional[BrainMask], spatial_shape: Sequence[int]) -> np.ndarray:
    """Return the boolean domain selector, the full grid when ``mask`` is None."""
    spatial_shape = tuple(spatial_shape)
    if mask is None:
        return np.ones(spatial_shape, dtype=bool)
    if mask.inside.shape != spatial_shape:
        raise ValueError(f"mask shape {mask.inside.shape} does not match volume {spatial_shape}")
    return mask.inside


def volume_stats(v: ScalarVolume, mask: Optional[BrainMask] = None):
    """(min, max, mean, std) over the masked voxels; std divides by N."""
    sel = check_mask(mask, v.data.shape)
    vals = v.data[sel]
    if vals.size == 0:
        raise ValueError("empty domain")
    mean = vals.mean()
    std = np.sqrt(np.mean((vals - mean) ** 2))
    return float(vals.min()), float(vals.max()), float(mean), float(std)


def normalize_intensity(v: ScalarVolume) -> ScalarVolume:
    """Rescale to [0, 1]. A constant volume maps to zeros."""
    lo, hi = v.data.min(), v.data.max()
    if hi == lo:
        return ScalarVolume(np.zeros_like(v.data), v.spacing)
    return ScalarVolume(np.clip((v.data - lo) / (hi - lo), 0.0, 1.0), v.spacing)


def time_series_at(v: TimeSeriesVolume, n) -> np.ndarray:
    x, y, z = (int(c) for c in n)
    nx, ny, nz = v.data.shape[:3]
    if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
        raise IndexError(f"voxel {(x, y, z)} outside grid {(nx, ny, nz)}")
    return v.data[x, y, z, :].copy()
