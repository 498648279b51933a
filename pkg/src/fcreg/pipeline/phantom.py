"""Synthetic T1/fMRI phantom pairs with a known deformation."""

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .. import warp
from ..volume import BrainMask, DisplacementField, LabelVolume, ScalarVolume, TimeSeriesVolume


@dataclass(frozen=True)
class PhantomSpec:
    """Phantom parameters.

    ``factor`` is the structural-to-functional grid ratio; the fMRI pair is
    generated on the structural grid and block-averaged down by it.
    ``flat_interior`` makes the structural image constant inside the brain
    so only the functional signal carries interior alignment information.
    ``fmri_smoothing`` is the Gaussian sigma (voxels) applied to the noisy
    functional data, standing in for the spatial smoothing of fMRI
    preprocessing.
    """

    size: Tuple[int, int, int] = (24, 24, 24)
    timepoints: int = 30
    seed: int = 0
    max_displacement: float = 2.0
    n_regions: int = 8
    noise_std: float = 0.1
    factor: int = 1
    flat_interior: bool = False
    fmri_smoothing: float = 2.0

    def __post_init__(self):
        size = tuple(int(n) for n in self.size)
        if len(size) != 3 or min(size) < 8:
            raise ValueError(f"phantom size must be three extents >= 8, got {self.size!r}")
        object.__setattr__(self, "size", size)
        if self.timepoints < 10:
            raise ValueError("phantom needs at least 10 time points")
        if not 0 <= self.max_displacement < min(size) / 4:
            raise ValueError(f"max_displacement must lie in [0, {min(size) / 4}), got {self.max_displacement}")
        if self.n_regions < 1:
            raise ValueError("n_regions must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if self.factor < 1 or any(n % self.factor for n in size):
            raise ValueError(f"size {size} is not divisible by factor {self.factor}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.fmri_smoothing < 0:
            raise ValueError("fmri_smoothing must be non-negative")


class Phantom(NamedTuple):
    fixed_t1: ScalarVolume
    moving_t1: ScalarVolume
    fixed_fmri: TimeSeriesVolume
    moving_fmri: TimeSeriesVolume
    labels_fixed: LabelVolume
    labels_moving: LabelVolume
    truth: DisplacementField
    mask: BrainMask


def _ellipsoid(shape, fill=0.42):
    axes = [(np.arange(n) - (n - 1) / 2.0) / (fill * n) for n in shape]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    return x**2 + y**2 + z**2 <= 1.0


def _parcels(inside, n_regions, rng):
    """Voronoi parcellation of the mask from random seed voxels."""
    coords = np.argwhere(inside)
    seeds = coords[rng.choice(len(coords), size=n_regions, replace=False)].astype(float)
    labels = np.zeros(inside.shape, dtype=np.int64)
    d2 = ((coords[:, None, :] - seeds[None, :, :]) ** 2).sum(axis=-1)
    labels[tuple(coords.T)] = np.argmin(d2, axis=1) + 1
    return labels


def _smooth_field(shape, max_disp, rng):
    """Random mix of the lowest sine modes: zero on the boundary, max magnitude ``max_disp``."""
    axes = [np.arange(n) / (n - 1) for n in shape]
    u = np.zeros(tuple(shape) + (3,))
    for k in itertools.product((1, 2), repeat=3):
        basis = (
            np.sin(np.pi * k[0] * axes[0])[:, None, None]
            * np.sin(np.pi * k[1] * axes[1])[None, :, None]
            * np.sin(np.pi * k[2] * axes[2])[None, None, :]
        )
        u += basis[..., None] * (rng.standard_normal(3) / np.prod(k))
    peak = np.sqrt((u**2).sum(axis=-1)).max()
    if peak == 0 or max_disp == 0:
        return np.zeros_like(u)
    return u * (max_disp / peak)


def invert_field(vectors, iterations=30):
    """Field ``v`` with ``warp(warp(I, v), u) ~= I`` for the input field ``u``.

    Solves ``v(q) = -u(q - v(q))`` by fixed-point iteration, which converges
    for smooth fields whose Jacobian stays well away from folding.
    """
    grid_pts = warp._sample_points(np.zeros_like(vectors))
    v = -vectors.copy()
    for _ in range(iterations):
        v = -warp.interpolate(vectors, grid_pts - v.reshape(-1, 3)).reshape(vectors.shape)
    return v


def _block_mean(a, f):
    if f == 1:
        return a
    nx, ny, nz = a.shape[:3]
    return a.reshape(nx // f, f, ny // f, f, nz // f, f, -1).mean(axis=(1, 3, 5))


def make_phantom(spec: PhantomSpec) -> Phantom:
    """Generate a fixed/moving pair where ``truth`` registers moving onto fixed.

    Warping the moving images by ``truth`` (sample at ``p - truth(p)``)
    recovers the fixed images up to interpolation error. The moving data are
    the fixed data warped by the numerical inverse of ``truth``.
    """
    rng = np.random.default_rng(spec.seed)
    shape = spec.size
    inside = _ellipsoid(shape)
    labels = _parcels(inside, spec.n_regions, rng)

    levels = np.linspace(0.2, 1.0, spec.n_regions)
    rng.shuffle(levels)
    if spec.flat_interior:
        t1 = inside.astype(float) * 0.8
    else:
        t1 = np.where(labels > 0, levels[np.maximum(labels - 1, 0)], 0.0)
        blobs = gaussian_filter(rng.standard_normal(shape), sigma=2.0)
        t1 = t1 + 0.15 * inside * blobs / np.abs(blobs).max()
    t1 = gaussian_filter(t1, sigma=1.0)
    t1 = (t1 - t1.min()) / (t1.max() - t1.min())

    nt = spec.timepoints
    t = np.arange(nt)
    # integer cycles below Nyquist; parcels sharing a frequency differ in phase
    n_freq = max(nt // 2 - 1, 1)
    freqs = 1 + rng.permutation(spec.n_regions) % n_freq
    phases = rng.uniform(0, 2 * np.pi, spec.n_regions)
    courses = np.sin(2 * np.pi * freqs[:, None] * t[None, :] / nt + phases[:, None])
    fmri = np.zeros(shape + (nt,))
    fmri[inside] = courses[labels[inside] - 1]
    fmri[inside] += spec.noise_std * rng.standard_normal((int(inside.sum()), nt))
    if spec.fmri_smoothing > 0:
        sig = spec.fmri_smoothing
        fmri = gaussian_filter(fmri, sigma=(sig, sig, sig, 0))

    truth = _smooth_field(shape, spec.max_displacement, rng)
    inverse = DisplacementField(invert_field(truth))

    moving_t1 = warp.warp_scalar(ScalarVolume(t1), inverse)
    moving_labels = warp.warp_labels(labels, inverse)
    pts = warp._sample_points(inverse.vectors)
    moving_fmri = warp.interpolate(fmri, pts).reshape(fmri.shape)

    f = spec.factor
    coarse = tuple(s * f for s in (1.0, 1.0, 1.0))
    return Phantom(
        fixed_t1=ScalarVolume(t1),
        moving_t1=moving_t1,
        fixed_fmri=TimeSeriesVolume(_block_mean(fmri, f), coarse),
        moving_fmri=TimeSeriesVolume(_block_mean(moving_fmri, f), coarse),
        labels_fixed=LabelVolume(labels),
        labels_moving=LabelVolume(moving_labels),
        truth=DisplacementField(truth),
        mask=BrainMask(inside),
    )
