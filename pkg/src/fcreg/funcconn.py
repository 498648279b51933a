"""Local functional-connectivity patterns and the histogram similarity loss.

The volume is tiled by non-overlapping cubes of side ``w`` anchored at the
origin (trailing cubes are truncated by the grid). Inside each cube every
voxel's time series is correlated with the cube centre's series, the
correlations are binned into a ``bins``-bin histogram over [-1, 1], and the
fixed/warped histograms are compared with the Bhattacharyya distance.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.sparse

from .volume import BrainMask, TimeSeriesVolume, VoxelIndex, check_mask

SQRT_EPS = 1e-12
CORR_TOL = 1e-9


@dataclass(frozen=True)
class FCConfig:
    """Cube side ``w`` (odd), histogram ``bins``, soft/hard binning and the flat-series floor."""

    w: int = 21
    bins: int = 21
    soft: bool = True
    var_eps: float = 1e-10

    def __post_init__(self):
        if int(self.w) != self.w or self.w < 3 or self.w % 2 == 0:
            raise ValueError(f"cube side w must be odd and >= 3, got {self.w!r}")
        if int(self.bins) != self.bins or self.bins < 2:
            raise ValueError(f"bins must be an integer >= 2, got {self.bins!r}")
        if not self.var_eps >= 0:
            raise ValueError(f"var_eps must be non-negative, got {self.var_eps!r}")


@dataclass(frozen=True, eq=False)
class FCHistogram:
    counts: np.ndarray
    center: Optional[VoxelIndex] = None

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def mean(self) -> float:
        return self.total / self.counts.size


@dataclass(frozen=True)
class CubeGrid:
    """Origin-anchored tiling of a grid by ``w``-cubes.

    ``centers[i]`` is the midpoint of the in-grid part of cube ``i``; for a
    full cube it is the usual centre ``origin + w // 2``.
    """

    shape: tuple
    w: int
    origins: tuple
    centers: tuple

    @classmethod
    def build(cls, shape, w):
        shape = tuple(int(n) for n in shape[:3])
        axes_o, axes_c = [], []
        for n in shape:
            o = np.arange(0, n, w)
            ext = np.minimum(w, n - o)
            axes_o.append(o)
            axes_c.append(o + (ext - 1) // 2)
        origins = tuple(VoxelIndex(int(a), int(b), int(c)) for a in axes_o[0] for b in axes_o[1] for c in axes_o[2])
        centers = tuple(VoxelIndex(int(a), int(b), int(c)) for a in axes_c[0] for b in axes_c[1] for c in axes_c[2])
        return cls(shape, int(w), origins, centers)

    def __len__(self):
        return len(self.centers)

    def block(self, i):
        """Slices selecting cube ``i``."""
        return tuple(slice(o, min(o + self.w, n)) for o, n in zip(self.origins[i], self.shape))


def pearson(a, b, var_eps: float = 0.0) -> float:
    """Pearson correlation of two series; 0 when either one is flat (variance < ``var_eps``)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"series must be 1D with equal lengths, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ValueError("series need at least 2 samples")
    ac = a - a.mean()
    bc = b - b.mean()
    va, vb = np.mean(ac * ac), np.mean(bc * bc)
    if va < var_eps or vb < var_eps or va == 0.0 or vb == 0.0:
        return 0.0
    return float(np.dot(ac, bc) / (np.sqrt(np.dot(ac, ac)) * np.sqrt(np.dot(bc, bc))))


def local_fc_map(v: TimeSeriesVolume, center, cfg: FCConfig) -> np.ndarray:
    """Correlations of every voxel of the ``w``-cube around ``center`` with the centre.

    Cube voxels outside the grid are dropped. The result is flattened in
    (x, y, z) C order over the truncated cube.
    """
    cx, cy, cz = (int(c) for c in center)
    nx, ny, nz, _ = v.data.shape
    if not (0 <= cx < nx and 0 <= cy < ny and 0 <= cz < nz):
        raise IndexError(f"centre {(cx, cy, cz)} outside grid {(nx, ny, nz)}")
    h = cfg.w // 2
    cube = v.data[max(cx - h, 0):cx + h + 1, max(cy - h, 0):cy + h + 1, max(cz - h, 0):cz + h + 1]
    series = cube.reshape(-1, v.data.shape[3])
    ref = v.data[cx, cy, cz]
    return np.array([pearson(s, ref, cfg.var_eps) for s in series])


def _bin_coordinate(r, bins):
    return (r + 1.0) * (bins - 1) / 2.0


def _soft_bins(r, bins):
    """Lower bin index and the weight carried by the upper neighbour."""
    b = _bin_coordinate(r, bins)
    k0 = np.minimum(np.floor(b), bins - 2).astype(np.int64)
    return k0, b - k0


def _check_correlations(r):
    r = np.asarray(r, dtype=float)
    if np.any(~np.isfinite(r)) or np.any(np.abs(r) > 1.0 + CORR_TOL):
        raise ValueError("invalid correlation")
    return np.clip(r, -1.0, 1.0)


def fc_histogram(correlations, cfg: FCConfig, center=None) -> FCHistogram:
    """Bin correlations into ``cfg.bins`` bins centred at -1, ..., 1.

    Hard mode rounds ``(r + 1) * (bins - 1) / 2`` half-up to the nearest bin.
    Soft mode splits each sample between the two nearest bins with a
    triangular kernel, so every sample still contributes unit mass.
    """
    r = _check_correlations(np.ravel(correlations))
    counts = np.zeros(cfg.bins)
    if cfg.soft:
        k0, frac = _soft_bins(r, cfg.bins)
        np.add.at(counts, k0, 1.0 - frac)
        np.add.at(counts, k0 + 1, frac)
    else:
        k = np.clip(np.floor(_bin_coordinate(r, cfg.bins) + 0.5), 0, cfg.bins - 1).astype(np.int64)
        np.add.at(counts, k, 1.0)
    if center is not None:
        center = VoxelIndex(*(int(c) for c in center))
    return FCHistogram(counts, center)


def bc_distance(hf: FCHistogram, hr: FCHistogram) -> float:
    """Bhattacharyya distance ``sqrt(1 - rho)`` between two (unnormalised) histograms."""
    f = np.asarray(hf.counts, dtype=float)
    r = np.asarray(hr.counts, dtype=float)
    if f.shape != r.shape:
        raise ValueError(f"bin counts differ: {f.size} vs {r.size}")
    sf, sr = f.sum(), r.sum()
    if sf <= 0 or sr <= 0:
        raise ValueError("empty histogram")
    rho = np.sum(np.sqrt(f * r)) / (f.size * np.sqrt((sf / f.size) * (sr / r.size)))
    return float(np.sqrt(max(0.0, 1.0 - rho)))


class CubeLayout:
    """Vectorised bookkeeping for the cube tiling of one grid.

    Voxels are addressed in C-order flat indices over (x, y, z).
    """

    def __init__(self, shape, w, mask: Optional[BrainMask] = None):
        self.grid = CubeGrid.build(shape, w)
        nx, ny, nz = self.grid.shape
        inside = check_mask(mask, (nx, ny, nz))
        nbx, nby, nbz = (-(-n // w) for n in (nx, ny, nz))
        x, y, z = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
        self.block_id = (((x // w) * nby + y // w) * nbz + z // w).ravel()
        self.n_blocks = nbx * nby * nbz
        centers = np.array(self.grid.centers, dtype=np.int64).reshape(-1, 3)
        center_flat = (centers[:, 0] * ny + centers[:, 1]) * nz + centers[:, 2]
        self.center_flat = center_flat
        self.voxel_center = center_flat[self.block_id]
        self.eligible = inside.ravel()[center_flat]
        n = self.block_id.size
        self.membership = scipy.sparse.csr_matrix(
            (np.ones(n), (self.block_id, np.arange(n))), shape=(self.n_blocks, n)
        )


def _correlate_to_centers(series, layout, var_eps):
    """Per-voxel correlation with its cube centre plus the pieces needed for the gradient."""
    nt = series.shape[1]
    centred = series - series.mean(axis=1, keepdims=True)
    sq = np.einsum("nt,nt->n", centred, centred)
    norm = np.sqrt(sq)
    flat = (sq / nt < var_eps) | (sq == 0.0)
    c_centred = centred[layout.voxel_center]
    c_norm = norm[layout.voxel_center]
    c_flat = flat[layout.voxel_center]
    degenerate = flat | c_flat
    denom = np.where(degenerate, 1.0, norm * c_norm)
    r = np.einsum("nt,nt->n", centred, c_centred) / denom
    r = np.where(degenerate, 0.0, np.clip(r, -1.0, 1.0))
    return r, centred, norm, degenerate


def _histograms(r, layout, cfg):
    nb = cfg.bins
    if cfg.soft:
        k0, frac = _soft_bins(r, nb)
        idx = layout.block_id * nb + k0
        h = np.bincount(idx, weights=1.0 - frac, minlength=layout.n_blocks * nb)
        h += np.bincount(idx + 1, weights=frac, minlength=layout.n_blocks * nb)
    else:
        k = np.clip(np.floor(_bin_coordinate(r, nb) + 0.5), 0, nb - 1).astype(np.int64)
        h = np.bincount(layout.block_id * nb + k, minlength=layout.n_blocks * nb).astype(float)
    return h.reshape(layout.n_blocks, nb)


def cube_histograms(series, layout: CubeLayout, cfg: FCConfig) -> np.ndarray:
    """Histograms of every cube, shape (n_blocks, bins), for ``series`` of shape (N, T)."""
    r, _, _, _ = _correlate_to_centers(series, layout, cfg.var_eps)
    return _histograms(r, layout, cfg)


def _bc_rows(hf, hr):
    sf, sr = hf.sum(axis=1), hr.sum(axis=1)
    if np.any(sf <= 0) or np.any(sr <= 0):
        raise ValueError("empty histogram")
    rho = np.sum(np.sqrt(hf * hr), axis=1) / np.sqrt(sf * sr)
    return np.sqrt(np.maximum(0.0, 1.0 - rho)), rho, sf, sr


def fc_loss_and_grad(fixed_hist, warped_series, layout: CubeLayout, cfg: FCConfig, need_grad=True):
    """Mean Bhattacharyya distance over eligible cubes and its gradient w.r.t. ``warped_series``.

    ``fixed_hist`` comes from :func:`cube_histograms` on the fixed image.
    The gradient uses ``SQRT_EPS`` floors inside the square roots and is zero
    for cubes whose distance is exactly 0.
    """
    n_elig = int(layout.eligible.sum())
    if n_elig == 0:
        raise ValueError("no eligible cubes")
    r, centred, norm, degenerate = _correlate_to_centers(warped_series, layout, cfg.var_eps)
    hr = _histograms(r, layout, cfg)
    dist, rho, sf, sr = _bc_rows(fixed_hist, hr)
    loss = float(np.sum(dist[layout.eligible]) / n_elig)
    if not need_grad:
        return loss, None
    if not cfg.soft:
        raise ValueError("non-differentiable configuration")

    # a cube whose histograms already match sits at the minimum of the square
    # root; take the zero subgradient there rather than amplifying rounding noise
    g_dist = np.where(dist > 0, layout.eligible / n_elig, 0.0)
    g_rho = -g_dist / (2.0 * np.sqrt(np.maximum(0.0, 1.0 - rho) + SQRT_EPS))
    d_rho_dh = fixed_hist / (2.0 * np.sqrt(fixed_hist * hr + SQRT_EPS)) / np.sqrt(sf * sr)[:, None]
    d_rho_dh -= (rho / (2.0 * sr))[:, None]
    g_hist = g_rho[:, None] * d_rho_dh

    nb = cfg.bins
    k0, _ = _soft_bins(r, nb)
    slope = (nb - 1) / 2.0
    g_r = (g_hist[layout.block_id, k0 + 1] - g_hist[layout.block_id, k0]) * slope
    g_r = np.where(degenerate, 0.0, g_r)

    safe = np.where(degenerate, 1.0, norm)
    c_idx = layout.voxel_center
    c_centred = centred[c_idx]
    c_safe = safe[c_idx]
    a = g_r / (safe * c_safe)
    # own series
    grad = a[:, None] * c_centred - (g_r * r / safe**2)[:, None] * centred
    # centre series, accumulated per cube
    to_center = layout.membership @ (a[:, None] * centred)
    coef = layout.membership @ (g_r * r)
    cf = layout.center_flat
    c_norm_b = safe[cf]
    grad[cf] += to_center - (coef / c_norm_b**2)[:, None] * centred[cf]
    return loss, grad


def fc_loss(f: TimeSeriesVolume, r: TimeSeriesVolume, cfg: FCConfig, mask: Optional[BrainMask] = None) -> float:
    """Mean cube-wise Bhattacharyya distance between the local-FC histograms of ``f`` and ``r``.

    Only cubes whose centre lies inside ``mask`` are averaged.
    """
    if f.data.shape != r.data.shape:
        raise ValueError(f"shape mismatch: {f.data.shape} vs {r.data.shape}")
    layout = CubeLayout(f.data.shape[:3], cfg.w, mask)
    nt = f.data.shape[3]
    hf = cube_histograms(f.data.reshape(-1, nt), layout, cfg)
    loss, _ = fc_loss_and_grad(hf, r.data.reshape(-1, nt), layout, cfg, need_grad=False)
    return loss


def fc_histograms(v: TimeSeriesVolume, cfg: FCConfig) -> List[FCHistogram]:
    """Per-cube histograms of one volume, in cube order."""
    layout = CubeLayout(v.data.shape[:3], cfg.w)
    h = cube_histograms(v.data.reshape(-1, v.data.shape[3]), layout, cfg)
    return [FCHistogram(h[i], c) for i, c in enumerate(layout.grid.centers)]
