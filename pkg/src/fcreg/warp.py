"""Trilinear spatial-transformer warping and displacement-field downsampling.

Sampling convention: ``out(p) = M(p - u(p))``. Samples that fall outside the
grid see zeros for the missing neighbours.
"""

import itertools

import numpy as np

from .volume import DisplacementField, ScalarVolume, TimeSeriesVolume

_CORNERS = tuple(itertools.product((0, 1), repeat=3))


def _sample_points(vectors):
    """Absolute sample coordinates ``p - u(p)`` for a field of shape (nx, ny, nz, 3)."""
    nx, ny, nz = vectors.shape[:3]
    grid = np.stack(np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij"), axis=-1)
    return grid.reshape(-1, 3) - vectors.reshape(-1, 3)


def _corner_terms(shape, points):
    """Yield ``(flat_index, valid, weights, dweights)`` for each of the 8 corners.

    ``weights`` is the product of the 1D hat weights, ``dweights[:, d]`` its
    derivative with respect to the sample coordinate along axis d.
    """
    base = np.floor(points)
    frac = points - base
    base = base.astype(np.int64)
    dims = np.asarray(shape[:3])
    strides = np.array([shape[1] * shape[2], shape[2], 1])
    for corner in _CORNERS:
        c = np.asarray(corner)
        idx = base + c
        valid = np.all((idx >= 0) & (idx < dims), axis=1)
        flat = np.where(valid, idx @ strides, 0)
        w1 = np.where(c == 1, frac, 1.0 - frac)
        dw1 = np.where(c == 1, 1.0, -1.0)
        w = w1[:, 0] * w1[:, 1] * w1[:, 2]
        dw = np.empty_like(w1)
        dw[:, 0] = dw1[0] * w1[:, 1] * w1[:, 2]
        dw[:, 1] = w1[:, 0] * dw1[1] * w1[:, 2]
        dw[:, 2] = w1[:, 0] * w1[:, 1] * dw1[2]
        yield flat, valid, w, dw


def interpolate(data, points):
    """Trilinear values of ``data`` (shape (nx, ny, nz) or (nx, ny, nz, C)) at ``points`` (N, 3)."""
    flat_data = data.reshape(data.shape[0] * data.shape[1] * data.shape[2], -1)
    out = np.zeros((points.shape[0], flat_data.shape[1]))
    for flat, valid, w, _ in _corner_terms(data.shape, points):
        out += (w * valid)[:, None] * flat_data[flat]
    return out if data.ndim == 4 else out[:, 0]


def interpolate_vjp(data, points, grad_out):
    """Gradient of ``sum(grad_out * interpolate(data, points))`` w.r.t. ``points``.

    Uses the one-sided (right) derivative of the hat weights at lattice
    coordinates.
    """
    flat_data = data.reshape(data.shape[0] * data.shape[1] * data.shape[2], -1)
    g = grad_out.reshape(points.shape[0], -1)
    grad = np.zeros((points.shape[0], 3))
    for flat, valid, _, dw in _corner_terms(data.shape, points):
        s = np.einsum("nc,nc->n", g, flat_data[flat]) * valid
        grad += dw * s[:, None]
    return grad


def trilinear_sample(v: ScalarVolume, s) -> float:
    """Interpolate ``v`` at the real voxel coordinate ``s = (px, py, pz)``."""
    p = np.asarray(s, dtype=float).reshape(1, 3)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"sample point {tuple(s)} is not finite")
    return float(interpolate(v.data, p)[0])


def _check_field(field, spatial_shape):
    if tuple(field.vectors.shape[:3]) != tuple(spatial_shape):
        raise ValueError(
            f"field shape {field.vectors.shape[:3]} does not match image shape {tuple(spatial_shape)}"
        )


def warp_scalar(m: ScalarVolume, field: DisplacementField) -> ScalarVolume:
    _check_field(field, m.data.shape)
    out = interpolate(m.data, _sample_points(field.vectors))
    return ScalarVolume(out.reshape(m.data.shape), m.spacing)


def warp_time_series(m: TimeSeriesVolume, field: DisplacementField) -> TimeSeriesVolume:
    """Apply one 3D field to every frame of ``m``."""
    _check_field(field, m.data.shape[:3])
    out = interpolate(m.data, _sample_points(field.vectors))
    return TimeSeriesVolume(out.reshape(m.data.shape), m.spacing)


def warp_labels(labels, field: DisplacementField):
    """Nearest-neighbour warp of an integer label array; outside samples become 0."""
    lab = np.asarray(labels)
    _check_field(field, lab.shape)
    pts = np.rint(_sample_points(field.vectors)).astype(np.int64)
    dims = np.asarray(lab.shape)
    valid = np.all((pts >= 0) & (pts < dims), axis=1)
    pts = np.where(valid[:, None], pts, 0)
    out = np.where(valid, lab[pts[:, 0], pts[:, 1], pts[:, 2]], 0)
    return out.reshape(lab.shape)


def _check_factor(shape, factor):
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsampling factor must be a positive integer, got {factor!r}")
    if any(n % factor for n in shape):
        raise ValueError(f"grid {tuple(shape)} is not divisible by factor {factor}")


def downsample_field(field: DisplacementField, factor: int) -> DisplacementField:
    """Block-mean over ``factor**3`` voxels, then rescale to coarse-grid voxel units."""
    factor = int(factor)
    nx, ny, nz = field.vectors.shape[:3]
    _check_factor((nx, ny, nz), factor)
    blocks = field.vectors.reshape(nx // factor, factor, ny // factor, factor, nz // factor, factor, 3)
    coarse = blocks.mean(axis=(1, 3, 5)) / factor
    spacing = tuple(s * factor for s in field.spacing)
    return DisplacementField(coarse, spacing)


def downsample_adjoint(grad_coarse, factor: int):
    """Transpose of :func:`downsample_field` applied to a coarse (nx, ny, nz, 3) array."""
    g = np.asarray(grad_coarse) / float(factor**4)
    for axis in range(3):
        g = np.repeat(g, factor, axis=axis)
    return g
