"""Composite registration objective, its gradient, and the Adam driver.

The loss of a displacement field ``u`` on the structural grid is::

    L(u) = MSE(F_t1, M_t1 o u) + lambda * Lf(F_f, M_f o D(u)) + gamma * S(u)

where ``D`` is :func:`fcreg.warp.downsample_field`, ``Lf`` the local-FC
Bhattacharyya loss and ``S`` the sum of squared forward differences.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import warp
from .funcconn import CubeLayout, FCConfig, cube_histograms, fc_loss_and_grad
from .volume import BrainMask, DisplacementField, ScalarVolume, TimeSeriesVolume, check_mask

logger = logging.getLogger(__name__)


class RegistrationDiverged(RuntimeError):
    def __init__(self, iteration, breakdown=None):
        self.iteration = iteration
        self.breakdown = breakdown
        super().__init__(f"diverged: non-finite loss at iteration {iteration}")


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.01
    gamma: float = 0.01

    def __post_init__(self):
        if not (self.lam >= 0 and self.gamma >= 0):
            raise ValueError(f"loss weights must be non-negative, got lambda={self.lam}, gamma={self.gamma}")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    iterations: int = 300
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    grad_mode: str = "analytic"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if int(self.iterations) != self.iterations or self.iterations < 0:
            raise ValueError(f"iterations must be a non-negative integer, got {self.iterations}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError(f"seed must be an unsigned integer, got {self.seed}")
        if self.grad_mode not in ("analytic", "finite_difference"):
            raise ValueError(f"grad_mode must be 'analytic' or 'finite_difference', got {self.grad_mode!r}")


@dataclass(frozen=True)
class LossBreakdown:
    t1_sim: float
    f_sim: float
    smooth: float
    total: float

    def as_dict(self):
        return {"t1_sim": self.t1_sim, "f_sim": self.f_sim, "smooth": self.smooth, "total": self.total}


def mse_loss(f: ScalarVolume, r: ScalarVolume, mask: Optional[BrainMask] = None) -> float:
    if f.data.shape != r.data.shape:
        raise ValueError(f"shape mismatch: {f.data.shape} vs {r.data.shape}")
    sel = check_mask(mask, f.data.shape)
    if not sel.any():
        raise ValueError("empty domain")
    return float(np.mean((f.data[sel] - r.data[sel]) ** 2))


def _smoothness(u):
    total = 0.0
    grad = np.zeros_like(u)
    for axis in range(3):
        d = np.diff(u, axis=axis)
        total += float(np.sum(d * d))
        lo = [slice(None)] * 4
        hi = [slice(None)] * 4
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        grad[tuple(hi)] += 2.0 * d
        grad[tuple(lo)] -= 2.0 * d
    return total, grad


def smoothness_loss(field: DisplacementField) -> float:
    """Sum over voxels and axes of squared forward differences; the far face contributes nothing."""
    return _smoothness(field.vectors)[0]


def _check_shapes(fT1, mT1, ff, mf, factor):
    if fT1.data.shape != mT1.data.shape:
        raise ValueError(f"T1 shapes differ: {fT1.data.shape} vs {mT1.data.shape}")
    if ff.data.shape != mf.data.shape:
        raise ValueError(f"fMRI shapes differ: {ff.data.shape} vs {mf.data.shape}")
    factor = int(factor)
    if factor < 1 or tuple(n * factor for n in ff.data.shape[:3]) != fT1.data.shape:
        raise ValueError(
            f"T1 grid {fT1.data.shape} is not fMRI grid {ff.data.shape[:3]} times factor {factor}"
        )
    return factor


class Objective:
    """The composite loss for one image pair, with reusable precomputation.

    Fixed-image histograms, the cube layout and sample grids are built once
    so that repeated evaluations inside :func:`register` stay cheap.
    """

    def __init__(self, fT1, mT1, ff, mf, weights: LossWeights, cfg: FCConfig, factor: int = 1, fmri_mask=None):
        self.factor = _check_shapes(fT1, mT1, ff, mf, factor)
        self.fT1, self.mT1, self.ff, self.mf = fT1, mT1, ff, mf
        self.weights = weights
        self.cfg = cfg
        self.shape = fT1.data.shape
        self.nt = ff.data.shape[3]
        self._fixed_t1 = fT1.data.ravel()
        self._use_fc = weights.lam > 0
        self.layout = CubeLayout(ff.data.shape[:3], cfg.w, fmri_mask)
        self._fixed_hist = cube_histograms(ff.data.reshape(-1, self.nt), self.layout, cfg)

    def _fc_term(self, u, need_grad):
        coarse = warp.downsample_field(DisplacementField(u), self.factor).vectors
        pts = warp._sample_points(coarse)
        warped = warp.interpolate(self.mf.data, pts)
        loss, g_series = fc_loss_and_grad(self._fixed_hist, warped, self.layout, self.cfg, need_grad)
        if not need_grad:
            return loss, None
        # d(sample point)/du = -1
        g_coarse = -warp.interpolate_vjp(self.mf.data, pts, g_series).reshape(coarse.shape)
        return loss, warp.downsample_adjoint(g_coarse, self.factor)

    def evaluate(self, u, need_grad=True):
        """Return (LossBreakdown, gradient or None) for displacement array ``u`` (nx, ny, nz, 3)."""
        u = np.asarray(u, dtype=float)
        if u.shape != self.shape + (3,):
            raise ValueError(f"field shape {u.shape[:3]} does not match T1 grid {self.shape}")
        pts = warp._sample_points(u)
        warped = warp.interpolate(self.mT1.data, pts)
        resid = warped - self._fixed_t1
        t1 = float(np.mean(resid**2))
        smooth, g_smooth = _smoothness(u)
        f_sim, g_fc = self._fc_term(u, need_grad and self._use_fc)
        lam, gam = self.weights.lam, self.weights.gamma
        total = t1 + lam * f_sim + gam * smooth
        bd = LossBreakdown(t1, f_sim, smooth, total)
        if not need_grad:
            return bd, None
        g = -warp.interpolate_vjp(self.mT1.data, pts, 2.0 * resid / resid.size).reshape(u.shape)
        g += gam * g_smooth
        if self._use_fc:
            g += lam * g_fc
        return bd, g

    def loss(self, u) -> LossBreakdown:
        return self.evaluate(u, need_grad=False)[0]

    def finite_difference_gradient(self, u, step=1e-3):
        """Central differences of the total loss over every field component."""
        u = np.array(u, dtype=float)
        g = np.zeros_like(u)
        flat_u, flat_g = u.reshape(-1), g.reshape(-1)
        for i in range(flat_u.size):
            keep = flat_u[i]
            flat_u[i] = keep + step
            up = self.loss(u).total
            flat_u[i] = keep - step
            down = self.loss(u).total
            flat_u[i] = keep
            flat_g[i] = (up - down) / (2.0 * step)
        return g


def total_loss(fT1, mT1, ff, mf, field: DisplacementField, w8: LossWeights, cfg: FCConfig, factor: int = 1) -> LossBreakdown:
    obj = Objective(fT1, mT1, ff, mf, w8, cfg, factor)
    return obj.loss(field.vectors)


def loss_gradient(fT1, mT1, ff, mf, field: DisplacementField, w8: LossWeights, cfg: FCConfig, factor: int = 1,
                  grad_mode: str = "analytic", step: float = 1e-3) -> np.ndarray:
    """Gradient of the total loss w.r.t. every component of ``field``, shape (nx, ny, nz, 3)."""
    if grad_mode == "analytic" and w8.lam > 0 and not cfg.soft:
        raise ValueError("non-differentiable configuration")
    obj = Objective(fT1, mT1, ff, mf, w8, cfg, factor)
    if grad_mode == "finite_difference":
        return obj.finite_difference_gradient(field.vectors, step)
    if grad_mode != "analytic":
        raise ValueError(f"unknown grad_mode {grad_mode!r}")
    return obj.evaluate(field.vectors)[1]


def register(fT1, mT1, ff, mf, w8: LossWeights, cfg: FCConfig, opt: OptimizerConfig, factor: int = 1,
             callback=None):
    """Optimise a displacement field from zero with Adam.

    Returns ``(field, history)`` where ``history[i]`` is the loss breakdown
    evaluated at the field before update ``i``. The procedure draws no random
    numbers, so equal inputs always give bit-identical fields.
    """
    if opt.grad_mode == "analytic" and w8.lam > 0 and not cfg.soft:
        raise ValueError("non-differentiable configuration")
    obj = Objective(fT1, mT1, ff, mf, w8, cfg, factor)
    u = np.zeros(obj.shape + (3,))
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    history: List[LossBreakdown] = []
    b1, b2 = opt.beta1, opt.beta2
    for it in range(int(opt.iterations)):
        if opt.grad_mode == "analytic":
            bd, g = obj.evaluate(u)
        else:
            bd, g = obj.loss(u), obj.finite_difference_gradient(u)
        if not np.isfinite(bd.total) or not np.all(np.isfinite(g)):
            raise RegistrationDiverged(it, bd)
        history.append(bd)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        mhat = m / (1.0 - b1 ** (it + 1))
        vhat = v / (1.0 - b2 ** (it + 1))
        u = u - opt.learning_rate * mhat / (np.sqrt(vhat) + opt.adam_eps)
        if callback is not None:
            callback(it, bd, u)
        if it % 50 == 0:
            logger.debug("iter %d total=%.6g t1=%.6g f=%.6g smooth=%.6g", it, bd.total, bd.t1_sim, bd.f_sim, bd.smooth)
    return DisplacementField(u, fT1.spacing), history
