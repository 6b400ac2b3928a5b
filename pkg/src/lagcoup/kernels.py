"""Compact-support SPH kernels (cubic spline, spiky) and their gradients.

All kernels are normalized so that the integral over their support equals 1
in the given spatial dimension. Evaluation is vectorized over displacement
arrays of shape (..., dim).
"""

import math
from dataclasses import dataclass

import numpy as np

CUBIC_SPLINE = "cubic_spline"
SPIKY = "spiky"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, support radius and spatial dimension."""

    kind: str
    support_radius: float
    dim: int

    def __post_init__(self):
        if self.kind not in (CUBIC_SPLINE, SPIKY):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.support_radius <= 0:
            raise ValueError("support radius must be positive")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")

    @property
    def sigma(self):
        """Normalization constant fixed by the unit-integral condition."""
        h = self.support_radius
        if self.kind == CUBIC_SPLINE:
            return 40.0 / (7.0 * math.pi * h * h) if self.dim == 2 else 8.0 / (math.pi * h**3)
        # spiky (1 - r/h)^3
        return 10.0 / (math.pi * h * h) if self.dim == 2 else 15.0 / (math.pi * h**3)


def _cubic_w(q):
    # normalized cubic spline on q = r/h in [0, 1]
    w = np.zeros_like(q)
    lo = q <= 0.5
    hi = (~lo) & (q < 1.0)
    ql = q[lo]
    w[lo] = 6.0 * (ql**3 - ql**2) + 1.0
    qh = q[hi]
    w[hi] = 2.0 * (1.0 - qh) ** 3
    return w


def _cubic_dw(q):
    dw = np.zeros_like(q)
    lo = q <= 0.5
    hi = (~lo) & (q < 1.0)
    ql = q[lo]
    dw[lo] = 6.0 * (3.0 * ql**2 - 2.0 * ql)
    qh = q[hi]
    dw[hi] = -6.0 * (1.0 - qh) ** 2
    return dw


def _spiky_w(q):
    w = np.zeros_like(q)
    m = q < 1.0
    w[m] = (1.0 - q[m]) ** 3
    return w


def _spiky_dw(q):
    dw = np.zeros_like(q)
    m = q < 1.0
    dw[m] = -3.0 * (1.0 - q[m]) ** 2
    return dw


def kernel_eval(spec: KernelSpec, r):
    """W(||r||) for displacement(s) r, zero outside the support radius."""
    r = np.asarray(r, dtype=float)
    dist = np.linalg.norm(r, axis=-1)
    q = dist / spec.support_radius
    if spec.kind == CUBIC_SPLINE:
        return spec.sigma * _cubic_w(q)
    return spec.sigma * _spiky_w(q)


def kernel_grad(spec: KernelSpec, r):
    """Gradient of W with respect to the first particle position.

    Returns the zero vector at r = 0 (the spiky gradient has a singular
    radial limit there; upstream barriers keep pairs separated, so the
    convention is purely defensive).
    """
    r = np.asarray(r, dtype=float)
    dist = np.linalg.norm(r, axis=-1)
    q = dist / spec.support_radius
    if spec.kind == CUBIC_SPLINE:
        dw = spec.sigma * _cubic_dw(q) / spec.support_radius
    else:
        dw = spec.sigma * _spiky_dw(q) / spec.support_radius
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(dist > 0.0, dw / np.where(dist > 0.0, dist, 1.0), 0.0)
    return scale[..., None] * r
