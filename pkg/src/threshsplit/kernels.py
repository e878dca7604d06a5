"""Second-order smoothing kernels.

Three families are supported, all symmetric, nonnegative, nonincreasing on
the positive half-line and integrating to one:

* ``gaussian``      K(v) = exp(-v^2/2) / sqrt(2 pi)
* ``uniform``       K(v) = 1 on [-1/2, 1/2]  (height one, so kappa2 = 1)
* ``epanechnikov``  K(v) = 0.75 (1 - v^2) on [-1, 1]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit

FAMILIES = ("gaussian", "uniform", "epanechnikov")
# integer codes used inside compiled kernels
KERNEL_CODES = {name: i for i, name in enumerate(FAMILIES)}

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")

    @property
    def code(self) -> int:
        return KERNEL_CODES[self.family]

    @property
    def support_radius(self) -> float:
        """Half-width of the support; ``math.inf`` for the gaussian."""
        return {"gaussian": math.inf, "uniform": 0.5, "epanechnikov": 1.0}[self.family]

    @property
    def k0(self) -> float:
        return float(eval_kernel(self, 0.0))

    def __call__(self, v):
        return eval_kernel(self, v)


GAUSSIAN = KernelSpec("gaussian")


def _as_spec(spec) -> KernelSpec:
    return spec if isinstance(spec, KernelSpec) else KernelSpec(str(spec))


def eval_kernel(spec, v):
    """Evaluate K at ``v`` (scalar or array); zero outside compact supports."""
    spec = _as_spec(spec)
    v = np.asarray(v, dtype=float)
    if spec.family == "gaussian":
        out = np.exp(-0.5 * v * v) / _SQRT_2PI
    elif spec.family == "uniform":
        out = np.where(np.abs(v) <= 0.5, 1.0, 0.0)
    else:
        out = np.where(np.abs(v) <= 1.0, 0.75 * (1.0 - v * v), 0.0)
    return out if out.ndim else float(out)


def kappa2(spec) -> float:
    """Closed-form squared integral of the kernel."""
    spec = _as_spec(spec)
    if spec.family == "gaussian":
        return 1.0 / (2.0 * math.sqrt(math.pi))
    if spec.family == "uniform":
        return 1.0
    return 0.6


def product_kernel(spec, u, v):
    """Separable bivariate kernel K(u) K(v)."""
    return eval_kernel(spec, u) * eval_kernel(spec, v)


@njit
def kernel_weights_nb(code, v):
    """Compiled counterpart of :func:`eval_kernel` over a 1-d array."""
    out = np.empty(v.shape[0])
    for i in range(v.shape[0]):
        x = v[i]
        if code == 0:
            out[i] = math.exp(-0.5 * x * x) / 2.5066282746310002
        elif code == 1:
            out[i] = 1.0 if abs(x) <= 0.5 else 0.0
        else:
            out[i] = 0.75 * (1.0 - x * x) if abs(x) <= 1.0 else 0.0
    return out
