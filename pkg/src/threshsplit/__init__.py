"""Threshold regression with a threshold that varies with a covariate.

The model is ``y = x'beta + x'delta 1{q <= gamma0(s)} + u``; ``gamma0`` is
estimated pointwise by kernel-weighted least squares.
"""

from __future__ import annotations

__version__ = "0.1.0"

from ._accel import backend, set_threads  # noqa: E402
from .bandwidth import CVResult, loo_cv_criterion, select_bandwidth  # noqa: E402
from .contour import ContourEstimate, estimate_contour, polar_transform, rotate  # noqa: E402
from .data import Dataset, EvalWindow, RasterGrid, load_csv_dataset, load_raster_grid, make_eval_window  # noqa: E402
from .errors import ThreshSplitError  # noqa: E402
from .inference import (  # noqa: E402
    conley_lrv,
    invert_ci,
    lr_critical_value,
    lr_statistic,
    lr_test,
    theta_vcov,
    xi_lr_hat,
)
from .kernels import KernelSpec, eval_kernel, kappa2, product_kernel  # noqa: E402
from .local_threshold import (  # noqa: E402
    ThresholdCurve,
    concentrated_sse,
    estimate_gamma_at,
    estimate_threshold_curve,
)
from .simulation import SimConfig, SimReport, run_coverage_study, run_rejection_study, simulate_argmax  # noqa: E402
from .two_step import ThetaEstimate, estimate_theta, truncation_pi_n  # noqa: E402

__all__ = [name for name in dir() if not name.startswith("_")]
