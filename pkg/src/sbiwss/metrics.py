"""Relative L2 errors of WSS profiles along the comparison curve."""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .profile import WallSamples
from .quadrature import gauss_legendre

N_GAMMA = 200


class MetricError(ValueError):
    pass


def build_gamma(geom, region, n=N_GAMMA, side="top"):
    """Arc-length-uniform wall samples on one wall inside the scan region's x-range.

    ``region`` is ``(x0, x1, y0, y1)`` or anything with a ``region`` attribute.
    """
    if hasattr(region, "region"):
        region = region.region
    x0 = max(float(region[0]), geom.bbox[0])
    x1 = min(float(region[1]), geom.bbox[1])
    if not x1 > x0:
        raise MetricError(f"scan region {tuple(region)} does not overlap the wall")
    s, pts, nrm = geom.wall_samples(x0, x1, n, side=side)
    return WallSamples(np.asarray(s), np.asarray(pts), np.asarray(nrm), side)


def _panel_integral(s, f, order):
    """Integral over [s0, s_end] of f (callable), Gauss-Legendre per panel."""
    xg, wg = gauss_legendre(order)
    a = s[:-1, None]
    h = np.diff(s)[:, None]
    pts = a + h * xg[None, :]
    return float(np.sum(h * wg[None, :] * f(pts)))


def relative_l2_error(ref, test, quad_order=5):
    """100 * ||ref - test||_L2(Gamma) / ||ref||_L2(Gamma), in percent.

    Both profiles are interpolated with cubic splines in arc length and
    integrated panel by panel between samples.
    """
    s = np.asarray(ref.s, dtype=float)
    if len(s) != len(test.s) or not np.allclose(s, test.s, rtol=0, atol=1e-12 * max(1.0, s[-1])):
        raise MetricError("profiles are not sampled on the same arc-length grid")
    if len(s) < 2:
        raise MetricError("need at least two samples")
    fr = CubicSpline(s, ref.wss)
    ft = CubicSpline(s, test.wss)
    den = _panel_integral(s, lambda x: fr(x) ** 2, quad_order)
    if not den > 0:
        raise MetricError("reference profile has zero norm")
    num = _panel_integral(s, lambda x: (fr(x) - ft(x)) ** 2, quad_order)
    return 100.0 * np.sqrt(num / den)


@dataclass
class ErrorReport:
    e_sbi: float
    e_mri: float
    abs_err_sbi: np.ndarray = field(repr=False)
    abs_err_mri: np.ndarray = field(repr=False)
    side: str = "top"
    s_range: tuple = (0.0, 0.0)
    quad_order: int = 5


def error_report(truth, mri, sbi, quad_order=5, side="top"):
    return ErrorReport(
        e_sbi=relative_l2_error(truth, sbi, quad_order),
        e_mri=relative_l2_error(truth, mri, quad_order),
        abs_err_sbi=np.abs(sbi.wss - truth.wss),
        abs_err_mri=np.abs(mri.wss - truth.wss),
        side=side,
        s_range=(float(truth.s[0]), float(truth.s[-1])),
        quad_order=quad_order,
    )
