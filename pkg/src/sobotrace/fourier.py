"""Fourier multiplier of the unit-ball screened energy and its growth bounds.

For frequency ``xi`` the multiplier is

    m(xi) = int_{B(0,1)} 4 sin^2(pi h . xi) / |h|^(d+2s) dh,

so that on a torus the screened energy with unit screening radius equals the
multiplier-weighted power spectrum.  The angular integral is closed form
(cosine in one dimension, a Bessel function in two), which leaves a single
radial integral handled by geometric Gauss panels plus an analytic estimate of
the core below the smallest panel.

Three comparison constants frame the growth of ``m``:

* ``c1``: the same integrand at unit frequency over the half ball, the valid
  lower factor for ``|xi| >= 1/2``;
* ``c2``: the half-order kernel integrated over all of space, an upper factor
  tied specifically to ``s = 1/2``.  For other orders the comparison is not
  sound (the high-frequency plateau of the jump term scales differently), so
  the bound check only engages it there;
* ``c3``: the quadratic-regime constant ``pi^2 A_d / (2 - 2s)`` with ``A_d``
  the second moment of the unit sphere; ``c3 |xi|^2 <= m <= 4 c3 |xi|^2``
  holds for ``|xi| <= 1/2`` at every order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import j0

from .fields import gauss_geometric_panels, unit_sphere_area
from .seminorms import CheckResult, Constant, screened_seminorm

__all__ = [
    "multiplier_m",
    "multiplier_constants",
    "multiplier_bounds_check",
    "seminorm_plancherel_check",
    "BoundsRow",
    "BoundsResult",
]

DEFAULT_R_MIN = 1e-4
C2_CUTOFF_RADIUS = 16.0
PANEL_RATIO = 2.0
PANEL_ORDER = 16


def _sphere_second_moment(dim: int) -> float:
    """Integral of the squared first coordinate over the unit sphere."""
    return unit_sphere_area(dim) / dim


def _jump_angular(z: np.ndarray, dim: int) -> np.ndarray:
    """Direction integral of ``4 sin^2(z omega_1 / 2)`` over the unit sphere."""
    if dim == 1:
        return 4.0 * (1.0 - np.cos(z))
    if dim == 2:
        return 4.0 * np.pi * (1.0 - j0(z))
    raise ValueError(f"multiplier supports 1 or 2 dimensions, got {dim}")


def _ball_integral(freq: np.ndarray, s: float, dim: int, radius: float,
                   r_min: float) -> np.ndarray:
    """Radial-panel value of the jump energy over ``B(0, radius)``.

    The omitted core below ``r_min`` is restored analytically from the
    quadratic behaviour of the jump term; the model error is
    ``O((pi r_min freq)^2)`` relative to an already tiny correction.
    """
    freq = np.atleast_1d(np.asarray(freq, dtype=float))
    r, w = gauss_geometric_panels(r_min, radius, PANEL_RATIO, PANEL_ORDER)
    kernel = w * r ** (-1.0 - 2.0 * s)
    vals = _jump_angular(2.0 * np.pi * r[None, :] * freq[:, None], dim) @ kernel
    core = (4.0 * np.pi ** 2 * freq ** 2 * _sphere_second_moment(dim)
            * r_min ** (2.0 - 2.0 * s) / (2.0 - 2.0 * s))
    return vals + core


def multiplier_m(xi, s: float, dim: int, r_min: float = DEFAULT_R_MIN):
    """Multiplier at frequency magnitude ``xi`` (rotation invariant).

    Accepts a scalar or an array of magnitudes and returns matching shape.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order s = {s} must lie in (0, 1)")
    xi_arr = np.abs(np.atleast_1d(np.asarray(xi, dtype=float)))
    out = _ball_integral(xi_arr, s, dim, 1.0, r_min)
    if np.isscalar(xi) or np.asarray(xi).ndim == 0:
        return float(out[0])
    return out.reshape(np.shape(xi))


def multiplier_constants(s: float, dim: int,
                         r_min: float = DEFAULT_R_MIN) -> dict:
    """The two-sided comparison constants, with the far-field uncertainty.

    ``c2`` truncates its infinite integral at a cutoff radius; the mean tail
    beyond it is added back in closed form and the oscillatory remainder is
    reported as ``c2_uncertainty``.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order s = {s} must lie in (0, 1)")
    c1 = float(_ball_integral(np.array([1.0]), s, dim, 0.5, r_min)[0])
    c3 = np.pi ** 2 * _sphere_second_moment(dim) / (2.0 - 2.0 * s)
    R = C2_CUTOFF_RADIUS
    body = float(_ball_integral(np.array([1.0]), 0.5, dim, R, r_min)[0])
    mean_tail = 2.0 * unit_sphere_area(dim) / R
    if dim == 1:
        # integration by parts of the cosine remainder
        osc = 4.0 / (2.0 * np.pi * R ** 2) * (1.0 + 1.0 / R)
    else:
        # |J0(z)| <= sqrt(2 / (pi z)) far-field envelope
        osc = (4.0 * np.pi / np.sqrt(2.0 * np.pi ** 2)
               * (2.0 / 3.0) * R ** (-1.5))
    return {"c1": c1, "c2": body + mean_tail, "c2_uncertainty": osc, "c3": c3}


@dataclass
class BoundsRow:
    xi: float
    m: float
    lower: float
    upper: float | None
    regime: str
    ok: bool


@dataclass
class BoundsResult:
    rows: list
    constants: dict
    s: float
    dim: int
    passed: bool


def multiplier_bounds_check(s: float, dim: int, xi_values,
                            r_min: float = DEFAULT_R_MIN) -> BoundsResult:
    """Verify the two-regime growth envelope of the multiplier.

    Low frequencies (``|xi| <= 1/2``) are pinched between ``c3 |xi|^2`` and
    ``4 c3 |xi|^2``.  High frequencies are bounded below by ``c1 |xi|^(2s)``;
    the matching upper bound ``c2 |xi|^(2s)`` applies at ``s = 1/2`` only and
    is skipped elsewhere (rows then carry ``upper=None``).
    """
    constants = multiplier_constants(s, dim, r_min)
    xi_arr = np.abs(np.atleast_1d(np.asarray(xi_values, dtype=float)))
    m_vals = _ball_integral(xi_arr, s, dim, 1.0, r_min)
    use_c2 = abs(s - 0.5) < 1e-12
    c2_hi = constants["c2"] + constants["c2_uncertainty"]
    rows = []
    tol = 1e-9
    for xi, m in zip(xi_arr, m_vals):
        if xi <= 0.5:
            lower = constants["c3"] * xi ** 2
            upper = 4.0 * constants["c3"] * xi ** 2
            regime = "quadratic"
            ok = lower * (1.0 - tol) <= m <= upper * (1.0 + tol)
        else:
            lower = constants["c1"] * xi ** (2.0 * s)
            regime = "power"
            ok = m >= lower * (1.0 - tol)
            upper = None
            if use_c2:
                upper = constants["c2"] * xi ** (2.0 * s)
                ok = ok and m <= c2_hi * xi ** (2.0 * s) * (1.0 + tol)
        rows.append(BoundsRow(float(xi), float(m), float(lower),
                              None if upper is None else float(upper),
                              regime, bool(ok)))
    return BoundsResult(rows, constants, s, dim, all(r.ok for r in rows))


def seminorm_plancherel_check(f, s: float, tolerance: float = 1e-2,
                              n_angular: int = 24,
                              r_min: float = DEFAULT_R_MIN) -> CheckResult:
    """Real-space unit-ball energy against the multiplier-weighted spectrum.

    Requires an all-periodic grid.  The spectral side is exact for fields
    resolved on the grid, so the relative gap measures the polar quadrature
    and interpolation error of the real-space engine.
    """
    grid = f.grid
    if any(not per for per in grid.box.periodic):
        raise ValueError("the spectral identity needs an all-periodic grid")
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order s = {s} must lie in (0, 1)")
    lhs = screened_seminorm(f, Constant(1.0), s, 2.0, n_angular=n_angular).value_p
    coeffs = np.fft.fftn(f.values) / np.prod(f.values.shape)
    axes_freq = [np.fft.fftfreq(n, d=grid.spacing[i])
                 for i, n in enumerate(f.values.shape)]
    mesh = np.meshgrid(*axes_freq, indexing="ij")
    mags = np.sqrt(sum(g ** 2 for g in mesh)).reshape(-1)
    unique, inverse = np.unique(np.round(mags, 12), return_inverse=True)
    m_unique = _ball_integral(unique, s, grid.ndim, 1.0, r_min)
    volume = float(np.prod(grid.box.extent))
    power = np.abs(coeffs.reshape(-1)) ** 2
    rhs = volume * float(power @ m_unique[inverse])
    gap = abs(lhs - rhs) / max(rhs, 1e-300)
    return CheckResult(lhs, rhs, 1.0, tolerance, gap <= tolerance,
                       {"relative_gap": gap, "modes": int(power.size)})
