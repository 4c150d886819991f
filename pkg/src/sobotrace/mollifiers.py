"""Radial mollifiers with prescribed vanishing moments and their kernels.

The profile is ``phi(y) = (1 - |y|^2)^(m+1) psi(|y|^2)`` on the unit ball of
``R^d``, with ``psi`` a polynomial of degree ``l = ceil(k/2)``.  Substituting
``s = r^2`` turns the mass and moment conditions into a linear system for the
coefficients of ``psi`` against the weighted inner product

    <f, g> = (1/2) * int_0^1 f(s) g(s) s^((d-2)/2) (1 - s)^(m+1) ds,

whose Gram entries are Beta function values in closed form.  The resulting
``phi`` is ``C^m``, has unit mass, and all monomial moments through order
``k`` vanish (odd ones by radial symmetry, even ones by construction).

Derivative kernels ``psi_alpha`` reproduce vertical and horizontal
derivatives of the scaled family:

    D^alpha_x [ x_v^(-d) phi((x' - y') / x_v) ]
        = x_v^(-(|alpha| + d)) psi_alpha((x' - y') / x_v),

where ``x_v`` denotes the scaling (vertical) variable and ``alpha`` has
``d + 1`` entries, the last one counting vertical derivatives.  They follow
from ``phi`` by the recursion

    psi_(alpha + e_i) = d_i psi_alpha                     (horizontal i),
    psi_(alpha + e_v) = -(|alpha| + d) psi_alpha - y . grad psi_alpha,

and every kernel with ``|alpha| >= 1`` has zero mean.
"""

from __future__ import annotations

import json
import math
import warnings

import numpy as np
from scipy.special import betaln

from .fields import unit_sphere_area

__all__ = [
    "Mollifier",
    "DerivativeKernel",
    "build_moment_mollifier",
    "eval_scaled",
    "derivative_kernel",
    "moment_table",
    "mollifier_to_json",
    "mollifier_from_json",
]

MOMENT_TOLERANCE = 1e-9
CONDITIONING_WARNING_ORDER = 8


class _Poly:
    """Sparse polynomial in d variables, exponent tuple -> coefficient."""

    def __init__(self, d: int, terms: dict[tuple[int, ...], float] | None = None):
        self.d = d
        self.terms = {k: v for k, v in (terms or {}).items() if v != 0.0}

    def __add__(self, other: "_Poly") -> "_Poly":
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0.0) + v
        return _Poly(self.d, out)

    def __mul__(self, other: "_Poly") -> "_Poly":
        out: dict[tuple[int, ...], float] = {}
        for ka, va in self.terms.items():
            for kb, vb in other.terms.items():
                key = tuple(a + b for a, b in zip(ka, kb))
                out[key] = out.get(key, 0.0) + va * vb
        return _Poly(self.d, out)

    def scaled(self, c: float) -> "_Poly":
        return _Poly(self.d, {k: c * v for k, v in self.terms.items()})

    def diff(self, axis: int) -> "_Poly":
        out: dict[tuple[int, ...], float] = {}
        for k, v in self.terms.items():
            if k[axis] == 0:
                continue
            key = tuple(a - 1 if i == axis else a for i, a in enumerate(k))
            out[key] = out.get(key, 0.0) + v * k[axis]
        return _Poly(self.d, out)

    def times_var(self, axis: int) -> "_Poly":
        return _Poly(
            self.d,
            {
                tuple(a + 1 if i == axis else a for i, a in enumerate(k)): v
                for k, v in self.terms.items()
            },
        )

    def eval(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for k, v in self.terms.items():
            term = np.full(pts.shape[:-1], v)
            for i, a in enumerate(k):
                if a:
                    term = term * pts[..., i] ** a
            out += term
        return out


def _radial_power_poly(d: int, profile: np.ndarray) -> _Poly:
    """Expand ``sum_j profile[j] |y|^(2j)`` into a polynomial in y."""
    r2 = _Poly(d)
    for i in range(d):
        key = tuple(2 if j == i else 0 for j in range(d))
        r2 = r2 + _Poly(d, {key: 1.0})
    out = _Poly(d, {(0,) * d: float(profile[0])})
    power = _Poly(d, {(0,) * d: 1.0})
    for c in profile[1:]:
        power = power * r2
        out = out + power.scaled(float(c))
    return out


class Mollifier:
    """Radial moment mollifier on the unit ball of ``R^d``."""

    def __init__(self, dim: int, smoothness_m: int, moment_order_k: int,
                 psi_coeffs: np.ndarray):
        self.dim = int(dim)
        self.smoothness_m = int(smoothness_m)
        self.moment_order_k = int(moment_order_k)
        self.psi_coeffs = np.asarray(psi_coeffs, dtype=float)
        # profile of phi in s = r^2: (1 - s)^(m+1) psi(s)
        binom = np.zeros(self.smoothness_m + 2)
        for j in range(self.smoothness_m + 2):
            binom[j] = (-1.0) ** j * math.comb(self.smoothness_m + 1, j)
        self.profile = np.convolve(binom, self.psi_coeffs)
        self.poly = _radial_power_poly(self.dim, self.profile)

    def profile_at(self, r: np.ndarray) -> np.ndarray:
        """Radial profile ``phi(r)``, zero outside the unit ball."""
        r = np.asarray(r, dtype=float)
        s = r * r
        val = np.polynomial.polynomial.polyval(s, self.profile)
        return np.where(np.abs(r) <= 1.0, val, 0.0)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        """Values at points of shape ``(..., dim)``."""
        pts = np.asarray(pts, dtype=float)
        r2 = np.sum(pts * pts, axis=-1)
        val = np.polynomial.polynomial.polyval(r2, self.profile)
        return np.where(r2 <= 1.0, val, 0.0)


class DerivativeKernel:
    """Kernel ``psi_alpha`` generated by a mollifier.

    ``alpha`` has ``dim + 1`` entries; the last counts derivatives in the
    scaling variable.  Kernels with ``|alpha| >= 1`` integrate to zero.
    """

    def __init__(self, alpha: tuple[int, ...], dim: int, poly: _Poly):
        self.alpha = tuple(int(a) for a in alpha)
        self.dim = dim
        self.poly = poly

    @property
    def order(self) -> int:
        return sum(self.alpha)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        r2 = np.sum(pts * pts, axis=-1)
        return np.where(r2 <= 1.0, self.poly.eval(pts), 0.0)

    def eval_scaled(self, eps: float, pts: np.ndarray) -> np.ndarray:
        """``eps^-(|alpha| + dim) psi_alpha(pts / eps)``."""
        return float(eps) ** -(self.order + self.dim) * self(
            np.asarray(pts, dtype=float) / float(eps)
        )


def build_moment_mollifier(dim: int, moment_order_k: int, smoothness_m: int) -> Mollifier:
    """Construct the radial mollifier with ``k`` vanishing moments.

    Parameters
    ----------
    dim : int
        Ambient dimension, at least 1.
    moment_order_k : int
        Monomial moments through this total order vanish; the mass is 1.
    smoothness_m : int
        The profile is ``C^m`` across the support boundary.
    """
    d, k, m = int(dim), int(moment_order_k), int(smoothness_m)
    if d < 1:
        raise ValueError(f"dim = {d} must be at least 1")
    if k < 1:
        raise ValueError(f"moment_order_k = {k} must be at least 1")
    if m < 1:
        raise ValueError(f"smoothness_m = {m} must be at least 1")
    if k > CONDITIONING_WARNING_ORDER:
        warnings.warn(
            f"moment order {k} leads to an ill-conditioned Gram system; "
            "expect growing moment defects",
            UserWarning,
            stacklevel=2,
        )
    ell = (k + 1) // 2
    # Gram entries <s^i, s^j> = (1/2) B(i + j + d/2, m + 2)
    idx = np.arange(ell + 1)
    gram = 0.5 * np.exp(betaln(idx[:, None] + idx[None, :] + d / 2.0, m + 2.0))
    rhs = np.zeros(ell + 1)
    rhs[0] = 1.0 / unit_sphere_area(d)
    coeffs = np.linalg.solve(gram, rhs)
    return Mollifier(d, m, k, coeffs)


def eval_scaled(phi: Mollifier, eps: float, pts: np.ndarray) -> np.ndarray:
    """``eps^-d phi(pts / eps)``, the mass-preserving rescaling."""
    if eps <= 0:
        raise ValueError(f"scale eps = {eps} must be positive")
    return float(eps) ** -phi.dim * phi(np.asarray(pts, dtype=float) / float(eps))


def derivative_kernel(phi: Mollifier, alpha) -> DerivativeKernel:
    """Kernel for ``D^alpha`` of the scaled family, ``1 <= |alpha| <= m``.

    Horizontal components of ``alpha`` come first; the final component counts
    derivatives in the scaling variable.
    """
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != phi.dim + 1:
        raise ValueError(
            f"alpha must have {phi.dim + 1} entries (horizontal + scaling), "
            f"got {alpha}"
        )
    if any(a < 0 for a in alpha):
        raise ValueError(f"alpha = {alpha} must be nonnegative")
    order = sum(alpha)
    if order < 1 or order > phi.smoothness_m:
        raise ValueError(
            f"|alpha| = {order} outside [1, {phi.smoothness_m}]; the profile "
            f"is only C^{phi.smoothness_m}"
        )
    d = phi.dim
    poly = phi.poly
    current = 0
    for axis in range(d):
        for _ in range(alpha[axis]):
            poly = poly.diff(axis)
            current += 1
    for _ in range(alpha[d]):
        acc = poly.scaled(-(current + d))
        for axis in range(d):
            acc = acc + poly.diff(axis).times_var(axis).scaled(-1.0)
        poly = acc
        current += 1
    return DerivativeKernel(alpha, d, poly)


def moment_table(phi: Mollifier, through_order: int | None = None) -> dict[tuple[int, ...], float]:
    """Exact monomial moments ``int y^alpha phi(y) dy`` through an order.

    Uses the closed radial and spherical factorizations of the polynomial
    profile, so this is an analytic evaluation rather than a quadrature.
    """
    import itertools

    top = phi.moment_order_k if through_order is None else int(through_order)
    out: dict[tuple[int, ...], float] = {}
    for alpha in itertools.product(range(top + 1), repeat=phi.dim):
        q = sum(alpha)
        if q > top:
            continue
        if any(a % 2 for a in alpha):
            out[alpha] = 0.0
            continue
        # int_{S^(d-1)} w^alpha dsigma = 2 prod Gamma((a_i+1)/2) / Gamma((q+d)/2)
        sphere = 2.0
        for a in alpha:
            sphere *= math.gamma((a + 1) / 2.0)
        sphere /= math.gamma((q + phi.dim) / 2.0)
        radial = sum(
            c / ((q + phi.dim) / 2.0 + j) for j, c in enumerate(phi.profile)
        ) * 0.5
        out[alpha] = sphere * radial
    return out


def mollifier_to_json(phi: Mollifier) -> str:
    return json.dumps(
        {
            "format": "sobotrace-mollifier",
            "version": 1,
            "dim": phi.dim,
            "smoothness_m": phi.smoothness_m,
            "moment_order_k": phi.moment_order_k,
            "psi_coeffs": [float(c) for c in phi.psi_coeffs],
        },
        indent=2,
        sort_keys=True,
    )


def mollifier_from_json(text: str) -> Mollifier:
    data = json.loads(text)
    if data.get("format") != "sobotrace-mollifier":
        raise ValueError("not a mollifier record")
    return Mollifier(
        data["dim"], data["smoothness_m"], data["moment_order_k"],
        np.asarray(data["psi_coeffs"], dtype=float),
    )
