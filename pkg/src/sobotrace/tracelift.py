"""Boundary traces on strips and graph domains, and the lifts that invert them.

The strip has periodic horizontal axes and a non-periodic vertical last axis
running between two walls.  Traces are read from the wall planes; lifts build
interior fields from wall data by mollifying each datum at a scale
proportional to the distance from its wall and blending the two sides with a
plateaued vertical cutoff.  Wall planes are set to the data exactly (the
mollification scale vanishes there), so lift-then-trace is the identity and
the interesting error lives on the first interior plane.

Every inequality this module certifies is reported as a row
``{id, lhs, rhs, constant, slack, pass}``.  Constants fall in three classes:
explicit ones carried by the estimates themselves, the calibrated ones frozen
in ``constants.py`` for bounds whose constant the theory leaves unnamed, and
exact identities checked to float tolerance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constants import CALIBRATED
from .fields import (
    Box,
    Grid,
    SampledField,
    gradient_m,
    integrate,
    interp_at,
    lp_norm,
    outer_weights,
    sample,
    unit_sphere_area,
)
from .mollifiers import Mollifier, build_moment_mollifier, derivative_kernel
from .seminorms import (
    CheckResult,
    Constant,
    GraphGap,
    gradient_magnitude,
    screened_seminorm,
    thread_count,
)

__all__ = [
    "StripDomain",
    "GraphDomain",
    "TracePair",
    "TraceJet",
    "CutoffProfile",
    "TraceReport",
    "horizontal_grid",
    "trace_pair",
    "trace_jet",
    "strip_constant",
    "trace_check_m1",
    "trace_check_p1",
    "trace_check_higher",
    "lift_m1",
    "lift_general",
    "q_polynomial",
    "by_parts_check",
    "ByPartsReport",
    "flatten",
    "lift_recovery_study",
    "jet_recovery_study",
    "graph_trace_check",
    "graph_lift_m1",
    "check_convolution_estimate",
    "lift_energy_check",
    "graph_lift_energy_check",
]


@dataclass(frozen=True)
class StripDomain:
    """Infinite strip truncated to a periodic horizontal cell.

    ``cell`` is the horizontal box (all axes periodic); the vertical extent
    runs from ``b_minus`` to ``b_plus``.
    """

    b_minus: float
    b_plus: float
    cell: Box

    def __post_init__(self):
        if not (np.isfinite(self.b_minus) and np.isfinite(self.b_plus)):
            raise ValueError("wall heights must be finite")
        if not self.b_minus < self.b_plus:
            raise ValueError(
                f"walls out of order: {self.b_minus} >= {self.b_plus}"
            )
        if any(not per for per in self.cell.periodic):
            raise ValueError("the horizontal cell must be fully periodic")

    @property
    def thickness(self) -> float:
        return self.b_plus - self.b_minus

    def grid(self, shape) -> Grid:
        """Grid with the vertical coordinate as the last axis."""
        box = Box(
            self.cell.lo + (self.b_minus,),
            self.cell.hi + (self.b_plus,),
            self.cell.periodic + (False,),
        )
        return Grid(box, tuple(shape))


class GraphDomain:
    """Region between two graphs over a periodic horizontal cell."""

    def __init__(self, eta_minus: SampledField, eta_plus: SampledField):
        if eta_minus.grid != eta_plus.grid:
            raise ValueError("graph heights live on different grids")
        if any(not per for per in eta_minus.grid.box.periodic):
            raise ValueError("graph heights need a fully periodic grid")
        if np.any(eta_plus.values - eta_minus.values <= 0):
            raise ValueError("upper graph must lie strictly above the lower")
        self.eta_minus = eta_minus
        self.eta_plus = eta_plus

    @property
    def horizontal(self) -> Grid:
        return self.eta_minus.grid

    @property
    def gap(self) -> np.ndarray:
        return self.eta_plus.values - self.eta_minus.values

    @property
    def lipschitz_L(self) -> float:
        """Sum of the Lipschitz seminorms, estimated from grid differences."""
        total = 0.0
        for h in (self.eta_minus, self.eta_plus):
            worst = 0.0
            for axis in range(h.grid.ndim):
                step = np.roll(h.values, -1, axis=axis) - h.values
                worst = max(worst, float(np.max(np.abs(step))) / h.grid.spacing[axis])
            total += worst
        return total

    def grid(self, vertical_cells: int) -> Grid:
        """Bounding rectangular grid covering the domain."""
        hg = self.horizontal
        v_lo = float(np.min(self.eta_minus.values))
        v_hi = float(np.max(self.eta_plus.values))
        box = Box(hg.box.lo + (v_lo,), hg.box.hi + (v_hi,),
                  hg.box.periodic + (False,))
        return Grid(box, hg.shape + (vertical_cells,))

    def interior_mask(self, grid: Grid) -> np.ndarray:
        """Node mask for points between the graphs (walls included)."""
        x_n = grid.axis_nodes(grid.ndim - 1)
        lo = self.eta_minus.values[..., None] - 1e-12
        hi = self.eta_plus.values[..., None] + 1e-12
        return (x_n >= lo) & (x_n <= hi)


@dataclass
class TracePair:
    f_minus: SampledField
    f_plus: SampledField

    def __post_init__(self):
        if self.f_minus.grid != self.f_plus.grid:
            raise ValueError("trace pair members live on different grids")

    @property
    def grid(self) -> Grid:
        return self.f_minus.grid


@dataclass
class TraceJet:
    """Wall data ``f_k`` for ``k < order`` on both walls."""

    order: int
    minus: tuple
    plus: tuple

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"jet order {self.order} must be at least 1")
        if len(self.minus) != self.order or len(self.plus) != self.order:
            raise ValueError(
                f"jet of order {self.order} needs {self.order} components per "
                f"wall, got {len(self.minus)} and {len(self.plus)}"
            )
        grid = self.minus[0].grid
        for comp in (*self.minus, *self.plus):
            if comp.grid != grid:
                raise ValueError("jet components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.minus[0].grid


@dataclass(frozen=True)
class CutoffProfile:
    """Quintic smoothstep profile: 1 on [0, delta], 0 on [1 - delta, 1]."""

    delta: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.delta < 0.5:
            raise ValueError(f"plateau fraction {self.delta} must lie in (0, 1/2)")

    def __call__(self, t):
        u = np.clip((np.asarray(t, dtype=float) - self.delta)
                    / (1.0 - 2.0 * self.delta), 0.0, 1.0)
        return 1.0 - u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)


@dataclass
class TraceReport:
    rows: list = field(default_factory=list)
    passed: bool = True

    def add(self, ineq_id: str, lhs: float, rhs: float, constant: float,
            slack: float) -> None:
        ok = bool(lhs <= rhs + slack)
        self.rows.append({"id": ineq_id, "lhs": float(lhs), "rhs": float(rhs),
                          "constant": float(constant), "slack": float(slack),
                          "pass": ok})
        self.passed = self.passed and ok

    def row(self, ineq_id: str) -> dict:
        for row in self.rows:
            if row["id"] == ineq_id:
                return row
        raise KeyError(ineq_id)


def horizontal_grid(grid: Grid) -> Grid:
    if grid.ndim < 2:
        raise ValueError("strip grids need at least two axes")
    box = Box(grid.box.lo[:-1], grid.box.hi[:-1], grid.box.periodic[:-1])
    return Grid(box, grid.shape[:-1])


def _require_walls(grid: Grid) -> None:
    if grid.box.periodic[-1]:
        raise ValueError("vertical axis is periodic: no boundary planes to trace")


def trace_pair(u: SampledField) -> TracePair:
    """Wall values of a strip field."""
    _require_walls(u.grid)
    hg = horizontal_grid(u.grid)
    return TracePair(SampledField(hg, u.values[..., 0].copy()),
                     SampledField(hg, u.values[..., -1].copy()))


def trace_jet(u: SampledField, m: int) -> TraceJet:
    """Vertical wall derivatives up to order ``m - 1``.

    Boundary values come from one-sided three-point differences composed
    order by order, so no information from across the wall is invented.
    """
    _require_walls(u.grid)
    hg = horizontal_grid(u.grid)
    axis_v = u.grid.ndim - 1
    minus = [SampledField(hg, u.values[..., 0].copy())]
    plus = [SampledField(hg, u.values[..., -1].copy())]
    if m > 1:
        jet = gradient_m(u, m - 1)
        for k in range(1, m):
            alpha = tuple(0 if i != axis_v else k for i in range(u.grid.ndim))
            deriv = jet[alpha].values
            minus.append(SampledField(hg, deriv[..., 0].copy()))
            plus.append(SampledField(hg, deriv[..., -1].copy()))
    return TraceJet(m, tuple(minus), tuple(plus))


def strip_constant(p: float, horizontal_dim: int) -> float:
    """Explicit constant of the wall-seminorm estimate."""
    beta = unit_sphere_area(horizontal_dim)
    return 3.0 ** p * beta * p ** p / (p - 1.0) ** p


def _vertical_gradient(u: SampledField) -> np.ndarray:
    jet = gradient_m(u, 1)
    alpha = tuple(0 if i != u.grid.ndim - 1 else 1 for i in range(u.grid.ndim))
    return jet[alpha].values


# ---------------------------------------------------------------------------
# mollified convolutions over the horizontal cell

_BALL_RULES: dict = {}


def _ball_rule(dim: int, radial_order: int = 12, angular: int = 16):
    """Quadrature over the unit ball, exact for the kernel polynomials.

    One dimension uses plain Gauss-Legendre on [-1, 1].  Two dimensions use a
    polar rule (radial Gauss times uniform angles) because the kernels vanish
    only on the circle; a tensor rule on the square would see the truncation.
    """
    key = (dim, radial_order, angular)
    if key not in _BALL_RULES:
        if dim == 1:
            x, w = np.polynomial.legendre.leggauss(radial_order)
            _BALL_RULES[key] = (x[:, None], w)
        elif dim == 2:
            x, w = np.polynomial.legendre.leggauss(radial_order)
            r = 0.5 * (x + 1.0)
            wr = 0.5 * w * r
            theta = 2.0 * np.pi * (np.arange(angular) + 0.5) / angular
            nodes = np.stack([
                (r[:, None] * np.cos(theta)[None, :]).reshape(-1),
                (r[:, None] * np.sin(theta)[None, :]).reshape(-1),
            ], axis=-1)
            weights = (wr[:, None] * np.full(angular, 2.0 * np.pi / angular)).reshape(-1)
            _BALL_RULES[key] = (nodes, weights)
        else:
            raise ValueError(f"ball quadrature supports 1 or 2 dimensions, got {dim}")
    return _BALL_RULES[key]


def _node_coordinates(grid: Grid) -> np.ndarray:
    mesh = grid.nodes()
    return np.stack(mesh, axis=-1)


class _CubicSampler:
    """Periodic cubic-spline point evaluation of a sampled field.

    Linear interpolation leaves an O(h^2) sawtooth that the mollifier's
    vanishing moments cannot see past, which floors the recovery of second
    wall derivatives; the spline restores enough smoothness that the moment
    cancellations survive discretization.  The filter pass happens once per
    field, so repeated evaluations (one per vertical plane) stay cheap.
    """

    def __init__(self, f: SampledField):
        from scipy import ndimage

        if any(not per for per in f.grid.box.periodic):
            raise ValueError("cubic sampling here expects a fully periodic grid")
        self._map = ndimage.map_coordinates
        self.coeff = ndimage.spline_filter(f.values, order=3, mode="grid-wrap")
        self.lo = np.array(f.grid.box.lo)
        self.h = np.array(f.grid.spacing)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        idx = (pts - self.lo) / self.h
        flat = idx.reshape(-1, idx.shape[-1]).T
        out = self._map(self.coeff, flat, order=3, mode="grid-wrap",
                        prefilter=False)
        return out.reshape(idx.shape[:-1])


def _mollify(f: SampledField, kernel, eps, sampler: _CubicSampler | None = None
             ) -> np.ndarray:
    """``int kernel(y) f(x - eps y) dy`` at every node of ``f``'s grid.

    ``eps`` broadcasts against the node array, so a single scale and a
    per-node scale follow the same code path (and produce identical floats
    when the per-node array is constant).
    """
    dim = f.grid.ndim
    nodes, weights = _ball_rule(dim)
    wq = weights * kernel(nodes)
    X = _node_coordinates(f.grid)
    eps_arr = np.broadcast_to(np.asarray(eps, dtype=float), f.values.shape)
    pts = X[..., None, :] - eps_arr[..., None, None] * nodes
    if sampler is None:
        sampler = _CubicSampler(f)
    return sampler(pts) @ wq


def _blended_planes(plane_op, n_planes: int, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(plane_op, range(n_planes)))
    return [plane_op(j) for j in range(n_planes)]


def lift_m1(pair: TracePair, a: float, strip: StripDomain, grid: Grid,
            phi: Mollifier | None = None,
            theta: CutoffProfile | None = None) -> SampledField:
    """First-order lift of a trace pair.

    Each wall datum is mollified at horizontal scale
    ``a (x_N - wall) / (b_plus - b_minus)`` and the two sides are blended by
    the vertical cutoff.  Wall planes carry the data exactly.
    """
    if a <= 0:
        raise ValueError(f"screening scale a = {a} must be positive")
    if phi is None:
        phi = build_moment_mollifier(pair.grid.ndim, 1, 1)
    if theta is None:
        theta = CutoffProfile()
    if horizontal_grid(grid) != pair.grid:
        raise ValueError("lift grid's horizontal part does not match the data")
    t_nodes = grid.axis_nodes(grid.ndim - 1)
    b = strip.thickness
    out = np.empty(grid.node_counts)
    samplers = (_CubicSampler(pair.f_minus), _CubicSampler(pair.f_plus))

    def one_plane(j: int) -> np.ndarray:
        if j == 0:
            return pair.f_minus.values.copy()
        if j == t_nodes.size - 1:
            return pair.f_plus.values.copy()
        tau = (t_nodes[j] - strip.b_minus) / b
        blend = float(theta(tau))
        lower = _mollify(pair.f_minus, phi, a * tau, samplers[0])
        upper = _mollify(pair.f_plus, phi, a * (1.0 - tau), samplers[1])
        return blend * lower + (1.0 - blend) * upper

    planes = _blended_planes(one_plane, t_nodes.size, thread_count())
    for j, plane in enumerate(planes):
        out[..., j] = plane
    return SampledField(grid, out)


def lift_general(jet: TraceJet, a: float, strip: StripDomain, grid: Grid,
                 theta: CutoffProfile | None = None) -> SampledField:
    """Order-m lift matching vertical wall derivatives through ``m - 1``.

    The one-wall sums are Taylor polynomials in the wall distance whose
    coefficients are mollified data; the mollifier carries ``m`` vanishing
    moments so that differentiating the scale in the vertical direction
    leaves the wall jet untouched.
    """
    if a <= 0:
        raise ValueError(f"screening scale a = {a} must be positive")
    if theta is None:
        theta = CutoffProfile()
    if horizontal_grid(grid) != jet.grid:
        raise ValueError("lift grid's horizontal part does not match the jet")
    m = jet.order
    phi = build_moment_mollifier(jet.grid.ndim, m, m)
    t_nodes = grid.axis_nodes(grid.ndim - 1)
    b = strip.thickness
    out = np.empty(grid.node_counts)
    low_samp = tuple(_CubicSampler(c) for c in jet.minus)
    up_samp = tuple(_CubicSampler(c) for c in jet.plus)

    def one_plane(j: int) -> np.ndarray:
        if j == 0:
            return jet.minus[0].values.copy()
        if j == t_nodes.size - 1:
            return jet.plus[0].values.copy()
        t = t_nodes[j]
        tau = (t - strip.b_minus) / b
        blend = float(theta(tau))
        d_minus = t - strip.b_minus
        d_plus = t - strip.b_plus
        lower = sum(
            d_minus ** k / math.factorial(k)
            * _mollify(jet.minus[k], phi, a * tau, low_samp[k])
            for k in range(m)
        )
        upper = sum(
            d_plus ** k / math.factorial(k)
            * _mollify(jet.plus[k], phi, a * (1.0 - tau), up_samp[k])
            for k in range(m)
        )
        return blend * lower + (1.0 - blend) * upper

    planes = _blended_planes(one_plane, t_nodes.size, thread_count())
    for j, plane in enumerate(planes):
        out[..., j] = plane
    return SampledField(grid, out)


def q_polynomial(jet: TraceJet, i: int, m: int, n: int,
                 thickness: float) -> SampledField:
    """Compatibility combination of wall data.

    The scalar combination sums ``(-1)^k/k! (h/2)^k (f_{k+n}^+ - (-1)^k
    f_{k+n}^-)`` for ``k < m - i - n`` with ``h`` the wall separation; for
    ``i >= 1`` the result is the multiplicity-weighted magnitude of its i-th
    horizontal gradient.
    """
    if i < 0 or n < 0 or i + n > m - 1:
        raise ValueError(f"orders (i={i}, n={n}) out of range for m={m}")
    if m > jet.order:
        raise ValueError(f"jet of order {jet.order} cannot form m={m} combinations")
    half = 0.5 * thickness
    acc = np.zeros(jet.grid.node_counts)
    for k in range(m - i - n):
        coeff = (-1.0) ** k / math.factorial(k) * half ** k
        acc += coeff * (jet.plus[k + n].values
                        + (-1.0) ** (k + 1) * jet.minus[k + n].values)
    combined = SampledField(jet.grid, acc)
    if i == 0:
        return combined
    return SampledField(jet.grid, gradient_magnitude(combined, i))


def trace_check_m1(u: SampledField, p: float) -> TraceReport:
    """Jump and wall-seminorm estimates for a first-order strip field.

    The jump estimate is the vertical Hoelder bound with constant
    ``thickness^(p-1)``; fields linear in the vertical coordinate realize it
    with equality.  The wall seminorms are screened at the strip thickness
    with order ``1 - 1/p`` and compared against the explicit constant.
    """
    if p <= 1:
        raise ValueError(f"this check needs p > 1, got {p}")
    _require_walls(u.grid)
    b = u.grid.box.hi[-1] - u.grid.box.lo[-1]
    pair = trace_pair(u)
    hg = pair.grid
    report = TraceReport()

    jump = integrate(np.abs(pair.f_plus.values - pair.f_minus.values) ** p, hg)
    vert = integrate(np.abs(_vertical_gradient(u)) ** p, u.grid)
    rhs1 = b ** (p - 1.0) * vert
    report.add("strip_m1_jump", jump, rhs1, b ** (p - 1.0),
               0.02 * rhs1 + 1e-12)

    grad_p = integrate(gradient_magnitude(u, 1) ** p, u.grid)
    c = strip_constant(p, hg.ndim)
    s = 1.0 - 1.0 / p
    for label, f in (("minus", pair.f_minus), ("plus", pair.f_plus)):
        semi = screened_seminorm(f, Constant(b), s, p).value_p
        rhs2 = c * grad_p
        report.add(f"strip_m1_wall_seminorm_{label}", semi, rhs2, c,
                   0.05 * rhs2 + 1e-12)
    return report


def _lattice_shifts(grid: Grid, radius: float):
    """Nonzero integer-cell displacement vectors of length at most radius."""
    ranges = []
    for axis in range(grid.ndim):
        kmax = int(np.floor(radius / grid.spacing[axis]))
        ranges.append(range(-kmax, kmax + 1))
    shifts = []
    for combo in np.ndindex(*[len(r) for r in ranges]):
        ks = [list(ranges[i])[combo[i]] for i in range(grid.ndim)]
        if all(k == 0 for k in ks):
            continue
        disp = [ks[i] * grid.spacing[i] for i in range(grid.ndim)]
        if np.linalg.norm(disp) <= radius + 1e-12:
            shifts.append(tuple(ks))
    return shifts


def trace_check_p1(u: SampledField, epsilons) -> TraceReport:
    """Absolute-difference trace bounds for the L^1 energy.

    The jump bound carries constant 1; the shift bound compares the largest
    grid-aligned translation difference of each wall trace against three
    times the gradient mass of the two wall collars (the factor the proof's
    path argument produces).  The report also carries the decay of the sup
    across the epsilon ladder.
    """
    _require_walls(u.grid)
    b = u.grid.box.hi[-1] - u.grid.box.lo[-1]
    eps_list = sorted(float(e) for e in np.atleast_1d(epsilons))
    if not eps_list or eps_list[0] <= 0 or eps_list[-1] >= b:
        raise ValueError("epsilon ladder must lie strictly inside (0, thickness)")
    pair = trace_pair(u)
    hg = pair.grid
    report = TraceReport()

    jump = integrate(np.abs(pair.f_plus.values - pair.f_minus.values), hg)
    vert = integrate(np.abs(_vertical_gradient(u)), u.grid)
    report.add("strip_p1_jump", jump, vert, 1.0, 0.02 * vert + 1e-12)

    grad_mag = gradient_magnitude(u, 1)
    x_n = u.grid.axis_nodes(u.grid.ndim - 1)
    w = outer_weights(u.grid)
    sups = []
    for eps in eps_list:
        collar = ((x_n - u.grid.box.lo[-1] < eps)
                  | (u.grid.box.hi[-1] - x_n < eps))
        rhs = 3.0 * float(np.sum(w * grad_mag * collar))
        sup = 0.0
        for f in (pair.f_minus, pair.f_plus):
            for shift in _lattice_shifts(hg, eps):
                moved = np.roll(f.values, shift, axis=tuple(range(hg.ndim)))
                sup = max(sup, integrate(np.abs(moved - f.values), hg))
        sups.append(sup)
        report.add(f"strip_p1_shift_eps_{eps:g}", sup, rhs, 3.0,
                   0.05 * rhs + 1e-12)
    for k in range(len(sups) - 1):
        report.add(f"strip_p1_sup_decay_{k}", sups[k], sups[k + 1], 1.0,
                   1e-12 * (1.0 + sups[k + 1]))
    return report


def trace_check_higher(u: SampledField, m: int, p: float) -> TraceReport:
    """Taylor-compatibility and wall-seminorm bounds at order ``m``.

    For every admissible pair ``(i, l)`` the compatibility combination is
    controlled by ``thickness^((m-i-l)p - 1)`` times the full order-m energy
    with constant 1 (the sharp constant is smaller).  Each derivative of
    order ``m - 1`` additionally satisfies the first-order wall-seminorm
    bound against the same energy.
    """
    if p <= 1:
        raise ValueError(f"this check needs p > 1, got {p}")
    if m < 1:
        raise ValueError(f"order m = {m} must be at least 1")
    _require_walls(u.grid)
    b = u.grid.box.hi[-1] - u.grid.box.lo[-1]
    jet = trace_jet(u, m)
    hg = jet.grid
    energy = integrate(gradient_magnitude(u, m) ** p, u.grid)
    report = TraceReport()
    for i in range(m):
        for l in range(m - i):
            q = q_polynomial(jet, i, m, l, b)
            lhs = integrate(np.abs(q.values) ** p, hg)
            j = m - i - l
            rhs = b ** (j * p - 1.0) * energy
            report.add(f"strip_m{m}_compat_i{i}_l{l}", lhs, rhs, 1.0,
                       0.05 * rhs + 1e-10)

    if m >= 2:
        from .fields import multi_indices

        c = strip_constant(p, hg.ndim)
        s = 1.0 - 1.0 / p
        grads = gradient_m(u, m - 1)
        for alpha in multi_indices(u.grid.ndim, m - 1):
            v = grads[alpha]
            vp = trace_pair(v)
            for label, f in (("minus", vp.f_minus), ("plus", vp.f_plus)):
                semi = screened_seminorm(f, Constant(b), s, p).value_p
                rhs = c * energy
                name = "".join(str(a) for a in alpha)
                report.add(f"strip_m{m}_wall_seminorm_a{name}_{label}",
                           semi, rhs, c, 0.05 * rhs + 1e-12)
    return report


@dataclass
class ByPartsReport:
    lhs: float
    rhs: float
    residual: float
    taylor_residual: float


def _window_derivative(values: np.ndarray, h: float, k: int, width: int) -> np.ndarray:
    """k-th derivative at every node from sliding polynomial windows.

    Each node differentiates the degree ``width - 1`` interpolant of the
    ``width`` nearest nodes (windows clamp at the ends instead of shrinking),
    so the result is exact for polynomials through that degree and accurate
    at order ``width - k`` otherwise.
    """
    n = values.size
    if width > n:
        raise ValueError(
            f"derivative window of {width} nodes exceeds the {n} available"
        )
    out = np.empty(n)
    cache: dict[int, np.ndarray] = {}
    half = width // 2
    for idx in range(n):
        start = min(max(idx - half, 0), n - width)
        rel = start - idx
        if rel not in cache:
            offsets = rel + np.arange(width)
            A = np.vander(offsets.astype(float), width, increasing=True).T
            rhs = np.zeros(width)
            rhs[k] = math.factorial(k)
            cache[rel] = np.linalg.solve(A, rhs) / h ** k
        out[idx] = float(cache[rel] @ values[start:start + width])
    return out


def _corrected_trapezoid(g: np.ndarray, g_prime: np.ndarray, h: float) -> float:
    """Trapezoid rule with the Euler-Maclaurin endpoint correction.

    Exact for polynomial integrands through degree three; fourth-order
    otherwise.  ``g_prime`` only matters at the two ends.
    """
    if g.size < 2:
        return 0.0
    body = h * (np.sum(g) - 0.5 * (g[0] + g[-1]))
    return float(body - h * h / 12.0 * (g_prime[-1] - g_prime[0]))


def by_parts_check(f: SampledField, m: int) -> ByPartsReport:
    """Midpoint-weighted integration by parts on an interval.

    Checks that the boundary combination

        f(b) - f(0) - sum_{k=1}^{m-1} (b/2)^k/k! [(-1)^(k+1) f^(k)(b) + f^(k)(0)]

    equals ``int_0^b f^(m)(t) (b/2 - t)^(m-1)/(m-1)! dt``, and that the
    one-endpoint Taylor expansion with integral remainder reproduces ``f``.
    Derivatives come from sliding-window differences wide enough to be exact
    through degree ``m + 2`` and integrals from the corrected trapezoid rule,
    so both residuals vanish to rounding on polynomials of degree at most
    ``m`` and decay at second order on smooth data.
    """
    grid = f.grid
    if grid.ndim != 1 or grid.box.periodic[0]:
        raise ValueError("this identity lives on a non-periodic interval")
    if abs(grid.box.lo[0]) > 1e-14:
        raise ValueError("the interval must start at zero")
    if m < 1:
        raise ValueError(f"order m = {m} must be at least 1")
    b = grid.box.hi[0]
    h = grid.spacing[0]
    t = grid.axis_nodes(0)
    width = m + 3
    if t.size < width:
        raise ValueError(
            f"{t.size} nodes cannot resolve order {m}; need at least {width}"
        )
    derivs = [f.values] + [
        _window_derivative(f.values, h, k, width) for k in range(1, m + 2)
    ]
    lhs = derivs[0][-1] - derivs[0][0]
    for k in range(1, m):
        lhs -= (0.5 * b) ** k / math.factorial(k) * (
            (-1.0) ** (k + 1) * derivs[k][-1] + derivs[k][0]
        )
    wgt = (0.5 * b - t) ** (m - 1) / math.factorial(m - 1)
    if m >= 2:
        wgt_prime = -((0.5 * b - t) ** (m - 2)) / math.factorial(m - 2)
    else:
        wgt_prime = np.zeros_like(t)
    g = derivs[m] * wgt
    g_prime = derivs[m + 1] * wgt + derivs[m] * wgt_prime
    rhs = _corrected_trapezoid(g, g_prime, h)

    taylor = np.zeros_like(t)
    for k in range(m):
        taylor += (-1.0) ** k / math.factorial(k) * derivs[k][-1] * (b - t) ** k
    remainder = np.empty_like(t)
    sign = (-1.0) ** m
    for idx in range(t.size):
        tau = t[idx:] - t[idx]
        row = derivs[m][idx:] * tau ** (m - 1) / math.factorial(m - 1)
        if m >= 2:
            row_prime = (derivs[m + 1][idx:] * tau ** (m - 1) / math.factorial(m - 1)
                         + derivs[m][idx:] * tau ** (m - 2) / math.factorial(m - 2))
        else:
            row_prime = derivs[m + 1][idx:]
        remainder[idx] = sign * _corrected_trapezoid(row, row_prime, h)
    taylor_residual = float(np.max(np.abs(f.values - taylor - remainder)))
    return ByPartsReport(float(lhs), float(rhs), float(abs(lhs - rhs)),
                         taylor_residual)


def lift_recovery_study(data_minus, data_plus, a: float, strip: StripDomain,
                        shapes, p: float = 2.0) -> dict:
    """Near-wall recovery rate of the first-order lift.

    Wall planes reproduce the data exactly, so the study measures the L^p
    error of the first interior plane against each wall datum (callables,
    resampled per shape) and reports the consecutive refinement orders.
    """
    hdim = len(strip.cell.lo)
    errors = []
    for n in shapes:
        grid = strip.grid((int(n),) * hdim + (int(n),))
        hg = horizontal_grid(grid)
        pair = TracePair(sample(data_minus, hg), sample(data_plus, hg))
        u = lift_m1(pair, a, strip, grid)
        w = outer_weights(hg)
        lo = float(np.sum(w * np.abs(u.values[..., 1] - pair.f_minus.values) ** p))
        hi = float(np.sum(w * np.abs(u.values[..., -2] - pair.f_plus.values) ** p))
        errors.append(max(lo, hi) ** (1.0 / p))
    orders = _refinement_orders(errors)
    return {"shapes": [int(n) for n in shapes], "errors": errors,
            "orders": orders,
            "measured_order": min(orders) if orders else float("inf")}


def jet_recovery_study(data_minus, data_plus, a: float, strip: StripDomain,
                       shapes, m: int, p: float = 2.0) -> dict:
    """Wall-jet recovery rate of the order-m lift.

    ``data_minus`` and ``data_plus`` list one callable per jet component.
    The zero-order components come back exactly; the error is the worst
    relative L^p discrepancy among the differentiated ones.
    """
    if len(data_minus) != m or len(data_plus) != m:
        raise ValueError(f"need {m} components per wall")
    hdim = len(strip.cell.lo)
    errors = []
    for n in shapes:
        grid = strip.grid((int(n),) * hdim + (int(n),))
        hg = horizontal_grid(grid)
        jet = TraceJet(m,
                       tuple(sample(fn, hg) for fn in data_minus),
                       tuple(sample(fn, hg) for fn in data_plus))
        u = lift_general(jet, a, strip, grid)
        back = trace_jet(u, m)
        worst = 0.0
        for k in range(1, m):
            for got, want in ((back.minus[k], jet.minus[k]),
                              (back.plus[k], jet.plus[k])):
                scale = max(lp_norm(want, p), 1e-30)
                err = lp_norm(SampledField(hg, got.values - want.values), p)
                worst = max(worst, err / scale)
        errors.append(worst)
    orders = _refinement_orders(errors)
    return {"shapes": [int(n) for n in shapes], "errors": errors,
            "orders": orders,
            "measured_order": min(orders) if orders else float("inf")}


def _refinement_orders(errors) -> list:
    orders = []
    for e0, e1 in zip(errors, errors[1:]):
        if e0 < 1e-13 and e1 < 1e-13:
            orders.append(float("inf"))
        else:
            orders.append(float(np.log2(max(e0, 1e-300) / max(e1, 1e-300))))
    return orders


# ---------------------------------------------------------------------------
# graph domains

def flatten(u: SampledField, domain: GraphDomain,
            normalize: bool = True) -> SampledField:
    """Pull a bounding-grid field back to a strip over the lower graph.

    With ``normalize`` the output lives on the unit reference strip and node
    ``(y', tau)`` holds ``u(y', eta_minus(y') + tau (eta_plus - eta_minus))``;
    integrals against it carry the local gap as the volume element (the first
    stage of the map has unit Jacobian).  Without it the vertical coordinate
    is the raw height above the lower graph and values past the local top
    wall clamp to it.
    """
    grid = u.grid
    _require_walls(grid)
    if horizontal_grid(grid) != domain.horizontal:
        raise ValueError("field's horizontal axes do not match the domain")
    eta = domain.eta_minus.values
    gap = domain.gap
    t = grid.axis_nodes(grid.ndim - 1)
    if normalize:
        targets = eta[..., None] + gap[..., None] * np.linspace(0.0, 1.0, t.size)
        out_box = Box(grid.box.lo[:-1] + (0.0,), grid.box.hi[:-1] + (1.0,),
                      grid.box.periodic)
    else:
        height = t - grid.box.lo[-1]
        targets = np.minimum(eta[..., None] + height, domain.eta_plus.values[..., None])
        out_box = Box(grid.box.lo[:-1] + (0.0,),
                      grid.box.hi[:-1] + (grid.box.hi[-1] - grid.box.lo[-1],),
                      grid.box.periodic)
    lo, h = grid.box.lo[-1], grid.spacing[-1]
    pos = np.clip((targets - lo) / h, 0.0, t.size - 1.0)
    idx = np.minimum(pos.astype(int), t.size - 2)
    frac = pos - idx
    below = np.take_along_axis(u.values, idx, axis=-1)
    above = np.take_along_axis(u.values, idx + 1, axis=-1)
    vals = below * (1.0 - frac) + above * frac
    return SampledField(Grid(out_box, grid.shape), vals)


def _graph_traces(u: SampledField, domain: GraphDomain) -> TracePair:
    flat = flatten(u, domain, normalize=True)
    hg = domain.horizontal
    return TracePair(SampledField(hg, flat.values[..., 0].copy()),
                     SampledField(hg, flat.values[..., -1].copy()))


def graph_trace_check(u: SampledField, domain: GraphDomain,
                      p: float) -> TraceReport:
    """Gap-weighted jump and screened-seminorm bounds between two graphs.

    The seminorm screening radius is the local gap over twice the Lipschitz
    size (floored at one half so flat graphs reduce to the strip check), and
    the right side carries the strip constant amplified by ``(1 + L)^p``.
    """
    if p <= 1:
        raise ValueError(f"this check needs p > 1, got {p}")
    mask = domain.interior_mask(u.grid)
    w = outer_weights(u.grid) * mask
    pair = _graph_traces(u, domain)
    hg = domain.horizontal
    gap = domain.gap
    report = TraceReport()

    jump = integrate(
        np.abs(pair.f_plus.values - pair.f_minus.values) ** p / gap ** (p - 1.0),
        hg)
    vert = float(np.sum(w * np.abs(_vertical_gradient(u)) ** p))
    report.add("graph_m1_jump", jump, vert, 1.0, 0.05 * vert + 1e-12)

    L = domain.lipschitz_L
    sigma = GraphGap(1.0 / (2.0 * max(0.5, L)), domain.eta_minus, domain.eta_plus)
    c = (1.0 + L) ** p * strip_constant(p, hg.ndim)
    grad_p = float(np.sum(w * gradient_magnitude(u, 1) ** p))
    s = 1.0 - 1.0 / p
    for label, f in (("minus", pair.f_minus), ("plus", pair.f_plus)):
        semi = screened_seminorm(f, sigma, s, p).value_p
        rhs = c * grad_p
        report.add(f"graph_m1_wall_seminorm_{label}", semi, rhs, c,
                   0.05 * rhs + 1e-12)
    return report


def graph_lift_m1(pair: TracePair, a: float, domain: GraphDomain,
                  grid: Grid, phi: Mollifier | None = None,
                  theta: CutoffProfile | None = None) -> SampledField:
    """First-order lift between two graphs on a bounding grid.

    The relative height ``tau`` drives both the cutoff and the mollification
    scales ``a tau`` and ``a (1 - tau)``, exactly as on the strip; below the
    lower graph or above the upper one the respective wall datum continues
    unchanged, so traces along the graphs are exact.
    """
    if not 0.0 < a < 1.0:
        raise ValueError(f"relative scale a = {a} must lie in (0, 1)")
    if phi is None:
        phi = build_moment_mollifier(pair.grid.ndim, 1, 1)
    if theta is None:
        theta = CutoffProfile()
    if horizontal_grid(grid) != domain.horizontal or pair.grid != domain.horizontal:
        raise ValueError("grid, data, and domain must share the horizontal cell")
    t_nodes = grid.axis_nodes(grid.ndim - 1)
    eta = domain.eta_minus.values
    gap = domain.gap
    out = np.empty(grid.node_counts)
    samplers = (_CubicSampler(pair.f_minus), _CubicSampler(pair.f_plus))

    def one_plane(j: int) -> np.ndarray:
        tau = np.clip((t_nodes[j] - eta) / gap, 0.0, 1.0)
        # snap within a relative ulp of either graph so wall planes carry the
        # datum exactly and flat domains reproduce the strip lift bitwise
        at_lo = tau <= 1e-12
        at_hi = tau >= 1.0 - 1e-12
        blend = np.where(at_lo, 1.0, np.where(at_hi, 0.0, theta(tau)))
        lower = _mollify(pair.f_minus, phi, a * tau, samplers[0])
        upper = _mollify(pair.f_plus, phi, a * (1.0 - tau), samplers[1])
        lower = np.where(at_lo, pair.f_minus.values, lower)
        upper = np.where(at_hi, pair.f_plus.values, upper)
        return blend * lower + (1.0 - blend) * upper

    planes = _blended_planes(one_plane, t_nodes.size, thread_count())
    for j, plane in enumerate(planes):
        out[..., j] = plane
    return SampledField(grid, out)


# ---------------------------------------------------------------------------
# calibrated bounds

def check_convolution_estimate(f: SampledField, alpha, a: float, b: float,
                               p: float, vertical_cells: int = 48,
                               phi: Mollifier | None = None) -> CheckResult:
    """Zero-mean kernel convolutions against the screened difference energy.

    ``v(x', t) = t^(-N) int f(y') K((x'-y') b / (a t)) dy'`` for a derivative
    kernel ``K`` is integrated over the cell times ``(0, b)`` (midpoint rule
    in the vertical, so the integrable wall behaviour never evaluates at
    zero) and compared against the screened seminorm of ``f`` at radius
    ``a`` and order ``1 - 1/p``, scaled by the frozen calibration constant.
    """
    if not 0.0 < a < b:
        raise ValueError(f"need 0 < a < b, got a={a}, b={b}")
    if p <= 1:
        raise ValueError(f"this check needs p > 1, got {p}")
    dim = f.grid.ndim
    if phi is None:
        phi = build_moment_mollifier(dim, 2, 2)
    kernel = derivative_kernel(phi, tuple(alpha))
    if kernel.order < 1:
        raise ValueError("the convolution estimate needs a zero-mean kernel")
    zeta = a / b
    heights = (np.arange(vertical_cells) + 0.5) * (b / vertical_cells)
    w_x = outer_weights(f.grid)
    sampler = _CubicSampler(f)
    lhs = 0.0
    for t in heights:
        conv = _mollify(f, kernel, zeta * t, sampler)
        v = zeta ** dim / t * conv
        lhs += (b / vertical_cells) * float(np.sum(w_x * np.abs(v) ** p))
    rhs_raw = screened_seminorm(f, Constant(a), 1.0 - 1.0 / p, p).value_p
    c = CALIBRATED["convolution_estimate"]
    rhs = c * rhs_raw
    return CheckResult(lhs, rhs, c, 0.0, lhs <= rhs,
                       {"alpha": list(alpha), "raw": rhs_raw})


def _pair_data_energy(pair: TracePair, a: float, thickness: float,
                      p: float) -> float:
    jump = integrate(np.abs(pair.f_plus.values - pair.f_minus.values) ** p,
                     pair.grid)
    s = 1.0 - 1.0 / p
    semis = sum(screened_seminorm(f, Constant(a), s, p).value_p
                for f in (pair.f_minus, pair.f_plus))
    return thickness ** (1.0 - p) * jump + semis


def lift_energy_check(pair: TracePair, u: SampledField, a: float,
                      p: float) -> CheckResult:
    """Gradient energy of a lift against its boundary data, frozen constant."""
    b = u.grid.box.hi[-1] - u.grid.box.lo[-1]
    lhs = integrate(gradient_magnitude(u, 1) ** p, u.grid)
    raw = _pair_data_energy(pair, a, b, p)
    c = CALIBRATED["lift_m1_energy"]
    return CheckResult(lhs, c * raw, c, 0.0, lhs <= c * raw, {"raw": raw})


def graph_lift_energy_check(pair: TracePair, u: SampledField,
                            domain: GraphDomain, a: float,
                            p: float) -> CheckResult:
    """Graph-domain lift energy with the ``(1 + L)^p`` amplification."""
    mask = domain.interior_mask(u.grid)
    w = outer_weights(u.grid) * mask
    lhs = float(np.sum(w * gradient_magnitude(u, 1) ** p))
    gap = domain.gap
    jump = integrate(
        np.abs(pair.f_plus.values - pair.f_minus.values) ** p / gap ** (p - 1.0),
        pair.grid)
    s = 1.0 - 1.0 / p
    semis = sum(screened_seminorm(f, Constant(a), s, p).value_p
                for f in (pair.f_minus, pair.f_plus))
    L = domain.lipschitz_L
    c = CALIBRATED["graph_lift_energy"] * (1.0 + L) ** p
    raw = jump + semis
    return CheckResult(lhs, c * raw, c, 0.0, lhs <= c * raw,
                       {"raw": raw, "lipschitz_L": L})
