"""Uniform tensor grids, sampled fields, and shared quadrature primitives.

Conventions
-----------
A :class:`Box` is an axis-aligned product of intervals, each axis either
periodic or not.  A :class:`Grid` subdivides the box into ``shape[i]`` cells
per axis, so the spacing is ``(hi - lo) / shape``.  Non-periodic axes carry
``shape[i] + 1`` nodes including both endpoints; periodic axes carry
``shape[i]`` nodes with the right endpoint identified with the left one.

Integrals use the trapezoidal rule: endpoint nodes of non-periodic axes get
half weight, every node of a periodic axis gets full weight ``spacing``.

Finite differences are second order: centered stencils in the interior and on
periodic axes, one-sided three-point stencils at non-periodic boundaries.
Both are exact on quadratic polynomials.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Box",
    "Grid",
    "SampledField",
    "JetField",
    "make_grid",
    "sample",
    "gradient_m",
    "lp_norm",
    "integrate",
    "outer_weights",
    "random_band_limited",
    "refinement_error",
    "geometric_ladder",
    "ladder_cutoff_weights",
    "gauss_geometric_panels",
    "shift_interp",
    "interp_at",
    "unit_ball_volume",
    "unit_sphere_area",
    "multi_indices",
    "multi_indices_upto",
    "multi_index_multiplicity",
    "save_field",
    "load_field",
    "export_csv",
    "check_support_margin",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with per-axis periodicity flags."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    periodic: tuple[bool, ...]

    def __post_init__(self):
        if not (len(self.lo) == len(self.hi) == len(self.periodic)):
            raise ValueError(
                f"box fields must have equal length, got lo={self.lo}, "
                f"hi={self.hi}, periodic={self.periodic}"
            )
        for i, (a, b) in enumerate(zip(self.lo, self.hi)):
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ValueError(f"box bounds on axis {i} must be finite")
            if b <= a:
                raise ValueError(
                    f"degenerate box on axis {i}: hi={b} must exceed lo={a}"
                )

    @property
    def ndim(self) -> int:
        return len(self.lo)

    @property
    def extent(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.lo, self.hi))


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid over a box.

    ``shape[i]`` counts cells, not nodes.  Non-periodic axes have one more
    node than cells.
    """

    box: Box
    shape: tuple[int, ...]

    def __post_init__(self):
        if len(self.shape) != self.box.ndim:
            raise ValueError(
                f"shape {self.shape} does not match box dimension {self.box.ndim}"
            )
        for i, n in enumerate(self.shape):
            if n < 2:
                raise ValueError(f"shape[{i}] = {n}, need at least 2 cells per axis")

    @property
    def ndim(self) -> int:
        return self.box.ndim

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(
            (b - a) / n for a, b, n in zip(self.box.lo, self.box.hi, self.shape)
        )

    @property
    def node_counts(self) -> tuple[int, ...]:
        return tuple(
            n if per else n + 1 for n, per in zip(self.shape, self.box.periodic)
        )

    def axis_nodes(self, axis: int) -> np.ndarray:
        a = self.box.lo[axis]
        h = self.spacing[axis]
        return a + h * np.arange(self.node_counts[axis])

    def nodes(self) -> list[np.ndarray]:
        """Meshgrid coordinate arrays, one per axis, ``ij`` indexing."""
        axes = [self.axis_nodes(i) for i in range(self.ndim)]
        return list(np.meshgrid(*axes, indexing="ij"))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))


class SampledField:
    """Finite nodal values on a grid.

    Supports addition, subtraction, and scalar multiplication so that
    linearity of downstream operators can be exercised directly.
    """

    def __init__(self, grid: Grid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.node_counts:
            raise ValueError(
                f"values shape {values.shape} does not match grid node counts "
                f"{grid.node_counts}"
            )
        if not np.all(np.isfinite(values)):
            idx = np.unravel_index(
                int(np.argmin(np.isfinite(values))), values.shape
            )
            coords = tuple(float(grid.axis_nodes(i)[j]) for i, j in enumerate(idx))
            raise ValueError(f"non-finite value at node {idx}, x = {coords}")
        self.grid = grid
        self.values = values

    def __add__(self, other: "SampledField") -> "SampledField":
        self._require_same_grid(other)
        return SampledField(self.grid, self.values + other.values)

    def __sub__(self, other: "SampledField") -> "SampledField":
        self._require_same_grid(other)
        return SampledField(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "SampledField":
        return SampledField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def _require_same_grid(self, other: "SampledField") -> None:
        if self.grid != other.grid:
            raise ValueError("fields live on different grids")


class JetField:
    """A field together with its partial derivatives up to some order."""

    def __init__(self, base: SampledField, derivatives: dict[tuple[int, ...], SampledField]):
        self.base = base
        self.derivatives = dict(derivatives)

    @property
    def order(self) -> int:
        return max((sum(a) for a in self.derivatives), default=0)

    def __getitem__(self, alpha: tuple[int, ...]) -> SampledField:
        if sum(alpha) == 0:
            return self.base
        return self.derivatives[tuple(alpha)]


def make_grid(lo, hi, shape, periodic) -> Grid:
    """Build a grid, validating bounds and cell counts."""
    box = Box(tuple(float(x) for x in lo), tuple(float(x) for x in hi),
              tuple(bool(q) for q in periodic))
    return Grid(box, tuple(int(n) for n in shape))


def sample(func, grid: Grid) -> SampledField:
    """Evaluate ``func(*coordinate_arrays)`` on the grid nodes.

    Raises
    ------
    ValueError
        If any nodal value is non-finite; the message names the node.
    """
    mesh = grid.nodes()
    values = np.asarray(func(*mesh), dtype=float)
    values = np.broadcast_to(values, grid.node_counts).copy()
    return SampledField(grid, values)


def _diff_axis(values: np.ndarray, grid: Grid, axis: int) -> np.ndarray:
    h = grid.spacing[axis]
    if grid.box.periodic[axis]:
        return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * h)
    return np.gradient(values, h, axis=axis, edge_order=2)


def gradient_m(field: SampledField, m: int) -> JetField:
    """All partial derivatives of orders 1 through ``m``.

    Mixed and repeated derivatives are composed from the first-derivative
    stencil axis by axis; tensor-product stencils commute, so the composition
    order does not matter.

    Preconditions: ``m >= 1`` and at least ``2m + 1`` nodes along every
    non-periodic axis, so that the one-sided stencils never run out of room.
    """
    if m < 1:
        raise ValueError(f"derivative order m = {m} must be at least 1")
    grid = field.grid
    for i, per in enumerate(grid.box.periodic):
        if not per and grid.node_counts[i] < 2 * m + 1:
            raise ValueError(
                f"axis {i} has {grid.node_counts[i]} nodes, need at least "
                f"{2 * m + 1} for order-{m} derivatives"
            )
    work: dict[tuple[int, ...], np.ndarray] = {(0,) * grid.ndim: field.values}
    derivs: dict[tuple[int, ...], SampledField] = {}
    for order in range(1, m + 1):
        for alpha in multi_indices(grid.ndim, order):
            axis = next(i for i, a in enumerate(alpha) if a > 0)
            parent = list(alpha)
            parent[axis] -= 1
            arr = _diff_axis(work[tuple(parent)], grid, axis)
            work[alpha] = arr
            derivs[alpha] = SampledField(grid, arr)
    return JetField(field, derivs)


def outer_weights(grid: Grid) -> np.ndarray:
    """Tensor-product trapezoid weights over all grid nodes."""
    w = np.ones((1,) * grid.ndim)
    for i in range(grid.ndim):
        h = grid.spacing[i]
        n = grid.node_counts[i]
        wi = np.full(n, h)
        if not grid.box.periodic[i]:
            wi[0] *= 0.5
            wi[-1] *= 0.5
        shape = [1] * grid.ndim
        shape[i] = n
        w = w * wi.reshape(shape)
    return w


def integrate(values: np.ndarray, grid: Grid) -> float:
    """Trapezoid integral of nodal values over the box."""
    return float(np.sum(outer_weights(grid) * values))


def lp_norm(field: SampledField, p: float) -> float:
    """Trapezoid L^p norm, ``p >= 1``."""
    if p < 1:
        raise ValueError(f"p = {p} must be at least 1")
    return integrate(np.abs(field.values) ** p, field.grid) ** (1.0 / p)


def random_band_limited(grid: Grid, seed: int, max_mode: int = 3,
                        amplitude: float = 1.0) -> SampledField:
    """Deterministic smooth random field with a hard mode cutoff.

    Periodic axes contribute full-period cosines, non-periodic axes
    half-period ones, each with a random phase; mode amplitudes fall off
    quadratically so derivatives stay tame.  The same seed always produces
    the same field on the same grid.
    """
    rng = np.random.default_rng(seed)
    mesh = grid.nodes()
    values = np.zeros(grid.node_counts)
    for modes in itertools.product(range(max_mode + 1), repeat=grid.ndim):
        if all(k == 0 for k in modes):
            continue
        coeff = rng.normal() / (1.0 + sum(k * k for k in modes))
        phases = rng.uniform(0.0, 2.0 * np.pi, grid.ndim)
        term = np.full(grid.node_counts, coeff)
        for i, k in enumerate(modes):
            if k == 0:
                continue
            length = grid.box.hi[i] - grid.box.lo[i]
            factor = 2.0 * np.pi if grid.box.periodic[i] else np.pi
            term = term * np.cos(factor * k * (mesh[i] - grid.box.lo[i]) / length
                                 + phases[i])
        values += term
    return SampledField(grid, amplitude * values)


def refinement_error(values: np.ndarray, grid: Grid) -> float:
    """Two-level quadrature error estimate for the trapezoid integral.

    Compares the integral to the one on every other node.  Requires even cell
    counts; returns 0.0 when the grid cannot be coarsened, in which case
    callers fall back on their own tolerance floors.
    """
    if any(n % 2 for n in grid.shape):
        return 0.0
    coarse_grid = Grid(grid.box, tuple(n // 2 for n in grid.shape))
    sl = tuple(slice(None, None, 2) for _ in range(grid.ndim))
    coarse = values[sl]
    return abs(integrate(values, grid) - integrate(coarse, coarse_grid))


def geometric_ladder(r_min: float, r_max: float, ratio: float = 1.15) -> np.ndarray:
    """Geometrically graded nodes from ``r_min`` up to exactly ``r_max``.

    Returns an empty array when ``r_max <= r_min``.
    """
    if ratio <= 1.0:
        raise ValueError(f"grading ratio {ratio} must exceed 1")
    if r_max <= r_min:
        return np.empty(0)
    count = int(np.ceil(np.log(r_max / r_min) / np.log(ratio)))
    ladder = r_min * ratio ** np.arange(count + 1)
    ladder[-1] = r_max
    if count >= 1 and ladder[-1] <= ladder[-2]:
        ladder = np.delete(ladder, -2)
    return ladder


def ladder_cutoff_weights(ladder: np.ndarray, cutoffs: np.ndarray) -> np.ndarray:
    """Trapezoid weights on a ladder, truncated at per-row cutoff radii.

    Row ``c`` integrates a piecewise-linear integrand over
    ``[ladder[0], min(cutoffs[c], ladder[-1])]``; the final partial interval
    is handled by linear interpolation.  Cutoffs at or below ``ladder[0]``
    produce zero rows.
    """
    cutoffs = np.atleast_1d(np.asarray(cutoffs, dtype=float))
    K = ladder.size
    w = np.zeros((cutoffs.size, K))
    if K < 2:
        return w
    deltas = np.diff(ladder)
    cut = np.clip(cutoffs, ladder[0], ladder[-1])
    jstar = np.clip(np.searchsorted(ladder, cut, side="right") - 1, 0, K - 1)
    # complete intervals j < jstar contribute half their length to both ends
    cols = np.arange(K - 1)
    full = cols[None, :] < jstar[:, None]
    half = np.where(full, deltas[None, :] / 2.0, 0.0)
    w[:, :-1] += half
    w[:, 1:] += half
    # partial last interval [ladder[jstar], cut]
    has_part = jstar < K - 1
    j = np.where(has_part, jstar, 0)
    ell = np.where(has_part, cut - ladder[j], 0.0)
    t = np.where(has_part, ell / deltas[j], 0.0)
    rows = np.arange(cutoffs.size)
    np.add.at(w, (rows, j), ell * (1.0 - 0.5 * t))
    np.add.at(w, (rows, np.minimum(j + 1, K - 1)), ell * 0.5 * t)
    return w


def gauss_geometric_panels(a: float, b: float, ratio: float = 2.0, n: int = 16):
    """Composite Gauss-Legendre rule on a geometric subdivision of ``[a, b]``.

    Returns ``(nodes, weights)``.  Panel edges grow geometrically from ``a``,
    which resolves integrable endpoint singularities at ``a``.
    """
    if not (0 < a < b):
        raise ValueError(f"need 0 < a < b, got a={a}, b={b}")
    edges = [a]
    while edges[-1] * ratio < b:
        edges.append(edges[-1] * ratio)
    edges.append(b)
    x, w = np.polynomial.legendre.leggauss(n)
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, rad = 0.5 * (hi + lo), 0.5 * (hi - lo)
        nodes.append(mid + rad * x)
        weights.append(rad * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _interp_axis(values: np.ndarray, mask: np.ndarray | None, grid: Grid,
                 axis: int, delta: float):
    """Shift values by ``delta`` along one axis with linear interpolation."""
    h = grid.spacing[axis]
    t = delta / h
    i0 = int(np.floor(t))
    frac = t - i0
    n = values.shape[axis]
    if grid.box.periodic[axis]:
        lo = np.roll(values, -i0, axis=axis)
        hi = np.roll(values, -(i0 + 1), axis=axis)
        # periodic shifts never invalidate nodes, so the mask passes through
        return (1.0 - frac) * lo + frac * hi, mask
    idx = np.arange(n) + i0
    need_hi = frac > 0.0
    hi_idx = idx + 1 if need_hi else idx
    valid = (idx >= 0) & (hi_idx <= n - 1)
    lo_v = np.take(values, np.clip(idx, 0, n - 1), axis=axis)
    hi_v = np.take(values, np.clip(idx + 1, 0, n - 1), axis=axis)
    out = (1.0 - frac) * lo_v + frac * hi_v
    shape = [1] * values.ndim
    shape[axis] = n
    vmask = valid.reshape(shape)
    if mask is None:
        mask = np.broadcast_to(vmask, values.shape).copy()
    else:
        mask = mask & vmask
    return out, mask


def shift_interp(field: SampledField, delta) -> tuple[np.ndarray, np.ndarray]:
    """Values of ``f(x + delta)`` at every node, with a validity mask.

    Periodic axes wrap; on non-periodic axes the mask marks nodes whose
    shifted position leaves the box.  Interpolation is multilinear.
    """
    values = field.values
    mask: np.ndarray | None = None
    for axis, d in enumerate(delta):
        if d != 0.0:
            values, mask = _interp_axis(values, mask, field.grid, axis, float(d))
    if mask is None:
        mask = np.ones(values.shape, dtype=bool)
    return values, mask


def interp_at(field: SampledField, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Multilinear interpolation at arbitrary points.

    ``points`` has shape ``(..., ndim)``.  Returns values and a validity mask;
    points outside a non-periodic axis are invalid and evaluate from clamped
    indices.
    """
    grid = field.grid
    points = np.asarray(points, dtype=float)
    if points.shape[-1] != grid.ndim:
        raise ValueError(
            f"points have dimension {points.shape[-1]}, grid has {grid.ndim}"
        )
    lead = points.shape[:-1]
    flat = points.reshape(-1, grid.ndim)
    idx0 = np.empty((flat.shape[0], grid.ndim), dtype=np.int64)
    frac = np.empty_like(flat)
    valid = np.ones(flat.shape[0], dtype=bool)
    for i in range(grid.ndim):
        h = grid.spacing[i]
        t = (flat[:, i] - grid.box.lo[i]) / h
        n = grid.node_counts[i]
        if grid.box.periodic[i]:
            t = np.mod(t, grid.shape[i])
            base = np.floor(t).astype(np.int64)
            idx0[:, i] = base
            frac[:, i] = t - base
        else:
            base = np.floor(t).astype(np.int64)
            frac_i = t - base
            inside = (t >= 0.0) & (t <= n - 1)
            valid &= inside
            base = np.clip(base, 0, n - 2)
            idx0[:, i] = base
            frac[:, i] = np.clip(t - base, 0.0, 1.0)
    out = np.zeros(flat.shape[0])
    strides = np.array(field.values.strides) // field.values.itemsize
    ravel = field.values.ravel()
    for corner in itertools.product((0, 1), repeat=grid.ndim):
        weight = np.ones(flat.shape[0])
        lin = np.zeros(flat.shape[0], dtype=np.int64)
        for i, c in enumerate(corner):
            weight *= frac[:, i] if c else (1.0 - frac[:, i])
            pos = idx0[:, i] + c
            if grid.box.periodic[i]:
                pos = np.mod(pos, grid.shape[i])
            else:
                pos = np.clip(pos, 0, grid.node_counts[i] - 1)
            lin += pos * strides[i]
        out += weight * ravel[lin]
    return out.reshape(lead), valid.reshape(lead)


def unit_ball_volume(d: int) -> float:
    """Lebesgue measure of the unit ball in d dimensions."""
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def unit_sphere_area(d: int) -> float:
    """Surface measure of the unit sphere in ``R^d`` (two points for d=1)."""
    return d * unit_ball_volume(d)


def multi_indices(ndim: int, order: int) -> list[tuple[int, ...]]:
    """All multi-indices of exact total order, in lexicographic order."""
    out = []
    for combo in itertools.combinations_with_replacement(range(ndim), order):
        alpha = [0] * ndim
        for axis in combo:
            alpha[axis] += 1
        out.append(tuple(alpha))
    return sorted(set(out))


def multi_indices_upto(ndim: int, m: int) -> list[tuple[int, ...]]:
    out = []
    for order in range(1, m + 1):
        out.extend(multi_indices(ndim, order))
    return out


def multi_index_multiplicity(alpha: tuple[int, ...]) -> int:
    """Number of ordered derivative tuples collapsing to ``alpha``."""
    order = sum(alpha)
    count = math.factorial(order)
    for a in alpha:
        count //= math.factorial(a)
    return count


def save_field(field: SampledField, path: str) -> None:
    """Write a field as a JSON header plus flat little-endian float64 data.

    ``path`` may carry a ``.json`` suffix or none; the data file sits next to
    the header with a ``.bin`` suffix.
    """
    stem = path[:-5] if path.endswith(".json") else path
    data_path = stem + ".bin"
    header = {
        "format": "sobotrace-field",
        "version": 1,
        "box": {
            "lo": list(field.grid.box.lo),
            "hi": list(field.grid.box.hi),
            "periodic": list(field.grid.box.periodic),
        },
        "shape": list(field.grid.shape),
        "dtype": "<f8",
        "order": "C",
        "data_file": os.path.basename(data_path),
    }
    with open(stem + ".json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    field.values.astype("<f8").tofile(data_path)


def load_field(path: str) -> SampledField:
    stem = path[:-5] if path.endswith(".json") else path
    with open(stem + ".json") as fh:
        header = json.load(fh)
    if header.get("format") != "sobotrace-field":
        raise ValueError(f"{path}: not a field header")
    box = header["box"]
    grid = make_grid(box["lo"], box["hi"], header["shape"], box["periodic"])
    data_path = os.path.join(os.path.dirname(stem) or ".", header["data_file"])
    values = np.fromfile(data_path, dtype="<f8").reshape(grid.node_counts)
    return SampledField(grid, values)


def export_csv(field: SampledField, path: str) -> None:
    """Node coordinates and values as CSV with a header row."""
    grid = field.grid
    mesh = grid.nodes()
    cols = [m.ravel() for m in mesh] + [field.values.ravel()]
    header = ",".join([f"x{i}" for i in range(grid.ndim)] + ["value"])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header,
               comments="", fmt="%.17g")


def check_support_margin(field: SampledField, atol: float = 0.0) -> bool:
    """Warn unless the support keeps one support-diameter of margin.

    Checks every non-periodic axis; returns True when the margin is adequate
    (or the field vanishes identically).
    """
    grid = field.grid
    nonzero = np.abs(field.values) > atol
    if not nonzero.any():
        return True
    ok = True
    for axis in range(grid.ndim):
        if grid.box.periodic[axis]:
            continue
        other = tuple(i for i in range(grid.ndim) if i != axis)
        hit = nonzero.any(axis=other) if other else nonzero
        nodes = grid.axis_nodes(axis)
        lo_support = nodes[np.argmax(hit)]
        hi_support = nodes[len(hit) - 1 - np.argmax(hit[::-1])]
        diameter = hi_support - lo_support
        margin = min(lo_support - grid.box.lo[axis], grid.box.hi[axis] - hi_support)
        if margin < diameter:
            warnings.warn(
                f"support margin {margin:.3g} on axis {axis} is below the "
                f"support diameter {diameter:.3g}; boundary effects likely",
                UserWarning,
                stacklevel=2,
            )
            ok = False
    return ok
