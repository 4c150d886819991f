"""Separating functions for the screened and unscreened fractional scales.

Two explicit profiles drive everything here.  The first is a radial function
u(x) = f(|x|) whose derivative decays just slowly enough that the screened
seminorm (pairs closer than a fixed radius) stays finite while the unscreened
seminorm, restricted to balls B(0, R), grows like a power of R.  The second
lives on a cylinder V x (0, b) and blows up like 1/x_N at the floor; a
screening radius vanishing like a power of the floor distance tames it, but
the unscreened seminorm on V x (delta, b) diverges as delta -> 0.

The experiments tabulate both seminorms over nested truncations with a single
shared quadrature per run: every cutoff reuses the same nodes with an
indicator mask, so restricted values are *exactly* nondecreasing and screened
increments are exact, not quadrature noise.  Growth slopes come from least
squares on the last three cutoffs; earlier points carry logarithmic
transients that have nothing to do with the asymptotic rate.  Divergence is
reported as "fitted slope >= 0.5 with monotone growth" -- a finite
computation certifies growth rates, never infinities.

``no_extension_demo`` converts the radial profile into a strip statement: its
trace periodized onto ever-larger horizontal cells lifts to a strip function
whose interior energy per cell stays put, while the unscreened seminorm of
the trace keeps growing.  No fixed-energy budget can ever contain that datum
on the whole line, which is the numerical shadow of the missing extension
operator.

Tabulated growth columns hold the p-th powers of the seminorms; slopes are
fitted on those powers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import (
    SampledField,
    geometric_ladder,
    integrate,
    ladder_cutoff_weights,
    make_grid,
    unit_sphere_area,
)
from .seminorms import (
    Constant,
    Infinite,
    gradient_magnitude,
    screened_seminorm,
    thread_count,
)
from .tracelift import StripDomain, TracePair, lift_m1

__all__ = [
    "ConeWitness",
    "VanishingWitness",
    "GrowthTable",
    "NoExtensionReport",
    "cone_witness",
    "divergence_experiment",
    "vanishing_witness_experiment",
    "no_extension_demo",
]

PROFILE_RADIUS = 1.0e4
PROFILE_NODES = 200_000


# ---------------------------------------------------------------------------
# the slowly-saturating radial profile


@dataclass(frozen=True, eq=False)
class ConeWitness:
    """Radial profile u(x) = f(|x|) with derivative ~ r^{-N/p} / log^{2/p} r.

    ``f`` is the antiderivative of ``(2 + t)^{-N/p} (log(2 + t))^{-2/p}``,
    cached as a cumulative-trapezoid table on log-spaced nodes out to radius
    1e4.  ``table_error`` records the deviation from a half-density rebuild.
    """

    N: int
    p: float
    nodes: np.ndarray
    table: np.ndarray
    table_error: float

    def fprime(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return (2.0 + r) ** (-self.N / self.p) \
            * np.log(2.0 + r) ** (-2.0 / self.p)

    def f(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        top = float(np.max(r)) if r.size else 0.0
        if top > PROFILE_RADIUS:
            raise ValueError(
                f"radius {top:.3g} beyond the tabulated profile range "
                f"{PROFILE_RADIUS:.0e}"
            )
        if np.any(r < 0):
            raise ValueError("radial profile takes nonnegative radii")
        return np.interp(r, self.nodes, self.table)

    def u(self, points) -> np.ndarray:
        """Evaluate f(|x|) at an array of points with shape (..., N)."""
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.N:
            raise ValueError(
                f"points have {points.shape[-1]} components, witness lives "
                f"in dimension {self.N}"
            )
        return self.f(np.linalg.norm(points, axis=-1))

    @property
    def lipschitz(self) -> float:
        # sup |f'| sits at r = 0
        return 1.0 / (2.0 ** (self.N / self.p)
                      * math.log(2.0) ** (2.0 / self.p))


def _profile_table(N: int, p: float, count: int):
    nodes = np.concatenate([[0.0], np.geomspace(1e-6, PROFILE_RADIUS, count)])
    g = (2.0 + nodes) ** (-N / p) * np.log(2.0 + nodes) ** (-2.0 / p)
    cum = np.concatenate(
        [[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * np.diff(nodes))]
    )
    return nodes, cum


def cone_witness(N: int, p: float) -> ConeWitness:
    """Build the radial separating profile in dimension ``N``.

    The profile is Lipschitz with constant ``2^{-N/p} (log 2)^{-2/p}``,
    vanishes at the origin, and increases radially.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"dimension N = {N} must be a positive integer")
    if p < 1.0:
        raise ValueError(f"exponent p = {p} must be at least 1")
    N = int(N)
    nodes, cum = _profile_table(N, p, PROFILE_NODES)
    half_nodes, half_cum = _profile_table(N, p, PROFILE_NODES // 2)
    # the deviation is dominated by the half-density table, so it sits a few
    # times above the full table's own error
    err = float(np.max(np.abs(np.interp(half_nodes, nodes, cum) - half_cum)))
    if err > 5e-7:
        raise RuntimeError(
            f"profile table failed its refinement self-check: {err:.3e}"
        )
    return ConeWitness(N, float(p), nodes, cum, err)


# ---------------------------------------------------------------------------
# the inverse-height profile on a cylinder


@dataclass(frozen=True)
class VanishingWitness:
    """u(x) = 1/x_N on the unit horizontal cell times (0, b).

    The screening radius ``sigma(x) = (x_N / b)^r / 2`` vanishes at the
    floor; the power must exceed ``(2 - 1/p)/(1 - s)`` for the screened
    energy to stay finite, and that threshold is enforced strictly.
    """

    N: int
    p: float
    s: float
    r: float
    b: float = 1.0

    def __post_init__(self):
        if self.N != 2:
            raise ValueError(
                "only the planar cylinder (one horizontal dimension) is "
                f"wired up; got N = {self.N}"
            )
        if self.p < 1.0:
            raise ValueError(f"exponent p = {self.p} must be at least 1")
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"order s = {self.s} must lie in (0, 1)")
        if not self.b > 0.0:
            raise ValueError(f"height b = {self.b} must be positive")
        threshold = (2.0 - 1.0 / self.p) / (1.0 - self.s)
        if not self.r > threshold:
            raise ValueError(
                f"screening power r = {self.r} must exceed "
                f"(2 - 1/p)/(1 - s) = {threshold:.6g}"
            )

    def sigma(self, x_n) -> np.ndarray:
        # stays inside (0, 1/2) on the open cylinder since r > 1
        return 0.5 * (np.asarray(x_n, dtype=float) / self.b) ** self.r

    def u(self, x_n) -> np.ndarray:
        return 1.0 / np.asarray(x_n, dtype=float)


# ---------------------------------------------------------------------------
# growth tables


@dataclass
class GrowthTable:
    """Seminorm p-th powers over nested cutoffs plus fitted growth slopes.

    ``slope_so_far[i]`` is the least-squares slope over rows
    ``max(0, i-2) .. i``; ``slope`` is the last entry, i.e. the fit on the
    final three cutoffs.  For the divergence experiment the abscissa is the
    cutoff radius, for the vanishing experiment it is ``1/delta``.
    """

    cutoff: np.ndarray
    screened_p: np.ndarray
    full_p: np.ndarray
    slope_so_far: np.ndarray
    slope: float
    meta: dict = field(default_factory=dict)

    def increments(self) -> np.ndarray:
        return np.diff(self.screened_p)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["cutoff", "screened", "full", "slope_so_far"])
            for row in zip(self.cutoff, self.screened_p, self.full_p,
                           self.slope_so_far):
                writer.writerow([f"{v:.12g}" for v in row])


def _tail_slopes(xlog: np.ndarray, values: np.ndarray):
    """Rolling least-squares slope of log(values) over trailing windows <= 3.

    Nonpositive values mark a degenerate (identically small) column; all
    slopes collapse to 0 in that case.
    """
    n = values.size
    slopes = np.zeros(n)
    if np.any(values <= 0.0):
        return slopes, 0.0
    ylog = np.log(values)
    slopes[0] = np.nan
    for i in range(1, n):
        lo = max(0, i - 2)
        xs, ys = xlog[lo:i + 1], ylog[lo:i + 1]
        design = np.vstack([xs, np.ones(xs.size)]).T
        slopes[i] = float(np.linalg.lstsq(design, ys, rcond=None)[0][0])
    return slopes, float(slopes[-1])


def _parallel_blocks(work, n_blocks: int):
    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, range(n_blocks)))
    else:
        parts = [work(i) for i in range(n_blocks)]
    total = parts[0]
    for part in parts[1:]:  # fixed reduction order keeps results exact
        total = total + part
    return total


def _radial_directions(N: int, n_angular: int):
    if N == 1:
        return np.array([1.0, -1.0]), np.array([1.0, 1.0])
    if N == 2:
        psi = 2.0 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
        return np.cos(psi), np.full(n_angular, 2.0 * np.pi / n_angular)
    raise ValueError(f"radial experiments support N in {{1, 2}}, got {N}")


def _screened_cone_bound(witness: ConeWitness, s: float, p: float) -> float:
    """Explicit finite bound on the sigma = 1 screened energy.

    Near pairs pay the Lipschitz constant through the h-moment
    ``beta_N / ((1-s) p)`` over the unit ball of x; far pairs pay the
    product of the decaying radial tail of ``(f')^p`` with the same
    h-moment.  The tail integral is capped and the cap's remainder is
    added, so the assembled number is a genuine upper bound.
    """
    N = witness.N
    beta = unit_sphere_area(N)
    alpha = beta / N
    moment = 1.0 / ((1.0 - s) * p)
    lip = witness.lipschitz
    near = alpha * beta * lip ** p * moment
    # tail of (1+r)^{-N} log^{-2}(1+r) r^{N-1} in the variable w = log(1+r)
    w = np.geomspace(math.log(2.0), 1e6, 20_000)
    integrand = (1.0 - np.exp(-np.minimum(w, 700.0))) ** (N - 1) / w ** 2
    tail = float(np.trapezoid(integrand, w)) + 1.0 / w[-1]
    far = beta ** 2 * tail * moment
    return near + far


def divergence_experiment(witness, sigma, s: float, p: float, radii,
                          per_octave: int = 40, n_angular: int = 32,
                          ratio: float = 1.15) -> GrowthTable:
    """Screened versus unscreened growth of a radial profile over B(0, R).

    Parameters
    ----------
    witness : object
        Anything with attributes ``N`` (1 or 2), ``f(r)`` and ``fprime(r)``;
        normally a ``ConeWitness``.
    sigma : float or Constant
        Screening radius for the converging column.
    radii : sequence of float
        Strictly increasing ball cutoffs, at least two.

    Every cutoff reuses one shared quadrature with nested indicator masks,
    so the unscreened column is exactly nondecreasing and the screened
    increments are exact differences.  For a ``ConeWitness`` at sigma = 1
    the screened column is checked against the assembled near+far bound.
    """
    if isinstance(sigma, Constant):
        sigma = sigma.a
    sigma = float(sigma)
    if not sigma > 0.0 or not np.isfinite(sigma):
        raise ValueError(f"screening radius {sigma} must be positive finite")
    if not 0.0 < s < 1.0:
        raise ValueError(f"order s = {s} must lie in (0, 1)")
    if p < 1.0:
        raise ValueError(f"exponent p = {p} must be at least 1")
    radii = np.asarray(radii, dtype=float)
    if radii.size < 2 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing with length >= 2")
    N = int(witness.N)
    cos_psi, w_psi = _radial_directions(N, n_angular)
    beta = unit_sphere_area(N)

    r_max = float(radii[-1])
    r_lo = 1e-3 * min(1.0, sigma)
    n_r = int(np.ceil(np.log2(r_max / r_lo) * per_octave)) + 1
    r_nodes = np.geomspace(r_lo, r_max, n_r)
    w_r = np.zeros(n_r)
    w_r[1:-1] = 0.5 * (r_nodes[2:] - r_nodes[:-2])
    # first weight closes the [0, r_lo] gap; the profile vanishes there
    w_r[0] = 0.5 * (r_nodes[1] - r_nodes[0]) + r_nodes[0]
    w_r[-1] = 0.5 * (r_nodes[-1] - r_nodes[-2])

    ell_min = 1e-3 * min(1.0, sigma)
    ladder = geometric_ladder(ell_min, 2.0 * r_max, ratio)
    kern = ladder ** (-s * p - 1.0)
    w_scr = ladder_cutoff_weights(ladder, np.array([sigma]))[0] * kern
    w_full = ladder_cutoff_weights(ladder, np.array([2.0 * r_max]))[0] * kern

    # below ell_min the increment is f'(r) ell cos(psi) to leading order
    c_dir = float(np.sum(w_psi * np.abs(cos_psi) ** p))
    fp = np.asarray(witness.fprime(r_nodes), dtype=float)
    core_density = beta * r_nodes ** (N - 1) * np.abs(fp) ** p * c_dir \
        * ell_min ** ((1.0 - s) * p) / ((1.0 - s) * p)
    f_base = np.asarray(witness.f(r_nodes), dtype=float)

    block = 64
    n_blocks = (n_r + block - 1) // block

    def one_block(bi: int) -> np.ndarray:
        i0, i1 = bi * block, min((bi + 1) * block, n_r)
        r = r_nodes[i0:i1]
        rho = np.sqrt(r[:, None, None] ** 2 + ladder[None, :, None] ** 2
                      + 2.0 * r[:, None, None] * ladder[None, :, None]
                      * cos_psi[None, None, :])
        dval = np.abs(np.asarray(witness.f(rho), dtype=float)
                      - f_base[i0:i1, None, None]) ** p
        base = w_r[i0:i1, None, None] * beta * r[:, None, None] ** (N - 1) \
            * dval * w_psi[None, None, :]
        out = np.zeros((2, radii.size))
        for j, R in enumerate(radii):
            masked = base * ((r[:, None, None] <= R) & (rho <= R))
            core = float(np.sum(w_r[i0:i1] * core_density[i0:i1] * (r <= R)))
            out[0, j] = np.sum(masked * w_scr[None, :, None]) + core
            out[1, j] = np.sum(masked * w_full[None, :, None]) + core
        return out

    screened_p, full_p = _parallel_blocks(one_block, n_blocks)

    xlog = np.log(radii)
    slopes, slope = _tail_slopes(xlog, full_p)
    increments = np.diff(screened_p)
    meta = {
        "s": s,
        "p": p,
        "sigma": sigma,
        "witness_dim": N,
        "screened_increments": increments,
        "diverges": bool(slope >= 0.5 and np.all(np.diff(full_p) > 0.0)),
    }
    if isinstance(witness, ConeWitness) and sigma == 1.0:
        bound = _screened_cone_bound(witness, s, p)
        meta["screened_bound"] = bound
        if float(np.max(screened_p)) > bound:
            raise RuntimeError(
                f"screened energy {float(np.max(screened_p)):.6g} exceeds "
                f"its assembled bound {bound:.6g}; the quadrature is broken"
            )
    return GrowthTable(radii, screened_p, full_p, slopes, slope, meta)


def vanishing_witness_experiment(N: int, p: float, s: float, r: float,
                                 deltas, b: float = 1.0,
                                 per_octave: int = 64, n_angular: int = 32,
                                 ratio: float = 1.12) -> GrowthTable:
    """Growth of 1/x_N on V x (delta, b) as the floor distance shrinks.

    The screened column uses the vanishing radius ``(x_N/b)^r / 2`` and
    converges; the unscreened column grows like ``delta^{1-(1+s)p}`` and its
    fitted slope against ``log(1/delta)`` is reported.  The pair integral
    collapses to polar coordinates in ``(h_N, |h'|)`` because the profile
    only sees the vertical coordinate; the horizontal cell contributes its
    measure and a half-cell cap on ``|h'|``.
    """
    witness = VanishingWitness(int(N), float(p), float(s), float(r), float(b))
    deltas = np.asarray(deltas, dtype=float)
    if deltas.size < 2 or np.any(np.diff(deltas) >= 0):
        raise ValueError("deltas must be strictly decreasing with length >= 2")
    if deltas[0] >= b or deltas[-1] <= 0:
        raise ValueError(f"deltas must lie inside (0, {b})")

    d_min = float(deltas[-1])
    n_x = int(np.ceil(np.log2(b / d_min) * per_octave)) + 1
    x_nodes = np.geomspace(d_min, b, n_x)
    w_x = np.zeros(n_x)
    w_x[1:-1] = 0.5 * (x_nodes[2:] - x_nodes[:-2])
    w_x[0] = 0.5 * (x_nodes[1] - x_nodes[0])
    w_x[-1] = 0.5 * (x_nodes[-1] - x_nodes[-2])

    sig = witness.sigma(x_nodes)
    tau_min = 0.05 * float(sig.min())
    ladder = geometric_ladder(tau_min, 1.3 * b, ratio)
    kern = ladder ** (-s * p - 1.0)
    w_scr = ladder_cutoff_weights(ladder, sig) * kern[None, :]
    w_full = ladder_cutoff_weights(ladder, np.array([1.3 * b]))[0] * kern

    phi = np.pi * (np.arange(n_angular) + 0.5) / n_angular
    cos_phi, sin_phi = np.cos(phi), np.sin(phi)
    w_phi = np.full(n_angular, np.pi / n_angular)
    c_dir = float(np.sum(w_phi * np.abs(cos_phi) ** p))
    # |u'| = 1/x^2; tau_min sits below every sigma(x) by construction
    core_density = 2.0 * c_dir * x_nodes ** (-2.0 * p) \
        * tau_min ** ((1.0 - s) * p) / ((1.0 - s) * p)

    block = 64
    n_blocks = (n_x + block - 1) // block

    def one_block(bi: int) -> np.ndarray:
        i0, i1 = bi * block, min((bi + 1) * block, n_x)
        x = x_nodes[i0:i1]
        y = x[:, None, None] + ladder[None, :, None] * cos_phi[None, None, :]
        safe = np.where(y > 0.0, y, 1.0)
        du = np.abs(np.where(y > 0.0, 1.0 / safe, 0.0)
                    - 1.0 / x[:, None, None]) ** p
        ell = ladder[None, :, None] * sin_phi[None, None, :]
        out = np.zeros((2, deltas.size))
        for j, d in enumerate(deltas):
            sel = (y > d) & (y < b) & (x >= d)[:, None, None]
            base = w_x[i0:i1, None, None] * 2.0 * du * sel \
                * w_phi[None, None, :]
            core = float(np.sum(w_x[i0:i1] * core_density[i0:i1] * (x >= d)))
            out[0, j] = np.sum(base * w_scr[i0:i1][:, :, None]) + core
            out[1, j] = np.sum(base * w_full[None, :, None]
                               * (ell <= 0.5)) + core
        return out

    screened_p, full_p = _parallel_blocks(one_block, n_blocks)

    slopes, slope = _tail_slopes(np.log(1.0 / deltas), full_p)
    increments = np.diff(screened_p)
    meta = {
        "s": s,
        "p": p,
        "r": r,
        "b": b,
        "witness_dim": int(N),
        "screened_increments": increments,
        "diverges": bool(slope >= 0.5 and np.all(np.diff(full_p) > 0.0)),
    }
    return GrowthTable(deltas, screened_p, full_p, slopes, slope, meta)


# ---------------------------------------------------------------------------
# the missing extension operator


@dataclass
class NoExtensionReport:
    """Interior energy versus boundary seminorm growth across cell sizes."""

    cells: np.ndarray
    interior_energy: np.ndarray
    boundary_p: np.ndarray
    slope_so_far: np.ndarray
    slope: float
    energy_ratio: float
    meta: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                ["cell", "interior_energy", "boundary", "slope_so_far"]
            )
            for row in zip(self.cells, self.interior_energy, self.boundary_p,
                           self.slope_so_far):
                writer.writerow([f"{v:.12g}" for v in row])


def no_extension_demo(p: float, cells=(20.0, 60.0, 200.0),
                      resolution: float = 0.25, vertical_cells: int = 32,
                      blend_scale: float = 0.5, datum=None) -> NoExtensionReport:
    """Bounded interior energy, growing boundary seminorm: no extension.

    The radial separating profile in the horizontal dimension is restricted
    and periodized onto cells of increasing size, then lifted into the unit
    strip with equal wall data.  The interior Dirichlet energy of the lift
    settles to a constant per cell, while the unscreened seminorm of the
    wall datum (at the trace order ``1 - 1/p``) keeps growing with the cell;
    any whole-space function of finite energy would force that seminorm to
    stay bounded.

    ``datum`` overrides the profile with an arbitrary callable on node
    coordinates, which is how genuinely extendable data (smooth compactly
    supported, constant) show both columns bounded.
    """
    if p <= 1.0:
        raise ValueError(f"exponent p = {p} must exceed 1")
    cells = np.asarray(cells, dtype=float)
    if cells.size < 2 or np.any(np.diff(cells) <= 0):
        raise ValueError("cells must be strictly increasing with length >= 2")
    s = 1.0 - 1.0 / p
    if datum is None:
        witness = cone_witness(1, p)
        datum = lambda x: witness.f(np.abs(x))
        source = "cone"
    else:
        source = "custom"

    energies = np.zeros(cells.size)
    boundary = np.zeros(cells.size)
    for i, cell in enumerate(cells):
        n = int(round(cell / resolution))
        horizontal = make_grid([-cell / 2.0], [cell / 2.0], (n,),
                               periodic=(True,))
        trace = SampledField(horizontal, np.asarray(
            datum(horizontal.axis_nodes(0)), dtype=float))
        boundary[i] = screened_seminorm(trace, Infinite(), s, p).value_p
        strip = StripDomain(0.0, 1.0, horizontal.box)
        grid = strip.grid((n, vertical_cells))
        lifted = lift_m1(TracePair(trace, trace), blend_scale, strip, grid)
        energies[i] = integrate(gradient_magnitude(lifted, 1) ** p, grid)

    slopes, slope = _tail_slopes(np.log(cells), boundary)
    top = float(energies.max())
    # constant data leave only roundoff in the gradient; a ratio of noise
    # means nothing
    ratio = float(top / energies.min()) if top > 1e-15 else 1.0
    meta = {
        "p": p,
        "s": s,
        "datum": source,
        "resolution": resolution,
        "vertical_cells": vertical_cells,
        "diverges": bool(slope >= 0.5 and np.all(np.diff(boundary) > 0.0)),
    }
    return NoExtensionReport(cells, energies, boundary, slopes, slope,
                             ratio, meta)
