"""Command line driver: validated experiment configs in, artifact files out.

Every command validates its parameters against the JSON schema shipped under
``schemas/``, runs the corresponding library checks, and writes its artifacts
side by side: a JSON report, a CSV with the row data, and rendered PNG
figures.  Reports carry no timestamps, so the same configuration, seed, and
thread count produce byte-identical JSON.

Exit status: 0 when every inequality check in the run passed, 1 when at
least one failed, 2 for a configuration that does not validate (nothing is
written in that case), 3 for a numerical failure during execution.
"""

from __future__ import annotations

import argparse
import csv
import importlib.resources
import json
import math
import os
import sys
from dataclasses import dataclass, field

import jsonschema
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .fields import (Box, SampledField, integrate, load_field, make_grid,
                     random_band_limited, save_field)
from .fourier import multiplier_bounds_check, seminorm_plancherel_check
from .mollifiers import build_moment_mollifier, moment_table
from .pde import (NeumannData, SolverOptions, energy_bound_check, p_dirichlet,
                  p_laplacian_with_drift, solve_dirichlet, solve_neumann)
from .seminorms import (Constant, Infinite, direct_double_sum,
                        screened_seminorm, thread_count)
from .tracelift import (StripDomain, TracePair, horizontal_grid,
                        jet_recovery_study, lift_recovery_study,
                        trace_check_m1)
from .witnesses import (cone_witness, divergence_experiment, no_extension_demo,
                        vanishing_witness_experiment)


class ConfigError(ValueError):
    """Configuration rejected before execution; maps to exit status 2."""


@dataclass
class ExperimentConfig:
    command: str
    parameters: dict
    output: str
    seed: int = 0


@dataclass
class CommandResult:
    report: dict
    checks: list
    csv_header: list
    csv_rows: list
    figures: list = field(default_factory=list)
    fields_out: list = field(default_factory=list)


def _load_schema(command: str) -> dict:
    ref = importlib.resources.files("sobotrace") / "schemas" / f"{command}.json"
    with ref.open("r") as fh:
        return json.load(fh)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.12g}"
    return str(value)


def _check(ident: str, passed: bool, lhs: float, rhs: float) -> dict:
    return {"id": ident, "pass": bool(passed), "lhs": float(lhs),
            "rhs": float(rhs)}


# ---------------------------------------------------------------------------
# command handlers


def _run_seminorm(params: dict, seed: int) -> CommandResult:
    shape = tuple(int(n) for n in params.get("shape", [48]))
    extent = float(params.get("extent", 1.0))
    p = float(params.get("p", 2.0))
    s = float(params.get("s", 0.5))
    screening = params.get("screening", {})
    kind = screening.get("kind", "constant")
    brute = bool(params.get("brute", False))
    tol = float(params.get("tolerance", 0.05))
    if kind == "infinite":
        if brute:
            raise ConfigError(
                "brute-force comparison needs a finite screening radius")
        sigma = Infinite()
    else:
        sigma = Constant(float(screening.get("a", 0.25)))
    dim = len(shape)
    grid = make_grid((0.0,) * dim, (extent,) * dim, shape, (True,) * dim)
    rows, checks = [], []
    for i in range(int(params.get("fields", 5))):
        f = random_band_limited(grid, seed=seed + i,
                                max_mode=int(params.get("max_mode", 3)))
        res = screened_seminorm(f, sigma, s, p)
        row = {"field": i, "value": res.value,
               "error_estimate": res.quadrature_error_estimate}
        if brute:
            reference = direct_double_sum(f, sigma, s, p)
            rel = abs(res.value - reference) / max(reference, 1e-300)
            row["brute"] = reference
            row["rel_dev"] = rel
            checks.append(_check(f"brute_agreement_{i}", rel <= tol, rel, tol))
        rows.append(row)

    def draw(ax):
        idx = [r["field"] for r in rows]
        ax.bar(idx, [r["value"] for r in rows], color="#4878a8",
               label="polar quadrature")
        if brute:
            ax.plot(idx, [r["brute"] for r in rows], "k_", markersize=14,
                    label="all-pairs sum")
            ax.legend()
        ax.set_xlabel("field")
        ax.set_ylabel("screened seminorm")
        ax.set_title(f"p = {p}, s = {s}")

    header = ["field", "value", "error_estimate"]
    if brute:
        header += ["brute", "rel_dev"]
    report = {"p": p, "s": s, "screening": sigma.describe(),
              "shape": list(shape), "rows": rows}
    return CommandResult(report, checks, header,
                         [[r.get(h, "") for h in header] for r in rows],
                         [("values", draw)])


def _run_mollifier(params: dict, seed: int) -> CommandResult:
    dim = int(params.get("dim", 1))
    k = int(params.get("k", 2))
    m = int(params.get("m", 2))
    tol = float(params.get("tolerance", 1e-9))
    phi = build_moment_mollifier(dim, k, m)
    table = moment_table(phi)
    rows, checks = [], []
    for alpha in sorted(table):
        value = table[alpha]
        target = 1.0 if sum(alpha) == 0 else 0.0
        residual = abs(value - target)
        name = "m" + "_".join(str(a) for a in alpha)
        rows.append({"alpha": " ".join(str(a) for a in alpha),
                     "moment": value, "target": target, "residual": residual})
        checks.append(_check(f"moment_{name}", residual <= tol, residual, tol))

    def draw(ax):
        r = np.linspace(0.0, 1.05, 400)
        ax.plot(r, phi.profile_at(r), color="#4878a8")
        ax.axhline(0.0, color="0.6", linewidth=0.7)
        ax.set_xlabel("radius")
        ax.set_ylabel("profile")
        ax.set_title(f"dim {dim}, {k} vanishing moments, smoothness {m}")

    report = {"dim": dim, "k": k, "m": m, "rows": rows}
    header = ["alpha", "moment", "target", "residual"]
    return CommandResult(report, checks, header,
                         [[r[h] for h in header] for r in rows],
                         [("profile", draw)])


_FOURIER_DEFAULT_SHAPE = {1: [256], 2: [64, 64], 3: [24, 24, 24]}


def _run_fourier(params: dict, seed: int) -> CommandResult:
    s = float(params.get("s", 0.5))
    dim = int(params.get("dim", 1))
    xi = [float(v) for v in params.get("xi", [0.05, 0.1, 0.25, 0.5, 1, 2, 4, 8])]
    tol = float(params.get("tolerance", 0.01))
    bounds = multiplier_bounds_check(s, dim, xi)
    rows = [{"xi": r.xi, "m": r.m, "lower": r.lower,
             "upper": "" if r.upper is None else r.upper,
             "regime": r.regime, "ok": r.ok} for r in bounds.rows]
    checks = [_check(f"bound_xi_{r.xi:g}", r.ok, r.m, r.lower)
              for r in bounds.rows]
    report = {"s": s, "dim": dim, "constants": bounds.constants, "rows": rows}
    spectral = None
    if params.get("plancherel", True):
        shape = params.get("shape", _FOURIER_DEFAULT_SHAPE[dim])
        if len(shape) != dim:
            raise ConfigError(
                f"shape has {len(shape)} axes but dim is {dim}")
        grid = make_grid((0.0,) * dim, (1.0,) * dim,
                         tuple(int(n) for n in shape), (True,) * dim)
        f = random_band_limited(grid, seed=seed,
                                max_mode=int(params.get("max_mode", 3)))
        res = seminorm_plancherel_check(f, s, tolerance=tol)
        spectral = {"lhs": res.lhs, "rhs": res.rhs,
                    "relative_gap": res.detail["relative_gap"],
                    "shape": [int(n) for n in shape]}
        checks.append(_check("spectral_identity", res.passed,
                             res.detail["relative_gap"], tol))
        report["spectral_identity"] = spectral

    def draw(ax):
        xs = np.array([r.xi for r in bounds.rows])
        ms = np.array([r.m for r in bounds.rows])
        lo = np.array([r.lower for r in bounds.rows])
        ax.loglog(xs, ms, "o-", color="#4878a8", label="multiplier")
        ax.loglog(xs, lo, "--", color="#a85048", label="lower envelope")
        ups = [(r.xi, r.upper) for r in bounds.rows if r.upper is not None]
        if ups:
            ax.loglog([u[0] for u in ups], [u[1] for u in ups], ":",
                      color="#48a878", label="upper envelope")
        ax.set_xlabel("|frequency|")
        ax.set_ylabel("m")
        ax.legend()
        ax.set_title(f"s = {s}, dim {dim}")

    header = ["xi", "m", "lower", "upper", "regime", "ok"]
    return CommandResult(report, checks, header,
                         [[r[h] for h in header] for r in rows],
                         [("multiplier", draw)])


def _run_trace_check(params: dict, seed: int) -> CommandResult:
    p = float(params.get("p", 2.0))
    shape = tuple(int(n) for n in params.get("shape", [48, 24]))
    extent = float(params.get("extent", 1.0))
    thickness = float(params.get("thickness", 1.0))
    hdim = len(shape) - 1
    strip = StripDomain(0.0, thickness,
                        Box((0.0,) * hdim, (extent,) * hdim, (True,) * hdim))
    grid = strip.grid(shape)
    rows, checks = [], []
    for i in range(int(params.get("fields", 5))):
        u = random_band_limited(grid, seed=seed + i,
                                max_mode=int(params.get("max_mode", 3)))
        rep = trace_check_m1(u, p)
        for row in rep.rows:
            rows.append({"field": i, **row})
            checks.append(_check(f"field{i}_{row['id']}", row["pass"],
                                 row["lhs"], row["rhs"] + row["slack"]))

    def draw(ax):
        lhs = np.array([r["lhs"] for r in rows])
        rhs = np.array([r["rhs"] for r in rows])
        lo = max(min(lhs.min(), rhs.min()), 1e-30)
        hi = max(lhs.max(), rhs.max())
        ax.loglog(rhs, lhs, "o", color="#4878a8")
        ax.loglog([lo, hi], [lo, hi], "--", color="0.5", label="equality")
        ax.set_xlabel("bound")
        ax.set_ylabel("measured")
        ax.legend()
        ax.set_title(f"trace estimates, p = {p}")

    report = {"p": p, "shape": list(shape), "thickness": thickness,
              "rows": rows}
    header = ["field", "id", "lhs", "rhs", "constant", "slack", "pass"]
    return CommandResult(report, checks, header,
                         [[r[h] for h in header] for r in rows],
                         [("estimates", draw)])


def _trig_datum(rng: np.random.Generator, dim: int):
    coeff = rng.standard_normal((dim, 3, 2)) / 3.0

    def f(*xs):
        out = np.zeros_like(xs[0], dtype=float)
        for axis in range(dim):
            for mode in range(3):
                w = 2.0 * np.pi * (mode + 1) * xs[axis]
                out = out + coeff[axis, mode, 0] * np.sin(w)
                out = out + coeff[axis, mode, 1] * np.cos(w)
        return out

    return f


def _run_lift(params: dict, seed: int) -> CommandResult:
    m = int(params.get("m", 1))
    a = float(params.get("a", 0.5))
    thickness = float(params.get("thickness", 1.0))
    dim = int(params.get("dim", 1))
    shapes = [int(n) for n in params.get("shapes", [64, 128, 256])]
    p = float(params.get("p", 2.0))
    floor = float(params.get("order_floor", 0.9))
    strip = StripDomain(0.0, thickness,
                        Box((0.0,) * dim, (1.0,) * dim, (True,) * dim))
    rng = np.random.default_rng(seed)
    if m == 1:
        study = lift_recovery_study(_trig_datum(rng, dim), _trig_datum(rng, dim),
                                    a, strip, shapes, p)
    else:
        minus = [_trig_datum(rng, dim) for _ in range(m)]
        plus = [_trig_datum(rng, dim) for _ in range(m)]
        study = jet_recovery_study(minus, plus, a, strip, shapes, m, p)
    checks = [_check("refinement_order", study["measured_order"] >= floor,
                     study["measured_order"], floor)]
    rows = []
    for i, (n, err) in enumerate(zip(study["shapes"], study["errors"])):
        rows.append({"shape": n, "error": err,
                     "order": "" if i == 0 else study["orders"][i - 1]})

    def draw(ax):
        ax.loglog(study["shapes"], np.maximum(study["errors"], 1e-300),
                  "o-", color="#4878a8")
        ax.set_xlabel("cells per axis")
        ax.set_ylabel("recovery error")
        ax.set_title(f"order {m} lift, measured order "
                     f"{study['measured_order']:.2f}")

    report = {"m": m, "a": a, "p": p, "dim": dim, **study}
    header = ["shape", "error", "order"]
    return CommandResult(report, checks, header,
                         [[r[h] for h in header] for r in rows],
                         [("convergence", draw)])


def _run_witness(params: dict, seed: int) -> CommandResult:
    experiment = params["experiment"]
    p = float(params.get("p", 2.0))
    s = float(params.get("s", 0.75))
    window = params.get("slope_window")
    checks = []
    if experiment == "divergence":
        n = int(params.get("n", 2))
        radii = [float(v) for v in params.get("radii", [10, 30, 100, 300])]
        table = divergence_experiment(cone_witness(n, p),
                                      float(params.get("sigma", 1.0)),
                                      s, p, radii)
        increments = table.increments()
        slowing = bool(np.all(np.diff(increments) < 0.0))
        checks.append(_check("screened_increments_decreasing", slowing,
                             float(np.max(np.diff(increments))), 0.0))
        title = f"cone witness, p = {p}, s = {s}"
        xlabel = "cutoff radius"
    elif experiment == "vanishing":
        n = int(params.get("n", 2))
        deltas = [float(v) for v in
                  params.get("deltas", [0.125, 0.0625, 0.03125, 0.015625])]
        r = float(params.get("r", 4.0))
        table = vanishing_witness_experiment(n, p, s, r, deltas)
        target = (1.0 + s) * p - 1.0
        rtol = float(params.get("slope_rtol", 0.15))
        checks.append(_check("slope_near_target",
                             abs(table.slope - target) <= rtol * target,
                             table.slope, target))
        title = f"vanishing screening, p = {p}, s = {s}, r = {r}"
        xlabel = "1 / floor distance"
    else:
        cells = [float(v) for v in params.get("cells", [20, 60, 200])]
        demo = no_extension_demo(p, cells=tuple(cells))
        checks.append(_check("interior_energy_bounded",
                             demo.energy_ratio <= 2.0, demo.energy_ratio, 2.0))
        checks.append(_check("boundary_seminorm_grows", demo.slope >= 0.2,
                             demo.slope, 0.2))
        rows = [{"cell": c, "interior_energy": e, "boundary": bdry,
                 "slope_so_far": sl}
                for c, e, bdry, sl in zip(demo.cells, demo.interior_energy,
                                          demo.boundary_p, demo.slope_so_far)]

        def draw(ax):
            ax.loglog(demo.cells, demo.boundary_p, "o-", color="#a85048",
                      label="boundary seminorm")
            ax.loglog(demo.cells, demo.interior_energy, "s-", color="#4878a8",
                      label="interior energy")
            ax.set_xlabel("cell size")
            ax.legend()
            ax.set_title(f"no-extension table, p = {p}")

        report = {"experiment": experiment, "p": p,
                  "slope": demo.slope, "energy_ratio": demo.energy_ratio,
                  "rows": rows}
        header = ["cell", "interior_energy", "boundary", "slope_so_far"]
        return CommandResult(report, checks, header,
                             [[r[h] for h in header] for r in rows],
                             [("growth", draw)])
    if window is not None:
        lo, hi = float(window[0]), float(window[1])
        checks.append(_check("slope_in_window",
                             lo <= table.slope <= hi, table.slope, hi))
    rows = [{"cutoff": c, "screened": scr, "full": ful, "slope_so_far": sl}
            for c, scr, ful, sl in zip(table.cutoff, table.screened_p,
                                       table.full_p, table.slope_so_far)]

    def draw(ax):
        ax.loglog(table.cutoff, table.full_p, "o-", color="#a85048",
                  label="unscreened")
        ax.loglog(table.cutoff, table.screened_p, "s-", color="#4878a8",
                  label="screened")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("seminorm energy")
        ax.legend()
        ax.set_title(title + f", slope {table.slope:.3f}")

    report = {"experiment": experiment, "p": p, "s": s, "slope": table.slope,
              "meta": table.meta, "rows": rows}
    header = ["cutoff", "screened", "full", "slope_so_far"]
    return CommandResult(report, checks, header,
                         [[r[h] for h in header] for r in rows],
                         [("growth", draw)])


def _drift_field(amplitude: float, cell, thickness: float):
    def g(x):
        comps = []
        for axis in range(x.shape[-1] - 1):
            comps.append(amplitude * np.sin(
                2.0 * np.pi * x[..., axis] / cell[axis]))
        comps.append(amplitude * np.cos(
            2.0 * np.pi * x[..., -1] / thickness))
        return np.stack(comps, axis=-1)

    return g


def _pde_problem(params: dict) -> dict:
    if "problem" in params:
        return params["problem"]
    path = params["problem_file"]
    if not os.path.exists(path):
        raise ConfigError(f"problem file {path} does not exist")
    with open(path) as fh:
        try:
            problem = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"problem file {path}: {exc}") from exc
    schema = _load_schema("pde")
    try:
        jsonschema.validate(problem, {"$ref": "#/definitions/problem",
                                      "definitions": schema["definitions"]})
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"problem file {path}: {exc.message}") from exc
    return problem


def _run_pde(params: dict, seed: int) -> CommandResult:
    problem = _pde_problem(params)
    kind = problem["kind"]
    p = float(problem["p"])
    lagrangian = problem.get("lagrangian", {})
    domain = problem["domain"]
    thickness = float(domain.get("thickness", 1.0))
    cell = [float(v) for v in domain.get("cell", [1.0])]
    shape = tuple(int(n) for n in domain["shape"])
    if len(shape) != len(cell) + 1:
        raise ConfigError(
            f"shape has {len(shape)} axes for a {len(cell)}-dimensional cell")
    strip = StripDomain(0.0, thickness,
                        Box((0.0,) * len(cell), tuple(cell),
                            (True,) * len(cell)))
    grid = strip.grid(shape)
    hg = horizontal_grid(grid)
    preset = lagrangian.get("preset", "power")
    if preset == "drift":
        amplitude = float(lagrangian.get("amplitude", 0.3))
        L = p_laplacian_with_drift(p, _drift_field(amplitude, cell, thickness))
    else:
        L = p_dirichlet(p)

    data_cfg = problem.get("data", {})
    amp = float(data_cfg.get("amplitude", 1.0))
    max_mode = int(data_cfg.get("max_mode", 3))

    def wall_datum(key, offset):
        if key in data_cfg:
            f = load_field(data_cfg[key])
            if f.grid != hg:
                raise ConfigError(f"{key} does not match the problem grid")
            return f
        f = random_band_limited(hg, seed=seed + offset, max_mode=max_mode)
        return SampledField(hg, amp * f.values)

    solver = params.get("solver", {})
    opts = SolverOptions(
        a=solver.get("a"),
        method=solver.get("method", "auto"),
        residual_tol=float(solver.get("residual_tol", 1e-8)),
        max_iter=int(solver.get("max_iter", 100_000)),
        cross_check=bool(solver.get("cross_check", False)),
        seed=seed)

    if kind == "dirichlet":
        data = TracePair(wall_datum("f_minus", 0), wall_datum("f_plus", 1))
        u, diag = solve_dirichlet(L, data, strip, grid, opts)
    else:
        if "psi" in data_cfg:
            psi = load_field(data_cfg["psi"])
            if psi.grid != grid:
                raise ConfigError("psi does not match the problem grid")
        else:
            raw = random_band_limited(grid, seed=seed, max_mode=max_mode)
            volume = float(np.prod(np.asarray(grid.box.hi)
                                   - np.asarray(grid.box.lo)))
            psi = SampledField(
                grid, amp * (raw.values - integrate(raw.values, grid) / volume))
        data = NeumannData(psi=psi)
        u, diag = solve_neumann(L, data, strip, grid, opts)

    checks = [_check("converged", diag.converged, diag.residual,
                     opts.residual_tol)]
    report = {
        "problem": problem,
        "method": diag.method,
        "stop": diag.stop,
        "iterations": diag.iterations,
        "energy": diag.energy,
        "residual": diag.residual,
        "weak_residual_max": diag.weak_residual_max,
    }
    if diag.cross_check_gap is not None:
        report["cross_check_gap"] = diag.cross_check_gap
        checks.append(_check("route_agreement", diag.cross_check_gap <= 1e-8,
                             diag.cross_check_gap, 1e-8))
    if params.get("bound_check", True):
        bound = energy_bound_check(u, L, data)
        report["energy_bound"] = {
            "lhs": bound.lhs, "rhs": bound.rhs, "constant": bound.constant,
            "margin": bound.margin, "terms": bound.terms, "note": bound.note}
        checks.append(_check("energy_bound", bound.ok, bound.lhs, bound.rhs))

    trace = diag.energy_trace
    rows = [[i, float(v)] for i, v in enumerate(trace)]

    def draw_trace(ax):
        gap = trace - trace.min()
        ax.semilogy(np.maximum(gap, 1e-18), color="#4878a8")
        ax.set_xlabel("iteration")
        ax.set_ylabel("energy above final")
        ax.set_title(f"{kind}, p = {p}, {diag.method}")

    def draw_solution(ax):
        if grid.ndim == 2:
            values = u.values
        else:
            values = u.values[:, u.values.shape[1] // 2, :]
        im = ax.imshow(values.T, origin="lower", aspect="auto",
                       cmap="RdBu_r",
                       extent=[grid.box.lo[0], grid.box.hi[0],
                               grid.box.lo[-1], grid.box.hi[-1]])
        ax.figure.colorbar(im, ax=ax, label="u")
        ax.set_xlabel("horizontal")
        ax.set_ylabel("vertical")
        ax.set_title("solution" + (" (mid slice)" if grid.ndim == 3 else ""))

    fields_out = []
    if params.get("save_solution", True):
        fields_out.append(("solution", u))
    return CommandResult(report, checks, ["iteration", "energy"], rows,
                         [("energy", draw_trace), ("solution", draw_solution)],
                         fields_out)


_SUITE_QUICK = [
    ("seminorm", {"shape": [20], "fields": 2, "brute": True,
                  "screening": {"kind": "constant", "a": 0.25}}),
    ("mollifier", {"dim": 1, "k": 2, "m": 2}),
    ("fourier", {"s": 0.5, "dim": 1, "shape": [256],
                 "xi": [0.1, 0.5, 2.0, 8.0]}),
    ("trace-check", {"p": 2.0, "shape": [16, 8], "fields": 2}),
    ("lift", {"m": 1, "shapes": [16, 32]}),
    ("witness", {"experiment": "divergence", "n": 2, "p": 2.0, "s": 0.75,
                 "radii": [10, 30, 100, 300], "slope_window": [0.30, 0.60]}),
    ("witness", {"experiment": "vanishing", "n": 2, "p": 2.0, "s": 0.5,
                 "r": 4.0, "deltas": [0.125, 0.0625, 0.03125, 0.015625]}),
    ("pde", {"problem": {"kind": "dirichlet", "p": 2.0,
                         "domain": {"cell": [1.0], "shape": [24, 12]}},
             "solver": {"cross_check": True}, "save_solution": False}),
    ("pde", {"problem": {"kind": "neumann", "p": 2.0,
                         "domain": {"cell": [1.0], "shape": [24, 12]}},
             "save_solution": False}),
]

_SUITE_FULL = [
    ("seminorm", {"shape": [32], "fields": 5, "brute": True,
                  "screening": {"kind": "constant", "a": 0.25}}),
    ("seminorm", {"shape": [16, 16], "fields": 3, "brute": True,
                  "screening": {"kind": "constant", "a": 0.25}}),
    ("mollifier", {"dim": 1, "k": 2, "m": 2}),
    ("mollifier", {"dim": 2, "k": 4, "m": 3}),
    ("fourier", {"s": 0.5, "dim": 1, "shape": [512]}),
    ("fourier", {"s": 0.25, "dim": 2, "shape": [64, 64]}),
    ("trace-check", {"p": 1.5, "shape": [48, 24], "fields": 5}),
    ("trace-check", {"p": 2.0, "shape": [48, 24], "fields": 5}),
    ("trace-check", {"p": 3.0, "shape": [48, 24], "fields": 5}),
    ("lift", {"m": 1, "shapes": [64, 128, 256]}),
    ("lift", {"m": 2, "shapes": [64, 128, 256]}),
    ("witness", {"experiment": "divergence", "n": 2, "p": 2.0, "s": 0.75,
                 "radii": [10, 30, 100, 300], "slope_window": [0.30, 0.60]}),
    ("witness", {"experiment": "vanishing", "n": 2, "p": 2.0, "s": 0.5,
                 "r": 4.0, "deltas": [0.125, 0.0625, 0.03125, 0.015625]}),
    ("witness", {"experiment": "no-extension", "p": 2.0}),
    ("pde", {"problem": {"kind": "dirichlet", "p": 2.0,
                         "domain": {"cell": [1.0], "shape": [48, 24]}},
             "solver": {"cross_check": True}, "save_solution": False}),
    ("pde", {"problem": {"kind": "dirichlet", "p": 3.0,
                         "lagrangian": {"preset": "drift", "amplitude": 0.3},
                         "domain": {"cell": [1.0], "shape": [32, 16]}},
             "save_solution": False}),
    ("pde", {"problem": {"kind": "dirichlet", "p": 1.5,
                         "domain": {"cell": [1.0], "shape": [24, 12]}},
             "save_solution": False}),
    ("pde", {"problem": {"kind": "neumann", "p": 2.0,
                         "domain": {"cell": [1.0], "shape": [32, 16]}},
             "solver": {"cross_check": True}, "save_solution": False}),
]


def _run_suite(params: dict, seed: int) -> CommandResult:
    profile = params.get("profile", "full")
    battery = _SUITE_QUICK if profile == "quick" else _SUITE_FULL
    families, checks, rows = {}, [], []
    counts = {}
    for index, (name, fam_params) in enumerate(battery):
        label = f"{index:02d}_{name}"
        result = _COMMANDS[name](fam_params, seed + index)
        families[label] = {"parameters": fam_params,
                           "report": result.report,
                           "passed": all(c["pass"] for c in result.checks)}
        passed = 0
        for check in result.checks:
            checks.append(_check(f"{label}:{check['id']}", check["pass"],
                                 check["lhs"], check["rhs"]))
            rows.append([label, check["id"], check["pass"]])
            passed += check["pass"]
        counts[label] = (passed, len(result.checks))

    def draw(ax):
        labels = list(counts)
        total = [counts[k][1] for k in labels]
        good = [counts[k][0] for k in labels]
        y = np.arange(len(labels))
        ax.barh(y, total, color="#d0d0d0", label="checks")
        ax.barh(y, good, color="#48a878", label="passed")
        ax.set_yticks(y)
        ax.set_yticklabels(labels, fontsize=7)
        ax.invert_yaxis()
        ax.set_xlabel("checks")
        ax.legend()
        ax.set_title(f"suite ({profile})")

    report = {"profile": profile, "families": families}
    return CommandResult(report, checks, ["family", "check", "pass"], rows,
                         [("summary", draw)])


_COMMANDS = {
    "seminorm": _run_seminorm,
    "mollifier": _run_mollifier,
    "fourier": _run_fourier,
    "trace-check": _run_trace_check,
    "lift": _run_lift,
    "witness": _run_witness,
    "pde": _run_pde,
    "suite": _run_suite,
}


# ---------------------------------------------------------------------------
# execution and artifact writing


def _write_artifacts(config: ExperimentConfig, result: CommandResult) -> dict:
    stem, ext = os.path.splitext(config.output)
    if ext != ".json":
        stem = config.output
    directory = os.path.dirname(os.path.abspath(config.output))
    os.makedirs(directory, exist_ok=True)

    artifacts = {"csv": os.path.basename(stem) + ".csv", "figures": [],
                 "fields": []}
    with open(stem + ".csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(result.csv_header)
        for row in result.csv_rows:
            writer.writerow([_cell(v) for v in row])
    for name, draw in result.figures:
        fig, ax = plt.subplots(figsize=(6.4, 4.2), dpi=110)
        draw(ax)
        fig.tight_layout()
        path = f"{stem}.{name}.png"
        fig.savefig(path)
        plt.close(fig)
        artifacts["figures"].append(os.path.basename(path))
    for name, fld in result.fields_out:
        path = f"{stem}.{name}.json"
        save_field(fld, path)
        artifacts["fields"].append(os.path.basename(path))

    passed = all(c["pass"] for c in result.checks)
    report = {
        "command": config.command,
        "seed": config.seed,
        "threads": thread_count(),
        "parameters": result.report.pop("parameters", config.parameters),
        "results": result.report,
        "checks": result.checks,
        "passed": passed,
        "artifacts": artifacts,
    }
    with open(stem + ".json", "w") as fh:
        json.dump(_jsonable(report), fh, sort_keys=True, indent=2,
                  allow_nan=False)
        fh.write("\n")
    return report


def run(config: ExperimentConfig) -> int:
    """Validate, execute, and write artifacts; returns the exit status."""
    if config.command not in _COMMANDS:
        print(f"unknown command {config.command!r}", file=sys.stderr)
        return 2
    try:
        schema = _load_schema(config.command)
        jsonschema.validate(config.parameters, schema)
    except jsonschema.ValidationError as exc:
        print(f"config error: {exc.message}", file=sys.stderr)
        return 2
    try:
        result = _COMMANDS[config.command](config.parameters, config.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 3
    report = _write_artifacts(config, result)
    return 0 if report["passed"] else 1


# ---------------------------------------------------------------------------
# argument parsing


_SCALAR_FLAGS = {
    "seminorm": [("p", float, ("p",)), ("s", float, ("s",)),
                 ("a", float, ("screening", "a")),
                 ("fields", int, ("fields",)),
                 ("brute", "flag", ("brute",))],
    "mollifier": [("dim", int, ("dim",)), ("k", int, ("k",)),
                  ("m", int, ("m",))],
    "fourier": [("s", float, ("s",)), ("dim", int, ("dim",))],
    "trace-check": [("p", float, ("p",)), ("fields", int, ("fields",))],
    "lift": [("m", int, ("m",)), ("a", float, ("a",))],
    "witness": [("experiment", str, ("experiment",)), ("p", float, ("p",)),
                ("s", float, ("s",)), ("r", float, ("r",)),
                ("n", int, ("n",))],
    "pde": [("problem-file", str, ("problem_file",))],
    "suite": [("profile", str, ("profile",))],
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sobotrace",
        description="Screened seminorm, trace, and variational experiments "
                    "with delimited reports and rendered figures.")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker count (overrides SOBOTRACE_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", default=None,
                        help="JSON file holding the parameters object")
        sp.add_argument("--output", default=f"sobotrace-{name}.json",
                        help="report path; CSV and figures sit next to it")
        sp.add_argument("--seed", type=int, default=0)
        for flag, kind, _path in _SCALAR_FLAGS[name]:
            if kind == "flag":
                sp.add_argument(f"--{flag}", action="store_const", const=True,
                                default=None)
            else:
                sp.add_argument(f"--{flag}", type=kind, default=None)
    return parser


def _merge_parameters(args: argparse.Namespace) -> dict:
    params: dict = {}
    if args.config is not None:
        if not os.path.exists(args.config):
            raise ConfigError(f"config file {args.config} does not exist")
        with open(args.config) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        params.update(loaded)
    for flag, _kind, path in _SCALAR_FLAGS[args.command]:
        value = getattr(args, flag.replace("-", "_"))
        if value is None:
            continue
        target = params
        for key in path[:-1]:
            target = target.setdefault(key, {})
        target[path[-1]] = value
    return params


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        os.environ["SOBOTRACE_THREADS"] = str(args.threads)
    try:
        parameters = _merge_parameters(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    config = ExperimentConfig(command=args.command, parameters=parameters,
                              output=args.output, seed=args.seed)
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
