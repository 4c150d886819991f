"""Strip/graph trace checks, lifts, and the by-parts identities.

Wall exactness, the linear-data equality cases, and the flat-graph
reductions are exact discrete facts and are asserted at rounding tolerance;
the inequality batteries run on seeded random fields against the explicit
or frozen constants with the slacks the reports themselves carry.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sobotrace.constants import CALIBRATED
from sobotrace.fields import (
    Box,
    Grid,
    SampledField,
    integrate,
    lp_norm,
    make_grid,
    outer_weights,
    random_band_limited,
    sample,
)
from sobotrace.mollifiers import build_moment_mollifier, derivative_kernel
from sobotrace.seminorms import Constant, gradient_magnitude, xspace_norm
from sobotrace.tracelift import (
    ByPartsReport,
    CutoffProfile,
    GraphDomain,
    StripDomain,
    TraceJet,
    TracePair,
    by_parts_check,
    check_convolution_estimate,
    flatten,
    graph_lift_m1,
    graph_lift_energy_check,
    graph_trace_check,
    horizontal_grid,
    jet_recovery_study,
    lift_energy_check,
    lift_general,
    lift_m1,
    lift_recovery_study,
    q_polynomial,
    strip_constant,
    trace_check_higher,
    trace_check_m1,
    trace_check_p1,
    trace_jet,
    trace_pair,
)

UNIT_STRIP = StripDomain(0.0, 1.0, Box((0.0,), (1.0,), (True,)))


def unit_circle(n=48):
    return make_grid((0.0,), (1.0,), (n,), (True,))


def strip_grid(n_h=48, n_v=40):
    return UNIT_STRIP.grid((n_h, n_v))


def vertical_linear(grid, w_values):
    """u(x', x_N) = x_N * w(x') on a strip grid."""
    t = grid.axis_nodes(grid.ndim - 1)
    return SampledField(grid, w_values[..., None] * t)


# ---------------------------------------------------------------------------
# domains and data containers

def test_strip_domain_validates_walls():
    with pytest.raises(ValueError):
        StripDomain(1.0, 0.0, Box((0.0,), (1.0,), (True,)))
    with pytest.raises(ValueError):
        StripDomain(0.0, 1.0, Box((0.0,), (1.0,), (False,)))


def test_trace_pair_needs_matching_grids():
    g1, g2 = unit_circle(32), unit_circle(48)
    with pytest.raises(ValueError):
        TracePair(SampledField(g1, np.zeros(32)), SampledField(g2, np.zeros(48)))


def test_trace_jet_validates_count():
    g = unit_circle(32)
    z = SampledField(g, np.zeros(32))
    with pytest.raises(ValueError):
        TraceJet(2, (z,), (z, z))


def test_trace_pair_reads_wall_planes():
    grid = strip_grid()
    f = random_band_limited(grid, 7)
    pair = trace_pair(f)
    assert np.array_equal(pair.f_minus.values, f.values[..., 0])
    assert np.array_equal(pair.f_plus.values, f.values[..., -1])


def test_trace_pair_rejects_periodic_vertical():
    g = make_grid((0.0, 0.0), (1.0, 1.0), (16, 16), (True, True))
    with pytest.raises(ValueError):
        trace_pair(SampledField(g, np.zeros((16, 16))))


def test_trace_pair_feeds_xspace_norm():
    g = unit_circle(32)
    pair = TracePair(SampledField(g, np.zeros(32)),
                     SampledField(g, np.ones(32)))
    res = xspace_norm(pair, Constant(0.5), 0.5, 2.0)
    assert res.jump_term == pytest.approx(np.sqrt(2.0), rel=1e-12)


def test_graph_domain_rejects_touching_graphs():
    g = unit_circle(32)
    with pytest.raises(ValueError):
        GraphDomain(SampledField(g, np.zeros(32)), SampledField(g, np.zeros(32)))


def test_cutoff_profile_shape():
    theta = CutoffProfile()
    assert theta(0.0) == 1.0 and theta(0.25) == 1.0
    assert theta(0.75) == 0.0 and theta(1.0) == 0.0
    assert theta(0.5) == pytest.approx(0.5, abs=1e-14)
    t = np.linspace(0.0, 1.0, 101)
    assert np.all(np.diff(theta(t)) <= 1e-15)
    with pytest.raises(ValueError):
        CutoffProfile(0.5)


# ---------------------------------------------------------------------------
# first-order strip checks

def test_m1_jump_equality_for_vertical_linear():
    # u = x_N w: the vertical derivative is w exactly, and the jump bound
    # collapses to an identity
    grid = strip_grid(64, 48)
    w = random_band_limited(horizontal_grid(grid), 3)
    rep = trace_check_m1(vertical_linear(grid, 1.5 + 0.3 * w.values), 2.0)
    row = rep.row("strip_m1_jump")
    assert abs(row["lhs"] - row["rhs"]) <= 1e-12 * row["rhs"]
    assert rep.passed


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_m1_random_fields_one_horizontal_dim(p):
    grid = strip_grid(48, 40)
    for seed in range(20):
        u = random_band_limited(grid, 100 + seed)
        rep = trace_check_m1(u, p)
        assert rep.passed, [r for r in rep.rows if not r["pass"]]


def test_m1_random_fields_two_horizontal_dims():
    strip = StripDomain(0.0, 1.0, Box((0.0, 0.0), (1.0, 1.0), (True, True)))
    grid = strip.grid((16, 16, 17))
    for seed in range(3):
        rep = trace_check_m1(random_band_limited(grid, 200 + seed), 2.0)
        assert rep.passed


def test_m1_requires_p_above_one():
    grid = strip_grid(16, 16)
    with pytest.raises(ValueError):
        trace_check_m1(random_band_limited(grid, 0), 1.0)


def test_strip_constant_value():
    # two-point sphere in one horizontal dimension: 3^p * 2 * p^p/(p-1)^p
    assert strip_constant(2.0, 1) == pytest.approx(9.0 * 2.0 * 4.0, rel=1e-12)


def test_p1_jump_equality_for_vertical_linear():
    grid = strip_grid(64, 48)
    w = random_band_limited(horizontal_grid(grid), 5)
    rep = trace_check_p1(vertical_linear(grid, 1.0 + 0.2 * w.values),
                         [0.25, 0.125])
    row = rep.row("strip_p1_jump")
    assert abs(row["lhs"] - row["rhs"]) <= 1e-12 * row["rhs"]


def test_p1_shift_ladder_decreases():
    grid = strip_grid(48, 64)
    for seed in range(5):
        u = random_band_limited(grid, 300 + seed)
        rep = trace_check_p1(u, [0.25, 0.125, 0.0625])
        assert rep.passed, [r for r in rep.rows if not r["pass"]]
        sups = [rep.row(f"strip_p1_shift_eps_{e:g}")["lhs"]
                for e in (0.0625, 0.125, 0.25)]
        assert sups[0] <= sups[1] + 1e-12 <= sups[2] + 2e-12


def test_p1_epsilon_ladder_validated():
    grid = strip_grid(16, 16)
    u = random_band_limited(grid, 0)
    with pytest.raises(ValueError):
        trace_check_p1(u, [2.0])


# ---------------------------------------------------------------------------
# first-order lift

def test_lift_constants_to_constant():
    g = unit_circle(32)
    pair = TracePair(SampledField(g, np.full(32, 3.25)),
                     SampledField(g, np.full(32, 3.25)))
    u = lift_m1(pair, 0.5, UNIT_STRIP, UNIT_STRIP.grid((32, 40)))
    assert np.max(np.abs(u.values - 3.25)) <= 1e-12
    assert integrate(gradient_magnitude(u, 1) ** 2, u.grid) <= 1e-20


def test_lift_walls_exact():
    g = unit_circle(48)
    pair = TracePair(random_band_limited(g, 11), random_band_limited(g, 12))
    u = lift_m1(pair, 0.5, UNIT_STRIP, UNIT_STRIP.grid((48, 40)))
    back = trace_pair(u)
    assert np.array_equal(back.f_minus.values, pair.f_minus.values)
    assert np.array_equal(back.f_plus.values, pair.f_plus.values)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_lift_linearity(c1, c2):
    g = unit_circle(24)
    grid = UNIT_STRIP.grid((24, 16))
    p1 = TracePair(random_band_limited(g, 21), random_band_limited(g, 22))
    p2 = TracePair(random_band_limited(g, 23), random_band_limited(g, 24))
    combo = TracePair(
        SampledField(g, c1 * p1.f_minus.values + c2 * p2.f_minus.values),
        SampledField(g, c1 * p1.f_plus.values + c2 * p2.f_plus.values))
    u = lift_m1(combo, 0.5, UNIT_STRIP, grid)
    v = (c1 * lift_m1(p1, 0.5, UNIT_STRIP, grid).values
         + c2 * lift_m1(p2, 0.5, UNIT_STRIP, grid).values)
    scale = 1.0 + np.max(np.abs(v))
    assert np.max(np.abs(u.values - v)) <= 1e-12 * scale


def test_lift_threads_deterministic(monkeypatch):
    g = unit_circle(32)
    pair = TracePair(random_band_limited(g, 31), random_band_limited(g, 32))
    grid = UNIT_STRIP.grid((32, 24))
    monkeypatch.setenv("SOBOTRACE_THREADS", "1")
    u1 = lift_m1(pair, 0.5, UNIT_STRIP, grid)
    monkeypatch.setenv("SOBOTRACE_THREADS", "4")
    u4 = lift_m1(pair, 0.5, UNIT_STRIP, grid)
    assert np.array_equal(u1.values, u4.values)


def test_lift_recovery_order():
    study = lift_recovery_study(
        lambda x: np.sin(2 * np.pi * x) + 0.3 * np.cos(4 * np.pi * x),
        lambda x: np.cos(2 * np.pi * x),
        0.5, UNIT_STRIP, (48, 96))
    assert study["measured_order"] >= 0.9


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_lift_energy_bound_frozen_constant(p):
    g = unit_circle(48)
    grid = UNIT_STRIP.grid((48, 48))
    for seed in range(20):
        pair = TracePair(random_band_limited(g, 400 + seed),
                         random_band_limited(g, 500 + seed))
        u = lift_m1(pair, 0.5, UNIT_STRIP, grid)
        chk = lift_energy_check(pair, u, 0.5, p)
        assert chk.passed, (p, seed, chk.lhs, chk.rhs)


def test_lift_grid_mismatch_rejected():
    g = unit_circle(32)
    pair = TracePair(random_band_limited(g, 1), random_band_limited(g, 2))
    wrong = StripDomain(0.0, 1.0, Box((0.0,), (2.0,), (True,))).grid((32, 16))
    with pytest.raises(ValueError):
        lift_m1(pair, 0.5, UNIT_STRIP, wrong)


# ---------------------------------------------------------------------------
# higher-order lift and compatibility combinations

def test_lift_general_reproduces_vertical_coordinate():
    g = unit_circle(32)
    jet = TraceJet(
        2,
        (SampledField(g, np.zeros(32)), SampledField(g, np.ones(32))),
        (SampledField(g, np.ones(32)), SampledField(g, np.ones(32))),
    )
    grid = UNIT_STRIP.grid((32, 40))
    u = lift_general(jet, 0.5, UNIT_STRIP, grid)
    exact = np.broadcast_to(grid.axis_nodes(1), u.values.shape)
    assert np.max(np.abs(u.values - exact)) <= 1e-10


def test_lift_general_linearity():
    g = unit_circle(24)
    grid = UNIT_STRIP.grid((24, 16))

    def jet_from(seeds):
        return TraceJet(2,
                        (random_band_limited(g, seeds[0]),
                         random_band_limited(g, seeds[1])),
                        (random_band_limited(g, seeds[2]),
                         random_band_limited(g, seeds[3])))

    j1, j2 = jet_from((41, 42, 43, 44)), jet_from((45, 46, 47, 48))
    combo = TraceJet(2,
                     tuple(SampledField(g, 2.0 * a.values - 0.5 * b.values)
                           for a, b in zip(j1.minus, j2.minus)),
                     tuple(SampledField(g, 2.0 * a.values - 0.5 * b.values)
                           for a, b in zip(j1.plus, j2.plus)))
    u = lift_general(combo, 0.5, UNIT_STRIP, grid)
    v = (2.0 * lift_general(j1, 0.5, UNIT_STRIP, grid).values
         - 0.5 * lift_general(j2, 0.5, UNIT_STRIP, grid).values)
    assert np.max(np.abs(u.values - v)) <= 1e-12 * (1.0 + np.max(np.abs(v)))


def test_jet_recovery_first_order():
    jm = [lambda x: np.sin(2 * np.pi * x),
          lambda x: np.cos(2 * np.pi * x),
          lambda x: 0.3 * np.sin(4 * np.pi * x)]
    jp = [lambda x: np.cos(2 * np.pi * x),
          lambda x: 0.5 * np.sin(4 * np.pi * x),
          lambda x: -0.4 * np.cos(2 * np.pi * x)]
    study = jet_recovery_study(jm, jp, 0.5, UNIT_STRIP, (32, 64), 3)
    assert study["measured_order"] >= 0.9


def test_q_polynomial_constant_jet():
    g = unit_circle(32)
    zero = SampledField(g, np.zeros(32))
    jet = TraceJet(2,
                   (SampledField(g, np.full(32, 1.25)), zero),
                   (SampledField(g, np.full(32, 4.0)), zero))
    q = q_polynomial(jet, 0, 2, 0, 1.0)
    assert np.allclose(q.values, 4.0 - 1.25, atol=1e-14)


def test_q_polynomial_vanishes_on_vertical_coordinate():
    g = unit_circle(32)
    jet = TraceJet(
        2,
        (SampledField(g, np.zeros(32)), SampledField(g, np.ones(32))),
        (SampledField(g, np.ones(32)), SampledField(g, np.ones(32))),
    )
    for i, l in ((0, 0), (0, 1), (1, 0)):
        q = q_polynomial(jet, i, 2, l, 1.0)
        assert np.max(np.abs(q.values)) <= 1e-14


def test_q_polynomial_validates_orders():
    g = unit_circle(32)
    z = SampledField(g, np.zeros(32))
    jet = TraceJet(2, (z, z), (z, z))
    with pytest.raises(ValueError):
        q_polynomial(jet, 1, 2, 1, 1.0)
    with pytest.raises(ValueError):
        q_polynomial(jet, 0, 3, 0, 1.0)


def test_higher_check_degenerate_vertical_polynomial():
    # u affine in x_N with constant horizontal factors: every row is 0 <= 0
    grid = strip_grid(32, 33)
    t = grid.axis_nodes(1)
    u = SampledField(grid, np.broadcast_to(0.3 + 2.0 * t, grid.node_counts).copy())
    rep = trace_check_higher(u, 2, 2.0)
    assert rep.passed
    for row in rep.rows:
        if "compat" in row["id"]:
            assert row["lhs"] <= 1e-10 and row["rhs"] <= 1e-10


def test_higher_check_quadratic_times_horizontal():
    # u = x_N^2 w: the order-2 compatibility combination cancels exactly
    # while the full second-gradient energy stays positive
    grid = strip_grid(48, 48)
    w = 1.0 + 0.4 * np.sin(2 * np.pi * horizontal_grid(grid).axis_nodes(0))
    t = grid.axis_nodes(1)
    u = SampledField(grid, w[:, None] * t ** 2)
    rep = trace_check_higher(u, 2, 2.0)
    assert rep.passed
    row = rep.row("strip_m2_compat_i0_l0")
    assert row["lhs"] <= 1e-12
    assert row["rhs"] > 0.1


@pytest.mark.parametrize("p", [1.5, 2.0])
def test_higher_check_random_fields(p):
    grid = strip_grid(32, 33)
    for seed in range(10):
        u = random_band_limited(grid, 600 + seed)
        rep = trace_check_higher(u, 2, p)
        assert rep.passed, [r for r in rep.rows if not r["pass"]]


# ---------------------------------------------------------------------------
# by-parts identities

def test_by_parts_fundamental_theorem():
    g = make_grid((0.0,), (2.0,), (32,), (False,))
    bp = by_parts_check(sample(lambda t: t, g), 1)
    assert bp.lhs == pytest.approx(2.0, abs=1e-12)
    assert bp.rhs == pytest.approx(2.0, abs=1e-12)


def test_by_parts_quadratic_cancellation():
    g = make_grid((0.0,), (1.0,), (32,), (False,))
    bp = by_parts_check(sample(lambda t: t * t, g), 2)
    assert abs(bp.lhs) <= 1e-12 and abs(bp.rhs) <= 1e-12


@pytest.mark.parametrize("fn,m,expect", [
    (lambda t: t ** 3, 3, 0.25),
    (lambda t: 1 + t - 2 * t * t + 0.5 * t ** 3, 3, None),
])
def test_by_parts_exact_on_degree_m_polynomials(fn, m, expect):
    g = make_grid((0.0,), (1.0,), (32,), (False,))
    bp = by_parts_check(sample(fn, g), m)
    assert bp.residual <= 1e-12
    assert bp.taylor_residual <= 1e-12
    if expect is not None:
        assert bp.lhs == pytest.approx(expect, abs=1e-12)


def test_by_parts_sin_second_order():
    resids = []
    for n in (64, 128, 256):
        g = make_grid((0.0,), (np.pi,), (n,), (False,))
        bp = by_parts_check(sample(np.sin, g), 3)
        resids.append(bp.residual)
    orders = [np.log2(a / b) for a, b in zip(resids, resids[1:])]
    assert min(orders) >= 1.8


def test_by_parts_rejects_bad_intervals():
    per = make_grid((0.0,), (1.0,), (32,), (True,))
    with pytest.raises(ValueError):
        by_parts_check(SampledField(per, np.zeros(32)), 1)
    off = make_grid((1.0,), (2.0,), (32,), (False,))
    with pytest.raises(ValueError):
        by_parts_check(sample(lambda t: t, off), 1)
    tiny = make_grid((0.0,), (1.0,), (3,), (False,))
    with pytest.raises(ValueError):
        by_parts_check(sample(lambda t: t, tiny), 3)


# ---------------------------------------------------------------------------
# graph domains

def flat_domain(n=48, height=1.0):
    g = unit_circle(n)
    return GraphDomain(SampledField(g, np.zeros(n)),
                       SampledField(g, np.full(n, height)))


def wavy_domain(n=48):
    g = unit_circle(n)
    x = g.axis_nodes(0)
    return GraphDomain(SampledField(g, 0.15 * np.sin(2 * np.pi * x)),
                       SampledField(g, 1.0 + 0.15 * np.cos(2 * np.pi * x)))


def test_lipschitz_estimate():
    assert flat_domain().lipschitz_L == 0.0
    # both graphs have |eta'| <= 0.3 pi; grid differences land just below
    L = wavy_domain(96).lipschitz_L
    assert 0.9 * 0.6 * np.pi <= L <= 0.6 * np.pi


def test_flatten_is_identity_on_flat_domains():
    dom = flat_domain()
    grid = dom.grid(40)
    u = random_band_limited(grid, 17)
    flat = flatten(u, dom, normalize=True)
    assert np.max(np.abs(flat.values - u.values)) <= 1e-12
    assert flat.grid.box.hi[-1] == 1.0


def test_flatten_affine_stretch():
    # flat walls at 0 and 2: the normalized pullback of x_N is 2 tau
    dom = flat_domain(32, 2.0)
    grid = dom.grid(32)
    t = grid.axis_nodes(1)
    u = SampledField(grid, np.broadcast_to(t, grid.node_counts).copy())
    flat = flatten(u, dom, normalize=True)
    tau = flat.grid.axis_nodes(1)
    assert np.max(np.abs(flat.values - 2.0 * tau)) <= 1e-12
    raw = flatten(u, dom, normalize=False)
    z = raw.grid.axis_nodes(1)
    assert np.max(np.abs(raw.values - z)) <= 1e-12


def test_flatten_preserves_volume_weighted_integral():
    dom = wavy_domain()
    grid = dom.grid(64)
    u = random_band_limited(grid, 19)
    flat = flatten(u, dom, normalize=True)
    hg = dom.horizontal
    w_ref = outer_weights(flat.grid)
    weighted = float(np.sum(w_ref * dom.gap[..., None] * flat.values))
    masked = outer_weights(grid) * dom.interior_mask(grid)
    direct = float(np.sum(masked * u.values))
    assert abs(weighted - direct) <= 1e-2 * (1.0 + abs(direct))


def test_graph_check_reduces_to_strip_on_flat_domain():
    dom = flat_domain()
    grid = dom.grid(40)
    u = random_band_limited(grid, 23)
    grep = graph_trace_check(u, dom, 2.0)
    srep = trace_check_m1(u, 2.0)
    assert grep.passed
    for gid, sid in (("graph_m1_jump", "strip_m1_jump"),
                     ("graph_m1_wall_seminorm_minus", "strip_m1_wall_seminorm_minus"),
                     ("graph_m1_wall_seminorm_plus", "strip_m1_wall_seminorm_plus")):
        assert grep.row(gid)["lhs"] == pytest.approx(srep.row(sid)["lhs"], rel=1e-12)


def test_graph_check_sinusoidal_walls():
    dom = wavy_domain()
    grid = dom.grid(56)
    pair = TracePair(random_band_limited(dom.horizontal, 25),
                     random_band_limited(dom.horizontal, 26))
    u = graph_lift_m1(pair, 0.4, dom, grid)
    rep = graph_trace_check(u, dom, 2.0)
    assert rep.passed, [r for r in rep.rows if not r["pass"]]
    c = rep.row("graph_m1_wall_seminorm_minus")["constant"]
    assert c == pytest.approx((1.0 + dom.lipschitz_L) ** 2
                              * strip_constant(2.0, 1), rel=1e-12)


def test_graph_lift_flat_agreement():
    dom = flat_domain()
    g = dom.horizontal
    pair = TracePair(random_band_limited(g, 27), random_band_limited(g, 28))
    bg = dom.grid(40)
    ug = graph_lift_m1(pair, 0.5, dom, bg)
    us = lift_m1(pair, 0.5, UNIT_STRIP, UNIT_STRIP.grid((48, 40)))
    assert np.max(np.abs(ug.values - us.values)) <= 1e-10


def test_graph_lift_trace_recovery_rate():
    errs = []
    for n in (48, 96):
        g = unit_circle(n)
        x = g.axis_nodes(0)
        dom = GraphDomain(SampledField(g, 0.15 * np.sin(2 * np.pi * x)),
                          SampledField(g, 1.0 + 0.15 * np.cos(2 * np.pi * x)))
        pair = TracePair(sample(lambda y: np.sin(2 * np.pi * y), g),
                         sample(lambda y: np.cos(2 * np.pi * y), g))
        u = graph_lift_m1(pair, 0.4, dom, dom.grid(n))
        flat = flatten(u, dom, normalize=True)
        err = max(
            lp_norm(SampledField(g, flat.values[..., 0] - pair.f_minus.values), 2.0),
            lp_norm(SampledField(g, flat.values[..., -1] - pair.f_plus.values), 2.0))
        errs.append(err)
    assert np.log2(errs[0] / errs[1]) >= 0.9


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_graph_lift_energy_bound(p):
    dom = wavy_domain()
    bg = dom.grid(56)
    for seed in range(5):
        pair = TracePair(random_band_limited(dom.horizontal, 700 + seed),
                         random_band_limited(dom.horizontal, 800 + seed))
        u = graph_lift_m1(pair, 0.4, dom, bg)
        chk = graph_lift_energy_check(pair, u, dom, 0.4, p)
        assert chk.passed, (p, seed, chk.lhs, chk.rhs)


# ---------------------------------------------------------------------------
# convolution estimate

@pytest.mark.parametrize("alpha", [(1, 0), (0, 1), (2, 0), (0, 2)])
def test_convolution_estimate_random_fields(alpha):
    g = unit_circle(64)
    for seed in range(10):
        f = random_band_limited(g, 900 + seed)
        chk = check_convolution_estimate(f, alpha, 0.4, 1.0, 2.0)
        assert chk.passed, (alpha, seed, chk.lhs / chk.detail["raw"])


def test_convolution_estimate_needs_zero_mean():
    phi = build_moment_mollifier(1, 2, 2)
    with pytest.raises(ValueError):
        derivative_kernel(phi, (0, 0))


def test_convolution_estimate_frozen_constant_documented():
    assert CALIBRATED["convolution_estimate"] == 1.6
