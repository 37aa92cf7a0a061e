"""Euler maps, preimages, history completion, J0 grids, and sampling."""

import json
import math

import numpy as np
import pytest

from invertcert.dynamics import (
    BrusselatorEuler,
    HistoryCompletion,
    HistoryQuery,
    J0Grid,
    PlanarMap,
    ScalarQuadraticEuler,
    bilipschitz_estimate,
    brusselator_jacobian,
    brusselator_map,
    brusselator_preimages,
    brusselator_step,
    dataset_csv,
    generate_dataset,
    history_complete,
    j0_cells_json,
    j0_csv,
    j0_grid,
    relu_map,
    scalar_preimages,
    scalar_step,
    vdp_flow,
)
from invertcert.network import random_network
from invertcert.oracle import fd_jacobian

BRUS = BrusselatorEuler(a=1.0, b=2.0, tau=0.15)


def identity_map():
    return PlanarMap(lambda x, y: (x, y), lambda x, y: np.eye(2))


def attractor_points(m, n, burn_in=5000):
    """Iterate from off the fixed point until the orbit settles, then sample."""
    p = (m.a + 0.3, m.b / m.a - 0.3)
    for _ in range(burn_in):
        p = brusselator_step(m, *p)
    out = []
    for _ in range(n):
        p = brusselator_step(m, *p)
        out.append(p)
    return out


# ---- domain types ----


def test_type_validation():
    with pytest.raises(ValueError, match="finite"):
        BrusselatorEuler(1.0, math.nan, 0.1)
    with pytest.raises(ValueError, match="positive"):
        ScalarQuadraticEuler(0.0, 0.0, 0.0)
    with pytest.raises(ValueError, match="positive"):
        ScalarQuadraticEuler(0.0, 0.0, -0.1)
    with pytest.raises(ValueError, match="case"):
        HistoryQuery(11, (0.0, 0.0, 0.0), 1.0, 2.0)
    with pytest.raises(ValueError, match="three"):
        HistoryQuery(1, (0.0, 0.0), 1.0, 2.0)
    with pytest.raises(ValueError, match="finite"):
        HistoryQuery(1, (0.0, math.inf, 0.0), 1.0, 2.0)


# ---- forward step ----


def test_step_known_point():
    assert brusselator_step(BRUS, 1.0, 1.0) == pytest.approx((0.85, 1.15), abs=1e-15)


def test_step_zero_tau_is_identity():
    m = BrusselatorEuler(1.0, 2.0, 0.0)
    assert brusselator_step(m, 0.3, -0.7) == (0.3, -0.7)


def test_step_fixed_point():
    x, y = brusselator_step(BRUS, 1.0, 2.0)
    assert (x, y) == pytest.approx((1.0, 2.0), abs=1e-15)


# ---- Brusselator preimages ----


def test_preimage_round_trip_contains_source():
    img = brusselator_step(BRUS, 1.0, 1.0)
    pres = brusselator_preimages(BRUS, *img)
    assert any(abs(x - 1.0) < 1e-9 and abs(y - 1.0) < 1e-9 for x, y in pres)


def test_preimage_round_trip_random_batch():
    rng = np.random.default_rng(7)
    for _ in range(200):
        target = rng.uniform((-2.0, -2.0), (3.0, 4.0))
        pres = brusselator_preimages(BRUS, *target)
        assert 1 <= len(pres) <= 3
        for x, y in pres:
            assert brusselator_step(BRUS, x, y) == pytest.approx(tuple(target), abs=1e-9)


def test_preimage_zero_root_when_target_hits_tau_a():
    # The cubic's constant term is x_next - tau a, so that target admits x = 0.
    pres = brusselator_preimages(BRUS, BRUS.tau * BRUS.a, 0.9)
    zero = [p for p in pres if abs(p[0]) < 1e-12]
    assert len(zero) == 1
    assert zero[0][1] == pytest.approx(0.9, abs=1e-12)


@pytest.mark.parametrize("b", [1.95, 2.1])
def test_attractor_points_have_three_preimages(b):
    m = BrusselatorEuler(1.0, b, 0.15)
    prev = attractor_points(m, 1)[-1]
    for _ in range(32):
        nxt = brusselator_step(m, *prev)
        pres = brusselator_preimages(m, *nxt)
        assert len(pres) == 3
        assert any(
            abs(x - prev[0]) < 1e-7 and abs(y - prev[1]) < 1e-7 for x, y in pres
        )
        prev = nxt


@pytest.mark.parametrize("tau", [0.0, 1.0])
def test_preimage_rejects_degenerate_tau(tau):
    with pytest.raises(ValueError, match="tau"):
        brusselator_preimages(BrusselatorEuler(1.0, 2.0, tau), 0.5, 0.5)


# ---- scalar quadratic map ----


def test_scalar_known_roots():
    m = ScalarQuadraticEuler(b=0.0, c=0.0, tau=0.1)
    assert scalar_preimages(m, 0.0) == pytest.approx([-10.0, 0.0])
    assert scalar_preimages(m, -2.5) == pytest.approx([-5.0])
    assert scalar_preimages(m, -3.0) == []


def test_scalar_trichotomy_matches_discriminant():
    rng = np.random.default_rng(11)
    for _ in range(300):
        m = ScalarQuadraticEuler(*rng.uniform(-2, 2, size=2), tau=float(rng.uniform(0.01, 1.5)))
        x_next = float(rng.uniform(-6, 6))
        disc = (m.tau * m.b + 1.0) ** 2 - 4.0 * m.tau * (m.tau * m.c - x_next)
        roots = scalar_preimages(m, x_next)
        assert len(roots) == (2 if disc > 0 else (1 if disc == 0 else 0))
        for r in roots:
            assert scalar_step(m, r) == pytest.approx(x_next, abs=1e-9)


# ---- history completion ----


def true_state(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.5, 1.5), rng.uniform(1.5, 2.5)
    x_n, y_n = rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0)
    tau = float(rng.uniform(0.05, 0.4))
    m = BrusselatorEuler(a, b, tau)
    x_next, y_next = brusselator_step(m, x_n, y_n)
    return {
        "a": a, "b": b, "tau": tau,
        "x_n": x_n, "y_n": y_n, "x_next": x_next, "y_next": y_next,
    }


@pytest.mark.parametrize("case", range(1, 11))
def test_history_recovers_planted_state(case):
    for seed in range(6):
        s = true_state(40 * case + seed)
        q = HistoryQuery(case, tuple(s[k] for k in _given_names(case)), s["a"], s["b"])
        comps = history_complete(q)
        real = [e for e in comps if e.real]
        assert real, f"case {case} found no real completion"
        m_fields = ("x_n", "y_n", "x_next", "y_next", "tau")
        assert any(
            all(abs(getattr(e, f) - s[f]) <= 1e-6 * (1 + abs(s[f])) for f in m_fields)
            for e in real
        ), f"case {case} lost the planted state"
        for e in real:
            m = BrusselatorEuler(s["a"], s["b"], e.tau)
            assert brusselator_step(m, e.x_n, e.y_n) == pytest.approx(
                (e.x_next, e.y_next), abs=1e-9
            )


def _given_names(case):
    return HistoryQuery(case, (0.1, 0.2, 0.3), 1.0, 2.0).given_names


def test_history_case1_equals_step():
    (entry,) = history_complete(HistoryQuery(1, (1.0, 1.0, 0.15), 1.0, 2.0))
    assert entry.real
    assert (entry.x_next, entry.y_next) == pytest.approx((0.85, 1.15), abs=1e-15)


def test_history_case2_equals_preimages():
    img = brusselator_step(BRUS, 1.0, 1.0)
    comps = history_complete(HistoryQuery(2, (img[0], img[1], 0.15), 1.0, 2.0))
    real = [(e.x_n, e.y_n) for e in comps if e.real]
    assert real == pytest.approx(brusselator_preimages(BRUS, *img))


TABLE_CASE10 = [
    # (x_n, x_next, y_next) -> paired (tau, y_n) completions
    ((4.88766, 1.62663, 2.27734), [(0.27018, 0.06670), (0.12996, -0.47845)]),
    ((2.36082, 3.27177, 2.13372), [(-1.51470, 0.98342), (0.07929, 3.15257)]),
    ((2.19914, 1.97336, 3.22943), [(-1.51394, 1.18823), (-0.02572, 2.97282)]),
]


@pytest.mark.parametrize("given,expected", TABLE_CASE10)
def test_history_case10_real_rows(given, expected):
    comps = history_complete(HistoryQuery(10, given, 1.0, 2.0))
    real = sorted((e.tau, e.y_n) for e in comps if e.real)
    assert len(real) == len(expected)
    for got, want in zip(real, sorted(expected)):
        assert got == pytest.approx(want, abs=1e-4)


def test_history_case10_complex_row():
    comps = history_complete(HistoryQuery(10, (4.60127, 2.27780, 2.21088), 1.0, 2.0))
    assert all(not e.real for e in comps)
    taus = sorted((e.tau for e in comps), key=lambda z: z.imag)
    assert taus[1].real == pytest.approx(0.09960, abs=1e-4)
    assert taus[1].imag == pytest.approx(0.14337, abs=1e-4)
    assert taus[0] == taus[1].conjugate()
    y_up = max((e.y_n for e in comps), key=lambda z: z.imag)
    assert y_up.real == pytest.approx(0.24609, abs=1e-4)
    assert y_up.imag == pytest.approx(0.51630, abs=1e-4)


def test_history_degenerate_inputs_raise():
    bad = [
        (3, (0.0, 1.0, 0.1), "x_n"),          # divides by x_n^2
        (4, (0.0, 1.0, 0.1), "y_n"),          # quadratic collapses
        (4, (1.0, 1.0, 0.0), "tau"),
        (5, (2.0, 1.0, 0.25), "tau x_n"),     # 1 - tau x^2 = 0
        (6, (0.0, 1.0, 0.1), "y_n"),
        (7, (1.0, 2.0, 1.5), "rate"),         # x rate vanishes at the fixed point
        (8, (0.0, 1.0, 1.5), "rate"),
        (9, (0.0, 1.0, 1.0), "y_n"),
        (10, (0.0, 1.0, 1.0), "x_n"),
        (10, (1.0, 2.0, 1.0), "x_n"),         # x_n = a
    ]
    for case, given, frag in bad:
        with pytest.raises(ValueError, match=frag):
            history_complete(HistoryQuery(case, given, 1.0, 2.0))


# ---- J0 grids ----


def test_j0_brusselator_origin_det():
    # Analytic Jacobian at the origin has determinant 1 - 3 tau.
    assert np.linalg.det(brusselator_jacobian(BRUS, 0.0, 0.0)) == pytest.approx(0.55)
    grid = j0_grid(brusselator_map(BRUS), ((-1.0, 1.0), (-1.0, 1.0)), (3, 3))
    assert grid.dets[1, 1] == pytest.approx(0.55, abs=1e-12)


def test_j0_identity_map_has_no_cells():
    grid = j0_grid(identity_map(), ((-3.0, 3.0), (-3.0, 3.0)), (31, 31))
    assert grid.cells == ()
    assert np.all(grid.dets == 1.0)


def test_j0_cell_count_nonincreasing_in_tau():
    window = ((-1.0, 4.0), (-1.0, 6.0))
    counts = []
    for tau in (0.15, 0.05, 0.01):
        pm = brusselator_map(BrusselatorEuler(1.0, 2.1, tau))
        counts.append(len(j0_grid(pm, window, (61, 61)).cells))
    assert counts[0] > 0
    assert counts[0] >= counts[1] >= counts[2]


def test_j0_refinement_stays_near_coarse_cells():
    pm = brusselator_map(BrusselatorEuler(1.0, 2.1, 0.15))
    region = ((-1.0, 4.0), (-1.0, 6.0))
    coarse = set(j0_grid(pm, region, (41, 41)).cells)
    fine = j0_grid(pm, region, (81, 81)).cells
    assert fine
    for i, j in fine:
        assert any(
            (i // 2 + di, j // 2 + dj) in coarse
            for di in (-1, 0, 1)
            for dj in (-1, 0, 1)
        )


def test_j0_resolution_guard():
    with pytest.raises(ValueError, match="resolution"):
        j0_grid(identity_map(), ((0.0, 1.0), (0.0, 1.0)), (1, 5))


def test_relu_map_jacobian_matches_finite_differences():
    net = random_network([2, 8, 2], seed=5)
    pm = relu_map(net)
    rng = np.random.default_rng(6)
    checked = 0
    while checked < 10:
        p = rng.uniform(-2, 2, size=2)
        pre = net.layers[0].weight @ p + net.layers[0].bias
        if np.abs(pre).min() < 1e-3:
            continue  # too close to a kink for central differences
        fd = fd_jacobian(lambda v: pm.evaluator(v[0], v[1]), p, h=1e-6)
        np.testing.assert_allclose(pm.jacobian(*p), fd, rtol=0, atol=1e-6)
        checked += 1


def test_relu_map_needs_planar_net():
    with pytest.raises(ValueError, match="2->2"):
        relu_map(random_network([1, 4, 1], seed=0))


def test_relu_map_flat_region_is_flagged():
    # relu applied coordinatewise: singular wherever either unit is off.
    net_layers = [
        (np.eye(2), np.zeros(2)),
        (np.eye(2), np.zeros(2)),
    ]
    from invertcert.network import ReluMlp

    pm = relu_map(ReluMlp(net_layers))
    grid = j0_grid(pm, ((-1.0, 1.0), (-1.0, 1.0)), (11, 11))
    flagged = set(grid.cells)
    # strictly positive quadrant cells keep determinant 1 and stay clean
    assert (7, 7) not in flagged
    # cells with any corner at or below a kink are flagged by the closed rule
    assert (2, 2) in flagged and (4, 4) in flagged


# ---- Van der Pol flow ----


def test_vdp_equilibrium_stays_put():
    assert vdp_flow((0.0, 0.0), 1.0, 0.2) == pytest.approx((0.0, 0.0), abs=0.0)


def test_vdp_richardson_self_consistency():
    a = vdp_flow((2.0, 0.0), 1.0, 0.2, steps=200)
    b = vdp_flow((2.0, 0.0), 1.0, 0.2, steps=400)
    assert float(np.abs(a - b).max()) <= 1e-8


def test_vdp_limit_cycle_stays_bounded():
    p = np.array([0.1, 0.0])
    for k in range(400):
        p = vdp_flow(p, 1.0, 0.2, steps=50)
        if k >= 100:
            assert np.all(np.abs(p) <= 3.0)


def test_vdp_fourth_order_convergence():
    ref = vdp_flow((1.0, 0.5), 1.0, 2.0, steps=12800)
    errs = [
        float(np.abs(vdp_flow((1.0, 0.5), 1.0, 2.0, steps=s) - ref).max())
        for s in (25, 50, 100)
    ]
    for coarse, fine in zip(errs, errs[1:]):
        assert coarse / fine > 10.0  # 16 for an exact order-4 method


def test_vdp_steps_guard():
    with pytest.raises(ValueError, match="steps"):
        vdp_flow((0.0, 0.0), 1.0, 0.2, steps=0)


# ---- dataset sampling ----


def test_dataset_reproducible_and_in_region():
    region = ((-3.0, 3.0), (-3.0, 3.0))
    flow = lambda x, y: tuple(vdp_flow((x, y), 1.0, 0.2, steps=40))
    d1 = generate_dataset(flow, region, 50, seed=9)
    d2 = generate_dataset(flow, region, 50, seed=9)
    d3 = generate_dataset(flow, region, 50, seed=10)
    assert d1 == d2
    assert d1 != d3
    for (x, y), out in d1:
        assert -3.0 <= x <= 3.0 and -3.0 <= y <= 3.0
        assert out == pytest.approx(tuple(vdp_flow((x, y), 1.0, 0.2, steps=40)))


def test_dataset_accepts_planar_map_and_counts():
    data = generate_dataset(brusselator_map(BRUS), ((0.0, 2.0), (0.0, 2.0)), 25, seed=1)
    assert len(data) == 25
    for (x, y), out in data:
        assert out == pytest.approx(brusselator_step(BRUS, x, y))
    with pytest.raises(ValueError, match="count"):
        generate_dataset(brusselator_map(BRUS), ((0.0, 1.0), (0.0, 1.0)), 0, seed=1)


def test_dataset_csv_round_trips():
    data = generate_dataset(identity_map(), ((-1.0, 1.0), (-1.0, 1.0)), 5, seed=2)
    text = dataset_csv(data)
    lines = text.strip().split("\n")
    assert lines[0] == "x1,y1,x2,y2"
    assert len(lines) == 6
    x1, y1, x2, y2 = map(float, lines[1].split(","))
    assert (x1, y1) == data[0][0]
    assert (x2, y2) == data[0][1]


def test_j0_csv_and_cells_json():
    grid = j0_grid(brusselator_map(BRUS), ((-1.0, 1.0), (-1.0, 1.0)), (3, 3))
    lines = j0_csv(grid).strip().split("\n")
    assert lines[0] == "x,y,det"
    assert len(lines) == 10
    x, y, det = map(float, lines[5].split(","))  # node (1, 1) in x-major order
    assert (x, y) == (0.0, 0.0)
    assert det == pytest.approx(0.55)
    cells = json.loads(j0_cells_json(grid))
    assert cells == [list(c) for c in grid.cells]


# ---- bi-Lipschitz sampling ----


def test_bilip_identity():
    up, lo = bilipschitz_estimate(identity_map(), ((-1, 1), (-1, 1)), 60, seed=0)
    assert up == 1.0 and lo == 1.0


def test_bilip_linear_map_brackets_singular_values():
    lin = PlanarMap(lambda x, y: (2.0 * x, 0.5 * y), lambda x, y: np.diag([2.0, 0.5]))
    region = ((-1.0, 1.0), (-1.0, 1.0))
    up50, lo50 = bilipschitz_estimate(lin, region, 50, seed=1)
    up800, lo800 = bilipschitz_estimate(lin, region, 800, seed=1)
    for up, lo in ((up50, lo50), (up800, lo800)):
        assert 0.5 <= lo <= up <= 2.0
    assert abs(up800 - 2.0) <= abs(up50 - 2.0) <= 1e-3
    assert abs(lo800 - 0.5) <= abs(lo50 - 0.5) <= 1e-3


def test_bilip_relu_flat_branch_shows_zero():
    up, lo = bilipschitz_estimate(lambda x: max(0.0, x), ((-1.0, 1.0),), 40, seed=3)
    assert lo == 0.0
    assert up <= 1.0


def test_bilip_sample_guard():
    with pytest.raises(ValueError, match="two samples"):
        bilipschitz_estimate(identity_map(), ((-1, 1), (-1, 1)), 1, seed=0)
