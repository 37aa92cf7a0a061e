"""Encoding correctness: layer rows, binary counts, and optima cross-checked
against the grid and pattern-enumeration oracles."""

import numpy as np
import pytest

from invertcert.bounds import InputBox, propagate_interval
from invertcert.encoder import (
    EncodedProblem,
    encode_problem1,
    encode_problem2,
    encode_problem3,
    encode_relu_layer,
)
from invertcert.milp import INFEASIBLE, OPTIMAL, MilpModel, milp_solve
from invertcert.network import Layer, ReluMlp, forward, random_network
from invertcert.oracle import grid_collision_search, pattern_enumeration_optimum


def rows_hold(model, values, tol=1e-9):
    """Every row and variable bound satisfied by the value vector."""
    values = np.asarray(values, dtype=np.float64)
    for j in range(model.num_vars):
        if not (model.lower[j] - tol <= values[j] <= model.upper[j] + tol):
            return False
    for coeffs, rel, rhs in model.rows:
        s = sum(a * values[j] for j, a in coeffs)
        if rel == "<=" and s > rhs + tol:
            return False
        if rel == ">=" and s < rhs - tol:
            return False
        if rel == "=" and abs(s - rhs) > tol:
            return False
    return True


def single_relu_net():
    """f(x) = max(0, x) as a 1-1-1 network."""
    return ReluMlp((Layer(np.array([[1.0]]), np.zeros(1)), Layer(np.array([[1.0]]), np.zeros(1))))


def abs_net():
    """f(x) = |x|; every x != 0 collides with -x."""
    return ReluMlp(
        (Layer(np.array([[1.0], [-1.0]]), np.zeros(2)), Layer(np.array([[1.0, 1.0]]), np.zeros(1)))
    )


def identity_pair_net():
    """f(x) = relu(x) - relu(-x) = x, an invertible two-unit net."""
    return ReluMlp(
        (Layer(np.array([[1.0], [-1.0]]), np.zeros(2)), Layer(np.array([[1.0, -1.0]]), np.zeros(1)))
    )


# ---- encode_relu_layer ----


def test_relu_layer_unit_rows():
    model = MilpModel()
    x = model.add_var("x", -1.0, 1.0)
    y = model.add_var("y")
    bins = encode_relu_layer(
        model, [x], [y], np.array([[1.0]]), np.zeros(1), np.array([-1.0]), np.array([1.0])
    )
    assert list(bins) == [0]
    t = bins[0]
    assert model.kinds[t] == "binary"
    assert model.num_rows == 4
    # y >= x; y <= x + (1 - t); y >= 0; y <= t
    assert model.rows[0] == (((y, 1.0), (x, -1.0)), ">=", 0.0)
    assert model.rows[1] == (((y, 1.0), (x, -1.0), (t, 1.0)), "<=", 1.0)
    assert model.rows[2] == (((y, 1.0),), ">=", 0.0)
    assert model.rows[3] == (((y, 1.0), (t, -1.0)), "<=", 0.0)
    assert model.lower[y] == 0.0 and model.upper[y] == 1.0


def test_relu_layer_stable_inactive():
    model = MilpModel()
    x = model.add_var("x", -1.0, 1.0)
    y = model.add_var("y")
    bins = encode_relu_layer(
        model, [x], [y], np.array([[1.0]]), np.array([-2.0]), np.array([-3.0]), np.array([-0.2])
    )
    assert bins == {}
    assert model.num_rows == 0
    assert model.lower[y] == 0.0 and model.upper[y] == 0.0


def test_relu_layer_stable_active():
    model = MilpModel()
    x = model.add_var("x", 1.0, 3.0)
    y = model.add_var("y")
    bins = encode_relu_layer(
        model, [x], [y], np.array([[2.0]]), np.array([0.5]), np.array([2.5]), np.array([6.5])
    )
    assert bins == {}
    assert model.num_rows == 1
    assert model.rows[0] == (((y, 1.0), (x, -2.0)), "=", 0.5)
    assert model.lower[y] == 2.5 and model.upper[y] == 6.5


def test_relu_layer_rejects_unsound_bounds():
    model = MilpModel()
    x = model.add_var("x", -1.0, 1.0)
    y = model.add_var("y")
    with pytest.raises(ValueError, match="unsound"):
        encode_relu_layer(
            model, [x], [y], np.array([[1.0]]), np.zeros(1), np.array([1.0]), np.array([-1.0])
        )


def test_relu_layer_sampling_check():
    rng = np.random.default_rng(5)
    weight = rng.uniform(-1.0, 1.0, size=(5, 3))
    bias = rng.uniform(-0.5, 0.5, size=5)
    lower = -np.abs(weight).sum(axis=1) + bias
    upper = np.abs(weight).sum(axis=1) + bias
    model = MilpModel()
    ins = [model.add_var(f"x{i}", -1.0, 1.0) for i in range(3)]
    outs = [model.add_var(f"y{i}") for i in range(5)]
    bins = encode_relu_layer(model, ins, outs, weight, bias, lower, upper)
    assert len(bins) == 5
    for _ in range(1000):
        x = rng.uniform(-1.0, 1.0, size=3)
        pre = weight @ x + bias
        values = np.zeros(model.num_vars)
        values[ins] = x
        values[outs] = np.maximum(pre, 0.0)
        for i, t in bins.items():
            values[t] = 1.0 if pre[i] > 0 else 0.0
        assert rows_hold(model, values)


# ---- problem 1 ----


def test_problem1_binary_count_law():
    net = random_network([1, 10, 10, 1], weight_scale=1.0, seed=2)
    box = InputBox(np.zeros(1), 2.0)
    bounds = propagate_interval(net, box)
    undetermined = sum(
        int(np.sum((l < 0) & (u > 0))) for l, u in zip(bounds.lower, bounds.upper)
    )
    assert undetermined == 20
    enc = encode_problem1(net, box)
    assert enc.num_binaries == 42  # 2 * (n0 + n)

    # shrinking the box fixes units and drops binaries accordingly
    small = InputBox(np.zeros(1), 0.05)
    bounds_small = propagate_interval(net, small)
    und_small = sum(
        int(np.sum((l < 0) & (u > 0))) for l, u in zip(bounds_small.lower, bounds_small.upper)
    )
    assert und_small < 20
    assert encode_problem1(net, small).num_binaries == 2 * (1 + und_small)


def test_problem1_identity_pair_zero():
    sol = milp_solve(encode_problem1(identity_pair_net(), InputBox(np.zeros(1), 1.0)).model)
    assert sol.status == OPTIMAL
    assert abs(sol.objective) <= 1e-9


def test_problem1_matches_grid_oracle():
    net = random_network([1, 4, 1], weight_scale=2.0, seed=3)
    box = InputBox(np.zeros(1), 1.0)
    sol = milp_solve(encode_problem1(net, box).model)
    gap, pair = grid_collision_search(net, box)
    assert sol.status == OPTIMAL
    assert abs(sol.objective - gap) <= 2e-3
    assert pair is not None


def test_problem1_matches_pattern_enumeration():
    for dims, scale, seed in [([1, 4, 1], 2.0, 3), ([2, 3, 2], 1.2, 7), ([1, 3, 3, 1], 1.5, 4)]:
        net = random_network(dims, weight_scale=scale, seed=seed)
        box = InputBox(np.zeros(dims[0]), 1.0)
        sol = milp_solve(encode_problem1(net, box).model)
        ref = pattern_enumeration_optimum(net, box, kind="p1")
        assert sol.status == OPTIMAL
        assert abs(sol.objective - ref) <= 1e-6, dims


def test_problem1_l1_matches_pattern_enumeration():
    net = random_network([2, 3, 2], weight_scale=1.2, seed=7)
    box = InputBox(np.array([0.1, -0.2]), 0.8, norm="l1")
    enc = encode_problem1(net, box)
    sol = milp_solve(enc.model)
    ref = pattern_enumeration_optimum(net, box, kind="p1")
    assert sol.status == OPTIMAL
    assert abs(sol.objective - ref) <= 1e-6
    bounds = propagate_interval(net, box)
    und = sum(int(np.sum((l < 0) & (u > 0))) for l, u in zip(bounds.lower, bounds.upper))
    assert enc.num_binaries == 2 * (2 + und)


def test_problem1_monotone_in_radius():
    net = random_network([1, 4, 1], weight_scale=2.0, seed=3)
    vals = []
    for r in (0.25, 0.5, 1.0, 2.0):
        sol = milp_solve(encode_problem1(net, InputBox(np.zeros(1), r)).model)
        assert sol.status == OPTIMAL
        vals.append(sol.objective)
    assert all(a <= b + 1e-9 for a, b in zip(vals, vals[1:]))


def test_problem1_copy_swap_symmetry():
    # solutions come in (x, y) / (y, x) pairs, so forcing an order keeps p*
    net = random_network([1, 4, 1], weight_scale=2.0, seed=3)
    box = InputBox(np.zeros(1), 1.0)
    base = milp_solve(encode_problem1(net, box).model)
    enc = encode_problem1(net, box)
    enc.model.add_constraint([(enc.x_vars[0], 1.0), (enc.y_vars[0], -1.0)], ">=", 0.0)
    ordered = milp_solve(enc.model)
    assert abs(base.objective - ordered.objective) <= 1e-8


def test_problem1_shared_binaries_force_common_pattern():
    box = InputBox(np.zeros(1), 1.0)
    separate = milp_solve(encode_problem1(abs_net(), box).model)
    shared = milp_solve(encode_problem1(abs_net(), box, share_copy_binaries=True).model)
    assert abs(separate.objective - 2.0) <= 1e-8
    assert abs(shared.objective) <= 1e-9


def test_problem1_witness_decodes_and_replays():
    net = random_network([1, 4, 1], weight_scale=2.0, seed=3)
    box = InputBox(np.zeros(1), 1.0)
    enc = encode_problem1(net, box)
    sol = milp_solve(enc.model)
    wit = enc.decode(sol.assignment)
    assert box.contains(wit["x"]) and box.contains(wit["y"])
    assert np.max(np.abs(forward(net, wit["x"]) - forward(net, wit["y"]))) <= 1e-5
    assert abs(np.max(np.abs(wit["x"] - wit["y"])) - wit["w"]) <= 1e-7
    assert abs(wit["w"] - sol.objective) <= 1e-9


def test_problem1_trivial_assignment_is_feasible():
    net = random_network([1, 4, 1], weight_scale=2.0, seed=3)
    box = InputBox(np.array([0.2]), 0.7)
    enc = encode_problem1(net, box)
    values = np.zeros(enc.model.num_vars)
    values[enc.x_vars] = box.center
    values[enc.y_vars] = box.center
    v = box.center
    for k, layer in enumerate(net.layers[:-1]):
        pre = layer.weight @ v + layer.bias
        v = np.maximum(pre, 0.0)
        for tag in ("x", "y"):
            values[enc.chains[tag][k]] = v
            for i, t in enc.binaries[tag][k].items():
                values[t] = 1.0 if pre[i] > 0 else 0.0
    values[enc.f_vars[0]] = 1.0
    values[enc.w_var] = 0.0
    assert rows_hold(enc.model, values)


def test_decision_threshold_feasibility_mode():
    box = InputBox(np.zeros(1), 1.0)
    enc = encode_problem1(abs_net(), box, decision_threshold=1e-4)
    assert enc.model.objective == {}
    sol = milp_solve(enc.model)
    assert sol.status == OPTIMAL
    wit = enc.decode(sol.assignment)
    assert wit["w"] >= 1e-4 - 1e-9
    assert np.max(np.abs(forward(abs_net(), wit["x"]) - forward(abs_net(), wit["y"]))) <= 1e-5
    invertible = milp_solve(encode_problem1(identity_pair_net(), box, decision_threshold=1e-4).model)
    assert invertible.status == INFEASIBLE


# ---- problem 2 ----


def test_problem2_degenerate_radius_zero():
    net = random_network([2, 5, 2], weight_scale=1.0, seed=1)
    sol = milp_solve(encode_problem2(net, InputBox(np.array([0.3, -0.1]), 0.0)).model)
    assert sol.status == OPTIMAL
    assert abs(sol.objective) <= 1e-9


def test_problem2_identity_zero():
    sol = milp_solve(encode_problem2(identity_pair_net(), InputBox(np.array([0.4]), 3.0)).model)
    assert sol.status == OPTIMAL
    assert abs(sol.objective) <= 1e-9


def scan_farthest_preimage(net, box, samples=200001):
    """Dense 1D scan: farthest x in the box with f(x) = f(center), found by
    linear interpolation of sign changes (exact between kinks)."""
    c = float(box.center[0])
    target = forward(net, box.center)[0]
    xs = np.linspace(c - box.radius, c + box.radius, samples)
    diff = np.array([forward(net, np.array([x]))[0] for x in xs]) - target
    best = 0.0
    for i in range(len(xs) - 1):
        d0, d1 = diff[i], diff[i + 1]
        if d0 == 0.0:
            best = max(best, abs(xs[i] - c))
        if d0 * d1 < 0:
            root = xs[i] - d0 * (xs[i + 1] - xs[i]) / (d1 - d0)
            best = max(best, abs(root - c))
    if diff[-1] == 0.0:
        best = max(best, abs(xs[-1] - c))
    return best


def test_problem2_matches_scan_oracle():
    net = random_network([1, 4, 1], weight_scale=2.0, seed=3)
    box = InputBox(np.array([0.3]), 1.0)
    sol = milp_solve(encode_problem2(net, box).model)
    assert sol.status == OPTIMAL
    assert abs(sol.objective - scan_farthest_preimage(net, box)) <= 1e-3
    ref = pattern_enumeration_optimum(net, box, kind="p2")
    assert abs(sol.objective - ref) <= 1e-6


def test_problem2_single_relu_analytic():
    # f(x) = max(0, x); f(-0.5) = 0, preimages are all x <= 0
    net = single_relu_net()
    sol = milp_solve(encode_problem2(net, InputBox(np.array([-0.5]), 1.0)).model)
    assert abs(sol.objective - 1.0) <= 1e-8
    # f(1) = 1 has the unique preimage 1 on [0, 2]
    sol2 = milp_solve(encode_problem2(net, InputBox(np.array([1.0]), 1.0)).model)
    assert abs(sol2.objective) <= 1e-8


def test_problem2_witness_replay():
    net = random_network([1, 4, 1], weight_scale=2.0, seed=3)
    box = InputBox(np.array([0.3]), 1.0)
    enc = encode_problem2(net, box)
    sol = milp_solve(enc.model)
    wit = enc.decode(sol.assignment)
    assert np.array_equal(wit["y"], box.center)
    assert box.contains(wit["x"])
    assert np.max(np.abs(forward(net, wit["x"]) - forward(net, box.center))) <= 1e-5


def test_problem2_l1_matches_enumeration():
    net = random_network([2, 3, 2], weight_scale=1.2, seed=9)
    box = InputBox(np.array([0.1, 0.2]), 0.7, norm="l1")
    sol = milp_solve(encode_problem2(net, box).model)
    ref = pattern_enumeration_optimum(net, box, kind="p2")
    assert sol.status == OPTIMAL
    assert abs(sol.objective - ref) <= 1e-6


# ---- problem 3 ----


def test_problem3_same_net_zero():
    net = random_network([1, 3, 1], weight_scale=1.5, seed=11)
    sol = milp_solve(encode_problem3(net, net, InputBox(np.zeros(1), 1.0)).model)
    assert sol.status == OPTIMAL
    assert abs(sol.objective) <= 1e-8


def test_problem3_affine_calibration_zero():
    # net_b = invertible affine map of net_a's output: mappable both ways
    a = random_network([1, 3, 1], weight_scale=1.5, seed=11)
    last = a.layers[-1]
    m, off = np.array([[2.0]]), np.array([0.5])
    b = ReluMlp(a.layers[:-1] + (Layer(m @ last.weight, m @ last.bias + off),))
    box = InputBox(np.zeros(1), 1.0)
    assert abs(milp_solve(encode_problem3(a, b, box).model).objective) <= 1e-8
    assert abs(milp_solve(encode_problem3(b, a, box).model).objective) <= 1e-8


def segment_mappability_gap(net_a, net_b, box):
    """Exact 1D oracle for single-hidden-layer nets: split the interval at
    every kink of either net, then scan image overlaps of segment pairs.
    Both maps are linear on each joint segment, so candidate maxima sit at
    overlap endpoints."""
    lo, hi = float(box.center[0] - box.radius), float(box.center[0] + box.radius)
    pts = {lo, hi}
    for net in (net_a, net_b):
        w, b = net.layers[0].weight[:, 0], net.layers[0].bias
        for wi, bi in zip(w, b):
            if wi != 0.0:
                k = -bi / wi
                if lo < k < hi:
                    pts.add(float(k))
    pts = sorted(pts)
    segs = list(zip(pts[:-1], pts[1:]))

    def val(net, x):
        return forward(net, np.array([x]))[0]

    def inverse_on(seg, v, fa0, fa1):
        x0, x1 = seg
        if fa1 == fa0:
            return [x0, x1]
        t = (v - fa0) / (fa1 - fa0)
        return [x0 + t * (x1 - x0)]

    best = 0.0
    for i in range(len(segs)):
        for j in range(i, len(segs)):
            a0, a1 = val(net_a, segs[i][0]), val(net_a, segs[i][1])
            b0, b1 = val(net_a, segs[j][0]), val(net_a, segs[j][1])
            vlo = max(min(a0, a1), min(b0, b1))
            vhi = min(max(a0, a1), max(b0, b1))
            if vlo > vhi:
                continue
            for v in (vlo, vhi):
                xs1 = inverse_on(segs[i], v, a0, a1)
                xs2 = inverse_on(segs[j], v, b0, b1)
                for x1 in xs1:
                    for x2 in xs2:
                        best = max(best, abs(val(net_b, x1) - val(net_b, x2)))
    return best


def test_problem3_matches_paired_oracles():
    a = random_network([1, 3, 1], weight_scale=2.0, seed=1)
    b = random_network([1, 3, 1], weight_scale=2.0, seed=101)
    box = InputBox(np.zeros(1), 1.0)
    sol = milp_solve(encode_problem3(a, b, box).model)
    assert sol.status == OPTIMAL
    assert sol.objective > 0.5  # genuinely non-mappable pair
    ref = pattern_enumeration_optimum(a, box, kind="p3", net_b=b)
    assert abs(sol.objective - ref) <= 1e-6
    exact = segment_mappability_gap(a, b, box)
    assert abs(sol.objective - exact) <= 1e-8


def test_problem3_witness_replay():
    a = random_network([1, 3, 1], weight_scale=2.0, seed=1)
    b = random_network([1, 3, 1], weight_scale=2.0, seed=101)
    box = InputBox(np.zeros(1), 1.0)
    enc = encode_problem3(a, b, box)
    sol = milp_solve(enc.model)
    wit = enc.decode(sol.assignment)
    assert box.contains(wit["x"]) and box.contains(wit["y"])
    assert np.max(np.abs(forward(a, wit["x"]) - forward(a, wit["y"]))) <= 1e-5
    gap = np.max(np.abs(forward(b, wit["x"]) - forward(b, wit["y"])))
    assert abs(gap - wit["w"]) <= 1e-6


# ---- handles and validation ----


def test_handle_map_is_total():
    net = random_network([2, 3, 2], weight_scale=1.2, seed=7)
    encs = [
        encode_problem1(net, InputBox(np.zeros(2), 0.8)),
        encode_problem1(net, InputBox(np.zeros(2), 0.8, norm="l1")),
        encode_problem2(net, InputBox(np.zeros(2), 0.8)),
        encode_problem3(net, random_network([2, 3, 2], seed=8), InputBox(np.zeros(2), 0.8)),
    ]
    for enc in encs:
        assert set(enc.var_roles) == set(range(enc.model.num_vars))


def test_dimension_validation():
    net = random_network([2, 3, 2], seed=0)
    with pytest.raises(ValueError, match="input dimension"):
        encode_problem1(net, InputBox(np.zeros(3), 1.0))
    with pytest.raises(ValueError, match="input dimension"):
        encode_problem2(net, InputBox(np.zeros(1), 1.0))
    other = random_network([2, 3, 3], seed=1)
    with pytest.raises(ValueError, match="output dimension"):
        encode_problem3(net, other, InputBox(np.zeros(2), 1.0))


def test_lp_text_emission():
    enc = encode_problem1(abs_net(), InputBox(np.zeros(1), 1.0))
    text = enc.lp_text()
    assert "Maximize" in text and "Binaries" in text
    assert "t1_0" in text and "s1_0" in text and "F_0" in text
