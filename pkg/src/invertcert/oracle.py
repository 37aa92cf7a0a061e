"""Independent brute-force verifiers.

Everything here is deliberately simple and slow: a dense-scan collision
search, exact optimization by enumerating activation patterns (affine
composition per pattern, no big-M rows), finite-difference Jacobians, and a
textbook Big-M tableau simplex that can be swapped in as the LP engine.
None of it shares solver internals with the MILP encoder.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .bounds import InputBox
from .milp import (
    INFEASIBLE,
    NUMERICAL_FAILURE,
    OPTIMAL,
    UNBOUNDED,
    LpSolution,
    MilpModel,
    lp_solve,
)
from .network import ReluMlp


def _batch_forward(net: ReluMlp, xs: np.ndarray) -> np.ndarray:
    v = xs
    for lay in net.layers[:-1]:
        v = np.maximum(v @ lay.weight.T + lay.bias, 0.0)
    last = net.layers[-1]
    return v @ last.weight.T + last.bias


# ---- grid collision search ----


def _segment_inverse_candidates(x0, x1, v0, v1, t):
    """x positions on segment [x0,x1] whose interpolated image is t."""
    if v0 == v1:
        return (x0, x1)  # flat: whole segment maps to v0
    s = (t - v0) / (v1 - v0)
    s = min(max(s, 0.0), 1.0)
    return (x0 + s * (x1 - x0),)


def _sweep_1d(xs, vs, tol):
    """Largest |x - y| with interpolated images equal, via a sweep over
    segments sorted by image interval."""
    n = len(xs) - 1
    lo_img = np.minimum(vs[:-1], vs[1:])
    hi_img = np.maximum(vs[:-1], vs[1:])
    order = np.argsort(lo_img, kind="stable")
    best = 0.0
    best_pair = None
    active: list[int] = []  # candidate segments, pruned by image overlap
    for idx in order:
        i = int(idx)
        still = []
        for jn in active:
            if hi_img[jn] + tol < lo_img[i]:
                continue  # image intervals can no longer overlap
            still.append(jn)
            if abs(i - jn) >= 1:
                lo_t = max(lo_img[i], lo_img[jn])
                hi_t = min(hi_img[i], hi_img[jn]) + 0.0
                for t in (lo_t, hi_t):
                    for xa in _segment_inverse_candidates(xs[i], xs[i + 1], vs[i], vs[i + 1], t):
                        for xb in _segment_inverse_candidates(
                            xs[jn], xs[jn + 1], vs[jn], vs[jn + 1], t
                        ):
                            gap = abs(xa - xb)
                            if gap > best:
                                best = gap
                                best_pair = (np.array([xa]), np.array([xb]))
        active = still
        # a near-flat segment collides with itself across its whole span
        if hi_img[i] - lo_img[i] <= tol and xs[i + 1] - xs[i] > best:
            best = xs[i + 1] - xs[i]
            best_pair = (np.array([xs[i]]), np.array([xs[i + 1]]))
        active.append(i)
    return best, best_pair


def grid_collision_search(net: ReluMlp, box: InputBox, resolution: int = 2001, match_tol: float = 1e-9):
    """Dense-scan estimate of the largest ||x - y||_inf with f(x) = f(y).

    1D scalar nets use an exact piecewise-linear sweep over the sampled graph
    (sorted by image, O(N log N)); once the grid is finer than the kink
    spacing the sampled graph is the function and the answer is exact. 2D
    inputs fall back to comparing grid points with ||f(x) - f(y)||_inf below
    match_tol scaled by the output magnitude. Returns (gap, (x, y) or None).
    """
    if box.dim > 2:
        raise ValueError("grid search supports input dimension <= 2 only")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    c, r = box.center, box.radius
    if box.dim == 1 and net.output_dim == 1:
        xs = np.linspace(c[0] - r, c[0] + r, resolution)
        vs = _batch_forward(net, xs[:, None])[:, 0]
        tol = match_tol * (1.0 + float(np.abs(vs).max(initial=0.0)))
        return _sweep_1d(xs, vs, tol)

    # point-pair fallback (2D, or 1D with vector output)
    if box.dim == 1:
        pts = np.linspace(c[0] - r, c[0] + r, resolution)[:, None]
    else:
        g = np.linspace(-r, r, resolution)
        gx, gy = np.meshgrid(g, g, indexing="ij")
        pts = c + np.stack([gx.ravel(), gy.ravel()], axis=1)
    if box.norm == "l1":
        keep = np.abs(pts - c).sum(axis=1) <= r + 1e-12
        pts = pts[keep]
    vals = _batch_forward(net, pts)
    tol = match_tol * (1.0 + float(np.abs(vals).max(initial=0.0)))
    order = np.argsort(vals[:, 0], kind="stable")
    pts, vals = pts[order], vals[order]
    best = 0.0
    best_pair = None
    v0 = vals[:, 0]
    start = 0
    for i in range(len(pts)):
        while v0[i] - v0[start] > tol:
            start += 1
        if start == i:
            continue
        close = np.abs(vals[start:i] - vals[i]).max(axis=1) <= tol
        if not close.any():
            continue
        cand = pts[start:i][close]
        gaps = np.abs(cand - pts[i]).max(axis=1)
        k = int(np.argmax(gaps))
        if gaps[k] > best:
            best = float(gaps[k])
            best_pair = (cand[k].copy(), pts[i].copy())
    return best, best_pair


# ---- exact 1D piecewise-linear graph ----


def pwl_graph_1d(net: ReluMlp, lo: float, hi: float):
    """Exact node set of a scalar 1D network on [lo, hi].

    Breakpoints accumulate layer by layer: every unit's pre-activation is
    affine on each current segment, so its zero crossing inside a segment
    contributes one node. Returns (xs, vs) with xs sorted, both interval
    endpoints included, and f affine between consecutive nodes.
    """
    if net.input_dim != 1 or net.output_dim != 1:
        raise ValueError("exact graph extraction needs a scalar 1D network")
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ValueError(f"need a finite interval with lo < hi, got [{lo}, {hi}]")
    xs = np.array([float(lo), float(hi)])

    def partial(values, depth):
        v = values[:, None]
        for lay in net.layers[:depth]:
            v = np.maximum(v @ lay.weight.T + lay.bias, 0.0)
        return v

    for k, lay in enumerate(net.layers[:-1]):
        pre = partial(xs, k) @ lay.weight.T + lay.bias  # (#nodes, units)
        u0, u1 = pre[:-1], pre[1:]
        cross = (u0 * u1) < 0.0  # strictly interior sign change
        if cross.any():
            seg, unit = np.nonzero(cross)
            a, b = u0[seg, unit], u1[seg, unit]
            new = (xs[seg] * b - xs[seg + 1] * a) / (b - a)
            xs = np.sort(np.concatenate([xs, new]))
            keep = np.r_[True, np.diff(xs) > 1e-13 * (1.0 + np.abs(xs[1:]))]
            xs = xs[keep]
    vs = _batch_forward(net, xs[:, None])[:, 0]
    return xs, vs


def _pair_max_span(x0, x1, si, ci, y0, y1, sj, cj, eq_tol):
    """Max (y - x) over the box [x0,x1] x [y0,y1] subject to
    |(sj*y + cj) - (si*x + ci)| <= eq_tol; (-inf, None) when empty.

    A linear objective over a polygon peaks at a vertex: box corners plus
    box-edge intersections with the two constraint lines cover them all.
    """
    best = -math.inf
    arg = None
    d0 = cj - ci
    pad = eq_tol + 1e-12 * (1.0 + abs(ci) + abs(cj))
    cands = [(xa, yb) for xa in (x0, x1) for yb in (y0, y1)]
    if sj != 0.0:
        for xa in (x0, x1):
            for s in (eq_tol, -eq_tol):
                cands.append((xa, (s - d0 + si * xa) / sj))
    if si != 0.0:
        for yb in (y0, y1):
            for s in (eq_tol, -eq_tol):
                cands.append(((sj * yb + d0 - s) / si, yb))
    for xa, yb in cands:
        if not (x0 - 1e-12 <= xa <= x1 + 1e-12 and y0 - 1e-12 <= yb <= y1 + 1e-12):
            continue
        xa = min(max(xa, x0), x1)
        yb = min(max(yb, y0), y1)
        if abs(sj * yb - si * xa + d0) <= pad and yb - xa > best:
            best = yb - xa
            arg = (xa, yb)
    return best, arg


def pwl_max_gap(xs, vs, eq_tol: float = 0.0):
    """Largest |x - y| with |v(x) - v(y)| <= eq_tol on a piecewise-linear
    graph given by nodes (xs, vs), exact up to float rounding.

    Segment pairs whose value intervals sit further than eq_tol apart
    cannot collide; a sweep over segments sorted by interval start prunes
    them, and each surviving pair reduces to a two-variable vertex check.
    Returns (gap, (x, y) or None); eq_tol = 0 demands exact equality.
    """
    xs = np.asarray(xs, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    if xs.ndim != 1 or xs.shape != vs.shape or xs.size < 2:
        raise ValueError("need matching 1D node arrays with at least two nodes")
    n = xs.size - 1
    lo_img = np.minimum(vs[:-1], vs[1:])
    hi_img = np.maximum(vs[:-1], vs[1:])
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = (vs[1:] - vs[:-1]) / (xs[1:] - xs[:-1])
    inter = vs[:-1] - slope * xs[:-1]
    order = np.argsort(lo_img, kind="stable")
    best = 0.0
    best_pair = None
    active: list[int] = []

    def consider(a, b):
        nonlocal best, best_pair
        span, arg = _pair_max_span(
            xs[a], xs[a + 1], slope[a], inter[a],
            xs[b], xs[b + 1], slope[b], inter[b], eq_tol,
        )
        if span > best:
            best = span
            best_pair = arg

    for idx in order:
        i = int(idx)
        still = []
        for j in active:
            if hi_img[j] + eq_tol < lo_img[i]:
                continue
            still.append(j)
            a, b = (j, i) if xs[j] <= xs[i] else (i, j)
            consider(a, b)
        active = still
        consider(i, i)
        active.append(i)
    if best_pair is None:
        return 0.0, None
    x, y = best_pair
    return best, (np.array([x]), np.array([y]))


# ---- pattern enumeration ----


def _interval_stability(net: ReluMlp, box: InputBox):
    """Per-layer unit stability over the box: +1 always-on, -1 always-off,
    0 undetermined. Independent interval sweep (not the bounds module)."""
    lo = box.center - box.radius
    hi = box.center + box.radius
    states = []
    for lay in net.layers[:-1]:
        mid = (lo + hi) / 2.0
        rad = (hi - lo) / 2.0
        zmid = lay.weight @ mid + lay.bias
        zrad = np.abs(lay.weight) @ rad
        zl, zu = zmid - zrad, zmid + zrad
        state = np.zeros(lay.n_out, dtype=np.int8)
        state[zl >= 0.0] = 1
        state[zu <= 0.0] = -1
        states.append(state)
        lo, hi = np.maximum(zl, 0.0), np.maximum(zu, 0.0)
    return states


def _affine_by_pattern(net: ReluMlp, pattern):
    """Affine pieces under a fixed activation pattern.

    Returns (pre_list, out): pre_list[k] = (P, q) giving layer-k
    pre-activations as P x + q, and out the network output map.
    """
    first = net.layers[0]
    P, q = first.weight, first.bias
    pre = [(P, q)]
    for k, lay in enumerate(net.layers[1:], start=1):
        mask = pattern[k - 1].astype(np.float64)
        P = lay.weight @ (mask[:, None] * P)
        q = lay.weight @ (mask * q) + lay.bias
        pre.append((P, q))
    return pre[:-1], pre[-1]


def _add_ball_rows(model: MilpModel, x_idx, box: InputBox):
    lo, hi = box.enclosing_linf()
    for i, j in enumerate(x_idx):
        model.add_constraint([(j, 1.0)], ">=", lo[i])
        model.add_constraint([(j, 1.0)], "<=", hi[i])
    if box.norm == "l1":
        devs = []
        for i, j in enumerate(x_idx):
            d = model.add_var(f"dev{j}", lower=0.0)
            model.add_constraint([(d, 1.0), (j, -1.0)], ">=", -box.center[i])
            model.add_constraint([(d, 1.0), (j, 1.0)], ">=", box.center[i])
            devs.append(d)
        model.add_constraint([(d, 1.0) for d in devs], "<=", box.radius)


def _add_sign_rows(model: MilpModel, x_idx, pre, pattern, states):
    """Cell-membership inequalities for the undetermined units only."""
    for k, (P, q) in enumerate(pre):
        free = states[k] == 0
        for i in np.flatnonzero(free):
            coeffs = [(x_idx[t], P[i, t]) for t in range(P.shape[1])]
            if pattern[k][i]:
                model.add_constraint(coeffs, ">=", -q[i])
            else:
                model.add_constraint(coeffs, "<=", -q[i])


def _solve_engine(model: MilpModel, engine: str) -> LpSolution:
    if engine == "textbook":
        return reference_lp_solve(model)
    return lp_solve(model, relax=True)


def _patterns_for(net: ReluMlp, states):
    """All activation patterns consistent with the stability states."""
    free_slots = [(k, int(i)) for k, st in enumerate(states) for i in np.flatnonzero(st == 0)]
    base = [st == 1 for st in states]
    for bits in itertools.product((False, True), repeat=len(free_slots)):
        pat = [layer.copy() for layer in base]
        for (k, i), bit in zip(free_slots, bits):
            pat[k][i] = bit
        yield tuple(pat)


def _realizable_patterns(net: ReluMlp, box: InputBox, states, engine: str):
    """Patterns whose activation cell meets the box (LP feasibility filter)."""
    out = []
    for pat in _patterns_for(net, states):
        pre, _ = _affine_by_pattern(net, pat)
        model = MilpModel()
        x_idx = [model.add_var(f"x{i}") for i in range(net.input_dim)]
        _add_ball_rows(model, x_idx, box)
        _add_sign_rows(model, x_idx, pre, pat, states)
        model.set_objective({})
        sol = _solve_engine(model, engine)
        if sol.status == OPTIMAL:
            out.append(pat)
        elif sol.status not in (INFEASIBLE,):
            raise RuntimeError(f"pattern feasibility LP returned {sol.status}")
    return out


ENUM_CAP_UNITS = 14


def _gap_directions(n0: int, norm: str) -> list[np.ndarray]:
    """Linear objectives whose maximum over +-d equals the gap norm."""
    if norm == "l1":
        if n0 > 8:
            raise ValueError("l1 gap enumeration is limited to 8 input dimensions")
        return [
            np.concatenate(([1.0], rest))
            for rest in itertools.product((1.0, -1.0), repeat=n0 - 1)
        ]
    return [row for row in np.eye(n0)]


def pattern_enumeration_optimum(
    net: ReluMlp,
    box: InputBox,
    kind: str = "p1",
    net_b: ReluMlp | None = None,
    y_target=None,
    engine: str = "default",
) -> float:
    """Exact optimum by enumerating activation-pattern cells and solving one
    small LP per cell combination.

    kind "p1": max ||x - y|| s.t. f(x) = f(y), both in the box.
    kind "p2": max ||x - x_c|| s.t. f(x) = y_target (default f(x_c)).
    kind "p3": max ||g(x) - g(y)||_inf s.t. f(x) = f(y) (g = net_b).

    The input-gap norm for p1/p2 follows box.norm; an L1 gap is maximized
    by enumerating sign vectors, so it is limited to 8 input dimensions.
    Raises ValueError when the number of interval-undetermined units exceeds
    14 (the 2^14 enumeration cap).
    """
    if kind not in ("p1", "p2", "p3"):
        raise ValueError(f"unknown problem kind {kind!r}")
    if kind == "p3" and net_b is None:
        raise ValueError("kind 'p3' needs net_b")
    states_a = _interval_stability(net, box)
    undetermined = sum(int(np.sum(st == 0)) for st in states_a)
    copies = 2 if kind in ("p1", "p3") else 1
    total = undetermined * copies
    states_b = None
    if kind == "p3":
        states_b = _interval_stability(net_b, box)
        total += 2 * sum(int(np.sum(st == 0)) for st in states_b)
    if total > ENUM_CAP_UNITS:
        raise ValueError(
            f"{total} undetermined units exceeds the 2^{ENUM_CAP_UNITS} enumeration cap"
        )

    n0 = net.input_dim
    dirs = _gap_directions(n0, box.norm)
    if kind == "p2":
        target = np.asarray(
            y_target if y_target is not None else _batch_forward(net, box.center[None])[0],
            dtype=np.float64,
        )
        best = -math.inf
        for pat in _realizable_patterns(net, box, states_a, engine):
            pre, (Po, qo) = _affine_by_pattern(net, pat)
            for d in dirs:
                for sgn in (1.0, -1.0):
                    model = MilpModel()
                    x_idx = [model.add_var(f"x{t}") for t in range(n0)]
                    _add_ball_rows(model, x_idx, box)
                    _add_sign_rows(model, x_idx, pre, pat, states_a)
                    for m_row in range(Po.shape[0]):
                        model.add_constraint(
                            [(x_idx[t], Po[m_row, t]) for t in range(n0)],
                            "=",
                            target[m_row] - qo[m_row],
                        )
                    model.set_objective(
                        {x_idx[t]: sgn * d[t] for t in range(n0) if d[t] != 0.0}
                    )
                    sol = _solve_engine(model, engine)
                    if sol.status == OPTIMAL:
                        best = max(best, sol.objective - sgn * float(d @ box.center))
                    elif sol.status not in (INFEASIBLE,):
                        raise RuntimeError(f"pattern LP returned {sol.status}")
        return 0.0 if best == -math.inf else float(best)

    pats_a = [
        (pat, _affine_by_pattern(net, pat))
        for pat in _realizable_patterns(net, box, states_a, engine)
    ]
    if kind == "p3":
        pats_b = [
            (pat, _affine_by_pattern(net_b, pat))
            for pat in _realizable_patterns(net_b, box, states_b, engine)
        ]
        # one copy lives in a netA cell and a netB cell simultaneously
        combos = [(a, b) for a in pats_a for b in pats_b]
    else:
        combos = [(a, None) for a in pats_a]

    best = 0.0
    for c1, c2 in itertools.combinations_with_replacement(combos, 2):
        (pa1, (pre_a1, (Pa1, qa1))), cb1 = c1
        (pa2, (pre_a2, (Pa2, qa2))), cb2 = c2
        model = MilpModel()
        x1 = [model.add_var(f"x1_{t}") for t in range(n0)]
        x2 = [model.add_var(f"x2_{t}") for t in range(n0)]
        _add_ball_rows(model, x1, box)
        _add_ball_rows(model, x2, box)
        _add_sign_rows(model, x1, pre_a1, pa1, states_a)
        _add_sign_rows(model, x2, pre_a2, pa2, states_a)
        for i in range(Pa1.shape[0]):
            coeffs = [(x1[t], Pa1[i, t]) for t in range(n0)]
            coeffs += [(x2[t], -Pa2[i, t]) for t in range(n0)]
            model.add_constraint(coeffs, "=", qa2[i] - qa1[i])
        if kind == "p3":
            pb1, (pre_b1, (Pb1, qb1)) = cb1
            pb2, (pre_b2, (Pb2, qb2)) = cb2
            _add_sign_rows(model, x1, pre_b1, pb1, states_b)
            _add_sign_rows(model, x2, pre_b2, pb2, states_b)
            obj_rows = [
                (
                    [(x1[t], Pb1[i, t]) for t in range(n0)]
                    + [(x2[t], -Pb2[i, t]) for t in range(n0)],
                    qb1[i] - qb2[i],
                )
                for i in range(Pb1.shape[0])
            ]
        else:
            obj_rows = [
                (
                    [(x1[t], d[t]) for t in range(n0) if d[t] != 0.0]
                    + [(x2[t], -d[t]) for t in range(n0) if d[t] != 0.0],
                    0.0,
                )
                for d in dirs
            ]

        model.set_objective({})
        probe = _solve_engine(model, engine)
        if probe.status == INFEASIBLE:
            continue
        if probe.status != OPTIMAL:
            raise RuntimeError(f"pattern LP returned {probe.status}")
        for coeffs, off in obj_rows:
            for sgn in (1.0, -1.0):
                model.set_objective({j: sgn * a for j, a in coeffs if a != 0.0})
                sol = _solve_engine(model, engine)
                if sol.status != OPTIMAL:
                    raise RuntimeError(f"pattern LP returned {sol.status}")
                best = max(best, sol.objective + sgn * off)
    return float(best)


# ---- finite differences ----


def fd_jacobian(map_fn, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of a vector map at x."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    cols = []
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        fp = np.asarray(map_fn(x + e), dtype=np.float64).reshape(-1)
        fm = np.asarray(map_fn(x - e), dtype=np.float64).reshape(-1)
        cols.append((fp - fm) / (2.0 * h))
    return np.stack(cols, axis=1)


# ---- textbook Big-M tableau simplex ----


def reference_lp_solve(model: MilpModel, max_iter: int | None = None) -> LpSolution:
    """Big-M tableau simplex from the standard recipe: shift variables to be
    nonnegative (splitting free ones), slack/surplus/artificial columns, one
    dense tableau, Dantzig pivoting. Used only as a cross-check engine.
    """
    n = model.num_vars
    lo = np.array(model.lower)
    hi = np.array(model.upper)

    # x_j = shift + sign * p_j (p >= 0); free vars become p+ - p-.
    shift = np.zeros(n)
    sign = np.ones(n)
    pcols: list[tuple[int, float]] = []  # (model var, sign) per p column
    extra_rows = []  # p_k <= span for two-sided finite bounds
    for j in range(n):
        lf, uf = math.isfinite(lo[j]), math.isfinite(hi[j])
        if lf:
            shift[j] = lo[j]
            pcols.append((j, 1.0))
            if uf:
                extra_rows.append((len(pcols) - 1, hi[j] - lo[j]))
        elif uf:
            shift[j] = hi[j]
            sign[j] = -1.0
            pcols.append((j, -1.0))
        else:
            pcols.append((j, 1.0))
            pcols.append((j, -1.0))
    np_  = len(pcols)

    def row_in_p(coeffs):
        rp = np.zeros(np_)
        const = 0.0
        for j, a in coeffs:
            const += a * shift[j]
            for k, (mj, s) in enumerate(pcols):
                if mj == j:
                    rp[k] += a * s
        return rp, const

    rows = []
    for coeffs, rel, rhs in model.rows:
        rp, const = row_in_p(coeffs)
        rows.append((rp, rel, rhs - const))
    for k, span in extra_rows:
        rp = np.zeros(np_)
        rp[k] = 1.0
        rows.append((rp, "<=", span))

    m = len(rows)
    c_p, c_const = row_in_p(list(model.objective.items()))

    # Assemble tableau columns: p vars | slacks | artificials | rhs.
    slack_cols = []
    art_cols = []
    data = []
    for i, (rp, rel, rhs) in enumerate(rows):
        if rhs < 0:
            rp, rhs = -rp, -rhs
            rel = {"<=": ">=", ">=": "<=", "=": "="}[rel]
        data.append((rp, rel, rhs))
    for i, (rp, rel, rhs) in enumerate(data):
        if rel == "<=":
            slack_cols.append((i, 1.0))
        elif rel == ">=":
            slack_cols.append((i, -1.0))
            art_cols.append(i)
        else:
            art_cols.append(i)
    ns, na = len(slack_cols), len(art_cols)
    width = np_ + ns + na + 1
    T = np.zeros((m + 1, width))
    basis = np.full(m, -1, dtype=int)
    for i, (rp, rel, rhs) in enumerate(data):
        T[i, :np_] = rp
        T[i, -1] = rhs
    for k, (i, s) in enumerate(slack_cols):
        T[i, np_ + k] = s
        if s > 0:
            basis[i] = np_ + k
    big_m = 1e7 * (1.0 + float(np.abs(c_p).max(initial=0.0)))
    cost = np.zeros(width - 1)
    cost[:np_] = c_p
    for k, i in enumerate(art_cols):
        T[i, np_ + ns + k] = 1.0
        basis[i] = np_ + ns + k
        cost[np_ + ns + k] = -big_m
    if np.any(basis < 0):
        return LpSolution(NUMERICAL_FAILURE, None, None, 0)

    # Objective row: z_j - c_j.
    T[m, :-1] = -cost
    for i in range(m):
        if cost[basis[i]] != 0.0:
            T[m] += cost[basis[i]] * T[i]

    cap = max_iter if max_iter is not None else 200 * (m + width) + 5000
    it = 0
    while True:
        if it >= cap:
            return LpSolution(NUMERICAL_FAILURE, None, None, it)
        it += 1
        j = int(np.argmin(T[m, :-1]))
        if T[m, j] >= -1e-9:
            break
        col = T[:m, j]
        pos = col > 1e-9
        if not pos.any():
            # Unbounded direction; with artificials priced at -M this can
            # only happen for genuinely unbounded problems.
            if all(T[i, -1] <= 1e-7 or basis[i] < np_ + ns for i in range(m)):
                return LpSolution(UNBOUNDED, None, None, it)
            return LpSolution(INFEASIBLE, None, None, it)
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / col[pos]
        r = int(np.argmin(ratios))
        T[r] /= T[r, j]
        for i in range(m + 1):
            if i != r and T[i, j] != 0.0:
                T[i] -= T[i, j] * T[r]
        basis[r] = j

    p_val = np.zeros(width - 1)
    for i in range(m):
        p_val[basis[i]] = T[i, -1]
    if np.any(p_val[np_ + ns :] > 1e-6):
        return LpSolution(INFEASIBLE, None, None, it)
    x = shift.copy()
    for k, (mj, s) in enumerate(pcols):
        x[mj] += s * p_val[k]
    obj = float(sum(a * x[j] for j, a in model.objective.items()))
    return LpSolution(OPTIMAL, obj, x, it)
