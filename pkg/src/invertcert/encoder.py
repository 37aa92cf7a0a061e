"""Big-M MILP encodings of the three invertibility questions.

Each ReLU unit with pre-activation bounds l <= u is either fixed by the
bounds (u <= 0 pins the output to zero, l >= 0 makes it affine) or gets one
binary indicator and four linear rows. On top of the layer encoding,
``encode_problem1`` builds the two-copy collision model (largest input gap
with equal outputs), ``encode_problem2`` the one-copy variant against a
fixed center, and ``encode_problem3`` the two-network mappability model.
The max-norm objective uses one indicator pair (F, F') per measured
coordinate; exactly one indicator is active, pinning w to the achieved
maximum absolute difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bounds import InputBox, propagate_interval, output_bounds
from .milp import BINARY, MilpModel, model_to_lp_text
from .network import ReluMlp, forward_trace


def encode_relu_layer(
    model: MilpModel,
    in_vars,
    out_vars,
    weight,
    bias,
    lower,
    upper,
    binary_prefix: str = "t",
    reuse_binaries=None,
):
    """Constrain out_vars to equal relu(weight @ in_vars + bias).

    ``lower``/``upper`` are sound pre-activation bounds. Units with
    upper <= 0 are pinned to zero and units with lower >= 0 become affine
    equalities; neither consumes a binary. Every other unit gets one binary
    (taken from ``reuse_binaries`` when provided) and the four rows

        y >= Wx + b,  y <= Wx + b - l(1 - t),  y >= 0,  y <= u t.

    Output-variable bounds are tightened to the relu image of [l, u].
    Returns {unit index: binary column} for the undetermined units.
    """
    weight = np.asarray(weight, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    m, n = weight.shape
    if len(in_vars) != n or len(out_vars) != m:
        raise ValueError("variable lists do not match the weight shape")
    if bias.shape != (m,) or lower.shape != (m,) or upper.shape != (m,):
        raise ValueError("bias/bounds do not match the weight shape")
    if np.any(lower > upper):
        raise ValueError("unsound pre-activation bounds (lower > upper)")

    binaries: dict[int, int] = {}
    for i in range(m):
        y = out_vars[i]
        li, ui = float(lower[i]), float(upper[i])
        model.set_var_bounds(y, max(li, 0.0), max(ui, 0.0))
        affine = [(y, 1.0)] + [(in_vars[j], -weight[i, j]) for j in range(n)]
        if ui <= 0.0:
            continue
        if li >= 0.0:
            model.add_constraint(affine, "=", bias[i])
            continue
        if reuse_binaries is not None:
            try:
                t = reuse_binaries[i]
            except KeyError:
                raise ValueError(f"no reusable binary for undetermined unit {i}")
        else:
            t = model.add_var(f"{binary_prefix}_{i}", kind=BINARY)
        model.add_constraint(affine, ">=", bias[i])
        model.add_constraint(affine + [(t, -li)], "<=", bias[i] - li)
        model.add_constraint([(y, 1.0)], ">=", 0.0)
        model.add_constraint([(y, 1.0), (t, -ui)], "<=", 0.0)
        binaries[i] = t
    return binaries


@dataclass
class EncodedProblem:
    """A built model plus handles mapping its columns back to the problem.

    ``chains`` maps a copy tag (``"x"``, ``"y"``, and for mappability
    ``"xb"``/``"yb"``) to per-hidden-layer lists of post-activation
    columns; ``binaries`` mirrors it with {unit: column} dicts. ``var_roles``
    labels every model column.
    """

    kind: str
    model: MilpModel
    box: InputBox
    nets: tuple[ReluMlp, ...]
    w_var: int
    x_vars: list[int]
    y_vars: list[int] | None
    f_vars: list[int]
    fp_vars: list[int]
    chains: dict[str, list[list[int]]]
    binaries: dict[str, list[dict[int, int]]]
    aux_vars: list[int] = field(default_factory=list)
    var_roles: dict[int, str] = field(default_factory=dict)
    decision_threshold: float | None = None

    @property
    def num_binaries(self) -> int:
        return self.model.num_binaries

    def decode(self, assignment) -> dict:
        """Extract the witness pair and objective value from a solution."""
        assignment = np.asarray(assignment, dtype=np.float64)
        x = assignment[self.x_vars]
        if self.y_vars is None:
            y = self.box.center.copy()
        else:
            y = assignment[self.y_vars]
        return {"x": x, "y": y, "w": float(assignment[self.w_var])}

    def lp_text(self) -> str:
        return model_to_lp_text(self.model)


def _role(roles: dict[int, str], var: int, label: str) -> int:
    roles[var] = label
    return var


def _add_input_copy(model, roles, box, tag):
    """Box-bounded input columns; an L1 ball adds deviation rows."""
    c, r = box.center, box.radius
    cols = [
        _role(roles, model.add_var(f"{tag}0_{i}", c[i] - r, c[i] + r), f"input {tag}")
        for i in range(box.dim)
    ]
    aux = []
    if box.norm == "l1":
        for i, v in enumerate(cols):
            d = model.add_var(f"d{tag}_{i}", 0.0, r)
            aux.append(_role(roles, d, f"l1 deviation {tag}"))
            model.add_constraint([(d, 1.0), (v, -1.0)], ">=", -c[i])
            model.add_constraint([(d, 1.0), (v, 1.0)], ">=", c[i])
        model.add_constraint([(d, 1.0) for d in aux], "<=", r)
    return cols, aux


def _encode_net_copy(model, roles, net, bounds, in_vars, tag, bin_tag, reuse=None):
    """Hidden chain of one network copy. Returns (per-layer columns,
    per-layer binary dicts, columns feeding the output layer)."""
    chain, bins = [], []
    cur = in_vars
    for k in range(len(net.layers) - 1):
        layer = net.layers[k]
        outs = [
            _role(roles, model.add_var(f"{tag}{k + 1}_{i}"), f"post-activation {tag}")
            for i in range(layer.weight.shape[0])
        ]
        got = encode_relu_layer(
            model,
            cur,
            outs,
            layer.weight,
            layer.bias,
            bounds.lower[k],
            bounds.upper[k],
            binary_prefix=f"{bin_tag}{k + 1}",
            reuse_binaries=None if reuse is None else reuse[k],
        )
        for i, t in got.items():
            roles.setdefault(t, f"indicator {bin_tag}{k + 1}_{i}")
        chain.append(outs)
        bins.append(got)
        cur = outs
    return chain, bins, cur


def _add_output_equality(model, layer, left_vars, right):
    """Rows W z_left = W z_right; the shared bias cancels. ``right`` is
    either a column list or a constant vector."""
    w = layer.weight
    for i in range(w.shape[0]):
        coeffs = [(v, w[i, j]) for j, v in enumerate(left_vars)]
        if isinstance(right, np.ndarray):
            model.add_constraint(coeffs, "=", float(w[i] @ right))
        else:
            coeffs += [(v, -w[i, j]) for j, v in enumerate(right)]
            model.add_constraint(coeffs, "=", 0.0)


def _add_max_gap_gadget(model, roles, w_var, diffs, big_m):
    """w = max_i |d_i| via indicator pairs: w >= +-d_i for every i, and the
    single active indicator pins w <= +-d_i on the achieving coordinate.

    ``diffs`` lists (terms, const) with d_i = sum(coef * column) + const.
    """
    f_vars, fp_vars = [], []
    for i in range(len(diffs)):
        f_vars.append(_role(roles, model.add_var(f"F_{i}", kind=BINARY), "indicator F"))
        fp_vars.append(_role(roles, model.add_var(f"Fp_{i}", kind=BINARY), "indicator F'"))
    for i, (terms, const) in enumerate(diffs):
        neg = [(v, -a) for v, a in terms]
        model.add_constraint([(w_var, 1.0)] + neg, ">=", const)
        model.add_constraint(
            [(w_var, 1.0)] + neg + [(f_vars[i], big_m)], "<=", big_m + const
        )
        model.add_constraint([(w_var, 1.0)] + list(terms), ">=", -const)
        model.add_constraint(
            [(w_var, 1.0)] + list(terms) + [(fp_vars[i], big_m)], "<=", big_m - const
        )
        model.add_constraint([(f_vars[i], 1.0), (fp_vars[i], 1.0)], "<=", 1.0)
    model.add_constraint(
        [(v, 1.0) for v in f_vars] + [(v, 1.0) for v in fp_vars], "=", 1.0
    )
    return f_vars, fp_vars


def _add_l1_gap_objective(model, roles, w_var, x_vars, y_vars, radius):
    """w = ||x - y||_1 via signed splits x_i - y_i = p_i - q_i with
    exclusive indicators capping each side at the 2r coordinate range."""
    cap = 2.0 * radius
    f_vars, fp_vars, aux = [], [], []
    for i, (xv, yv) in enumerate(zip(x_vars, y_vars)):
        p = _role(roles, model.add_var(f"p_{i}", 0.0, cap), "l1 split +")
        q = _role(roles, model.add_var(f"q_{i}", 0.0, cap), "l1 split -")
        f = _role(roles, model.add_var(f"F_{i}", kind=BINARY), "indicator F")
        fp = _role(roles, model.add_var(f"Fp_{i}", kind=BINARY), "indicator F'")
        model.add_constraint([(xv, 1.0), (yv, -1.0), (p, -1.0), (q, 1.0)], "=", 0.0)
        model.add_constraint([(p, 1.0), (f, -cap)], "<=", 0.0)
        model.add_constraint([(q, 1.0), (fp, -cap)], "<=", 0.0)
        model.add_constraint([(f, 1.0), (fp, 1.0)], "<=", 1.0)
        aux += [p, q]
        f_vars.append(f)
        fp_vars.append(fp)
    terms = [(v, -1.0) for v in aux]
    model.add_constraint([(w_var, 1.0)] + terms, "=", 0.0)
    return f_vars, fp_vars, aux


def _finish_objective(model, w_var, decision_threshold):
    if decision_threshold is None:
        model.set_objective({w_var: 1.0})
    else:
        model.add_constraint([(w_var, 1.0)], ">=", float(decision_threshold))
        model.set_objective({})


def encode_problem1(
    net: ReluMlp,
    box: InputBox,
    share_copy_binaries: bool = False,
    decision_threshold: float | None = None,
) -> EncodedProblem:
    """Largest gap between two inputs mapped to the same output.

    Two weight-sharing copies of ``net`` run on inputs x and y inside the
    box; their outputs are constrained equal and w measures ||x - y|| in
    the box norm. The optimum is zero exactly when ``net`` is invertible
    on the box. ``share_copy_binaries`` forces both copies onto one set of
    activation indicators (deliberately wrong: it restricts the copies to
    a common activation pattern; kept for comparison runs).
    ``decision_threshold`` swaps the objective for a pure feasibility
    question "is a gap >= threshold achievable", which branch and bound
    settles at the first incumbent.
    """
    if net.input_dim != box.dim:
        raise ValueError("network input dimension does not match the box")
    bounds = propagate_interval(net, box)
    model = MilpModel()
    roles: dict[int, str] = {}
    r = box.radius

    x_vars, aux = _add_input_copy(model, roles, box, "x")
    y_vars, aux_y = _add_input_copy(model, roles, box, "y")
    aux += aux_y
    x_chain, x_bins, x_last = _encode_net_copy(
        model, roles, net, bounds, x_vars, "x", "t"
    )
    y_chain, y_bins, y_last = _encode_net_copy(
        model, roles, net, bounds, y_vars, "y", "s", reuse=x_bins if share_copy_binaries else None
    )
    _add_output_equality(model, net.layers[-1], x_last, y_last)

    w_cap = 2.0 * r
    w_var = _role(roles, model.add_var("w", 0.0, w_cap), "objective gap")
    if box.norm == "l1":
        f_vars, fp_vars, split_aux = _add_l1_gap_objective(
            model, roles, w_var, x_vars, y_vars, r
        )
        aux += split_aux
    else:
        diffs = [
            ([(xv, 1.0), (yv, -1.0)], 0.0) for xv, yv in zip(x_vars, y_vars)
        ]
        f_vars, fp_vars = _add_max_gap_gadget(model, roles, w_var, diffs, 4.0 * r)
    _finish_objective(model, w_var, decision_threshold)

    return EncodedProblem(
        kind="invertibility",
        model=model,
        box=box,
        nets=(net,),
        w_var=w_var,
        x_vars=x_vars,
        y_vars=y_vars,
        f_vars=f_vars,
        fp_vars=fp_vars,
        chains={"x": x_chain, "y": y_chain},
        binaries={"x": x_bins, "y": y_bins},
        aux_vars=aux,
        var_roles=roles,
        decision_threshold=decision_threshold,
    )


def encode_problem2(
    net: ReluMlp,
    box: InputBox,
    decision_threshold: float | None = None,
) -> EncodedProblem:
    """Largest distance from the center to another preimage of its output.

    The second copy of the collision model degenerates to constants: the
    output-equality rows compare against the forward pass at the box
    center, so only one network copy remains in the model.
    """
    if net.input_dim != box.dim:
        raise ValueError("network input dimension does not match the box")
    bounds = propagate_interval(net, box)
    model = MilpModel()
    roles: dict[int, str] = {}
    c, r = box.center, box.radius

    x_vars, aux = _add_input_copy(model, roles, box, "x")
    x_chain, x_bins, x_last = _encode_net_copy(
        model, roles, net, bounds, x_vars, "x", "t"
    )
    _, pre_acts, _ = forward_trace(net, c)
    center_last = np.maximum(pre_acts[-1], 0.0) if pre_acts else c
    _add_output_equality(model, net.layers[-1], x_last, center_last)

    w_var = _role(roles, model.add_var("w", 0.0, r), "objective gap")
    if box.norm == "l1":
        y_fixed = [model.add_var(f"y0_{i}", c[i], c[i]) for i in range(box.dim)]
        for i, v in enumerate(y_fixed):
            _role(roles, v, "center constant")
        f_vars, fp_vars, split_aux = _add_l1_gap_objective(
            model, roles, w_var, x_vars, y_fixed, r
        )
        aux += split_aux + y_fixed
    else:
        diffs = [([(xv, 1.0)], -c[i]) for i, xv in enumerate(x_vars)]
        f_vars, fp_vars = _add_max_gap_gadget(model, roles, w_var, diffs, 4.0 * r)
    _finish_objective(model, w_var, decision_threshold)

    return EncodedProblem(
        kind="pseudo_invertibility",
        model=model,
        box=box,
        nets=(net,),
        w_var=w_var,
        x_vars=x_vars,
        y_vars=None,
        f_vars=f_vars,
        fp_vars=fp_vars,
        chains={"x": x_chain},
        binaries={"x": x_bins},
        aux_vars=aux,
        var_roles=roles,
        decision_threshold=decision_threshold,
    )


def encode_problem3(
    net_a: ReluMlp,
    net_b: ReluMlp,
    box: InputBox,
    decision_threshold: float | None = None,
) -> EncodedProblem:
    """Largest spread of net_b outputs over inputs that net_a cannot tell
    apart. Zero optimum means the net_b output is a function of the net_a
    output on the box.

    Both inputs feed copies of both networks; the net_a outputs are pinned
    equal and w measures the max-norm difference of the net_b outputs with
    a big-M of twice the widest net_b output interval.
    """
    if net_a.input_dim != box.dim or net_b.input_dim != box.dim:
        raise ValueError("network input dimension does not match the box")
    if net_a.output_dim != net_b.output_dim:
        raise ValueError("networks must share the output dimension")
    bounds_a = propagate_interval(net_a, box)
    bounds_b = propagate_interval(net_b, box)
    out_lo, out_hi = output_bounds(net_b, box)
    width = float(np.max(out_hi - out_lo)) if out_hi.size else 0.0
    model = MilpModel()
    roles: dict[int, str] = {}

    x_vars, aux = _add_input_copy(model, roles, box, "x")
    y_vars, aux_y = _add_input_copy(model, roles, box, "y")
    aux += aux_y
    xa_chain, xa_bins, xa_last = _encode_net_copy(
        model, roles, net_a, bounds_a, x_vars, "xa", "ta"
    )
    ya_chain, ya_bins, ya_last = _encode_net_copy(
        model, roles, net_a, bounds_a, y_vars, "ya", "sa"
    )
    xb_chain, xb_bins, xb_last = _encode_net_copy(
        model, roles, net_b, bounds_b, x_vars, "xb", "tb"
    )
    yb_chain, yb_bins, yb_last = _encode_net_copy(
        model, roles, net_b, bounds_b, y_vars, "yb", "sb"
    )
    _add_output_equality(model, net_a.layers[-1], xa_last, ya_last)

    w_var = _role(roles, model.add_var("w", 0.0, width), "objective gap")
    w_out = net_b.layers[-1].weight
    diffs = []
    for i in range(w_out.shape[0]):
        terms = [(v, float(w_out[i, j])) for j, v in enumerate(xb_last)]
        terms += [(v, -float(w_out[i, j])) for j, v in enumerate(yb_last)]
        diffs.append((terms, 0.0))
    f_vars, fp_vars = _add_max_gap_gadget(model, roles, w_var, diffs, 2.0 * width)
    _finish_objective(model, w_var, decision_threshold)

    return EncodedProblem(
        kind="mappability",
        model=model,
        box=box,
        nets=(net_a, net_b),
        w_var=w_var,
        x_vars=x_vars,
        y_vars=y_vars,
        f_vars=f_vars,
        fp_vars=fp_vars,
        chains={"xa": xa_chain, "ya": ya_chain, "xb": xb_chain, "yb": yb_chain},
        binaries={"xa": xa_bins, "ya": ya_bins, "xb": xb_bins, "yb": yb_bins},
        aux_vars=aux,
        var_roles=roles,
        decision_threshold=decision_threshold,
    )
