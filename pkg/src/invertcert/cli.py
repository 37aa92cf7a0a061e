"""Command-line surface for every pipeline in the package.

One subcommand per task: network generation and transforms, certification,
dynamics, oracles, benchmarks, LP dumps, and plain-SVG plots. Results go to
--out when given, else stdout. Exit codes: 0 success, 1 domain error
(bad data, solver limits, oracle disagreement), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .bounds import InputBox
from .certify import (
    EPS_INV,
    EPS_R,
    R_MAX,
    InconclusiveError,
    largest_invertible_radius,
    largest_pseudo_radius,
    mappability_radii,
)
from .dynamics import (
    BrusselatorEuler,
    HistoryQuery,
    bilipschitz_estimate,
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
    vdp_flow,
)
from .encoder import encode_problem1, encode_problem2, encode_problem3
from .milp import OPTIMAL, milp_solve, model_to_lp_text
from .network import (
    ReluMlp,
    ResidualNet,
    embed_parameter,
    flatten_residual,
    forward,
    load_network,
    prune_magnitude,
    random_network,
    save_network,
)
from .oracle import pattern_enumeration_optimum

ORACLE_TOL = 1e-6


# ---- small helpers ----


def _parse_floats(text: str, what: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError as exc:
        raise ValueError(f"{what} must be comma-separated numbers: {exc}") from exc
    if n is not None and len(vals) != n:
        raise ValueError(f"{what} must hold {n} values, got {len(vals)}")
    return vals


def _parse_ints(text: str, what: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",")]
    except ValueError as exc:
        raise ValueError(f"{what} must be comma-separated integers: {exc}") from exc


def _parse_region(text: str):
    vals = _parse_floats(text, "--region")
    if len(vals) % 2 != 0 or not vals:
        raise ValueError("--region must hold an even number of values (lo,hi per axis)")
    region = [(vals[i], vals[i + 1]) for i in range(0, len(vals), 2)]
    for lo, hi in region:
        if not lo < hi:
            raise ValueError(f"--region interval [{lo}, {hi}] is empty")
    return region


def _write_out(out: str | None, text: str) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_net(path: str):
    return load_network(Path(path).read_bytes())


def _load_mlp(path: str) -> ReluMlp:
    net = _load_net(path)
    if isinstance(net, ResidualNet):
        net = flatten_residual(net)
    return net


def _num_doc(v):
    if isinstance(v, complex):
        return {"re": v.real, "im": v.imag}
    return float(v)


def _brusselator_from(args) -> BrusselatorEuler:
    return BrusselatorEuler(a=args.a, b=args.b, tau=args.tau)


def _certify_kwargs(args) -> dict:
    return {
        "r_max": args.rmax,
        "eps_r": args.eps,
        "eps_inv": args.eps_inv,
        "norm": args.norm,
        "probe_mode": args.mode,
        "node_limit": args.node_limit,
        "time_limit": args.time_limit,
    }


# ---- subcommand handlers ----


def _cmd_gen_net(args) -> int:
    net = random_network(_parse_ints(args.dims, "--dims"), weight_scale=args.scale, seed=args.seed)
    _write_out(args.out, save_network(net).decode("utf-8"))
    return 0


def _cmd_prune(args) -> int:
    net = _load_mlp(args.net)
    _write_out(args.out, save_network(prune_magnitude(net, args.sparsity, seed=args.seed)).decode("utf-8"))
    return 0


def _cmd_flatten(args) -> int:
    net = _load_net(args.net)
    if not isinstance(net, ResidualNet):
        raise ValueError("flatten expects a residual network document")
    _write_out(args.out, save_network(flatten_residual(net)).decode("utf-8"))
    return 0


def _cmd_embed_param(args) -> int:
    net = _load_mlp(args.net)
    _write_out(args.out, save_network(embed_parameter(net, args.value)).decode("utf-8"))
    return 0


def _cmd_certify(args) -> int:
    net = _load_mlp(args.net)
    center = _parse_floats(args.center, "--center", net.input_dim)
    cert = largest_invertible_radius(net, center, **_certify_kwargs(args))
    _write_out(args.out, cert.to_json())
    return 0


def _cmd_pseudo_certify(args) -> int:
    net = _load_mlp(args.net)
    center = _parse_floats(args.center, "--center", net.input_dim)
    cert = largest_pseudo_radius(net, center, **_certify_kwargs(args))
    _write_out(args.out, cert.to_json())
    return 0


def _cmd_map_cert(args) -> int:
    net_a = _load_mlp(args.net_a)
    net_b = _load_mlp(args.net_b)
    center = _parse_floats(args.center, "--center", net_a.input_dim)
    ab, ba = mappability_radii(net_a, net_b, center, **_certify_kwargs(args))
    _write_out(args.out, json.dumps({"ab": ab.to_dict(), "ba": ba.to_dict()}, indent=2))
    return 0


def _cmd_dyn_step(args) -> int:
    x, y = _parse_floats(args.point, "--point", 2)
    nx, ny = brusselator_step(_brusselator_from(args), x, y)
    _write_out(args.out, json.dumps({"x": nx, "y": ny}))
    return 0


def _cmd_dyn_preimage(args) -> int:
    x, y = _parse_floats(args.target, "--target", 2)
    pres = brusselator_preimages(_brusselator_from(args), x, y)
    _write_out(args.out, json.dumps({"preimages": [[px, py] for px, py in pres]}))
    return 0


def _cmd_dyn_data(args) -> int:
    region = _parse_region(args.region)
    if len(region) != 2:
        raise ValueError("--region must describe a planar rectangle (four values)")
    if args.map == "brusselator":
        source = brusselator_map(_brusselator_from(args))
    else:
        source = lambda x, y: tuple(vdp_flow((x, y), args.mu, args.t, steps=args.steps))
    pairs = generate_dataset(source, region, args.count, seed=args.seed)
    _write_out(args.out, dataset_csv(pairs))
    return 0


def _cmd_j0_grid(args) -> int:
    region = _parse_region(args.region)
    if len(region) != 2:
        raise ValueError("--region must describe a planar rectangle (four values)")
    if args.net:
        pmap = relu_map(_load_mlp(args.net))
    else:
        pmap = brusselator_map(_brusselator_from(args))
    nx, ny = _parse_ints(args.resolution, "--resolution")
    grid = j0_grid(pmap, region, (nx, ny))
    _write_out(args.out, j0_csv(grid))
    if args.cells_out:
        Path(args.cells_out).write_text(j0_cells_json(grid), encoding="utf-8")
    return 0


def _cmd_history(args) -> int:
    query = HistoryQuery(
        case=args.case,
        given=tuple(_parse_floats(args.given, "--given", 3)),
        a=args.a,
        b=args.b,
    )
    doc = [
        {
            "real": e.real,
            "x_n": _num_doc(e.x_n),
            "y_n": _num_doc(e.y_n),
            "x_next": _num_doc(e.x_next),
            "y_next": _num_doc(e.y_next),
            "tau": _num_doc(e.tau),
        }
        for e in history_complete(query)
    ]
    _write_out(args.out, json.dumps(doc, indent=2))
    return 0


def _cmd_bilip(args) -> int:
    region = _parse_region(args.region)
    if args.net:
        net = _load_mlp(args.net)
        if len(region) != net.input_dim:
            raise ValueError(
                f"--region lists {len(region)} axes but the network takes {net.input_dim}"
            )
        target = lambda *p: forward(net, p)
    else:
        if len(region) != 2:
            raise ValueError("--region must describe a planar rectangle (four values)")
        target = brusselator_map(_brusselator_from(args))
    upper, lower = bilipschitz_estimate(target, region, args.samples, seed=args.seed)
    _write_out(args.out, json.dumps({"expansion": upper, "contraction": lower}))
    return 0


def _oracle_instance(name: str, seed: int):
    """Build (encoded model, exact enumeration optimum) for a named instance."""
    if name == "p1-1-4-1":
        net = random_network([1, 4, 1], seed=seed)
        box = InputBox(np.zeros(1), 1.0)
        return encode_problem1(net, box), pattern_enumeration_optimum(net, box, "p1")
    if name == "p2-1-5-1":
        net = random_network([1, 5, 1], seed=seed)
        box = InputBox(np.zeros(1), 1.5)
        return encode_problem2(net, box), pattern_enumeration_optimum(net, box, "p2")
    if name == "p3-2-3-2":
        net_a = random_network([2, 3, 2], seed=seed)
        net_b = random_network([2, 3, 2], seed=seed + 50)
        box = InputBox(np.zeros(2), 0.5)
        return (
            encode_problem3(net_a, net_b, box),
            pattern_enumeration_optimum(net_a, box, "p3", net_b=net_b),
        )
    raise ValueError(
        f"unknown instance {name!r}; choose from p1-1-4-1, p2-1-5-1, p3-2-3-2"
    )


def _cmd_oracle_check(args) -> int:
    enc, exact = _oracle_instance(args.instance, args.seed)
    sol = milp_solve(enc.model, node_limit=args.node_limit, time_limit=args.time_limit)
    if sol.status != OPTIMAL:
        raise RuntimeError(f"solver finished with status {sol.status}")
    diff = abs(float(sol.objective) - exact)
    _write_out(
        args.out,
        json.dumps(
            {
                "instance": args.instance,
                "seed": args.seed,
                "milp": float(sol.objective),
                "oracle": float(exact),
                "difference": diff,
                "tolerance": ORACLE_TOL,
            },
            indent=2,
        ),
    )
    return 0 if diff <= ORACLE_TOL else 1


def _cmd_bench(args) -> int:
    lines = ["n0,n1,r,rows,cols,binaries,median_seconds,status"]
    for n0 in _parse_ints(args.n0, "--n0"):
        for n1 in _parse_ints(args.n1, "--n1"):
            net = random_network([n0, n1, n0], seed=args.seed)
            box = InputBox(np.zeros(n0), args.r)
            enc = encode_problem1(net, box)
            times, status = [], OPTIMAL
            for _ in range(args.repeats):
                t0 = time.perf_counter()
                sol = milp_solve(enc.model, time_limit=args.time_limit)
                times.append(time.perf_counter() - t0)
                status = sol.status
            lines.append(
                f"{n0},{n1},{args.r},{enc.model.num_rows},{enc.model.num_vars},"
                f"{enc.model.num_binaries},{statistics.median(times):.6f},{status}"
            )
    _write_out(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_dump_lp(args) -> int:
    net = _load_mlp(args.net)
    center = _parse_floats(args.center, "--center", net.input_dim)
    box = InputBox(center, args.radius, norm=args.norm)
    if args.problem == "p1":
        enc = encode_problem1(net, box, decision_threshold=args.decision_threshold)
    elif args.problem == "p2":
        enc = encode_problem2(net, box, decision_threshold=args.decision_threshold)
    else:
        if not args.net_b:
            raise ValueError("--problem p3 needs --net-b")
        enc = encode_problem3(
            net, _load_mlp(args.net_b), box, decision_threshold=args.decision_threshold
        )
    _write_out(args.out, model_to_lp_text(enc.model))
    return 0


# ---- plotting ----


def _read_csv_columns(path: str, x_col: str, y_col: str):
    lines = Path(path).read_text(encoding="utf-8").strip().split("\n")
    if not lines:
        raise ValueError("empty CSV file")
    header = [h.strip() for h in lines[0].split(",")]
    try:
        xi, yi = header.index(x_col), header.index(y_col)
    except ValueError as exc:
        raise ValueError(f"column not found in {header}: {exc}") from exc
    xs, ys = [], []
    for line in lines[1:]:
        parts = line.split(",")
        x, y = float(parts[xi]), float(parts[yi])
        if math.isfinite(x) and math.isfinite(y):
            xs.append(x)
            ys.append(y)
    if not xs:
        raise ValueError("no data rows to plot")
    return xs, ys


def _svg_plot(xs, ys, kind: str, x_label: str, y_label: str) -> str:
    width, height = 640, 480
    ml, mr, mt, mb = 70, 20, 20, 50
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def px(x):
        return ml + (x - x0) / (x1 - x0) * (width - ml - mr)

    def py(y):
        return height - mb - (y - y0) / (y1 - y0) * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>',
    ]
    fmt = "{:.6g}".format
    parts += [
        f'<text x="{ml}" y="{height - mb + 18}" font-size="12" text-anchor="middle">{fmt(x0)}</text>',
        f'<text x="{width - mr}" y="{height - mb + 18}" font-size="12" text-anchor="middle">{fmt(x1)}</text>',
        f'<text x="{ml - 8}" y="{height - mb}" font-size="12" text-anchor="end">{fmt(y0)}</text>',
        f'<text x="{ml - 8}" y="{mt + 10}" font-size="12" text-anchor="end">{fmt(y1)}</text>',
        f'<text x="{(ml + width - mr) / 2}" y="{height - 12}" font-size="13" text-anchor="middle">{x_label}</text>',
        f'<text x="16" y="{(mt + height - mb) / 2}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {(mt + height - mb) / 2})">{y_label}</text>',
    ]
    if kind == "line":
        order = np.argsort(xs, kind="stable")
        pts = " ".join(f"{px(xs[i]):.2f},{py(ys[i]):.2f}" for i in order)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-width="1.5"/>')
    else:
        parts += [
            f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="steelblue"/>'
            for x, y in zip(xs, ys)
        ]
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _cmd_plot(args) -> int:
    xs, ys = _read_csv_columns(args.csv, args.x, args.y)
    _write_out(args.out, _svg_plot(xs, ys, args.kind, args.x, args.y))
    return 0


# ---- parser ----


def _add_out(sp):
    sp.add_argument("--out", help="output path (default stdout)")


def _add_brusselator(sp):
    sp.add_argument("--a", type=float, default=1.0, help="reaction parameter a")
    sp.add_argument("--b", type=float, default=2.0, help="reaction parameter b")
    sp.add_argument("--tau", type=float, default=0.15, help="Euler timestep")


def _add_certify_common(sp):
    sp.add_argument("--center", required=True, help="ball center, comma separated")
    sp.add_argument("--rmax", type=float, default=R_MAX, help="search cap")
    sp.add_argument("--eps", type=float, default=EPS_R, help="radius tolerance")
    sp.add_argument("--eps-inv", type=float, default=EPS_INV, help="gap threshold")
    sp.add_argument("--norm", choices=("linf", "l1"), default="linf")
    sp.add_argument("--mode", choices=("decision", "exact"), default="decision")
    sp.add_argument("--node-limit", type=int, default=None)
    sp.add_argument("--time-limit", type=float, default=None)
    _add_out(sp)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invertcert",
        description="Certified local invertibility of ReLU networks and "
        "closed-form dynamics tooling.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=1,
        help="accepted for compatibility; all solvers run single-process",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    sp = sub.add_parser("gen-net", help="sample a random network and write its JSON")
    sp.add_argument("--dims", required=True, help="layer widths, e.g. 1,10,10,1")
    sp.add_argument("--scale", type=float, default=None, help="uniform weight scale")
    sp.add_argument("--seed", type=int, default=0)
    _add_out(sp)
    sp.set_defaults(handler=_cmd_gen_net)

    sp = sub.add_parser("prune", help="zero the smallest-magnitude weights")
    sp.add_argument("--net", required=True)
    sp.add_argument("--sparsity", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    _add_out(sp)
    sp.set_defaults(handler=_cmd_prune)

    sp = sub.add_parser("flatten", help="rewrite a residual network as a plain MLP")
    sp.add_argument("--net", required=True)
    _add_out(sp)
    sp.set_defaults(handler=_cmd_flatten)

    sp = sub.add_parser("embed-param", help="fix the last input coordinate to a constant")
    sp.add_argument("--net", required=True)
    sp.add_argument("--value", type=float, required=True)
    _add_out(sp)
    sp.set_defaults(handler=_cmd_embed_param)

    sp = sub.add_parser("certify", help="largest ball with no output collisions")
    sp.add_argument("--net", required=True)
    _add_certify_common(sp)
    sp.set_defaults(handler=_cmd_certify)

    sp = sub.add_parser(
        "pseudo-certify", help="largest ball where only the center hits its output"
    )
    sp.add_argument("--net", required=True)
    _add_certify_common(sp)
    sp.set_defaults(handler=_cmd_pseudo_certify)

    sp = sub.add_parser("map-cert", help="certified radii for both mapping directions")
    sp.add_argument("--net-a", required=True)
    sp.add_argument("--net-b", required=True)
    _add_certify_common(sp)
    sp.set_defaults(handler=_cmd_map_cert)

    sp = sub.add_parser("dyn-step", help="one Euler step of the Brusselator")
    _add_brusselator(sp)
    sp.add_argument("--point", required=True, help="x,y")
    _add_out(sp)
    sp.set_defaults(handler=_cmd_dyn_step)

    sp = sub.add_parser("dyn-preimage", help="all real preimages of a target point")
    _add_brusselator(sp)
    sp.add_argument("--target", required=True, help="x,y")
    _add_out(sp)
    sp.set_defaults(handler=_cmd_dyn_preimage)

    sp = sub.add_parser("dyn-data", help="sample (input, image) pairs as CSV")
    sp.add_argument("--map", choices=("brusselator", "vdp"), default="brusselator")
    _add_brusselator(sp)
    sp.add_argument("--mu", type=float, default=1.0, help="Van der Pol damping")
    sp.add_argument("--t", type=float, default=0.2, help="Van der Pol flow duration")
    sp.add_argument("--steps", type=int, default=200, help="Runge-Kutta steps")
    sp.add_argument("--region", required=True, help="xlo,xhi,ylo,yhi")
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    _add_out(sp)
    sp.set_defaults(handler=_cmd_dyn_data)

    sp = sub.add_parser("j0-grid", help="Jacobian determinant grid and flagged cells")
    sp.add_argument("--net", help="planar network JSON (default: Brusselator map)")
    _add_brusselator(sp)
    sp.add_argument("--region", required=True, help="xlo,xhi,ylo,yhi")
    sp.add_argument("--resolution", default="41,41", help="nx,ny nodes")
    sp.add_argument("--cells-out", help="path for the flagged-cell JSON list")
    _add_out(sp)
    sp.set_defaults(handler=_cmd_j0_grid)

    sp = sub.add_parser("history", help="complete a partially observed step")
    sp.add_argument("--case", type=int, required=True, help="case id 1..10")
    sp.add_argument("--a", type=float, required=True)
    sp.add_argument("--b", type=float, required=True)
    sp.add_argument("--given", required=True, help="the three given values, comma separated")
    _add_out(sp)
    sp.set_defaults(handler=_cmd_history)

    sp = sub.add_parser("bilip", help="sampled expansion and contraction extremes")
    sp.add_argument("--net", help="network JSON (default: Brusselator map)")
    _add_brusselator(sp)
    sp.add_argument("--region", required=True, help="lo,hi per axis")
    sp.add_argument("--samples", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    _add_out(sp)
    sp.set_defaults(handler=_cmd_bilip)

    sp = sub.add_parser("oracle-check", help="compare the solver against enumeration")
    sp.add_argument("--instance", required=True, help="p1-1-4-1, p2-1-5-1, or p3-2-3-2")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--node-limit", type=int, default=None)
    sp.add_argument("--time-limit", type=float, default=None)
    _add_out(sp)
    sp.set_defaults(handler=_cmd_oracle_check)

    sp = sub.add_parser("bench", help="timing sweep over single-hidden-layer sizes")
    sp.add_argument("--n0", default="1,2", help="input widths, comma separated")
    sp.add_argument("--n1", default="4,8", help="hidden widths, comma separated")
    sp.add_argument("--r", type=float, default=1.0, help="ball radius")
    sp.add_argument("--repeats", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--time-limit", type=float, default=None, help="per-run cap in seconds")
    _add_out(sp)
    sp.set_defaults(handler=_cmd_bench)

    sp = sub.add_parser("dump-lp", help="write the encoded model as LP text")
    sp.add_argument("--net", required=True)
    sp.add_argument("--net-b", help="second network for --problem p3")
    sp.add_argument("--center", required=True)
    sp.add_argument("--radius", type=float, required=True)
    sp.add_argument("--norm", choices=("linf", "l1"), default="linf")
    sp.add_argument("--problem", choices=("p1", "p2", "p3"), default="p1")
    sp.add_argument("--decision-threshold", type=float, default=None)
    _add_out(sp)
    sp.set_defaults(handler=_cmd_dump_lp)

    sp = sub.add_parser("plot", help="CSV columns to an SVG scatter or line plot")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--x", required=True, help="x column name")
    sp.add_argument("--y", required=True, help="y column name")
    sp.add_argument("--kind", choices=("scatter", "line"), default="scatter")
    _add_out(sp)
    sp.set_defaults(handler=_cmd_plot)

    return parser


def _absorb_negative_values(argv):
    """Join option/value pairs whose value opens with a minus sign.

    argparse reads a bare "-1,1,-1,1" as an option name; the joined form
    "--region=-1,1,-1,1" is unambiguous, so rewrite pairs into it.
    """
    out, skip = [], False
    for i, tok in enumerate(argv):
        if skip:
            skip = False
            continue
        nxt = argv[i + 1] if i + 1 < len(argv) else None
        if tok.startswith("--") and "=" not in tok and nxt and re.match(r"-(\d|\.\d)", nxt):
            out.append(f"{tok}={nxt}")
            skip = True
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = _build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_absorb_negative_values(argv))
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if args.command is None:
        parser.print_help()
        return 2
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.handler(args)
    except InconclusiveError as exc:
        print(f"inconclusive: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
