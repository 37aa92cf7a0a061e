"""Certified radii by bisection over the collision models.

Each certificate answers one question at one center: up to which radius is
the map invertible (no two inputs collide), pseudo-invertible (no other
input shares the center's output), or mappable (one network's output stays
a function of the other's). A probe at radius r asks whether a gap above
``eps_inv`` is achievable; the gap is monotone in r, so bisection brackets
the boundary to ``eps_r``.

Probes run in one of two modes. "exact" solves the optimization form and
logs the true optimum. "decision" solves the feasibility form (gap >=
eps_inv with an empty objective), which branch and bound settles at the
first incumbent or by exhaustion; its log entries carry the best collision
gap actually exhibited at or below that radius, which keeps the log a
sound, monotone lower bound on the optimum curve. Decision searches start
from a Gauss-Newton collision hunt: every hunted pair is replay-checked
like a solver witness, and a checked pair inside a probed ball settles
that probe without a solve, so the solver only has to prove the
invertible side of the bisection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .bounds import InputBox
from .encoder import encode_problem1, encode_problem2, encode_problem3
from .milp import INFEASIBLE, NODE_LIMIT, OPTIMAL, TIME_LIMIT, milp_solve
from .network import ReluMlp, forward, forward_trace

EPS_INV = 1e-4
EPS_R = 1e-3
R_MAX = 10.0
WITNESS_TOL = 1e-5

KIND_INVERTIBILITY = "invertibility"
KIND_PSEUDO = "pseudo_invertibility"
KIND_MAP_AB = "mappability_ab"
KIND_MAP_BA = "mappability_ba"


class InconclusiveError(RuntimeError):
    """A probe hit a solver limit; carries the partial log and best bound."""

    def __init__(self, message, status, best_bound, probes):
        super().__init__(message)
        self.status = status
        self.best_bound = best_bound
        self.probes = list(probes)


@dataclass(frozen=True)
class Probe:
    radius: float
    p_star: float
    status: str


@dataclass(frozen=True)
class Certificate:
    kind: str
    center: np.ndarray
    radius: float
    at_cap: bool
    eps_r: float
    eps_inv: float
    witness: dict | None
    probes: tuple[Probe, ...]

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("certified radius must be nonnegative")
        has_gap = any(p.p_star > self.eps_inv for p in self.probes)
        if has_gap != (self.witness is not None):
            raise ValueError("witness must be present exactly when a probe found a gap")

    def to_dict(self) -> dict:
        witness = None
        if self.witness is not None:
            witness = {
                "x": [float(v) for v in self.witness["x"]],
                "y": [float(v) for v in self.witness["y"]],
                "gap": float(self.witness["gap"]),
            }
        return {
            "kind": self.kind,
            "center": [float(v) for v in self.center],
            "radius": float(self.radius),
            "at_cap": bool(self.at_cap),
            "eps_r": float(self.eps_r),
            "eps_inv": float(self.eps_inv),
            "witness": witness,
            "probes": [
                {"r": float(p.radius), "p_star": float(p.p_star), "status": p.status}
                for p in self.probes
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _inside(box: InputBox, x, tol) -> bool:
    d = np.abs(np.asarray(x, dtype=np.float64) - box.center)
    total = d.max(initial=0.0) if box.norm == "linf" else d.sum()
    return bool(total <= box.radius + tol)


def _dist(x, y, norm: str) -> float:
    d = np.abs(np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64))
    return float(d.max(initial=0.0) if norm == "linf" else d.sum())


def _input_gap(box: InputBox, x, y) -> float:
    return _dist(x, y, box.norm)


def _trace_jacobian(net: ReluMlp, x) -> np.ndarray:
    """Jacobian of the network at x on the activation piece containing x."""
    _, _, pattern = forward_trace(net, x)
    jac = None
    for lay, mask in zip(net.layers[:-1], pattern.layers):
        w = lay.weight if jac is None else lay.weight @ jac
        jac = np.where(mask[:, None], w, 0.0)
    last = net.layers[-1].weight
    return last.copy() if jac is None else last @ jac


def _polish_pair(eq_net: ReluMlp, x, y, wander=None):
    """Gauss-Newton drive of an approximate collision pair to an exact one.

    Residuals are piecewise linear, so the minimal-norm Newton step lands on
    the collision manifold of the current activation piece directly; a few
    extra steps absorb piece changes. Returns (x, y) with equal outputs to
    relative 1e-11, or None when the iteration strays or stalls: near-flat
    pieces with no exact collision cannot satisfy the tolerance.
    """
    x = np.asarray(x, dtype=np.float64).copy()
    y = np.asarray(y, dtype=np.float64).copy()
    n = eq_net.input_dim
    scale = 1.0 + float(np.max(np.abs(forward(eq_net, x))))
    if wander is None:
        wander = 10.0 * (1.0 + float(np.max(np.abs(x))) + float(np.max(np.abs(y))))
    x0, y0 = x.copy(), y.copy()
    for _ in range(40):
        g = forward(eq_net, x) - forward(eq_net, y)
        if float(np.max(np.abs(g), initial=0.0)) <= 1e-11 * scale:
            return x, y
        jac = np.hstack([_trace_jacobian(eq_net, x), -_trace_jacobian(eq_net, y)])
        step = np.linalg.lstsq(jac, -g, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return None
        x = x + step[:n]
        y = y + step[n:]
        if max(np.max(np.abs(x - x0)), np.max(np.abs(y - y0))) > wander:
            return None
    return None


def _polish_preimage(net: ReluMlp, x_fixed, y, wander=None):
    """Gauss-Newton drive of y toward an exact preimage of net(x_fixed);
    x_fixed never moves. Same convergence contract as the pair polish."""
    x_fixed = np.asarray(x_fixed, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).copy()
    target = forward(net, x_fixed)
    scale = 1.0 + float(np.max(np.abs(target)))
    if wander is None:
        wander = 10.0 * (1.0 + float(np.max(np.abs(x_fixed))) + float(np.max(np.abs(y))))
    y0 = y.copy()
    for _ in range(40):
        g = forward(net, y) - target
        if float(np.max(np.abs(g), initial=0.0)) <= 1e-11 * scale:
            return x_fixed.copy(), y
        step = np.linalg.lstsq(_trace_jacobian(net, y), -g, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            return None
        y = y + step
        if np.max(np.abs(y - y0)) > wander:
            return None
    return None


def _hunt_pairs(eq_net: ReluMlp, center, norm, r_max, tries=64):
    """Multi-start polish for distinct pairs with equal eq_net outputs.

    Start radii sweep the whole log range so near-center folds are found
    first. Returns (x, y) candidates ordered by the smallest ball around the
    center containing both points.
    """
    rng = np.random.default_rng(0x5EED)
    n = eq_net.input_dim
    wander = 8.0 * r_max + float(np.max(np.abs(center)))
    found = []
    for rho in np.geomspace(1e-4 * r_max, r_max, num=tries):
        x0 = center + rho * rng.uniform(-1.0, 1.0, size=n)
        y0 = center + rho * rng.uniform(-1.0, 1.0, size=n)
        res = _polish_pair(eq_net, x0, y0, wander=wander)
        if res is None:
            continue
        x, y = res
        radius = max(_dist(x, center, norm), _dist(y, center, norm))
        if 1e-9 < _dist(x, y, norm) and radius <= r_max:
            found.append((radius, x, y))
    found.sort(key=lambda t: t[0])
    return [{"x": x, "y": y} for _, x, y in found[:12]]


def _hunt_center_preimages(net: ReluMlp, center, norm, r_max, tries=64):
    """Multi-start polish for inputs other than the center sharing its
    output; same convergence contract as the pair hunt."""
    rng = np.random.default_rng(0x5EED)
    n = net.input_dim
    center = np.asarray(center, dtype=np.float64)
    wander = 8.0 * r_max + float(np.max(np.abs(center)))
    found = []
    for rho in np.geomspace(1e-4 * r_max, r_max, num=tries):
        y0 = center + rho * rng.uniform(-1.0, 1.0, size=n)
        res = _polish_preimage(net, center, y0, wander=wander)
        if res is None:
            continue
        _, y = res
        radius = _dist(y, center, norm)
        if 1e-9 < radius <= r_max:
            found.append((radius, y))
    found.sort(key=lambda t: t[0])
    return [{"x": center.copy(), "y": y} for _, y in found[:12]]


class _ProblemHooks:
    """How one certificate kind encodes, measures and replays witnesses."""

    def __init__(self, kind, encode, gap, residual, hunt):
        self.kind = kind
        self.encode = encode  # (box, threshold) -> EncodedProblem
        self.gap = gap  # (box, x, y) -> achieved gap
        self.residual = residual  # (x, y) -> output mismatch that must be ~0
        self.hunt = hunt  # (center, norm, r_max) -> candidate witness pairs


def _hooks_p1(net: ReluMlp) -> _ProblemHooks:
    return _ProblemHooks(
        KIND_INVERTIBILITY,
        lambda box, thr: encode_problem1(net, box, decision_threshold=thr),
        lambda box, x, y: _input_gap(box, x, y),
        lambda x, y: float(np.max(np.abs(forward(net, x) - forward(net, y)))),
        lambda center, norm, r_max: _hunt_pairs(net, center, norm, r_max),
    )


def _hooks_p2(net: ReluMlp) -> _ProblemHooks:
    return _ProblemHooks(
        KIND_PSEUDO,
        lambda box, thr: encode_problem2(net, box, decision_threshold=thr),
        lambda box, x, y: _input_gap(box, x, y),
        lambda x, y: float(np.max(np.abs(forward(net, x) - forward(net, y)))),
        lambda center, norm, r_max: _hunt_center_preimages(net, center, norm, r_max),
    )


def _hooks_p3(net_a: ReluMlp, net_b: ReluMlp, kind: str) -> _ProblemHooks:
    return _ProblemHooks(
        kind,
        lambda box, thr: encode_problem3(net_a, net_b, box, decision_threshold=thr),
        lambda box, x, y: float(np.max(np.abs(forward(net_b, x) - forward(net_b, y)))),
        lambda x, y: float(np.max(np.abs(forward(net_a, x) - forward(net_a, y)))),
        lambda center, norm, r_max: _hunt_pairs(net_a, center, norm, r_max),
    )


def _checked_witness(hooks: _ProblemHooks, box: InputBox, decoded) -> dict:
    x, y = decoded["x"], decoded["y"]
    tol = 1e-6 * (1.0 + box.radius)
    if not (_inside(box, x, tol) and _inside(box, y, tol)):
        raise RuntimeError("witness replay failed: point outside the box")
    residual = hooks.residual(x, y)
    if residual > WITNESS_TOL:
        raise RuntimeError(
            f"witness replay failed: output mismatch {residual:.3g} exceeds {WITNESS_TOL}"
        )
    return {"x": np.asarray(x), "y": np.asarray(y), "gap": hooks.gap(box, x, y)}


def _probe(hooks, center, norm, r, eps_inv, mode, limits, probes):
    """One bisection probe. Returns (noninvertible, p_star, witness, status).

    The decision row asks for a gap of eps_inv plus a strict margin, so
    feasibility always demonstrates p* > eps_inv with room for arithmetic
    noise; the margin misclassifies only gaps within 1e-6 of the threshold,
    far inside the eps_r radius tolerance.
    """
    box = InputBox(center, r, norm=norm)
    threshold = None if mode == "exact" else eps_inv + 1e-6
    enc = hooks.encode(box, threshold)
    sol = milp_solve(enc.model, **limits)
    if sol.status in (NODE_LIMIT, TIME_LIMIT):
        raise InconclusiveError(
            f"probe at radius {r:g} stopped with {sol.status} (best bound {sol.best_bound:g})",
            sol.status,
            sol.best_bound,
            probes,
        )
    if mode == "exact":
        if sol.status != OPTIMAL:
            raise RuntimeError(f"probe at radius {r:g} returned {sol.status}")
        p_star = float(sol.objective)
        if p_star > eps_inv:
            return True, p_star, _checked_witness(hooks, box, enc.decode(sol.assignment)), sol.status
        return False, p_star, None, sol.status
    if sol.status == OPTIMAL:
        witness = _checked_witness(hooks, box, enc.decode(sol.assignment))
        if witness["gap"] <= eps_inv:
            raise RuntimeError(
                f"witness replay failed: gap {witness['gap']:.3g} does not "
                f"clear the decision threshold {eps_inv:g}"
            )
        return True, witness["gap"], witness, sol.status
    if sol.status == INFEASIBLE:
        return False, 0.0, None, sol.status
    raise RuntimeError(f"probe at radius {r:g} returned {sol.status}")


def _finalize_log(probes, mode):
    """Exact logs must already be monotone; decision logs are lifted to the
    running best gap over nested balls (every entry stays a true bound)."""
    entries = [list(p) for p in probes]
    order = sorted(range(len(entries)), key=lambda i: entries[i][0])
    diag = ", ".join(f"({e[0]:g}, {e[1]:.3g})" for e in entries)
    if mode == "exact":
        prev = -math.inf
        for i in order:
            if entries[i][1] < prev - 1e-6:
                raise RuntimeError(
                    "probe log lost monotonicity; solver tolerances are suspect: " + diag
                )
            prev = max(prev, entries[i][1])
    else:
        # Decision entries are 0 (infeasible) or a witness gap. A zero above
        # a witnessed radius contradicts ball nesting and must not be masked
        # by the running-max lift.
        best = 0.0
        for i in order:
            if entries[i][1] == 0.0 and best > 0.0:
                raise RuntimeError(
                    "probe log lost monotonicity; solver tolerances are suspect: " + diag
                )
            best = max(best, entries[i][1])
            entries[i][1] = best
    return tuple(Probe(e[0], e[1], e[2]) for e in entries)


def _bisect_radius(hooks, center, r_max, eps_r, eps_inv, norm, mode, limits):
    center = np.asarray(center, dtype=np.float64).reshape(-1)
    if not (r_max > 0):
        raise ValueError("r_max must be positive")
    if not (eps_r > 0):
        raise ValueError("eps_r must be positive")
    raw = []
    witness = None
    pool = []  # witnesses from hunts and solved probes, reusable at any radius

    if mode == "decision":
        # Replay-checked pairs from the heuristic hunt answer every probe
        # whose ball contains them, leaving the solver only the proofs of
        # invertibility below the boundary.
        cap_box = InputBox(center, r_max, norm=norm)
        for decoded in hooks.hunt(center, norm, r_max):
            try:
                wit = _checked_witness(hooks, cap_box, decoded)
            except RuntimeError:
                continue
            if wit["gap"] > eps_inv:
                pool.append(wit)

    def cached(r):
        # A known collision pair inside the probed ball is a feasible point
        # of that probe's decision model, so the probe needs no solve.
        ball = InputBox(center, r, norm=norm)
        tol = 1e-6 * (1.0 + r)
        for wit in pool:
            if wit["gap"] > eps_inv and _inside(ball, wit["x"], tol) and _inside(ball, wit["y"], tol):
                return wit
        return None

    def probe(r):
        nonlocal witness
        if mode == "decision":
            wit = cached(r)
            if wit is not None:
                raw.append((r, wit["gap"], OPTIMAL))
                if witness is None:
                    witness = wit
                return True
        noninv, p_star, wit, status = _probe(
            hooks, center, norm, r, eps_inv, mode, limits, raw
        )
        raw.append((r, p_star, status))
        if noninv:
            pool.append(wit)
            if witness is None:
                witness = wit
        return noninv

    if not probe(r_max):
        radius, at_cap = r_max, True
    else:
        lo, hi = 0.0, r_max
        while hi - lo > eps_r:
            if probe(0.5 * (lo + hi)):
                hi = 0.5 * (lo + hi)
            else:
                lo = 0.5 * (lo + hi)
        radius, at_cap = lo, False
    return Certificate(
        kind=hooks.kind,
        center=center,
        radius=radius,
        at_cap=at_cap,
        eps_r=eps_r,
        eps_inv=eps_inv,
        witness=witness,
        probes=_finalize_log(raw, mode),
    )


def noninvertibility_gap(net: ReluMlp, box: InputBox, node_limit=None, time_limit=None):
    """Exact collision gap p* on the box, with a replay-checked witness when
    the gap exceeds EPS_INV (otherwise the map counts as invertible there)."""
    enc = encode_problem1(net, box)
    sol = milp_solve(enc.model, node_limit=node_limit, time_limit=time_limit)
    if sol.status in (NODE_LIMIT, TIME_LIMIT):
        raise InconclusiveError(
            f"solver stopped with {sol.status} (best bound {sol.best_bound:g})",
            sol.status,
            sol.best_bound,
            [],
        )
    if sol.status != OPTIMAL:
        raise RuntimeError(f"collision model returned {sol.status}")
    p_star = float(sol.objective)
    if p_star <= EPS_INV:
        return p_star, None
    hooks = _hooks_p1(net)
    return p_star, _checked_witness(hooks, box, enc.decode(sol.assignment))


def largest_invertible_radius(
    net: ReluMlp,
    x_c,
    r_max: float = R_MAX,
    eps_r: float = EPS_R,
    eps_inv: float = EPS_INV,
    norm: str = "linf",
    probe_mode: str = "decision",
    node_limit=None,
    time_limit=None,
) -> Certificate:
    """Largest probed radius around x_c on which no collision gap above
    eps_inv exists. Probes r_max first: an invertible cap short-circuits the
    search and flags the certificate at-cap."""
    return _bisect_radius(
        _hooks_p1(net),
        x_c,
        r_max,
        eps_r,
        eps_inv,
        norm,
        probe_mode,
        {"node_limit": node_limit, "time_limit": time_limit},
    )


def largest_pseudo_radius(
    net: ReluMlp,
    x_c,
    r_max: float = R_MAX,
    eps_r: float = EPS_R,
    eps_inv: float = EPS_INV,
    norm: str = "linf",
    probe_mode: str = "decision",
    node_limit=None,
    time_limit=None,
    invertibility_certificate: Certificate | None = None,
) -> Certificate:
    """Largest probed radius on which no other input shares the center's
    output. When the paired invertibility certificate is supplied, checks
    the containment R >= r (a collision-free ball cannot exclude the center
    preimage later than the collision search)."""
    cert = _bisect_radius(
        _hooks_p2(net),
        x_c,
        r_max,
        eps_r,
        eps_inv,
        norm,
        probe_mode,
        {"node_limit": node_limit, "time_limit": time_limit},
    )
    paired = invertibility_certificate
    if paired is not None:
        if not np.array_equal(paired.center, cert.center):
            raise ValueError("paired certificate has a different center")
        if cert.radius < paired.radius - eps_r - 1e-9:
            raise RuntimeError(
                f"pseudo radius {cert.radius:g} fell below the invertibility "
                f"radius {paired.radius:g}"
            )
    return cert


def mappability_radii(
    net_a: ReluMlp,
    net_b: ReluMlp,
    x_c,
    r_max: float = R_MAX,
    eps_r: float = EPS_R,
    eps_inv: float = EPS_INV,
    norm: str = "linf",
    probe_mode: str = "decision",
    node_limit=None,
    time_limit=None,
) -> tuple[Certificate, Certificate]:
    """Certified radii for both mapping directions: on the first certificate
    net_b's output is a function of net_a's output (gap p12), on the second
    the roles are swapped (p21)."""
    limits = {"node_limit": node_limit, "time_limit": time_limit}
    ab = _bisect_radius(
        _hooks_p3(net_a, net_b, KIND_MAP_AB), x_c, r_max, eps_r, eps_inv, norm, probe_mode, limits
    )
    ba = _bisect_radius(
        _hooks_p3(net_b, net_a, KIND_MAP_BA), x_c, r_max, eps_r, eps_inv, norm, probe_mode, limits
    )
    return ab, ba
