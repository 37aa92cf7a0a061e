"""Planar discrete-time dynamics: Euler maps, closed-form preimages, and
completion of partially observed histories.

The central object is the forward-Euler step of the Brusselator reaction
model. One step relates five quantities (x_n, y_n, x_next, y_next, tau)
through two polynomial equations, so fixing any three of them pins the other
two down to the roots of a cubic or quadratic. Everything here is exact
algebra plus polynomial root finding; the module also provides Jacobian
sign-change detection on grids, a Runge-Kutta reference flow, dataset
sampling, and a sampled bi-Lipschitz estimate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .network import ReluMlp, forward, forward_trace

# A polished root counts as real when its imaginary part is this small
# relative to the real part.
REAL_IMAG_TOL = 1e-9

# Internal consistency gate: every real preimage or completion must step
# forward onto the data it was derived from.
_ROUNDTRIP_TOL = 1e-9


# ---- domain types ----


def _finite(value, name: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite")
    return value


@dataclass(frozen=True)
class BrusselatorEuler:
    """One forward-Euler step of the planar Brusselator with parameters a, b.

    tau is the timestep. tau = 0 degenerates the step to the identity; the
    preimage routines additionally reject tau = 1, where the cubic loses its
    leading coefficient.
    """

    a: float
    b: float
    tau: float

    def __post_init__(self):
        for name in ("a", "b", "tau"):
            object.__setattr__(self, name, _finite(getattr(self, name), name))


@dataclass(frozen=True)
class ScalarQuadraticEuler:
    """Euler step x -> x + tau (x^2 + b x + c) on the line, tau > 0."""

    b: float
    c: float
    tau: float

    def __post_init__(self):
        for name in ("b", "c", "tau"):
            object.__setattr__(self, name, _finite(getattr(self, name), name))
        if not self.tau > 0.0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class PlanarMap:
    """A map of the plane bundled with its Jacobian.

    evaluator: (x, y) -> (x', y'); jacobian: (x, y) -> 2x2 array. Euler maps
    carry their analytic Jacobian; ReLU networks use the weight product of
    the active pattern, resolving kink points to the inactive side.
    """

    evaluator: Callable[[float, float], tuple[float, float]]
    jacobian: Callable[[float, float], np.ndarray]


_CASE_GIVEN = {
    1: ("x_n", "y_n", "tau"),
    2: ("x_next", "y_next", "tau"),
    3: ("x_n", "x_next", "tau"),
    4: ("y_n", "y_next", "tau"),
    5: ("x_n", "y_next", "tau"),
    6: ("y_n", "x_next", "tau"),
    7: ("x_n", "y_n", "x_next"),
    8: ("x_n", "y_n", "y_next"),
    9: ("y_n", "x_next", "y_next"),
    10: ("x_n", "x_next", "y_next"),
}


@dataclass(frozen=True)
class HistoryQuery:
    """Three known step quantities plus parameters; case selects which three.

    The step couples five quantities, so giving three of them leaves a
    solvable system for the other two. Case numbers and the order of the
    ``given`` triple:

      1  (x_n, y_n, tau)          forward step
      2  (x_next, y_next, tau)    full preimage (cubic in x_n)
      3  (x_n, x_next, tau)       observe x history, infer y (unique)
      4  (y_n, y_next, tau)       observe y history, infer x (quadratic)
      5  (x_n, y_next, tau)       mixed observations (unique)
      6  (y_n, x_next, tau)       mixed observations (quadratic)
      7  (x_n, y_n, x_next)       unknown timestep (unique)
      8  (x_n, y_n, y_next)       unknown timestep (unique)
      9  (y_n, x_next, y_next)    unknown timestep (cubic in x_n)
      10 (x_n, x_next, y_next)    unknown timestep (quadratic in tau)
    """

    case: int
    given: tuple[float, float, float]
    a: float
    b: float

    def __post_init__(self):
        if self.case not in _CASE_GIVEN:
            raise ValueError(f"case must be 1..10, got {self.case}")
        given = tuple(self.given)
        if len(given) != 3:
            raise ValueError(f"given must hold three values, got {len(given)}")
        given = tuple(_finite(v, f"given[{i}]") for i, v in enumerate(given))
        object.__setattr__(self, "given", given)
        for name in ("a", "b"):
            object.__setattr__(self, name, _finite(getattr(self, name), name))

    @property
    def given_names(self) -> tuple[str, str, str]:
        return _CASE_GIVEN[self.case]


@dataclass(frozen=True)
class HistoryCompletion:
    """One assignment of all five step quantities consistent with a query.

    ``real`` is True when every value is a float and the forward step
    reproduces the given data. Complex root pairs are returned with
    ``real`` False and the complex values kept for diagnostics; they make
    no reproduction claim.
    """

    x_n: float | complex
    y_n: float | complex
    x_next: float | complex
    y_next: float | complex
    tau: float | complex
    real: bool


# ---- Brusselator step, Jacobian, preimages ----


def brusselator_step(m: BrusselatorEuler, x: float, y: float) -> tuple[float, float]:
    """Advance (x, y) one Euler step."""
    x_rate = m.a + x * x * y - (m.b + 1.0) * x
    y_rate = m.b * x - x * x * y
    return (x + m.tau * x_rate, y + m.tau * y_rate)


def brusselator_jacobian(m: BrusselatorEuler, x: float, y: float) -> np.ndarray:
    """Jacobian of the Euler step at (x, y)."""
    return np.array(
        [
            [1.0 + m.tau * (2.0 * x * y - (m.b + 1.0)), m.tau * x * x],
            [m.tau * (m.b - 2.0 * x * y), 1.0 - m.tau * x * x],
        ]
    )


def brusselator_map(m: BrusselatorEuler) -> PlanarMap:
    """Bundle the step and its analytic Jacobian as a PlanarMap."""
    return PlanarMap(
        evaluator=lambda x, y: brusselator_step(m, x, y),
        jacobian=lambda x, y: brusselator_jacobian(m, x, y),
    )


def relu_map(net: ReluMlp) -> PlanarMap:
    """PlanarMap view of a 2-in 2-out ReLU network.

    The Jacobian is the product of the layer weights masked by the
    activation pattern at the point. A unit sitting exactly on its kink is
    treated as inactive, matching the trace convention, so the value is
    one-sided there; sign-change detection never relies on the kink value
    itself.
    """
    if net.input_dim != 2 or net.output_dim != 2:
        raise ValueError(
            f"planar view needs a 2->2 network, got {net.input_dim}->{net.output_dim}"
        )

    def jac(x, y):
        _, _, pattern = forward_trace(net, (x, y))
        jmat = net.layers[0].weight
        for mask, lay in zip(pattern, net.layers[1:]):
            jmat = lay.weight @ (np.where(mask, 1.0, 0.0)[:, None] * jmat)
        return jmat

    def run(x, y):
        out = forward(net, (x, y))
        return (float(out[0]), float(out[1]))

    return PlanarMap(evaluator=run, jacobian=jac)


def _newton_polish(coeffs: np.ndarray, z: complex) -> complex:
    deriv = np.polyval(np.polyder(coeffs), z)
    if deriv == 0:
        return z
    return z - np.polyval(coeffs, z) / deriv


def _cubic_roots(c3, c2, c1, c0):
    """Roots of the cubic, split into (real, complex).

    Eigenvalues of the companion matrix of the monic normalization, then one
    Newton step per root; a root is accepted as real when
    |Im| <= REAL_IMAG_TOL (1 + |Re|). The leading coefficient must be
    nonzero; callers enforce their own nondegeneracy first.
    """
    coeffs = np.array([c3, c2, c1, c0], dtype=np.float64)
    real, cplx = [], []
    for z in np.roots(coeffs):
        z = _newton_polish(coeffs, complex(z))
        if abs(z.imag) <= REAL_IMAG_TOL * (1.0 + abs(z.real)):
            real.append(float(z.real))
        else:
            cplx.append(z)
    real.sort()
    return real, cplx


def _quadratic_roots(a2, a1, a0):
    """Roots of a2 z^2 + a1 z + a0 (a2 nonzero), split into (real, complex).

    Real roots use the cancellation-free form q = -(a1 + sign(a1) sqrt(D))/2
    with roots q/a2 and a0/q; a zero discriminant yields one root.
    """
    disc = a1 * a1 - 4.0 * a2 * a0
    if disc < 0.0:
        re = -a1 / (2.0 * a2)
        im = math.sqrt(-disc) / (2.0 * a2)
        return [], [complex(re, im), complex(re, -im)]
    if disc == 0.0:
        return [-a1 / (2.0 * a2)], []
    q = -(a1 + math.copysign(math.sqrt(disc), a1)) / 2.0
    return sorted((q / a2, a0 / q)), []


def _back_substitute_y(a, b, tau, x_n, x_next, y_next):
    """y_n from a known x_n and the two step equations.

    The y-row determines y_n with slope 1 - tau x_n^2 and the x-row with
    divisor tau x_n^2; the two divisors sum to 1, so the larger one is never
    below 1/2 and the division is always safe. Works for complex x_n.
    """
    d = 1.0 - tau * x_n * x_n
    if abs(d) >= 0.5:
        return (y_next - tau * b * x_n) / d
    return (x_next - x_n + tau * ((b + 1.0) * x_n - a)) / (tau * x_n * x_n)


def _check_step(m: BrusselatorEuler, x_n, y_n, x_next, y_next):
    sx, sy = brusselator_step(m, x_n, y_n)
    tol = _ROUNDTRIP_TOL * (1.0 + abs(x_next) + abs(y_next))
    if abs(sx - x_next) > tol or abs(sy - y_next) > tol:
        raise RuntimeError(
            "computed history does not step onto the data "
            f"(residual {max(abs(sx - x_next), abs(sy - y_next)):.3g}); "
            "the instance is too ill-conditioned for float preimages"
        )


def _preimage_cubic(m: BrusselatorEuler, x_next, y_next):
    """Coefficients (highest first) of the x_n cubic for a fixed image."""
    return (
        m.tau * (1.0 - m.tau),
        m.tau * (m.tau * m.a - x_next - y_next),
        m.tau * m.b + m.tau - 1.0,
        x_next - m.tau * m.a,
    )


def brusselator_preimages(m: BrusselatorEuler, x_next, y_next):
    """All real preimages of (x_next, y_next) under one Euler step.

    Eliminating y_n from the step equations leaves a cubic in x_n, so there
    are one to three preimages; each returned (x, y) steps forward onto the
    target to about 1e-9. Requires tau outside {0, 1}.
    """
    if m.tau == 0.0 or m.tau == 1.0:
        raise ValueError(f"preimage cubic needs tau outside {{0, 1}}, got {m.tau}")
    x_next = _finite(x_next, "x_next")
    y_next = _finite(y_next, "y_next")
    real, _ = _cubic_roots(*_preimage_cubic(m, x_next, y_next))
    out = []
    for x_n in real:
        y_n = _back_substitute_y(m.a, m.b, m.tau, x_n, x_next, y_next)
        _check_step(m, x_n, y_n, x_next, y_next)
        out.append((x_n, y_n))
    return out


# ---- scalar quadratic map ----


def scalar_step(m: ScalarQuadraticEuler, x: float) -> float:
    """Advance x one Euler step of the quadratic field x^2 + b x + c."""
    return x + m.tau * (x * x + m.b * x + m.c)


def scalar_preimages(m: ScalarQuadraticEuler, x_next: float) -> list[float]:
    """Real solutions of scalar_step(x) = x_next, in increasing order.

    The step inverts through tau x^2 + (tau b + 1) x + (tau c - x_next) = 0;
    the root count follows the discriminant sign (two, one, or none), with a
    double root listed once.
    """
    x_next = _finite(x_next, "x_next")
    real, _ = _quadratic_roots(m.tau, m.tau * m.b + 1.0, m.tau * m.c - x_next)
    return real


# ---- history completion ----


def _nonzero(value, what: str):
    if value == 0.0:
        raise ValueError(f"{what} must be nonzero for this case")
    return value


def history_complete(q: HistoryQuery) -> list[HistoryCompletion]:
    """All completions of the two unknown step quantities.

    Real completions are verified to step forward onto the given data to
    about 1e-9 and come first, sorted by (tau, x_n); complex root pairs
    follow as diagnostics with ``real`` False. Raises ValueError when a
    given value makes the case degenerate (a vanishing pivot denominator or
    a collapsed polynomial).
    """
    a, b = q.a, q.b
    g = dict(zip(q.given_names, q.given))
    real_entries: list[HistoryCompletion] = []
    cplx_entries: list[HistoryCompletion] = []

    def emit(x_n, y_n, x_next, y_next, tau):
        values = (x_n, y_n, x_next, y_next, tau)
        if any(isinstance(v, complex) for v in values):
            cplx_entries.append(HistoryCompletion(*values, real=False))
            return
        m = BrusselatorEuler(a, b, tau)
        _check_step(m, x_n, y_n, x_next, y_next)
        real_entries.append(HistoryCompletion(*values, real=True))

    if q.case == 1:
        m = BrusselatorEuler(a, b, g["tau"])
        x_next, y_next = brusselator_step(m, g["x_n"], g["y_n"])
        emit(g["x_n"], g["y_n"], x_next, y_next, g["tau"])

    elif q.case == 2:
        tau, x_next, y_next = g["tau"], g["x_next"], g["y_next"]
        if tau == 0.0 or tau == 1.0:
            raise ValueError(f"case 2 needs tau outside {{0, 1}}, got {tau}")
        m = BrusselatorEuler(a, b, tau)
        real, cplx = _cubic_roots(*_preimage_cubic(m, x_next, y_next))
        for x_n in real + cplx:
            y_n = _back_substitute_y(a, b, tau, x_n, x_next, y_next)
            emit(x_n, y_n, x_next, y_next, tau)

    elif q.case == 3:
        tau = _nonzero(g["tau"], "tau")
        x_n = _nonzero(g["x_n"], "x_n")
        x_next = g["x_next"]
        y_n = (x_next - x_n + tau * ((b + 1.0) * x_n - a)) / (tau * x_n * x_n)
        y_next = y_n + tau * (b * x_n - x_n * x_n * y_n)
        emit(x_n, y_n, x_next, y_next, tau)

    elif q.case == 4:
        tau = _nonzero(g["tau"], "tau")
        y_n = _nonzero(g["y_n"], "y_n")
        y_next = g["y_next"]
        real, cplx = _quadratic_roots(tau * y_n, -tau * b, y_next - y_n)
        for x_n in real + cplx:
            x_next = x_n + tau * (a + x_n * x_n * y_n - (b + 1.0) * x_n)
            emit(x_n, y_n, x_next, y_next, tau)

    elif q.case == 5:
        tau, x_n, y_next = g["tau"], g["x_n"], g["y_next"]
        d = 1.0 - tau * x_n * x_n
        if d == 0.0:
            raise ValueError("case 5 is degenerate when tau x_n^2 = 1")
        y_n = (y_next - tau * b * x_n) / d
        x_next = x_n + tau * (a + x_n * x_n * y_n - (b + 1.0) * x_n)
        emit(x_n, y_n, x_next, y_next, tau)

    elif q.case == 6:
        tau = _nonzero(g["tau"], "tau")
        y_n = _nonzero(g["y_n"], "y_n")
        x_next = g["x_next"]
        real, cplx = _quadratic_roots(tau * y_n, 1.0 - tau - tau * b, tau * a - x_next)
        for x_n in real + cplx:
            y_next = y_n + tau * (b * x_n - x_n * x_n * y_n)
            emit(x_n, y_n, x_next, y_next, tau)

    elif q.case == 7:
        x_n, y_n, x_next = g["x_n"], g["y_n"], g["x_next"]
        rate = _nonzero(a + x_n * x_n * y_n - (b + 1.0) * x_n, "the x rate")
        tau = (x_next - x_n) / rate
        y_next = y_n + tau * (b * x_n - x_n * x_n * y_n)
        emit(x_n, y_n, x_next, y_next, tau)

    elif q.case == 8:
        x_n, y_n, y_next = g["x_n"], g["y_n"], g["y_next"]
        rate = _nonzero(b * x_n - x_n * x_n * y_n, "the y rate")
        tau = (y_next - y_n) / rate
        x_next = x_n + tau * (a + x_n * x_n * y_n - (b + 1.0) * x_n)
        emit(x_n, y_n, x_next, y_next, tau)

    elif q.case == 9:
        y_n = _nonzero(g["y_n"], "y_n")
        x_next, y_next = g["x_next"], g["y_next"]
        real, cplx = _cubic_roots(
            y_n,
            (y_n - y_next) * y_n - b - x_next * y_n,
            b * x_next + (b + 1.0) * (y_next - y_n),
            a * (y_n - y_next),
        )
        for x_n in real + cplx:
            rate = a + x_n * x_n * y_n - (b + 1.0) * x_n
            if rate == 0.0:
                # The cubic came from cross-multiplying by this rate, so a
                # root where it vanishes admits no finite timestep.
                continue
            emit(x_n, y_n, x_next, y_next, (x_next - x_n) / rate)

    elif q.case == 10:
        x_n = g["x_n"]
        if x_n == 0.0 or x_n == a:
            raise ValueError(f"case 10 needs x_n outside {{0, a}}, got {x_n}")
        x_next, y_next = g["x_next"], g["y_next"]
        real, cplx = _quadratic_roots(
            x_n * x_n * (a - x_n),
            x_n ** 3 - (x_next + y_next) * x_n * x_n + (b + 1.0) * x_n - a,
            x_next - x_n,
        )
        for tau in real + cplx:
            y_n = _back_substitute_y(a, b, tau, x_n, x_next, y_next)
            emit(x_n, y_n, x_next, y_next, tau)

    real_entries.sort(key=lambda e: (e.tau, e.x_n, e.y_n))
    cplx_entries.sort(
        key=lambda e: (e.tau.real, e.tau.imag, e.x_n.real, e.x_n.imag)
    )
    return real_entries + cplx_entries


# ---- J0 sign-change grids ----


@dataclass(frozen=True)
class J0Grid:
    """Jacobian-determinant samples on a rectangle plus the flagged cells.

    dets[i, j] is the determinant at (xs[i], ys[j]); cells lists the
    lower-left node index (i, j) of every cell whose corner determinants are
    not strictly one sign.
    """

    xs: np.ndarray
    ys: np.ndarray
    dets: np.ndarray
    cells: tuple[tuple[int, int], ...]


def j0_grid(pmap: PlanarMap, region, resolution) -> J0Grid:
    """Determinant signs of the map Jacobian on an (nx, ny) node grid.

    region is ((xlo, xhi), (ylo, yhi)). A cell is flagged when two of its
    corners have determinant product <= 0, which reduces to
    min * max <= 0 over the four corners; exact zeros flag the cell. The
    rule needs only point evaluations, so it applies to piecewise-linear
    maps whose determinant jumps instead of crossing zero.
    """
    (xlo, xhi), (ylo, yhi) = region
    nx, ny = int(resolution[0]), int(resolution[1])
    if nx < 2 or ny < 2:
        raise ValueError("resolution must be at least 2 nodes per axis")
    xs = np.linspace(float(xlo), float(xhi), nx)
    ys = np.linspace(float(ylo), float(yhi), ny)
    dets = np.empty((nx, ny))
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            jmat = np.asarray(pmap.jacobian(float(x), float(y)), dtype=np.float64)
            dets[i, j] = jmat[0, 0] * jmat[1, 1] - jmat[0, 1] * jmat[1, 0]
    corners = (dets[:-1, :-1], dets[1:, :-1], dets[:-1, 1:], dets[1:, 1:])
    cmin = np.minimum.reduce(corners)
    cmax = np.maximum.reduce(corners)
    flagged = cmin * cmax <= 0.0
    cells = tuple((int(i), int(j)) for i, j in zip(*np.nonzero(flagged)))
    return J0Grid(xs=xs, ys=ys, dets=dets, cells=cells)


# ---- Van der Pol reference flow ----


def _vdp_field(v: np.ndarray, mu: float) -> np.ndarray:
    return np.array([v[1], mu * (1.0 - v[0] * v[0]) * v[1] - v[0]])


def vdp_flow(x0, mu: float, t_final: float, steps: int = 200) -> np.ndarray:
    """Integrate the Van der Pol field for duration t_final.

    Classical fourth-order Runge-Kutta with a fixed step, so the error is
    O((t_final / steps)^4).
    """
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    v = np.asarray(x0, dtype=np.float64).reshape(-1)
    if v.shape[0] != 2:
        raise ValueError(f"state must have two coordinates, got {v.shape[0]}")
    h = float(t_final) / steps
    for _ in range(steps):
        k1 = _vdp_field(v, mu)
        k2 = _vdp_field(v + 0.5 * h * k1, mu)
        k3 = _vdp_field(v + 0.5 * h * k2, mu)
        k4 = _vdp_field(v + h * k3, mu)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return v


# ---- sampling ----


def _as_evaluator(map_like):
    if isinstance(map_like, PlanarMap):
        return map_like.evaluator
    if callable(map_like):
        return map_like
    raise TypeError(f"expected a PlanarMap or callable, got {type(map_like).__name__}")


def generate_dataset(map_like, region, count: int, seed: int):
    """Seeded uniform samples in the rectangle paired with their images.

    map_like is a PlanarMap or a callable (x, y) -> (x', y'). Returns a
    list of ((x, y), (x', y')) float pairs; a fixed seed reproduces the
    list exactly.
    """
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    run = _as_evaluator(map_like)
    (xlo, xhi), (ylo, yhi) = region
    rng = np.random.default_rng(seed)
    pts = rng.uniform((float(xlo), float(ylo)), (float(xhi), float(yhi)), size=(count, 2))
    out = []
    for x, y in pts:
        fx, fy = run(float(x), float(y))
        out.append(((float(x), float(y)), (float(fx), float(fy))))
    return out


def dataset_csv(pairs) -> str:
    """CSV text for sampled pairs, header x1,y1,x2,y2 (input then image)."""
    lines = ["x1,y1,x2,y2"]
    for (x1, y1), (x2, y2) in pairs:
        lines.append(f"{x1!r},{y1!r},{x2!r},{y2!r}")
    return "\n".join(lines) + "\n"


def j0_csv(grid: J0Grid) -> str:
    """CSV text of the determinant grid, header x,y,det, x-major order."""
    lines = ["x,y,det"]
    for i, x in enumerate(grid.xs):
        for j, y in enumerate(grid.ys):
            lines.append(f"{float(x)!r},{float(y)!r},{float(grid.dets[i, j])!r}")
    return "\n".join(lines) + "\n"


def j0_cells_json(grid: J0Grid) -> str:
    """JSON list of flagged cells as [i, j] lower-left node indices."""
    return json.dumps([list(cell) for cell in grid.cells])


def bilipschitz_estimate(map_like, region, samples: int, seed: int):
    """Observed expansion extremes of a map over sampled point pairs.

    Draws ``samples`` points uniformly in ``region`` (a sequence of
    (lo, hi) intervals, one per coordinate), evaluates the map, and returns
    (largest, smallest) of ||F(p) - F(q)||_2 / ||p - q||_2 over distinct
    pairs. A sample statistic only: a lower bound on the true expansion
    constant and an upper bound on the true contraction constant, not a
    certificate.
    """
    if samples < 2:
        raise ValueError(f"need at least two samples, got {samples}")
    region = [(float(lo), float(hi)) for lo, hi in region]
    if isinstance(map_like, PlanarMap) and len(region) != 2:
        raise ValueError("a PlanarMap needs a two-interval region")
    run = _as_evaluator(map_like)
    rng = np.random.default_rng(seed)
    pts = rng.uniform([lo for lo, _ in region], [hi for _, hi in region], size=(samples, len(region)))
    vals = np.array(
        [np.atleast_1d(np.asarray(run(*p), dtype=np.float64)) for p in pts]
    )
    iu = np.triu_indices(samples, k=1)
    din = pts[:, None, :] - pts[None, :, :]
    den = np.sqrt((din * din).sum(axis=-1))[iu]
    dout = vals[:, None, :] - vals[None, :, :]
    num = np.sqrt((dout * dout).sum(axis=-1))[iu]
    keep = den > 0.0
    if not keep.any():
        raise ValueError("all sampled points coincide; enlarge the region")
    ratios = num[keep] / den[keep]
    return float(ratios.max()), float(ratios.min())
