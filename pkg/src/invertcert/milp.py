"""Self-contained LP/MILP solver.

LP relaxations are solved by a dense bounded-variable primal simplex
(phase 1 via artificial variables, Dantzig pricing with a Bland's-rule
restart for anti-cycling). Binaries are handled by best-bound branch and
bound with most-fractional branching and a periodic depth-first dive.

The solver never reports "optimal" without re-verifying the assignment
against every row; verification failure surfaces as numerical_failure.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass

import numpy as np

# Statuses.
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NODE_LIMIT = "node_limit"
TIME_LIMIT = "time_limit"
NUMERICAL_FAILURE = "numerical_failure"

# Variable kinds.
CONTINUOUS = "continuous"
BINARY = "binary"

FEASIBILITY_TOL = 1e-7
_COST_TOL = 1e-9
_PIVOT_TOL = 1e-9
_REFACTOR_EVERY = 128


class MilpModel:
    """Linear program over bounded variables, some marked binary; maximization.

    Rows are (coefficients, relation, rhs) with relation one of "<=", "=",
    ">=". Coefficients are given sparsely as (index, value) pairs or a dict.
    """

    def __init__(self):
        self.names: list[str] = []
        self.kinds: list[str] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.rows: list[tuple[tuple[tuple[int, float], ...], str, float]] = []
        self.objective: dict[int, float] = {}
        self.sense = "max"

    @property
    def num_vars(self) -> int:
        return len(self.names)

    @property
    def num_rows(self) -> int:
        return len(self.rows)

    @property
    def binary_indices(self) -> list[int]:
        return [j for j, k in enumerate(self.kinds) if k == BINARY]

    @property
    def num_binaries(self) -> int:
        return sum(1 for k in self.kinds if k == BINARY)

    def add_var(self, name=None, lower=None, upper=None, kind=CONTINUOUS) -> int:
        if kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {kind!r}")
        if kind == BINARY:
            lo = 0.0 if lower is None else float(lower)
            hi = 1.0 if upper is None else float(upper)
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError("binary bounds must satisfy 0 <= lower <= upper <= 1")
        else:
            lo = -math.inf if lower is None else float(lower)
            hi = math.inf if upper is None else float(upper)
            if math.isnan(lo) or math.isnan(hi) or lo > hi:
                raise ValueError(f"bad bounds [{lo}, {hi}]")
        j = len(self.names)
        self.names.append(name if name is not None else f"v{j}")
        self.kinds.append(kind)
        self.lower.append(lo)
        self.upper.append(hi)
        return j

    def set_var_bounds(self, j: int, lower: float, upper: float) -> None:
        if not 0 <= j < self.num_vars:
            raise ValueError(f"no variable with index {j}")
        lo, hi = float(lower), float(upper)
        if math.isnan(lo) or math.isnan(hi) or lo > hi:
            raise ValueError(f"bad bounds [{lo}, {hi}]")
        if self.kinds[j] == BINARY and not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("binary bounds must satisfy 0 <= lower <= upper <= 1")
        self.lower[j] = lo
        self.upper[j] = hi

    def _pack(self, coeffs):
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        packed = []
        for j, a in items:
            j, a = int(j), float(a)
            if not 0 <= j < self.num_vars:
                raise ValueError(f"coefficient references undeclared variable {j}")
            if not math.isfinite(a):
                raise ValueError("coefficients must be finite")
            if a != 0.0:
                packed.append((j, a))
        return tuple(packed)

    def add_constraint(self, coeffs, rel: str, rhs: float) -> int:
        if rel not in ("<=", "=", ">="):
            raise ValueError(f"relation must be '<=', '=' or '>=', got {rel!r}")
        rhs = float(rhs)
        if not math.isfinite(rhs):
            raise ValueError("rhs must be finite")
        self.rows.append((self._pack(coeffs), rel, rhs))
        return len(self.rows) - 1

    def set_objective(self, coeffs, sense: str = "max"):
        if sense != "max":
            raise ValueError("only maximization is supported")
        self.objective = dict(self._pack(coeffs))
        self.sense = sense

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.lower, dtype=np.float64), np.array(self.upper, dtype=np.float64)


@dataclass(frozen=True)
class LpSolution:
    status: str
    objective: float | None
    x: np.ndarray | None
    iterations: int


@dataclass(frozen=True)
class MilpStats:
    nodes: int
    lp_iterations: int
    wall_time: float


@dataclass(frozen=True)
class MilpSolution:
    status: str
    objective: float | None
    assignment: np.ndarray | None
    best_bound: float
    stats: MilpStats


# ---- simplex ----

_AT_LOWER, _AT_UPPER, _BASIC, _FREE = 0, 1, 2, 3


def _standard_form(rows, num_vars, objective):
    """Equality form: A z = b with one slack per row appended after the
    structural variables. Returns (A, b, c, slack_lo, slack_hi)."""
    m = len(rows)
    A = np.zeros((m, num_vars + m))
    b = np.zeros(m)
    slo = np.zeros(m)
    shi = np.zeros(m)
    for i, (coeffs, rel, rhs) in enumerate(rows):
        for j, a in coeffs:
            A[i, j] += a
        A[i, num_vars + i] = 1.0
        b[i] = rhs
        if rel == "<=":
            slo[i], shi[i] = 0.0, math.inf
        elif rel == ">=":
            slo[i], shi[i] = -math.inf, 0.0
        else:
            slo[i], shi[i] = 0.0, 0.0
    c = np.zeros(num_vars + m)
    for j, a in objective.items():
        c[j] = a
    return A, b, c, slo, shi


class _SimplexRun:
    """One simplex attempt on a fixed standard-form system."""

    def __init__(self, A, b, c, lo, hi, bland):
        self.m, n_ext = A.shape
        self.bland = bland
        self.b = b
        self.c_real = c
        self.iterations = 0
        m = self.m

        lo = lo.copy()
        hi = hi.copy()
        x = np.zeros(n_ext)
        status = np.full(n_ext, _AT_LOWER, dtype=np.int8)
        for j in range(n_ext):
            lf, uf = math.isfinite(lo[j]), math.isfinite(hi[j])
            if lf and uf:
                if abs(lo[j]) <= abs(hi[j]):
                    x[j], status[j] = lo[j], _AT_LOWER
                else:
                    x[j], status[j] = hi[j], _AT_UPPER
            elif lf:
                x[j], status[j] = lo[j], _AT_LOWER
            elif uf:
                x[j], status[j] = hi[j], _AT_UPPER
            else:
                x[j], status[j] = 0.0, _FREE

        # Crash basis: let each row's slack absorb as much residual as its
        # bounds allow; rows left uncovered get an artificial column.
        r = b - A @ x if m else np.zeros(0)
        basis = np.full(m, -1, dtype=np.int64)
        for i in range(m):
            js = n_ext - m + i
            v = min(max(x[js] + r[i], lo[js]), hi[js])
            r[i] -= v - x[js]
            x[js] = v
            if abs(r[i]) <= 1e-12 * (1.0 + abs(b[i])):
                r[i] = 0.0
                basis[i] = js
                status[js] = _BASIC
        need = np.flatnonzero(basis < 0)
        self.n_real = n_ext
        if need.size:
            art = np.zeros((m, need.size))
            for k, i in enumerate(need):
                art[i, k] = 1.0 if r[i] >= 0 else -1.0
            A = np.hstack([A, art])
            lo = np.concatenate([lo, np.zeros(need.size)])
            hi = np.concatenate([hi, np.full(need.size, math.inf)])
            x = np.concatenate([x, np.abs(r[need])])
            status = np.concatenate([status, np.full(need.size, _BASIC, np.int8)])
            for k, i in enumerate(need):
                basis[i] = n_ext + k
        self.A, self.lo, self.hi = A, lo, hi
        self.x, self.status, self.basis = x, status, basis
        self.N = A.shape[1]
        self.art_start = n_ext
        if m:
            sign = np.array([A[i, basis[i]] for i in range(m)])
            self.B_inv = np.diag(sign)  # basis columns are +-unit vectors
            self.xB = x[basis].copy()
        else:
            self.B_inv = np.zeros((0, 0))
            self.xB = np.zeros(0)
        self.pivots_since_refactor = 0

    def refactor(self) -> bool:
        if self.m == 0:
            return True
        try:
            self.B_inv = np.linalg.inv(self.A[:, self.basis])
        except np.linalg.LinAlgError:
            return False
        xt = self.x.copy()
        xt[self.basis] = 0.0
        self.xB = self.B_inv @ (self.b - self.A @ xt)
        self.pivots_since_refactor = 0
        return True

    def iterate(self, cvec, cap, allow_unbounded):
        """Pivot until optimal for cvec. Returns one of 'optimal',
        'unbounded', 'iter_limit', 'stall', 'numfail'."""
        m = self.m
        A, lo, hi = self.A, self.lo, self.hi
        movable = (hi - lo) > 0.0
        stall = 0
        while True:
            if self.iterations >= cap:
                return "iter_limit"
            if self.pivots_since_refactor >= _REFACTOR_EVERY:
                if not self.refactor():
                    return "numfail"
            self.iterations += 1
            y = cvec[self.basis] @ self.B_inv if m else np.zeros(0)
            d = cvec - (y @ A if m else 0.0)
            st = self.status
            up_ok = ((st == _AT_LOWER) | (st == _FREE)) & (d > _COST_TOL)
            dn_ok = ((st == _AT_UPPER) | (st == _FREE)) & (d < -_COST_TOL)
            elig = movable & (st != _BASIC) & (up_ok | dn_ok)
            idxs = np.flatnonzero(elig)
            if idxs.size == 0:
                return "optimal"
            j = int(idxs[0]) if self.bland else int(idxs[np.argmax(np.abs(d[idxs]))])
            sigma = 1.0 if up_ok[j] else -1.0

            alpha = self.B_inv @ A[:, j] if m else np.zeros(0)
            rate = -sigma * alpha
            own = hi[j] - lo[j]  # inf when either side is open
            if m:
                deltas = np.full(m, np.inf)
                pos = rate > _PIVOT_TOL
                neg = rate < -_PIVOT_TOL
                ub = hi[self.basis]
                lb = lo[self.basis]
                deltas[pos] = (ub[pos] - self.xB[pos]) / rate[pos]
                deltas[neg] = (lb[neg] - self.xB[neg]) / rate[neg]
                deltas = np.maximum(deltas, 0.0)
                rmin = float(deltas.min()) if m else math.inf
            else:
                deltas = np.zeros(0)
                rmin = math.inf

            step = min(own, rmin)
            if not math.isfinite(step):
                return "unbounded" if allow_unbounded else "numfail"
            stall = stall + 1 if step <= 1e-12 else 0
            if stall > 1000 and not self.bland:
                return "stall"

            if m:
                self.xB += rate * step
            self.x[j] += sigma * step

            if own <= rmin:  # bound flip, no basis change
                self.status[j] = _AT_UPPER if sigma > 0 else _AT_LOWER
                continue

            tie = 1e-9 * (1.0 + abs(rmin))
            cand = np.flatnonzero(deltas <= rmin + tie)
            if self.bland:
                rrow = int(cand[np.argmin(self.basis[cand])])
            else:
                rrow = int(cand[np.argmax(np.abs(rate[cand]))])
            piv = alpha[rrow]
            if abs(piv) <= _PIVOT_TOL:
                return "numfail"
            jl = self.basis[rrow]
            if rate[rrow] > 0:
                self.status[jl] = _AT_UPPER
                self.x[jl] = hi[jl]
            else:
                self.status[jl] = _AT_LOWER
                self.x[jl] = lo[jl]
            self.basis[rrow] = j
            self.status[j] = _BASIC
            self.xB[rrow] = self.x[j]
            self.B_inv[rrow] /= piv
            others = np.arange(m) != rrow
            self.B_inv[others] -= np.outer(alpha[others], self.B_inv[rrow])
            self.pivots_since_refactor += 1

    def snapshot(self):
        """Basis and nonbasic statuses for warm restarts; None when an
        artificial column is still basic (the child must solve cold)."""
        if self.m and np.any(self.basis >= self.art_start):
            return None
        return self.basis.copy(), self.status[: self.art_start].copy()

    def evict_artificials(self):
        """After phase 1, pivot zero-level artificials out of the basis where
        possible; redundant rows keep theirs (fixed at zero either way)."""
        for i in range(self.m):
            if self.basis[i] < self.art_start:
                continue
            row = self.B_inv[i] @ self.A
            ok = (
                (np.arange(self.N) < self.art_start)
                & (self.status != _BASIC)
                & ((self.hi - self.lo) > 0)
                & (np.abs(row) > 1e-7)
            )
            cand = np.flatnonzero(ok)
            if cand.size == 0:
                continue
            j = int(cand[np.argmax(np.abs(row[cand]))])
            alpha = self.B_inv @ self.A[:, j]
            piv = alpha[i]
            jl = self.basis[i]
            self.status[jl] = _AT_LOWER
            self.x[jl] = 0.0
            self.basis[i] = j
            self.status[j] = _BASIC
            self.xB[i] = self.x[j]
            self.B_inv[i] /= piv
            others = np.arange(self.m) != i
            self.B_inv[others] -= np.outer(alpha[others], self.B_inv[i])
        # Artificials may never re-enter.
        self.lo[self.art_start :] = 0.0
        self.hi[self.art_start :] = 0.0

    def assemble(self):
        x = self.x.copy()
        if self.m:
            x[self.basis] = self.xB
        return x

    def verify(self, x, feas_tol):
        if self.m:
            res = self.A @ x - self.b
            if np.any(np.abs(res) > feas_tol * (1.0 + np.abs(self.b))):
                return False
        scale = 1.0 + np.minimum(np.abs(np.where(np.isfinite(self.lo), self.lo, 0.0)), 1e30)
        if np.any(x < self.lo - feas_tol * scale):
            return False
        scale = 1.0 + np.abs(np.where(np.isfinite(self.hi), self.hi, 0.0))
        return not np.any(x > self.hi + feas_tol * scale)

    def solve(self):
        """Returns (status, x_ext or None, iterations)."""
        m, N = self.m, self.N
        cap = 3000 + 6 * (m + N) if not self.bland else 12000 + 24 * (m + N)
        if self.art_start < N and np.any(self.x[self.art_start :] > 0):
            c1 = np.zeros(N)
            c1[self.art_start :] = -1.0
            out = self.iterate(c1, cap, allow_unbounded=False)
            if out != "optimal":
                return ("numfail" if out == "numfail" else out), None, self.iterations
            x_now = self.assemble()
            infeas = float(np.sum(x_now[self.art_start :]))
            if infeas > FEASIBILITY_TOL * (1.0 + float(np.abs(self.b).max(initial=0.0))):
                return "infeasible", None, self.iterations
            # Verdict must be per row: big-M terms cancel exactly at integral
            # points, so a unit-scale row may not hide a real violation behind
            # one huge rhs elsewhere in the system.
            res = self.A[:, : self.art_start] @ x_now[: self.art_start] - self.b
            if np.any(np.abs(res) > FEASIBILITY_TOL * np.maximum(1.0, 1e-5 * np.abs(self.b))):
                return "infeasible", None, self.iterations
            self.evict_artificials()
        elif self.art_start < N:
            self.lo[self.art_start :] = 0.0
            self.hi[self.art_start :] = 0.0
        c2 = np.zeros(N)
        c2[: len(self.c_real)] = self.c_real
        out = self.iterate(c2, cap, allow_unbounded=True)
        if out != "optimal":
            return out, None, self.iterations
        x = self.assemble()
        if not self.verify(x, FEASIBILITY_TOL):
            if not self.refactor():
                return "numfail", None, self.iterations
            x = self.assemble()
            if not self.verify(x, 10 * FEASIBILITY_TOL):
                return "verify_failed", None, self.iterations
        return "optimal", x, self.iterations


def _solve_standard(A, b, c, lo, hi):
    """Dantzig first, full Bland restart on stalling or lost feasibility.
    Returns (status, x_ext or None, objective or None, iterations, snapshot)."""
    iters = 0
    for bland in (False, True):
        run = _SimplexRun(A, b, c, lo, hi, bland)
        out, x, it = run.solve()
        iters += it
        if out == "optimal":
            obj = float(c @ x[: c.shape[0]])
            return OPTIMAL, x, obj, iters, run.snapshot()
        if out == "infeasible":
            return INFEASIBLE, None, None, iters, None
        if out == "unbounded":
            return UNBOUNDED, None, None, iters, None
        # stall / iter_limit / numfail / verify_failed: retry with Bland
    return NUMERICAL_FAILURE, None, None, iters, None


def _warm_dual_solve(A, b, c, lo, hi, snapshot):
    """Reoptimize after bound changes, starting from an optimal parent basis.

    The parent basis is dual feasible for the unchanged objective, so dual
    simplex (pick a bound-violating basic variable, price the entering
    column by the dual ratio test) restores primal feasibility in few
    pivots. Returns (status, x_ext, obj, iterations, snapshot) or None to
    request a cold solve. Infeasibility claims rest on the same pivot
    tolerances as the cold phase-1 test.
    """
    basis, statuses = snapshot
    basis = basis.copy()  # snapshots are shared between sibling nodes
    m, n_ext = A.shape
    if m == 0 or len(statuses) != n_ext:
        return None
    try:
        B_inv = np.linalg.inv(A[:, basis])
    except np.linalg.LinAlgError:
        return None
    status = statuses.copy()
    x = np.zeros(n_ext)
    at_lo = status == _AT_LOWER
    at_up = status == _AT_UPPER
    x[at_lo] = lo[at_lo]
    x[at_up] = hi[at_up]
    if not np.all(np.isfinite(x)):
        return None
    x[basis] = 0.0
    xB = B_inv @ (b - A @ x)
    iters = 0
    # Reoptimization after one bound change takes a handful of pivots;
    # a run this long is stalling (dual degeneracy), so hand off cold.
    cap = 50 + m // 2
    movable = (hi - lo) > 0.0
    while True:
        lb, ub = lo[basis], hi[basis]
        scale = FEASIBILITY_TOL * (1.0 + np.abs(b).max(initial=0.0))
        over = xB - ub
        under = lb - xB
        worst = np.maximum(over, under)
        r = int(np.argmax(worst))
        if worst[r] <= scale:
            break
        if iters >= cap:
            return None
        iters += 1
        above = over[r] >= under[r]
        target = ub[r] if above else lb[r]
        if not math.isfinite(target):
            return None
        row = B_inv[r] @ A
        y = c[basis] @ B_inv
        d = c - y @ A
        st = status
        # entering moves so the violated basic value heads back to its bound
        if above:
            elig = movable & (
                (((st == _AT_LOWER) | (st == _FREE)) & (row > _PIVOT_TOL))
                | (((st == _AT_UPPER) | (st == _FREE)) & (row < -_PIVOT_TOL))
            )
        else:
            elig = movable & (
                (((st == _AT_LOWER) | (st == _FREE)) & (row < -_PIVOT_TOL))
                | (((st == _AT_UPPER) | (st == _FREE)) & (row > _PIVOT_TOL))
            )
        elig[basis] = False
        cand = np.flatnonzero(elig)
        if cand.size == 0:
            return (INFEASIBLE, None, None, iters, None)
        ratios = np.abs(d[cand]) / np.abs(row[cand])
        best = ratios.min()
        tie = np.flatnonzero(ratios <= best + 1e-9)
        j = int(cand[tie[np.argmax(np.abs(row[cand][tie]))]])
        sigma = 1.0 if (st[j] == _AT_LOWER or (st[j] == _FREE and (row[j] > 0) == above)) else -1.0
        theta = (xB[r] - target) / (sigma * row[j])
        own = hi[j] - lo[j]
        alpha = B_inv @ A[:, j]
        if theta > own:  # entering flips to its other bound, basis unchanged
            xB += -sigma * alpha * own
            x[j] += sigma * own
            status[j] = _AT_UPPER if sigma > 0 else _AT_LOWER
            continue
        piv = alpha[r]
        if abs(piv) <= _PIVOT_TOL:
            return None
        xB += -sigma * alpha * theta
        x[j] += sigma * theta
        jl = basis[r]
        x[jl] = target
        status[jl] = _AT_UPPER if above else _AT_LOWER
        basis[r] = j
        status[j] = _BASIC
        xB[r] = x[j]
        B_inv[r] /= piv
        others = np.arange(m) != r
        B_inv[others] -= np.outer(alpha[others], B_inv[r])

    x_full = x.copy()
    x_full[basis] = xB
    res = A @ x_full - b
    if np.any(np.abs(res) > FEASIBILITY_TOL * (1.0 + np.abs(b))):
        return None
    sc_lo = 1.0 + np.minimum(np.abs(np.where(np.isfinite(lo), lo, 0.0)), 1e30)
    sc_hi = 1.0 + np.abs(np.where(np.isfinite(hi), hi, 0.0))
    if np.any(x_full < lo - FEASIBILITY_TOL * sc_lo) or np.any(
        x_full > hi + FEASIBILITY_TOL * sc_hi
    ):
        return None
    # dual feasibility was maintained throughout, so this point is optimal
    y = c[basis] @ B_inv
    d = c - y @ A
    bad = (
        ((status == _AT_LOWER) & movable & (d > 1e-6))
        | ((status == _AT_UPPER) & movable & (d < -1e-6))
        | ((status == _FREE) & (np.abs(d) > 1e-6))
    )
    if np.any(bad):
        return None
    obj = float(c @ x_full)
    return (OPTIMAL, x_full, obj, iters, (basis.copy(), status.copy()))


def lp_solve(model: MilpModel, relax: bool = True, bounds=None) -> LpSolution:
    """Solve the LP over the model's rows and bounds.

    relax=True treats binaries as continuous inside their current bounds.
    relax=False requires every binary to be fixed (lower == upper) and is the
    form used for pattern-fixed subproblems.
    bounds optionally overrides variable bounds as an (n, 2) array.
    """
    n = model.num_vars
    lo, hi = model.bounds_arrays()
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=np.float64)
        if bounds.shape != (n, 2):
            raise ValueError(f"bounds override must have shape ({n}, 2)")
        lo, hi = bounds[:, 0].copy(), bounds[:, 1].copy()
    if not relax:
        for j in model.binary_indices:
            if lo[j] != hi[j]:
                raise ValueError("relax=False requires all binaries fixed (lower == upper)")
    A, b, c, slo, shi = _standard_form(model.rows, n, model.objective)
    status, x, obj, iters, _ = _solve_standard(
        A, b, c, np.concatenate([lo, slo]), np.concatenate([hi, shi])
    )
    return LpSolution(status, obj, x[:n] if x is not None else None, iters)


# ---- branch and bound ----


def _presolve(model: MilpModel, int_tol: float):
    """Bound tightening from singleton rows. Returns (lo, hi, kept_rows) or
    None when the tightened bounds are already contradictory."""
    lo, hi = model.bounds_arrays()
    kept = []
    for coeffs, rel, rhs in model.rows:
        if len(coeffs) == 0:
            ok = (
                (rel == "<=" and 0.0 <= rhs + FEASIBILITY_TOL)
                or (rel == ">=" and 0.0 >= rhs - FEASIBILITY_TOL)
                or (rel == "=" and abs(rhs) <= FEASIBILITY_TOL)
            )
            if not ok:
                return None
        elif len(coeffs) == 1:
            j, a = coeffs[0]
            v = rhs / a
            if rel == "=":
                lo[j], hi[j] = max(lo[j], v), min(hi[j], v)
            elif (rel == "<=") == (a > 0):
                hi[j] = min(hi[j], v)
            else:
                lo[j] = max(lo[j], v)
        else:
            kept.append((coeffs, rel, rhs))
    for j in model.binary_indices:
        if lo[j] > int_tol:
            lo[j] = 1.0
        elif lo[j] > 0.0:
            lo[j] = 0.0
        if hi[j] < 1.0 - int_tol:
            hi[j] = 0.0
        elif hi[j] < 1.0:
            hi[j] = 1.0
    if np.any(lo > hi + FEASIBILITY_TOL):
        return None
    hi = np.maximum(hi, lo)  # collapse sub-tolerance inversions
    return lo, hi, kept


def _reduce(rows, num_vars, objective, lo, hi, binary_set, int_tol):
    """Shrink the model before the standard form is built.

    Pinched variables become constants, singleton rows fold into bounds,
    rows implied by the bounds are dropped, and continuous equality column
    singletons whose row-implied range fits inside their own bounds are
    eliminated (their values are recomputed from the stored row after the
    solve). Returns None on a contradiction, else

        (rows2, keep, lo2, hi2, obj2, obj_const, recover)

    with rows2/obj2 reindexed over the kept columns and recover mapping a
    reduced assignment back to full length.
    """
    rows = [(list(coeffs), rel, float(rhs)) for coeffs, rel, rhs in rows]
    lo = np.asarray(lo, dtype=np.float64).copy()
    hi = np.asarray(hi, dtype=np.float64).copy()
    value: dict[int, float] = {}
    stack: list[tuple[int, float, list, float]] = []
    gone = np.zeros(num_vars, dtype=bool)

    def pin(j):
        v = 0.5 * (lo[j] + hi[j])
        if j in binary_set:
            v = float(round(v))
        value[j] = v
        gone[j] = True

    for _ in range(8):
        changed = False
        width = hi - lo
        pinch = ~gone & np.isfinite(width) & (width <= 1e-11 * (1.0 + np.abs(lo) + np.abs(hi)))
        if np.any(pinch):
            changed = True
            for j in np.flatnonzero(pinch):
                pin(j)
        nxt = []
        for coeffs, rel, rhs in rows:
            live = []
            for j, a in coeffs:
                if gone[j]:
                    rhs -= a * value[j]
                else:
                    live.append((j, a))
            if not live:
                tol = 1e-6 * (1.0 + abs(rhs))
                bad = (
                    (rel == "<=" and rhs < -tol)
                    or (rel == ">=" and rhs > tol)
                    or (rel == "=" and abs(rhs) > tol)
                )
                if bad:
                    return None
                changed = True
                continue
            if len(live) == 1:
                j, a = live[0]
                v = rhs / a
                if rel == "=":
                    lo[j], hi[j] = max(lo[j], v), min(hi[j], v)
                elif (rel == "<=") == (a > 0):
                    hi[j] = min(hi[j], v)
                else:
                    lo[j] = max(lo[j], v)
                if j in binary_set:
                    if hi[j] < 1.0 - int_tol:
                        hi[j] = min(hi[j], 0.0)
                    if lo[j] > int_tol:
                        lo[j] = max(lo[j], 1.0)
                if lo[j] > hi[j] + 1e-7 * (1.0 + abs(hi[j])):
                    return None
                hi[j] = max(hi[j], lo[j])
                changed = True
                continue
            if rel != "=":
                act = 0.0
                for j, a in live:
                    act += a * (hi[j] if (a > 0) == (rel == "<=") else lo[j])
                    if not math.isfinite(act):
                        break
                tol = 1e-9 * (1.0 + abs(rhs))
                if math.isfinite(act) and (
                    act <= rhs + tol if rel == "<=" else act >= rhs - tol
                ):
                    changed = True
                    continue
            nxt.append((live, rel, rhs))
        rows = nxt

        counts = np.zeros(num_vars, dtype=np.int64)
        for coeffs, _, _ in rows:
            for j, _ in coeffs:
                counts[j] += 1
        # Continuous equality column singletons: the row defines the
        # variable, so when the row-implied range fits inside its bounds
        # the pair can leave the model and be replayed afterwards.
        kept_rows = []
        for coeffs, rel, rhs in rows:
            if rel == "=":
                pivot = None
                for j, a in coeffs:
                    if (
                        counts[j] == 1
                        and j not in binary_set
                        and j not in objective
                        and abs(a) >= 1e-8
                    ):
                        pivot = (j, a)
                        break
                if pivot is not None:
                    j, a = pivot
                    others = [(k, ak) for k, ak in coeffs if k != j]
                    rest_lo = rest_hi = rhs
                    for k, ak in others:
                        rest_lo -= ak * (hi[k] if ak > 0 else lo[k])
                        rest_hi -= ak * (lo[k] if ak > 0 else hi[k])
                    implied = sorted((rest_lo / a, rest_hi / a))
                    if (
                        math.isfinite(implied[0])
                        and math.isfinite(implied[1])
                        and implied[0] >= lo[j] - 1e-9 * (1.0 + abs(lo[j]))
                        and implied[1] <= hi[j] + 1e-9 * (1.0 + abs(hi[j]))
                    ):
                        for k, _ in others:
                            counts[k] -= 1
                        counts[j] = 0
                        gone[j] = True
                        stack.append((j, a, others, rhs))
                        changed = True
                        continue
            kept_rows.append((coeffs, rel, rhs))
        rows = kept_rows
        unused = ~gone & (counts == 0)
        for j in np.flatnonzero(unused):
            if j not in objective:
                lo_j, hi_j = lo[j], hi[j]
                if lo_j > hi_j:
                    return None
                value[j] = float(min(max(0.0, lo_j), hi_j))
                if j in binary_set:
                    value[j] = float(round(value[j]))
                gone[j] = True
                changed = True

        # Equality substitution: an implied-free continuous variable defined
        # by an equality row leaves by Gaussian elimination. Fill-in is
        # harmless for a dense simplex; the basis dimension is what costs.
        rows_d = [[dict(coeffs), rel, rhs] for coeffs, rel, rhs in rows]
        usage: dict[int, set] = {}
        for ri, (coeffs, _, _) in enumerate(rows_d):
            for j in coeffs:
                usage.setdefault(j, set()).add(ri)
        dead: set = set()
        for ri in range(len(rows_d)):
            coeffs, rel, rhs = rows_d[ri]
            if rel != "=" or ri in dead or not coeffs:
                continue
            amax = max(abs(a) for a in coeffs.values())
            pivot = None
            for j, a in coeffs.items():
                if j in binary_set or j in objective or abs(a) < max(1e-8, 0.01 * amax):
                    continue
                if pivot is None or abs(a) > abs(pivot[1]):
                    pivot = (j, a)
            if pivot is None:
                continue
            j, a = pivot
            rest_lo = rest_hi = rhs
            for k, ak in coeffs.items():
                if k == j:
                    continue
                rest_lo -= ak * (hi[k] if ak > 0 else lo[k])
                rest_hi -= ak * (lo[k] if ak > 0 else hi[k])
            implied = sorted((rest_lo / a, rest_hi / a))
            if not (
                math.isfinite(implied[0])
                and math.isfinite(implied[1])
                and implied[0] >= lo[j] - 1e-9 * (1.0 + abs(lo[j]))
                and implied[1] <= hi[j] + 1e-9 * (1.0 + abs(hi[j]))
            ):
                continue
            others = [(k, ak) for k, ak in coeffs.items() if k != j]
            for si in list(usage.get(j, ())):
                if si == ri or si in dead:
                    continue
                sc, srel, srhs = rows_d[si]
                bj = sc.pop(j, 0.0)
                if bj == 0.0:
                    continue
                f = bj / a
                for k, ak in others:
                    sc[k] = sc.get(k, 0.0) - f * ak
                    usage.setdefault(k, set()).add(si)
                # Cancellation dust is far below every solver tolerance.
                scale = max(abs(v) for v in sc.values()) if sc else 0.0
                for k in [k for k, v in sc.items() if abs(v) <= 1e-12 * (1.0 + scale)]:
                    del sc[k]
                rows_d[si][2] = srhs - f * rhs
            dead.add(ri)
            gone[j] = True
            stack.append((j, a, others, rhs))
            changed = True
        rows = [
            (list(coeffs.items()), rel, rhs)
            for ri, (coeffs, rel, rhs) in enumerate(rows_d)
            if ri not in dead
        ]
        if not changed:
            break

    keep = [j for j in range(num_vars) if not gone[j]]
    col = {j: i for i, j in enumerate(keep)}
    rows2 = [([(col[j], a) for j, a in coeffs], rel, rhs) for coeffs, rel, rhs in rows]
    obj2 = {}
    obj_const = 0.0
    for j, cj in objective.items():
        if gone[j]:
            obj_const += cj * value.get(j, 0.0)
        else:
            obj2[col[j]] = cj
    lo2 = lo[keep]
    hi2 = hi[keep]

    def recover(x_red):
        full = np.zeros(num_vars, dtype=np.float64)
        full[keep] = x_red
        for j, v in value.items():
            full[j] = v
        for j, a, others, rhs in reversed(stack):
            acc = rhs
            for k, ak in others:
                acc -= ak * full[k]
            full[j] = acc / a
        return full

    return rows2, keep, lo2, hi2, obj2, obj_const, recover


class _Propagator:
    """Iterative bound tightening over the kept rows.

    Rows are normalized to sum a_j x_j <= rhs ("=" contributes both
    directions). A pass computes each row's minimum activity from the
    current bounds and tightens every variable against the remaining
    slack; binaries whose range excludes an endpoint snap to the other.
    Only constraint implications and integrality are used, and accepted
    bounds keep a small outward pad, so no integer point is ever cut.
    """

    def __init__(self, rows, num_vars, binary_indices, int_tol):
        idx, val, row_of, rhs = [], [], [], []
        r = 0
        for coeffs, rel, rhs_v in rows:
            for sgn in (1.0,) if rel == "<=" else (-1.0,) if rel == ">=" else (1.0, -1.0):
                for j, a in coeffs:
                    if a != 0.0:
                        idx.append(j)
                        val.append(sgn * a)
                        row_of.append(r)
                rhs.append(sgn * rhs_v)
                r += 1
        self.idx = np.array(idx, dtype=np.int64)
        self.val = np.array(val, dtype=np.float64)
        self.row_of = np.array(row_of, dtype=np.int64)
        self.rhs = np.array(rhs, dtype=np.float64)
        self.num_rows = r
        self.pos = self.val > 0.0
        self.neg = ~self.pos
        # Grouped orderings so per-variable reduction is a single reduceat.
        def group(entry_vars):
            order = np.argsort(entry_vars, kind="stable")
            svars = entry_vars[order]
            if svars.size == 0:
                return order, np.zeros(0, dtype=np.int64), svars
            starts = np.flatnonzero(np.r_[True, svars[1:] != svars[:-1]])
            return order, starts, svars[starts]

        self.hi_order, self.hi_starts, self.hi_vars = group(self.idx[self.pos])
        self.lo_order, self.lo_starts, self.lo_vars = group(self.idx[self.neg])
        self.int_tol = int_tol
        self.infeas_pad = 1e-6 + 1e-9 * np.abs(self.rhs)
        self.is_bin = np.zeros(num_vars, dtype=bool)
        self.is_bin[list(binary_indices)] = True

    def run(self, lo, hi, max_passes=24) -> bool:
        """Tighten lo/hi in place; False means provably no integer point."""
        if self.num_rows == 0:
            return True
        idx, val, row_of = self.idx, self.val, self.row_of
        for _ in range(max_passes):
            contrib = np.where(self.pos, val * lo[idx], val * hi[idx])
            minact = np.bincount(row_of, weights=contrib, minlength=self.num_rows)
            slack = self.rhs - minact
            if np.any(slack < -self.infeas_pad):
                return False
            # Exact-arithmetic feasible points have slack >= 0, so clamping
            # keeps tiny negative float slack from fabricating tightenings.
            with np.errstate(invalid="ignore"):
                ratio = np.maximum(slack, 0.0)[row_of] / val
                cand_hi = (lo[idx] + ratio)[self.pos][self.hi_order]
                cand_lo = (hi[idx] + ratio)[self.neg][self.lo_order]
            # inf - inf pairs carry no information; drop them outward.
            cand_hi[np.isnan(cand_hi)] = math.inf
            cand_lo[np.isnan(cand_lo)] = -math.inf
            new_hi = np.minimum.reduceat(cand_hi, self.hi_starts) if cand_hi.size else cand_hi
            new_lo = np.maximum.reduceat(cand_lo, self.lo_starts) if cand_lo.size else cand_lo
            # The outward pad only has to cover float rounding of the
            # activity sums, far below every solver tolerance in play.
            new_hi += 1e-12 * (1.0 + np.abs(new_hi))
            new_lo -= 1e-12 * (1.0 + np.abs(new_lo))
            changed = False
            shrunk = new_hi < hi[self.hi_vars] - 1e-12 * (1.0 + np.abs(new_hi))
            if np.any(shrunk):
                hi[self.hi_vars[shrunk]] = new_hi[shrunk]
                changed = True
            grown = new_lo > lo[self.lo_vars] + 1e-12 * (1.0 + np.abs(new_lo))
            if np.any(grown):
                lo[self.lo_vars[grown]] = new_lo[grown]
                changed = True
            snap_off = self.is_bin & (hi < 1.0 - self.int_tol) & (hi > 0.0)
            if np.any(snap_off):
                hi[snap_off] = np.minimum(hi[snap_off], 0.0)
                changed = True
            snap_on = self.is_bin & (lo > self.int_tol) & (lo < 1.0)
            if np.any(snap_on):
                lo[snap_on] = np.maximum(lo[snap_on], 1.0)
                changed = True
            if np.any(lo > hi + 1e-7 * (1.0 + np.abs(hi))):
                return False
            np.minimum(lo, hi, out=lo)  # collapse sub-tolerance inversions
            if not changed:
                break
        return True


def milp_solve(
    model: MilpModel,
    node_limit: int | None = None,
    time_limit: float | None = None,
    abs_gap: float = 1e-6,
    int_tol: float = 1e-6,
) -> MilpSolution:
    """Branch-and-bound maximization over the model's binary variables.

    Best-bound node selection; branching on the most fractional binary; every
    16th node starts a depth-first dive along rounded branches to find
    incumbents early. Optimal means the incumbent is within abs_gap of the
    global optimum.
    """
    t0 = time.perf_counter()
    n = model.num_vars
    obj_const = 0.0

    def finish(status, inc_obj, inc_x, bound, nodes, lp_iters):
        return MilpSolution(
            status,
            inc_obj + obj_const if inc_x is not None else None,
            inc_x,
            bound + obj_const if math.isfinite(bound) else bound,
            MilpStats(nodes, lp_iters, time.perf_counter() - t0),
        )

    pre = _presolve(model, int_tol)
    if pre is None:
        return finish(INFEASIBLE, None, None, -math.inf, 0, 0)
    lo0, hi0, kept = pre
    binary_set = set(model.binary_indices)
    root = _Propagator(kept, n, model.binary_indices, int_tol)
    if not root.run(lo0, hi0):
        return finish(INFEASIBLE, None, None, -math.inf, 0, 0)
    red = _reduce(kept, n, model.objective, lo0, hi0, binary_set, int_tol)
    if red is None:
        return finish(INFEASIBLE, None, None, -math.inf, 0, 0)
    rows_r, keep_cols, lo_r, hi_r, obj_r, obj_const, recover = red
    n_r = len(keep_cols)
    bin_idx = np.array(
        [i for i, j in enumerate(keep_cols) if j in binary_set], dtype=np.int64
    )
    if not rows_r:
        # Bounds are the whole model: each variable sits at its favorable end.
        cvec = np.zeros(n_r)
        for i, ci in obj_r.items():
            cvec[i] = ci
        if np.any((cvec > 0) & ~np.isfinite(hi_r)) or np.any(
            (cvec < 0) & ~np.isfinite(lo_r)
        ):
            return finish(UNBOUNDED, None, None, math.inf, 0, 0)
        x_r = np.where(cvec > 0, hi_r, np.where(cvec < 0, lo_r, np.clip(0.0, lo_r, hi_r)))
        obj = float(cvec @ x_r)
        return finish(OPTIMAL, obj, recover(x_r), obj, 0, 0)
    prop = _Propagator(rows_r, n_r, bin_idx.tolist(), int_tol)
    A, b, c, slo, shi = _standard_form(rows_r, n_r, obj_r)
    lo_ext = np.concatenate([lo_r, slo])
    hi_ext = np.concatenate([hi_r, shi])

    def node_lp(fixings, snap):
        lo_n, hi_n = lo_ext.copy(), hi_ext.copy()
        for j, v in fixings.items():
            lo_n[j] = hi_n[j] = v
        if not prop.run(lo_n[:n_r], hi_n[:n_r]):
            return INFEASIBLE, None, -math.inf, 0, None
        if snap is not None:
            warm = _warm_dual_solve(A, b, c, lo_n, hi_n, snap)
            if warm is not None:
                return warm
        return _solve_standard(A, b, c, lo_n, hi_n)

    incumbent_obj = -math.inf
    incumbent_x = None
    heap: list = []  # (-parent bound, seq, fixings, parent snapshot)
    dive: list = []  # (parent bound, fixings, parent snapshot), length <= 1
    seq = 0
    heapq.heappush(heap, (-math.inf, seq, {}, None))
    seq += 1
    nodes = 0
    lp_iters = 0

    def open_bound(extra=None):
        vals = [-k for k, _, _, _ in heap] + [bnd for bnd, _, _ in dive]
        if extra is not None:
            vals.append(extra)
        if incumbent_x is not None:
            vals.append(incumbent_obj)
        return max(vals, default=-math.inf)

    while heap or dive:
        if node_limit is not None and nodes >= node_limit:
            return finish(NODE_LIMIT, incumbent_obj, incumbent_x, open_bound(), nodes, lp_iters)
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            return finish(TIME_LIMIT, incumbent_obj, incumbent_x, open_bound(), nodes, lp_iters)
        if dive:
            parent_bound, fixings, snap = dive.pop()
        else:
            key, _, fixings, snap = heapq.heappop(heap)
            parent_bound = -key
        if parent_bound <= incumbent_obj + abs_gap:
            continue
        nodes += 1
        status, x_ext, obj, it, node_snap = node_lp(fixings, snap)
        lp_iters += it
        if status == NUMERICAL_FAILURE:
            return finish(
                NUMERICAL_FAILURE, incumbent_obj, incumbent_x, open_bound(parent_bound), nodes, lp_iters
            )
        if status == INFEASIBLE:
            continue
        if status == UNBOUNDED:
            if not fixings:
                return finish(UNBOUNDED, None, None, math.inf, nodes, lp_iters)
            # A child cannot be unbounded when the root relaxation was not.
            return finish(NUMERICAL_FAILURE, incumbent_obj, incumbent_x, math.inf, nodes, lp_iters)
        if obj <= incumbent_obj + abs_gap:
            continue
        if bin_idx.size:
            vals = x_ext[bin_idx]
            frac = np.minimum(np.abs(vals), np.abs(vals - 1.0))
            k = int(np.argmax(frac))
        else:
            frac = np.zeros(0)
            k = -1
        if k < 0 or frac[k] <= int_tol:
            incumbent_obj = obj
            incumbent_x = recover(x_ext[:n_r])
            continue
        j = int(bin_idx[k])
        pref = 1.0 if x_ext[j] >= 0.5 else 0.0
        child_pref = dict(fixings)
        child_pref[j] = pref
        child_other = dict(fixings)
        child_other[j] = 1.0 - pref
        if dive or nodes % 16 == 0:
            heapq.heappush(heap, (-obj, seq, child_other, node_snap))
            seq += 1
            dive.append((obj, child_pref, node_snap))
        else:
            heapq.heappush(heap, (-obj, seq, child_pref, node_snap))
            seq += 1
            heapq.heappush(heap, (-obj, seq, child_other, node_snap))
            seq += 1

    if incumbent_x is None:
        return finish(INFEASIBLE, None, None, -math.inf, nodes, lp_iters)
    return finish(OPTIMAL, incumbent_obj, incumbent_x, incumbent_obj, nodes, lp_iters)


# ---- LP text dump ----


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def model_to_lp_text(model: MilpModel) -> str:
    """Serialize the model in LP text format for external cross-checking."""
    lines = ["Maximize"]
    terms = []
    for j, a in sorted(model.objective.items()):
        sign = "+" if a >= 0 else "-"
        terms.append(f"{sign} {_fmt(abs(a))} {model.names[j]}")
    lines.append(" obj: " + (" ".join(terms) if terms else "0 " + model.names[0] if model.names else ""))
    lines.append("Subject To")
    for i, (coeffs, rel, rhs) in enumerate(model.rows):
        parts = []
        for j, a in coeffs:
            sign = "+" if a >= 0 else "-"
            parts.append(f"{sign} {_fmt(abs(a))} {model.names[j]}")
        op = {"<=": "<=", "=": "=", ">=": ">="}[rel]
        lines.append(f" c{i}: " + " ".join(parts) + f" {op} {_fmt(rhs)}")
    lines.append("Bounds")
    for j, name in enumerate(model.names):
        lo, hi = model.lower[j], model.upper[j]
        if lo == hi:
            lines.append(f" {name} = {_fmt(lo)}")
        elif not math.isfinite(lo) and not math.isfinite(hi):
            lines.append(f" {name} free")
        else:
            left = "-infinity" if not math.isfinite(lo) else _fmt(lo)
            right = "+infinity" if not math.isfinite(hi) else _fmt(hi)
            lines.append(f" {left} <= {name} <= {right}")
    bins = model.binary_indices
    if bins:
        lines.append("Binaries")
        lines.append(" " + " ".join(model.names[j] for j in bins))
    lines.append("End")
    return "\n".join(lines) + "\n"
