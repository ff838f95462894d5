"""Linear and mixed-integer linear programming on dense numpy tableaus.

The embedded solver is a bounded-variable primal simplex (two phase,
Dantzig pricing with a Bland fallback once degeneracy sets in) wrapped in
depth-first branch and bound over binary variables.  It is sized for
models with a few hundred rows and columns and a modest number of
binaries, which is what the model builders in this package produce.
Cutting planes, presolve, warm starts and general integers are out of
scope on purpose.

There is also a fixed-format MPS writer and parser, and a bridge that
ships a model to an external command line solver and reads the solution
back.  The bridge never falls back silently: a misconfigured or failing
external solver raises BridgeError with the raw output attached.
"""

from __future__ import annotations

import math
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"

STATUS_OPTIMAL = "optimal"
STATUS_INFEASIBLE = "infeasible"
STATUS_UNBOUNDED = "unbounded"
STATUS_LIMIT = "limit-hit"

FEAS_TOL = 1e-6
INT_TOL = 1e-6
GAP_TOL = 1e-6

# rolling counters, mostly for tests that pin down how many solves an
# algorithm is allowed to spend
SOLVE_COUNTS = {"lp": 0, "milp": 0, "external": 0}


def reset_solve_counts() -> None:
    for k in SOLVE_COUNTS:
        SOLVE_COUNTS[k] = 0


class ModelError(ValueError):
    """Raised when a model violates its own declared structure."""


class BridgeError(RuntimeError):
    """Raised when the external solver bridge fails.

    Carries the raw solver output (stdout+stderr or file contents) in
    ``raw_output`` so the caller can see what actually happened.
    """

    def __init__(self, message: str, raw_output: str = ""):
        super().__init__(message)
        self.raw_output = raw_output


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = math.inf
    kind: str = CONTINUOUS


@dataclass
class Constraint:
    coeffs: dict[str, float]
    sense: str  # "<=", "=", ">="
    rhs: float
    name: str = ""


@dataclass
class MilpModel:
    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[str, float] = field(default_factory=dict)
    sense: str = "min"
    objective_constant: float = 0.0
    name: str = "MODEL"


@dataclass
class MilpSolution:
    status: str
    objective: float | None
    values: dict[str, float]
    nodes: int = 0
    iterations: int = 0
    wall_time: float = 0.0

    @property
    def certified(self) -> bool:
        return self.status == STATUS_OPTIMAL


def validate_model(model: MilpModel) -> None:
    """Check declared structure; raise ModelError on the first violation."""
    seen: set[str] = set()
    for v in model.variables:
        if not v.name:
            raise ModelError("variable with empty name")
        if v.name in seen:
            raise ModelError(f"duplicate variable name {v.name!r}")
        seen.add(v.name)
        if v.kind not in (CONTINUOUS, BINARY):
            raise ModelError(f"unknown variable kind {v.kind!r} for {v.name}")
        if math.isnan(v.lb) or math.isnan(v.ub):
            raise ModelError(f"NaN bound on {v.name}")
        if v.lb > v.ub:
            raise ModelError(f"empty bound interval on {v.name}")
        if v.kind == BINARY and (v.lb < -0.0 or v.ub > 1.0):
            raise ModelError(f"binary {v.name} has bounds outside [0, 1]")
    for i, c in enumerate(model.constraints):
        if c.sense not in ("<=", "=", ">="):
            raise ModelError(f"constraint {i}: bad sense {c.sense!r}")
        if not math.isfinite(c.rhs):
            raise ModelError(f"constraint {i}: non-finite rhs")
        for n, a in c.coeffs.items():
            if n not in seen:
                raise ModelError(f"constraint {i}: undeclared variable {n!r}")
            if not math.isfinite(a):
                raise ModelError(f"constraint {i}: non-finite coefficient on {n}")
    if model.sense not in ("min", "max"):
        raise ModelError(f"bad objective sense {model.sense!r}")
    for n, a in model.objective.items():
        if n not in seen:
            raise ModelError(f"objective references undeclared variable {n!r}")
        if not math.isfinite(a):
            raise ModelError(f"objective has non-finite coefficient on {n}")
    if not math.isfinite(model.objective_constant):
        raise ModelError("non-finite objective constant")


class ModelBuilder:
    """Incremental construction helper used by all the model builders."""

    def __init__(self, name: str = "MODEL"):
        self._m = MilpModel(name=name)
        self._names: set[str] = set()

    def var(self, name: str, lb: float = 0.0, ub: float = math.inf,
            kind: str = CONTINUOUS) -> str:
        if name in self._names:
            raise ModelError(f"duplicate variable name {name!r}")
        self._names.add(name)
        self._m.variables.append(Variable(name, float(lb), float(ub), kind))
        return name

    def con(self, coeffs: dict[str, float], sense: str, rhs: float,
            name: str = "") -> None:
        # drop explicit zeros so row supports stay tight
        cc = {k: float(v) for k, v in coeffs.items() if v != 0.0}
        self._m.constraints.append(Constraint(cc, sense, float(rhs), name))

    def objective(self, coeffs: dict[str, float], sense: str = "min",
                  constant: float = 0.0) -> None:
        self._m.objective = {k: float(v) for k, v in coeffs.items() if v != 0.0}
        self._m.sense = sense
        self._m.objective_constant = float(constant)

    def has_var(self, name: str) -> bool:
        return name in self._names

    def build(self) -> MilpModel:
        validate_model(self._m)
        return self._m


# ---------------------------------------------------------------------------
# simplex core
# ---------------------------------------------------------------------------

_BASIC, _NB_LB, _NB_UB, _NB_FREE = 0, 1, 2, 3


class _Standard:
    """Equality standard form: A x = b with box bounds on every column.

    Columns are [structural | slack per row | artificials added later].
    Slack bounds encode the row sense: [0, inf) for <=, (-inf, 0] for >=,
    [0, 0] for equalities.

    Rows and structural columns are equilibrated with powers of two
    before the slacks are appended, which is exact in floating point and
    keeps rows that mix small dynamics coefficients with large bridging
    constants from breeding ill-conditioned bases.  ``col_scale`` maps a
    scaled structural solution back to model units.
    """

    def __init__(self, model: MilpModel, lb_over=None, ub_over=None):
        ns = len(model.variables)
        m = len(model.constraints)
        idx = {v.name: j for j, v in enumerate(model.variables)}
        A = np.zeros((m, ns))
        b = np.zeros(m)
        lo = np.empty(ns + m)
        hi = np.empty(ns + m)
        for j, v in enumerate(model.variables):
            lo[j] = v.lb if lb_over is None else lb_over[j]
            hi[j] = v.ub if ub_over is None else ub_over[j]
        for i, c in enumerate(model.constraints):
            for n, a in c.coeffs.items():
                A[i, idx[n]] += a
            b[i] = c.rhs
        c_struct = np.zeros(ns + m)
        for n, a in model.objective.items():
            c_struct[idx[n]] += a
        if model.sense == "max":
            c_struct = -c_struct

        col_scale = np.ones(ns)
        if m:
            absA = np.abs(A)
            for _ in range(2):
                rmax = absA.max(axis=1)
                rs = np.where(rmax > 0, np.exp2(-np.round(np.log2(
                    np.where(rmax > 0, rmax, 1.0)))), 1.0)
                absA *= rs[:, None]
                A *= rs[:, None]
                b *= rs
                cmax = absA.max(axis=0)
                cs = np.where(cmax > 0, np.exp2(-np.round(np.log2(
                    np.where(cmax > 0, cmax, 1.0)))), 1.0)
                absA *= cs[None, :]
                A *= cs[None, :]
                col_scale *= cs
        # move the boxes and costs into scaled units (x_model = cs * x')
        with np.errstate(invalid="ignore"):
            lo[:ns] = lo[:ns] / col_scale
            hi[:ns] = hi[:ns] / col_scale
        c_struct[:ns] *= col_scale

        full = np.zeros((m, ns + m))
        full[:, :ns] = A
        for i, c in enumerate(model.constraints):
            full[i, ns + i] = 1.0
            if c.sense == "<=":
                lo[ns + i], hi[ns + i] = 0.0, math.inf
            elif c.sense == ">=":
                lo[ns + i], hi[ns + i] = -math.inf, 0.0
            else:
                lo[ns + i], hi[ns + i] = 0.0, 0.0
        self.A, self.b, self.lo, self.hi = full, b, lo, hi
        self.cost = c_struct
        self.ns, self.m = ns, m
        self.model = model
        self.col_scale = col_scale


_DIRTY = "__dirty__"


def _slack_start(std: _Standard, lo, hi):
    """All-slack basis with each structural on its cost-preferred bound.

    Such a start is dual feasible outright, which lets the dual simplex
    solve the whole problem without artificial columns.  Returns None
    when some column's cost pulls toward an infinite bound (the only
    shape that can make the problem unbounded).
    """
    ns, m = std.ns, std.m
    if m == 0:
        return None
    c = std.cost[:ns]
    lof = np.isfinite(lo[:ns])
    hif = np.isfinite(hi[:ns])
    if np.any(((c > 0) & ~lof) | ((c < 0) & ~hif)):
        return None
    vstat = np.empty(ns + m, dtype=np.int8)
    vstat[:ns] = np.where(
        c > 0, _NB_LB,
        np.where(c < 0, _NB_UB,
                 np.where(lof, _NB_LB, np.where(hif, _NB_UB, _NB_FREE))))
    vstat[ns:] = _BASIC
    basis = np.arange(ns, ns + m, dtype=np.int64)
    return basis, vstat


def _simplex(std: _Standard, lo_over=None, hi_over=None,
             max_iter: int | None = None):
    """Two-phase bounded-variable primal simplex.

    Returns (status, x_structural, objective_internal, iterations,
    warm_state) where the objective is in min sense without the model
    constant and warm_state is the final (basis, column status) pair
    when it is reusable, else None.  ``lo_over``/``hi_over`` replace the
    standard form's column bounds (already in scaled units) so one
    standard form can serve many bound-tightened subproblems.

    The tableau is rebuilt from the true basis matrix at a fixed cadence
    and again before any claim of optimality, because rank-one updates
    drift badly on long runs and a drifted reduced-cost row can both
    terminate early and certify an infeasible point.  A walk whose final
    basic values violate their own bounds is restarted once with
    conservative settings; if that also fails the solver reports a limit
    instead of a wrong "optimal".
    """
    A, b = std.A, std.b
    lo_in = std.lo if lo_over is None else lo_over
    hi_in = std.hi if hi_over is None else hi_over
    m, ns = std.m, std.ns
    ncols = A.shape[1]

    if m == 0:
        # pure bound problem: park each column at its cheapest bound
        x = np.zeros(ncols)
        c = std.cost
        for j in range(ncols):
            if lo_in[j] > hi_in[j] + 1e-12:
                return STATUS_INFEASIBLE, None, None, 0, None
            if c[j] > 0:
                if not math.isfinite(lo_in[j]):
                    return STATUS_UNBOUNDED, None, None, 0, None
                x[j] = lo_in[j]
            elif c[j] < 0:
                if not math.isfinite(hi_in[j]):
                    return STATUS_UNBOUNDED, None, None, 0, None
                x[j] = hi_in[j]
            else:
                x[j] = lo_in[j] if math.isfinite(lo_in[j]) else (
                    hi_in[j] if math.isfinite(hi_in[j]) else 0.0)
        return STATUS_OPTIMAL, x[:ns] * std.col_scale, float(c @ x), 0, None

    if np.any(lo_in > hi_in + 1e-12):
        return STATUS_INFEASIBLE, None, None, 0, None

    if max_iter is None:
        max_iter = max(4000, 40 * (m + ns))
    total = [0]

    def attempt(refresh_every: int, bland_after: int):
        spent = [0]
        lo = lo_in.copy()
        hi = hi_in.copy()

        # nonbasic start values
        x = np.zeros(ncols + m)  # room for artificials appended later
        status = np.full(ncols + m, _NB_LB, dtype=np.int8)
        for j in range(ncols):
            if math.isfinite(lo[j]):
                x[j], status[j] = lo[j], _NB_LB
            elif math.isfinite(hi[j]):
                x[j], status[j] = hi[j], _NB_UB
            else:
                x[j], status[j] = 0.0, _NB_FREE

        resid = b - A[:, :ns] @ x[:ns]  # slacks are at 0 in x right now
        basis = np.empty(m, dtype=np.int64)
        xB = np.zeros(m)
        art_cols: list[np.ndarray] = []
        art_sign: list[float] = []
        art_rows: list[int] = []
        for i in range(m):
            sj = ns + i
            if lo[sj] - 1e-12 <= resid[i] <= hi[sj] + 1e-12:
                basis[i] = sj
                xB[i] = resid[i]
                status[sj] = _BASIC
            else:
                # clamp the slack, cover the rest with an artificial
                if resid[i] < lo[sj]:
                    x[sj], status[sj] = lo[sj], _NB_LB
                else:
                    x[sj], status[sj] = hi[sj], _NB_UB
                rem = resid[i] - x[sj]
                col = np.zeros(m)
                col[i] = math.copysign(1.0, rem) if rem != 0 else 1.0
                art_cols.append(col)
                art_sign.append(col[i])
                art_rows.append(i)
                basis[i] = ncols + len(art_cols) - 1
                xB[i] = abs(rem)

        na = len(art_cols)
        if na:
            Afull = np.hstack([A, np.array(art_cols).T])
            lo = np.concatenate([lo, np.zeros(na)])
            hi = np.concatenate([hi, np.full(na, math.inf)])
        else:
            Afull = A
            lo = lo[:ncols]
            hi = hi[:ncols]
        nall = Afull.shape[1]
        x = x[:nall]
        status = status[:nall]
        status[ncols:] = _BASIC

        # initial tableau: basis matrix is diagonal +-1
        scale = np.ones(m)
        for r, s in zip(art_rows, art_sign):
            scale[r] = s
        T = Afull / scale[:, None]

        fixed = hi - lo <= 1e-15

        def refactor(cvec: np.ndarray):
            """Rebuild T, xB and the duals from the actual basis matrix."""
            nonlocal T, xB
            Bmat = Afull[:, basis]
            try:
                T = np.linalg.solve(Bmat, Afull)
                nbmask = status != _BASIC
                xB = np.linalg.solve(Bmat, b - Afull[:, nbmask] @ x[nbmask])
                y = np.linalg.solve(Bmat.T, cvec[basis])
            except np.linalg.LinAlgError:
                return None
            z = cvec - y @ Afull
            z[basis] = 0.0
            return z

        def run_phase(cvec: np.ndarray) -> str:
            nonlocal T, xB, basis, x, status
            z = cvec - cvec[basis] @ T
            degen_streak = 0
            bland = False
            since = 0
            want_fresh = False
            while True:
                total[0] += 1
                spent[0] += 1
                if spent[0] > max_iter:
                    return STATUS_LIMIT
                if want_fresh or since >= refresh_every:
                    z2 = refactor(cvec)
                    if z2 is None:
                        return _DIRTY
                    z = z2
                    since = 0
                    want_fresh = False
                nb_lb = (status == _NB_LB) & ~fixed
                nb_ub = (status == _NB_UB) & ~fixed
                nb_fr = status == _NB_FREE
                viol = np.zeros(nall)
                viol[nb_lb | nb_fr] = np.maximum(viol[nb_lb | nb_fr],
                                                 -z[nb_lb | nb_fr])
                viol[nb_ub | nb_fr] = np.maximum(viol[nb_ub | nb_fr],
                                                 z[nb_ub | nb_fr])
                if not bland:
                    j = int(np.argmax(viol))
                    looks_done = viol[j] <= 1e-9
                else:
                    cand = np.nonzero(viol > 1e-9)[0]
                    looks_done = cand.size == 0
                    j = int(cand[0]) if cand.size else 0
                if looks_done:
                    if since > 0:
                        # only claim optimality off fresh factors
                        want_fresh = True
                        continue
                    bv = np.maximum(lo[basis] - xB, xB - hi[basis])
                    if np.any(bv > 1e-6 * (1.0 + np.abs(xB))):
                        if os.environ.get("MYOPIC_LP_DEBUG"):
                            i = int(np.argmax(bv))
                            print(f"[lp-dirty] audit col={basis[i]} "
                                  f"val={xB[i]} box=[{lo[basis[i]]},"
                                  f"{hi[basis[i]]}] viol={bv[i]:.3g}",
                                  flush=True)
                        # pricing is clean on fresh factors, so the basis is
                        # dual feasible; primal pivots cannot pull a basic
                        # variable back inside its box, but dual ones can
                        return "__audit__"
                    return STATUS_OPTIMAL
                if status[j] == _NB_UB or (status[j] == _NB_FREE and z[j] > 0):
                    dirsign = -1.0
                else:
                    dirsign = 1.0
                colj = T[:, j]
                rate = dirsign * colj
                loB = lo[basis]
                hiB = hi[basis]
                # two-pass ratio test: pass 1 limits the step against bounds
                # relaxed by a small tolerance, which keeps rows with tiny
                # rates from dictating the pivot; pass 2 then picks the
                # numerically largest pivot among rows whose true ratio fits
                # under that limit.  Basic values may drift past a bound by
                # at most the relaxation, which the pricing clamp treats as
                # degenerate on later iterations.
                # even near-zero rates take part: their relaxed ratio caps
                # the step before the leak past their bound can exceed the
                # relaxation, while pass 2 keeps them out of the pivot seat
                true_r = np.full(m, math.inf)
                relaxed = np.full(m, math.inf)
                pos = rate > 1e-11
                if pos.any():
                    d = 1e-7 * (1.0 + np.abs(loB[pos]))
                    gapv = xB[pos] - loB[pos]
                    true_r[pos] = np.maximum(gapv, 0.0) / rate[pos]
                    relaxed[pos] = np.maximum(gapv + d, 0.0) / rate[pos]
                neg = rate < -1e-11
                if neg.any():
                    d = 1e-7 * (1.0 + np.abs(hiB[neg]))
                    gapv = hiB[neg] - xB[neg]
                    true_r[neg] = np.maximum(gapv, 0.0) / (-rate[neg])
                    relaxed[neg] = np.maximum(gapv + d, 0.0) / (-rate[neg])
                tflip = hi[j] - lo[j]
                tmax = relaxed.min() if m else math.inf
                if not math.isfinite(min(tmax, tflip)):
                    if since > 0:
                        # confirm unboundedness off fresh factors too
                        want_fresh = True
                        continue
                    return STATUS_UNBOUNDED
                if tflip <= tmax and math.isfinite(tflip):
                    # bound flip, basis unchanged
                    xB = xB - rate * tflip
                    x[j] = hi[j] if dirsign > 0 else lo[j]
                    status[j] = _NB_UB if dirsign > 0 else _NB_LB
                    degen_streak = 0
                    bland = False
                    since += 1
                    continue
                near = np.nonzero(true_r <= tmax)[0]
                solid = near[np.abs(colj[near]) >= 1e-9]
                if solid.size:
                    near = solid
                if bland:
                    r = int(near[np.argmin(basis[near])])
                else:
                    r = int(near[np.argmax(np.abs(colj[near]))])
                t = true_r[r]
                if t <= 1e-10:
                    degen_streak += 1
                    if degen_streak > bland_after:
                        bland = True
                else:
                    degen_streak = 0
                    bland = False
                leave = basis[r]
                enter_val = (x[j] + dirsign * t)
                xB = xB - rate * t
                # leaving variable parks at the bound it ran into
                if rate[r] > 0:
                    x[leave] = loB[r]
                    status[leave] = _NB_LB
                else:
                    x[leave] = hiB[r]
                    status[leave] = _NB_UB
                piv = T[r, j]
                trow = T[r] / piv
                coljc = colj.copy()
                coljc[r] = 0.0
                T -= np.outer(coljc, trow)
                T[r] = trow
                zj = z[j]
                z = z - zj * trow
                xB[r] = enter_val
                basis[r] = j
                status[j] = _BASIC
                since += 1
                if abs(piv) < 1e-7:
                    # a near-singular pivot slipped through; rebuild before
                    # the damage compounds
                    want_fresh = True

        if na:
            c1 = np.zeros(nall)
            c1[ncols:] = 1.0
            st = run_phase(c1)
            if st == _DIRTY or st == "__audit__":
                return _DIRTY
            if st != STATUS_OPTIMAL:
                # phase 1 cannot be honestly unbounded; treat as a limit
                return STATUS_LIMIT, None, None, None
            art_basic = basis >= ncols
            infeas = float(np.abs(xB[art_basic]).sum()) \
                if art_basic.any() else 0.0
            if infeas > 1e-7 * (1.0 + float(np.abs(b).max())):
                return STATUS_INFEASIBLE, None, None, None
            hi[ncols:] = 0.0
            lo[ncols:] = 0.0
            x[ncols:] = 0.0
            fixed = hi - lo <= 1e-15

        c2 = np.zeros(nall)
        c2[:ncols] = std.cost
        st = run_phase(c2)
        if st == _DIRTY:
            return _DIRTY
        if st == "__audit__":
            if int(basis.max()) < ncols:
                return "__repair__", basis.copy(), status[:ncols].copy(), None
            if os.environ.get("MYOPIC_LP_DEBUG"):
                print(f"[lp-audit] artificial basic blocks repair", flush=True)
            return _DIRTY
        if st in (STATUS_LIMIT, STATUS_UNBOUNDED):
            return st, None, None, None
        xfull = x.copy()
        xfull[basis] = xB
        obj = float(c2 @ xfull)
        warm = None
        if int(basis.max()) < ncols:
            # basis free of artificials: reusable for nearby bound sets
            warm = (basis.copy(), status[:ncols].copy())
        return STATUS_OPTIMAL, xfull[:ns], obj, warm

    def repair(marked):
        """Finish an audit-failed walk with dual pivots from its basis."""
        rr = _dual_simplex(std, lo_in, hi_in, marked[1], marked[2])
        if os.environ.get("MYOPIC_LP_DEBUG"):
            tag = rr if rr == _DIRTY else rr[0]
            print(f"[lp-repair] outcome={tag}", flush=True)
        if rr == _DIRTY:
            return None
        return rr

    # preferred route: dual simplex off the all-slack basis, which needs
    # no artificial columns and restores bound feasibility natively; the
    # two-phase primal is the fallback for starts it cannot accept
    start = _slack_start(std, lo_in, hi_in)
    if start is not None:
        rr = _dual_simplex(std, lo_in, hi_in, start[0], start[1],
                           max_iter=max_iter)
        if rr != _DIRTY:
            return rr

    res = attempt(250, 40)
    if isinstance(res, tuple) and res[0] == "__repair__":
        fix = repair(res)
        if fix is not None:
            return fix[0], fix[1], fix[2], total[0] + fix[3], fix[4]
        res = _DIRTY
    if res == _DIRTY:
        res = attempt(40, 12)
        if isinstance(res, tuple) and res[0] == "__repair__":
            fix = repair(res)
            if fix is not None:
                return fix[0], fix[1], fix[2], total[0] + fix[3], fix[4]
            res = _DIRTY
    if res == _DIRTY:
        return STATUS_LIMIT, None, None, total[0], None
    xs = res[1] * std.col_scale if res[1] is not None else None
    return res[0], xs, res[2], total[0], res[3]


def _dual_simplex(std: _Standard, lo_in, hi_in, basis0, stat0,
                  max_iter: int | None = None):
    """Re-optimize from a known optimal basis after a bound change.

    Same return shape as :func:`_simplex`, plus the sentinel ``_DIRTY``
    whenever the warm start cannot be trusted; the caller then falls
    back to a cold primal solve, so nothing here is load-bearing for
    correctness.  The ratio test flips boxed columns that are cheaper
    than the pivot (long-step rule), which matters for the many binaries
    these models carry.  Claims are only made off freshly factorized
    bases, mirroring the primal's discipline.
    """
    def _dbail(site):
        if os.environ.get("MYOPIC_LP_DEBUG"):
            print(f"[dual-dirty] {site}", flush=True)
        return _DIRTY

    A, b, cost = std.A, std.b, std.cost
    m, ns = std.m, std.ns
    ncols = A.shape[1]
    if m == 0 or basis0 is None:
        return _dbail("no-basis")
    if max_iter is None:
        max_iter = 2000
    if np.any(lo_in > hi_in + 1e-12):
        return STATUS_INFEASIBLE, None, None, 0, None

    lo = lo_in
    hi = hi_in
    basis = basis0.copy()
    vstat = stat0.copy()
    if (np.count_nonzero(vstat == _BASIC) != m
            or not np.all(vstat[basis] == _BASIC)):
        return _dbail("basis-mismatch")
    fixed = hi - lo <= 1e-15

    # nonbasic columns sit on their (possibly freshly tightened) bounds
    x = np.zeros(ncols)
    at_lb = vstat == _NB_LB
    at_ub = vstat == _NB_UB
    at_fr = vstat == _NB_FREE
    if np.any(at_lb & ~np.isfinite(lo)) or np.any(at_ub & ~np.isfinite(hi)):
        return _dbail("bound-open")
    if np.any(at_fr & ((lo > 0.0) | (hi < 0.0))):
        return _dbail("free-shifted")
    x[at_lb] = lo[at_lb]
    x[at_ub] = hi[at_ub]

    T = np.empty((0, 0))
    xB = np.empty(0)

    def refactor():
        nonlocal T, xB
        Bmat = A[:, basis]
        try:
            T = np.linalg.solve(Bmat, A)
            nbmask = vstat != _BASIC
            xB = np.linalg.solve(Bmat, b - A[:, nbmask] @ x[nbmask])
            y = np.linalg.solve(Bmat.T, cost[basis])
        except np.linalg.LinAlgError:
            return None
        z = cost - y @ A
        z[basis] = 0.0
        return z

    def dual_bad(z, tol):
        bad = np.where((vstat == _NB_LB) & ~fixed, -z, 0.0)
        bad = np.maximum(bad, np.where((vstat == _NB_UB) & ~fixed, z, 0.0))
        bad = np.maximum(bad, np.where(vstat == _NB_FREE, np.abs(z), 0.0))
        return float(bad.max(initial=0.0)) > tol

    z = refactor()
    if z is None or dual_bad(z, 1e-7):
        return _dbail("entry-duals")

    spent = 0
    since = 0
    want_fresh = False
    stall = 0
    while True:
        spent += 1
        if spent > max_iter:
            return _dbail("iter-limit")
        if want_fresh or since >= 30:
            z = refactor()
            if z is None or dual_bad(z, 1e-6):
                return _dbail("drifted-duals")
            since = 0
            want_fresh = False
        loB = lo[basis]
        hiB = hi[basis]
        vs = np.maximum(loB - xB, xB - hiB) / (1.0 + np.abs(xB))
        r = int(np.argmax(vs)) if m else 0
        if math.isnan(vs[r]) or vs[r] == math.inf:
            return _dbail("bad-residual")
        if vs[r] <= 1e-7:
            if since > 0:
                # only claim feasibility (hence optimality) off fresh factors
                want_fresh = True
                continue
            if dual_bad(z, 1e-7):
                return _dbail("exit-duals")
            xfull = x.copy()
            xfull[basis] = xB
            obj = float(cost @ xfull)
            warm = None
            if int(basis.max()) < ncols:
                warm = (basis.copy(), vstat.copy())
            return (STATUS_OPTIMAL, xfull[:ns] * std.col_scale, obj,
                    spent, warm)
        below = xB[r] < loB[r]
        rem = (loB[r] - xB[r]) if below else (xB[r] - hiB[r])
        alpha = T[r]
        elig_lb = (vstat == _NB_LB) & ~fixed
        elig_ub = (vstat == _NB_UB) & ~fixed
        elig_fr = vstat == _NB_FREE
        if below:
            mask = ((elig_lb & (alpha < -1e-11)) | (elig_ub & (alpha > 1e-11))
                    | (elig_fr & (np.abs(alpha) > 1e-11)))
        else:
            mask = ((elig_lb & (alpha > 1e-11)) | (elig_ub & (alpha < -1e-11))
                    | (elig_fr & (np.abs(alpha) > 1e-11)))
        cand = np.nonzero(mask)[0]
        if cand.size == 0:
            if since > 0:
                # confirm the certificate off fresh factors
                want_fresh = True
                continue
            return STATUS_INFEASIBLE, None, None, spent, None
        zmag = np.where(vstat == _NB_UB, -z, z)
        zmag = np.where(vstat == _NB_FREE, np.abs(z), zmag)
        rho = np.maximum(zmag[cand], 0.0) / np.abs(alpha[cand])
        ordpos = np.argsort(rho, kind="stable")
        order = cand[ordpos].tolist()
        rho_ord = rho[ordpos].tolist()
        caps = [abs(alpha[j]) * (hi[j] - lo[j])
                if math.isfinite(hi[j] - lo[j]) else math.inf for j in order]
        flips: list[int] = []
        ppos = -1
        left = float(rem)
        for pos, j in enumerate(order):
            if caps[pos] < left - 1e-12:
                flips.append(j)
                left -= caps[pos]
            else:
                ppos = pos
                break
        if ppos < 0:
            if since > 0:
                want_fresh = True
                continue
            # the walk used every above-threshold column; certify only if
            # the sub-threshold ones cannot absorb the rest either
            width_all = hi - lo
            if below:
                good = ((elig_lb & (alpha < 0.0)) | (elig_ub & (alpha > 0.0))
                        | (elig_fr & (alpha != 0.0)))
            else:
                good = ((elig_lb & (alpha > 0.0)) | (elig_ub & (alpha < 0.0))
                        | (elig_fr & (alpha != 0.0)))
            total = float(np.sum(np.abs(alpha[good]) * width_all[good]))
            if math.isnan(total):
                total = math.inf  # zero rate on an unbounded box
            if total < rem - 1e-9 * (1.0 + rem):
                return STATUS_INFEASIBLE, None, None, spent, None
            return _dbail("flip-exhausted")
        # stability look-ahead across exact ratio ties only; skipping a
        # strictly cheaper column would push its reduced cost past zero
        pivot_j = order[ppos]
        rho_p = rho_ord[ppos]
        tie = rho_p * (1.0 + 1e-9) + 1e-15
        for pos in range(ppos + 1, len(order)):
            if rho_ord[pos] > tie:
                break
            j2 = order[pos]
            if caps[pos] >= left - 1e-12 and abs(alpha[j2]) > abs(
                    alpha[pivot_j]):
                pivot_j = j2
        if rho_p <= 1e-12:
            stall += 1
            if stall > 50:
                return _dbail("stalled")
        else:
            stall = 0
        for k in flips:
            if vstat[k] == _NB_LB:
                delta = hi[k] - lo[k]
                x[k] = hi[k]
                vstat[k] = _NB_UB
            else:
                delta = lo[k] - hi[k]
                x[k] = lo[k]
                vstat[k] = _NB_LB
            xB = xB - T[:, k] * delta
        j = pivot_j
        if vstat[j] == _NB_LB:
            dirsign = 1.0
        elif vstat[j] == _NB_UB:
            dirsign = -1.0
        else:
            dirsign = -math.copysign(1.0, alpha[j]) if below \
                else math.copysign(1.0, alpha[j])
        piv = alpha[j]
        t = left / abs(piv)
        enter_val = x[j] + dirsign * t
        colj = T[:, j].copy()
        xB = xB - colj * (dirsign * t)
        leave = basis[r]
        if below:
            x[leave] = loB[r]
            vstat[leave] = _NB_LB
        else:
            x[leave] = hiB[r]
            vstat[leave] = _NB_UB
        trow = T[r] / piv
        colj[r] = 0.0
        T -= np.outer(colj, trow)
        T[r] = trow
        z = z - z[j] * trow
        z[j] = 0.0
        xB[r] = enter_val
        basis[r] = j
        vstat[j] = _BASIC
        since += 1
        if abs(piv) < 1e-7:
            want_fresh = True


def solve_lp(model: MilpModel, lb_override=None, ub_override=None,
             max_iter: int | None = None) -> MilpSolution:
    """Solve the LP relaxation of ``model`` (binaries become boxes)."""
    validate_model(model)
    SOLVE_COUNTS["lp"] += 1
    t0 = time.perf_counter()
    std = _Standard(model, lb_override, ub_override)
    status, xs, obj, iters, _ = _simplex(std, max_iter=max_iter)
    wall = time.perf_counter() - t0
    if status != STATUS_OPTIMAL:
        return MilpSolution(status, None, {}, 0, iters, wall)
    values = {v.name: float(xs[j]) for j, v in enumerate(model.variables)}
    objective = obj + model.objective_constant if model.sense == "min" \
        else -obj + model.objective_constant
    return MilpSolution(STATUS_OPTIMAL, float(objective), values, 0, iters, wall)


def _point_violation(model: MilpModel, vals: dict[str, float]) -> float:
    """Largest scaled bound or row violation of a candidate point."""
    worst = 0.0
    for v in model.variables:
        xv = vals[v.name]
        over = max(v.lb - xv, xv - v.ub)
        worst = max(worst, over / (1.0 + abs(xv)))
    for con in model.constraints:
        lhs = sum(a * vals[n] for n, a in con.coeffs.items())
        if con.sense == "<=":
            over = lhs - con.rhs
        elif con.sense == ">=":
            over = con.rhs - lhs
        else:
            over = abs(lhs - con.rhs)
        worst = max(worst, over / (1.0 + abs(con.rhs)))
    return worst


def solve_milp(model: MilpModel, gap: float = GAP_TOL,
               node_limit: int | None = None,
               time_limit: float | None = None) -> MilpSolution:
    """Depth-first branch and bound over the binary variables.

    Branching picks the most fractional binary (ties to the lowest
    index); of the two children the one whose bound looks better is
    explored first.  Deterministic for a fixed model.  ``node_limit`` or
    ``time_limit`` turn the status into "limit-hit" with the incumbent
    (if any) attached.

    The standard form is built once and every child starts from its
    parent's optimal basis via the dual simplex; any node the warm path
    declines is re-solved cold, so the warm machinery can only cost
    time, never answers.  Setting MYOPIC_WARM_CHECK in the environment
    re-solves every warm node cold and asserts agreement.
    """
    validate_model(model)
    SOLVE_COUNTS["milp"] += 1
    t0 = time.perf_counter()
    base_lb = np.array([v.lb for v in model.variables])
    base_ub = np.array([v.ub for v in model.variables])
    bin_idx = np.array([j for j, v in enumerate(model.variables)
                        if v.kind == BINARY], dtype=np.int64)
    # internal objective is min sense
    flip = -1.0 if model.sense == "max" else 1.0
    std = _Standard(model)
    ns = std.ns
    shadow = bool(os.environ.get("MYOPIC_WARM_CHECK"))

    def node_lp(lb, ub, warm):
        SOLVE_COUNTS["lp"] += 1
        lo = std.lo.copy()
        hi = std.hi.copy()
        lo[:ns] = lb / std.col_scale
        hi[:ns] = ub / std.col_scale
        if warm is not None:
            res = _dual_simplex(std, lo, hi, warm[0], warm[1])
            if res != _DIRTY:
                if shadow:
                    cold = _simplex(std, lo, hi)
                    assert cold[0] == res[0], (cold[0], res[0])
                    if res[0] == STATUS_OPTIMAL:
                        drift = abs(cold[2] - res[2])
                        assert drift <= 1e-6 * (1.0 + abs(cold[2])), drift
                return res
        return _simplex(std, lo, hi)

    inc_vals: dict[str, float] | None = None
    inc_obj = math.inf
    nodes = 0
    iters = 0
    hit_limit = False
    # stack entries: (parent bound, lb array, ub array, parent basis)
    stack: list[tuple[float, np.ndarray, np.ndarray, object]] = [
        (-math.inf, base_lb, base_ub, None)]
    names = [v.name for v in model.variables]

    while stack:
        if node_limit is not None and nodes >= node_limit:
            hit_limit = True
            break
        if time_limit is not None and time.perf_counter() - t0 > time_limit:
            hit_limit = True
            break
        pbound, lb, ub, warm = stack.pop()
        slack = gap * max(1.0, abs(inc_obj)) if math.isfinite(inc_obj) else 0.0
        if pbound >= inc_obj - slack:
            continue
        status, xs, obj, nit, wstate = node_lp(lb, ub, warm)
        nodes += 1
        iters += nit
        if status == STATUS_INFEASIBLE:
            continue
        if status == STATUS_UNBOUNDED:
            wall = time.perf_counter() - t0
            return MilpSolution(STATUS_UNBOUNDED, None, {}, nodes, iters, wall)
        if status == STATUS_LIMIT:
            # LP did not converge; treat its bound as unknown and keep the
            # node closed rather than risk wrong pruning
            if os.environ.get("MYOPIC_LP_DEBUG"):
                print(f"[milp-limit] node={nodes} warm={warm is not None} "
                      f"iters={nit}", flush=True)
            hit_limit = True
            continue
        bound = obj + flip * model.objective_constant
        if bound >= inc_obj - slack:
            continue
        if bin_idx.size:
            fr = np.abs(xs[bin_idx] - np.round(xs[bin_idx]))
            worst = int(np.argmax(fr))
            is_integral = fr[worst] <= INT_TOL
        else:
            is_integral = True
        if is_integral:
            vals = {n: float(xs[k]) for k, n in enumerate(names)}
            for j in bin_idx:
                vals[names[j]] = float(round(vals[names[j]]))
            if _point_violation(model, vals) > 1e-5:
                # the node LP handed back a point that does not satisfy its
                # own model; refuse the incumbent and degrade the status
                if os.environ.get("MYOPIC_LP_DEBUG"):
                    print(f"[milp-refuse] node={nodes} "
                          f"viol={_point_violation(model, vals):.3g}",
                          flush=True)
                hit_limit = True
                continue
            raw = sum(a * vals.get(n, 0.0)
                      for n, a in model.objective.items())
            raw += model.objective_constant
            cand = flip * raw  # internal min sense
            if cand < inc_obj - 1e-12:
                inc_obj = cand
                inc_vals = vals
            continue
        j = int(bin_idx[worst])
        fracv = float(xs[j])
        lb0, ub0 = lb.copy(), ub.copy()
        ub0[j] = 0.0
        lb1, ub1 = lb.copy(), ub.copy()
        lb1[j] = 1.0
        down = (bound, lb0, ub0, wstate)
        up = (bound, lb1, ub1, wstate)
        # LIFO: push the less promising side first
        if fracv >= 0.5:
            stack.append(down)
            stack.append(up)
        else:
            stack.append(up)
            stack.append(down)

    wall = time.perf_counter() - t0
    if inc_vals is not None:
        objective = inc_obj if model.sense == "min" else -inc_obj
        status = STATUS_LIMIT if hit_limit else STATUS_OPTIMAL
        return MilpSolution(status, float(objective), inc_vals, nodes, iters, wall)
    if hit_limit:
        return MilpSolution(STATUS_LIMIT, None, {}, nodes, iters, wall)
    return MilpSolution(STATUS_INFEASIBLE, None, {}, nodes, iters, wall)


# ---------------------------------------------------------------------------
# MPS writer / parser
# ---------------------------------------------------------------------------

_MPS_OK = set("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_")


def _sanitize_names(names: list[str], what: str) -> dict[str, str]:
    out: dict[str, str] = {}
    used: set[str] = set()
    for n in names:
        s = "".join(ch if ch in _MPS_OK else "_" for ch in n)[:8]
        if not s:
            s = "_"
        if s in used:
            raise ModelError(
                f"{what} name {n!r} collides with another after MPS "
                f"sanitization to {s!r}")
        used.add(s)
        out[n] = s
    return out


def _fmt(v: float) -> str:
    return f"{v:.12g}"


def export_mps(model: MilpModel) -> str:
    """Serialize to fixed-format MPS.

    Conventions: the objective row is named COST; a nonzero objective
    constant is written as an RHS entry on COST with flipped sign (and
    read back the same way); binaries are marked both with INTORG
    markers and BV bounds; a maximization model gets an OBJSENSE
    section.
    """
    validate_model(model)
    vmap = _sanitize_names([v.name for v in model.variables], "variable")
    rnames = [c.name if c.name else f"R{i}" for i, c in
              enumerate(model.constraints)]
    rmap_list = _sanitize_names(rnames, "row")
    rmap = [rmap_list[n] for n in rnames]
    if "COST" in rmap:
        raise ModelError("row name COST is reserved for the objective")

    lines: list[str] = []
    mname = "".join(ch if ch in _MPS_OK else "_" for ch in model.name)[:8]
    lines.append(f"NAME          {mname or 'MODEL'}")
    if model.sense == "max":
        lines.append("OBJSENSE")
        lines.append("    MAX")
    lines.append("ROWS")
    lines.append(" N  COST")
    sense_code = {"<=": "L", ">=": "G", "=": "E"}
    for c, rn in zip(model.constraints, rmap):
        lines.append(f" {sense_code[c.sense]}  {rn}")

    lines.append("COLUMNS")
    # entries per variable, constraint order preserved
    per_var: dict[str, list[tuple[str, float]]] = {v.name: [] for v in
                                                   model.variables}
    for n, a in model.objective.items():
        per_var[n].append(("COST", a))
    for c, rn in zip(model.constraints, rmap):
        for n, a in c.coeffs.items():
            per_var[n].append((rn, a))
    in_int = False
    mk = 0
    for v in model.variables:
        want_int = v.kind == BINARY
        if want_int and not in_int:
            lines.append(f"    MARKER{mk:<21}'MARKER'                 'INTORG'")
            mk += 1
            in_int = True
        elif not want_int and in_int:
            lines.append(f"    MARKER{mk:<21}'MARKER'                 'INTEND'")
            mk += 1
            in_int = False
        entries = per_var[v.name]
        if not entries:
            entries = [("COST", 0.0)]  # declare the column anyway
        vn = vmap[v.name]
        for i in range(0, len(entries), 2):
            chunk = entries[i:i + 2]
            parts = [f"    {vn:<10}"]
            for rn, a in chunk:
                parts.append(f"{rn:<10}{_fmt(a):<15}")
            lines.append("".join(parts).rstrip())
    if in_int:
        lines.append(f"    MARKER{mk:<21}'MARKER'                 'INTEND'")

    lines.append("RHS")
    rhs_entries: list[tuple[str, float]] = []
    if model.objective_constant != 0.0:
        rhs_entries.append(("COST", -model.objective_constant))
    for c, rn in zip(model.constraints, rmap):
        if c.rhs != 0.0:
            rhs_entries.append((rn, c.rhs))
    for i in range(0, len(rhs_entries), 2):
        chunk = rhs_entries[i:i + 2]
        parts = ["    RHS       "]
        for rn, a in chunk:
            parts.append(f"{rn:<10}{_fmt(a):<15}")
        lines.append("".join(parts).rstrip())

    lines.append("BOUNDS")
    for v in model.variables:
        vn = vmap[v.name]
        if v.kind == BINARY:
            lines.append(f" BV BND       {vn}")
            continue
        lb, ub = v.lb, v.ub
        if lb == ub:
            lines.append(f" FX BND       {vn:<10}{_fmt(lb)}")
            continue
        if lb == -math.inf and ub == math.inf:
            lines.append(f" FR BND       {vn}")
            continue
        if lb != 0.0:
            if lb == -math.inf:
                lines.append(f" MI BND       {vn}")
            else:
                lines.append(f" LO BND       {vn:<10}{_fmt(lb)}")
        if ub != math.inf:
            lines.append(f" UP BND       {vn:<10}{_fmt(ub)}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


def parse_mps(text: str) -> MilpModel:
    """Parse the subset of MPS this package writes, plus RANGES.

    Ranged rows are expanded into two single-sense rows.  General
    integer columns are only accepted when their bounds end up inside
    [0, 1] (they become binaries); anything wider is a ModelError.
    """
    section = None
    objsense = "min"
    obj_row: str | None = None
    row_sense: dict[str, str] = {}
    row_order: list[str] = []
    col_order: list[str] = []
    col_entries: dict[str, list[tuple[str, float]]] = {}
    col_int: dict[str, bool] = {}
    rhs: dict[str, float] = {}
    ranges: dict[str, float] = {}
    bounds: dict[str, dict[str, float | bool]] = {}
    in_int = False
    pending_objsense = False
    mname = "MODEL"

    for raw in text.splitlines():
        if not raw.strip() or raw.lstrip().startswith("*"):
            continue
        head = raw[:1] != " " and raw[:1] != "\t"
        tok = raw.split()
        if head:
            kw = tok[0].upper()
            if kw == "NAME":
                mname = tok[1] if len(tok) > 1 else "MODEL"
                section = "NAME"
                continue
            if kw in ("ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS", "ENDATA",
                      "OBJSENSE"):
                section = kw
                pending_objsense = kw == "OBJSENSE"
                if kw == "OBJSENSE" and len(tok) > 1:
                    objsense = "max" if tok[1].upper() == "MAX" else "min"
                    pending_objsense = False
                if kw == "ENDATA":
                    break
                continue
            raise ModelError(f"unknown MPS section {tok[0]!r}")
        if pending_objsense:
            objsense = "max" if tok[0].upper() == "MAX" else "min"
            pending_objsense = False
            continue
        if section == "ROWS":
            typ, rn = tok[0].upper(), tok[1]
            if typ == "N":
                if obj_row is None:
                    obj_row = rn
                continue
            sense = {"L": "<=", "G": ">=", "E": "="}.get(typ)
            if sense is None:
                raise ModelError(f"unknown row type {typ!r}")
            row_sense[rn] = sense
            row_order.append(rn)
        elif section == "COLUMNS":
            if len(tok) >= 3 and tok[1].strip("'").upper() == "MARKER":
                flag = tok[-1].strip("'").upper()
                if flag == "INTORG":
                    in_int = True
                elif flag == "INTEND":
                    in_int = False
                continue
            vn = tok[0]
            if vn not in col_entries:
                col_entries[vn] = []
                col_order.append(vn)
                col_int[vn] = in_int
            pairs = tok[1:]
            for i in range(0, len(pairs) - 1, 2):
                col_entries[vn].append((pairs[i], float(pairs[i + 1])))
        elif section == "RHS":
            pairs = tok[1:]
            for i in range(0, len(pairs) - 1, 2):
                rhs[pairs[i]] = float(pairs[i + 1])
        elif section == "RANGES":
            pairs = tok[1:]
            for i in range(0, len(pairs) - 1, 2):
                ranges[pairs[i]] = float(pairs[i + 1])
        elif section == "BOUNDS":
            btype = tok[0].upper()
            vn = tok[2]
            bd = bounds.setdefault(vn, {})
            if btype == "BV":
                bd["bv"] = True
            elif btype == "FR":
                bd["lb"], bd["ub"] = -math.inf, math.inf
            elif btype == "MI":
                bd["lb"] = -math.inf
            elif btype == "PL":
                bd["ub"] = math.inf
            elif btype == "FX":
                bd["lb"] = bd["ub"] = float(tok[3])
            elif btype == "UP":
                bd["ub"] = float(tok[3])
            elif btype == "LO":
                bd["lb"] = float(tok[3])
            elif btype in ("UI", "LI"):
                key = "ub" if btype == "UI" else "lb"
                bd[key] = float(tok[3])
            else:
                raise ModelError(f"unknown bound type {btype!r}")

    model = MilpModel(name=mname, sense=objsense)
    for vn in col_order:
        bd = bounds.get(vn, {})
        if bd.get("bv"):
            model.variables.append(Variable(vn, 0.0, 1.0, BINARY))
            continue
        lb = float(bd.get("lb", 0.0))
        ub = float(bd.get("ub", math.inf))
        kind = CONTINUOUS
        if col_int.get(vn):
            if lb >= -0.0 and ub <= 1.0 + 1e-12:
                kind = BINARY
                ub = min(ub, 1.0)
            else:
                raise ModelError(
                    f"general integer column {vn!r} unsupported")
        model.variables.append(Variable(vn, lb, ub, kind))
    for vn in bounds:
        if vn not in col_entries:
            raise ModelError(f"BOUNDS references unknown column {vn!r}")

    rows_coeffs: dict[str, dict[str, float]] = {rn: {} for rn in row_order}
    obj: dict[str, float] = {}
    for vn in col_order:
        for rn, a in col_entries[vn]:
            if rn == obj_row:
                obj[vn] = obj.get(vn, 0.0) + a
            elif rn in rows_coeffs:
                d = rows_coeffs[rn]
                d[vn] = d.get(vn, 0.0) + a
            else:
                raise ModelError(f"column {vn!r} references unknown row {rn!r}")
    model.objective = {k: v for k, v in obj.items() if v != 0.0}
    model.objective_constant = -rhs.get(obj_row, 0.0) if obj_row else 0.0

    for rn in row_order:
        sense = row_sense[rn]
        b = rhs.get(rn, 0.0)
        coeffs = rows_coeffs[rn]
        if rn in ranges:
            r = ranges[rn]
            if sense == "<=":
                model.constraints.append(Constraint(dict(coeffs), "<=", b, rn))
                model.constraints.append(
                    Constraint(dict(coeffs), ">=", b - abs(r), rn + "_r"))
            elif sense == ">=":
                model.constraints.append(Constraint(dict(coeffs), ">=", b, rn))
                model.constraints.append(
                    Constraint(dict(coeffs), "<=", b + abs(r), rn + "_r"))
            else:
                llo = min(b, b + r)
                lhi = max(b, b + r)
                model.constraints.append(Constraint(dict(coeffs), ">=", llo, rn))
                model.constraints.append(
                    Constraint(dict(coeffs), "<=", lhi, rn + "_r"))
        else:
            model.constraints.append(Constraint(dict(coeffs), sense, b, rn))

    validate_model(model)
    return model


# ---------------------------------------------------------------------------
# external solver bridge
# ---------------------------------------------------------------------------

SOLVER_CMD_ENV = "MYOPIC_SOLVER_CMD"


def solve_external(model: MilpModel, command: str | None = None,
                   timeout: float | None = None) -> MilpSolution:
    """Ship ``model`` to an external solver and read the solution back.

    ``command`` is a shell-ish template with {input} and {output}
    placeholders (falls back to the MYOPIC_SOLVER_CMD environment
    variable).  The solution file is plain text: an optional leading
    ``status <word>`` line for non-optimal outcomes, otherwise an
    ``objective <value>`` line followed by ``name value`` pairs.  Any
    declared binary missing from an optimal solution file is a
    BridgeError; continuous variables default to 0.
    """
    validate_model(model)
    cmd = command or os.environ.get(SOLVER_CMD_ENV)
    if not cmd:
        raise BridgeError("no external solver configured "
                          f"(set {SOLVER_CMD_ENV} or pass command=)")
    SOLVE_COUNTS["external"] += 1
    t0 = time.perf_counter()
    mps = export_mps(model)
    vmap = _sanitize_names([v.name for v in model.variables], "variable")
    back = {s: n for n, s in vmap.items()}
    with tempfile.TemporaryDirectory(prefix="myopic_mps_") as td:
        inp = os.path.join(td, "model.mps")
        outp = os.path.join(td, "solution.txt")
        with open(inp, "w") as fh:
            fh.write(mps)
        argv = [a.replace("{input}", inp).replace("{output}", outp)
                for a in shlex.split(cmd)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True,
                                  timeout=timeout)
        except FileNotFoundError as e:
            raise BridgeError(f"external solver not found: {e}", "") from e
        except subprocess.TimeoutExpired as e:
            raise BridgeError("external solver timed out",
                              str(e.stdout or "")) from e
        raw = (proc.stdout or "") + (proc.stderr or "")
        if proc.returncode != 0:
            raise BridgeError(
                f"external solver exited with {proc.returncode}", raw)
        if not os.path.exists(outp):
            raise BridgeError("external solver wrote no solution file", raw)
        with open(outp) as fh:
            content = fh.read()
    wall = time.perf_counter() - t0
    status = None
    objective = None
    values: dict[str, float] = {}
    for line in content.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if status is None and objective is None:
            if parts[0].lower() == "status":
                word = parts[1].lower() if len(parts) > 1 else ""
                if word not in (STATUS_INFEASIBLE, STATUS_UNBOUNDED,
                                STATUS_LIMIT):
                    raise BridgeError(f"unknown status {word!r}", content)
                return MilpSolution(word, None, {}, 0, 0, wall)
            if parts[0].lower() == "objective":
                try:
                    objective = float(parts[1])
                except (IndexError, ValueError) as e:
                    raise BridgeError("bad objective line", content) from e
                continue
            raise BridgeError(f"unexpected line {line!r} before objective",
                              content)
        if len(parts) != 2:
            raise BridgeError(f"bad solution line {line!r}", content)
        name = back.get(parts[0], parts[0])
        try:
            values[name] = float(parts[1])
        except ValueError as e:
            raise BridgeError(f"bad value in line {line!r}", content) from e
    if objective is None:
        raise BridgeError("solution file had no objective line", content)
    known = {v.name for v in model.variables}
    for n in values:
        if n not in known:
            raise BridgeError(f"solution mentions unknown variable {n!r}",
                              content)
    for v in model.variables:
        if v.kind == BINARY and v.name not in values:
            raise BridgeError(
                f"declared binary {v.name!r} missing from solution", content)
    full = {v.name: values.get(v.name, 0.0) for v in model.variables}
    recomputed = sum(model.objective.get(n, 0.0) * full[n]
                     for n in model.objective) + model.objective_constant
    return MilpSolution(STATUS_OPTIMAL, float(recomputed), full, 0, 0, wall)


def solve_auto(model: MilpModel, command: str | None = None,
               **milp_opts) -> MilpSolution:
    """Route to the external bridge when configured, else the embedded solver."""
    cmd = command or os.environ.get(SOLVER_CMD_ENV)
    if cmd:
        return solve_external(model, command=cmd)
    return solve_milp(model, **milp_opts)
