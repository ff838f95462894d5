"""Incentive schedule search against an estimated agent.

Given a point estimate of the hidden vector and the state carried out of
estimation, pick per-block activity goals from a ladder and place a fixed
number of coaching visits so that the projected end-of-program weight is
as low as possible.  The agent's day-by-day choice is embedded through
the same stationarity-plus-regime encoding the estimator uses, so a
returned schedule replays exactly on the simulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .behavior import (
    THETA_COMPONENTS,
    AgentParams,
    IncentivePlan,
    ModelBounds,
    ModelConstants,
    ParamError,
    simulate,
)
from .estimation import EstimateResult, activity_upper_bound
from .linprog import (
    BINARY,
    STATUS_LIMIT,
    STATUS_OPTIMAL,
    MilpModel,
    ModelBuilder,
    solve_auto,
)

# design solves break exact ties through tiny objective terms, so they
# run at a much tighter gap than estimation needs
DESIGN_GAP = 1e-9
ETA_VISIT = 1e-9
ETA_GOAL = 1e-11


class DesignFailed(RuntimeError):
    """The solver ended without any usable schedule."""


@dataclass
class LossSpec:
    """How the program scores an agent's final weight against an anchor.

    ``step`` pays -1 iff the final ratio clears 5% lost; ``hinge`` ramps
    linearly through the same region; ``banded`` narrows the ramp as the
    horizon grows (it needs ``horizon`` >= 2 for the width to be
    defined).
    """

    kind: str
    anchor: float
    horizon: int | None = None

    def __post_init__(self):
        if self.kind not in ("step", "hinge", "banded"):
            raise ParamError(f"unknown loss kind {self.kind!r}")
        if not (self.anchor > 0.0):
            raise ParamError("loss anchor weight must be positive")
        if self.kind == "banded":
            if self.horizon is None or self.horizon < 2:
                raise ParamError("banded loss needs a horizon >= 2")

    def value(self, w_end: float) -> float:
        ratio = w_end / self.anchor
        if self.kind == "step":
            return -1.0 if ratio <= 0.95 else 0.0
        if self.kind == "hinge":
            return float(min(max(20.0 * (ratio - 1.0), -1.0), 0.0))
        half = 0.05 / math.log(self.horizon)
        lo, hi = 0.95 - half, 0.95 + half
        if ratio <= lo:
            return -1.0
        if ratio >= hi:
            return 0.0
        return float(-(hi - ratio) / (hi - lo))


def tail_projection(tail_days: int, const: ModelConstants, u_b: float
                    ) -> tuple[float, float, float, float]:
    """Coefficients (c_w, c_fb, c_Fb, c_0) of the final weight as an
    affine function of the state leaving the scheduling window.

    With no goals and no visits the agent's choice is penalty free, so
    the weight recursion and both eating baselines form a fixed affine
    map that can be composed across the whole tail in one row.
    """
    if tail_days < 0:
        raise ParamError("tail length must be >= 0")
    c = const
    denom = 1.0 + (1.0 + c.b * c.b) / c.r
    wrow = np.array([1.0, 0.0, 0.0])
    woff = 0.0
    fbrow = np.array([0.0, 1.0, 0.0])
    Fbrow = np.array([0.0, 0.0, 1.0])
    for _ in range(tail_days):
        wrow, woff = (c.a * wrow + fbrow) / denom, \
            (c.a * woff + c.k + c.b * u_b) / denom
        fbrow, Fbrow = c.gamma * fbrow + (1.0 - c.gamma) * Fbrow, \
            (1.0 - c.alpha) * Fbrow + c.alpha * fbrow
    return float(wrow[0]), float(wrow[1]), float(wrow[2]), float(woff)


@dataclass
class DesignMeta:
    """Bookkeeping from the design builder for extraction and replay."""

    horizon: int
    start_day: int
    eligible: list[int]
    blocks: list[tuple[int, int]]
    ladder: np.ndarray
    v: int
    tail_days: int
    tail_coef: tuple[float, float, float, float]
    theta: np.ndarray
    state: tuple[float, float, float, float]

    def block_of(self, t: int) -> int:
        for i, (s, e) in enumerate(self.blocks):
            if s <= t < e:
                return i
        raise ParamError(f"day {t} outside every block")


def _check_design_inputs(state, theta, const, bounds, horizon, ladder, v,
                         block_len, tail_days, eligible):
    const.validate()
    if horizon < 1:
        raise ParamError("design window must cover at least one day")
    if block_len < 1:
        raise ParamError("goal block length must be >= 1")
    if tail_days < 0:
        raise ParamError("tail length must be >= 0")
    if len(theta) != len(THETA_COMPONENTS):
        raise ParamError("hidden vector has the wrong length")
    ladder = np.asarray(ladder, dtype=float)
    if ladder.size == 0:
        raise ParamError("goal ladder is empty")
    if np.any(np.diff(np.sort(ladder)) <= 1e-12):
        raise ParamError("goal ladder has duplicate levels")
    glo, ghi = bounds.goal
    if np.any(ladder < glo) or np.any(ladder > ghi):
        raise ParamError("goal ladder leaves the allowed goal range")
    if not (0 <= v <= len(eligible)):
        raise ParamError(
            f"cannot place {v} visits on {len(eligible)} eligible days")
    w, fb, Fb, p = state
    for val, box, what in ((w, bounds.weight, "weight"),
                           (fb, bounds.f_b, "fast eating baseline"),
                           (Fb, bounds.F_b, "slow eating baseline"),
                           (p, bounds.p, "penalty weight")):
        if not (box[0] - 1e-9 <= val <= box[1] + 1e-9):
            raise ParamError(f"start {what} {val} outside [{box[0]}, "
                             f"{box[1]}]")
    return ladder


def build_design_model(state: tuple[float, float, float, float],
                       theta: np.ndarray, const: ModelConstants,
                       bounds: ModelBounds, horizon: int,
                       ladder: np.ndarray, v: int, start_day: int = 0,
                       block_len: int = 7, tail_days: int = 0
                       ) -> tuple[MilpModel, DesignMeta]:
    """Scheduling model: pick block goals and visit days minimizing the
    projected final weight, observing the agent's best response."""
    c = const
    eligible = [t for t in range(horizon) if (start_day + t) % 7 == 1]
    ladder = _check_design_inputs(state, theta, c, bounds, horizon, ladder,
                                  v, block_len, tail_days, eligible)
    levels = np.sort(ladder)
    u_b, mu, delta, beta_v = (float(theta[0]), float(theta[4]),
                              float(theta[5]), float(theta[6]))
    w0, fb0, Fb0, p0 = (float(x) for x in state)
    blocks = [(s, min(s + block_len, horizon))
              for s in range(0, horizon, block_len)]
    tail_coef = tail_projection(tail_days, c, u_b)

    u_hi = activity_upper_bound(c, bounds)
    M_s4 = 2.0 * c.r * u_hi + 1.0
    M_p = bounds.p[1]
    eps = bounds.eps
    Mb = max(u_hi - float(levels[0]), float(levels[-1])) + eps + 0.5
    r = c.r

    b = ModelBuilder("DESIGN")
    for t in range(horizon + 1):
        b.var(f"w{t}", *((w0, w0) if t == 0 else bounds.weight))
        b.var(f"fb{t}", *((fb0, fb0) if t == 0 else bounds.f_b))
        b.var(f"Fb{t}", *((Fb0, Fb0) if t == 0 else bounds.F_b))
        b.var(f"p{t}", *((p0, p0) if t == 0 else bounds.p))
    for t in range(horizon):
        b.var(f"u{t}", 0.0, u_hi)
        for x in ("x1", "x2", "x3", "m"):
            b.var(f"{x}_{t}", 0.0, 1.0, BINARY)
    for t in eligible:
        b.var(f"d{t}", 0.0, 1.0, BINARY)
    for i in range(len(blocks)):
        b.var(f"g{i}", float(levels[0]), float(levels[-1]))
        for li in range(len(levels)):
            b.var(f"y{i}_{li}", 0.0, 1.0, BINARY)
        b.con({f"y{i}_{li}": 1.0 for li in range(len(levels))}, "=", 1.0,
              f"ys{i}")
        row = {f"g{i}": 1.0}
        row.update({f"y{i}_{li}": -float(levels[li])
                    for li in range(len(levels))})
        b.con(row, "=", 0.0, f"gl{i}")
    b.var("w_end", *bounds.weight)

    for t in range(horizon):
        wt, wn, ut = f"w{t}", f"w{t+1}", f"u{t}"
        pt, pn = f"p{t}", f"p{t+1}"
        fbt, fbn, Fbt, Fbn = f"fb{t}", f"fb{t+1}", f"Fb{t}", f"Fb{t+1}"
        x1, x2, x3, m = f"x1_{t}", f"x2_{t}", f"x3_{t}", f"m_{t}"
        gi = f"g{[i for i, (s, e) in enumerate(blocks) if s <= t < e][0]}"
        # weight recursion with food substituted out by its stationarity
        b.con({wn: 1.0 + r, wt: -r * c.a, ut: -r * c.b, fbt: -r},
              "=", r * c.k, f"wd{t}")
        b.con({wt: c.a, ut: c.b, fbt: -r}, "<=", -c.k, f"fp{t}")
        # S = 2 b w' + 2 r (u - u_b) is the penalty multiplier in [0, p]
        b.con({wn: -2.0 * c.b, ut: -2.0 * r}, "<=", -2.0 * r * u_b,
              f"s1_{t}")
        b.con({wn: 2.0 * c.b, ut: 2.0 * r, pt: -1.0}, "<=", 2.0 * r * u_b,
              f"s2_{t}")
        b.con({wn: -2.0 * c.b, ut: -2.0 * r, pt: 1.0, x1: M_p},
              "<=", M_p - 2.0 * r * u_b, f"s3_{t}")
        b.con({wn: 2.0 * c.b, ut: 2.0 * r, x3: M_s4},
              "<=", M_s4 + 2.0 * r * u_b, f"s4_{t}")
        # which side of the block goal the response lands on
        b.con({ut: 1.0, gi: -1.0, x1: Mb}, "<=", Mb, f"b1_{t}")
        b.con({ut: -1.0, gi: 1.0, x2: Mb}, "<=", Mb, f"b2_{t}")
        b.con({ut: 1.0, gi: -1.0, x2: Mb}, "<=", Mb, f"b3_{t}")
        b.con({ut: -1.0, gi: 1.0, x3: Mb}, "<=", Mb, f"b4_{t}")
        b.con({x1: 1.0, x2: 1.0, x3: 1.0}, "=", 1.0, f"bx_{t}")
        # met within the tolerance band
        b.con({ut: -1.0, gi: 1.0, m: Mb}, "<=", Mb + eps, f"m1_{t}")
        b.con({ut: 1.0, gi: -1.0, m: -Mb}, "<=", -eps, f"m2_{t}")
        b.con({x2: 1.0, m: -1.0}, "<=", 0.0, f"m3_{t}")
        b.con({x3: 1.0, m: -1.0}, "<=", 0.0, f"m4_{t}")
        # state recursions; the hidden vector is data here, so these are
        # plain equalities with the visit binary as the only input
        prow = {pn: 1.0, pt: -c.gamma, m: -mu}
        hrow = {fbn: 1.0, fbt: -c.gamma, Fbt: -(1.0 - c.gamma)}
        if t in eligible:
            prow[f"d{t}"] = -delta
            hrow[f"d{t}"] = beta_v
        b.con(prow, "=", 0.0, f"pd{t}")
        b.con(hrow, "=", 0.0, f"hb{t}")
        b.con({Fbn: 1.0, Fbt: -(1.0 - c.alpha), fbt: -c.alpha}, "=", 0.0,
              f"hB{t}")

    if eligible:
        b.con({f"d{t}": 1.0 for t in eligible}, "=", float(v), "vis")
    cw, cfb, cFb, c0 = tail_coef
    b.con({"w_end": 1.0, f"w{horizon}": -cw, f"fb{horizon}": -cfb,
           f"Fb{horizon}": -cFb}, "=", c0, "tail")

    obj: dict[str, float] = {"w_end": 1.0}
    for t in eligible:
        obj[f"d{t}"] = ETA_VISIT * (t + 1)
    for i in range(len(blocks)):
        for li in range(len(levels)):
            obj[f"y{i}_{li}"] = ETA_GOAL * li
    b.objective(obj, "min")

    meta = DesignMeta(horizon=horizon, start_day=start_day,
                      eligible=eligible, blocks=blocks, ladder=levels,
                      v=v, tail_days=tail_days, tail_coef=tail_coef,
                      theta=np.asarray(theta, dtype=float),
                      state=(w0, fb0, Fb0, p0))
    return b.build(), meta


@dataclass
class DesignResult:
    """A schedule, its projected outcome, and replay diagnostics."""

    plan: IncentivePlan
    w_end: float
    w_end_model: float
    objective: float
    loss: float | None
    status: str
    certified: bool
    nodes: int
    wall_time: float
    replay_max_diff: float
    trajectory: dict[str, np.ndarray]
    meta: DesignMeta = field(repr=False)


def _design_extract(meta: DesignMeta, values: dict[str, float]
                    ) -> tuple[IncentivePlan, dict[str, np.ndarray]]:
    W = meta.horizon
    goals = np.empty(W)
    for t in range(W):
        g = values[f"g{meta.block_of(t)}"]
        goals[t] = meta.ladder[int(np.argmin(np.abs(meta.ladder - g)))]
    visits = np.zeros(W, dtype=np.int64)
    for t in meta.eligible:
        visits[t] = int(round(values[f"d{t}"]))
    plan = IncentivePlan(goals, visits, start_day=meta.start_day)
    plan.validate()
    traj = {
        "w": np.array([values[f"w{t}"] for t in range(W + 1)]),
        "u": np.array([values[f"u{t}"] for t in range(W)]),
        "p": np.array([values[f"p{t}"] for t in range(W + 1)]),
        "f_b": np.array([values[f"fb{t}"] for t in range(W + 1)]),
        "F_b": np.array([values[f"Fb{t}"] for t in range(W + 1)]),
        "goal_met": np.array([values[f"m_{t}"] > 0.5 for t in range(W)]),
    }
    return plan, traj


def _window_sim(meta: DesignMeta, plan: IncentivePlan,
                const: ModelConstants, bounds: ModelBounds):
    """Simulate a window schedule padded with its quiet tail."""
    th = meta.theta
    w0, fb0, Fb0, p0 = meta.state
    params = AgentParams(w0=w0, u_b=th[0], f_b0=fb0, F_b0=Fb0, p0=p0,
                         mu=th[4], delta=th[5], beta_v=th[6], const=const)
    full = IncentivePlan(
        np.concatenate([plan.goals, np.full(meta.tail_days, np.nan)]),
        np.concatenate([plan.visits,
                        np.zeros(meta.tail_days, dtype=np.int64)]),
        start_day=plan.start_day)
    return simulate(params, full, bounds)


def _states_equal(a, b) -> bool:
    return (np.array_equal(a.w, b.w) and np.array_equal(a.u, b.u)
            and np.array_equal(a.p, b.p) and np.array_equal(a.f_b, b.f_b)
            and np.array_equal(a.F_b, b.F_b))


def _canonical_schedule(meta: DesignMeta, plan: IncentivePlan,
                        const: ModelConstants, bounds: ModelBounds):
    """Deterministic representative of a schedule's tie class.

    Exactly tied schedules leave the winner to solver vertex
    arbitrariness, so visits are slid to the earliest open eligible
    slots and block goals lowered level by level, keeping every
    replayed state path bitwise unchanged.  Any move that changes the
    agent's behavior at all is rejected, which leaves uniquely optimal
    schedules untouched.  Returns the plan and its replay.
    """
    base = _window_sim(meta, plan, const, bounds)
    goals = plan.goals.copy()
    visits = plan.visits.copy()
    sim = base

    def trial():
        cand = IncentivePlan(goals, visits, start_day=plan.start_day)
        s = _window_sim(meta, cand, const, bounds)
        return s if _states_equal(s, base) else None

    for t in [t for t in meta.eligible if visits[t]]:
        for s in meta.eligible:
            if s >= t:
                break
            if visits[s]:
                continue
            visits[t], visits[s] = 0, 1
            got = trial()
            if got is not None:
                sim = got
                break
            visits[t], visits[s] = 1, 0
    for bs, be in meta.blocks:
        cur = goals[bs]
        for lv in meta.ladder:
            if lv >= cur:
                break
            goals[bs:be] = lv
            got = trial()
            if got is not None:
                sim = got
                break
            goals[bs:be] = cur
    return IncentivePlan(goals, visits, start_day=plan.start_day), sim


def _design_replay(meta: DesignMeta, plan: IncentivePlan,
                   traj: dict[str, np.ndarray], w_end_model: float,
                   const: ModelConstants, bounds: ModelBounds
                   ) -> tuple[float, float]:
    """Simulate the schedule (window plus quiet tail) and report the
    worst per-day gap against the solver's trajectory along with the
    simulated final weight."""
    W = meta.horizon
    sim = _window_sim(meta, plan, const, bounds)
    diffs = [np.max(np.abs(sim.w[:W + 1] - traj["w"])),
             np.max(np.abs(sim.u[:W] - traj["u"])),
             np.max(np.abs(sim.p[:W + 1] - traj["p"])),
             np.max(np.abs(sim.f_b[:W + 1] - traj["f_b"])),
             np.max(np.abs(sim.F_b[:W + 1] - traj["F_b"])),
             abs(float(sim.w[-1]) - w_end_model)]
    return float(max(diffs)), float(sim.w[-1])


def design_single(state: tuple[float, float, float, float],
                  theta: np.ndarray, const: ModelConstants,
                  bounds: ModelBounds, horizon: int, ladder: np.ndarray,
                  v: int, start_day: int = 0, block_len: int = 7,
                  tail_days: int = 0, loss: LossSpec | None = None,
                  command: str | None = None, gap: float = DESIGN_GAP,
                  node_limit: int | None = None,
                  time_limit: float | None = None) -> DesignResult:
    """Solve one scheduling problem for one agent at one visit budget."""
    model, meta = build_design_model(state, theta, const, bounds, horizon,
                                     ladder, v, start_day, block_len,
                                     tail_days)
    sol = solve_auto(model, command=command, gap=gap,
                     node_limit=node_limit, time_limit=time_limit)
    if sol.status not in (STATUS_OPTIMAL, STATUS_LIMIT) or not sol.values:
        raise DesignFailed(f"design solve ended {sol.status} with no "
                           f"usable schedule")
    plan, traj = _design_extract(meta, sol.values)
    plan, csim = _canonical_schedule(meta, plan, const, bounds)
    traj["goal_met"] = csim.goal_met[:meta.horizon].copy()
    w_end_model = float(sol.values["w_end"])
    replay, w_end = _design_replay(meta, plan, traj, w_end_model,
                                   const, bounds)
    return DesignResult(
        plan=plan, w_end=w_end, w_end_model=w_end_model,
        objective=float(sol.objective),
        loss=None if loss is None else loss.value(w_end),
        status=sol.status, certified=sol.certified, nodes=sol.nodes,
        wall_time=sol.wall_time, replay_max_diff=replay, trajectory=traj,
        meta=meta)


@dataclass
class TwoStageResult:
    """Estimate once, then schedule against the point estimate."""

    estimate: EstimateResult
    design: DesignResult


def two_ssa(obs, plan_history: IncentivePlan, const: ModelConstants,
            bounds: ModelBounds, prior, horizon: int, ladder: np.ndarray,
            v: int, block_len: int = 7, tail_days: int = 0,
            loss: LossSpec | None = None,
            window: tuple[int, int] | None = None,
            command: str | None = None,
            node_limit: int | None = None,
            time_limit: float | None = None) -> TwoStageResult:
    """Point-estimate the agent from its history, then schedule the next
    window starting where the history ends."""
    from .estimation import estimate_map

    est = estimate_map(obs, plan_history, const, bounds, prior,
                       window=window, command=command,
                       node_limit=node_limit, time_limit=time_limit)
    t_end = est.window[1]
    des = design_single(est.state_end, est.theta, const, bounds, horizon,
                        ladder, v,
                        start_day=plan_history.start_day + t_end,
                        block_len=block_len, tail_days=tail_days,
                        loss=loss, command=command,
                        node_limit=node_limit, time_limit=time_limit)
    return TwoStageResult(estimate=est, design=des)
