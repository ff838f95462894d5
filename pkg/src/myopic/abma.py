"""Budgeted allocation of coaching visits across a roster of agents.

Every agent is assigned one visit level from a discrete menu under a
shared total budget.  Each (agent, level) option is priced by one
schedule search against that agent's estimate, and a small dynamic
program picks the assignment.  A brute-force joint enumerator backs the
exactness tests on tiny instances.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .behavior import (
    AgentParams,
    IncentivePlan,
    ModelBounds,
    ModelConstants,
    ObservationSet,
    ParamError,
    simulate,
)
from .design import DesignFailed, DesignResult, LossSpec, design_single
from .estimation import (
    EstimateResult,
    EstimationFailed,
    HistogramPrior,
    estimate_map,
)
from .linprog import SOLVE_COUNTS, BINARY, ModelBuilder, solve_auto

# a failed pricing cell gets the worst loss so the master avoids it
FAILED_CELL_PHI = 0.0


@dataclass
class DiscreteIncentiveSet:
    """Visit-count menu and the shared budget across all agents."""

    # TODO: vector budgets (several incentive resources at once) need a
    # multi-dimensional key in the master dynamic program
    levels: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7)
    budget: int = 0

    def __post_init__(self):
        lv = tuple(int(v) for v in self.levels)
        if len(lv) == 0:
            raise ParamError("incentive menu is empty")
        if any(v < 0 for v in lv):
            raise ParamError("visit levels must be nonnegative")
        if sorted(set(lv)) != list(lv):
            raise ParamError("visit levels must be sorted and distinct")
        self.levels = lv
        if self.budget < 0:
            raise ParamError("visit budget must be nonnegative")


@dataclass
class AgentData:
    """One agent's pricing inputs: either an observed history to
    estimate from, or a known state and hidden vector."""

    name: str
    obs: ObservationSet | None = None
    history: IncentivePlan | None = None
    prior: HistogramPrior | None = None
    state: tuple[float, float, float, float] | None = None
    theta: np.ndarray | None = None
    start_day: int = 0
    anchor: float | None = None
    window: tuple[int, int] | None = None

    @classmethod
    def from_history(cls, name: str, obs: ObservationSet,
                     history: IncentivePlan, prior: HistogramPrior,
                     anchor: float | None = None,
                     window: tuple[int, int] | None = None) -> AgentData:
        return cls(name=name, obs=obs, history=history, prior=prior,
                   anchor=anchor, window=window)

    @classmethod
    def at_truth(cls, name: str,
                 state: tuple[float, float, float, float],
                 theta: np.ndarray, start_day: int = 0,
                 anchor: float | None = None) -> AgentData:
        return cls(name=name, state=state,
                   theta=np.asarray(theta, dtype=float),
                   start_day=start_day, anchor=anchor)

    @property
    def truth_mode(self) -> bool:
        return self.theta is not None

    def validate(self) -> None:
        if self.truth_mode:
            if self.state is None:
                raise ParamError(f"agent {self.name}: known-vector mode "
                                 "needs a state")
            if self.obs is not None or self.history is not None:
                raise ParamError(f"agent {self.name}: mixes a history "
                                 "with a known vector")
        elif self.obs is None or self.history is None \
                or self.prior is None:
            raise ParamError(f"agent {self.name}: history mode needs "
                             "observations, the past plan, and a prior")

    def resolve_anchor(self) -> float:
        if self.anchor is not None:
            return float(self.anchor)
        if self.truth_mode:
            return float(self.state[0])
        if len(self.obs.w_vals) == 0:
            raise ParamError(f"agent {self.name}: no weight readings "
                             "to anchor the loss on")
        return float(self.obs.w_vals[int(np.argmin(self.obs.w_days))])


@dataclass
class PhiMatrix:
    """Per-(agent, level) predicted losses with their plan handles."""

    agents: list[str]
    levels: tuple[int, ...]
    phi: np.ndarray
    certified: np.ndarray
    cells: list[list[DesignResult | None]] = field(repr=False,
                                                   default_factory=list)
    estimates: list[EstimateResult | None] = field(repr=False,
                                                   default_factory=list)

    def validate(self) -> None:
        if self.phi.shape != (len(self.agents), len(self.levels)):
            raise ParamError("loss matrix shape does not match the "
                             "roster and menu")
        if np.any(self.phi < -1.0 - 1e-12) or np.any(self.phi > 1e-12):
            raise ParamError("loss values must lie in [-1, 0]")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["agent", "level", "phi", "certified"])
            for i, name in enumerate(self.agents):
                for j, v in enumerate(self.levels):
                    wr.writerow([name, v, repr(float(self.phi[i, j])),
                                 int(self.certified[i, j])])

    @classmethod
    def from_csv(cls, path) -> PhiMatrix:
        rows: dict[str, dict[int, tuple[float, bool]]] = {}
        order: list[str] = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                name = rec["agent"]
                if name not in rows:
                    rows[name] = {}
                    order.append(name)
                rows[name][int(rec["level"])] = (
                    float(rec["phi"]), bool(int(rec["certified"])))
        levels = tuple(sorted({v for r in rows.values() for v in r}))
        phi = np.zeros((len(order), len(levels)))
        cert = np.zeros_like(phi, dtype=bool)
        for i, name in enumerate(order):
            for j, v in enumerate(levels):
                if v not in rows[name]:
                    raise ParamError(f"agent {name} is missing level {v}")
                phi[i, j], cert[i, j] = rows[name][v]
        out = cls(agents=order, levels=levels, phi=phi, certified=cert)
        out.validate()
        return out


def _price_agent(agent: AgentData, incentives: DiscreteIncentiveSet,
                 const: ModelConstants, bounds: ModelBounds,
                 horizon: int, ladder: np.ndarray, loss_kind: str,
                 loss_horizon: int | None, block_len: int,
                 tail_days: int, command, est_limits, des_limits):
    """One agent's row: a point estimate (unless the vector is known),
    then one schedule search per level."""
    agent.validate()
    loss = LossSpec(loss_kind, anchor=agent.resolve_anchor(),
                    horizon=loss_horizon)
    est: EstimateResult | None = None
    if agent.truth_mode:
        state, theta = agent.state, agent.theta
        start_day = agent.start_day
    else:
        est = estimate_map(agent.obs, agent.history, const, bounds,
                           agent.prior, window=agent.window,
                           command=command, node_limit=est_limits[0],
                           time_limit=est_limits[1])
        state, theta = est.state_end, est.theta
        start_day = agent.history.start_day + est.window[1]
    row = np.full(len(incentives.levels), FAILED_CELL_PHI)
    cert = np.zeros(len(incentives.levels), dtype=bool)
    cells: list[DesignResult | None] = [None] * len(incentives.levels)
    for j, v in enumerate(incentives.levels):
        try:
            res = design_single(state, theta, const, bounds, horizon,
                                ladder, v, start_day=start_day,
                                block_len=block_len,
                                tail_days=tail_days, loss=loss,
                                command=command,
                                node_limit=des_limits[0],
                                time_limit=des_limits[1])
        except DesignFailed:
            continue
        row[j] = res.loss
        cert[j] = res.certified
        cells[j] = res
    return row, cert, cells, est


def build_phi_matrix(agents: list[AgentData],
                     incentives: DiscreteIncentiveSet,
                     const: ModelConstants, bounds: ModelBounds,
                     horizon: int, ladder: np.ndarray,
                     loss_kind: str = "step",
                     loss_horizon: int | None = None,
                     block_len: int = 7, tail_days: int = 0,
                     command: str | None = None,
                     est_node_limit: int | None = None,
                     est_time_limit: float | None = None,
                     des_node_limit: int | None = None,
                     des_time_limit: float | None = None) -> PhiMatrix:
    """Price every (agent, level) cell.  Pricing failures leave the
    worst loss in the cell and clear its certified flag; the matrix is
    returned regardless.  Cells are pure and independent, so the loop
    is a drop-in site for a process pool on multi-core hosts.
    """
    if not agents:
        raise ParamError("empty agent roster")
    names = [a.name for a in agents]
    if len(set(names)) != len(names):
        raise ParamError("duplicate agent names in the roster")
    phi = np.zeros((len(agents), len(incentives.levels)))
    cert = np.zeros_like(phi, dtype=bool)
    cells: list[list[DesignResult | None]] = []
    ests: list[EstimateResult | None] = []
    for i, agent in enumerate(agents):
        try:
            row, crow, cr, est = _price_agent(
                agent, incentives, const, bounds, horizon, ladder,
                loss_kind, loss_horizon, block_len, tail_days, command,
                (est_node_limit, est_time_limit),
                (des_node_limit, des_time_limit))
        except EstimationFailed:
            row = np.full(len(incentives.levels), FAILED_CELL_PHI)
            crow = np.zeros(len(incentives.levels), dtype=bool)
            cr, est = [None] * len(incentives.levels), None
        phi[i], cert[i] = row, crow
        cells.append(cr)
        ests.append(est)
    out = PhiMatrix(agents=names, levels=incentives.levels, phi=phi,
                    certified=cert, cells=cells, estimates=ests)
    out.validate()
    return out


@dataclass
class Assignment:
    """One visit level per agent and the implied total predicted loss."""

    agents: list[str]
    levels_chosen: list[int]
    phi_chosen: list[float]
    objective: float
    budget_used: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["agent", "level", "phi"])
            for name, v, ph in zip(self.agents, self.levels_chosen,
                                   self.phi_chosen):
                wr.writerow([name, v, repr(float(ph))])


def _master_inputs(phi, beta, levels):
    if isinstance(phi, PhiMatrix):
        agents, levels, mat = phi.agents, phi.levels, phi.phi
    else:
        if levels is None:
            raise ParamError("a bare loss matrix needs explicit levels")
        mat = np.asarray(phi, dtype=float)
        levels = tuple(int(v) for v in levels)
        agents = [f"agent{i}" for i in range(mat.shape[0])]
    if mat.ndim != 2 or mat.shape[1] != len(levels):
        raise ParamError("loss matrix shape does not match the menu")
    if beta < 0:
        raise ParamError("visit budget must be nonnegative")
    if mat.shape[0] * min(levels) > beta:
        raise ParamError("budget cannot cover the cheapest level for "
                         "every agent")
    return agents, levels, mat


def _canonical(agents, levels, mat, chosen):
    """Assemble an assignment with its objective accumulated in fixed
    agent order, so equal selections compare exactly across solvers."""
    total, used = 0.0, 0
    phis = []
    for i, j in enumerate(chosen):
        total += float(mat[i, j])
        used += levels[j]
        phis.append(float(mat[i, j]))
    return Assignment(agents=list(agents),
                      levels_chosen=[levels[j] for j in chosen],
                      phi_chosen=phis, objective=total, budget_used=used)


def master_knapsack(phi: PhiMatrix | np.ndarray, beta: int,
                    levels: tuple[int, ...] | None = None) -> Assignment:
    """Assign levels by dynamic programming over (agent prefix, budget
    left).  Ties prefer the lowest agent index taking the lowest level.
    """
    agents, levels, mat = _master_inputs(phi, beta, levels)
    nA = mat.shape[0]
    cap = min(int(beta), nA * max(levels))
    best = np.full((nA + 1, cap + 1), math.inf)
    best[nA, :] = 0.0
    choice = np.zeros((nA, cap + 1), dtype=np.int64)
    for i in range(nA - 1, -1, -1):
        for b in range(cap + 1):
            pick, val = -1, math.inf
            for j, v in enumerate(levels):
                if v > b:
                    break
                cand = mat[i, j] + best[i + 1, b - v]
                if cand < val:
                    pick, val = j, cand
            best[i, b], choice[i, b] = val, pick
    if not math.isfinite(best[0, cap]):
        raise ParamError("no feasible assignment under the budget")
    chosen, b = [], cap
    for i in range(nA):
        j = int(choice[i, b])
        chosen.append(j)
        b -= levels[j]
    return _canonical(agents, levels, mat, chosen)


def master_ilp_check(phi: PhiMatrix | np.ndarray, beta: int,
                     levels: tuple[int, ...] | None = None,
                     command: str | None = None,
                     gap: float = 1e-9) -> Assignment:
    """Same master as an integer program; used to cross-check the DP."""
    agents, levels, mat = _master_inputs(phi, beta, levels)
    nA = mat.shape[0]
    b = ModelBuilder("MASTER")
    obj = {}
    for i in range(nA):
        for j in range(len(levels)):
            b.var(f"y{i}_{j}", 0.0, 1.0, BINARY)
            obj[f"y{i}_{j}"] = float(mat[i, j])
        b.con({f"y{i}_{j}": 1.0 for j in range(len(levels))}, "=", 1.0,
              f"one{i}")
    b.con({f"y{i}_{j}": float(levels[j]) for i in range(nA)
           for j in range(len(levels)) if levels[j] != 0},
          "<=", float(beta), "budget")
    b.objective(obj, "min")
    sol = solve_auto(b.build(), command=command, gap=gap)
    if not sol.certified:
        raise ParamError(f"master integer program ended {sol.status}")
    chosen = []
    for i in range(nA):
        js = [j for j in range(len(levels))
              if sol.values[f"y{i}_{j}"] > 0.5]
        if len(js) != 1:
            raise ParamError(f"agent {agents[i]} got {len(js)} levels")
        chosen.append(js[0])
    return _canonical(agents, levels, mat, chosen)


@dataclass
class AbmaResult:
    """Full allocation outcome: the priced matrix, the master's choice,
    and the concrete per-agent schedules."""

    phi: PhiMatrix
    assignment: Assignment
    plans: dict[str, IncentivePlan]
    objective: float
    solve_counts: dict[str, int]


def abma(agents: list[AgentData], incentives: DiscreteIncentiveSet,
         const: ModelConstants, bounds: ModelBounds, horizon: int,
         ladder: np.ndarray, loss_kind: str = "step",
         loss_horizon: int | None = None, block_len: int = 7,
         tail_days: int = 0, command: str | None = None,
         est_node_limit: int | None = None,
         est_time_limit: float | None = None,
         des_node_limit: int | None = None,
         des_time_limit: float | None = None) -> AbmaResult:
    """Price the matrix, run the master, hand back the chosen plans."""
    before = SOLVE_COUNTS["milp"] + SOLVE_COUNTS["external"]
    phi = build_phi_matrix(agents, incentives, const, bounds, horizon,
                           ladder, loss_kind, loss_horizon, block_len,
                           tail_days, command, est_node_limit,
                           est_time_limit, des_node_limit,
                           des_time_limit)
    sub = SOLVE_COUNTS["milp"] + SOLVE_COUNTS["external"] - before
    assign = master_knapsack(phi, incentives.budget)
    plans: dict[str, IncentivePlan] = {}
    for i, name in enumerate(phi.agents):
        j = phi.levels.index(assign.levels_chosen[i])
        cell = phi.cells[i][j]
        if cell is not None:
            plans[name] = cell.plan
    return AbmaResult(phi=phi, assignment=assign, plans=plans,
                      objective=assign.objective,
                      solve_counts={"subproblem": sub, "master": 1})


@dataclass
class MonolithicResult:
    objective: float
    levels_chosen: list[int]
    plans: dict[str, IncentivePlan]


def monolithic_oracle(agents: list[AgentData],
                      incentives: DiscreteIncentiveSet,
                      const: ModelConstants, bounds: ModelBounds,
                      horizon: int, ladder: np.ndarray,
                      loss_kind: str = "step",
                      loss_horizon: int | None = None,
                      block_len: int = 7,
                      tail_days: int = 0) -> MonolithicResult:
    """Ground-truth joint optimum by enumerating every assignment and
    every schedule combination, replaying each on the simulator.  Only
    for tiny instances; inputs must carry known hidden vectors."""
    if len(agents) > 2:
        raise ParamError("joint enumeration is capped at 2 agents")
    if len(incentives.levels) > 2:
        raise ParamError("joint enumeration is capped at 2 levels")
    if horizon > 10:
        raise ParamError("joint enumeration is capped at 10 days")
    ladder = np.sort(np.asarray(ladder, dtype=float))
    options = []
    for agent in agents:
        agent.validate()
        if not agent.truth_mode:
            raise ParamError(f"agent {agent.name}: the enumerator needs "
                             "known hidden vectors")
        loss = LossSpec(loss_kind, anchor=agent.resolve_anchor(),
                        horizon=loss_horizon)
        w0, fb0, Fb0, p0 = agent.state
        th = agent.theta
        params = AgentParams(w0=w0, u_b=th[0], f_b0=fb0, F_b0=Fb0,
                             p0=p0, mu=th[4], delta=th[5], beta_v=th[6],
                             const=const)
        eligible = [t for t in range(horizon)
                    if (agent.start_day + t) % 7 == 1]
        blocks = [(s, min(s + block_len, horizon))
                  for s in range(0, horizon, block_len)]
        per_level = {}
        for v in incentives.levels:
            if v > len(eligible):
                raise ParamError(f"agent {agent.name}: level {v} has no "
                                 "room in the window")
            plans = []
            for combo in itertools.product(ladder, repeat=len(blocks)):
                goals = np.full(horizon + tail_days, np.nan)
                for g, (s, e) in zip(combo, blocks):
                    goals[s:e] = g
                for days in itertools.combinations(eligible, v):
                    visits = np.zeros(horizon + tail_days,
                                      dtype=np.int64)
                    visits[list(days)] = 1
                    plan = IncentivePlan(goals.copy(), visits,
                                         start_day=agent.start_day)
                    traj = simulate(params, plan, bounds)
                    plans.append((loss.value(float(traj.w[-1])), plan))
            per_level[v] = plans
        options.append(per_level)
    best_obj, best_levels, best_plans = math.inf, None, None
    for lv in itertools.product(incentives.levels, repeat=len(agents)):
        if sum(lv) > incentives.budget:
            continue
        for combo in itertools.product(
                *[options[i][lv[i]] for i in range(len(agents))]):
            total = sum(c[0] for c in combo)
            if total < best_obj:
                best_obj = total
                best_levels = list(lv)
                best_plans = {agents[i].name: combo[i][1]
                              for i in range(len(agents))}
    if best_levels is None:
        raise ParamError("no feasible joint assignment under the budget")
    return MonolithicResult(objective=best_obj,
                            levels_chosen=best_levels, plans=best_plans)
