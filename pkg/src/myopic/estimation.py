"""Hidden-parameter estimation from noisy weight and step observations.

The agent's daily choice is characterized exactly by its first-order
conditions: food intake satisfies a stationarity equation that lets both
the food variable and the eating-baseline trajectory be substituted out,
and activity satisfies a complementarity condition whose multiplier is
pinned by which side of the goal the agent lands on.  Enumerating the
multiplier regimes with binaries turns maximum-likelihood estimation
under Laplace observation noise into a mixed-integer linear program:
minimize the weighted sum of absolute residuals subject to the dynamics
and the regime constraints.

A histogram prior over the hidden components (built from other agents'
estimates) adds bin-selector binaries and turns the same program into a
maximum-a-posteriori estimator; re-solving with components pinned gives
a normalized posterior score for any candidate vector.
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
    ObservationSet,
    ParamError,
    simulate,
)
from .linprog import (
    BINARY,
    GAP_TOL,
    STATUS_LIMIT,
    STATUS_OPTIMAL,
    MilpModel,
    ModelBuilder,
    solve_auto,
)


class EstimationFailed(RuntimeError):
    """The solver ended without any usable incumbent."""


def activity_upper_bound(const: ModelConstants, bounds: ModelBounds) -> float:
    """Largest activity any stationary decision can reach: baseline plus
    the weight-driven push plus the strongest penalty push."""
    c = const
    u_hi = (bounds.u_b[1]
            + (abs(c.b) * bounds.weight[1] + bounds.p[1] / 2.0) / c.r)
    return min(bounds.steps[1], u_hi)


def habit_unroll(visits: np.ndarray, const: ModelConstants
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Affine coefficients of the eating baselines over a window.

    Both baselines evolve by a fixed linear recursion in which the only
    outside input is a visit pulling the fast baseline down by beta_v, so
    every day's value is affine in (f_b at start, F_b at start, beta_v).
    Returns two (n+1, 3) arrays of coefficients, one per baseline.
    """
    g, al = const.gamma, const.alpha
    n = len(visits)
    fb = np.zeros((n + 1, 3))
    Fb = np.zeros((n + 1, 3))
    fb[0, 0] = 1.0
    Fb[0, 1] = 1.0
    for t in range(n):
        fb[t + 1] = g * fb[t] + (1.0 - g) * Fb[t]
        fb[t + 1, 2] -= float(visits[t])
        Fb[t + 1] = (1.0 - al) * Fb[t] + al * fb[t]
    return fb, Fb


@dataclass
class EstMeta:
    """Bookkeeping produced by the model builder and consumed by the
    extraction and prior-augmentation code."""

    t0: int
    t1: int
    goal_days: list[int]
    goals: np.ndarray
    visits: np.ndarray
    fb_coef: np.ndarray
    Fb_coef: np.ndarray
    comp_var: dict[str, str]
    zw_names: list[str] = field(default_factory=list)
    zu_names: list[str] = field(default_factory=list)
    w_obs: list[tuple[int, float]] = field(default_factory=list)
    u_obs: list[tuple[int, float]] = field(default_factory=list)
    sigma_w: float = 1.0
    sigma_u: float = 0.5

    def w_name(self, t: int) -> str:
        return f"w{t}"

    def p_name(self, t: int) -> str:
        return f"p{t}"

    def u_name(self, t: int) -> str:
        return f"u{t}"


def _build_core(b: ModelBuilder, obs: ObservationSet, plan: IncentivePlan,
                const: ModelConstants, bounds: ModelBounds,
                window: tuple[int, int] | None,
                pin: dict[str, float] | None = None) -> EstMeta:
    """All estimation variables and constraints except the objective."""
    c = const
    c.validate()
    obs.validate()
    plan.validate()
    t0, t1 = window if window is not None else (0, plan.horizon)
    if not (0 <= t0 < t1 <= plan.horizon):
        raise ParamError(f"window ({t0}, {t1}) outside plan horizon")
    pin = pin or {}
    for key in pin:
        if key not in THETA_COMPONENTS:
            raise ParamError(f"cannot pin unknown component {key!r}")

    goals = plan.goals[t0:t1]
    visits = plan.visits[t0:t1]
    fb_coef, Fb_coef = habit_unroll(visits, c)

    w_obs = [(int(t), float(y)) for t, y in zip(obs.w_days, obs.w_vals)
             if t0 <= t <= t1]
    u_obs = [(int(t), float(y)) for t, y in zip(obs.u_days, obs.u_vals)
             if t0 <= t < t1]
    if not w_obs and not u_obs:
        raise ParamError(f"no usable observations in window ({t0}, {t1})")

    goal_days = [t0 + j for j in range(t1 - t0) if not math.isnan(goals[j])]
    goal_set = set(goal_days)

    u_hi = activity_upper_bound(c, bounds)
    M_s4 = 2.0 * c.r * u_hi + 1.0
    M_p = bounds.p[1]
    M_mu = bounds.mu[1]
    eps = bounds.eps

    def box(comp: str) -> tuple[float, float]:
        lo, hi = bounds.theta_box(comp)
        if comp in pin:
            v = float(pin[comp])
            return v, v
        return lo, hi

    meta = EstMeta(t0=t0, t1=t1, goal_days=goal_days, goals=goals,
                   visits=visits, fb_coef=fb_coef, Fb_coef=Fb_coef,
                   comp_var={}, sigma_w=obs.sigma_w, sigma_u=obs.sigma_u,
                   w_obs=w_obs, u_obs=u_obs)

    # hidden components (window-start states and invariants)
    for comp, vn in (("u_b", "u_b"), ("mu", "mu"), ("delta", "delta"),
                     ("beta_v", "beta_v"), ("f_b0", "fb0"), ("F_b0", "Fb0")):
        lo, hi = box(comp)
        b.var(vn, lo, hi)
        meta.comp_var[comp] = vn
    for t in range(t0, t1 + 1):
        b.var(meta.w_name(t), bounds.weight[0], bounds.weight[1])
        if t == t0 and "p0" in pin:
            b.var(meta.p_name(t), pin["p0"], pin["p0"])
        else:
            b.var(meta.p_name(t), bounds.p[0], bounds.p[1])
    meta.comp_var["p0"] = meta.p_name(t0)
    for t in goal_days:
        b.var(meta.u_name(t), 0.0, u_hi)
        for x in ("x1", "x2", "x3", "m"):
            b.var(f"{x}_{t}", 0.0, 1.0, BINARY)

    def fb_terms(j: int, scale: float) -> dict[str, float]:
        return {"fb0": scale * fb_coef[j, 0], "Fb0": scale * fb_coef[j, 1],
                "beta_v": scale * fb_coef[j, 2]}

    r = c.r
    denom = 1.0 + (1.0 + c.b * c.b) / r
    for t in range(t0, t1):
        j = t - t0
        wt, wn = meta.w_name(t), meta.w_name(t + 1)
        pt, pn = meta.p_name(t), meta.p_name(t + 1)
        d = float(visits[j])
        if t in goal_set:
            ut = meta.u_name(t)
            g = float(goals[j])
            x1, x2, x3, m = (f"x1_{t}", f"x2_{t}", f"x3_{t}", f"m_{t}")
            # weight recursion with food substituted out by its
            # stationarity condition
            row = {wn: 1.0 + r, wt: -r * c.a, ut: -r * c.b}
            row.update(fb_terms(j, -r))
            b.con(row, "=", r * c.k, f"wd{t}")
            # implied food intake stays nonnegative; at zero exactly the
            # substituted stationarity degenerates to the clamped choice
            fpos = {wt: c.a, ut: c.b}
            fpos.update(fb_terms(j, -r))
            b.con(fpos, "<=", -c.k, f"fp{t}")
            # activity stationarity: S = 2 b w' + 2 r (u - u_b) equals
            # the penalty multiplier, so it sits in [0, p], hitting p
            # when short of the goal and 0 when above it
            S = {wn: 2.0 * c.b, ut: 2.0 * r, "u_b": -2.0 * r}
            negS = {wn: -2.0 * c.b, ut: -2.0 * r, "u_b": 2.0 * r}
            b.con(dict(negS), "<=", 0.0, f"s1_{t}")
            b.con({**S, pt: -1.0}, "<=", 0.0, f"s2_{t}")
            b.con({**negS, pt: 1.0, x1: M_p}, "<=", M_p, f"s3_{t}")
            b.con({**S, x3: M_s4}, "<=", M_s4, f"s4_{t}")
            # which side of the goal the chosen activity lands on
            Mb = max(u_hi - g, g) + eps + 0.5
            b.con({ut: 1.0, x1: Mb}, "<=", g + Mb, f"b1_{t}")
            b.con({ut: -1.0, x2: Mb}, "<=", Mb - g, f"b2_{t}")
            b.con({ut: 1.0, x2: Mb}, "<=", g + Mb, f"b3_{t}")
            b.con({ut: -1.0, x3: Mb}, "<=", Mb - g, f"b4_{t}")
            b.con({x1: 1.0, x2: 1.0, x3: 1.0}, "=", 1.0, f"bx_{t}")
            # goal met within the tolerance band
            b.con({ut: -1.0, m: Mb}, "<=", Mb - g + eps, f"m1_{t}")
            b.con({ut: 1.0, m: -Mb}, "<=", g - eps, f"m2_{t}")
            b.con({x2: 1.0, m: -1.0}, "<=", 0.0, f"m3_{t}")
            b.con({x3: 1.0, m: -1.0}, "<=", 0.0, f"m4_{t}")
            # penalty-weight recursion, met branch adding mu
            b.con({pn: -1.0, pt: c.gamma, "delta": d}, "<=", 0.0, f"pd1_{t}")
            b.con({pn: 1.0, pt: -c.gamma, "delta": -d, "mu": -1.0},
                  "<=", 0.0, f"pd2_{t}")
            b.con({pn: 1.0, pt: -c.gamma, "delta": -d, m: -M_mu},
                  "<=", 0.0, f"pd3_{t}")
            b.con({pn: -1.0, pt: c.gamma, "delta": d, "mu": 1.0, m: M_mu},
                  "<=", M_mu, f"pd4_{t}")
        else:
            # no goal: activity is pinned to its stationarity value, so
            # it folds into the weight recursion entirely
            row = {wn: denom, wt: -c.a, "u_b": -c.b}
            row.update(fb_terms(j, -1.0))
            b.con(row, "=", c.k, f"wd{t}")
            fpos = {wn: 1.0}
            fpos.update(fb_terms(j, -r))
            b.con(fpos, "<=", 0.0, f"fp{t}")
            b.con({pn: 1.0, pt: -c.gamma, "delta": -d}, "=", 0.0, f"pd{t}")

    # a strict miss propagates to the next day when nothing intervenes,
    # and comfortably-met days persist likewise
    for t in goal_days:
        if t + 1 not in goal_set:
            continue
        j = t - t0
        chg = 0 if abs(goals[j] - goals[j + 1]) <= 1e-12 else 1
        if float(visits[j]) + chg >= 1:
            continue
        b.con({f"x1_{t}": 1.0, f"m_{t}": -1.0, f"x1_{t+1}": -1.0},
              "<=", 0.0, f"c1_{t}")
        b.con({f"m_{t+1}": 1.0, f"m_{t}": -1.0}, "<=", 0.0, f"c2_{t}")
        b.con({f"x3_{t}": 1.0, f"x3_{t+1}": -1.0}, "<=", 0.0, f"c3_{t}")

    # absolute-residual envelopes for the observations
    for i, (t, y) in enumerate(w_obs):
        zn = b.var(f"zw{i}", 0.0)
        meta.zw_names.append(zn)
        b.con({meta.w_name(t): 1.0, zn: -1.0}, "<=", y, f"rwp{i}")
        b.con({meta.w_name(t): -1.0, zn: -1.0}, "<=", -y, f"rwm{i}")
    for i, (t, y) in enumerate(u_obs):
        zn = b.var(f"zu{i}", 0.0)
        meta.zu_names.append(zn)
        if t in goal_set:
            b.con({meta.u_name(t): 1.0, zn: -1.0}, "<=", y, f"rup{i}")
            b.con({meta.u_name(t): -1.0, zn: -1.0}, "<=", -y, f"rum{i}")
        else:
            # activity on a free day is u_b - (b/r) w(t+1)
            wn = meta.w_name(t + 1)
            b.con({"u_b": 1.0, wn: -c.b / r, zn: -1.0}, "<=", y, f"rup{i}")
            b.con({"u_b": -1.0, wn: c.b / r, zn: -1.0}, "<=", -y, f"rum{i}")
    return meta


def _nll_objective(meta: EstMeta) -> dict[str, float]:
    cw = math.sqrt(2.0) / meta.sigma_w
    cu = math.sqrt(2.0) / meta.sigma_u
    obj = {zn: cw for zn in meta.zw_names}
    obj.update({zn: cu for zn in meta.zu_names})
    return obj


def build_mle_model(obs: ObservationSet, plan: IncentivePlan,
                    const: ModelConstants, bounds: ModelBounds,
                    window: tuple[int, int] | None = None
                    ) -> tuple[MilpModel, EstMeta]:
    b = ModelBuilder("EST")
    meta = _build_core(b, obs, plan, const, bounds, window)
    b.objective(_nll_objective(meta), "min")
    return b.build(), meta


@dataclass
class HistogramPrior:
    """Per-component histogram over the hidden vector, with smoothed
    masses; edges always span the component's box."""

    edges: dict[str, np.ndarray]
    masses: dict[str, np.ndarray]

    def bin_of(self, comp: str, x: float) -> int:
        e = self.edges[comp]
        i = int(np.searchsorted(e, x, side="right")) - 1
        i = min(max(i, 0), len(e) - 2)
        # a value near an interior edge belongs to either neighbor in the
        # solver's encoding, and the solver charges the cheaper side;
        # score it the same way
        m = self.masses[comp]
        tol = 1e-9 * (1.0 + abs(x))
        if i > 0 and abs(x - e[i]) <= tol and m[i - 1] > m[i]:
            return i - 1
        if i < len(m) - 1 and abs(e[i + 1] - x) <= tol and m[i + 1] > m[i]:
            return i + 1
        return i

    def log_mass(self, comp: str, x: float) -> float:
        return float(np.log(self.masses[comp][self.bin_of(comp, x)]))

    def validate(self) -> None:
        for comp, m in self.masses.items():
            if np.any(m <= 0.0):
                raise ParamError(f"prior for {comp} has a zero-mass bin")
            if abs(m.sum() - 1.0) > 1e-9:
                raise ParamError(f"prior for {comp} is not normalized")
            if len(self.edges[comp]) != len(m) + 1:
                raise ParamError(f"prior for {comp} has mismatched edges")


def build_histogram_prior(thetas: list[np.ndarray], bounds: ModelBounds,
                          n_bins: int = 6, smoothing: float = 1.0
                          ) -> HistogramPrior:
    """Histogram the component values of other agents' estimates over
    each component's box, with add-one style smoothing so no bin is
    impossible."""
    if smoothing <= 0.0:
        raise ParamError("smoothing must be positive")
    edges: dict[str, np.ndarray] = {}
    masses: dict[str, np.ndarray] = {}
    arr = np.asarray(thetas, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != len(THETA_COMPONENTS):
        raise ParamError("thetas must be vectors with one entry per "
                         "hidden component")
    for ci, comp in enumerate(THETA_COMPONENTS):
        lo, hi = bounds.theta_box(comp)
        e = np.linspace(lo, hi, n_bins + 1)
        vals = np.clip(arr[:, ci], lo, hi - 1e-12)
        counts, _ = np.histogram(vals, bins=e)
        m = (counts + smoothing) / (counts.sum() + n_bins * smoothing)
        edges[comp] = e
        masses[comp] = m
    prior = HistogramPrior(edges, masses)
    prior.validate()
    return prior


def _add_prior(b: ModelBuilder, meta: EstMeta, prior: HistogramPrior
               ) -> dict[str, float]:
    """Bin-selector binaries with disaggregated copies tying each
    component variable to exactly one bin; returns the objective terms."""
    prior.validate()
    terms: dict[str, float] = {}
    for comp in THETA_COMPONENTS:
        e = prior.edges[comp]
        m = prior.masses[comp]
        vn = meta.comp_var[comp]
        copy_row: dict[str, float] = {}
        zsum: dict[str, float] = {}
        for i in range(len(m)):
            z = b.var(f"zP_{comp}_{i}", 0.0, 1.0, BINARY)
            x = b.var(f"xP_{comp}_{i}", min(e[i], 0.0), max(e[i + 1], 0.0))
            b.con({x: 1.0, z: -e[i + 1]}, "<=", 0.0)
            b.con({x: -1.0, z: e[i]}, "<=", 0.0)
            copy_row[x] = 1.0
            zsum[z] = 1.0
            terms[z] = -math.log(m[i])
        copy_row[vn] = -1.0
        b.con(copy_row, "=", 0.0, f"agg_{comp}")
        b.con(zsum, "=", 1.0, f"zs_{comp}")
    return terms


def build_map_model(obs: ObservationSet, plan: IncentivePlan,
                    const: ModelConstants, bounds: ModelBounds,
                    prior: HistogramPrior,
                    window: tuple[int, int] | None = None,
                    pin: dict[str, float] | None = None
                    ) -> tuple[MilpModel, EstMeta]:
    b = ModelBuilder("MAP")
    meta = _build_core(b, obs, plan, const, bounds, window, pin=pin)
    obj = _nll_objective(meta)
    obj.update(_add_prior(b, meta, prior))
    b.objective(obj, "min")
    return b.build(), meta


@dataclass
class EstimateResult:
    """Estimation output: the hidden vector at the window start, the
    state carried to the window end, solver status, and the latent
    trajectory implied by the solution (used by the replay check)."""

    theta: np.ndarray
    w0: float
    state_end: tuple[float, float, float, float]
    objective: float
    status: str
    certified: bool
    well_posed: bool
    window: tuple[int, int]
    nodes: int
    wall_time: float
    replay_max_diff: float
    trajectory: dict[str, np.ndarray]
    const: ModelConstants
    psi: float | None = None

    def params(self) -> AgentParams:
        t = self.theta
        return AgentParams(w0=self.w0, u_b=t[0], f_b0=t[1], F_b0=t[2],
                           p0=t[3], mu=t[4], delta=t[5], beta_v=t[6],
                           const=self.const)


def _extract(meta: EstMeta, values: dict[str, float],
             const: ModelConstants) -> dict[str, np.ndarray]:
    c = const
    t0, t1 = meta.t0, meta.t1
    nd = t1 - t0
    u_b = values["u_b"]
    fb0, Fb0, bv = values["fb0"], values["Fb0"], values["beta_v"]
    w = np.array([values[meta.w_name(t)] for t in range(t0, t1 + 1)])
    p = np.array([values[meta.p_name(t)] for t in range(t0, t1 + 1)])
    base = np.array([fb0, Fb0, bv])
    fb = meta.fb_coef @ base
    Fb = meta.Fb_coef @ base
    u = np.empty(nd)
    met = np.zeros(nd, dtype=bool)
    goal_set = set(meta.goal_days)
    for t in range(t0, t1):
        j = t - t0
        if t in goal_set:
            u[j] = values[meta.u_name(t)]
            met[j] = values[f"m_{t}"] > 0.5
        else:
            u[j] = u_b - (c.b / c.r) * w[j + 1]
    f = (c.r * fb[:nd] - (c.a * w[:nd] + c.b * u + c.k)) / (1.0 + c.r)
    return {"w": w, "u": u, "f": f, "f_b": fb, "F_b": Fb, "p": p,
            "goal_met": met}


def _replay_diff(meta: EstMeta, traj_vars: dict[str, np.ndarray],
                 plan: IncentivePlan, const: ModelConstants,
                 bounds: ModelBounds, theta: np.ndarray, w0: float) -> float:
    """Simulate forward from the estimated window-start state and
    compare against the solver's latent trajectory."""
    t0, t1 = meta.t0, meta.t1
    sub = plan.slice(t0, t1)
    params = AgentParams(w0=w0, u_b=theta[0], f_b0=theta[1], F_b0=theta[2],
                         p0=theta[3], mu=theta[4], delta=theta[5],
                         beta_v=theta[6], const=const)
    sim = simulate(params, sub, bounds)
    diffs = [np.max(np.abs(sim.w - traj_vars["w"])),
             np.max(np.abs(sim.u - traj_vars["u"])),
             np.max(np.abs(sim.f - traj_vars["f"])),
             np.max(np.abs(sim.p - traj_vars["p"]))]
    return float(max(diffs))


def _finish(model: MilpModel, meta: EstMeta, plan: IncentivePlan,
            const: ModelConstants, bounds: ModelBounds, psi_mode: bool,
            command, gap, node_limit, time_limit) -> EstimateResult:
    sol = solve_auto(model, command=command, gap=gap, node_limit=node_limit,
                     time_limit=time_limit)
    if sol.status not in (STATUS_OPTIMAL, STATUS_LIMIT) or not sol.values:
        raise EstimationFailed(f"estimation solve ended {sol.status} "
                               f"with no usable solution")
    vals = sol.values
    traj = _extract(meta, vals, const)
    theta = np.array([vals[meta.comp_var[comp]]
                      for comp in THETA_COMPONENTS])
    w0 = traj["w"][0]
    state_end = (float(traj["w"][-1]), float(traj["f_b"][-1]),
                 float(traj["F_b"][-1]), float(traj["p"][-1]))
    replay = _replay_diff(meta, traj, plan, const, bounds, theta, w0)
    w_days = {t for t, _ in meta.w_obs}
    well_posed = len(w_days) >= 2 and len(meta.u_obs) >= 1
    return EstimateResult(
        theta=theta, w0=float(w0), state_end=state_end,
        objective=float(sol.objective), status=sol.status,
        certified=sol.certified and well_posed, well_posed=well_posed,
        window=(meta.t0, meta.t1), nodes=sol.nodes, wall_time=sol.wall_time,
        replay_max_diff=replay, trajectory=traj, const=const,
        psi=(-float(sol.objective)) if psi_mode else None)


def estimate_mle(obs: ObservationSet, plan: IncentivePlan,
                 const: ModelConstants, bounds: ModelBounds,
                 window: tuple[int, int] | None = None,
                 command: str | None = None, gap: float = GAP_TOL,
                 node_limit: int | None = None,
                 time_limit: float | None = None) -> EstimateResult:
    model, meta = build_mle_model(obs, plan, const, bounds, window)
    return _finish(model, meta, plan, const, bounds, False,
                   command, gap, node_limit, time_limit)


def estimate_map(obs: ObservationSet, plan: IncentivePlan,
                 const: ModelConstants, bounds: ModelBounds,
                 prior: HistogramPrior,
                 window: tuple[int, int] | None = None,
                 command: str | None = None, gap: float = GAP_TOL,
                 node_limit: int | None = None,
                 time_limit: float | None = None) -> EstimateResult:
    model, meta = build_map_model(obs, plan, const, bounds, prior, window)
    return _finish(model, meta, plan, const, bounds, True,
                   command, gap, node_limit, time_limit)


def posterior_hat(obs: ObservationSet, plan: IncentivePlan,
                  const: ModelConstants, bounds: ModelBounds,
                  prior: HistogramPrior, theta: np.ndarray,
                  window: tuple[int, int] | None = None,
                  map_result: EstimateResult | None = None,
                  command: str | None = None, gap: float = GAP_TOL,
                  node_limit: int | None = None,
                  time_limit: float | None = None) -> float:
    """Normalized posterior score of a candidate hidden vector: 1 at the
    mode, decaying toward 0, exactly 0 when the candidate is infeasible."""
    if map_result is None:
        map_result = estimate_map(obs, plan, const, bounds, prior,
                                  window, command, gap, node_limit,
                                  time_limit)
    if map_result.psi is None:
        raise ParamError("posterior scoring needs a MAP result, not MLE")
    pin = {comp: float(v) for comp, v in zip(THETA_COMPONENTS, theta)}
    for comp, v in pin.items():
        lo, hi = bounds.theta_box(comp)
        if not (lo - 1e-12 <= v <= hi + 1e-12):
            return 0.0
    model, _ = build_map_model(obs, plan, const, bounds, prior,
                               window, pin=pin)
    sol = solve_auto(model, command=command, gap=gap,
                     node_limit=node_limit, time_limit=time_limit)
    if sol.status != STATUS_OPTIMAL or sol.objective is None:
        return 0.0
    return float(min(math.exp(-map_result.psi - sol.objective), 1.0))
