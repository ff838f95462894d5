"""Daily decision model for agents in a weight-management program.

Each day an agent picks physical activity u (kilosteps) and food intake
f (weight-equivalent kg, i.e. kcal divided by the tissue energy density)
to maximize a myopic utility that trades off projected next-day weight,
deviation from personal activity and eating baselines, and a linear
penalty for falling short of the day's assigned step goal.  Hidden
motivational state (eating baselines f_b, F_b and penalty weight p)
evolves day to day and is nudged by clinic visits.

Units are chosen so the weight recursion has coefficient exactly 1 on
food: weight in kg, activity in kilosteps/day, food in kg-equivalent/day.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

THETA_COMPONENTS = ("u_b", "f_b0", "F_b0", "p0", "mu", "delta", "beta_v")


class ParamError(ValueError):
    """Raised for out-of-range or inconsistent model inputs."""


@dataclass(frozen=True)
class ModelConstants:
    """Coordinator-known constants: weight recursion coefficients from
    demographics plus the shared behavioral constants."""

    a: float
    b: float
    k: float
    r: float = 1.0
    alpha: float = 0.25
    gamma: float = 0.9

    def validate(self) -> None:
        if not (0.0 < self.a < 1.0):
            raise ParamError(f"weight persistence a={self.a} outside (0, 1)")
        if self.b >= 0.0:
            raise ParamError(f"activity coefficient b={self.b} must be < 0")
        if self.r <= 0.0:
            raise ParamError("baseline deviation weight r must be > 0")
        if not (0.0 < self.alpha < 1.0):
            raise ParamError("habit averaging alpha outside (0, 1)")
        if not (0.0 < self.gamma < 1.0):
            raise ParamError("decay gamma outside (0, 1)")


@dataclass
class ModelBounds:
    """State and parameter boxes.  The simulator clamps states into these
    after every step; the estimation and design builders use them for
    boxes and big-M sizing."""

    weight: tuple[float, float] = (30.0, 200.0)
    steps: tuple[float, float] = (0.0, 30.0)
    food: tuple[float, float] = (0.0, 10.0)
    u_b: tuple[float, float] = (0.0, 15.0)
    f_b: tuple[float, float] = (30.0, 260.0)
    F_b: tuple[float, float] = (30.0, 260.0)
    p: tuple[float, float] = (0.0, 12.0)
    mu: tuple[float, float] = (0.0, 2.0)
    delta: tuple[float, float] = (0.0, 2.0)
    beta_v: tuple[float, float] = (0.0, 2.0)
    goal: tuple[float, float] = (0.0, 15.0)
    eps: float = 0.1

    def theta_box(self, name: str) -> tuple[float, float]:
        box = {"u_b": self.u_b, "f_b0": self.f_b, "F_b0": self.F_b,
               "p0": self.p, "mu": self.mu, "delta": self.delta,
               "beta_v": self.beta_v}
        return box[name]


@dataclass
class AgentParams:
    """One agent: initial weight, the seven hidden components, constants."""

    w0: float
    u_b: float
    f_b0: float
    F_b0: float
    p0: float
    mu: float
    delta: float
    beta_v: float
    const: ModelConstants

    def theta0(self) -> np.ndarray:
        return np.array([self.u_b, self.f_b0, self.F_b0, self.p0,
                         self.mu, self.delta, self.beta_v])

    def validate(self, bounds: ModelBounds | None = None) -> None:
        self.const.validate()
        if self.p0 < 0:
            raise ParamError("initial penalty weight p0 must be >= 0")
        if bounds is not None:
            for name, val in zip(THETA_COMPONENTS, self.theta0()):
                lo, hi = bounds.theta_box(name)
                if not (lo - 1e-9 <= val <= hi + 1e-9):
                    raise ParamError(
                        f"{name}={val} outside its box [{lo}, {hi}]")
            lo, hi = bounds.weight
            if not (lo <= self.w0 <= hi):
                raise ParamError(f"w0={self.w0} outside [{lo}, {hi}]")

    def to_text(self) -> str:
        c = self.const
        pairs = [("w0", self.w0)]
        pairs += list(zip(THETA_COMPONENTS, self.theta0()))
        pairs += [("a", c.a), ("b", c.b), ("k", c.k), ("r", c.r),
                  ("alpha", c.alpha), ("gamma", c.gamma)]
        return "".join(f"{k} = {float(v)!r}\n" for k, v in pairs)

    @classmethod
    def from_text(cls, text: str) -> "AgentParams":
        vals: dict[str, float] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition("=")
            vals[key.strip()] = float(rest.strip())
        const = ModelConstants(a=vals["a"], b=vals["b"], k=vals["k"],
                               r=vals.get("r", 1.0),
                               alpha=vals.get("alpha", 0.25),
                               gamma=vals.get("gamma", 0.9))
        return cls(w0=vals["w0"], u_b=vals["u_b"], f_b0=vals["f_b0"],
                   F_b0=vals["F_b0"], p0=vals["p0"], mu=vals["mu"],
                   delta=vals["delta"], beta_v=vals["beta_v"], const=const)


def mifflin_coeffs(age_years: float, height_cm: float, sex: str,
                   activity: float = 1.0, rho: float = 7700.0,
                   step_kcal: float = 40.0) -> tuple[float, float, float]:
    """Weight-recursion coefficients from resting-energy demographics.

    Daily balance: next weight = w + (rho*f - activity*RMR(w) - step_kcal*u)
    / rho with RMR = 10 w + 6.25 height - 5 age + s, where s is +5 for
    males and -161 for females.  Collecting terms gives
    a = 1 - 10*activity/rho, b = -step_kcal/rho,
    k = -activity*(6.25 height - 5 age + s)/rho.
    """
    if not (18.0 <= age_years <= 90.0):
        raise ParamError(f"age {age_years} outside supported range [18, 90]")
    if not (120.0 <= height_cm <= 220.0):
        raise ParamError(f"height {height_cm} outside [120, 220] cm")
    if sex not in ("male", "female"):
        raise ParamError(f"sex must be 'male' or 'female', got {sex!r}")
    if not (0.8 <= activity <= 2.5):
        raise ParamError(f"activity factor {activity} outside [0.8, 2.5]")
    if rho <= 0 or step_kcal < 0:
        raise ParamError("rho must be > 0 and step_kcal >= 0")
    s = 5.0 if sex == "male" else -161.0
    a = 1.0 - 10.0 * activity / rho
    b = -step_kcal / rho
    k = -activity * (6.25 * height_cm - 5.0 * age_years + s) / rho
    return a, b, k


@dataclass
class IncentivePlan:
    """Per-day goals (nan = no goal that day) and visit indicators.

    ``start_day`` anchors the plan on the absolute program calendar:
    entry t covers program day start_day + t.  Visit eligibility (day
    mod 7 == 1) is a calendar rule, so slices taken mid-program keep
    validating correctly.
    """

    goals: np.ndarray
    visits: np.ndarray
    start_day: int = 0

    def __post_init__(self):
        self.goals = np.asarray(self.goals, dtype=float)
        self.visits = np.asarray(self.visits, dtype=np.int64)

    @property
    def horizon(self) -> int:
        return len(self.goals)

    def validate(self) -> None:
        if len(self.goals) != len(self.visits):
            raise ParamError("goals and visits must have the same length")
        if np.any((self.visits != 0) & (self.visits != 1)):
            raise ParamError("visits must be 0/1")
        days = np.nonzero(self.visits)[0]
        for t in days:
            if (self.start_day + t) % 7 != 1:
                raise ParamError(
                    f"visit on program day {self.start_day + t}: only "
                    "days with day mod 7 == 1 are eligible")
        if len(days) >= 2 and np.diff(days).min() < 7:
            raise ParamError("visits closer than 7 days apart")

    def slice(self, t0: int, t1: int) -> "IncentivePlan":
        if not (0 <= t0 <= t1 <= self.horizon):
            raise ParamError(f"slice ({t0}, {t1}) outside plan horizon")
        return IncentivePlan(self.goals[t0:t1].copy(),
                             self.visits[t0:t1].copy(),
                             start_day=self.start_day + t0)

    @classmethod
    def empty(cls, horizon: int, start_day: int = 0) -> "IncentivePlan":
        return cls(np.full(horizon, np.nan), np.zeros(horizon, dtype=np.int64),
                   start_day=start_day)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf)
        wr.writerow(["day", "goal", "visit"])
        for t in range(self.horizon):
            g = "" if math.isnan(self.goals[t]) else f"{self.goals[t]:.12g}"
            wr.writerow([self.start_day + t, g, int(self.visits[t])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "IncentivePlan":
        rows = list(csv.reader(io.StringIO(text)))
        goals, visits = [], []
        start = 0
        for i, (day, g, d) in enumerate(rows[1:]):
            if i == 0:
                start = int(day)
            goals.append(float(g) if g != "" else math.nan)
            visits.append(int(d))
        plan = cls(np.array(goals), np.array(visits), start_day=start)
        plan.validate()
        return plan


@dataclass
class Trajectory:
    """Latent trajectory: states w/f_b/F_b/p have length T+1, decisions
    u/f and the goal-met flags length T."""

    w: np.ndarray
    u: np.ndarray
    f: np.ndarray
    f_b: np.ndarray
    F_b: np.ndarray
    p: np.ndarray
    goal_met: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.u)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf)
        wr.writerow(["day", "w", "u", "f", "f_b", "F_b", "p", "goal_met"])
        T = self.horizon
        for t in range(T + 1):
            if t < T:
                wr.writerow([t, f"{self.w[t]:.10g}", f"{self.u[t]:.10g}",
                             f"{self.f[t]:.10g}", f"{self.f_b[t]:.10g}",
                             f"{self.F_b[t]:.10g}", f"{self.p[t]:.10g}",
                             int(self.goal_met[t])])
            else:
                wr.writerow([t, f"{self.w[t]:.10g}", "", "",
                             f"{self.f_b[t]:.10g}", f"{self.F_b[t]:.10g}",
                             f"{self.p[t]:.10g}", ""])
        return buf.getvalue()


@dataclass
class ObservationSet:
    """Noisy weight and step observations on (strictly increasing) days.

    sigma values are standard deviations of the additive Laplace noise.
    """

    w_days: np.ndarray
    w_vals: np.ndarray
    u_days: np.ndarray
    u_vals: np.ndarray
    sigma_w: float = 1.0
    sigma_u: float = 0.5

    def __post_init__(self):
        self.w_days = np.asarray(self.w_days, dtype=np.int64)
        self.w_vals = np.asarray(self.w_vals, dtype=float)
        self.u_days = np.asarray(self.u_days, dtype=np.int64)
        self.u_vals = np.asarray(self.u_vals, dtype=float)

    def validate(self) -> None:
        if len(self.w_days) != len(self.w_vals):
            raise ParamError("weight day/value length mismatch")
        if len(self.u_days) != len(self.u_vals):
            raise ParamError("step day/value length mismatch")
        for days in (self.w_days, self.u_days):
            if len(days) >= 2 and np.diff(days).min() <= 0:
                raise ParamError("observation days must be strictly increasing")
        if self.sigma_w <= 0 or self.sigma_u <= 0:
            raise ParamError("noise scales must be positive")

    @property
    def n_obs(self) -> int:
        return len(self.w_days) + len(self.u_days)

    def last_day(self) -> int:
        cands = [int(d[-1]) for d in (self.w_days, self.u_days) if len(d)]
        if not cands:
            raise ParamError("empty observation set")
        return max(cands)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf)
        wr.writerow(["kind", "day", "value"])
        wr.writerow(["sigma_w", "", f"{self.sigma_w:.12g}"])
        wr.writerow(["sigma_u", "", f"{self.sigma_u:.12g}"])
        for d, v in zip(self.w_days, self.w_vals):
            wr.writerow(["weight", int(d), f"{v:.10g}"])
        for d, v in zip(self.u_days, self.u_vals):
            wr.writerow(["steps", int(d), f"{v:.10g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ObservationSet":
        rows = list(csv.reader(io.StringIO(text)))
        sw, su = 1.0, 0.5
        wd, wv, ud, uv = [], [], [], []
        for kind, day, value in rows[1:]:
            if kind == "sigma_w":
                sw = float(value)
            elif kind == "sigma_u":
                su = float(value)
            elif kind == "weight":
                wd.append(int(day))
                wv.append(float(value))
            elif kind == "steps":
                ud.append(int(day))
                uv.append(float(value))
            else:
                raise ParamError(f"unknown observation kind {kind!r}")
        obs = cls(np.array(wd), np.array(wv), np.array(ud), np.array(uv),
                  sw, su)
        obs.validate()
        return obs


# ---------------------------------------------------------------------------
# the daily decision
# ---------------------------------------------------------------------------


def utility(w: float, u: float, f: float, u_b: float, f_b: float, p: float,
            goal: float | None, c: ModelConstants) -> float:
    """The myopic objective the agent maximizes each day."""
    w_next = c.a * w + c.b * u + f + c.k
    val = -w_next * w_next - c.r * (u - u_b) ** 2 - c.r * (f - f_b) ** 2
    if goal is not None and not math.isnan(goal):
        val += p * min(u - goal, 0.0)
    return val


def _best_f_given_u(u: float, w: float, f_b: float, c: ModelConstants) -> float:
    # argmax over f >= 0 of -(C + b u + f)^2 - r (f - f_b)^2
    C = c.a * w + c.k
    f = (c.r * f_b - (C + c.b * u)) / (1.0 + c.r)
    return max(f, 0.0)


def _best_u_given_f(f: float, w: float, u_b: float, p_lin: float,
                    lo: float, hi: float, c: ModelConstants) -> float:
    # argmax over u in [lo, hi] with an extra linear term p_lin * u
    C = c.a * w + c.k
    u = (c.r * u_b - c.b * (C + f) + p_lin / 2.0) / (c.r + c.b * c.b)
    return min(max(u, lo), hi)


def decide(w: float, u_b: float, f_b: float, p: float,
           goal: float | None, c: ModelConstants) -> tuple[float, float]:
    """Closed-form daily decision.

    The objective is concave and piecewise quadratic in (u, f) with a
    kink at u = goal, so the argmax is found by enumerating the interior
    stationary points of the two quadratic pieces, the kink line, the
    nonnegativity facets, and their vertices, then taking the best.
    """
    C = c.a * w + c.k
    g = None if goal is None or math.isnan(goal) else float(goal)
    denom = 1.0 + (1.0 + c.b * c.b) / c.r

    cands: list[tuple[float, float]] = []

    def add(u: float, f: float) -> None:
        cands.append((max(u, 0.0), max(f, 0.0)))

    glo = max(g, 0.0) if g is not None else 0.0
    # penalty-free piece (u >= goal, or everywhere when no goal)
    wA = (C + c.b * u_b + f_b) / denom
    uA = u_b - (c.b / c.r) * wA
    fA = f_b - wA / c.r
    if uA >= glo and fA >= 0:
        add(uA, fA)
    add(glo, _best_f_given_u(glo, w, f_b, c))
    add(_best_u_given_f(0.0, w, u_b, 0.0, glo, math.inf, c), 0.0)
    add(glo, 0.0)

    if g is not None and g > 0.0:
        # penalized piece (u <= goal): linear bonus p shifts the u target
        wB = (C + c.b * u_b + c.b * p / (2 * c.r) + f_b) / denom
        uB = u_b - (c.b / c.r) * wB + p / (2 * c.r)
        fB = f_b - wB / c.r
        if 0.0 <= uB <= g and fB >= 0:
            add(uB, fB)
        add(0.0, _best_f_given_u(0.0, w, f_b, c))
        add(_best_u_given_f(0.0, w, u_b, p, 0.0, g, c), 0.0)
        add(0.0, 0.0)

    best = None
    best_val = -math.inf
    for u, f in cands:
        val = utility(w, u, f, u_b, f_b, p, g, c)
        if val > best_val + 1e-15:
            best_val = val
            best = (u, f)
    return best


def decide_oracle(w: float, u_b: float, f_b: float, p: float,
                  goal: float | None, c: ModelConstants,
                  grid: float = 0.05, polish_iters: int = 80
                  ) -> tuple[float, float]:
    """Independent slow path: coarse grid search then exact alternating
    one-dimensional maximization of the true utility.  Used only by
    tests as the reference decide() has to match."""
    g = None if goal is None or math.isnan(goal) else float(goal)
    C = c.a * w + c.k
    u_hi = max(u_b, g if g is not None else 0.0) + max(p, 0.0) / (2 * c.r) + 5.0
    f_hi = max(f_b, 0.0) + max(0.0, -C / (1.0 + c.r)) + 2.0
    uu = np.arange(0.0, u_hi + grid, grid)
    ff = np.arange(0.0, f_hi + grid, grid)
    U, F = np.meshgrid(uu, ff, indexing="ij")
    Wn = c.a * w + c.b * U + F + c.k
    val = -Wn ** 2 - c.r * (U - u_b) ** 2 - c.r * (F - f_b) ** 2
    if g is not None:
        val = val + p * np.minimum(U - g, 0.0)
    iu, jf = np.unravel_index(np.argmax(val), val.shape)
    u, f = float(uu[iu]), float(ff[jf])
    for _ in range(polish_iters):
        f = _best_f_given_u(u, w, f_b, c)
        # exact 1-D argmax over u of the piecewise quadratic
        cands = [_best_u_given_f(f, w, u_b, 0.0,
                                 glo := (max(g, 0.0) if g is not None else 0.0),
                                 math.inf, c)]
        if g is not None and g > 0:
            cands.append(_best_u_given_f(f, w, u_b, p, 0.0, g, c))
            cands.append(g)
        cands.append(0.0)
        u = max(cands, key=lambda uc: utility(w, uc, f, u_b, f_b, p, g, c))
    return u, f


def step(w: float, u: float, f: float, f_b: float, F_b: float, p: float,
         visit: int, goal: float | None, params: AgentParams,
         bounds: ModelBounds | None = None
         ) -> tuple[float, float, float, float, bool]:
    """One day of dynamics; returns (w', f_b', F_b', p', goal_met)."""
    c = params.const
    eps = bounds.eps if bounds is not None else 0.1
    met = goal is not None and not math.isnan(goal) and u >= goal - eps
    w1 = c.a * w + c.b * u + f + c.k
    F1 = (1.0 - c.alpha) * F_b + c.alpha * f_b
    f1 = c.gamma * (f_b - F_b) + F_b - params.beta_v * visit
    p1 = c.gamma * p + params.delta * visit + (params.mu if met else 0.0)
    if bounds is not None:
        w1 = min(max(w1, bounds.weight[0]), bounds.weight[1])
        f1 = min(max(f1, bounds.f_b[0]), bounds.f_b[1])
        F1 = min(max(F1, bounds.F_b[0]), bounds.F_b[1])
        p1 = min(max(p1, bounds.p[0]), bounds.p[1])
    return w1, f1, F1, p1, met


def simulate(params: AgentParams, plan: IncentivePlan,
             bounds: ModelBounds | None = None,
             init_state: tuple[float, float, float, float] | None = None
             ) -> Trajectory:
    """Run decide/step over the plan horizon.

    ``init_state`` overrides (w, f_b, F_b, p) at day 0, which is how a
    window continuation picks up mid-program; defaults to the params'
    initial values.  Horizon 0 returns just the initial state.
    """
    plan.validate()
    T = plan.horizon
    w = np.empty(T + 1)
    f_b = np.empty(T + 1)
    F_b = np.empty(T + 1)
    p = np.empty(T + 1)
    u = np.empty(T)
    f = np.empty(T)
    met = np.zeros(T, dtype=bool)
    if init_state is None:
        w[0], f_b[0], F_b[0], p[0] = (params.w0, params.f_b0, params.F_b0,
                                      params.p0)
    else:
        w[0], f_b[0], F_b[0], p[0] = init_state
    for t in range(T):
        g = plan.goals[t]
        gval = None if math.isnan(g) else float(g)
        u[t], f[t] = decide(w[t], params.u_b, f_b[t], p[t], gval, params.const)
        w[t + 1], f_b[t + 1], F_b[t + 1], p[t + 1], met[t] = step(
            w[t], u[t], f[t], f_b[t], F_b[t], p[t],
            int(plan.visits[t]), gval, params, bounds)
    return Trajectory(w, u, f, f_b, F_b, p, met)


def observe(traj: Trajectory, sigma_w: float = 1.0, sigma_u: float = 0.5,
            missingness: float = 0.0, seed: int | None = 0
            ) -> ObservationSet:
    """Laplace-noise the trajectory into an observation set.

    sigma values are standard deviations (the Laplace scale is
    sigma/sqrt(2)); each day's weight and step readings are dropped
    independently with probability ``missingness``.
    """
    if not (0.0 <= missingness < 1.0):
        raise ParamError(f"missingness {missingness} outside [0, 1)")
    if sigma_w <= 0 or sigma_u <= 0:
        raise ParamError("noise scales must be positive")
    rng = np.random.default_rng(seed)
    T = traj.horizon
    keep_w = rng.random(T + 1) >= missingness
    keep_u = rng.random(T) >= missingness
    noise_w = rng.laplace(0.0, sigma_w / math.sqrt(2.0), T + 1)
    noise_u = rng.laplace(0.0, sigma_u / math.sqrt(2.0), T)
    w_days = np.nonzero(keep_w)[0]
    u_days = np.nonzero(keep_u)[0]
    obs = ObservationSet(
        w_days, traj.w[w_days] + noise_w[w_days],
        u_days, traj.u[u_days] + noise_u[u_days],
        sigma_w, sigma_u)
    obs.validate()
    return obs


def equilibrium_food_baseline(w: float, u_b: float, c: ModelConstants) -> float:
    """Food baseline that makes weight w a fixed point of the
    penalty-free decision rule."""
    denom = 1.0 + (1.0 + c.b * c.b) / c.r
    return w * denom - c.a * w - c.k - c.b * u_b
