"""Agent-model tests: coefficient mapping, the closed-form daily decision
against an independent grid+polish oracle, dynamics fixtures, noise
calibration, and serialization round-trips."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myopic.behavior import (
    AgentParams,
    IncentivePlan,
    ModelBounds,
    ModelConstants,
    ObservationSet,
    ParamError,
    decide,
    decide_oracle,
    equilibrium_food_baseline,
    mifflin_coeffs,
    observe,
    simulate,
    step,
    utility,
)

# Frozen by hand from the resting-energy identity with rho = 7700 kcal/kg,
# 40 kcal per kilostep, activity factor 1.0:
#   a = 1 - 10/7700, b = -40/7700,
#   k(age 40, 170 cm, female) = -(6.25*170 - 5*40 - 161)/7700 = -701.5/7700
A_REF = 1.0 - 10.0 / 7700.0
B_REF = -40.0 / 7700.0
K_REF_F = -701.5 / 7700.0


def default_const() -> ModelConstants:
    a, b, k = mifflin_coeffs(40.0, 170.0, "female")
    return ModelConstants(a=a, b=b, k=k)


def make_params(const=None, **kw) -> AgentParams:
    const = const or default_const()
    base = dict(w0=85.0, u_b=6.0, f_b0=85.4, F_b0=85.4, p0=0.0,
                mu=0.6, delta=0.8, beta_v=0.3)
    base.update(kw)
    return AgentParams(const=const, **base)


class TestMifflinCoeffs:
    def test_reference_values(self):
        a, b, k = mifflin_coeffs(40.0, 170.0, "female")
        assert a == pytest.approx(A_REF, abs=1e-15)
        assert b == pytest.approx(B_REF, abs=1e-15)
        assert k == pytest.approx(K_REF_F, abs=1e-15)

    def test_sex_gap_is_exact(self):
        # s flips from -161 to +5, so k differs by exactly 166/7700
        _, _, kf = mifflin_coeffs(40.0, 170.0, "female")
        _, _, km = mifflin_coeffs(40.0, 170.0, "male")
        assert kf - km == pytest.approx(166.0 / 7700.0, abs=1e-15)

    def test_infinite_density_limit(self):
        a, b, k = mifflin_coeffs(40.0, 170.0, "female", rho=1e12)
        assert a == pytest.approx(1.0, abs=1e-8)
        assert b == pytest.approx(0.0, abs=1e-8)
        assert k == pytest.approx(0.0, abs=1e-8)

    @pytest.mark.parametrize("kw", [
        dict(age_years=10.0, height_cm=170.0, sex="female"),
        dict(age_years=40.0, height_cm=300.0, sex="female"),
        dict(age_years=40.0, height_cm=170.0, sex="x"),
        dict(age_years=40.0, height_cm=170.0, sex="male", activity=5.0),
    ])
    def test_rejects_out_of_range(self, kw):
        with pytest.raises(ParamError):
            mifflin_coeffs(**kw)


class TestDecide:
    def test_matches_oracle_across_regimes(self):
        rng = np.random.default_rng(7)
        c = default_const()
        kinds = {"free": 0, "kink": 0, "short": 0, "above": 0}
        for i in range(300):
            w = rng.uniform(50.0, 150.0)
            u_b = rng.uniform(2.0, 12.0)
            if i % 2 == 0:
                f_b = equilibrium_food_baseline(w, u_b, c) + rng.uniform(-3, 3)
            else:
                f_b = rng.uniform(50.0, 200.0)
            p = rng.uniform(0.0, 8.0)
            if i % 5 == 0:
                g = None
            elif i % 5 == 1:
                # park the goal just above the penalty-free optimum so the
                # kink and the penalized piece both get exercised
                u0, _ = decide(w, u_b, f_b, 0.0, None, c)
                g = u0 + rng.uniform(0.0, 0.9) * (p / 2.0 + 0.1)
            else:
                g = rng.uniform(0.0, 14.0)
            u, f = decide(w, u_b, f_b, p, g, c)
            uo, fo = decide_oracle(w, u_b, f_b, p, g, c, grid=0.25)
            gap = (utility(w, uo, fo, u_b, f_b, p, g, c)
                   - utility(w, u, f, u_b, f_b, p, g, c))
            assert gap <= 1e-6, (w, u_b, f_b, p, g, gap)
            assert u >= 0.0 and f >= 0.0
            if g is None:
                kinds["free"] += 1
            elif abs(u - g) <= 1e-9:
                kinds["kink"] += 1
            elif u < g:
                kinds["short"] += 1
            else:
                kinds["above"] += 1
        assert min(kinds.values()) >= 15, kinds

    def test_penalty_pushes_activity_up(self):
        c = default_const()
        w, u_b = 90.0, 5.0
        f_b = equilibrium_food_baseline(w, u_b, c)
        u0, _ = decide(w, u_b, f_b, 0.0, None, c)
        g = u0 + 1.5
        us = [decide(w, u_b, f_b, p, g, c)[0] for p in (0.0, 2.0, 6.0)]
        assert us[0] <= us[1] + 1e-12
        assert us[1] <= us[2] + 1e-12
        assert us[2] > us[0]

    def test_moderate_penalty_lands_on_the_kink(self):
        c = default_const()
        w, u_b = 90.0, 5.0
        f_b = equilibrium_food_baseline(w, u_b, c)
        u0, _ = decide(w, u_b, f_b, 0.0, None, c)
        g = u0 + 0.4
        # p = 2 would overshoot the goal by p/2 - 0.4 if the penalty piece
        # ruled, and undershoot by 0.4 if the free piece ruled: the argmax
        # sits exactly on the kink.
        u, _ = decide(w, u_b, f_b, 2.0, g, c)
        assert u == pytest.approx(g, abs=1e-12)

    def test_zero_goal_is_never_binding(self):
        c = default_const()
        u_free, f_free = decide(80.0, 6.0, 82.0, 4.0, None, c)
        u_zero, f_zero = decide(80.0, 6.0, 82.0, 4.0, 0.0, c)
        assert u_zero == pytest.approx(u_free, abs=1e-12)
        assert f_zero == pytest.approx(f_free, abs=1e-12)

    @settings(deadline=None, max_examples=60)
    @given(w=st.floats(40.0, 180.0), u_b=st.floats(0.5, 14.0),
           f_b=st.floats(40.0, 250.0), p=st.floats(0.0, 10.0),
           g=st.one_of(st.none(), st.floats(0.0, 15.0)),
           probe_u=st.floats(0.0, 20.0), probe_f=st.floats(0.0, 12.0))
    def test_probe_points_never_beat_decide(self, w, u_b, f_b, p, g,
                                            probe_u, probe_f):
        c = default_const()
        u, f = decide(w, u_b, f_b, p, g, c)
        best = utility(w, u, f, u_b, f_b, p, g, c)
        assert best >= utility(w, probe_u, probe_f, u_b, f_b, p, g, c) - 1e-9
        assert best >= utility(w, u_b, f_b, u_b, f_b, p, g, c) - 1e-9


class TestDynamics:
    def test_habit_average_fixture(self):
        # alpha = 0.25: slow average 4, fast baseline 8 -> 0.75*4 + 0.25*8 = 5
        c = ModelConstants(a=0.5, b=-0.1, k=0.0)
        params = make_params(const=c, beta_v=0.3, delta=0.8, mu=0.6)
        w1, f1, F1, p1, met = step(0.0, 0.0, 0.0, 8.0, 4.0, 0.0,
                                   visit=0, goal=None, params=params)
        assert F1 == pytest.approx(5.0, abs=1e-15)
        assert f1 == pytest.approx(0.9 * 4.0 + 4.0, abs=1e-15)
        assert p1 == 0.0 and w1 == 0.0 and met is False

    def test_equilibrium_is_a_fixed_point(self):
        c = default_const()
        params = make_params(const=c)
        f_eq = equilibrium_food_baseline(85.0, 6.0, c)
        plan = IncentivePlan.empty(30)
        traj = simulate(params, plan, ModelBounds(),
                        init_state=(85.0, f_eq, f_eq, 0.0))
        assert np.max(np.abs(traj.w - 85.0)) <= 1e-9
        assert np.max(np.abs(traj.f_b - f_eq)) <= 1e-9
        assert np.max(np.abs(traj.p)) == 0.0
        # and the activity choice sits |b| * w above baseline every day
        assert np.allclose(traj.u, 6.0 - c.b * 85.0, atol=1e-9)

    def test_penalty_decays_geometrically_when_goals_missed(self):
        params = make_params(p0=1.0, u_b=2.0)
        plan = IncentivePlan(np.full(10, 15.0), np.zeros(10, dtype=int))
        traj = simulate(params, plan, ModelBounds())
        assert not traj.goal_met.any()
        assert np.allclose(traj.p, 0.9 ** np.arange(11), atol=1e-12)

    def test_visit_bumps_penalty_and_cuts_food_baseline(self):
        params = make_params(p0=0.5, delta=0.8, beta_v=0.3, u_b=2.0)
        plan = IncentivePlan.empty(3)
        plan.goals[:] = 15.0      # never met
        plan.visits[1] = 1        # day 1 is visit-eligible
        traj = simulate(params, plan, ModelBounds())
        g, bv = 0.9, params.beta_v
        assert traj.p[2] == pytest.approx(g * (g * 0.5) + 0.8, abs=1e-12)
        expect_fb = (g * (traj.f_b[1] - traj.F_b[1]) + traj.F_b[1]) - bv
        assert traj.f_b[2] == pytest.approx(expect_fb, abs=1e-12)

    def test_goal_met_within_tolerance_band(self):
        c = default_const()
        params = make_params(const=c, mu=0.6)
        f_eq = equilibrium_food_baseline(85.0, 6.0, c)
        u_free = 6.0 - c.b * 85.0
        # goal just inside the band (u >= g - 0.1) counts as met
        plan = IncentivePlan(np.array([u_free + 0.05]), np.zeros(1, dtype=int))
        traj = simulate(params, plan, ModelBounds(),
                        init_state=(85.0, f_eq, f_eq, 0.0))
        if traj.goal_met[0]:
            assert traj.p[1] == pytest.approx(params.mu, abs=1e-12)

    @settings(deadline=None, max_examples=40)
    @given(p0=st.floats(0.0, 5.0), mu=st.floats(0.0, 2.0),
           delta=st.floats(0.0, 2.0), seed=st.integers(0, 10_000))
    def test_penalty_weight_never_negative(self, p0, mu, delta, seed):
        rng = np.random.default_rng(seed)
        params = make_params(p0=p0, mu=mu, delta=delta)
        T = 21
        goals = np.where(rng.random(T) < 0.5, rng.uniform(0, 12, T), np.nan)
        visits = np.zeros(T, dtype=int)
        for t in (1, 8, 15):
            if rng.random() < 0.5:
                visits[t] = 1
        traj = simulate(params, IncentivePlan(goals, visits), ModelBounds())
        assert np.all(traj.p >= 0.0)
        assert np.all(traj.u >= 0.0) and np.all(traj.f >= 0.0)

    def test_states_respect_bounds_under_extreme_visits(self):
        bounds = ModelBounds()
        params = make_params(beta_v=2.0, f_b0=30.5, F_b0=30.5, u_b=1.0)
        T = 22
        visits = np.zeros(T, dtype=int)
        visits[[1, 8, 15]] = 1
        traj = simulate(params, IncentivePlan(np.full(T, np.nan), visits),
                        bounds)
        assert np.all(traj.f_b >= bounds.f_b[0] - 1e-12)
        assert np.all(traj.w >= bounds.weight[0] - 1e-12)

    def test_horizon_zero(self):
        traj = simulate(make_params(), IncentivePlan.empty(0), ModelBounds())
        assert traj.horizon == 0
        assert len(traj.w) == 1 and traj.w[0] == 85.0


class TestObserve:
    def test_laplace_spread_matches_requested_sigma(self):
        # scale is sigma/sqrt(2), so mean |residual| should come out at
        # sigma/sqrt(2) as well
        params = make_params()
        plan = IncentivePlan.empty(4000)
        traj = simulate(params, plan, ModelBounds())
        obs = observe(traj, sigma_w=1.0, sigma_u=0.5, missingness=0.0, seed=11)
        mad_w = np.mean(np.abs(obs.w_vals - traj.w[obs.w_days]))
        mad_u = np.mean(np.abs(obs.u_vals - traj.u[obs.u_days]))
        assert mad_w == pytest.approx(1.0 / math.sqrt(2), rel=0.03)
        assert mad_u == pytest.approx(0.5 / math.sqrt(2), rel=0.03)

    def test_missingness_rate_and_ordering(self):
        params = make_params()
        traj = simulate(params, IncentivePlan.empty(2000), ModelBounds())
        obs = observe(traj, missingness=0.3, seed=5)
        frac = len(obs.w_days) / 2001.0
        assert 0.62 <= frac <= 0.78
        assert np.all(np.diff(obs.w_days) > 0)
        assert np.all(np.diff(obs.u_days) > 0)

    def test_full_observation_covers_every_day(self):
        traj = simulate(make_params(), IncentivePlan.empty(12), ModelBounds())
        obs = observe(traj, missingness=0.0, seed=0)
        assert list(obs.w_days) == list(range(13))
        assert list(obs.u_days) == list(range(12))

    def test_rejects_bad_inputs(self):
        traj = simulate(make_params(), IncentivePlan.empty(5), ModelBounds())
        with pytest.raises(ParamError):
            observe(traj, missingness=1.0)
        with pytest.raises(ParamError):
            observe(traj, sigma_w=0.0)
        with pytest.raises(ParamError):
            ObservationSet(np.array([3, 3]), np.array([80.0, 81.0]),
                           np.array([], dtype=int), np.array([])).validate()


class TestPlanValidation:
    def test_visit_on_ineligible_day(self):
        plan = IncentivePlan.empty(10)
        plan.visits[2] = 1
        with pytest.raises(ParamError):
            plan.validate()

    def test_weekly_visits_are_fine(self):
        plan = IncentivePlan.empty(20)
        plan.visits[[1, 8, 15]] = 1
        plan.validate()

    def test_non_binary_visit(self):
        plan = IncentivePlan.empty(5)
        plan.visits[1] = 2
        with pytest.raises(ParamError):
            plan.validate()

    def test_length_mismatch(self):
        with pytest.raises(ParamError):
            IncentivePlan(np.full(4, np.nan),
                          np.zeros(5, dtype=int)).validate()


class TestSerialization:
    def test_params_text_round_trip(self):
        params = make_params(p0=0.25, mu=1.5)
        back = AgentParams.from_text(params.to_text())
        assert np.allclose(back.theta0(), params.theta0(), atol=1e-12)
        assert back.w0 == params.w0
        assert back.const == params.const

    def test_plan_csv_round_trip_keeps_missing_goals(self):
        plan = IncentivePlan.empty(9)
        plan.goals[3] = 7.5
        plan.visits[1] = 1
        back = IncentivePlan.from_csv(plan.to_csv())
        assert math.isnan(back.goals[0]) and back.goals[3] == 7.5
        assert list(back.visits) == list(plan.visits)

    def test_observations_csv_round_trip(self):
        traj = simulate(make_params(), IncentivePlan.empty(15), ModelBounds())
        obs = observe(traj, sigma_w=2.0, sigma_u=0.25, missingness=0.2, seed=3)
        back = ObservationSet.from_csv(obs.to_csv())
        assert back.sigma_w == 2.0 and back.sigma_u == 0.25
        assert np.array_equal(back.w_days, obs.w_days)
        assert np.allclose(back.w_vals, obs.w_vals, atol=1e-9)
        assert np.allclose(back.u_vals, obs.u_vals, atol=1e-9)

    def test_trajectory_csv_shape(self):
        traj = simulate(make_params(), IncentivePlan.empty(6), ModelBounds())
        lines = traj.to_csv().strip().splitlines()
        assert len(lines) == 1 + 7
        assert lines[0].startswith("day,")

    def test_params_validate_against_boxes(self):
        params = make_params(mu=3.0)
        with pytest.raises(ParamError):
            params.validate(ModelBounds())
        make_params().validate(ModelBounds())
