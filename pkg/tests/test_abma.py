"""Allocation tests.

The master is pinned against tiny hand-enumerable fixtures and an
integer-program cross-check on random matrices; the full allocator is
pinned against a joint brute-force enumerator on tiny instances with
known hidden vectors.
"""

import itertools
import math

import numpy as np
import pytest

from myopic.abma import (
    AgentData,
    DiscreteIncentiveSet,
    PhiMatrix,
    abma,
    build_phi_matrix,
    master_ilp_check,
    master_knapsack,
    monolithic_oracle,
)
from myopic.behavior import (
    IncentivePlan,
    ModelBounds,
    ParamError,
    equilibrium_food_baseline,
    simulate,
)
from myopic.estimation import build_histogram_prior
from myopic.linprog import SOLVE_COUNTS

from tests.test_design import replay_plan, truth_state, truth_theta
from tests.test_estimation import (
    exact_obs,
    make_const,
    plan5,
    truth_params,
)


def menu(levels, budget):
    return DiscreteIncentiveSet(levels=levels, budget=budget)


def enumerate_finals(state, theta, const, bounds, horizon, ladder,
                     levels, block_len):
    """Final weights of every schedule in the tiny instance space,
    with the interior margin its trajectories keep."""
    eligible = [t for t in range(horizon) if t % 7 == 1]
    blocks = [(s, min(s + block_len, horizon))
              for s in range(0, horizon, block_len)]
    finals, margin = [], math.inf
    for combo in itertools.product(ladder, repeat=len(blocks)):
        goals = np.full(horizon, np.nan)
        for g, (s, e) in zip(combo, blocks):
            goals[s:e] = g
        for v in levels:
            for days in itertools.combinations(eligible, v):
                visits = np.zeros(horizon, dtype=np.int64)
                visits[list(days)] = 1
                traj = replay_plan(state, theta, const, bounds,
                                   IncentivePlan(goals.copy(), visits))
                finals.append(float(traj.w[-1]))
                margin = min(margin, float(traj.f.min()),
                             float(traj.u.min()))
    return finals, margin


def random_agent(rng, name, const, bounds, horizon=8,
                 ladder=(4.0, 9.0), levels=(0, 1), block_len=4):
    """A random agent certified interior on every schedule the tiny
    instance can reach, with the loss threshold placed inside the band
    of achievable final weights so schedules land on both sides."""
    while True:
        w0 = rng.uniform(75.0, 95.0)
        u_b = rng.uniform(4.0, 8.0)
        f_eq = equilibrium_food_baseline(w0, u_b, const)
        state = (w0, f_eq + rng.uniform(0.2, 1.2),
                 f_eq + rng.uniform(0.2, 1.2), rng.uniform(0.2, 1.5))
        theta = np.array([u_b, state[1], state[2], state[3],
                          rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0),
                          rng.uniform(0.1, 0.5)])
        finals, margin = enumerate_finals(state, theta, const, bounds,
                                          horizon, ladder, levels,
                                          block_len)
        if margin >= 0.05:
            anchor = rng.uniform(min(finals), max(finals)) / 0.95
            return AgentData.at_truth(name, state, theta, anchor=anchor)


class TestIncentiveSet:
    def test_defaults(self):
        inc = DiscreteIncentiveSet(budget=3)
        assert inc.levels == tuple(range(8))

    def test_rejects_bad_menus(self):
        for levels in ((), (1, 0), (0, 0, 1), (-1, 0)):
            with pytest.raises(ParamError):
                DiscreteIncentiveSet(levels=levels, budget=1)
        with pytest.raises(ParamError):
            DiscreteIncentiveSet(levels=(0, 1), budget=-1)


class TestMasterKnapsack:
    def test_one_visit_goes_where_it_helps_most(self):
        phi = np.array([[0.0, -1.0], [0.0, -0.5]])
        out = master_knapsack(phi, 1, levels=(0, 1))
        assert out.levels_chosen == [1, 0]
        assert out.objective == -1.0
        assert out.budget_used == 1

    def test_slack_budget_takes_row_minima(self):
        phi = np.array([[-0.2, -0.9, -0.4], [-0.8, -0.1, -0.8]])
        out = master_knapsack(phi, 100, levels=(0, 1, 2))
        assert out.levels_chosen == [1, 0]
        assert out.objective == -0.9 + -0.8

    def test_zero_budget_zero_level(self):
        phi = np.array([[0.0, -1.0], [0.0, -1.0]])
        out = master_knapsack(phi, 0, levels=(0, 1))
        assert out.levels_chosen == [0, 0]
        assert out.objective == 0.0

    def test_identical_agents_tie_goes_to_the_later_one(self):
        # lexicographically smallest level vector: earlier agents keep
        # the lower level when the totals tie
        phi = np.array([[0.0, -1.0], [0.0, -1.0]])
        out = master_knapsack(phi, 1, levels=(0, 1))
        assert out.levels_chosen == [0, 1]

    def test_budget_below_cheapest_level(self):
        phi = np.array([[0.0, -1.0], [0.0, -1.0]])
        with pytest.raises(ParamError):
            master_knapsack(phi, 1, levels=(1, 2))

    def test_objective_non_increasing_in_budget(self):
        rng = np.random.default_rng(7)
        phi = -rng.uniform(0.0, 1.0, (4, 3))
        vals = [master_knapsack(phi, b, levels=(0, 1, 2)).objective
                for b in range(7)]
        assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


class TestMasterCrossCheck:
    def test_fixture_agreement(self):
        phi = np.array([[0.0, -1.0], [0.0, -0.5]])
        dp = master_knapsack(phi, 1, levels=(0, 1))
        ilp = master_ilp_check(phi, 1, levels=(0, 1))
        assert ilp.objective == dp.objective == -1.0

    def test_single_agent_row_argmin(self):
        phi = np.array([[-0.3, -0.9, -0.2]])
        dp = master_knapsack(phi, 5, levels=(0, 2, 4))
        ilp = master_ilp_check(phi, 5, levels=(0, 2, 4))
        assert dp.levels_chosen == [2]
        assert ilp.objective == dp.objective == -0.9

    def test_random_matrices_agree_exactly(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            phi = -rng.uniform(0.0, 1.0, (5, 4))
            beta = int(rng.integers(0, 13))
            dp = master_knapsack(phi, beta, levels=(0, 1, 2, 3))
            ilp = master_ilp_check(phi, beta, levels=(0, 1, 2, 3))
            assert dp.objective == ilp.objective
            assert dp.budget_used <= beta and ilp.budget_used <= beta


class TestPhiMatrix:
    def small_matrix(self):
        const, bounds = make_const(), ModelBounds()
        agents = [AgentData.at_truth("a", truth_state(), truth_theta(),
                                     anchor=85.3),
                  AgentData.at_truth("b", truth_state(), truth_theta(),
                                     anchor=80.0)]
        return build_phi_matrix(agents, menu((0, 1), 2), const, bounds,
                                horizon=8, ladder=np.array([4.0, 9.0]),
                                block_len=4, loss_kind="hinge")

    def test_truth_mode_prices_without_estimation(self):
        before = SOLVE_COUNTS["milp"]
        mat = self.small_matrix()
        assert SOLVE_COUNTS["milp"] - before == 4
        assert mat.phi.shape == (2, 2)
        assert bool(np.all(mat.certified))
        assert np.all(mat.phi <= 0.0) and np.all(mat.phi >= -1.0)
        # a visit can only help, and this world's losses are not flat
        assert mat.phi[0, 1] <= mat.phi[0, 0]

    def test_visit_insensitive_agent_has_a_constant_row(self):
        const, bounds = make_const(), ModelBounds()
        theta = truth_theta().copy()
        theta[5] = theta[6] = 0.0
        agents = [AgentData.at_truth("flat", truth_state(), theta,
                                     anchor=85.3)]
        mat = build_phi_matrix(agents, menu((0, 1), 1), const, bounds,
                               horizon=8, ladder=np.array([4.0, 9.0]),
                               block_len=4, loss_kind="hinge")
        assert mat.phi[0, 0] == mat.phi[0, 1]

    def test_step_rows_non_increasing_when_visits_help(self):
        const, bounds = make_const(), ModelBounds()
        quiet = replay_plan(truth_state(), truth_theta(), const, bounds,
                            IncentivePlan.empty(8))
        agents = [AgentData.at_truth("a", truth_state(), truth_theta(),
                                     anchor=float(quiet.w[-1]) / 0.9995)]
        mat = build_phi_matrix(agents, menu((0, 1), 1), const, bounds,
                               horizon=8, ladder=np.array([4.0, 9.0]),
                               block_len=4, loss_kind="step")
        assert mat.phi[0, 1] <= mat.phi[0, 0]

    def test_failed_cells_are_flagged_and_worst(self):
        const, bounds = make_const(), ModelBounds()
        agents = [AgentData.at_truth("a", truth_state(), truth_theta(),
                                     anchor=85.3)]
        mat = build_phi_matrix(agents, menu((0, 1), 1), const, bounds,
                               horizon=8, ladder=np.array([4.0, 9.0]),
                               block_len=4, des_node_limit=0)
        assert np.all(mat.phi == 0.0)
        assert not np.any(mat.certified)
        assert mat.cells[0] == [None, None]

    def test_failed_estimation_flags_the_whole_row(self):
        const, bounds = make_const(), ModelBounds()
        params = truth_params(const)
        traj = simulate(params, plan5(), bounds)
        prior = build_histogram_prior(
            [params.theta0()], bounds, n_bins=3)
        agents = [AgentData.from_history("a", exact_obs(traj), plan5(),
                                         prior)]
        mat = build_phi_matrix(agents, menu((0, 1), 1), const, bounds,
                               horizon=8, ladder=np.array([4.0, 9.0]),
                               block_len=4, est_node_limit=0)
        assert np.all(mat.phi == 0.0) and not np.any(mat.certified)
        assert mat.estimates == [None]

    def test_csv_round_trip(self, tmp_path):
        mat = self.small_matrix()
        path = tmp_path / "phi.csv"
        mat.to_csv(path)
        back = PhiMatrix.from_csv(path)
        assert back.agents == mat.agents
        assert back.levels == mat.levels
        assert np.array_equal(back.phi, mat.phi)
        assert np.array_equal(back.certified, mat.certified)

    def test_duplicate_names_rejected(self):
        const, bounds = make_const(), ModelBounds()
        same = AgentData.at_truth("a", truth_state(), truth_theta())
        with pytest.raises(ParamError, match="duplicate"):
            build_phi_matrix([same, same], menu((0, 1), 1), const,
                             bounds, horizon=8,
                             ladder=np.array([4.0, 9.0]))


class TestAbma:
    def test_history_mode_solve_count_and_plans(self):
        const, bounds = make_const(), ModelBounds()
        params = truth_params(const)
        plan = plan5()
        traj = simulate(params, plan, bounds)
        rng = np.random.default_rng(0)
        thetas = [np.clip(params.theta0()
                          + rng.uniform(-0.08, 0.08, 7), 0.0, None)
                  for _ in range(4)]
        prior = build_histogram_prior(thetas, bounds, n_bins=4)
        agents = [
            AgentData.from_history("a", exact_obs(traj), plan, prior),
            AgentData.from_history("b", exact_obs(traj), plan, prior),
        ]
        before = SOLVE_COUNTS["milp"]
        out = abma(agents, menu((0, 1), 1), const, bounds, horizon=8,
                   ladder=np.array([4.0, 9.0]), block_len=4,
                   loss_kind="hinge")
        # one estimate per agent plus one schedule per (agent, level)
        assert SOLVE_COUNTS["milp"] - before == 2 * (2 + 1)
        assert out.solve_counts == {"subproblem": 6, "master": 1}
        assert set(out.plans) == {"a", "b"}
        assert out.objective == out.assignment.objective
        for name, plan_out in out.plans.items():
            plan_out.validate()
            assert plan_out.start_day == 5

    def test_at_truth_matches_joint_enumeration(self):
        const, bounds = make_const(), ModelBounds()
        rng = np.random.default_rng(11)
        for trial in range(3):
            agents = [random_agent(rng, "a", const, bounds),
                      random_agent(rng, "b", const, bounds)]
            inc = menu((0, 1), 1)
            kw = dict(horizon=8, ladder=np.array([4.0, 9.0]),
                      block_len=4, loss_kind="step")
            got = abma(agents, inc, const, bounds, **kw)
            want = monolithic_oracle(agents, inc, const, bounds, **kw)
            assert got.objective == want.objective
            assert got.solve_counts == {"subproblem": 4, "master": 1}


class TestMonolithicOracle:
    def test_size_caps(self):
        const, bounds = make_const(), ModelBounds()
        a = AgentData.at_truth("a", truth_state(), truth_theta())
        kw = dict(const=const, bounds=bounds,
                  ladder=np.array([4.0, 9.0]))
        with pytest.raises(ParamError):
            monolithic_oracle([a, a, a], menu((0, 1), 1), horizon=8,
                              **kw)
        with pytest.raises(ParamError):
            monolithic_oracle([a], menu((0, 1, 2), 1), horizon=8, **kw)
        with pytest.raises(ParamError):
            monolithic_oracle([a], menu((0, 1), 1), horizon=11, **kw)

    def test_insensitive_agents_make_budget_irrelevant(self):
        const, bounds = make_const(), ModelBounds()
        theta = truth_theta().copy()
        theta[5] = theta[6] = 0.0
        agents = [AgentData.at_truth("a", truth_state(), theta,
                                     anchor=85.3)]
        kw = dict(const=const, bounds=bounds, horizon=8,
                  ladder=np.array([4.0, 9.0]), block_len=4,
                  loss_kind="hinge")
        tight = monolithic_oracle(agents, menu((0, 1), 0), **kw)
        slack = monolithic_oracle(agents, menu((0, 1), 2), **kw)
        assert tight.objective == slack.objective

    def test_single_crossing_fixture(self):
        # build the threshold so only one agent can cross it, and only
        # with the visit; the one visit must land there for value -1
        const, bounds = make_const(), ModelBounds()
        kw = dict(horizon=8, ladder=np.array([4.0, 9.0]), block_len=4)
        ends = {}
        for v in (0, 1):
            best = math.inf
            for combo in itertools.product([4.0, 9.0], repeat=2):
                goals = np.repeat(combo, 4).astype(float)
                visits = np.zeros(8, dtype=np.int64)
                if v:
                    visits[1] = 1
                traj = replay_plan(truth_state(), truth_theta(), const,
                                   bounds,
                                   IncentivePlan(goals, visits))
                best = min(best, float(traj.w[-1]))
            ends[v] = best
        assert ends[1] < ends[0]
        crossable = (ends[0] + ends[1]) / 2.0 / 0.95
        agents = [
            AgentData.at_truth("maybe", truth_state(), truth_theta(),
                               anchor=crossable),
            AgentData.at_truth("never", truth_state(), truth_theta(),
                               anchor=50.0),
        ]
        out = monolithic_oracle(agents, menu((0, 1), 1), const, bounds,
                                loss_kind="step", **kw)
        assert out.objective == -1.0
        assert out.levels_chosen == [1, 0]
        run = abma(agents, menu((0, 1), 1), const, bounds,
                   loss_kind="step", **kw)
        assert run.objective == -1.0
        assert run.assignment.levels_chosen == [1, 0]
