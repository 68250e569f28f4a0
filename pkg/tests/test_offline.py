import warnings

import numpy as np
import pytest
from scipy.optimize import linprog

from sharedess.model import ControllableLoad, ScenarioConfig, SharedEssSpec, UserProfile, check_schedule
from sharedess.offline import (
    ConvergenceWarning,
    DualState,
    InfeasibleScenarioError,
    SolverOptions,
    compute_subgradient,
    controller_subproblem,
    dual_update,
    greedy_load_fill,
    no_storage_cost,
    primal_recovery,
    solve_p1_distributed,
    solve_p1_monolithic,
    solve_p2_distributed_ess,
    update_running_average,
    user_subproblem,
)
from sharedess.sim import gen_random_scenario

from builders import grid_dp_cost, no_ess, tiny

NETS = [[2, 0, -1], [-1, 0, 1]]


# -- monolithic oracle


def test_tiny_instance_costs_nothing():
    cfg = tiny()
    s = solve_p1_monolithic(cfg)
    assert s.weighted_cost == pytest.approx(0.0, abs=1e-9)
    assert grid_dp_cost(NETS, [0.5, 0.5], 1.0, 0, 2, 2) == 0.0
    assert check_schedule(cfg, s).ok


def test_without_storage_deficits_are_bought():
    # zero capacity and zero rates: nothing can move between users
    s = solve_p1_monolithic(no_ess(rate=0.0))
    assert s.weighted_cost == pytest.approx(1.0)
    assert grid_dp_cost(NETS, [0.5, 0.5], 1.0, 0, 0, 0) == 1.0


def test_zero_capacity_still_passes_energy_within_a_slot():
    # with nonzero rates a charge and a discharge in the same slot cancel,
    # so each slot's surplus reaches the other user even though S stays at 0
    s = solve_p1_monolithic(no_ess(rate=2.0))
    assert s.weighted_cost == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(s.ess_states, 0.0, atol=1e-9)


def test_surplus_only_costs_nothing():
    users = tuple(UserProfile.from_net(str(m), [1, 0.5, 2], 1.0, 0.5) for m in range(2))
    cfg = ScenarioConfig(3, users, SharedEssSpec(0, 2, 0, 2, 2, 1, 1), grid_cap=10)
    s = solve_p1_monolithic(cfg)
    assert s.weighted_cost == 0
    assert not s.grid.any()


def test_monolithic_matches_grid_brute_force():
    rng = np.random.default_rng(4)
    for _ in range(5):
        nets = rng.integers(-4, 5, (2, 3)) / 2.0
        users = tuple(UserProfile.from_net(str(m), nets[m], 1.0, 0.5) for m in range(2))
        cfg = ScenarioConfig(3, users, SharedEssSpec(0, 1.5, 0.5, 1, 1, 1, 1), grid_cap=10)
        ref = grid_dp_cost(nets, [0.5, 0.5], 1.0, 0.5, 1.5, 1.0, step=0.5)
        assert solve_p1_monolithic(cfg).weighted_cost == pytest.approx(ref, abs=1e-9)


def test_quadratic_cost_near_exact_optimum():
    # one user, no storage use possible, buy 2 kWh at a*G^2 + p*G
    u = UserProfile.from_net("1", [-2.0], 0.1, 1.0, quadratic=[0.5])
    cfg = ScenarioConfig(1, (u,), SharedEssSpec(0, 0, 0, 0, 0, 1, 1), grid_cap=4)
    assert solve_p1_monolithic(cfg).weighted_cost == pytest.approx(0.1 * 2 + 0.5 * 4, rel=1e-9)


def test_invalid_scenario_rejected():
    cfg = tiny(grid_cap=0.5)
    with pytest.raises(InfeasibleScenarioError) as err:
        solve_p1_monolithic(cfg)
    assert err.value.certificate


# -- user subproblem


def test_threshold_rule():
    u = UserProfile.from_net("1", [0, 0], 0.2, 0.25)
    g, l, _ = user_subproblem(u, np.array([0.01, 0.30]), 10)
    np.testing.assert_array_equal(g, [0, 10])


def test_threshold_tie_buys_nothing():
    u = UserProfile.from_net("1", [0], 0.2, 0.25)
    g, _, _ = user_subproblem(u, np.array([0.05]), 10)
    assert g[0] == 0


def test_greedy_fill():
    q = ControllableLoad("q", 1, 3, 3.0, 0.0, 2.0)
    np.testing.assert_allclose(greedy_load_fill(q, np.array([0.5, 0.2, 0.4])), [0, 2, 1])


def test_greedy_fill_ties_prefer_earlier_slots():
    q = ControllableLoad("q", 2, 4, 1.5, 0.25, 1.0)
    np.testing.assert_allclose(greedy_load_fill(q, np.zeros(5)), [0, 1.0, 0.25, 0.25, 0])


def test_user_subproblem_matches_lp():
    rng = np.random.default_rng(1)
    q = ControllableLoad("q", 1, 3, 2.0, 0.2, 1.5)
    u = UserProfile.from_net("1", [2, 0, -1], 1.0, 0.5, (q,))
    for _ in range(20):
        y = rng.uniform(0, 1, 3)
        _, _, val = user_subproblem(u, y, 10)
        # variables: g (3), l (3)
        c = np.concatenate([0.5 * 1.0 - y, y])
        bounds = [(0, 10)] * 3 + [(0.2, 1.5)] * 3
        ref = linprog(c, A_eq=[[0, 0, 0, 1, 1, 1]], b_eq=[2.0], bounds=bounds)
        assert val == pytest.approx(ref.fun, abs=1e-7)


def test_negative_multiplier_rejected():
    u = UserProfile.from_net("1", [0], 0.2, 1.0)
    with pytest.raises(ValueError):
        user_subproblem(u, np.array([-0.1]), 1)


# -- controller subproblem


def test_controller_discharges_to_floor():
    u = UserProfile.from_net("1", [0], 1.0, 1.0)
    cfg = ScenarioConfig(1, (u,), SharedEssSpec(0, 4, 2, 2, 5, 1, 1), grid_cap=10)
    c, d = controller_subproblem(cfg, np.array([[1.0]]))
    assert c[0, 0] == 0 and d[0, 0] == pytest.approx(2)


def test_controller_idle_at_zero_prices():
    c, d = controller_subproblem(tiny(s1=1.0), np.zeros((2, 3)))
    assert not c.any() and not d.any()


def _controller_reference(cfg, y):
    ess = cfg.shared_ess
    M, N = y.shape
    mn = M * N
    cost = np.concatenate([y.ravel(), -y.ravel()])
    rows, rhs = [], []
    for n in range(N):
        a = np.zeros(2 * mn)
        for m in range(M):
            a[m * N : m * N + n + 1] = ess.charge_eff
            a[mn + m * N : mn + m * N + n + 1] = -1 / ess.discharge_eff
        rows += [a, -a]
        rhs += [ess.max_state - ess.initial_state, ess.initial_state - ess.min_state]
    bounds = [(0, ess.max_charge_per_user)] * mn + [(0, ess.max_discharge_per_user)] * mn
    return linprog(cost, A_ub=np.array(rows), b_ub=rhs, bounds=bounds).fun


def test_controller_matches_reference_lp():
    rng = np.random.default_rng(2)
    cfg = tiny(s1=0.5)
    for _ in range(20):
        y = rng.uniform(0, 1, (2, 3))
        c, d = controller_subproblem(cfg, y)
        assert float(np.sum(y * (c - d))) == pytest.approx(_controller_reference(cfg, y), abs=1e-7)


# -- iteration pieces


def test_running_average():
    st = DualState.initial(tiny())
    two = np.full((2, 3), 2.0)
    st = update_running_average(st, two, two)
    np.testing.assert_array_equal(st.c_avg, two)
    for k, c in enumerate([0.0, 2.0, 0.0], start=2):
        from dataclasses import replace

        st = update_running_average(replace(st, iter=k), np.full((2, 3), c), two)
    np.testing.assert_allclose(st.c_avg, 1.0)
    np.testing.assert_allclose(st.d_avg, 2.0)


def test_subgradient_formula():
    u = UserProfile.from_net("1", [2, -2], 1.0, 1.0)
    cfg = ScenarioConfig(2, (u,), SharedEssSpec(0, 1, 0, 1, 1, 1, 1), grid_cap=5)
    z0 = np.zeros((1, 2))
    r = compute_subgradient(cfg, z0, [np.zeros((0, 2))], z0, z0)
    np.testing.assert_array_equal(r.v, [[2, -2]])
    r = compute_subgradient(cfg, np.array([[0, 2.0]]), [np.zeros((0, 2))], np.array([[2.0, 0]]), z0)
    np.testing.assert_array_equal(r.v, 0)


def test_dual_update_steps_and_projects():
    opts = SolverOptions(step0=0.05)
    st = DualState(y=np.array([[0.1]]), iter=1)
    assert dual_update(st, np.array([[-1.0]]), opts).y[0, 0] == pytest.approx(0.15)
    st = DualState(y=np.array([[0.02]]), iter=1)
    nxt = dual_update(st, np.array([[1.0]]), opts)
    assert nxt.y[0, 0] == 0 and nxt.iter == 2


def test_manual_iterations_keep_invariants():
    cfg = tiny(s1=0.5)
    oracle = solve_p1_monolithic(cfg).weighted_cost
    opts = SolverOptions(step0=0.5)
    st = DualState.initial(cfg, opts)
    ess = cfg.shared_ess
    for _ in range(60):
        gl = [user_subproblem(u, st.y[m], cfg.grid_cap) for m, u in enumerate(cfg.users)]
        g = np.vstack([x[0] for x in gl])
        c, d = controller_subproblem(cfg, st.y)
        dual = sum(x[2] for x in gl) + float(np.sum(st.y * (c - d))) - float(np.sum(st.y * cfg.net_matrix()))
        assert dual <= oracle + 1e-6
        st = update_running_average(st, c, d)
        r = compute_subgradient(cfg, g, [x[1] for x in gl], st.c_avg, st.d_avg)
        z = g + cfg.net_matrix()
        np.testing.assert_array_equal(r.z, z)
        np.testing.assert_array_equal(r.v, z - st.c_avg + st.d_avg)
        assert st.c_avg.min() >= 0 and st.c_avg.max() <= ess.max_charge_per_user + 1e-12
        states = ess.initial_state + np.cumsum(st.c_avg.sum(0) - st.d_avg.sum(0))
        assert states.min() >= -1e-9 and states.max() <= ess.max_state + 1e-9
        st = dual_update(st, r.v, opts)


# -- distributed solver


def test_distributed_tiny():
    s, diag = solve_p1_distributed(tiny())
    assert s.weighted_cost == pytest.approx(0.0, abs=1e-3)
    assert check_schedule(tiny(), s).ok
    assert diag.converged


def test_distributed_no_storage():
    s, _ = solve_p1_distributed(no_ess())
    assert s.weighted_cost == pytest.approx(1.0, rel=5e-3)


def test_distributed_weak_duality_and_trace(tmp_path):
    cfg = gen_random_scenario(3, 3, 6)
    oracle = solve_p1_monolithic(cfg).weighted_cost
    path = tmp_path / "trace.csv"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        s, diag = solve_p1_distributed(cfg, SolverOptions(max_iters=300, trace_path=path))
    assert max(diag.dual_values) <= oracle + 1e-6
    assert s.weighted_cost >= oracle - 1e-9
    assert check_schedule(cfg, s).ok
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,dual_value,max_dual_change,messages_exchanged"
    assert len(lines) == diag.iterations + 1
    assert diag.messages[-1] == diag.messages[-2] + cfg.n_users


def test_distributed_warns_when_cut_short():
    cfg = gen_random_scenario(1010, 2, 12)
    with pytest.warns(ConvergenceWarning):
        _, diag = solve_p1_distributed(cfg, SolverOptions(max_iters=30, min_iters=1))
    assert not diag.converged


@pytest.mark.filterwarnings("ignore::sharedess.offline.ConvergenceWarning")
def test_distributed_is_deterministic():
    cfg = gen_random_scenario(5, 2, 6)
    a, _ = solve_p1_distributed(cfg, SolverOptions(max_iters=400))
    b, _ = solve_p1_distributed(cfg, SolverOptions(max_iters=400))
    assert a.grid.tobytes() == b.grid.tobytes()


def test_options_validated():
    with pytest.raises(ValueError):
        SolverOptions(tol=0)
    with pytest.raises(ValueError):
        SolverOptions(init="ones")


# -- recovery and private storage


def test_recovery_without_storage_use():
    cfg = tiny()
    z = np.zeros((2, 3))
    assert primal_recovery(cfg, z, z).weighted_cost == pytest.approx(1.0)
    users = tuple(UserProfile.from_net(str(m), [1, 1, 1], 1.0, 0.5) for m in range(2))
    surplus = ScenarioConfig(3, users, cfg.shared_ess, grid_cap=10)
    assert not primal_recovery(surplus, z, z).grid.any()


def test_private_storage_example():
    cfg = tiny()
    s = solve_p2_distributed_ess(cfg)
    assert s.weighted_cost == pytest.approx(0.5)
    ref = grid_dp_cost([NETS[0]], [0.5], 1.0, 0, 1, 1) + grid_dp_cost([NETS[1]], [0.5], 1.0, 0, 1, 1)
    assert ref == 0.5
    assert s.ess_states.shape == (2, 4)
    assert check_schedule(cfg, s).ok


def test_private_zero_capacity_matches_no_storage():
    cfg = no_ess()
    assert solve_p2_distributed_ess(cfg).weighted_cost == pytest.approx(1.0)
    assert no_storage_cost(cfg) == pytest.approx(1.0)


def test_shared_never_worse_than_private():
    for seed in range(6):
        cfg = gen_random_scenario(seed, 3, 12)
        assert solve_p1_monolithic(cfg).weighted_cost <= solve_p2_distributed_ess(cfg).weighted_cost + 1e-6


def test_capacity_monotone():
    cfg = gen_random_scenario(7, 3, 12)
    costs = [solve_p1_monolithic(cfg.with_ess(cfg.shared_ess.scaled(r))).weighted_cost for r in (0.5, 1, 2, 4)]
    assert all(b <= a + 1e-6 for a, b in zip(costs, costs[1:]))
