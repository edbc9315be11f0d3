import numpy as np
import pytest

from ddsym.abstraction import SINK, SymbolicModel, build_symbolic
from ddsym.blackbox import RoomNetworkConfig, make_room_network
from ddsym.errors import ConfigurationError, UncontrollableStateError
from ddsym.gridding import Box, UniformGrid
from ddsym.sampling import collect
from ddsym.abstraction import one_step_mismatch
from ddsym.synthesis import (AbstractController, RefinedController, SafetyGame, contract_safe_set,
                             margin_in_cells, refine, simulate_closed_loop, solve_safety_game,
                             write_trajectory_csv)

from conftest import ROOM_W, ROOM_X, identity_oracle, naive_fixed_point, random_model


def test_contract_examples():
    g = UniformGrid(ROOM_X, (10,))
    assert contract_safe_set(ROOM_X, g, 0.0).tolist() == list(range(10))
    idx = contract_safe_set(ROOM_X, g, 0.1)
    assert len(idx) == 8
    np.testing.assert_allclose(g.representative(idx)[:, 0], np.arange(-0.35, 0.36, 0.1), atol=1e-12)
    with pytest.warns(RuntimeWarning):
        assert contract_safe_set(ROOM_X, g, 10.0).size == 0
    with pytest.raises(ConfigurationError):
        contract_safe_set(ROOM_X, g, -0.1)


def test_everything_safe_is_winning():
    g = UniformGrid(Box([0.0], [1.0]), (6,))
    sm = build_symbolic(identity_oracle(inputs=((0.0,), (1.0,))), g, UniformGrid(Box([0.0], [1.0]), (2,)))
    ctl = solve_safety_game(SafetyGame(sm, np.arange(6)))
    assert ctl.winning.tolist() == list(range(6))
    assert ctl.allowed.all()


def test_all_sink_state_is_losing():
    rng = np.random.default_rng(0)
    sm = random_model(rng, 10, 2, 2, sink_prob=0.0)
    T = np.array(sm.transitions)
    T[:] = 1
    T[3] = SINK
    sm = SymbolicModel(sm.state_grid, sm.dist_grid, sm.input_set, T)
    ctl = solve_safety_game(SafetyGame(sm, np.arange(10)))
    assert 3 not in ctl.winning and 1 in ctl.winning


@pytest.mark.parametrize("seed", range(10))
def test_matches_naive_fixed_point(seed):
    rng = np.random.default_rng(seed)
    sm = random_model(rng, 200, 4, 3, sink_prob=0.01)
    # bias towards self-loops so the winning set is not trivially empty
    T = np.array(sm.transitions)
    s = np.arange(200)[:, None, None]
    T = np.where(rng.random(T.shape) < 0.7, np.minimum(s + rng.integers(-2, 3, T.shape), 199).clip(0), T)
    sm = SymbolicModel(sm.state_grid, sm.dist_grid, sm.input_set, T.astype(np.uint32))
    safe = np.flatnonzero(rng.random(200) < 0.9)
    ctl = solve_safety_game(SafetyGame(sm, safe))
    np.testing.assert_array_equal(ctl.allowed, naive_fixed_point(sm, safe))


@pytest.mark.parametrize("seed", range(5))
def test_margin_matches_naive(seed):
    rng = np.random.default_rng(100 + seed)
    sm = random_model(rng, 0, 3, 2, sink_prob=0.0, shape=(8, 6))
    T = np.array(sm.transitions)
    T = np.where(rng.random(T.shape) < 0.8, np.arange(48)[:, None, None], T)
    sm = SymbolicModel(sm.state_grid, sm.dist_grid, sm.input_set, T.astype(np.uint32))
    safe = np.arange(48)
    for margin in ([0, 0], [1, 0], [1, 1]):
        ctl = solve_safety_game(SafetyGame(sm, safe, margin))
        np.testing.assert_array_equal(ctl.allowed, naive_fixed_point(sm, safe, np.array(margin)))


@pytest.mark.parametrize("seed", range(5))
def test_soundness_maximality_monotonicity(seed):
    rng = np.random.default_rng(seed)
    sm = random_model(rng, 60, 3, 3, sink_prob=0.02)
    T = np.where(rng.random(sm.transitions.shape) < 0.75, np.arange(60)[:, None, None], sm.transitions)
    sm = SymbolicModel(sm.state_grid, sm.dist_grid, sm.input_set, T.astype(np.uint32))
    small = np.flatnonzero(rng.random(60) < 0.6)
    big = np.union1d(small, np.flatnonzero(rng.random(60) < 0.5))
    ctl = solve_safety_game(SafetyGame(sm, small))
    win = set(ctl.winning.tolist())
    assert win <= set(small.tolist())
    for s in win:
        for u in ctl.allowed_inputs(s):
            assert all(int(sm.transitions[s, u, w]) in win for w in range(sm.n_dists))
    for s in set(small.tolist()) - win:
        # adding s back: every input has a disturbance escaping the enlarged set
        grown = win | {s}
        assert all(any(int(sm.transitions[s, u, w]) not in grown for w in range(sm.n_dists))
                   for u in range(sm.n_inputs))
    assert win <= set(solve_safety_game(SafetyGame(sm, big)).winning.tolist())


def test_game_validation():
    sm = random_model(np.random.default_rng(0), 5, 1, 1)
    with pytest.raises(ConfigurationError):
        SafetyGame(sm, [7])
    with pytest.raises(ConfigurationError):
        SafetyGame(sm, [0], margin_cells=-1)
    assert solve_safety_game(SafetyGame(sm, [])).is_empty


def test_margin_in_cells():
    g = UniformGrid(Box([0, 0], [1, 0.7]), (10, 7))
    assert margin_in_cells(g, 0.0).tolist() == [0, 0]
    assert margin_in_cells(g, 0.1).tolist() == [1, 1]
    assert margin_in_cells(g, [0.15, 0.05]).tolist() == [2, 1]
    with pytest.raises(ConfigurationError):
        margin_in_cells(g, -1.0)


def test_refine_tie_rule_and_errors():
    g = UniformGrid(Box([0.0], [1.0]), (4,))
    allowed = np.zeros((4, 4), bool)
    allowed[1, [1, 3]] = True
    allowed[2, [0, 2]] = True
    ctl = AbstractController(allowed)
    assert refine(ctl, g, [0.3]) == 1
    assert refine(ctl, g, [0.6], input_set=[[10.0], [11.0], [12.0], [13.0]])[0] == 10.0
    for x in np.linspace(0.2501, 0.4999, 17):
        assert refine(ctl, g, [x]) == 1
    with pytest.raises(UncontrollableStateError) as info:
        refine(ctl, g, [0.1])
    assert info.value.cell == 0
    with pytest.raises(UncontrollableStateError):
        refine(ctl, g, [1.5])
    rc = RefinedController(ctl, g, np.arange(4.0)[:, None])
    assert rc.input_indices([[0.1], [0.3], [0.6], [2.0]]).tolist() == [-1, 1, 0, -1]


def test_controller_file_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    g = UniformGrid(Box([0, -0.15], [1, 0.55]), (10, 7))
    allowed = rng.random((70, 11)) < 0.3
    rc = RefinedController(AbstractController(allowed), g, rng.random((11, 2)))
    rc.save(tmp_path / "c.ctl")
    back = RefinedController.load(tmp_path / "c.ctl")
    assert (tmp_path / "c.ctl").read_bytes()[:4] == b"CTL1"
    np.testing.assert_array_equal(back.controller.allowed, allowed)
    np.testing.assert_array_equal(back.input_set, rc.input_set)
    assert back.grid == g
    with pytest.raises(ConfigurationError):
        RefinedController.from_bytes(rc.to_bytes() + b"\0")


def _room_controller(cells=20):
    net = make_room_network(RoomNetworkConfig(M=5))
    sub = net.subsystems[0]
    xg, wg = UniformGrid(ROOM_X, (cells,)), UniformGrid(ROOM_W, (8,))
    sm = build_symbolic(sub, xg, wg)
    drift = one_step_mismatch(sub, sm, collect(sub, ROOM_X, ROOM_W, 200, seed=0))
    ctl = solve_safety_game(SafetyGame(sm, np.arange(cells), margin_in_cells(xg, drift)))
    return net, sm, RefinedController(ctl, xg, sub.input_set)


def test_room_closed_loop_boundary_starts():
    net, sm, rc = _room_controller()
    assert not rc.controller.is_empty
    for x0 in ([-0.5] * 5, [0.5] * 5, [-0.5, 0.5, -0.5, 0.5, 0.0]):
        res = simulate_closed_loop(net, [rc], x0, 500, [ROOM_X])
        assert res.safe, res.reason
        assert res.trajectory.shape == (501, 5, 1)


def test_margin_game_is_robust_to_drift():
    # the robust winning set only keeps cells whose successors stay away from losing cells
    net, sm, rc = _room_controller()
    plain = solve_safety_game(SafetyGame(sm, np.arange(20)))
    assert set(rc.controller.winning.tolist()) <= set(plain.winning.tolist())


def test_horizon_zero_and_violations():
    net, sm, rc = _room_controller()
    res = simulate_closed_loop(net, [rc], [0.0] * 5, 0)
    assert res.safe and res.inputs.shape == (0, 5) and res.trajectory.shape == (1, 5, 1)
    res = simulate_closed_loop(net, [rc], [0.0] * 4 + [0.7], 10)
    assert not res.safe and res.first_violation == 0
    empty = RefinedController(AbstractController(np.zeros((20, 2), bool)), rc.grid, rc.input_set)
    res = simulate_closed_loop(net, [empty], [0.0] * 5, 10)
    assert not res.safe and res.reason == "uncontrollable state reached"
    with pytest.raises(ConfigurationError):
        simulate_closed_loop(net, [rc, rc], [0.0] * 5, 3)


def test_per_agent_controllers_match_shared():
    net, sm, rc = _room_controller()
    x0 = np.linspace(-0.4, 0.4, 5)
    a = simulate_closed_loop(net, [rc], x0, 50)
    copies = [RefinedController(rc.controller, rc.grid, rc.input_set) for _ in range(5)]
    b = simulate_closed_loop(net, copies, x0, 50, [ROOM_X] * 5)
    np.testing.assert_array_equal(a.trajectory, b.trajectory)
    np.testing.assert_array_equal(a.inputs, b.inputs)


def test_trajectory_csv(tmp_path):
    net, sm, rc = _room_controller()
    res = simulate_closed_loop(net, [rc], np.zeros(5), 3)
    write_trajectory_csv(tmp_path / "t.csv", res, [0, 2])
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "k,subsystem,x_0,u_index,safe_flag"
    assert len(lines) == 1 + 4 * 2
    k, i, x, u, flag = lines[-1].split(",")
    assert (k, i, u, flag) == ("3", "2", "", "1")
    assert float(x) == res.trajectory[3, 2, 0]
