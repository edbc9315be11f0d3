import numpy as np
import pytest

from ddsym.blackbox import SubsystemOracle
from ddsym.errors import ConfigurationError, IncompleteDatasetError, SamplingError
from ddsym.gridding import Box
from ddsym.sampling import Dataset, collect, compute_sigma, evaluation_grid, evaluation_slack

from conftest import ROOM_W, ROOM_X


def _ds(X, u=None, n_inputs=1):
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    u = np.zeros(len(X), dtype=int) if u is None else np.asarray(u)
    return Dataset(0, X, u, np.zeros((len(X), 1)), X, 0, "manual", n_inputs=n_inputs)


def _brute_sigma(ds, E, w=False):
    S = np.hstack([ds.X, ds.W]) if w else ds.X
    best = 0.0
    for u in range(ds.n_inputs):
        Su = S[ds.u_index == u]
        d = np.sqrt(((E[:, None, :] - Su[None]) ** 2).sum(-1)).min(axis=1)
        best = max(best, d.max())
    return best


@pytest.mark.parametrize("strategy", ["uniform-random", "low-discrepancy"])
def test_counts_and_bounds(room_oracle, strategy):
    ds = collect(room_oracle, ROOM_X, ROOM_W, 37, strategy=strategy, seed=5)
    assert len(ds) == 37 * room_oracle.n_inputs
    for u in range(room_oracle.n_inputs):
        assert len(ds.for_input(u)) == 37
    assert ROOM_X.contains(ds.X).all() and ROOM_W.contains(ds.W).all()
    ref = room_oracle.step_indexed(ds.X, ds.u_index, ds.W)
    np.testing.assert_array_equal(ds.X_next, ref)


def test_seed_determinism(room_oracle):
    a = collect(room_oracle, ROOM_X, ROOM_W, 50, seed=11)
    b = collect(room_oracle, ROOM_X, ROOM_W, 50, seed=11)
    c = collect(room_oracle, ROOM_X, ROOM_W, 50, seed=12)
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_grid_strategy_lattice(room_oracle):
    ds = collect(room_oracle, ROOM_X, ROOM_W, 16, strategy="grid")
    pts = np.hstack([ds.X, ds.W])[ds.for_input(0)]
    assert sorted(np.unique(pts[:, 0])) == pytest.approx(np.arange(-0.375, 0.5, 0.25))
    assert sorted(np.unique(pts[:, 1])) == pytest.approx(np.arange(-0.75, 1.0, 0.5))
    with pytest.raises(ConfigurationError):
        collect(room_oracle, ROOM_X, ROOM_W, 15, strategy="grid")


def test_bad_strategy_and_count(room_oracle):
    with pytest.raises(ConfigurationError):
        collect(room_oracle, ROOM_X, ROOM_W, 10, strategy="sobolish")
    with pytest.raises(ConfigurationError):
        collect(room_oracle, ROOM_X, ROOM_W, 0)


def test_oracle_failure_is_reported():
    def boom(x, u, w):
        if x[0] > 0.9:
            return np.array([np.nan])
        return np.array(x)

    bad = SubsystemOracle(1, 1, [[0.0]], boom)
    with pytest.raises(SamplingError):
        collect(bad, Box([0.0], [1.0]), Box([0.0], [1.0]), 400, seed=0)


def test_sigma_two_samples():
    ds = _ds([0.25, 0.75])
    rep = compute_sigma(ds, Box([0.0], [1.0]), None, 101, conservative=False)
    assert rep.sigma == pytest.approx(0.25, abs=1e-12)


def test_sigma_conservative_slack():
    ds = _ds([0.25, 0.75])
    rep = compute_sigma(ds, Box([0.0], [1.0]), None, 11, conservative=True)
    assert rep.slack == pytest.approx(0.05)
    assert rep.sigma == pytest.approx(rep.grid_sigma + 0.05)
    assert rep.sigma >= 0.25


def test_sigma_matches_brute_force(room_oracle):
    ds = collect(room_oracle, ROOM_X, ROOM_W, 30, strategy="uniform-random", seed=2)
    joint = Box([-0.5, -1.0], [0.5, 1.0])
    rep = compute_sigma(ds, ROOM_X, ROOM_W, (21, 41), conservative=False)
    assert rep.sigma == pytest.approx(_brute_sigma(ds, evaluation_grid(joint, (21, 41)), w=True), abs=1e-12)


def test_sigma_monotone_in_samples(room_oracle):
    ds = collect(room_oracle, ROOM_X, ROOM_W, 20, strategy="uniform-random", seed=4)
    more = ds.append(collect(room_oracle, ROOM_X, ROOM_W, 40, strategy="uniform-random", seed=9))
    a = compute_sigma(ds, ROOM_X, ROOM_W, 25, conservative=False).sigma
    b = compute_sigma(more, ROOM_X, ROOM_W, 25, conservative=False).sigma
    assert b <= a + 1e-15


def test_sigma_scales_with_box():
    rng = np.random.default_rng(0)
    X = rng.random((40, 2))
    ds = _ds(X)
    a = compute_sigma(ds, Box([0, 0], [1, 1]), None, 31)
    b = compute_sigma(_ds(2 * X), Box([0, 0], [2, 2]), None, 31)
    assert b.sigma == pytest.approx(2 * a.sigma, rel=1e-12)


def test_sigma_needs_every_input():
    ds = _ds([0.1, 0.2], u=[0, 0], n_inputs=2)
    with pytest.raises(IncompleteDatasetError):
        compute_sigma(ds, Box([0.0], [1.0]), None, 11)


def test_evaluation_slack_bounds_continuum():
    box = Box([0.0, 0.0], [1.0, 2.0])
    per = (6, 9)
    E = evaluation_grid(box, per)
    pts = np.random.default_rng(1).random((3000, 2)) * box.widths
    d = np.sqrt(((pts[:, None] - E[None]) ** 2).sum(-1)).min(axis=1)
    assert d.max() <= evaluation_slack(box, per) + 1e-12


def test_csv_round_trip(room_oracle, tmp_path):
    ds = collect(room_oracle, ROOM_X, ROOM_W, 25, seed=8)
    path = tmp_path / "data.csv"
    ds.save(path)
    back = Dataset.load(path)
    assert back.digest() == ds.digest()
    assert back.seed == 8 and back.n_inputs == ds.n_inputs and back.x_box == ROOM_X
    assert path.read_text().splitlines()[0] == "x_0,u_index,w_0,xnext_0"
