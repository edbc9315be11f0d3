import numpy as np
import pytest

from ddsym.abstraction import build_symbolic
from ddsym.blackbox import RoomNetworkConfig, SubsystemOracle, make_room_network
from ddsym.certificate import SopConfig, even_difference_basis, solve_sop
from ddsym.gridding import Box, UniformGrid
from ddsym.sampling import collect

ROOM_X = Box([-0.5], [0.5])
ROOM_W = Box([-1.0], [1.0])


@pytest.fixture(scope="session")
def room_oracle():
    return make_room_network(RoomNetworkConfig(M=3)).subsystems[0]


@pytest.fixture(scope="session")
def room_small(room_oracle):
    """Coarse room instance shared by the certificate and Lipschitz tests."""
    xg, wg = UniformGrid(ROOM_X, (10,)), UniformGrid(ROOM_W, (4,))
    ds = collect(room_oracle, ROOM_X, ROOM_W, 60, seed=3)
    sm = build_symbolic(room_oracle, xg, wg)
    sol = solve_sop(ds, sm, even_difference_basis(1, 6), cfg=SopConfig(psi_bounds=(1e-6, 0.05)))
    return ds, sm, sol


def identity_oracle(n=1, p=1, inputs=((0.0,),)):
    def fn(x, u, w):
        return np.array(x, dtype=float)

    def batch(X, U, W):
        return np.array(X, dtype=float)

    return SubsystemOracle(n, p, np.asarray(inputs, dtype=float), fn, batch)


def random_model(rng, ns, nu, nw, sink_prob=0.05, shape=None):
    """Symbolic model with uniformly random successors (and some sink entries)."""
    from ddsym.abstraction import SINK, SymbolicModel
    shape = shape or (ns,)
    grid = UniformGrid(Box(np.zeros(len(shape)), np.ones(len(shape))), shape)
    T = rng.integers(0, grid.size, (grid.size, nu, nw)).astype(np.uint32)
    T[rng.random(T.shape) < sink_prob] = SINK
    return SymbolicModel(grid, UniformGrid(Box([0.0], [1.0]), (nw,)), np.arange(nu, dtype=float)[:, None], T)


def naive_fixed_point(sm, safe, margin=None):
    """Iterate W -> {s in W : exists u forall w, the cells around f(s,u,w) are all in W}."""
    from ddsym.abstraction import SINK
    shape = sm.state_grid.cells_per_axis
    margin = np.zeros(len(shape), int) if margin is None else np.broadcast_to(margin, (len(shape),))
    W = set(int(s) for s in safe)

    def ok(t):
        if t == SINK:
            return False
        c = np.array(np.unravel_index(int(t), shape))
        for off in np.ndindex(*(2 * np.asarray(margin) + 1)):
            nb = c + np.array(off) - margin
            if np.any(nb < 0) or np.any(nb >= shape):
                return False
            if int(np.ravel_multi_index(tuple(nb), shape)) not in W:
                return False
        return True

    while True:
        allowed = {s: [u for u in range(sm.n_inputs) if all(ok(sm.transitions[s, u, w]) for w in range(sm.n_dists))]
                   for s in W}
        nxt = {s for s, a in allowed.items() if a}
        if nxt == W:
            out = np.zeros((sm.n_states, sm.n_inputs), bool)
            for s, a in allowed.items():
                out[s, a] = True
            return out
        W = nxt
