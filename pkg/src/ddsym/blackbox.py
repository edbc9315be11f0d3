"""One-step simulation oracles for subsystems and networks.

Everything downstream of this module treats an oracle as opaque: it may
only call ``step``.  The two benchmark families (room temperature network,
vehicle platoon) are built here behind that same interface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, InputShapeError, InvalidInputError

StepFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _as_vector(v, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape[0] != dim:
        raise InputShapeError(f"{what} has dimension {arr.shape[0]}, expected {dim}")
    return arr


@dataclass(frozen=True, eq=False)
class SubsystemOracle:
    """Black-box map ``(x, u, w) -> x+`` of a single agent.

    ``batch_fn``, when given, evaluates many points at once with the same
    semantics as ``fn``; it is a throughput hook and never changes results.
    """

    state_dim: int
    dist_dim: int
    input_set: np.ndarray
    fn: StepFn = field(repr=False)
    batch_fn: Optional[StepFn] = field(default=None, repr=False)

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.input_set, dtype=float))
        if inputs.ndim != 2 or inputs.shape[0] == 0:
            raise ConfigurationError("input_set must be a non-empty list of vectors")
        if len(np.unique(inputs, axis=0)) != len(inputs):
            raise ConfigurationError("input vectors must be pairwise distinct")
        if self.state_dim < 1 or self.dist_dim < 1:
            raise ConfigurationError("state_dim and dist_dim must be positive")
        inputs.setflags(write=False)
        object.__setattr__(self, "input_set", inputs)

    @property
    def input_dim(self) -> int:
        return self.input_set.shape[1]

    @property
    def n_inputs(self) -> int:
        return self.input_set.shape[0]

    def input_index(self, u) -> int:
        u = _as_vector(u, self.input_dim, "input")
        hits = np.flatnonzero(np.all(self.input_set == u, axis=1))
        if hits.size == 0:
            raise InvalidInputError(f"input {u.tolist()} is not in the input set")
        return int(hits[0])

    def step(self, x, u, w) -> np.ndarray:
        x = _as_vector(x, self.state_dim, "state")
        w = _as_vector(w, self.dist_dim, "disturbance")
        idx = self.input_index(u)
        return np.asarray(self.fn(x, self.input_set[idx], w), dtype=float).reshape(self.state_dim)

    def step_indexed(self, X, u_idx, W) -> np.ndarray:
        """Evaluate rows of ``X``/``W`` under inputs given by index."""
        X = np.asarray(X, dtype=float).reshape(-1, self.state_dim)
        W = np.asarray(W, dtype=float).reshape(-1, self.dist_dim)
        u_idx = np.broadcast_to(np.asarray(u_idx, dtype=np.intp), (X.shape[0],))
        if W.shape[0] != X.shape[0]:
            raise InputShapeError("X and W must have the same number of rows")
        if np.any((u_idx < 0) | (u_idx >= self.n_inputs)):
            raise InvalidInputError("input index out of range")
        U = self.input_set[u_idx]
        if self.batch_fn is not None:
            out = np.asarray(self.batch_fn(X, U, W), dtype=float)
        else:
            out = np.array([self.fn(x, u, w) for x, u, w in zip(X, U, W)], dtype=float)
        return out.reshape(X.shape[0], self.state_dim)


def step_subsystem(oracle: SubsystemOracle, x, u, w) -> np.ndarray:
    return oracle.step(x, u, w)


@dataclass(frozen=True, eq=False)
class NetworkOracle:
    """Interconnection of ``M`` subsystems with equal dimensions.

    ``interconnection`` maps the block state array ``(M, n)`` to the block
    disturbance array ``(M, p)``; it is hidden from every synthesis stage.
    """

    subsystems: Sequence[SubsystemOracle]
    interconnection: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __post_init__(self):
        subs = tuple(self.subsystems)
        if not subs:
            raise ConfigurationError("a network needs at least one subsystem")
        n, p, m = subs[0].state_dim, subs[0].dist_dim, subs[0].input_dim
        for s in subs:
            if (s.state_dim, s.dist_dim, s.input_dim) != (n, p, m):
                raise ConfigurationError("all subsystems must share state, disturbance and input dimensions")
        object.__setattr__(self, "subsystems", subs)

    @property
    def M(self) -> int:
        return len(self.subsystems)

    @property
    def state_dim(self) -> int:
        return self.subsystems[0].state_dim

    @property
    def homogeneous(self) -> bool:
        first = self.subsystems[0]
        return all(s is first for s in self.subsystems)

    def disturbances(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(self.M, self.state_dim)
        W = np.asarray(self.interconnection(X), dtype=float)
        return W.reshape(self.M, self.subsystems[0].dist_dim)

    def step_blocks(self, X, u_idx) -> np.ndarray:
        """Advance the block state ``(M, n)`` given one input index per agent."""
        X = np.asarray(X, dtype=float)
        if X.shape != (self.M, self.state_dim):
            raise InputShapeError(f"block state must have shape {(self.M, self.state_dim)}")
        u_idx = np.asarray(u_idx, dtype=np.intp).reshape(self.M)
        W = self.disturbances(X)
        if self.homogeneous:
            return self.subsystems[0].step_indexed(X, u_idx, W)
        return np.vstack([s.step_indexed(X[i], u_idx[i], W[i]) for i, s in enumerate(self.subsystems)])

    def step(self, x, u) -> np.ndarray:
        n, m = self.state_dim, self.subsystems[0].input_dim
        x = np.asarray(x, dtype=float).reshape(-1)
        u = np.asarray(u, dtype=float).reshape(-1)
        if x.size != self.M * n or u.size != self.M * m:
            raise InputShapeError(
                f"stacked state/input must have lengths {self.M * n}/{self.M * m}, got {x.size}/{u.size}")
        X = x.reshape(self.M, n)
        U = u.reshape(self.M, m)
        W = self.disturbances(X)
        return np.concatenate([s.step(X[i], U[i], W[i]) for i, s in enumerate(self.subsystems)])


def step_network(oracle: NetworkOracle, x, u) -> np.ndarray:
    return oracle.step(x, u)


# --------------------------------------------------------------------------
# Room temperature network

@dataclass(frozen=True)
class RoomNetworkConfig:
    M: int = 3
    gimel: float = 0.005
    daleth: float = 0.01
    beth: float = 0.06
    T_c: float = 5.0
    T_e: float = -2.0
    topology: str = "ring"
    inputs: tuple = (0.0, 1.0)
    topology_seed: int = 0

    def validate(self):
        if self.M < 1:
            raise ConfigurationError("M must be positive")
        if self.topology not in ("ring", "line", "random"):
            raise ConfigurationError(f"unknown topology {self.topology!r}")
        for u in self.inputs:
            a = 1 - 2 * self.gimel - self.daleth - self.beth * u
            if not 0 < a < 1:
                raise ConfigurationError(f"diagonal coefficient {a:.4g} for u={u} is not in (0, 1)")


def room_adjacency(M: int, topology: str, seed: int = 0) -> sp.csr_matrix:
    """Symmetric 0/1 adjacency with every node of degree at most two."""
    if M == 1:
        return sp.csr_matrix((1, 1))
    if topology == "random":
        rng = np.random.default_rng(seed)
        order = rng.permutation(M)
        # cut the random path into chains; closing a chain of length >= 3 makes a cycle
        cuts = rng.random(M - 1) < 0.2
        pairs = [(order[k], order[k + 1]) for k in range(M - 1) if not cuts[k]]
    else:
        pairs = [(k, k + 1) for k in range(M - 1)]
        if topology == "ring" and M > 2:
            pairs.append((M - 1, 0))
    rows = [a for a, b in pairs] + [b for a, b in pairs]
    cols = [b for a, b in pairs] + [a for a, b in pairs]
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(M, M))
    A.data[:] = 1.0  # M == 2 ring would double the single edge
    return A


def make_room_subsystem(cfg: RoomNetworkConfig) -> SubsystemOracle:
    g, d, b, Tc, Te = cfg.gimel, cfg.daleth, cfg.beth, cfg.T_c, cfg.T_e

    def fn(x, u, w):
        return (1 - 2 * g - d - b * u) * x + g * w + b * Tc * u + d * Te

    return SubsystemOracle(1, 1, np.array(cfg.inputs, dtype=float).reshape(-1, 1), fn, fn)


def make_room_network(cfg: RoomNetworkConfig) -> NetworkOracle:
    cfg.validate()
    sub = make_room_subsystem(cfg)
    A = room_adjacency(cfg.M, cfg.topology, cfg.topology_seed)

    def interconnection(X):
        return A @ X

    return NetworkOracle([sub] * cfg.M, interconnection)


# --------------------------------------------------------------------------
# Vehicle platoon

VEHICLE_A = np.array([[1.0, -1.0], [0.0, 1.0]])


def vehicle_coupling(tau: float) -> np.ndarray:
    return np.array([[0.0, tau], [0.0, 0.0]])


@dataclass(frozen=True)
class VehicleNetworkConfig:
    M: int = 3
    tau: float = 0.005
    input_levels: tuple = tuple(np.round(np.linspace(-1.0, 1.0, 11), 10))

    def validate(self):
        if self.M < 1:
            raise ConfigurationError("M must be positive")


def make_vehicle_subsystem(cfg: VehicleNetworkConfig) -> SubsystemOracle:
    A, Aw = VEHICLE_A, vehicle_coupling(cfg.tau)
    levels = np.asarray(cfg.input_levels, dtype=float)
    inputs = np.array([(a, b) for a in levels for b in levels])

    def fn(x, u, w):
        return A @ x + u + Aw @ w

    def batch(X, U, W):
        return X @ A.T + U + W @ Aw.T

    return SubsystemOracle(2, 2, inputs, fn, batch)


def make_vehicle_network(cfg: VehicleNetworkConfig) -> NetworkOracle:
    cfg.validate()
    sub = make_vehicle_subsystem(cfg)

    def interconnection(X):
        W = np.zeros_like(X)
        W[1:] = X[:-1]
        return W

    return NetworkOracle([sub] * cfg.M, interconnection)
