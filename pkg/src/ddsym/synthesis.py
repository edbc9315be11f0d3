"""Safety controllers on symbolic models and their refinement to the plant."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .abstraction import SINK, SymbolicModel
from .blackbox import NetworkOracle
from .errors import ConfigurationError, UncontrollableStateError
from .gridding import OUT_OF_DOMAIN, Box, UniformGrid

MAGIC = b"CTL1"


def contract_safe_set(safe_box: Box, grid: UniformGrid, epsilon: float) -> np.ndarray:
    """Indices whose representative lies in ``safe_box`` shrunk by ``epsilon``."""
    if epsilon < 0:
        raise ConfigurationError("epsilon must be non-negative")
    inner = safe_box.deflate(epsilon)
    if inner is None:
        warnings.warn(f"contracting the safe set by {epsilon:g} leaves nothing", RuntimeWarning, stacklevel=2)
        return np.zeros(0, dtype=np.intp)
    return np.flatnonzero(inner.contains(grid.representatives()))


@dataclass
class SafetyGame:
    """Safety game on a symbolic model.

    ``margin_cells`` makes the game robust: a successor cell only counts as
    safe if every cell within that many cells (per axis) is winning too.
    Zero recovers the plain game.
    """

    model: SymbolicModel
    safe_indices: np.ndarray
    margin_cells: Optional[Sequence[int]] = None

    def __post_init__(self):
        idx = np.unique(np.asarray(self.safe_indices, dtype=np.intp))
        if idx.size and (idx[0] < 0 or idx[-1] >= self.model.n_states):
            raise ConfigurationError("safe indices must be valid abstract states")
        self.safe_indices = idx
        dim = self.model.state_grid.dim
        m = np.zeros(dim, dtype=np.intp) if self.margin_cells is None else \
            np.broadcast_to(np.asarray(self.margin_cells, dtype=np.intp), (dim,)).copy()
        if np.any(m < 0):
            raise ConfigurationError("margin_cells must be non-negative")
        self.margin_cells = m


def margin_in_cells(grid: UniformGrid, margin) -> np.ndarray:
    """Smallest per-axis cell count covering a drift of ``margin`` (scalar or per axis)."""
    m = np.broadcast_to(np.asarray(margin, dtype=float), (grid.dim,))
    if np.any(m < 0):
        raise ConfigurationError("margin must be non-negative")
    return np.ceil(m / grid.cell_widths - 1e-12).astype(np.intp)


@dataclass
class AbstractController:
    """Winning states and, per state, the boolean mask of safe inputs."""

    allowed: np.ndarray  # (n_states, n_inputs) bool

    @property
    def winning(self) -> np.ndarray:
        return np.flatnonzero(self.allowed.any(axis=1))

    @property
    def is_empty(self) -> bool:
        return not self.allowed.any()

    def allowed_inputs(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.allowed[s])


def _offsets(margin: np.ndarray) -> np.ndarray:
    axes = [np.arange(-k, k + 1) for k in margin]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(margin))


def _erode(win: np.ndarray, shape, margin: np.ndarray) -> np.ndarray:
    """Cells whose whole neighbourhood is in ``win``; outside the grid counts as losing."""
    if not margin.any():
        return win.copy()
    return ndimage.binary_erosion(win.reshape(shape), structure=np.ones(2 * margin + 1, dtype=bool),
                                  border_value=0).reshape(-1)


def solve_safety_game(game: SafetyGame) -> AbstractController:
    """Maximal fixed point of ``W -> {s in W : exists u forall w, f(s,u,w) in W}``.

    Worklist version: when a state leaves the winning set only the
    predecessors of its neighbourhood are revisited.
    """
    T = game.model.transitions
    ns, nu, nw = T.shape
    shape = game.model.state_grid.cells_per_axis
    margin = game.margin_cells
    win = np.zeros(ns, dtype=bool)
    win[game.safe_indices] = True
    sink = T == SINK
    tgt = np.where(sink, 0, T).astype(np.intp)
    inner = _erode(win, shape, margin)
    good = win[:, None] & ~(sink | ~inner[tgt]).any(axis=2)  # (ns, nu)

    # predecessor lists: for each target state, the flat (s*nu + u) pairs reaching it
    flat_su = np.repeat(np.arange(ns * nu), nw)
    keep = ~sink.reshape(-1)
    flat_t = tgt.reshape(-1)[keep]
    order = np.argsort(flat_t, kind="stable")
    preds = flat_su[keep][order]
    starts = np.searchsorted(flat_t[order], np.arange(ns + 1))
    offs = _offsets(margin)

    def neighbourhood(t):
        c = np.asarray(np.unravel_index(t, shape)) + offs
        c = c[np.all((c >= 0) & (c < np.asarray(shape)), axis=1)]
        return np.ravel_multi_index(tuple(c.T), shape)

    queue = list(np.flatnonzero(win & ~good.any(axis=1)))
    win[queue] = False
    while queue:
        t = queue.pop()
        for nb in neighbourhood(t):
            for su in np.unique(preds[starts[nb]:starts[nb + 1]]):
                s, u = divmod(int(su), nu)
                if win[s] and good[s, u]:
                    good[s, u] = False
                    if not good[s].any():
                        win[s] = False
                        queue.append(s)
    good &= win[:, None]
    return AbstractController(good)


# --------------------------------------------------------------------------
# Refinement

@dataclass
class RefinedController:
    controller: AbstractController
    grid: UniformGrid
    input_set: np.ndarray

    def __post_init__(self):
        allowed = self.controller.allowed
        self._first = np.where(allowed.any(axis=1), np.argmax(allowed, axis=1), -1)

    def input_index(self, x) -> int:
        cell = int(self.grid.locate(np.asarray(x, dtype=float).reshape(self.grid.dim)))
        if cell == OUT_OF_DOMAIN or self._first[cell] < 0:
            raise UncontrollableStateError(cell)
        return int(self._first[cell])

    def input_indices(self, X) -> np.ndarray:
        """Vectorized ``input_index``; ``-1`` marks uncontrollable rows."""
        cells = self.grid.locate(np.asarray(X, dtype=float).reshape(-1, self.grid.dim))
        out = np.full(cells.shape, -1, dtype=np.intp)
        inside = cells != OUT_OF_DOMAIN
        out[inside] = self._first[cells[inside]]
        return out

    def __call__(self, x) -> np.ndarray:
        return self.input_set[self.input_index(x)]

    # -- persistence --------------------------------------------------------

    def to_bytes(self) -> bytes:
        n, (k, m) = self.grid.dim, self.input_set.shape
        parts = [MAGIC, struct.pack("<3I", n, m, k),
                 self.grid.box.lower.astype("<f8").tobytes(), self.grid.box.upper.astype("<f8").tobytes(),
                 np.asarray(self.grid.cells_per_axis, dtype="<u4").tobytes(),
                 self.input_set.astype("<f8").tobytes(),
                 np.packbits(self.controller.allowed, axis=1, bitorder="little").tobytes()]
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "RefinedController":
        if buf[:4] != MAGIC:
            raise ConfigurationError("not a controller file (bad magic)")
        n, m, k = struct.unpack_from("<3I", buf, 4)
        off = 16
        lo = np.frombuffer(buf, "<f8", n, off).copy(); off += 8 * n
        hi = np.frombuffer(buf, "<f8", n, off).copy(); off += 8 * n
        cells = tuple(int(c) for c in np.frombuffer(buf, "<u4", n, off)); off += 4 * n
        inputs = np.frombuffer(buf, "<f8", k * m, off).reshape(k, m).copy(); off += 8 * k * m
        grid = UniformGrid(Box(lo, hi), cells)
        nbytes = (k + 7) // 8
        bits = np.frombuffer(buf, np.uint8, grid.size * nbytes, off).reshape(grid.size, nbytes)
        if off + bits.size != len(buf):
            raise ConfigurationError("controller file has trailing or missing bytes")
        allowed = np.unpackbits(bits, axis=1, count=k, bitorder="little").astype(bool)
        return cls(AbstractController(allowed), grid, inputs)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "RefinedController":
        return cls.from_bytes(Path(path).read_bytes())


def refine(controller: AbstractController, grid: UniformGrid, x, input_set=None):
    """Lowest-index allowed input at the cell of ``x``."""
    rc = RefinedController(controller, grid, np.zeros((controller.allowed.shape[1], 1))
                           if input_set is None else np.atleast_2d(input_set))
    idx = rc.input_index(x)
    return idx if input_set is None else rc.input_set[idx]


# --------------------------------------------------------------------------
# Closed loop

@dataclass
class SimulationResult:
    trajectory: np.ndarray          # (horizon+1, M, n)
    inputs: np.ndarray              # (horizon, M) input indices
    safe: bool
    first_violation: Optional[int] = None
    reason: str = ""
    safe_flags: np.ndarray = field(default=None, repr=False)  # (horizon+1, M)


def simulate_closed_loop(network: NetworkOracle, controllers: Sequence[RefinedController], x0,
                         horizon: int, safe_boxes: Optional[Sequence[Box]] = None) -> SimulationResult:
    """Iterate the network under the refined per-agent controllers.

    Safe iff every agent stays in its (uncontracted) safe box for all steps.
    """
    M, n = network.M, network.state_dim
    controllers = list(controllers)
    if len(controllers) == 1 and M > 1:
        controllers = controllers * M
    if len(controllers) != M:
        raise ConfigurationError("need one controller per subsystem")
    boxes = list(safe_boxes) if safe_boxes is not None else [c.grid.box for c in controllers]
    if len(boxes) == 1 and M > 1:
        boxes = boxes * M
    shared = all(c is controllers[0] for c in controllers)
    shared_box = all(b == boxes[0] for b in boxes)
    X = np.asarray(x0, dtype=float).reshape(M, n)
    traj = np.empty((horizon + 1, M, n))
    flags = np.zeros((horizon + 1, M), dtype=bool)
    U = np.zeros((horizon, M), dtype=np.intp)
    traj[0] = X

    def inside(X):
        if shared_box:
            return boxes[0].contains(X)
        return np.array([b.contains(X[i])[0] for i, b in enumerate(boxes)])

    flags[0] = inside(X)
    if not flags[0].all():
        return SimulationResult(traj[:1], U[:0], False, 0, "initial state outside the safe set", flags[:1])
    for k in range(horizon):
        if shared:
            u = controllers[0].input_indices(X)
        else:
            u = np.array([c.input_indices(X[i])[0] for i, c in enumerate(controllers)])
        if np.any(u < 0):
            return SimulationResult(traj[:k + 1], U[:k], False, k, "uncontrollable state reached", flags[:k + 1])
        U[k] = u
        X = network.step_blocks(X, u)
        traj[k + 1] = X
        flags[k + 1] = inside(X)
        if not flags[k + 1].all():
            return SimulationResult(traj[:k + 2], U[:k + 1], False, k + 1, "left the safe set", flags[:k + 2])
    return SimulationResult(traj, U, True, None, "", flags)


def write_trajectory_csv(path, result: SimulationResult, subsystems: Optional[Sequence[int]] = None):
    """CSV rows ``k, subsystem, x_0.., u_index, safe_flag`` (u_index empty on the last step)."""
    traj, U, flags = result.trajectory, result.inputs, result.safe_flags
    M, n = traj.shape[1], traj.shape[2]
    subs = range(M) if subsystems is None else subsystems
    lines = ["k,subsystem," + ",".join(f"x_{j}" for j in range(n)) + ",u_index,safe_flag"]
    for k in range(traj.shape[0]):
        for i in subs:
            u = str(int(U[k, i])) if k < len(U) else ""
            xs = ",".join(repr(float(v)) for v in traj[k, i])
            lines.append(f"{k},{i},{xs},{u},{int(flags[k, i])}")
    Path(path).write_text("\n".join(lines) + "\n")
