"""Symbolic models built from black-box queries at grid representatives."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blackbox import SubsystemOracle
from .errors import AbstractionError, ConfigurationError, InputShapeError
from .gridding import OUT_OF_DOMAIN, Box, UniformGrid

SINK = np.uint32(0xFFFFFFFF)
MAGIC = b"ABS1"


@dataclass(eq=False)
class SymbolicModel:
    """Dense transition table ``(state, input, disturbance) -> state | SINK``."""

    state_grid: UniformGrid
    dist_grid: UniformGrid
    input_set: np.ndarray
    transitions: np.ndarray

    def __post_init__(self):
        self.input_set = np.atleast_2d(np.asarray(self.input_set, dtype=float))
        t = np.asarray(self.transitions, dtype=np.uint32)
        shape = (self.state_grid.size, len(self.input_set), self.dist_grid.size)
        if t.size != np.prod(shape):
            raise ConfigurationError(f"transition table has {t.size} entries, expected {np.prod(shape)}")
        t = t.reshape(shape)
        bad = (t != SINK) & (t >= self.state_grid.size)
        if bad.any():
            raise ConfigurationError("transition table references a non-existent state")
        t.setflags(write=False)
        self.transitions = t

    @property
    def n_states(self) -> int:
        return self.state_grid.size

    @property
    def n_inputs(self) -> int:
        return len(self.input_set)

    @property
    def n_dists(self) -> int:
        return self.dist_grid.size

    def sink_fraction(self) -> float:
        return float(np.mean(self.transitions == SINK))

    # -- persistence --------------------------------------------------------

    def to_bytes(self) -> bytes:
        n, p = self.state_grid.dim, self.dist_grid.dim
        m = self.input_set.shape[1]
        parts = [MAGIC, struct.pack("<4I", n, p, m, self.n_inputs)]
        for g in (self.state_grid, self.dist_grid):
            parts += [g.box.lower.astype("<f8").tobytes(), g.box.upper.astype("<f8").tobytes(),
                      np.asarray(g.cells_per_axis, dtype="<u4").tobytes()]
        parts.append(self.input_set.astype("<f8").tobytes())
        parts.append(self.transitions.astype("<u4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "SymbolicModel":
        if buf[:4] != MAGIC:
            raise ConfigurationError("not an abstraction file (bad magic)")
        n, p, m, k = struct.unpack_from("<4I", buf, 4)
        off = 20
        grids = []
        for d in (n, p):
            lo = np.frombuffer(buf, "<f8", d, off); off += 8 * d
            hi = np.frombuffer(buf, "<f8", d, off); off += 8 * d
            cells = np.frombuffer(buf, "<u4", d, off); off += 4 * d
            grids.append(UniformGrid(Box(lo.copy(), hi.copy()), tuple(int(c) for c in cells)))
        inputs = np.frombuffer(buf, "<f8", k * m, off).reshape(k, m).copy(); off += 8 * k * m
        count = grids[0].size * k * grids[1].size
        if off + 4 * count != len(buf):
            raise ConfigurationError("abstraction file has trailing or missing bytes")
        table = np.frombuffer(buf, "<u4", count, off).astype(np.uint32)
        return cls(grids[0], grids[1], inputs, table)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SymbolicModel":
        return cls.from_bytes(Path(path).read_bytes())


def build_symbolic(oracle: SubsystemOracle, state_grid: UniformGrid, dist_grid: UniformGrid,
                   input_set=None) -> SymbolicModel:
    """One oracle call per ``(x_hat, u, w_hat)``; images are quantized and
    anything leaving the state box becomes ``SINK``."""
    if state_grid.dim != oracle.state_dim or dist_grid.dim != oracle.dist_dim:
        raise InputShapeError("grid dimensions do not match the oracle")
    inputs = oracle.input_set if input_set is None else np.atleast_2d(np.asarray(input_set, dtype=float))
    u_idx = np.array([oracle.input_index(u) for u in inputs], dtype=np.intp)
    Xr, Wr = state_grid.representatives(), dist_grid.representatives()
    ns, nu, nw = len(Xr), len(u_idx), len(Wr)
    S, U, D = np.meshgrid(np.arange(ns), np.arange(nu), np.arange(nw), indexing="ij")
    S, U, D = S.ravel(), U.ravel(), D.ravel()
    try:
        images = oracle.step_indexed(Xr[S], u_idx[U], Wr[D])
    except Exception:
        images = None
    if images is None or not np.all(np.isfinite(images)):
        images = np.empty((len(S), oracle.state_dim))
        for k, (s, u, d) in enumerate(zip(S, U, D)):
            triple = (Xr[s], inputs[u], Wr[d])
            try:
                images[k] = oracle.step(*triple)
            except Exception as exc:
                raise AbstractionError(f"oracle failed at {triple}: {exc}", triple) from exc
            if not np.all(np.isfinite(images[k])):
                raise AbstractionError(f"oracle returned a non-finite state at {triple}", triple)
    cells = state_grid.locate(images)
    table = np.where(cells == OUT_OF_DOMAIN, SINK, cells).astype(np.uint32)
    return SymbolicModel(state_grid, dist_grid, inputs, table.reshape(ns, nu, nw))


def abstract_step(sm: SymbolicModel, s, u: int, w: int):
    if s == SINK:
        return SINK
    if not (0 <= s < sm.n_states and 0 <= u < sm.n_inputs and 0 <= w < sm.n_dists):
        raise IndexError(f"abstract triple {(s, u, w)} out of range")
    return sm.transitions[s, u, w]


def one_step_mismatch(oracle: SubsystemOracle, sm: SymbolicModel, dataset) -> np.ndarray:
    """Per-axis max of ``|f(x,u,w) - f(x_hat,u,w_hat)|`` over the samples.

    ``x_hat`` and ``w_hat`` are the representatives of the sample's cells.
    This is how far a concrete successor can drift from the abstract image,
    as seen in the data; it sizes the robustness margin of the safety game.
    """
    cx = sm.state_grid.locate(dataset.X)
    cw = sm.dist_grid.locate(dataset.W)
    ok = (cx != OUT_OF_DOMAIN) & (cw != OUT_OF_DOMAIN)
    if not ok.any():
        return np.zeros(oracle.state_dim)
    Xh = sm.state_grid.representative(cx[ok])
    Wh = sm.dist_grid.representative(cw[ok])
    F = oracle.step_indexed(Xh, dataset.u_index[ok], Wh)
    return np.abs(dataset.X_next[ok] - F).max(axis=0)
