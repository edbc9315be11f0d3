"""Two-consecutive sample collection and the coverage radius of a dataset."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .blackbox import SubsystemOracle
from .errors import ConfigurationError, IncompleteDatasetError, SamplingError
from .gridding import Box

STRATEGIES = ("uniform-random", "low-discrepancy", "grid")


@dataclass(frozen=True)
class SamplePair:
    x: np.ndarray
    u_index: int
    w: np.ndarray
    x_next: np.ndarray


@dataclass(eq=False)
class Dataset:
    """Column-stored sample pairs ``((x, u, w), f(x, u, w))``."""

    subsystem_id: int
    X: np.ndarray
    u_index: np.ndarray
    W: np.ndarray
    X_next: np.ndarray
    seed: int
    strategy: str
    x_box: Optional[Box] = None
    w_box: Optional[Box] = None
    n_inputs: Optional[int] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.u_index), -1)
        self.W = np.asarray(self.W, dtype=float).reshape(len(self.u_index), -1)
        self.X_next = np.asarray(self.X_next, dtype=float).reshape(self.X.shape)
        self.u_index = np.asarray(self.u_index, dtype=np.intp)
        if self.n_inputs is None:
            self.n_inputs = int(self.u_index.max()) + 1 if len(self.u_index) else 0

    def __len__(self):
        return len(self.u_index)

    @property
    def pairs(self) -> Iterator[SamplePair]:
        for k in range(len(self)):
            yield SamplePair(self.X[k], int(self.u_index[k]), self.W[k], self.X_next[k])

    @property
    def state_dim(self) -> int:
        return self.X.shape[1]

    @property
    def dist_dim(self) -> int:
        return self.W.shape[1]

    def for_input(self, u: int) -> np.ndarray:
        return np.flatnonzero(self.u_index == u)

    def check_coverage(self, n_inputs: Optional[int] = None):
        n_inputs = self.n_inputs if n_inputs is None else n_inputs
        missing = sorted(set(range(n_inputs)) - set(np.unique(self.u_index).tolist()))
        if missing:
            raise IncompleteDatasetError(f"no samples for input indices {missing}")

    def append(self, other: "Dataset") -> "Dataset":
        return Dataset(self.subsystem_id, np.vstack([self.X, other.X]),
                       np.concatenate([self.u_index, other.u_index]),
                       np.vstack([self.W, other.W]), np.vstack([self.X_next, other.X_next]),
                       self.seed, self.strategy, self.x_box, self.w_box,
                       max(self.n_inputs, other.n_inputs))

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.u_index.astype("<i8"), self.W, self.X_next):
            h.update(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
        return h.hexdigest()

    # -- persistence --------------------------------------------------------

    def header(self) -> list:
        n, p = self.state_dim, self.dist_dim
        return ([f"x_{k}" for k in range(n)] + ["u_index"] + [f"w_{k}" for k in range(p)]
                + [f"xnext_{k}" for k in range(n)])

    def save(self, path) -> None:
        path = Path(path)
        rows = np.column_stack([self.X, self.u_index, self.W, self.X_next])
        fmt = ["%.17g"] * self.state_dim + ["%d"] + ["%.17g"] * (self.dist_dim + self.state_dim)
        np.savetxt(path, rows, fmt=fmt, delimiter=",", header=",".join(self.header()), comments="")
        meta = {"subsystem_id": self.subsystem_id, "seed": self.seed, "strategy": self.strategy,
                "n_inputs": self.n_inputs, "state_dim": self.state_dim, "dist_dim": self.dist_dim,
                "x_box": self.x_box.to_dict() if self.x_box else None,
                "w_box": self.w_box.to_dict() if self.w_box else None,
                "digest": self.digest()}
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        n, p = meta["state_dim"], meta["dist_dim"]
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        box = lambda d: Box(d["lower"], d["upper"]) if d else None  # noqa: E731
        return cls(meta["subsystem_id"], rows[:, :n], rows[:, n].astype(np.intp),
                   rows[:, n + 1:n + 1 + p], rows[:, n + 1 + p:], meta["seed"], meta["strategy"],
                   box(meta["x_box"]), box(meta["w_box"]), meta["n_inputs"])


def _lattice(box: Box, per_axis: Sequence[int]) -> np.ndarray:
    axes = [box.lower[k] + (np.arange(c) + 0.5) * box.widths[k] / c for k, c in enumerate(per_axis)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _draw(strategy: str, box: Box, n: int, rng: np.random.Generator) -> np.ndarray:
    d = box.dim
    if strategy == "uniform-random":
        unit = rng.random((n, d))
    elif strategy == "low-discrepancy":
        unit = qmc.Halton(d, scramble=True, seed=rng).random(n)
    elif strategy == "grid":
        per = int(round(n ** (1.0 / d)))
        if per ** d != n:
            raise ConfigurationError(f"grid strategy needs n_per_input to be a perfect {d}-th power, got {n}")
        return _lattice(box, [per] * d)
    else:
        raise ConfigurationError(f"unknown sampling strategy {strategy!r}; expected one of {STRATEGIES}")
    return box.lower + unit * box.widths


def collect(oracle: SubsystemOracle, x_box: Box, w_box: Box, n_per_input: int,
            strategy: str = "low-discrepancy", seed: int = 0, subsystem_id: int = 0) -> Dataset:
    """Query the oracle at ``n_per_input`` points of ``X x W`` for every input."""
    if n_per_input < 1:
        raise ConfigurationError("n_per_input must be at least 1")
    n = oracle.state_dim
    joint = Box(np.concatenate([x_box.lower, w_box.lower]), np.concatenate([x_box.upper, w_box.upper]))
    streams = np.random.SeedSequence(seed).spawn(oracle.n_inputs)
    Xs, Us, Ws = [], [], []
    for u, ss in enumerate(streams):
        pts = _draw(strategy, joint, n_per_input, np.random.default_rng(ss))
        Xs.append(pts[:, :n])
        Ws.append(pts[:, n:])
        Us.append(np.full(len(pts), u, dtype=np.intp))
    X, W, U = np.vstack(Xs), np.vstack(Ws), np.concatenate(Us)
    X_next = _query(oracle, X, U, W)
    return Dataset(subsystem_id, X, U, W, X_next, seed, strategy, x_box, w_box, oracle.n_inputs)


def _query(oracle: SubsystemOracle, X, U, W) -> np.ndarray:
    try:
        out = oracle.step_indexed(X, U, W)
        if np.all(np.isfinite(out)):
            return out
    except Exception:
        pass
    # locate the offending point one query at a time
    rows = []
    for x, u, w in zip(X, U, W):
        try:
            y = oracle.step(x, oracle.input_set[u], w)
        except Exception as exc:
            raise SamplingError(f"oracle failed: {exc}", x, oracle.input_set[u], w) from exc
        if not np.all(np.isfinite(y)):
            raise SamplingError("oracle returned a non-finite state", x, oracle.input_set[u], w)
        rows.append(y)
    return np.asarray(rows)


# --------------------------------------------------------------------------
# Coverage radius

@dataclass
class CoverageReport:
    sigma: float
    grid_sigma: float
    slack: float
    eval_points_per_axis: tuple
    argmax_point: np.ndarray = field(repr=False)
    argmax_input: int = 0

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "grid_sigma": self.grid_sigma, "slack": self.slack,
                "eval_points_per_axis": list(self.eval_points_per_axis),
                "argmax_point": np.asarray(self.argmax_point).tolist(), "argmax_input": self.argmax_input}

    @classmethod
    def from_dict(cls, d) -> "CoverageReport":
        return cls(d["sigma"], d["grid_sigma"], d["slack"], tuple(d["eval_points_per_axis"]),
                   np.asarray(d["argmax_point"]), d["argmax_input"])


def evaluation_grid(box: Box, per_axis: Sequence[int]) -> np.ndarray:
    """Lattice including the box corners (a single point sits at the center)."""
    axes = []
    for k, c in enumerate(per_axis):
        if c == 1:
            axes.append(np.array([(box.lower[k] + box.upper[k]) / 2]))
        else:
            axes.append(np.linspace(box.lower[k], box.upper[k], c))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def evaluation_slack(box: Box, per_axis: Sequence[int]) -> float:
    """Largest distance from a box point to the nearest evaluation point."""
    per = np.asarray(per_axis, dtype=float)
    spacing = np.where(per > 1, box.widths / np.maximum(per - 1, 1), box.widths)
    return 0.5 * float(np.linalg.norm(spacing))


def compute_sigma(dataset: Dataset, x_box: Box, w_box: Optional[Box], eval_points_per_axis,
                  conservative: bool = True) -> CoverageReport:
    """Max over the evaluation lattice (and inputs) of the distance to the
    nearest sample taken under the same input.

    With ``conservative`` the lattice-to-continuum slack is added so the
    returned ``sigma`` bounds the radius over the whole box.
    """
    dataset.check_coverage()
    if w_box is None:
        joint = x_box
        S = dataset.X
    else:
        joint = Box(np.concatenate([x_box.lower, w_box.lower]), np.concatenate([x_box.upper, w_box.upper]))
        S = np.hstack([dataset.X, dataset.W])
    per = tuple(int(c) for c in np.broadcast_to(np.asarray(eval_points_per_axis), (joint.dim,)))
    E = evaluation_grid(joint, per)
    best, arg, arg_u = -1.0, None, 0
    for u in range(dataset.n_inputs):
        Su = S[dataset.for_input(u)]
        _, nn = cKDTree(Su).query(E)
        # recompute with the plain Euclidean formula so results do not depend on tree internals
        dist = np.sqrt(((E - Su[nn]) ** 2).sum(axis=1))
        k = int(np.argmax(dist))
        if dist[k] > best:
            best, arg, arg_u = float(dist[k]), E[k], u
    slack = evaluation_slack(joint, per) if conservative else 0.0
    return CoverageReport(best + slack, best, slack, per, arg, arg_u)


def default_eval_points(cells_per_axis: Sequence[int], factor: int = 4) -> tuple:
    return tuple(factor * int(c) for c in cells_per_axis)
