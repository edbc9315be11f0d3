"""Pipeline configuration: a single JSON document per run."""

from __future__ import annotations

import copy
import hashlib
import importlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .blackbox import (NetworkOracle, RoomNetworkConfig, VehicleNetworkConfig, make_room_network,
                       make_vehicle_network)
from .certificate import BasisSpec, SopConfig, even_difference_basis
from .errors import ConfigurationError
from .gridding import Box, UniformGrid
from .lipschitz import LipschitzConfig

BENCHMARKS = ("room", "vehicle", "external-oracle")
SHIPPED = ("room", "vehicle")


@dataclass
class SimulationConfig:
    horizon: int = 500
    starts: int = 100
    scenarios: tuple = ("random",)
    log_subsystems: tuple = (0, 1, 2)
    seed: int = 0

    def __post_init__(self):
        bad = set(self.scenarios) - {"random", "boundary"}
        if bad:
            raise ConfigurationError(f"unknown simulation scenarios {sorted(bad)}")
        if self.horizon < 0 or self.starts < 0:
            raise ConfigurationError("horizon and starts must be non-negative")


@dataclass
class PipelineConfig:
    benchmark: str
    M: int
    seed: int
    x_box: Box
    w_box: Box
    safe_box: Box
    state_cells: tuple
    dist_cells: tuple
    n_per_input: int = 400
    strategy: str = "low-discrepancy"
    basis_degree: int = 6
    basis_terms: Optional[list] = None
    sop: SopConfig = field(default_factory=SopConfig)
    lipschitz: LipschitzConfig = field(default_factory=LipschitzConfig)
    sigma_eval_factor: int = 4
    sigma_conservative: bool = True
    eta: float = 0.99
    contraction: Union[str, float] = "epsilon"
    game_margin: Union[str, float] = "mismatch"
    homogeneous: bool = True
    max_retries: int = 3
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    benchmark_params: dict = field(default_factory=dict)
    oracle: Optional[str] = None
    out: str = "runs/out"
    raw: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ConfigurationError(f"benchmark must be one of {BENCHMARKS}, got {self.benchmark!r}")
        if self.M < 1:
            raise ConfigurationError("M must be positive")
        if self.benchmark == "external-oracle" and not self.oracle:
            raise ConfigurationError("external-oracle benchmarks need an 'oracle' entry 'module:callable'")
        if not 0 < self.eta < 1:
            raise ConfigurationError("eta must lie in (0, 1)")
        if isinstance(self.contraction, str) and self.contraction != "epsilon":
            raise ConfigurationError("contraction must be 'epsilon' or a non-negative number")
        if isinstance(self.game_margin, str) and self.game_margin != "mismatch":
            raise ConfigurationError("game_margin must be 'mismatch' or a non-negative number")
        # building the grids validates the boxes and cell counts
        self.state_grid()
        self.dist_grid()
        if self.safe_box.dim != self.x_box.dim:
            raise ConfigurationError("safe_box and x_box must have the same dimension")

    # -- derived objects ----------------------------------------------------

    def state_grid(self) -> UniformGrid:
        return UniformGrid(self.x_box, self.state_cells)

    def dist_grid(self) -> UniformGrid:
        return UniformGrid(self.w_box, self.dist_cells)

    def basis(self) -> BasisSpec:
        if self.basis_terms:
            return BasisSpec.from_list(self.basis_terms)
        return even_difference_basis(self.x_box.dim, self.basis_degree)

    def network(self) -> NetworkOracle:
        params = dict(self.benchmark_params, M=self.M)
        if self.benchmark == "room":
            if "inputs" in params:
                params["inputs"] = tuple(params["inputs"])
            return make_room_network(RoomNetworkConfig(**params))
        if self.benchmark == "vehicle":
            if "input_levels" in params:
                params["input_levels"] = tuple(params["input_levels"])
            return make_vehicle_network(VehicleNetworkConfig(**params))
        mod, _, name = self.oracle.partition(":")
        factory = getattr(importlib.import_module(mod), name)
        net = factory(**params)
        if not isinstance(net, NetworkOracle):
            raise ConfigurationError(f"{self.oracle} did not return a NetworkOracle")
        return net

    def digest(self) -> str:
        """Hash of everything that influences artifacts (the output path excluded)."""
        d = copy.deepcopy(self.raw)
        d.pop("out", None)
        d["M"], d["seed"] = self.M, self.seed
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def with_overrides(self, seed=None, M=None, out=None) -> "PipelineConfig":
        raw = copy.deepcopy(self.raw)
        if seed is not None:
            raw["seed"] = int(seed)
        if M is not None:
            raw["M"] = int(M)
        if out is not None:
            raw["out"] = str(out)
        return from_dict(raw)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def _box(v, what) -> Box:
    try:
        return Box.from_pairs(v)
    except Exception as exc:
        raise ConfigurationError(f"invalid box for {what!r}: {exc}") from exc


def from_dict(d: dict) -> PipelineConfig:
    d = copy.deepcopy(d)
    if "seed" not in d:
        raise ConfigurationError("config must set 'seed' (runs have to be reproducible)")
    for key in ("benchmark", "M", "x_box", "w_box", "state_cells", "dist_cells"):
        if key not in d:
            raise ConfigurationError(f"config is missing {key!r}")
    samp = d.get("sampling", {})
    basis = d.get("basis", {})
    sig = d.get("sigma", {})
    try:
        return PipelineConfig(
            benchmark=d["benchmark"], M=int(d["M"]), seed=int(d["seed"]),
            x_box=_box(d["x_box"], "x_box"), w_box=_box(d["w_box"], "w_box"),
            safe_box=_box(d.get("safe_box", d["x_box"]), "safe_box"),
            state_cells=tuple(int(c) for c in d["state_cells"]),
            dist_cells=tuple(int(c) for c in d["dist_cells"]),
            n_per_input=int(samp.get("n_per_input", 400)),
            strategy=samp.get("strategy", "low-discrepancy"),
            basis_degree=int(basis.get("max_degree", 6)), basis_terms=basis.get("terms"),
            sop=SopConfig.from_dict(d.get("sop", {})),
            lipschitz=LipschitzConfig(**d.get("lipschitz", {})),
            sigma_eval_factor=int(sig.get("eval_factor", 4)),
            sigma_conservative=bool(sig.get("conservative", True)),
            eta=float(d.get("eta", 0.99)),
            contraction=d.get("contraction", "epsilon"),
            game_margin=d.get("game_margin", "mismatch"),
            homogeneous=bool(d.get("homogeneous", True)),
            max_retries=int(d.get("max_retries", 3)),
            simulation=SimulationConfig(**{k: tuple(v) if isinstance(v, list) else v
                                           for k, v in d.get("simulation", {}).items()}),
            benchmark_params=d.get("benchmark_params", {}),
            oracle=d.get("oracle"), out=d.get("out", "runs/out"), raw=d)
    except TypeError as exc:
        raise ConfigurationError(f"unexpected config entry: {exc}") from exc


def load_config(path_or_name, seed=None, M=None, out=None) -> PipelineConfig:
    """Load a JSON config from a path, or one of the shipped names (``room``, ``vehicle``).

    Overrides are applied before validation, so a seed given here may stand
    in for one missing from the file.
    """
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text()
    elif str(path_or_name) in SHIPPED:
        text = resources.files("ddsym.configs").joinpath(f"{path_or_name}.json").read_text()
    else:
        raise ConfigurationError(f"config {path_or_name!r} not found")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path_or_name!r} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {path_or_name!r} must be a JSON object")
    for key, value in (("seed", seed), ("M", M), ("out", out)):
        if value is not None:
            raw[key] = str(value) if key == "out" else int(value)
    return from_dict(raw)


def per_axis_density(n_per_input: int, dim: int) -> int:
    """Samples per axis of a ``dim``-dimensional lattice holding ``n_per_input`` points."""
    return int(np.ceil(n_per_input ** (1.0 / dim) - 1e-9))
