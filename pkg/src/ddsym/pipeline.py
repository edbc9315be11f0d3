"""End-to-end orchestration: sample, abstract, certify, compose, synthesize, simulate.

Every stage reads only files written by earlier stages and records the
digests of its inputs and outputs in ``manifest.json``; re-running a stage
whose inputs did not change is a no-op.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .abstraction import SymbolicModel, build_symbolic, one_step_mismatch
from .blackbox import NetworkOracle
from .certificate import AsbfSolution, BasisSpec, residuals, solve_sop
from .composition import CompositionCertificate, compose
from .config import PipelineConfig, per_axis_density
from .errors import ConfigurationError, InfeasibleError, ReportError
from .gridding import Box
from .lipschitz import LipschitzEstimate, estimate_lipschitz
from .sampling import Dataset, collect, compute_sigma, default_eval_points
from .synthesis import (RefinedController, SafetyGame, contract_safe_set, margin_in_cells,
                        simulate_closed_loop, solve_safety_game, write_trajectory_csv)

log = logging.getLogger(__name__)

STAGES = ("sample", "abstract", "asbf", "lipschitz", "sigma", "compose", "synthesize", "simulate")


# --------------------------------------------------------------------------
# Files

def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _atomic(path: Path, write):
    """Run ``write(tmp)`` then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    write(tmp)
    os.replace(tmp, path)


def write_json(path: Path, obj):
    def write(tmp):
        tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")
    _atomic(path, write)


def _save_dataset(ds: Dataset, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".tmp-{path.name}")
    ds.save(tmp)
    os.replace(tmp.with_suffix(".meta.json"), path.with_suffix(".meta.json"))
    os.replace(tmp, path)


def _need(path: Path) -> Path:
    if not path.exists():
        raise ReportError(f"missing artifact {path}")
    return path


# --------------------------------------------------------------------------
# Run context

@dataclass
class Context:
    """Config, output directory and the effective knobs of the current attempt."""

    cfg: PipelineConfig
    out: Path
    n_per_input: int
    basis: BasisSpec
    network: NetworkOracle = field(repr=False)
    timings: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: PipelineConfig, out=None) -> "Context":
        out = Path(out or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        n, basis = cfg.n_per_input, cfg.basis()
        plan = out / "plan.json"
        if plan.exists():
            d = json.loads(plan.read_text())
            if d.get("config_digest") == cfg.digest():
                n, basis = d["n_per_input"], BasisSpec.from_list(d["basis"])
        saved = {k: v for k, v in cfg.to_dict().items() if k != "out"}
        saved.update(M=cfg.M, seed=cfg.seed)
        write_json(out / "config.json", saved)
        return cls(cfg, out, n, basis, cfg.network())

    @property
    def units(self) -> List[int]:
        """Subsystems that get their own certificate; identical agents share one."""
        if self.cfg.homogeneous and self.network.homogeneous:
            return [0]
        return list(range(self.network.M))

    @property
    def multiplicity(self) -> int:
        return self.network.M if len(self.units) == 1 and self.network.M > 1 else 1

    def unit_dir(self, i: int) -> Path:
        return self.out / f"sub{i}"

    def unit_seed(self, i: int) -> int:
        if i == 0:
            return self.cfg.seed
        return int(np.random.SeedSequence([self.cfg.seed, i]).generate_state(1)[0])

    def save_plan(self):
        write_json(self.out / "plan.json", {"config_digest": self.cfg.digest(),
                                            "n_per_input": self.n_per_input,
                                            "basis": self.basis.to_list()})

    # -- manifest -----------------------------------------------------------

    def _manifest(self) -> dict:
        p = self.out / "manifest.json"
        return json.loads(p.read_text()) if p.exists() else {}

    def fresh(self, key: str, inputs_hash: str) -> bool:
        entry = self._manifest().get(key)
        if not entry or entry["inputs"] != inputs_hash:
            return False
        for name, digest in entry["outputs"].items():
            p = self.out / name
            if not p.exists() or file_digest(p) != digest:
                return False
        return True

    def record(self, key: str, inputs_hash: str, outputs: Sequence[Path]):
        m = self._manifest()
        m[key] = {"inputs": inputs_hash,
                  "outputs": {str(p.relative_to(self.out)): file_digest(p) for p in outputs}}
        write_json(self.out / "manifest.json", m)


def _hash(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, Path):
            p = file_digest(_need(p))
        h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()


def _staged(ctx: Context, stage: str, key: str, inputs_hash: str, outputs: Sequence[Path], run):
    t = time.perf_counter()
    if ctx.fresh(key, inputs_hash):
        log.info("%s: inputs unchanged, skipping", key)
    else:
        run()
        ctx.record(key, inputs_hash, outputs)
    ctx.timings[stage] = ctx.timings.get(stage, 0.0) + time.perf_counter() - t


# --------------------------------------------------------------------------
# Stages

def _raw(cfg, *keys):
    return {k: cfg.raw.get(k) for k in keys}


def stage_sample(ctx: Context):
    for i in ctx.units:
        d = ctx.unit_dir(i)
        path = d / "data.csv"
        h = _hash("sample", _raw(ctx.cfg, "benchmark", "benchmark_params", "oracle", "x_box", "w_box"),
                  ctx.cfg.strategy, ctx.n_per_input, ctx.unit_seed(i))

        def run(i=i, path=path):
            ds = collect(ctx.network.subsystems[i], ctx.cfg.x_box, ctx.cfg.w_box, ctx.n_per_input,
                         ctx.cfg.strategy, ctx.unit_seed(i), subsystem_id=i)
            _save_dataset(ds, path)

        _staged(ctx, "sample", f"sample/{i}", h, [path, path.with_suffix(".meta.json")], run)


def stage_abstract(ctx: Context):
    for i in ctx.units:
        path = ctx.unit_dir(i) / "model.abs"
        h = _hash("abstract", _raw(ctx.cfg, "benchmark", "benchmark_params", "oracle", "x_box", "w_box",
                                   "state_cells", "dist_cells"), i)

        def run(i=i, path=path):
            sm = build_symbolic(ctx.network.subsystems[i], ctx.cfg.state_grid(), ctx.cfg.dist_grid())
            _atomic(path, sm.save)

        _staged(ctx, "abstract", f"abstract/{i}", h, [path], run)


def stage_asbf(ctx: Context):
    for i in ctx.units:
        d = ctx.unit_dir(i)
        path = d / "asbf.json"
        h = _hash("asbf", ctx.cfg.raw.get("sop", {}), ctx.basis.to_list(), d / "data.csv", d / "model.abs")

        def run(d=d, path=path):
            ds, sm = Dataset.load(d / "data.csv"), SymbolicModel.load(d / "model.abs")
            sol = solve_sop(ds, sm, ctx.basis, ctx.cfg.sop.gamma_grid, cfg=ctx.cfg.sop)
            sol.extra["residuals"] = residuals(sol, ds, sm)
            _atomic(path, sol.save)

        _staged(ctx, "asbf", f"asbf/{i}", h, [path], run)


def stage_lipschitz(ctx: Context):
    for i in ctx.units:
        d = ctx.unit_dir(i)
        path = d / "lipschitz.json"
        h = _hash("lipschitz", ctx.cfg.raw.get("lipschitz", {}), _raw(ctx.cfg, "x_box", "w_box"),
                  d / "asbf.json", d / "model.abs")

        def run(i=i, d=d, path=path):
            sol, sm = AsbfSolution.load(d / "asbf.json"), SymbolicModel.load(d / "model.abs")
            est = estimate_lipschitz(ctx.network.subsystems[i], sol, sm, ctx.cfg.lipschitz,
                                     ctx.cfg.x_box, ctx.cfg.w_box)
            write_json(path, est.to_dict())

        _staged(ctx, "lipschitz", f"lipschitz/{i}", h, [path], run)


def stage_sigma(ctx: Context):
    per = default_eval_points(ctx.cfg.state_cells + ctx.cfg.dist_cells, ctx.cfg.sigma_eval_factor)
    for i in ctx.units:
        d = ctx.unit_dir(i)
        path = d / "sigma.json"
        h = _hash("sigma", per, ctx.cfg.sigma_conservative, _raw(ctx.cfg, "x_box", "w_box"), d / "data.csv")

        def run(d=d, path=path):
            cov = compute_sigma(Dataset.load(d / "data.csv"), ctx.cfg.x_box, ctx.cfg.w_box, per,
                                conservative=ctx.cfg.sigma_conservative)
            write_json(path, cov.to_dict())

        _staged(ctx, "sigma", f"sigma/{i}", h, [path], run)


def stage_compose(ctx: Context) -> CompositionCertificate:
    path = ctx.out / "certificate.json"
    files = [ctx.unit_dir(i) / f for i in ctx.units for f in ("asbf.json", "lipschitz.json", "sigma.json")]
    h = _hash("compose", ctx.cfg.eta, ctx.multiplicity, *files)

    def run():
        sols, Ls, sigmas = [], [], []
        for i in ctx.units:
            d = ctx.unit_dir(i)
            sols.append(AsbfSolution.load(d / "asbf.json"))
            Ls.append(LipschitzEstimate.from_dict(json.loads((d / "lipschitz.json").read_text())).L)
            sigmas.append(json.loads((d / "sigma.json").read_text())["sigma"])
        cert = compose(sols, Ls, sigmas, ctx.cfg.eta, ctx.multiplicity)
        cert.digests = {str(f.relative_to(ctx.out)): file_digest(f) for f in files}
        _atomic(path, cert.save)

    _staged(ctx, "compose", "compose", h, [path], run)
    return CompositionCertificate.load(path)


def _contraction(ctx: Context, cert: CompositionCertificate) -> float:
    c = ctx.cfg.contraction
    return float(cert.epsilon) if c == "epsilon" else float(c)


def stage_synthesize(ctx: Context):
    for i in ctx.units:
        d = ctx.unit_dir(i)
        ctl_path, info_path = d / "controller.ctl", d / "synthesis.json"
        h = _hash("synthesize", _raw(ctx.cfg, "safe_box", "contraction", "game_margin"),
                  _need(ctx.out / "certificate.json"), d / "model.abs", d / "data.csv")

        def run(i=i, d=d, ctl_path=ctl_path, info_path=info_path):
            cert = CompositionCertificate.load(ctx.out / "certificate.json")
            sm = SymbolicModel.load(d / "model.abs")
            grid = sm.state_grid
            eps = _contraction(ctx, cert)
            safe = contract_safe_set(ctx.cfg.safe_box, grid, eps)
            if ctx.cfg.game_margin == "mismatch":
                drift = one_step_mismatch(ctx.network.subsystems[i], sm, Dataset.load(d / "data.csv"))
            else:
                drift = np.full(grid.dim, float(ctx.cfg.game_margin))
            cells = margin_in_cells(grid, drift)
            ctl = solve_safety_game(SafetyGame(sm, safe, cells))
            rc = RefinedController(ctl, grid, np.asarray(sm.input_set))
            _atomic(ctl_path, rc.save)
            write_json(info_path, {"contraction": eps, "safe_states": int(len(safe)),
                                   "drift": [float(v) for v in drift], "margin_cells": cells.tolist(),
                                   "winning_states": int(len(ctl.winning)), "n_states": sm.n_states,
                                   "empty": bool(ctl.is_empty)})

        _staged(ctx, "synthesize", f"synthesize/{i}", h, [ctl_path, info_path], run)


def initial_states(box: Box, M: int, starts: int, scenario: str, rng: np.random.Generator) -> np.ndarray:
    """``(starts, M, n)`` initial conditions.

    ``random`` draws uniformly, except that the first two starts put every
    agent on the lower and upper corner; ``boundary`` draws on the faces.
    """
    n = box.dim
    X = box.lower + rng.random((starts, M, n)) * box.widths
    if scenario == "random":
        if starts > 0:
            X[0] = box.lower
        if starts > 1:
            X[1] = box.upper
    else:
        axis = rng.integers(0, n, size=(starts, M))
        side = rng.integers(0, 2, size=(starts, M))
        face = np.where(side == 0, box.lower[axis], box.upper[axis])
        np.put_along_axis(X, axis[..., None], face[..., None], axis=2)
    return X


def stage_simulate(ctx: Context) -> dict:
    sim = ctx.cfg.simulation
    path = ctx.out / "simulation.json"
    ctl_files = [ctx.unit_dir(i) / "controller.ctl" for i in ctx.units]
    logged = [k for k in sim.log_subsystems if k < ctx.network.M]
    traj_files = [ctx.out / f"traj_{s}.csv" for s in sim.scenarios]
    h = _hash("simulate", ctx.cfg.raw.get("simulation", {}), _raw(ctx.cfg, "safe_box", "benchmark_params"),
              ctx.network.M, *ctl_files)

    def run():
        rcs = [RefinedController.load(p) for p in ctl_files]
        if len(rcs) == 1:
            rcs = rcs * ctx.network.M
        summary = {"horizon": sim.horizon, "starts": sim.starts, "M": ctx.network.M, "scenarios": {}}
        for scenario, tpath in zip(sim.scenarios, traj_files):
            rng = np.random.default_rng([sim.seed, STAGES.index("simulate"), sim.scenarios.index(scenario)])
            X0 = initial_states(ctx.cfg.safe_box, ctx.network.M, sim.starts, scenario, rng)
            runs = []
            for k, x0 in enumerate(X0):
                r = simulate_closed_loop(ctx.network, rcs, x0, sim.horizon, [ctx.cfg.safe_box])
                runs.append({"start": k, "safe": bool(r.safe), "first_violation": r.first_violation,
                             "reason": r.reason})
                if k == 0:
                    write_trajectory_csv(tpath, r, logged)
            if not runs:
                tpath.write_text("k,subsystem,u_index,safe_flag\n")
            summary["scenarios"][scenario] = {"safe": all(r["safe"] for r in runs),
                                              "unsafe_starts": [r for r in runs if not r["safe"]],
                                              "n_safe": sum(r["safe"] for r in runs)}
        summary["safe"] = all(v["safe"] for v in summary["scenarios"].values())
        write_json(path, summary)

    _staged(ctx, "simulate", "simulate", h, [path, *traj_files], run)
    return json.loads(path.read_text())


# --------------------------------------------------------------------------
# Full run

@dataclass
class RunReport:
    passed: bool
    safe: Optional[bool]
    certificate: Optional[CompositionCertificate]
    attempts: List[dict]
    timings: Dict[str, float]
    digests: Dict[str, str]
    out: Path

    @property
    def exit_code(self) -> int:
        return 0 if self.passed and self.safe else 1


def run_certification(ctx: Context) -> (CompositionCertificate, List[dict]):
    """Stages 1-6 with the escalation ladder: double the samples, then raise the basis degree."""
    attempts = []
    cert = None
    for attempt in range(ctx.cfg.max_retries + 1):
        ctx.save_plan()
        entry = {"attempt": attempt, "n_per_input": ctx.n_per_input, "basis_degree": ctx.basis.max_degree()}
        try:
            stage_sample(ctx)
            stage_abstract(ctx)
            stage_asbf(ctx)
            stage_lipschitz(ctx)
            stage_sigma(ctx)
            cert = stage_compose(ctx)
            entry.update(total=cert.total, passed=cert.passed)
        except InfeasibleError as exc:
            entry.update(total=None, passed=False, error=str(exc))
        attempts.append(entry)
        if entry["passed"]:
            break
        if attempt < ctx.cfg.max_retries:
            if attempt % 2 == 0:
                ctx.n_per_input *= 2
            else:
                ctx.basis = ctx.basis.raised(2)
            log.info("certificate failed (total %s); escalating to n_per_input=%d, degree=%d",
                     entry["total"], ctx.n_per_input, ctx.basis.max_degree())
    return cert, attempts


def run_pipeline(cfg: PipelineConfig, out=None, report: bool = True) -> RunReport:
    ctx = Context.create(cfg, out)
    cert, attempts = run_certification(ctx)
    passed = bool(cert is not None and cert.passed)
    safe = None
    if passed:
        stage_synthesize(ctx)
        safe = bool(stage_simulate(ctx)["safe"])
    write_json(ctx.out / "attempts.json", attempts)
    write_json(ctx.out / "timings.json", {k: round(v, 3) for k, v in ctx.timings.items()})
    digests = {str(p.relative_to(ctx.out)): file_digest(p) for p in sorted(ctx.out.rglob("*"))
               if p.is_file() and not p.name.startswith(".") and p.parent.name != "plots"
               and p.name not in ("timings.json", "report.md", "report.json")}
    rr = RunReport(passed, safe, cert, attempts, dict(ctx.timings), digests, ctx.out)
    if report:
        from .report import render_report
        render_report(ctx.out)
    return rr


# --------------------------------------------------------------------------
# Sample-complexity sweep

@dataclass
class SweepResult:
    rows: List[dict]
    slope: float
    intercept: float
    r2: float


def complexity_sweep(cfg: PipelineConfig, M_values: Sequence[int], out=None) -> SweepResult:
    """Samples consumed compositionally against the analytic monolithic count.

    The compositional total is measured by actually drawing each distinct
    subsystem's data set once; the monolithic count ``d ** (n * M)`` is only
    ever evaluated as a base-10 logarithm.
    """
    M_values = [int(m) for m in M_values]
    if not M_values or any(b <= a for a, b in zip(M_values, M_values[1:])) or M_values[0] < 1:
        raise ConfigurationError("M_values must be a non-empty increasing list of positive counts")
    n, p = cfg.x_box.dim, cfg.w_box.dim
    d = per_axis_density(cfg.n_per_input, n + p)
    cache: Dict[int, int] = {}
    rows = []
    for M in M_values:
        net = cfg.with_overrides(M=M).network()
        distinct = [0] if cfg.homogeneous and net.homogeneous else list(range(M))
        total = 0
        for i in distinct:
            key = i if distinct == [0] else (M, i)
            if key not in cache:
                ds = collect(net.subsystems[i], cfg.x_box, cfg.w_box, cfg.n_per_input, cfg.strategy, cfg.seed, i)
                cache[key] = len(ds)
            total += cache[key] * (M if distinct == [0] else 1)
        rows.append({"M": M, "compositional_samples": total, "per_subsystem_samples": total // M,
                     "per_axis_density": d, "monolithic_exponent": n * M,
                     "monolithic_log10_samples": n * M * math.log10(d)})
    x = np.array([r["M"] for r in rows], dtype=float)
    y = np.array([r["compositional_samples"] for r in rows], dtype=float)
    if len(x) > 1:
        slope, intercept = np.polyfit(x, y, 1)
        ss_res = float(((y - (slope * x + intercept)) ** 2).sum())
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    else:
        slope, intercept, r2 = y[0] / x[0], 0.0, 1.0
    res = SweepResult(rows, float(slope), float(intercept), float(r2))
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        header = list(rows[0])
        lines = [",".join(header)] + [",".join(repr(r[k]) for k in header) for r in rows]
        _atomic(out / "sweep.csv", lambda tmp: tmp.write_text("\n".join(lines) + "\n"))
        from .report import plot_sweep
        plot_sweep(res, out / "sweep.svg")
    return res
