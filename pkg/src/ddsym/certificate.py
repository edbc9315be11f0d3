"""Sub-bisimulation certificates learned from data.

A certificate is ``V(x, x_hat) = sum_j q_j p_j(x, x_hat)`` over user-chosen
monomials.  For a fixed contraction rate ``gamma`` the scenario program is an
LP in ``[q; alpha; rho; psi; mu; varpi]``; it is solved for each gamma in a
finite grid with a cutting-plane loop over abstract tuples, then refined
lexicographically (psi down, then alpha up).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .abstraction import SINK, SymbolicModel
from .errors import AssemblyError, ConfigurationError, InfeasibleError, InputShapeError
from .lp import LinearProgram, LPResult, LPSolver, highs_solver
from .sampling import Dataset

log = logging.getLogger(__name__)

FAMILIES = ("SOP0", "SOP3", "SOP4", "SOP5")
FEASIBILITY_TOL = 1e-8


# --------------------------------------------------------------------------
# Basis

@dataclass(frozen=True)
class BasisTerm:
    """Monomial ``prod (x-x_hat)^e`` (``diff``) or ``prod x^a x_hat^b`` (``joint``)."""

    kind: str
    x_exp: tuple
    xhat_exp: tuple = ()

    def __post_init__(self):
        if self.kind not in ("diff", "joint"):
            raise ConfigurationError(f"unknown basis term kind {self.kind!r}")
        if any(int(e) != e or e < 0 for e in self.x_exp + self.xhat_exp):
            raise ConfigurationError("basis exponents must be non-negative integers")
        if self.kind == "joint" and len(self.xhat_exp) != len(self.x_exp):
            raise ConfigurationError("joint terms need exponent vectors for x and x_hat of equal length")

    @property
    def degree(self) -> int:
        return int(sum(self.x_exp) + sum(self.xhat_exp))

    def to_dict(self) -> dict:
        if self.kind == "diff":
            return {"diff": list(self.x_exp)}
        return {"x": list(self.x_exp), "xhat": list(self.xhat_exp)}

    @classmethod
    def from_dict(cls, d) -> "BasisTerm":
        if "diff" in d:
            return cls("diff", tuple(int(e) for e in d["diff"]))
        return cls("joint", tuple(int(e) for e in d["x"]), tuple(int(e) for e in d["xhat"]))


@dataclass(frozen=True)
class BasisSpec:
    terms: tuple

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ConfigurationError("a basis needs at least one term")
        dims = {len(t.x_exp) for t in terms}
        if len(dims) != 1:
            raise ConfigurationError("all basis terms must refer to the same state dimension")
        object.__setattr__(self, "terms", terms)

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def state_dim(self) -> int:
        return len(self.terms[0].x_exp)

    def features(self, x, x_hat) -> np.ndarray:
        """Broadcasting evaluation of every monomial, shape ``(..., r)``."""
        x = np.asarray(x, dtype=float)
        x_hat = np.asarray(x_hat, dtype=float)
        if x.shape[-1] != self.state_dim or x_hat.shape[-1] != self.state_dim:
            raise InputShapeError(f"basis expects vectors of dimension {self.state_dim}")
        e = x - x_hat
        cols = []
        for t in self.terms:
            if t.kind == "diff":
                v = np.prod(e ** np.asarray(t.x_exp, dtype=float), axis=-1)
            else:
                v = np.prod(x ** np.asarray(t.x_exp, dtype=float), axis=-1) * \
                    np.prod(x_hat ** np.asarray(t.xhat_exp, dtype=float), axis=-1)
            cols.append(np.broadcast_to(v, np.broadcast_shapes(x.shape, x_hat.shape)[:-1]))
        return np.stack(cols, axis=-1)

    def max_degree(self) -> int:
        return max(t.degree for t in self.terms)

    def raised(self, step: int = 2) -> "BasisSpec":
        """Add one per-axis difference monomial of degree ``max_degree + step``."""
        deg = self.max_degree() + step
        new = []
        for k in range(self.state_dim):
            exp = [0] * self.state_dim
            exp[k] = deg
            new.append(BasisTerm("diff", tuple(exp)))
        return BasisSpec(tuple(new) + self.terms)

    def to_list(self) -> list:
        return [t.to_dict() for t in self.terms]

    @classmethod
    def from_list(cls, items) -> "BasisSpec":
        return cls(tuple(BasisTerm.from_dict(d) for d in items))


def even_difference_basis(state_dim: int, max_degree: int = 6) -> BasisSpec:
    """Per-axis even powers of ``x - x_hat`` (highest first) plus a constant."""
    terms = []
    for k in range(state_dim):
        for deg in range(max_degree, 0, -2):
            exp = [0] * state_dim
            exp[k] = deg
            terms.append(BasisTerm("diff", tuple(exp)))
    terms.append(BasisTerm("diff", (0,) * state_dim))
    return BasisSpec(tuple(terms))


# --------------------------------------------------------------------------
# Solution record

@dataclass
class AsbfSolution:
    q: np.ndarray
    alpha: float
    gamma: float
    rho: float
    psi: float
    mu: float
    varpi: float
    basis: BasisSpec
    feasibility_residual: float = 0.0
    dataset_digest: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        if self.q.size != self.basis.size:
            raise InputShapeError("coefficient vector does not match the basis")

    def value(self, x, x_hat) -> np.ndarray:
        return self.basis.features(x, x_hat) @ self.q

    @property
    def objective(self) -> float:
        return self.mu + self.varpi

    def to_dict(self) -> dict:
        d = {"basis": self.basis.to_list(), "q": self.q.tolist(), "alpha": self.alpha,
             "gamma": self.gamma, "rho": self.rho, "psi": self.psi, "mu": self.mu,
             "varpi": self.varpi, "feasibility_residual": self.feasibility_residual,
             "dataset_digest": self.dataset_digest}
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d) -> "AsbfSolution":
        core = {"basis", "q", "alpha", "gamma", "rho", "psi", "mu", "varpi",
                "feasibility_residual", "dataset_digest"}
        return cls(np.asarray(d["q"]), d["alpha"], d["gamma"], d["rho"], d["psi"], d["mu"],
                   d["varpi"], BasisSpec.from_list(d["basis"]), d.get("feasibility_residual", 0.0),
                   d.get("dataset_digest", ""), {k: v for k, v in d.items() if k not in core})

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "AsbfSolution":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def evaluate_asbf(sol: AsbfSolution, x, x_hat) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    x_hat = np.asarray(x_hat, dtype=float).reshape(-1)
    if x.size != sol.basis.state_dim or x_hat.size != sol.basis.state_dim:
        raise InputShapeError(f"expected vectors of dimension {sol.basis.state_dim}")
    return float(sol.value(x, x_hat))


# --------------------------------------------------------------------------
# Scenario data

@dataclass
class SopConfig:
    gamma_grid: Sequence[float] = (0.9, 0.95, 0.975, 0.985, 0.99, 0.995)
    alpha_bounds: tuple = (1e-2, 1e3)
    psi_bounds: tuple = (1e-6, 1.0)
    rho_bounds: tuple = (0.0, 10.0)
    coef_bound: object = 1.0
    varpi_min: float = 1e-6
    initial_tuples: int = 32
    cuts_per_round: int = 256
    tol: float = 1e-9
    max_rounds: int = 200
    phase_slack: float = 1e-9
    seed: int = 0

    def coef_bounds(self, r: int) -> List[tuple]:
        cb = np.broadcast_to(np.asarray(self.coef_bound, dtype=float), (r,))
        return [(-float(b), float(b)) for b in cb]

    @classmethod
    def from_dict(cls, d) -> "SopConfig":
        d = dict(d)
        for k in ("alpha_bounds", "psi_bounds", "rho_bounds", "gamma_grid"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


class _InputBlock:
    """Everything the four row families need for one input index."""

    def __init__(self, u, z_global, X, W, F, Xr, Wr, table_u, basis):
        self.u = u
        self.z = z_global
        self.Phi0 = basis.features(X[:, None, :], Xr[None, :, :])      # (Z, ns, r)
        self.PhiP = basis.features(F[:, None, :], Xr[None, :, :])      # (Z, ns, r)
        self.E2 = ((X[:, None, :] - Xr[None, :, :]) ** 2).sum(-1)      # (Z, ns)
        self.D = np.sqrt(((W[:, None, :] - Wr[None, :, :]) ** 2).sum(-1))  # (Z, nw)
        self.valid = table_u != SINK                                    # (ns, nw)
        self.target = np.where(self.valid, table_u, 0).astype(np.intp)

    @property
    def n_samples(self):
        return self.Phi0.shape[0]


class ScenarioSet:
    """Samples paired with abstract tuples, organised per input."""

    def __init__(self, dataset: Dataset, sm: SymbolicModel, basis: BasisSpec):
        if dataset.n_inputs > sm.n_inputs or (len(dataset) and dataset.u_index.max() >= sm.n_inputs):
            raise AssemblyError("dataset uses inputs that the symbolic model does not have")
        if dataset.state_dim != sm.state_grid.dim or dataset.dist_dim != sm.dist_grid.dim:
            raise AssemblyError("dataset and symbolic model dimensions differ")
        if basis.state_dim != dataset.state_dim:
            raise AssemblyError("basis dimension differs from the state dimension")
        self.basis = basis
        self.sm = sm
        self.r = basis.size
        Xr, Wr = sm.state_grid.representatives(), sm.dist_grid.representatives()
        self.blocks: List[_InputBlock] = []
        for u in range(sm.n_inputs):
            z = dataset.for_input(u)
            if z.size == 0:
                continue
            self.blocks.append(_InputBlock(u, z, dataset.X[z], dataset.W[z], dataset.X_next[z],
                                           Xr, Wr, sm.transitions[:, u, :], basis))
        if not self.blocks:
            raise AssemblyError("dataset is empty")
        self.D_max = max(float(b.D.max()) for b in self.blocks)

    # variable layout: q (r), alpha, rho, psi, mu, varpi
    @property
    def n_vars(self):
        return self.r + 5

    def idx(self, name):
        return self.r + ("alpha", "rho", "psi", "mu", "varpi").index(name)

    # -- row construction --------------------------------------------------

    def rows(self, fam: str, b: int, z, s, d, gamma: float):
        """Coefficient rows (dense) for family ``fam`` of block ``b``."""
        blk = self.blocks[b]
        z, s, d = (np.asarray(a, dtype=np.intp) for a in (z, s, d))
        A = np.zeros((z.size, self.n_vars))
        r = self.r
        if fam == "SOP0":
            A[:, :r] = -blk.Phi0[z, s]
            A[:, self.idx("mu")] = -1
        elif fam == "SOP3":
            A[:, :r] = -blk.Phi0[z, s]
            A[:, self.idx("alpha")] = blk.E2[z, s]
            A[:, self.idx("mu")] = -1
        elif fam == "SOP4":
            A[:, :r] = blk.PhiP[z, blk.target[s, d]] - gamma * blk.Phi0[z, s]
            A[:, self.idx("rho")] = -blk.D[z, d]
            A[:, self.idx("psi")] = -1
            A[:, self.idx("mu")] = -1
        elif fam == "SOP5":
            A[:, self.idx("rho")] = blk.D[z, d]
            A[:, self.idx("varpi")] = -1
        else:
            raise ValueError(fam)
        return A

    # -- full evaluation ---------------------------------------------------

    def family_values(self, theta, gamma: float, b: int) -> Dict[str, np.ndarray]:
        """Row values ``A @ theta`` (``<= 0`` is feasible) for all rows of block ``b``.

        ``SOP0``/``SOP3`` have shape ``(Z, ns)``, ``SOP4`` ``(Z, ns, nw)``
        (``-inf`` on sink tuples), ``SOP5`` ``(Z, nw)``.
        """
        blk = self.blocks[b]
        q = theta[:self.r]
        alpha, rho, psi, mu, varpi = (theta[self.idx(k)] for k in ("alpha", "rho", "psi", "mu", "varpi"))
        P0 = blk.Phi0 @ q
        PP = blk.PhiP @ q
        v4 = PP[:, blk.target] - gamma * P0[:, :, None] - rho * blk.D[:, None, :] - psi - mu
        v4 = np.where(blk.valid[None], v4, -np.inf)
        return {"SOP0": -P0 - mu, "SOP3": alpha * blk.E2 - P0 - mu, "SOP4": v4,
                "SOP5": rho * blk.D - varpi}

    def max_values(self, theta, gamma: float) -> Dict[str, float]:
        out = {f: -np.inf for f in FAMILIES}
        for b in range(len(self.blocks)):
            for f, v in self.family_values(theta, gamma, b).items():
                if v.size:
                    out[f] = max(out[f], float(v.max()))
        return out


# --------------------------------------------------------------------------
# Literal assembly (all four families for an explicit tuple selection)

def assemble_sop(dataset: Dataset, sm: SymbolicModel, basis: BasisSpec, gamma: float,
                 abstract_tuples="all", cfg: Optional[SopConfig] = None) -> LinearProgram:
    """Scenario LP for fixed ``gamma`` over the selected ``(s, u, d)`` tuples.

    Four rows are emitted per (sample, selected tuple with the sample's input).
    Tuples whose abstract image is the sink carry no certificate obligation
    and are dropped from the selection.
    """
    if not 0 < gamma < 1:
        raise AssemblyError("gamma must lie in (0, 1)")
    cfg = cfg or SopConfig()
    scen = ScenarioSet(dataset, sm, basis)
    if isinstance(abstract_tuples, str) and abstract_tuples == "all":
        S, U, D = np.meshgrid(np.arange(sm.n_states), np.arange(sm.n_inputs), np.arange(sm.n_dists),
                              indexing="ij")
        sel = np.column_stack([S.ravel(), U.ravel(), D.ravel()])
    else:
        sel = np.asarray(abstract_tuples, dtype=np.intp).reshape(-1, 3)
    if sel.size:
        sel = sel[sm.transitions[sel[:, 0], sel[:, 1], sel[:, 2]] != SINK]
    if sel.size == 0:
        raise AssemblyError("empty abstract-tuple selection")
    blocks, labels = [], []
    for b, blk in enumerate(scen.blocks):
        mine = sel[sel[:, 1] == blk.u]
        if mine.size == 0:
            continue
        zz = np.repeat(np.arange(blk.n_samples), len(mine))
        ss = np.tile(mine[:, 0], blk.n_samples)
        dd = np.tile(mine[:, 2], blk.n_samples)
        for fam in FAMILIES:
            blocks.append(scen.rows(fam, b, zz, ss, dd, gamma))
            labels += [(fam, int(blk.z[z]), int(s), blk.u, int(d)) for z, s, d in zip(zz, ss, dd)]
    if not blocks:
        raise AssemblyError("no sample shares an input with the selected tuples")
    A = np.vstack(blocks)
    return LinearProgram(_objective(scen, "mu+varpi"), A, np.zeros(len(A)), _bounds(scen, cfg),
                         _names(scen), labels)


def _names(scen):
    return [f"q{j + 1}" for j in range(scen.r)] + ["alpha", "rho", "psi", "mu", "varpi"]


def _objective(scen, phase):
    c = np.zeros(scen.n_vars)
    if phase == "mu+varpi":
        c[scen.idx("mu")] = c[scen.idx("varpi")] = 1
    elif phase == "psi":
        c[scen.idx("psi")] = 1
    elif phase == "-alpha":
        c[scen.idx("alpha")] = -1
    return c


def _bounds(scen, cfg: SopConfig):
    return cfg.coef_bounds(scen.r) + [tuple(cfg.alpha_bounds), tuple(cfg.rho_bounds),
                                      tuple(cfg.psi_bounds), (None, None), (cfg.varpi_min, None)]


# --------------------------------------------------------------------------
# Cutting-plane solve

class _RowPool:
    """Active scenario rows, keyed by ``(family, block, z, s, d)``."""

    def __init__(self):
        self.keys = set()
        self.items = {f: [] for f in FAMILIES}

    def add(self, fam, b, z, s, d) -> int:
        added = 0
        for key in zip(np.broadcast_to(b, np.shape(z)), z, s, d):
            key = (fam,) + tuple(int(k) for k in key)
            if key not in self.keys:
                self.keys.add(key)
                self.items[fam].append(key[1:])
                added += 1
        return added

    def matrix(self, scen: ScenarioSet, gamma: float):
        mats = []
        for fam, items in self.items.items():
            if not items:
                continue
            arr = np.asarray(items, dtype=np.intp)
            for b in np.unique(arr[:, 0]):
                sub = arr[arr[:, 0] == b]
                mats.append(scen.rows(fam, int(b), sub[:, 1], sub[:, 2], sub[:, 3], gamma))
        return np.vstack(mats)


def _seed_rows(scen: ScenarioSet, pool: _RowPool, k: int, rng: np.random.Generator):
    for b, blk in enumerate(scen.blocks):
        valid = np.argwhere(blk.valid)
        if valid.size == 0:
            continue
        k_eff = min(k, len(valid))
        for z in range(blk.n_samples):
            pick = valid[rng.choice(len(valid), size=k_eff, replace=False)]
            zz = np.full(k_eff, z)
            pool.add("SOP0", b, zz, pick[:, 0], np.zeros(k_eff, dtype=np.intp))
            pool.add("SOP3", b, zz, pick[:, 0], np.zeros(k_eff, dtype=np.intp))
            pool.add("SOP4", b, zz, pick[:, 0], pick[:, 1])
            pool.add("SOP5", b, zz, np.zeros(k_eff, dtype=np.intp), pick[:, 1])


def _add_cuts(scen: ScenarioSet, pool: _RowPool, theta, gamma, tol, per_round) -> tuple:
    """Add the most violated rows of every family; return (count added, max violation)."""
    cands = {f: [] for f in FAMILIES}
    worst = -np.inf
    for b in range(len(scen.blocks)):
        for fam, v in scen.family_values(theta, gamma, b).items():
            flat = v.ravel()
            worst = max(worst, float(flat.max(initial=-np.inf)))
            hit = np.flatnonzero(flat > tol)
            if hit.size == 0:
                continue
            if hit.size > per_round:
                hit = hit[np.argpartition(flat[hit], -per_round)[-per_round:]]
            cands[fam].append((flat[hit], b, np.unravel_index(hit, v.shape)))
    added = 0
    for fam, lst in cands.items():
        if not lst:
            continue
        vals = np.concatenate([c[0] for c in lst])
        order = np.argsort(-vals, kind="stable")[:per_round]
        offsets = np.cumsum([0] + [len(c[0]) for c in lst])
        for pos in order:
            j = int(np.searchsorted(offsets, pos, side="right") - 1)
            _, b, idx = lst[j]
            k = pos - offsets[j]
            if fam == "SOP4":
                z, s, d = idx[0][k], idx[1][k], idx[2][k]
            elif fam == "SOP5":
                z, s, d = idx[0][k], 0, idx[1][k]
            else:
                z, s, d = idx[0][k], idx[1][k], 0
            added += pool.add(fam, b, [z], [s], [d])
    return added, worst


@dataclass
class _PhaseResult:
    theta: np.ndarray
    value: float
    rounds: int


def _solve_phase(scen, pool, gamma, cfg, lp_solver, phase, extra_rows) -> Optional[_PhaseResult]:
    c = _objective(scen, phase)
    bounds = _bounds(scen, cfg)
    for rounds in range(1, cfg.max_rounds + 1):
        A = pool.matrix(scen, gamma)
        b = np.zeros(len(A))
        if extra_rows:
            A = np.vstack([A] + [r[0][None] for r in extra_rows])
            b = np.concatenate([b, [r[1] for r in extra_rows]])
        res: LPResult = lp_solver(LinearProgram(c, sp.csr_matrix(A), b, bounds))
        if res.x is None:
            log.debug("gamma=%g phase=%s: LP %s", gamma, phase, res.status)
            return None
        theta = _polish(scen, res.x, gamma, cfg)
        added, worst = _add_cuts(scen, pool, res.x, gamma, cfg.tol, cfg.cuts_per_round)
        if added == 0:
            return _PhaseResult(theta, float(c @ theta), rounds)
    log.warning("cutting-plane loop hit max_rounds=%d at gamma=%g", cfg.max_rounds, gamma)
    return None


def _polish(scen: ScenarioSet, theta, gamma, cfg) -> np.ndarray:
    """Clip to bounds and set mu, varpi to the exact maxima over every row."""
    theta = np.array(theta, dtype=float)
    for k, (lo, hi) in enumerate(_bounds(scen, cfg)):
        if lo is not None:
            theta[k] = max(theta[k], lo)
        if hi is not None:
            theta[k] = min(theta[k], hi)
    theta[scen.idx("mu")] = 0.0
    theta[scen.idx("varpi")] = 0.0
    m = scen.max_values(theta, gamma)
    theta[scen.idx("mu")] = max(m["SOP0"], m["SOP3"], m["SOP4"])
    theta[scen.idx("varpi")] = max(cfg.varpi_min, m["SOP5"])
    return theta


def _to_solution(scen, theta, gamma, dataset) -> AsbfSolution:
    g = lambda k: float(theta[scen.idx(k)])  # noqa: E731
    sol = AsbfSolution(theta[:scen.r].copy(), g("alpha"), float(gamma), g("rho"), g("psi"), g("mu"),
                       g("varpi"), scen.basis, dataset_digest=dataset.digest())
    return sol


def solve_for_gamma(scen: ScenarioSet, dataset: Dataset, gamma: float, cfg: SopConfig,
                    lp_solver: LPSolver = highs_solver, pool: Optional[_RowPool] = None,
                    phases: int = 3) -> Optional[AsbfSolution]:
    if pool is None:
        pool = _RowPool()
        _seed_rows(scen, pool, cfg.initial_tuples, np.random.default_rng(cfg.seed))
    p1 = _solve_phase(scen, pool, gamma, cfg, lp_solver, "mu+varpi", [])
    if p1 is None:
        return None
    best, info = p1.theta, {"rounds": [p1.rounds]}
    slack1 = cfg.phase_slack * max(1.0, abs(p1.value))
    cap1 = (_objective(scen, "mu+varpi"), p1.value + slack1)
    if phases >= 2:
        p2 = _solve_phase(scen, pool, gamma, cfg, lp_solver, "psi", [cap1])
        if p2 is not None and p2.theta[scen.idx("mu")] + p2.theta[scen.idx("varpi")] <= cap1[1] + cfg.tol:
            best = p2.theta
            info["rounds"].append(p2.rounds)
            if phases >= 3:
                cap2 = (_objective(scen, "psi"), p2.value + cfg.phase_slack * max(1.0, abs(p2.value)))
                p3 = _solve_phase(scen, pool, gamma, cfg, lp_solver, "-alpha", [cap1, cap2])
                if (p3 is not None and p3.theta[scen.idx("mu")] + p3.theta[scen.idx("varpi")]
                        <= cap1[1] + cfg.tol and p3.theta[scen.idx("psi")] <= cap2[1] + cfg.tol):
                    best = p3.theta
                    info["rounds"].append(p3.rounds)
    sol = _to_solution(scen, best, gamma, dataset)
    sol.feasibility_residual = max(0.0, max(_max_residuals(scen, sol).values()))
    sol.extra["solver"] = {"phase1_objective": p1.value, "active_rows": len(pool.keys), **info}
    return sol


def solve_sop(dataset: Dataset, sm: SymbolicModel, basis: BasisSpec, gamma_grid=None,
              lp_solver: LPSolver = highs_solver, cfg: Optional[SopConfig] = None) -> AsbfSolution:
    """Grid search over gamma; keeps the smallest ``mu + varpi`` (first wins ties)."""
    cfg = cfg or SopConfig()
    grid = tuple(cfg.gamma_grid if gamma_grid is None else gamma_grid)
    if not grid or any(not 0 < g < 1 for g in grid):
        raise ConfigurationError("gamma grid must be a non-empty subset of (0, 1)")
    dataset.check_coverage()
    scen = ScenarioSet(dataset, sm, basis)
    pool = _RowPool()
    _seed_rows(scen, pool, cfg.initial_tuples, np.random.default_rng(cfg.seed))
    best, per_gamma = None, {}
    for g in grid:
        p1 = _solve_phase(scen, pool, g, cfg, lp_solver, "mu+varpi", [])
        per_gamma[g] = None if p1 is None else p1.value
        if p1 is not None and (best is None or p1.value < best[1] - 1e-12):
            best = (g, p1.value)
    if best is None:
        theta = np.zeros(scen.n_vars)
        m = scen.max_values(theta, grid[0])
        fam = max(m, key=m.get)
        raise InfeasibleError(f"scenario program infeasible for every gamma in {grid}", (fam, m[fam]))
    sol = solve_for_gamma(scen, dataset, best[0], cfg, lp_solver, pool)
    sol.extra["solver"]["gamma_objectives"] = {str(k): v for k, v in per_gamma.items()}
    return sol


# --------------------------------------------------------------------------
# A-posteriori audit

def _max_residuals(scen: ScenarioSet, sol: AsbfSolution) -> Dict[str, float]:
    theta = np.concatenate([sol.q, [sol.alpha, sol.rho, sol.psi, sol.mu, sol.varpi]])
    return scen.max_values(theta, sol.gamma)


def residuals(sol: AsbfSolution, dataset: Dataset, sm: SymbolicModel) -> Dict[str, float]:
    """Largest ``lhs - rhs`` of each row family over every sample and tuple."""
    return _max_residuals(ScenarioSet(dataset, sm, sol.basis), sol)
