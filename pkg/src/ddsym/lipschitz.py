"""Extreme-value estimation of the certificate Lipschitz constants.

Slopes of the target between nearby random pairs are grouped into batches;
the batch maxima are fitted with a reverse Weibull law whose location
(upper support end) is the estimate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from .abstraction import SINK, SymbolicModel
from .blackbox import SubsystemOracle
from .certificate import AsbfSolution
from .errors import ConfigurationError
from .gridding import Box

FALLBACK_MARGIN = 0.05
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LipschitzConfig:
    pair_distance_cap: float = 1e-3
    pairs_per_batch: int = 200
    batches: int = 50
    abstract_tuple_subsample: int = 16
    seed: int = 0

    def __post_init__(self):
        if not self.pair_distance_cap > 0:
            raise ConfigurationError("pair_distance_cap must be positive")
        if self.pairs_per_batch < 1 or self.batches < 1:
            raise ConfigurationError("pairs_per_batch and batches must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class WeibullFit:
    location: float
    scale: float
    shape: float
    flag: str = "ok"

    def as_tuple(self) -> Tuple[float, float, float]:
        return self.location, self.scale, self.shape


@dataclass
class TargetEstimate:
    value: float
    fit: WeibullFit
    batch_maxima: np.ndarray = field(repr=False)
    per_tuple: np.ndarray = field(repr=False)
    empirical_max: float = 0.0

    def diagnostics(self) -> dict:
        pt = self.per_tuple
        return {"tuples": int(pt.size), "min": float(pt.min()), "median": float(np.median(pt)),
                "max": float(pt.max()), "empirical_max_slope": self.empirical_max,
                "flag": self.fit.flag}


@dataclass
class LipschitzEstimate:
    L1: float
    L2: float
    weibull_params: Dict[str, tuple]
    batch_maxima: Dict[str, list]
    diagnostics: Dict[str, dict] = field(default_factory=dict)
    config: Optional[LipschitzConfig] = None

    @property
    def L(self) -> float:
        return max(self.L1, self.L2)

    def to_dict(self) -> dict:
        return {"L1": self.L1, "L2": self.L2, "L": self.L,
                "weibull": {k: [_finite_or_none(a) for a in v] for k, v in self.weibull_params.items()},
                "batch_maxima": self.batch_maxima, "diagnostics": self.diagnostics,
                "config": self.config.to_dict() if self.config else None}

    @classmethod
    def from_dict(cls, d) -> "LipschitzEstimate":
        cfg = LipschitzConfig(**d["config"]) if d.get("config") else None
        return cls(d["L1"], d["L2"], {k: tuple(v) for k, v in d["weibull"].items()},
                   d.get("batch_maxima", {}), d.get("diagnostics", {}), cfg)


def _finite_or_none(v):
    # JSON has no inf/nan; a degenerate fit has an infinite shape
    return float(v) if np.isfinite(v) else None


# --------------------------------------------------------------------------
# Reverse Weibull fit

def _profile_loglik(y: np.ndarray) -> Tuple[float, float, float]:
    """Weibull MLE on ``y > 0`` with the scale profiled out; returns (ll, scale, shape)."""
    n = y.size
    top = y.max()
    t = y / top
    lt = np.log(t)
    mean_lt = lt.mean()

    def score(k):
        tk = t ** k
        return 1.0 / k + mean_lt - (tk * lt).sum() / tk.sum()

    lo, hi = 1e-3, 1.0
    while score(hi) > 0 and hi < 1e4:
        hi *= 4
    if score(hi) > 0:
        k = hi
    else:
        k = brentq(score, lo, hi, xtol=1e-12, rtol=1e-10)
    lam_t = np.mean(t ** k) ** (1.0 / k)
    lam = lam_t * top
    ll = n * np.log(k) - n * k * np.log(lam) + (k - 1) * np.log(y).sum() - n
    return float(ll), float(lam), float(k)


def fit_reverse_weibull(maxima) -> WeibullFit:
    """Maximum-likelihood reverse Weibull fit with location >= max(maxima).

    The location is found by a coarse log-spaced scan followed by
    golden-section refinement of the profile likelihood.
    """
    m = np.asarray(maxima, dtype=float).reshape(-1)
    if m.size < 5:
        raise ValueError("need at least 5 maxima to fit")
    top, spread = float(m.max()), float(m.max() - m.min())
    if spread <= 1e-9 * max(1.0, abs(top)):
        return WeibullFit(top, 0.0, np.inf, "degenerate")

    def nll(log_s):
        c = top + spread * np.exp(log_s)
        return -_profile_loglik(c - m)[0]

    grid = np.linspace(np.log(1e-8), np.log(1e2), 61)
    vals = np.array([nll(g) for g in grid])
    j = int(np.argmin(vals))
    if j == len(grid) - 1:
        return WeibullFit(top * (1 + FALLBACK_MARGIN) if top > 0 else top + FALLBACK_MARGIN * spread,
                          np.nan, np.nan, "non-convergent")
    a, b = grid[max(j - 1, 0)], grid[min(j + 1, len(grid) - 1)]
    x1, x2 = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    f1, f2 = nll(x1), nll(x2)
    for _ in range(60):
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = nll(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = nll(x2)
    best = min((f1, x1), (f2, x2), (vals[j], grid[j]))[1]
    c = top + spread * np.exp(best)
    _, lam, k = _profile_loglik(c - m)
    return WeibullFit(float(c), lam, k, "ok")


# --------------------------------------------------------------------------
# Pair sampling

def sample_pairs(box: Box, n: int, radius: float, rng: np.random.Generator):
    """``n`` pairs ``(p, p')`` in ``box`` with ``0 < |p - p'| <= radius``."""
    d = box.dim
    P = box.lower + rng.random((n, d)) * box.widths
    Q = np.empty_like(P)
    todo = np.arange(n)
    for _ in range(10000):
        k = todo.size
        dirs = rng.standard_normal((k, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        r = radius * rng.random(k) ** (1.0 / d)
        cand = P[todo] + dirs * r[:, None]
        ok = box.contains(cand) & (np.linalg.norm(cand - P[todo], axis=1) > 0)
        Q[todo[ok]] = cand[ok]
        todo = todo[~ok]
        if todo.size == 0:
            return P, Q
    raise RuntimeError("could not place pair partners inside the domain")


def batch_maxima(target: Callable[[np.ndarray], np.ndarray], box: Box, cfg: LipschitzConfig,
                 stream: tuple = ()) -> np.ndarray:
    """Batch maxima of slopes of a (vector of) target functions.

    ``target`` maps points ``(K, d)`` to values ``(T, K)`` (or ``(K,)``);
    the result has shape ``(T, batches)``.
    """
    out = []
    for theta in range(cfg.batches):
        rng = np.random.default_rng([cfg.seed, *stream, theta])
        P, Q = sample_pairs(box, cfg.pairs_per_batch, cfg.pair_distance_cap, rng)
        gp = np.atleast_2d(target(P))
        gq = np.atleast_2d(target(Q))
        dist = np.linalg.norm(P - Q, axis=1)
        out.append((np.abs(gp - gq) / dist).max(axis=1))
    return np.stack(out, axis=1)


def estimate_target(target, box: Box, cfg: LipschitzConfig, stream: tuple = ()) -> TargetEstimate:
    maxima = batch_maxima(target, box, cfg, stream)
    return _reduce(maxima)


def _reduce(maxima: np.ndarray) -> TargetEstimate:
    fits = [fit_reverse_weibull(row) for row in maxima]
    locs = np.array([f.location for f in fits])
    j = int(np.argmax(locs))
    return TargetEstimate(float(locs[j]), fits[j], maxima[j], locs, float(maxima.max()))


# --------------------------------------------------------------------------
# Certificate targets

def _select_tuples(sm: SymbolicModel, u: int, k: int, rng) -> np.ndarray:
    valid = np.argwhere(sm.transitions[:, u, :] != SINK)
    if len(valid) <= k:
        return valid
    return valid[np.sort(rng.choice(len(valid), size=k, replace=False))]


def estimate_L2(oracle: SubsystemOracle, sol: AsbfSolution, sm: SymbolicModel, cfg: LipschitzConfig,
                x_box: Optional[Box] = None, w_box: Optional[Box] = None) -> TargetEstimate:
    """Lipschitz constant in ``(x, w)`` of ``V(f(x,u,w), f_hat) - gamma V(x, x_hat)``."""
    x_box = x_box or sm.state_grid.box
    w_box = w_box or sm.dist_grid.box
    n = oracle.state_dim
    joint = Box(np.concatenate([x_box.lower, w_box.lower]), np.concatenate([x_box.upper, w_box.upper]))
    Xr, gamma = sm.state_grid.representatives(), sol.gamma
    all_maxima = []
    for u in range(sm.n_inputs):
        tup = _select_tuples(sm, u, cfg.abstract_tuple_subsample, np.random.default_rng([cfg.seed, 2, u]))
        if tup.size == 0:
            continue
        xhat = Xr[tup[:, 0]]
        fhat = Xr[sm.transitions[tup[:, 0], u, tup[:, 1]].astype(np.intp)]

        def target(P, u=u, xhat=xhat, fhat=fhat):
            F = oracle.step_indexed(P[:, :n], np.full(len(P), u), P[:, n:])
            return sol.value(F[None], fhat[:, None]) - gamma * sol.value(P[None, :, :n], xhat[:, None])

        all_maxima.append(batch_maxima(target, joint, cfg, (2, u)))
    if not all_maxima:
        raise ConfigurationError("every abstract tuple maps to the sink; nothing to estimate")
    return _reduce(np.vstack(all_maxima))


def estimate_L1(sol: AsbfSolution, sm: SymbolicModel, cfg: LipschitzConfig,
                x_box: Optional[Box] = None) -> TargetEstimate:
    """Lipschitz constant in ``x`` of ``alpha |x - x_hat|^2 - V(x, x_hat)``; no oracle queries."""
    x_box = x_box or sm.state_grid.box
    Xr = sm.state_grid.representatives()
    cap = max(cfg.abstract_tuple_subsample * sm.n_inputs, 1)
    rng = np.random.default_rng([cfg.seed, 1])
    pick = np.arange(len(Xr)) if len(Xr) <= cap else np.sort(rng.choice(len(Xr), cap, replace=False))
    xhat = Xr[pick]

    def target(P):
        diff2 = ((P[None] - xhat[:, None]) ** 2).sum(-1)
        return sol.alpha * diff2 - sol.value(P[None], xhat[:, None])

    return estimate_target(target, x_box, cfg, (1,))


def estimate_lipschitz(oracle, sol, sm, cfg: LipschitzConfig, x_box=None, w_box=None) -> LipschitzEstimate:
    e1 = estimate_L1(sol, sm, cfg, x_box)
    e2 = estimate_L2(oracle, sol, sm, cfg, x_box, w_box)
    return LipschitzEstimate(
        e1.value, e2.value,
        {"L1": e1.fit.as_tuple(), "L2": e2.fit.as_tuple()},
        {"L1": e1.batch_maxima.tolist(), "L2": e2.batch_maxima.tolist()},
        {"L1": e1.diagnostics(), "L2": e2.diagnostics()}, cfg)
