"""Compositional certificate for the whole network.

The per-agent terms ``mu + varpi + L * sigma`` must sum to a non-positive
number; no interconnection topology is involved.  The network certificate is
the sum of the agent certificates, and its sublevel set ``{V <= psi_bar}`` is
an epsilon-approximate alternating bisimulation relation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .certificate import AsbfSolution
from .errors import ConfigurationError, DomainError, InputShapeError


@dataclass(frozen=True)
class Part:
    mu: float
    varpi: float
    L: float
    sigma: float

    @property
    def term(self) -> float:
        return self.mu + self.varpi + self.L * self.sigma


@dataclass
class CompositionCertificate:
    per_subsystem: List[Part]
    total: float
    passed: bool
    gamma: float = math.nan
    alpha: float = math.nan
    psi: float = math.nan
    eta: float = math.nan
    gamma_bar: float = math.nan
    psi_bar: float = math.nan
    epsilon: float = math.nan
    digests: dict = field(default_factory=dict)
    multiplicity: int = 1

    def to_dict(self) -> dict:
        return {
            "per_subsystem": [{"mu": p.mu, "varpi": p.varpi, "L": p.L, "sigma": p.sigma, "term": p.term}
                              for p in self.per_subsystem],
            "multiplicity": self.multiplicity,
            "total": self.total, "pass": self.passed, "gamma": self.gamma, "alpha": self.alpha,
            "psi": self.psi, "eta": self.eta, "gamma_bar": self.gamma_bar, "psi_bar": self.psi_bar,
            "epsilon": self.epsilon, "digests": self.digests,
        }

    @classmethod
    def from_dict(cls, d) -> "CompositionCertificate":
        parts = [Part(p["mu"], p["varpi"], p["L"], p["sigma"]) for p in d["per_subsystem"]]
        return cls(parts, d["total"], d["pass"], d["gamma"], d["alpha"], d["psi"], d["eta"],
                   d["gamma_bar"], d["psi_bar"], d["epsilon"], d.get("digests", {}), d.get("multiplicity", 1))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CompositionCertificate":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def check_condition(parts: Sequence, multiplicity: int = 1) -> CompositionCertificate:
    """Sum of ``mu + varpi + L * sigma``; passes iff the sum is ``<= 0``.

    ``multiplicity`` repeats the given parts (identical agents share one solve).
    """
    parts = [p if isinstance(p, Part) else Part(*p) for p in parts]
    if not parts or multiplicity < 1:
        raise ConfigurationError("the compositional condition needs at least one subsystem")
    for p in parts:
        if not (p.varpi > 0 and p.L >= 0 and p.sigma >= 0):
            raise ConfigurationError(f"invalid part {p}: need varpi > 0, L >= 0, sigma >= 0")
    total = math.fsum(p.term for p in parts) * multiplicity
    return CompositionCertificate(parts, total, total <= 0, multiplicity=multiplicity)


def abf_params(solutions: Sequence[AsbfSolution], multiplicity: int = 1) -> Tuple[float, float, float]:
    """Network ``(gamma, alpha, psi)``: max of gammas, min of alphas, sum of psis."""
    if not solutions:
        raise ConfigurationError("need at least one subsystem certificate")
    gamma = max(s.gamma for s in solutions)
    alpha = min(s.alpha for s in solutions)
    psi = math.fsum(s.psi for s in solutions) * multiplicity
    return gamma, alpha, psi


def epsilon_bound(psi: float, alpha: float, gamma: float, eta: float) -> Tuple[float, float]:
    if not (0 < eta < 1 and 0 < gamma < 1 and alpha > 0 and psi > 0):
        raise DomainError(f"need 0<eta<1, 0<gamma<1, alpha>0, psi>0; got {(psi, alpha, gamma, eta)}")
    psi_bar = psi / ((1 - gamma) * eta)
    return psi_bar, math.sqrt(psi_bar / alpha)


def gamma_bar(gamma: float, eta: float) -> float:
    return 1 - (1 - eta) * (1 - gamma)


def compose(solutions: Sequence[AsbfSolution], lipschitz: Sequence[float], sigmas: Sequence[float],
            eta: float = 0.99, multiplicity: int = 1) -> CompositionCertificate:
    """Full network certificate from per-agent solutions, constants and radii."""
    if not len(solutions) == len(lipschitz) == len(sigmas):
        raise ConfigurationError("solutions, Lipschitz constants and radii must align")
    cert = check_condition([Part(s.mu, s.varpi, L, sg) for s, L, sg in zip(solutions, lipschitz, sigmas)],
                           multiplicity)
    cert.gamma, cert.alpha, cert.psi = abf_params(solutions, multiplicity)
    cert.eta = eta
    cert.gamma_bar = gamma_bar(cert.gamma, eta)
    cert.psi_bar, cert.epsilon = epsilon_bound(cert.psi, cert.alpha, cert.gamma, eta)
    return cert


def _blocks(solutions, v):
    n = solutions[0].basis.state_dim
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != n * len(solutions):
        raise InputShapeError(f"stacked vector has length {v.size}, expected {n * len(solutions)}")
    return v.reshape(len(solutions), n)


def evaluate_abf(solutions: Sequence[AsbfSolution], x, x_hat) -> float:
    X, Xh = _blocks(solutions, x), _blocks(solutions, x_hat)
    return math.fsum(float(s.value(X[i], Xh[i])) for i, s in enumerate(solutions))


def evaluate_abf_blocks(sol: AsbfSolution, X, Xh) -> np.ndarray:
    """Network certificate for identical agents, batched over leading axes of ``(..., M, n)``."""
    return sol.value(np.asarray(X), np.asarray(Xh)).sum(axis=-1)


def relation_contains(solutions, psi_bar: float, x, x_hat) -> bool:
    return evaluate_abf(solutions, x, x_hat) <= psi_bar
