"""Linear programs in inequality form and the default solver backend."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog


@dataclass
class LinearProgram:
    """``min c @ x  s.t.  A_ub @ x <= b_ub,  lo <= x <= hi``."""

    objective: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    bounds: List[Tuple[Optional[float], Optional[float]]]
    names: Sequence[str] = ()
    row_labels: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if not sp.issparse(self.A_ub):
            self.A_ub = np.atleast_2d(np.asarray(self.A_ub, dtype=float)).reshape(-1, self.n_vars)
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        if self.A_ub.shape[1] != self.n_vars or len(self.bounds) != self.n_vars:
            raise ValueError("rows and bounds must reference exactly the declared variables")
        if self.A_ub.shape[0] != self.b_ub.size:
            raise ValueError("A_ub and b_ub disagree on the number of rows")
        data = self.A_ub.data if sp.issparse(self.A_ub) else self.A_ub
        if not (np.all(np.isfinite(data)) and np.all(np.isfinite(self.b_ub))):
            raise ValueError("non-finite coefficient in linear program")

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_rows(self) -> int:
        return self.b_ub.size

    def row_values(self, x) -> np.ndarray:
        """``A_ub @ x - b_ub``; feasible rows are ``<= 0``."""
        return np.asarray(self.A_ub @ np.asarray(x, dtype=float)).reshape(-1) - self.b_ub

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        lo = np.array([-np.inf if b[0] is None else b[0] for b in self.bounds])
        hi = np.array([np.inf if b[1] is None else b[1] for b in self.bounds])
        v = [np.max(self.row_values(x), initial=0.0), np.max(lo - x), np.max(x - hi)]
        return float(max(0.0, *v))


@dataclass
class LPResult:
    x: Optional[np.ndarray]
    status: str
    objective: float = np.nan


LPSolver = Callable[[LinearProgram], LPResult]


def highs_solver(lp: LinearProgram) -> LPResult:
    res = linprog(lp.objective, A_ub=lp.A_ub, b_ub=lp.b_ub, bounds=lp.bounds, method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10,
                           "presolve": True})
    if res.status == 0:
        return LPResult(np.asarray(res.x, dtype=float), "optimal", float(res.fun))
    return LPResult(None, {2: "infeasible", 3: "unbounded"}.get(res.status, "error"))
