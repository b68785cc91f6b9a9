"""LP relaxation backends.

A backend holds one LP ``max c.x  s.t.  lo <= A x <= hi,  lb <= x <= ub``,
accepts extra rows and bound changes, and re-solves. Provided:

* :class:`HighsBackend` keeps one persistent HiGHS model (via ``highspy``)
  and warm-starts every re-solve;
* :class:`LinprogBackend` calls ``scipy.optimize.linprog`` from scratch;
* :class:`DenseSimplex` is a self-contained two-phase tableau simplex for
  small systems.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

OPTIMAL, INFEASIBLE, UNBOUNDED, ERROR = "optimal", "infeasible", "unbounded", "error"


class BackendError(RuntimeError):
    pass


@dataclass
class LpResult:
    status: str
    x: np.ndarray | None = None
    objective: float = -np.inf


class LpBackend:
    """Base class; subclasses implement :meth:`_solve`."""

    def load(self, c, A, lo, hi, lb, ub):
        self.c = np.asarray(c, dtype=float)
        self.A = sp.csr_matrix(A)
        self.lo = np.asarray(lo, dtype=float).copy()
        self.hi = np.asarray(hi, dtype=float).copy()
        self.lb = np.asarray(lb, dtype=float).copy()
        self.ub = np.asarray(ub, dtype=float).copy()
        self.base_lb, self.base_ub = self.lb.copy(), self.ub.copy()
        return self

    def add_rows(self, A_new, lo, hi):
        self.A = sp.vstack([self.A, sp.csr_matrix(A_new)], format="csr")
        self.lo = np.r_[self.lo, np.asarray(lo, dtype=float)]
        self.hi = np.r_[self.hi, np.asarray(hi, dtype=float)]

    def delete_rows(self, idx):
        keep = np.ones(self.A.shape[0], dtype=bool)
        keep[np.asarray(idx, dtype=np.int64)] = False
        self.A = self.A[keep]
        self.lo, self.hi = self.lo[keep], self.hi[keep]

    def set_bounds(self, fixes: dict[int, float] | None = None):
        """Reset to the loaded bounds, then fix the given variables."""
        self.lb, self.ub = self.base_lb.copy(), self.base_ub.copy()
        for k, v in (fixes or {}).items():
            self.lb[k] = self.ub[k] = v

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def solve(self) -> LpResult:
        res = self._solve()
        if res.status == OPTIMAL:
            res.objective = float(self.c @ res.x)
        return res

    def _solve(self) -> LpResult:
        raise NotImplementedError


class HighsBackend(LpBackend):
    def __init__(self, tol: float = 1e-9):
        import highspy

        self._hs = highspy
        self.tol = tol

    def load(self, c, A, lo, hi, lb, ub):
        super().load(c, A, lo, hi, lb, ub)
        hs = self._hs
        h = hs.Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("primal_feasibility_tolerance", self.tol)
        h.setOptionValue("dual_feasibility_tolerance", self.tol)
        inf = h.getInfinity()
        fin = lambda v: np.clip(v, -inf, inf)
        lp = hs.HighsLp()
        lp.num_col_, lp.num_row_ = len(self.c), self.A.shape[0]
        lp.col_cost_ = self.c
        lp.col_lower_, lp.col_upper_ = fin(self.lb), fin(self.ub)
        lp.row_lower_, lp.row_upper_ = fin(self.lo), fin(self.hi)
        Ac = self.A.tocsc()
        lp.a_matrix_.format_ = hs.MatrixFormat.kColwise
        lp.a_matrix_.start_ = Ac.indptr
        lp.a_matrix_.index_ = Ac.indices
        lp.a_matrix_.value_ = Ac.data
        lp.sense_ = hs.ObjSense.kMaximize
        h.passModel(lp)
        self._h, self._inf = h, inf
        self._fixed: set[int] = set()
        return self

    def add_rows(self, A_new, lo, hi):
        super().add_rows(A_new, lo, hi)
        A_new = sp.csr_matrix(A_new)
        inf = self._inf
        self._h.addRows(A_new.shape[0], np.clip(lo, -inf, inf), np.clip(hi, -inf, inf),
                        A_new.nnz, A_new.indptr[:-1], A_new.indices, A_new.data)

    def delete_rows(self, idx):
        idx = np.asarray(idx, dtype=np.int32)
        super().delete_rows(idx)
        self._h.deleteRows(idx.size, idx)

    def set_bounds(self, fixes=None):
        fixes = fixes or {}
        touched = np.array(sorted(self._fixed | set(fixes)), dtype=np.int32)
        super().set_bounds(fixes)
        if touched.size:
            inf = self._inf
            self._h.changeColsBounds(touched.size, touched, np.clip(self.lb[touched], -inf, inf),
                                     np.clip(self.ub[touched], -inf, inf))
        self._fixed = set(fixes)

    def _solve(self) -> LpResult:
        h, ms = self._h, self._hs.HighsModelStatus
        h.run()
        st = h.getModelStatus()
        if st == ms.kOptimal:
            return LpResult(OPTIMAL, np.array(h.getSolution().col_value))
        if st == ms.kInfeasible:
            return LpResult(INFEASIBLE)
        if st in (ms.kUnbounded, ms.kUnboundedOrInfeasible):
            return LpResult(UNBOUNDED)
        raise BackendError(f"HiGHS returned {h.modelStatusToString(st)}")


class LinprogBackend(LpBackend):
    def _solve(self) -> LpResult:
        A, lo, hi = self.A, self.lo, self.hi
        eq = lo == hi
        up = ~eq & np.isfinite(hi)
        dn = ~eq & np.isfinite(lo)
        A_ub = sp.vstack([A[up], -A[dn]], format="csr")
        b_ub = np.r_[hi[up], -lo[dn]]
        kw = {}
        if A_ub.shape[0]:
            kw.update(A_ub=A_ub, b_ub=b_ub)
        if eq.any():
            kw.update(A_eq=A[eq], b_eq=hi[eq])
        ub = np.where(np.isfinite(self.ub), self.ub, None)
        lb = np.where(np.isfinite(self.lb), self.lb, None)
        res = linprog(-self.c, bounds=list(zip(lb, ub)), method="highs",
                      options={"primal_feasibility_tolerance": 1e-9, "dual_feasibility_tolerance": 1e-9},
                      **kw)
        if res.status == 0:
            return LpResult(OPTIMAL, np.asarray(res.x))
        if res.status == 2:
            return LpResult(INFEASIBLE)
        if res.status == 3:
            return LpResult(UNBOUNDED)
        raise BackendError(f"HiGHS failed: {res.message}")


class DenseSimplex(LpBackend):
    """Two-phase dense tableau simplex.

    Variables are shifted to ``y = x - lb >= 0``; finite upper bounds become
    rows. Dense and restarted on every solve, so only suitable for systems
    with a few hundred rows and columns.
    """

    def __init__(self, tol: float = 1e-9, max_iter: int = 50_000):
        self.tol = tol
        self.max_iter = max_iter

    def _solve(self) -> LpResult:
        if np.any(~np.isfinite(self.lb)):
            raise BackendError("dense simplex needs finite lower bounds")
        if np.any(self.lb > self.ub + self.tol):
            return LpResult(INFEASIBLE)
        n = len(self.c)
        A = self.A.toarray()
        shift = A @ self.lb
        rows, rhs, kinds = [], [], []
        for r in range(A.shape[0]):
            lo, hi = self.lo[r] - shift[r], self.hi[r] - shift[r]
            if lo == hi:
                rows.append(A[r]); rhs.append(hi); kinds.append(0)
                continue
            if np.isfinite(hi):
                rows.append(A[r]); rhs.append(hi); kinds.append(1)
            if np.isfinite(lo):
                rows.append(A[r]); rhs.append(lo); kinds.append(-1)
        span = self.ub - self.lb
        for k in np.flatnonzero(np.isfinite(span)):
            e = np.zeros(n)
            e[k] = 1.0
            rows.append(e); rhs.append(span[k]); kinds.append(1)
        M = np.array(rows).reshape(-1, n)
        b = np.array(rhs, dtype=float)
        kinds = np.array(kinds)
        y = _two_phase(M, b, kinds, self.c, self.tol, self.max_iter)
        if isinstance(y, str):
            return LpResult(y)
        return LpResult(OPTIMAL, self.lb + y)


def _two_phase(M, b, kinds, c, tol, max_iter):
    """max c.y s.t. M y (<=,=,>=) b per ``kinds`` (1, 0, -1), y >= 0."""
    m, n = M.shape
    # flip rows with negative rhs
    neg = b < 0
    M = np.where(neg[:, None], -M, M)
    b = np.abs(b)
    kinds = np.where(neg, -kinds, kinds)
    n_slack = int(np.sum(kinds != 0))
    slack_col = np.full(m, -1)
    slack_col[kinds != 0] = n + np.arange(n_slack)
    needs_art = kinds != 1
    n_art = int(needs_art.sum())
    N = n + n_slack + n_art
    T = np.zeros((m + 1, N + 1))
    T[:m, :n] = M
    for r in range(m):
        if kinds[r] != 0:
            T[r, slack_col[r]] = 1.0 if kinds[r] == 1 else -1.0
    basis = np.zeros(m, dtype=np.int64)
    art = n + n_slack + np.arange(n_art)
    ai = 0
    for r in range(m):
        if needs_art[r]:
            T[r, art[ai]] = 1.0
            basis[r] = art[ai]
            ai += 1
        else:
            basis[r] = slack_col[r]
    T[:m, -1] = b
    # phase 1: maximize -sum(art); objective row holds reduced costs of -(...)
    T[-1, :] = 0.0
    T[-1, art] = 1.0
    for r in range(m):
        if needs_art[r]:
            T[-1] -= T[r]
    st = _iterate(T, basis, tol, max_iter, allowed=N)
    if st != "ok":
        return st
    if -T[-1, -1] > 1e-7 * max(1.0, np.abs(b).max(initial=0.0)):
        return "infeasible"
    # drive artificials out of the basis
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= n + n_slack:
            cand = np.flatnonzero(np.abs(T[r, :n + n_slack]) > tol)
            if cand.size:
                _pivot(T, basis, r, cand[0])
            else:
                keep[r] = False
    T = np.vstack([T[:m][keep], T[-1:]])
    basis = basis[keep]
    T = np.delete(T, art, axis=1)
    m = len(basis)
    # phase 2
    cost = np.zeros(n + n_slack)
    cost[:n] = c
    T[-1, :] = 0.0
    T[-1, :n + n_slack] = -cost
    for r in range(m):
        if cost[basis[r]] != 0:
            T[-1] += cost[basis[r]] * T[r]
    st = _iterate(T, basis, tol, max_iter, allowed=n + n_slack)
    if st != "ok":
        return st
    y = np.zeros(n + n_slack)
    y[basis] = T[:m, -1]
    return np.maximum(y[:n], 0.0)


def _pivot(T, basis, r, col):
    T[r] /= T[r, col]
    others = np.flatnonzero(T[:, col])
    others = others[others != r]
    T[others] -= np.outer(T[others, col], T[r])
    basis[r] = col


def _iterate(T, basis, tol, max_iter, allowed):
    """Dantzig pricing; Bland's rule after a run of degenerate pivots."""
    m = T.shape[0] - 1
    stall = 0
    for _ in range(max_iter):
        red = T[-1, :allowed]
        enter = np.flatnonzero(red < -tol)
        if enter.size == 0:
            return "ok"
        col = enter[0] if stall > 50 else enter[np.argmin(red[enter])]
        a = T[:m, col]
        pos = a > tol
        if not pos.any():
            return "unbounded"
        ratio = np.full(m, np.inf)
        ratio[pos] = T[:m, -1][pos] / a[pos]
        best = ratio.min()
        ties = np.flatnonzero(ratio <= best + tol * max(1.0, abs(best)))
        r = ties[np.argmin(basis[ties])]
        stall = stall + 1 if best <= tol else 0
        _pivot(T, basis, r, col)
    raise BackendError("simplex iteration limit reached")


BACKENDS = {"highs": HighsBackend, "linprog": LinprogBackend, "dense": DenseSimplex}


def make_backend(name: str = "highs") -> LpBackend:
    try:
        return BACKENDS[name]()
    except KeyError:
        raise ValueError(f"unknown LP backend {name!r}") from None
