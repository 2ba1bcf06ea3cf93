"""Dense revised simplex for small linear programs.

Solves  min c^T x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0.
Two phases, explicit basis inverse with product-form updates, refreshed from
scratch every ``refresh`` pivots. Bland's rule by default.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-9


class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray
    objective: float
    dual_eq: np.ndarray
    dual_ub: np.ndarray  # <= 0 for a minimisation
    pivots: int


def _as2d(a, n):
    if a is None:
        return np.zeros((0, n))
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, n)


class _Simplex:
    def __init__(self, A, b, rule, refresh, max_pivots):
        self.A = A
        self.b = b
        self.m, self.n = A.shape
        self.rule = rule
        self.refresh = refresh
        self.max_pivots = max_pivots
        self.pivots = 0

    def set_basis(self, basis):
        self.basis = list(basis)
        self._reinvert()

    def _reinvert(self):
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B)
        self.xB = self.Binv @ self.b
        self.since = 0

    def run(self, c, allowed):
        """Primal simplex on cost c; columns with allowed=False never enter."""
        tol = 1e-10 * (1.0 + np.abs(c).max(initial=0.0))
        while True:
            y = c[self.basis] @ self.Binv
            d = c - y @ self.A
            d[self.basis] = 0.0
            cand = np.flatnonzero((d < -tol) & allowed)
            if len(cand) == 0:
                return "optimal"
            if self.rule == "bland":
                j = cand[0]
            else:
                j = cand[np.argmin(d[cand])]
            w = self.Binv @ self.A[:, j]
            pos = w > PIVOT_TOL
            if not pos.any():
                return "unbounded"
            ratios = np.full(self.m, np.inf)
            ratios[pos] = np.maximum(self.xB[pos], 0.0) / w[pos]
            rmin = ratios.min()
            ties = np.flatnonzero(ratios <= rmin + 1e-12 * (1.0 + rmin))
            # Bland: leave with the smallest variable index among ties
            r = min(ties, key=lambda i: self.basis[i])
            self._pivot(r, j, w)
            if self.pivots > self.max_pivots:
                raise LPError("simplex pivot limit reached")

    def _pivot(self, r, j, w):
        self.pivots += 1
        self.since += 1
        self.basis[r] = j
        if self.since >= self.refresh:
            self._reinvert()
            return
        piv = w[r]
        theta = self.xB[r] / piv
        self.xB -= theta * w
        self.xB[r] = theta
        row = self.Binv[r] / piv
        self.Binv -= np.outer(w, row)
        self.Binv[r] = row


def solve_lp(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, rule: str = "bland",
             refresh: int = 50, max_pivots: int = 100000) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = len(c)
    A_eq = _as2d(A_eq, n)
    A_ub = _as2d(A_ub, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    me, mu = len(b_eq), len(b_ub)
    m = me + mu
    # standard form: [A_eq 0; A_ub I] [x; s] = b
    A = np.zeros((m, n + mu))
    A[:me, :n] = A_eq
    A[me:, :n] = A_ub
    A[me:, n:] = np.eye(mu)
    b = np.concatenate([b_eq, b_ub])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign
    ntot = n + mu

    # crash basis: unit columns with a positive entry, artificials elsewhere
    basis = [-1] * m
    for j in range(ntot):
        col = A[:, j]
        nz = np.flatnonzero(col)
        if len(nz) == 1 and col[nz[0]] > 0 and basis[nz[0]] < 0:
            basis[nz[0]] = j
    art_rows = [i for i in range(m) if basis[i] < 0]
    n_art = len(art_rows)
    if n_art:
        art = np.zeros((m, n_art))
        art[art_rows, np.arange(n_art)] = 1.0
        A = np.hstack([A, art])
        for k, i in enumerate(art_rows):
            basis[i] = ntot + k
    sx = _Simplex(A, b, rule, refresh, max_pivots)
    sx.set_basis(basis)

    allowed = np.ones(A.shape[1], dtype=bool)
    if n_art:
        c1 = np.zeros(A.shape[1])
        c1[ntot:] = 1.0
        sx.run(c1, allowed)
        infeas = float(sx.xB[[i for i, j in enumerate(sx.basis) if j >= ntot]].sum()) \
            if any(j >= ntot for j in sx.basis) else 0.0
        if infeas > 1e-9 * (1.0 + np.abs(b).max(initial=0.0)):
            return LPResult("infeasible", np.full(n, np.nan), np.nan, np.full(me, np.nan),
                            np.full(mu, np.nan), sx.pivots)
        # drive artificials out of the basis; drop rows that turn out redundant
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if sx.basis[r] < ntot:
                continue
            row = sx.Binv[r] @ A[:, :ntot]
            cands = [j for j in np.flatnonzero(np.abs(row) > 1e-7) if j not in sx.basis]
            if cands:
                j = cands[0]
                sx._pivot(r, j, sx.Binv @ A[:, j])
            else:
                keep[r] = False
        allowed[ntot:] = False
        if not keep.all():
            rows = np.flatnonzero(keep)
            basis_kept = [sx.basis[r] for r in rows]
            sx2 = _Simplex(A[rows], b[rows], rule, refresh, max_pivots)
            sx2.pivots = sx.pivots
            sx2.set_basis(basis_kept)
            sx, kept_rows = sx2, rows
        else:
            kept_rows = np.arange(m)
    else:
        kept_rows = np.arange(m)

    cfull = np.zeros(sx.A.shape[1])
    cfull[:n] = c
    status = sx.run(cfull, allowed)
    if status == "unbounded":
        return LPResult("unbounded", np.full(n, np.nan), -np.inf, np.full(me, np.nan),
                        np.full(mu, np.nan), sx.pivots)
    sx._reinvert()
    x = np.zeros(sx.A.shape[1])
    x[sx.basis] = np.maximum(sx.xB, 0.0)
    y_kept = cfull[sx.basis] @ sx.Binv
    y = np.zeros(m)
    y[kept_rows] = y_kept
    y *= sign
    return LPResult("optimal", x[:n], float(c @ x[:n]), y[:me], y[me:], sx.pivots)
