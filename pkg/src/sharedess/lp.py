"""Dense two-phase bounded-variable primal simplex.

The solver works on a full tableau ``B^-1 A`` and handles finite upper
bounds implicitly (nonbasic variables sit at either bound), so box
constraints never become rows.  Pricing follows Bland's rule by default,
which together with lowest-index leaving ties makes every solve
deterministic and cycle free.

Problems are stated as::

    minimize    c @ x
    subject to  A_ub @ x <= b_ub
                A_eq @ x == b_eq
                lo <= x <= hi        (lo finite, hi may be +inf)
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._accel import kernel

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-11

# kernel return codes
_OPTIMAL, _UNBOUNDED, _ITER_LIMIT = 0, 1, 2
# column states
_AT_LOWER, _AT_UPPER, _BASIC = 0, 1, 2

RULES = ("bland", "dantzig")


class LpError(Exception):
    """Malformed problem or a solve that could not be completed."""


class NumericalInstabilityError(LpError):
    pass


@dataclass(frozen=True)
class LpProblem:
    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(np.asarray(self.c).shape[0])


@dataclass
class LpSolution:
    status: str
    x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective_value: float = float("nan")
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# --------------------------------------------------------------------------
# kernels


def _choose_entering_numpy(d, status, rule):
    improving = ((status == _AT_LOWER) & (d < -OPT_TOL)) | ((status == _AT_UPPER) & (d > OPT_TOL))
    cand = np.flatnonzero(improving)
    if cand.size == 0:
        return -1
    if rule == 0:
        return int(cand[0])
    return int(cand[np.argmax(np.abs(d[cand]))])


def _simplex_loop_numpy(T, d, xB, basis, status, u, rule, max_iter):
    m = T.shape[0]
    it = 0
    while it < max_iter:
        j = _choose_entering_numpy(d, status, rule)
        if j < 0:
            return _OPTIMAL, it
        s = 1.0 if status[j] == _AT_LOWER else -1.0
        col = s * T[:, j]
        ub_basic = u[basis]
        ratios = np.full(m, np.inf)
        dec = col > PIVOT_TOL
        ratios[dec] = np.maximum(xB[dec], 0.0) / col[dec]
        inc = (col < -PIVOT_TOL) & np.isfinite(ub_basic)
        ratios[inc] = np.maximum(ub_basic[inc] - xB[inc], 0.0) / (-col[inc])
        best = ratios.min() if m else np.inf
        r = -1
        if np.isfinite(best):
            tied = np.flatnonzero(ratios <= best + 1e-12)
            r = int(tied[np.argmin(basis[tied])])
            best = ratios[r]
        if u[j] < np.inf and u[j] <= best:
            t = u[j]
            xB -= t * col
            status[j] = _AT_UPPER if status[j] == _AT_LOWER else _AT_LOWER
            it += 1
            continue
        if r < 0:
            return _UNBOUNDED, it
        t = best
        xB -= t * col
        leaving = basis[r]
        status[leaving] = _AT_LOWER if col[r] > 0 else _AT_UPPER
        entering_val = t if s > 0 else u[j] - t
        prow = T[r] / T[r, j]
        colj = T[:, j].copy()
        colj[r] = 0.0
        T -= np.outer(colj, prow)
        T[r] = prow
        T[:, j] = 0.0
        T[r, j] = 1.0
        d -= d[j] * prow
        d[j] = 0.0
        xB[r] = entering_val
        basis[r] = j
        status[j] = _BASIC
        it += 1
    return _ITER_LIMIT, it


@kernel(_simplex_loop_numpy)
def _simplex_loop(T, d, xB, basis, status, u, rule, max_iter):
    m, ncol = T.shape
    it = 0
    while it < max_iter:
        # pricing
        j = -1
        best_d = 0.0
        for k in range(ncol):
            st = status[k]
            if st == 0:
                score = -d[k]
            elif st == 1:
                score = d[k]
            else:
                continue
            if score > OPT_TOL:
                if rule == 0:
                    j = k
                    break
                if score > best_d:
                    best_d = score
                    j = k
        if j < 0:
            return 0, it
        s = 1.0 if status[j] == 0 else -1.0
        # ratio test, lowest basic index on ties
        ratios = np.full(m, np.inf)
        best = np.inf
        for i in range(m):
            a = s * T[i, j]
            if a > PIVOT_TOL:
                v = xB[i] if xB[i] > 0.0 else 0.0
                ratios[i] = v / a
            elif a < -PIVOT_TOL and u[basis[i]] < np.inf:
                v = u[basis[i]] - xB[i]
                ratios[i] = (v if v > 0.0 else 0.0) / (-a)
            if ratios[i] < best:
                best = ratios[i]
        r = -1
        if best < np.inf:
            for i in range(m):
                if ratios[i] <= best + 1e-12 and (r < 0 or basis[i] < basis[r]):
                    r = i
            best = ratios[r]
        if u[j] < np.inf and u[j] <= best:
            t = u[j]
            for i in range(m):
                xB[i] -= t * (s * T[i, j])
            status[j] = 1 if status[j] == 0 else 0
            it += 1
            continue
        if r < 0:
            return 1, it
        t = best
        for i in range(m):
            xB[i] -= t * (s * T[i, j])
        leaving = basis[r]
        status[leaving] = 0 if s * T[r, j] > 0 else 1
        entering_val = t if s > 0 else u[j] - t
        piv = T[r, j]
        for k in range(ncol):
            T[r, k] /= piv
        for i in range(m):
            if i == r:
                continue
            f = T[i, j]
            if f != 0.0:
                for k in range(ncol):
                    T[i, k] -= f * T[r, k]
                T[i, j] = 0.0
        T[r, j] = 1.0
        f = d[j]
        if f != 0.0:
            for k in range(ncol):
                d[k] -= f * T[r, k]
        d[j] = 0.0
        xB[r] = entering_val
        basis[r] = j
        status[j] = 2
        it += 1
    return 2, it


def _pivot_numpy(T, d, r, j):
    prow = T[r] / T[r, j]
    colj = T[:, j].copy()
    colj[r] = 0.0
    T -= np.outer(colj, prow)
    T[r] = prow
    T[:, j] = 0.0
    T[r, j] = 1.0
    d -= d[j] * prow
    d[j] = 0.0


@kernel(_pivot_numpy)
def _pivot(T, d, r, j):
    m, ncol = T.shape
    piv = T[r, j]
    for k in range(ncol):
        T[r, k] /= piv
    for i in range(m):
        if i == r:
            continue
        f = T[i, j]
        if f != 0.0:
            for k in range(ncol):
                T[i, k] -= f * T[r, k]
            T[i, j] = 0.0
    T[r, j] = 1.0
    f = d[j]
    if f != 0.0:
        for k in range(ncol):
            d[k] -= f * T[r, k]
    d[j] = 0.0


# --------------------------------------------------------------------------
# driver


def _as2d(A, n):
    if A is None:
        return np.zeros((0, n))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.zeros((0, n))
    return A


def _normalize(p: LpProblem):
    c = np.asarray(p.c, dtype=float).ravel()
    n = c.shape[0]
    A_ub = _as2d(p.A_ub, n)
    A_eq = _as2d(p.A_eq, n)
    b_ub = np.zeros(0) if p.b_ub is None else np.asarray(p.b_ub, dtype=float).ravel()
    b_eq = np.zeros(0) if p.b_eq is None else np.asarray(p.b_eq, dtype=float).ravel()
    lo = np.zeros(n) if p.lo is None else np.broadcast_to(np.asarray(p.lo, dtype=float), (n,)).copy()
    hi = np.full(n, np.inf) if p.hi is None else np.broadcast_to(np.asarray(p.hi, dtype=float), (n,)).copy()
    if A_ub.shape[1] != n or A_eq.shape[1] != n:
        raise LpError(f"constraint matrices must have {n} columns")
    if A_ub.shape[0] != b_ub.shape[0] or A_eq.shape[0] != b_eq.shape[0]:
        raise LpError("constraint matrix and right-hand side row counts differ")
    if not np.all(np.isfinite(lo)):
        raise LpError("lower bounds must be finite")
    if np.any(lo > hi):
        raise LpError("lower bound exceeds upper bound")
    for arr in (c, A_ub, A_eq, b_ub, b_eq):
        if not np.all(np.isfinite(arr)):
            raise LpError("non-finite coefficient")
    return c, A_ub, b_ub, A_eq, b_eq, lo, hi


def solve_lp(p: LpProblem, rule: str = "bland", max_iter: int | None = None) -> LpSolution:
    """Solve ``p`` to a vertex optimum.

    Returns an :class:`LpSolution` whose ``status`` is ``"optimal"``,
    ``"infeasible"`` or ``"unbounded"``.  Raises :class:`LpError` on
    malformed input and :class:`NumericalInstabilityError` when the final
    vertex fails the residual check.
    """
    if rule not in RULES:
        raise LpError(f"unknown pricing rule {rule!r}")
    rule_code = RULES.index(rule)
    c, A_ub, b_ub, A_eq, b_eq, lo, hi = _normalize(p)
    n = c.shape[0]
    p_ub, q_eq = A_ub.shape[0], A_eq.shape[0]
    m = p_ub + q_eq
    u_orig = hi - lo

    bu = b_ub - A_ub @ lo
    be = b_eq - A_eq @ lo

    # rows: [ub rows with slack | eq rows]; negative rhs rows are negated
    ub_sign = np.where(bu < 0, -1.0, 1.0)
    eq_sign = np.where(be < 0, -1.0, 1.0)
    needs_art = np.concatenate([bu < 0, np.ones(q_eq, dtype=bool)])
    n_art = int(needs_art.sum())
    ncol = n + p_ub + n_art

    T = np.zeros((m, ncol))
    T[:p_ub, :n] = A_ub * ub_sign[:, None]
    T[p_ub:, :n] = A_eq * eq_sign[:, None]
    T[np.arange(p_ub), n + np.arange(p_ub)] = ub_sign
    rhs = np.concatenate([bu * ub_sign, be * eq_sign])

    basis = np.empty(m, dtype=np.int64)
    art_rows = np.flatnonzero(needs_art)
    basis[:p_ub] = n + np.arange(p_ub)
    basis[art_rows] = n + p_ub + np.arange(n_art)
    T[art_rows, n + p_ub + np.arange(n_art)] = 1.0

    u = np.concatenate([u_orig, np.full(p_ub + n_art, np.inf)])
    status = np.zeros(ncol, dtype=np.int8)
    status[basis] = _BASIC
    xB = rhs.copy()
    if max_iter is None:
        max_iter = 200 * (m + ncol) + 1000
    iters = 0

    if n_art:
        d = np.zeros(ncol)
        d[: n + p_ub] = -T[art_rows, : n + p_ub].sum(axis=0)
        code, it = _simplex_loop(T, d, xB, basis, status, u, rule_code, max_iter)
        iters += it
        if code == _ITER_LIMIT:
            raise LpError("iteration limit reached in phase 1")
        is_art = basis >= n + p_ub
        infeas = float(xB[is_art].sum())
        if infeas > FEAS_TOL * max(1.0, float(np.abs(rhs).max(initial=0.0))):
            return LpSolution("infeasible", iterations=iters)
        # drive zero-level artificials out of the basis
        keep = np.ones(m, dtype=bool)
        dummy = np.zeros(ncol)
        for r in np.flatnonzero(is_art):
            row = np.abs(T[r, : n + p_ub])
            row[status[: n + p_ub] == _BASIC] = 0.0
            cand = np.flatnonzero(row > 1e-9)
            if cand.size == 0:
                keep[r] = False
                continue
            j = int(cand[0])
            val = 0.0 if status[j] == _AT_LOWER else u[j]
            _pivot(T, dummy, r, j)
            basis[r] = j
            status[j] = _BASIC
            xB[r] = val
        T = np.ascontiguousarray(T[keep][:, : n + p_ub])
        xB = xB[keep].copy()
        basis = basis[keep].copy()
        status = status[: n + p_ub].copy()
        u = u[: n + p_ub].copy()
        rhs = rhs[keep]

    cost = np.concatenate([c, np.zeros(p_ub)])
    d = cost - cost[basis] @ T
    d[basis] = 0.0
    code, it = _simplex_loop(T, d, xB, basis, status, u, rule_code, max_iter)
    iters += it
    if code == _ITER_LIMIT:
        raise LpError("iteration limit reached in phase 2")
    if code == _UNBOUNDED:
        return LpSolution("unbounded", iterations=iters)

    xfull = np.where(status == _AT_UPPER, u, 0.0)
    xfull[basis] = xB
    xfull = _refine(xfull, basis, A_ub, bu, A_eq, be, n, p_ub, u)
    x = lo + np.clip(xfull[:n], 0.0, u_orig)
    _check_residuals(x, A_ub, b_ub, A_eq, b_eq)
    return LpSolution("optimal", x, float(c @ x), iters)


def _refine(xfull, basis, A_ub, bu, A_eq, be, n, p_ub, u):
    """Recompute basic values from the original data with one dense solve."""
    m = basis.shape[0]
    if m == 0:
        return xfull
    A = np.zeros((A_ub.shape[0] + A_eq.shape[0], n + p_ub))
    A[:p_ub, :n] = A_ub
    A[p_ub:, :n] = A_eq
    A[np.arange(p_ub), n + np.arange(p_ub)] = 1.0
    b = np.concatenate([bu, be])
    if A.shape[0] != m:
        # redundant equality rows were dropped; fall back to tableau values
        return xfull
    nonbasic = np.ones(n + p_ub, dtype=bool)
    nonbasic[basis] = False
    rhs = b - A[:, nonbasic] @ xfull[nonbasic]
    try:
        xb = np.linalg.solve(A[:, basis], rhs)
    except np.linalg.LinAlgError:
        return xfull
    if not np.all(np.isfinite(xb)):
        return xfull
    out = xfull.copy()
    out[basis] = np.clip(xb, 0.0, u[basis])
    # keep the refined point only if it is at least as accurate
    if _max_violation(out[:n], A_ub, bu, A_eq, be) <= _max_violation(xfull[:n], A_ub, bu, A_eq, be):
        return out
    return xfull


def _max_violation(x, A_ub, b_ub, A_eq, b_eq):
    v = 0.0
    if A_ub.shape[0]:
        v = max(v, float(np.max(A_ub @ x - b_ub)))
    if A_eq.shape[0]:
        v = max(v, float(np.max(np.abs(A_eq @ x - b_eq))))
    return v


def _check_residuals(x, A_ub, b_ub, A_eq, b_eq):
    viol = _max_violation(x, A_ub, b_ub, A_eq, b_eq)
    if viol > FEAS_TOL:
        raise NumericalInstabilityError(f"constraint residual {viol:.3e} exceeds {FEAS_TOL:g}")


def residuals(p: LpProblem, x: np.ndarray) -> float:
    """Largest constraint or bound violation of ``x`` (0 when feasible)."""
    c, A_ub, b_ub, A_eq, b_eq, lo, hi = _normalize(p)
    v = _max_violation(x, A_ub, b_ub, A_eq, b_eq)
    return max(v, float(np.max(lo - x, initial=0.0)), float(np.max(x - hi, initial=0.0)))


class CostSweepLp:
    """One fixed feasible region solved repeatedly under changing costs.

    Only ``A_ub x <= b_ub`` rows and bounds are supported, and ``lo`` must be
    feasible (so the slack basis starts phase 2 directly).  Each solve
    prices from the previous optimal basis, which stays primal feasible
    when only the costs move.  The tableau is rebuilt from the original
    data every ``refactor_every`` solves to keep rounding from piling up.
    Results depend on the solve history only through which optimal vertex
    is reported when the optimum is not unique.
    """

    def __init__(self, A_ub, b_ub, lo, hi, rule: str = "bland", refactor_every: int = 64):
        if rule not in RULES:
            raise LpError(f"unknown pricing rule {rule!r}")
        c0 = np.zeros(np.asarray(A_ub).shape[1])
        _, A, b, _, _, lo, hi = _normalize(LpProblem(c0, A_ub, b_ub, None, None, lo, hi))
        self.n, self.p = A.shape[1], A.shape[0]
        self.lo = lo
        self.A = A
        self.b = b
        self.bu = b - A @ lo
        if np.any(self.bu < -FEAS_TOL):
            raise LpError("lower-bound point must satisfy every row")
        self.full = np.hstack([A, np.eye(self.p)])
        self.u = np.concatenate([hi - lo, np.full(self.p, np.inf)])
        self.rule = RULES.index(rule)
        self.refactor_every = refactor_every
        self.basis = self.n + np.arange(self.p)
        self.status = np.zeros(self.n + self.p, dtype=np.int8)
        self.status[self.basis] = _BASIC
        self.solves = 0
        self._refactor()

    def _refactor(self):
        B = self.full[:, self.basis]
        at_up = self.status == _AT_UPPER
        rhs = self.bu - self.full[:, at_up] @ self.u[at_up]
        self.T = np.linalg.solve(B, self.full)
        self.T[:, self.basis] = np.eye(self.p)
        self.xB = np.clip(np.linalg.solve(B, rhs), 0.0, self.u[self.basis])

    def _point(self):
        xfull = np.where(self.status == _AT_UPPER, self.u, 0.0)
        xfull[self.basis] = self.xB
        return self.lo + np.clip(xfull[: self.n], 0.0, self.u[: self.n])

    def solve(self, c) -> LpSolution:
        c = np.asarray(c, dtype=float).ravel()
        if c.shape[0] != self.n or not np.all(np.isfinite(c)):
            raise LpError(f"cost vector must have {self.n} finite entries")
        self.solves += 1
        if self.solves % self.refactor_every == 0:
            self._refactor()
        cost = np.concatenate([c, np.zeros(self.p)])
        d = cost - cost[self.basis] @ self.T
        d[self.basis] = 0.0
        code, it = _simplex_loop(self.T, d, self.xB, self.basis, self.status, self.u, self.rule, 200 * (self.n + 2 * self.p) + 1000)
        if code == _ITER_LIMIT:
            raise LpError("iteration limit reached")
        if code == _UNBOUNDED:
            return LpSolution("unbounded", iterations=it)
        x = self._point()
        if _max_violation(x, self.A, self.b, np.zeros((0, self.n)), np.zeros(0)) > FEAS_TOL * 0.1:
            self._refactor()
            x = self._point()
        _check_residuals(x, self.A, self.b, np.zeros((0, self.n)), np.zeros(0))
        return LpSolution("optimal", x, float(c @ x), it)
