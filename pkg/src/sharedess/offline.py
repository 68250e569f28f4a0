"""Off-line energy management with perfect forecasts.

Three solvers live here:

* :func:`solve_p1_monolithic` assembles the whole shared-storage problem as
  one LP and is used as the oracle.
* :func:`solve_p1_distributed` runs the price-coordination loop: users
  answer multipliers with their local optimum, the controller schedules the
  storage, multipliers move along the (averaged) subgradient, and a final
  per-user LP turns the averaged storage plan into a feasible schedule.
* :func:`solve_p2_distributed_ess` is the no-sharing benchmark where every
  user owns a private unit.
"""
from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lp import CostSweepLp, LpProblem, solve_lp
from .model import (
    ScenarioConfig,
    Schedule,
    UserProfile,
    ess_trajectory,
    net_profile,
    validate_scenario,
    weighted_cost,
)

log = logging.getLogger(__name__)

PWL_SEGMENTS = 32
CONTROLLER_TIE_PENALTY = 1e-9


class InfeasibleScenarioError(ValueError):
    def __init__(self, msg: str, certificate: list[str] | None = None):
        super().__init__(msg)
        self.certificate = certificate or []


class ConvergenceWarning(UserWarning):
    pass


# --------------------------------------------------------------------------
# LP assembly


class _Cols:
    """Column allocator for dense LP assembly."""

    def __init__(self):
        self.n = 0
        self.lo: list[np.ndarray] = []
        self.hi: list[np.ndarray] = []
        self.cost: list[np.ndarray] = []

    def add(self, k: int, lo, hi, cost=0.0) -> np.ndarray:
        idx = np.arange(self.n, self.n + k)
        self.n += k
        self.lo.append(np.broadcast_to(np.asarray(lo, dtype=float), (k,)))
        self.hi.append(np.broadcast_to(np.asarray(hi, dtype=float), (k,)))
        self.cost.append(np.broadcast_to(np.asarray(cost, dtype=float), (k,)))
        return idx

    def arrays(self):
        cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)  # noqa: E731
        return cat(self.cost).copy(), cat(self.lo).copy(), cat(self.hi).copy()


def _grid_columns(cols: _Cols, user: UserProfile, grid_cap: float, segments: int = PWL_SEGMENTS):
    """Grid purchase columns for one user.

    Returns an (N, K) index array whose row sums give G_n.  Linear costs use
    one column per slot; quadratic costs use ``segments`` equal-width pieces
    with increasing slopes, which an LP fills in order.
    """
    N = user.horizon
    b = user.weight
    if user.is_linear:
        idx = cols.add(N, 0.0, grid_cap, b * user.price)
        return idx[:, None]
    h = grid_cap / segments
    k = np.arange(segments)
    slopes = b * (user.price[:, None] + user.quadratic[:, None] * h * (2 * k[None, :] + 1))
    idx = cols.add(N * segments, 0.0, h, slopes.ravel())
    return idx.reshape(N, segments)


def _load_columns(cols: _Cols, user: UserProfile):
    out = []
    for q in user.controllable_loads:
        w = q.window()
        slots = np.arange(user.horizon)[w]
        out.append((slots, cols.add(slots.size, q.min_rate, q.max_rate)))
    return out


class _Rows:
    def __init__(self):
        self.ub: list[tuple[dict[int, float], float]] = []
        self.eq: list[tuple[dict[int, float], float]] = []

    def build(self, ncol: int):
        def mat(rows):
            A = np.zeros((len(rows), ncol))
            b = np.zeros(len(rows))
            for i, (coef, rhs) in enumerate(rows):
                for j, v in coef.items():
                    A[i, j] += v
                b[i] = rhs
            return A, b

        return mat(self.ub) + mat(self.eq)


def _storage_rows(rows: _Rows, c_idx, d_idx, ce, de, s1, smin, smax):
    """Cumulative state bounds for charge/discharge index arrays of shape (K, N)."""
    N = c_idx.shape[1]
    for n in range(N):
        coef: dict[int, float] = {}
        for j in c_idx[:, : n + 1].ravel():
            coef[int(j)] = ce
        for j in d_idx[:, : n + 1].ravel():
            coef[int(j)] = -1.0 / de
        rows.ub.append(({j: -v for j, v in coef.items()}, s1 - smin))
        rows.ub.append((coef, smax - s1))


def _storage_matrix(M, N, ce, de, s1, smin, smax):
    """Dense rows for the cumulative bounds over x = [c (M*N) | d (M*N)]."""
    tri = np.tril(np.ones((N, N)))
    # column m*N + n is user m, slot n
    A = np.hstack([np.tile(ce * tri, (1, M)), np.tile(-tri / de, (1, M))])
    A_ub = np.vstack([-A, A])
    b_ub = np.concatenate([np.full(N, s1 - smin), np.full(N, smax - s1)])
    return A_ub, b_ub


def _solved(p: LpProblem, what: str, certificate=None):
    sol = solve_lp(p)
    if sol.status != "optimal":
        raise InfeasibleScenarioError(f"{what}: LP {sol.status}", certificate)
    return sol


def _require_valid(cfg: ScenarioConfig):
    rep = validate_scenario(cfg)
    if not rep.ok:
        raise InfeasibleScenarioError("scenario failed validation", rep.lines())


def _empty_loads(cfg: ScenarioConfig) -> list[np.ndarray]:
    return [np.zeros((len(u.controllable_loads), cfg.horizon)) for u in cfg.users]


# --------------------------------------------------------------------------
# monolithic oracle


def solve_p1_monolithic(cfg: ScenarioConfig, validate: bool = True, min_throughput: bool = False) -> Schedule:
    """Globally optimal shared-storage schedule from a single LP.

    With ``min_throughput`` a second LP keeps the optimal cost and minimizes
    total charge plus discharge, removing idle charge/discharge cycles that
    the cost alone does not pin down.
    """
    if validate:
        _require_valid(cfg)
    M, N = cfg.n_users, cfg.horizon
    ess = cfg.shared_ess
    cols = _Cols()
    g_idx = [_grid_columns(cols, u, cfg.grid_cap) for u in cfg.users]
    c_idx = cols.add(M * N, 0.0, ess.max_charge_per_user).reshape(M, N)
    d_idx = cols.add(M * N, 0.0, ess.max_discharge_per_user).reshape(M, N)
    l_idx = [_load_columns(cols, u) for u in cfg.users]
    rows = _Rows()
    delta = cfg.net_matrix()
    for m in range(M):
        for n in range(N):
            coef = {int(j): -1.0 for j in g_idx[m][n]}
            coef[int(c_idx[m, n])] = 1.0
            coef[int(d_idx[m, n])] = -1.0
            for slots, idx in l_idx[m]:
                hit = np.flatnonzero(slots == n)
                if hit.size:
                    coef[int(idx[hit[0]])] = 1.0
            rows.ub.append((coef, float(delta[m, n])))
    _storage_rows(rows, c_idx, d_idx, ess.charge_eff, ess.discharge_eff, ess.initial_state, ess.min_state, ess.max_state)
    for m, u in enumerate(cfg.users):
        for q, (slots, idx) in zip(u.controllable_loads, l_idx[m]):
            rows.eq.append(({int(j): 1.0 for j in idx}, q.total_energy))
    cost, lo, hi = cols.arrays()
    A_ub, b_ub, A_eq, b_eq = rows.build(cols.n)
    prob = LpProblem(cost, A_ub, b_ub, A_eq, b_eq, lo, hi)
    sol = _solved(prob, "shared-storage problem", ["storage bounds, load energies and per-slot balance jointly infeasible"])
    if min_throughput:
        tp = np.zeros(cols.n)
        tp[c_idx.ravel()] = 1.0
        tp[d_idx.ravel()] = 1.0
        slack = 1e-9 * max(1.0, abs(sol.objective_value))
        prob2 = LpProblem(tp, np.vstack([A_ub, cost]), np.append(b_ub, sol.objective_value + slack), A_eq, b_eq, lo, hi)
        sol = _solved(prob2, "throughput refinement")
    x = sol.x
    G = np.vstack([x[g].sum(axis=1) for g in g_idx])
    C, D = x[c_idx], x[d_idx]
    L = _empty_loads(cfg)
    for m in range(M):
        for qi, (slots, idx) in enumerate(l_idx[m]):
            L[m][qi, slots] = x[idx]
    return _assemble(cfg, G, C, D, L)


def _assemble(cfg: ScenarioConfig, G, C, D, L) -> Schedule:
    ess = cfg.shared_ess
    G = np.maximum(G, 0.0)
    C = np.clip(C, 0.0, ess.max_charge_per_user)
    D = np.clip(D, 0.0, ess.max_discharge_per_user)
    states = ess_trajectory(ess.initial_state, ess.charge_eff, ess.discharge_eff, C.sum(axis=0), D.sum(axis=0))
    return Schedule(G, C, D, L, states, weighted_cost(cfg, G))


# --------------------------------------------------------------------------
# price-coordination building blocks


@dataclass
class SolverOptions:
    max_iters: int = 5000
    step0: float | None = None
    tol: float = 1e-5
    y_cap: str | float | None = "auto"
    min_iters: int = 20
    gap_tol: float = 1e-3
    gap_abs: float = 1e-4
    recover_every: int = 25
    # the stall test (multipliers and running averages all moving less than
    # tol) must hold this many iterations in a row; a capped box can pin the
    # multipliers while the averages, and so the recovered plan, still move
    stall_window: int = 200
    time_limit: float | None = None
    init: str = "zeros"
    seed: int = 0
    trace_path: str | Path | None = None
    keep_y_trace: bool = False

    def __post_init__(self):
        if self.max_iters < 1 or self.tol <= 0 or self.min_iters < 1 or self.recover_every < 1 or self.stall_window < 1:
            raise ValueError("solver options must be positive")
        if self.step0 is not None and self.step0 <= 0:
            raise ValueError("step0 must be positive")
        if self.init not in ("zeros", "random"):
            raise ValueError("init must be 'zeros' or 'random'")


@dataclass
class DualState:
    y: np.ndarray
    iter: int = 0
    c_avg: np.ndarray | None = None
    d_avg: np.ndarray | None = None
    best_dual_value: float = -np.inf

    @classmethod
    def initial(cls, cfg: ScenarioConfig, opts: SolverOptions | None = None) -> "DualState":
        opts = opts or SolverOptions()
        shape = (cfg.n_users, cfg.horizon)
        y = np.zeros(shape)
        if opts.init == "random":
            rng = np.random.default_rng(opts.seed)
            y = rng.uniform(0.0, 1.0, shape) * _price_matrix(cfg)
        return cls(y=y, iter=1, c_avg=np.zeros(shape), d_avg=np.zeros(shape))


@dataclass
class SubgradientReport:
    z: np.ndarray
    v: np.ndarray


def _price_matrix(cfg: ScenarioConfig) -> np.ndarray:
    """Weighted marginal price at zero purchase, beta_m * p_mn."""
    return np.vstack([u.weight * u.price for u in cfg.users])


def greedy_load_fill(load, y: np.ndarray) -> np.ndarray:
    """Cheapest-multiplier allocation of one controllable load.

    Every window slot gets ``min_rate``; the remaining energy goes to slots
    in ascending ``y`` order (earlier slot first on ties) up to ``max_rate``.
    """
    N = y.shape[0]
    out = np.zeros(N)
    w = load.window()
    slots = np.arange(N)[w]
    out[slots] = load.min_rate
    left = load.total_energy - load.min_rate * slots.size
    room = load.max_rate - load.min_rate
    for n in slots[np.argsort(y[slots], kind="stable")]:
        if left <= 0:
            break
        take = min(room, left)
        out[n] += take
        left -= take
    if left > 1e-9 * max(1.0, load.total_energy):
        raise InfeasibleScenarioError(f"load {load.id} cannot place {left:.6g} kWh in its window")
    return out


def user_subproblem(user: UserProfile, y_m: np.ndarray, grid_cap: float):
    """Closed-form user response to multipliers ``y_m``.

    Returns ``(g, l, value)`` where ``l`` is a (Q, N) matrix and ``value``
    the subproblem objective.
    """
    y_m = np.asarray(y_m, dtype=float)
    if np.any(y_m < 0):
        raise ValueError("multipliers must be non-negative")
    bp = user.weight * user.price
    ba = user.weight * user.quadratic
    g = np.where(bp < y_m, grid_cap, 0.0)
    quad = ba > 0
    if np.any(quad):
        g[quad] = np.clip((y_m[quad] - bp[quad]) / (2.0 * ba[quad]), 0.0, grid_cap)
    l = np.zeros((len(user.controllable_loads), user.horizon))
    for qi, q in enumerate(user.controllable_loads):
        l[qi] = greedy_load_fill(q, y_m)
    value = float((bp * g + ba * g**2).sum() - y_m @ g + y_m @ l.sum(axis=0))
    return g, l, value


class ControllerLp:
    """The controller's storage LP, with the constraint matrix built once.

    ``warm=True`` re-prices from the previous optimal basis on every call,
    which is much faster inside the dual loop where multipliers move a
    little at a time.  Cold solves are a pure function of ``y``.
    """

    def __init__(self, cfg: ScenarioConfig, warm: bool = False):
        ess = cfg.shared_ess
        self.M, self.N = cfg.n_users, cfg.horizon
        self.A_ub, self.b_ub = _storage_matrix(
            self.M, self.N, ess.charge_eff, ess.discharge_eff, ess.initial_state, ess.min_state, ess.max_state
        )
        mn = self.M * self.N
        self.hi = np.concatenate([np.full(mn, ess.max_charge_per_user), np.full(mn, ess.max_discharge_per_user)])
        self._warm = CostSweepLp(self.A_ub, self.b_ub, np.zeros(2 * mn), self.hi) if warm else None

    def solve(self, y: np.ndarray):
        mn = self.M * self.N
        yv = np.asarray(y, dtype=float).ravel()
        cost = np.concatenate([yv, -yv]) + CONTROLLER_TIE_PENALTY
        if self._warm is not None:
            sol = self._warm.solve(cost)
        else:
            sol = solve_lp(LpProblem(cost, self.A_ub, self.b_ub, lo=np.zeros(2 * mn), hi=self.hi))
        if sol.status != "optimal":
            raise InfeasibleScenarioError(f"controller LP {sol.status}")
        c = sol.x[:mn].reshape(self.M, self.N)
        d = sol.x[mn:].reshape(self.M, self.N)
        return c, d


def controller_subproblem(cfg: ScenarioConfig, y: np.ndarray, lp: ControllerLp | None = None):
    """Storage schedule minimizing sum(y * (c - d)) under the state bounds."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise ValueError("multipliers must be non-negative")
    return (lp or ControllerLp(cfg)).solve(y)


def update_running_average(state: DualState, c_hat: np.ndarray, d_hat: np.ndarray) -> DualState:
    k = state.iter
    if k < 1:
        raise ValueError("running average needs iter >= 1")
    c_avg = ((k - 1) * state.c_avg + c_hat) / k
    d_avg = ((k - 1) * state.d_avg + d_hat) / k
    return replace(state, c_avg=c_avg, d_avg=d_avg)


def compute_subgradient(cfg: ScenarioConfig, g, l, c_avg, d_avg, delta: np.ndarray | None = None) -> SubgradientReport:
    """z = g - sum_q l + net, v = z - c + d (per user, per slot)."""
    delta = cfg.net_matrix() if delta is None else delta
    load = np.vstack([lq.sum(axis=0) if lq.size else np.zeros(cfg.horizon) for lq in l])
    z = np.asarray(g) - load + delta
    return SubgradientReport(z=z, v=z - c_avg + d_avg)


def step_size(opts: SolverOptions, k: int, scale: float = 1.0) -> float:
    base = opts.step0 if opts.step0 is not None else scale
    return base / np.sqrt(k)


def dual_update(state: DualState, v: np.ndarray, opts: SolverOptions, cap=None, scale: float = 1.0) -> DualState:
    """Projected subgradient step on the multipliers, then ``iter += 1``.

    The step at iteration k is ``step0 / sqrt(k)``; a positive residual
    (supply exceeding use) lowers the price, a shortfall raises it.
    ``scale`` stands in for ``step0`` when the options leave it unset.
    """
    alpha = step_size(opts, max(state.iter, 1), scale)
    y = np.maximum(state.y - alpha * v, 0.0)
    if cap is not None:
        y = np.minimum(y, cap)
    return replace(state, y=y, iter=state.iter + 1)


# --------------------------------------------------------------------------
# primal recovery


def primal_recovery(cfg: ScenarioConfig, c_star: np.ndarray, d_star: np.ndarray) -> Schedule:
    """Each user buys grid energy and places its loads with storage fixed."""
    M, N = cfg.n_users, cfg.horizon
    delta = cfg.net_matrix()
    G = np.zeros((M, N))
    L = _empty_loads(cfg)
    for m, u in enumerate(cfg.users):
        G[m], L[m] = _user_recovery(u, delta[m] - c_star[m] + d_star[m], cfg.grid_cap)
    return _assemble(cfg, G, c_star, d_star, L)


def _user_recovery(user: UserProfile, avail: np.ndarray, grid_cap: float):
    """min sum beta f(G) s.t. G + avail - sum L >= 0, loads complete."""
    N = user.horizon
    Q = len(user.controllable_loads)
    if Q == 0 and user.is_linear:
        G = np.maximum(-avail, 0.0)
        return G, np.zeros((0, N))
    cols = _Cols()
    g_idx = _grid_columns(cols, user, grid_cap)
    l_idx = _load_columns(cols, user)
    rows = _Rows()
    for n in range(N):
        coef = {int(j): -1.0 for j in g_idx[n]}
        for slots, idx in l_idx:
            hit = np.flatnonzero(slots == n)
            if hit.size:
                coef[int(idx[hit[0]])] = 1.0
        rows.ub.append((coef, float(avail[n])))
    for q, (slots, idx) in zip(user.controllable_loads, l_idx):
        rows.eq.append(({int(j): 1.0 for j in idx}, q.total_energy))
    cost, lo, hi = cols.arrays()
    A_ub, b_ub, A_eq, b_eq = rows.build(cols.n)
    sol = _solved(LpProblem(cost, A_ub, b_ub, A_eq, b_eq, lo, hi), f"user {user.id} recovery")
    G = sol.x[g_idx].sum(axis=1)
    L = np.zeros((Q, N))
    for qi, (slots, idx) in enumerate(l_idx):
        L[qi, slots] = sol.x[idx]
    return G, L


# --------------------------------------------------------------------------
# distributed loop


@dataclass
class DistributedDiagnostics:
    dual_values: list[float] = field(default_factory=list)
    max_dual_change: list[float] = field(default_factory=list)
    messages: list[int] = field(default_factory=list)
    recovered_costs: list[tuple[int, float]] = field(default_factory=list)
    y_trace: list[np.ndarray] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stop_reason: str = ""
    best_dual_value: float = -np.inf
    final_y: np.ndarray | None = None
    elapsed: float = 0.0

    @property
    def total_messages(self) -> int:
        return int(self.messages[-1]) if self.messages else 0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "dual_value", "max_dual_change", "messages_exchanged"])
            for k, (dv, ch, ms) in enumerate(zip(self.dual_values, self.max_dual_change, self.messages), start=1):
                w.writerow([k, repr(float(dv)), repr(float(ch)), ms])


def _dual_cap(cfg: ScenarioConfig, opts: SolverOptions):
    if opts.y_cap is None:
        return None
    if opts.y_cap == "auto":
        if not cfg.is_linear:
            return None
        return _price_matrix(cfg)
    return float(opts.y_cap)


def _auto_step(cfg: ScenarioConfig) -> float:
    """Default initial step: price scale over energy scale."""
    price = float(_price_matrix(cfg).max(initial=0.0))
    if price <= 0:
        price = 1.0
    energy = float(np.abs(cfg.net_matrix()).max(initial=0.0))
    for u in cfg.users:
        for q in u.controllable_loads:
            energy = max(energy, q.max_rate)
    ess = cfg.shared_ess
    energy = max(energy, ess.max_charge_per_user, ess.max_discharge_per_user, 1e-9)
    return price / energy


def solve_p1_distributed(cfg: ScenarioConfig, opts: SolverOptions | None = None, validate: bool = True):
    """Distributed solution via dual decomposition.

    Returns ``(schedule, diagnostics)``.  Users exchange only their residual
    vectors with the controller; the controller returns multipliers and,
    at the end, the averaged charge/discharge plan.
    """
    opts = opts or SolverOptions()
    if validate:
        _require_valid(cfg)
    t0 = time.perf_counter()
    M = cfg.n_users
    delta = cfg.net_matrix()
    cap = _dual_cap(cfg, opts)
    scale = _auto_step(cfg)
    lp = ControllerLp(cfg, warm=True)
    state = DualState.initial(cfg, opts)
    if cap is not None:
        state.y = np.minimum(state.y, cap)
    diag = DistributedDiagnostics()
    best: Schedule | None = None
    msgs = 0
    still = 0

    def recover():
        nonlocal best
        sched = primal_recovery(cfg, state.c_avg, state.d_avg)
        diag.recovered_costs.append((k, sched.weighted_cost))
        if best is None or sched.weighted_cost < best.weighted_cost:
            best = sched

    for k in range(1, opts.max_iters + 1):
        y_prev = state.y
        avg_prev = (state.c_avg, state.d_avg)
        g = np.zeros_like(delta)
        loads = []
        user_val = 0.0
        for m, u in enumerate(cfg.users):
            g[m], lq, val = user_subproblem(u, y_prev[m], cfg.grid_cap)
            loads.append(lq)
            user_val += val
        c_hat, d_hat = lp.solve(y_prev)
        dual_value = user_val + float(np.sum(y_prev * (c_hat - d_hat))) - float(np.sum(y_prev * delta))
        state = replace(state, best_dual_value=max(state.best_dual_value, dual_value))
        state = update_running_average(state, c_hat, d_hat)
        sg = compute_subgradient(cfg, g, loads, state.c_avg, state.d_avg, delta)
        state = dual_update(state, sg.v, opts, cap, scale)
        msgs += 2 * M  # z_m up, y_m down
        change = float(np.max(np.abs(state.y - y_prev)))
        diag.dual_values.append(dual_value)
        diag.max_dual_change.append(change)
        diag.messages.append(msgs)
        if opts.keep_y_trace:
            diag.y_trace.append(state.y.copy())

        drift = max(float(np.max(np.abs(state.c_avg - avg_prev[0]))), float(np.max(np.abs(state.d_avg - avg_prev[1]))))
        still = still + 1 if max(change, drift) < opts.tol else 0
        stop = None
        if k >= opts.min_iters and still >= opts.stall_window:
            stop = "dual variables converged"
        elif opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit:
            stop = "time limit"
        if k % opts.recover_every == 0 or stop:
            recover()
            lb = state.best_dual_value
            ub = best.weighted_cost
            if ub - lb <= max(opts.gap_tol * abs(ub), opts.gap_abs):
                stop = stop or "duality gap closed"
        if stop:
            diag.converged = stop != "time limit"
            diag.stop_reason = stop
            break
    else:
        recover()
        diag.stop_reason = "iteration limit"
    if not diag.converged:
        gap = best.weighted_cost - state.best_dual_value
        if gap > max(opts.gap_tol * abs(best.weighted_cost), opts.gap_abs):
            warnings.warn(
                f"distributed solver hit its {diag.stop_reason} after {state.iter - 1} iterations with gap "
                f"{gap:.3g}; returning best recovered schedule",
                ConvergenceWarning,
                stacklevel=2,
            )
    msgs += M  # final broadcast of c*, d*
    diag.messages.append(msgs)
    diag.iterations = state.iter - 1
    diag.best_dual_value = state.best_dual_value
    diag.final_y = state.y.copy()
    diag.elapsed = time.perf_counter() - t0
    if opts.trace_path is not None:
        diag.write_csv(opts.trace_path)
    log.debug("distributed solve: %d iters, %s, cost %.6g", diag.iterations, diag.stop_reason, best.weighted_cost)
    return best, diag


# --------------------------------------------------------------------------
# distributed storage benchmark


def solve_p2_distributed_ess(cfg: ScenarioConfig, validate: bool = True) -> Schedule:
    """Benchmark: each user runs its own storage, no exchange between users."""
    if cfg.distributed_ess is None:
        raise ValueError("scenario has no distributed_ess section")
    if validate:
        _require_valid(cfg)
    M, N = cfg.n_users, cfg.horizon
    delta = cfg.net_matrix()
    G = np.zeros((M, N))
    C = np.zeros((M, N))
    D = np.zeros((M, N))
    L = _empty_loads(cfg)
    states = np.zeros((M, N + 1))
    for m, (u, e) in enumerate(zip(cfg.users, cfg.distributed_ess.units)):
        cols = _Cols()
        g_idx = _grid_columns(cols, u, cfg.grid_cap)
        c_idx = cols.add(N, 0.0, e.max_charge)
        d_idx = cols.add(N, 0.0, e.max_discharge)
        l_idx = _load_columns(cols, u)
        rows = _Rows()
        for n in range(N):
            coef = {int(j): -1.0 for j in g_idx[n]}
            coef[int(c_idx[n])] = 1.0
            coef[int(d_idx[n])] = -1.0
            for slots, idx in l_idx:
                hit = np.flatnonzero(slots == n)
                if hit.size:
                    coef[int(idx[hit[0]])] = 1.0
            rows.ub.append((coef, float(delta[m, n])))
        _storage_rows(rows, c_idx[None, :], d_idx[None, :], e.charge_eff, e.discharge_eff, e.initial_state, e.min_state, e.max_state)
        for q, (slots, idx) in zip(u.controllable_loads, l_idx):
            rows.eq.append(({int(j): 1.0 for j in idx}, q.total_energy))
        cost, lo, hi = cols.arrays()
        A_ub, b_ub, A_eq, b_eq = rows.build(cols.n)
        sol = _solved(LpProblem(cost, A_ub, b_ub, A_eq, b_eq, lo, hi), f"user {u.id} private storage")
        x = sol.x
        G[m] = np.maximum(x[g_idx].sum(axis=1), 0.0)
        C[m] = np.clip(x[c_idx], 0.0, e.max_charge)
        D[m] = np.clip(x[d_idx], 0.0, e.max_discharge)
        for qi, (slots, idx) in enumerate(l_idx):
            L[m][qi, slots] = x[idx]
        states[m] = ess_trajectory(e.initial_state, e.charge_eff, e.discharge_eff, C[m], D[m])
    return Schedule(G, C, D, L, states, weighted_cost(cfg, G))


def no_storage_cost(cfg: ScenarioConfig) -> float:
    """Oracle cost with the shared unit removed (zero capacity and rates)."""
    return solve_p1_monolithic(cfg.with_ess(cfg.shared_ess.scaled(0.0)), validate=False).weighted_cost


__all__ = [
    "ConvergenceWarning",
    "ControllerLp",
    "DistributedDiagnostics",
    "DualState",
    "InfeasibleScenarioError",
    "SolverOptions",
    "SubgradientReport",
    "compute_subgradient",
    "controller_subproblem",
    "dual_update",
    "greedy_load_fill",
    "net_profile",
    "no_storage_cost",
    "primal_recovery",
    "solve_p1_distributed",
    "solve_p1_monolithic",
    "solve_p2_distributed_ess",
    "update_running_average",
    "user_subproblem",
]
