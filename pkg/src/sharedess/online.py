"""Real-time policies run slot by slot on realized net profiles.

Three controllers are provided:

* ``rhc``  re-plans slots n..N at every slot with the realized profile for
  slot n and forecasts afterwards, then commits slot n only.
* ``ps``   proportional sharing: deficit users report their shortfall and the
  controller splits the available stored energy in proportion to it.
* ``obf``  one-bit feedback: deficit users only raise a flag and the
  controller splits the available energy evenly among flagged users.

PS and OBF place controllable loads with the "spread the remainder evenly"
rule of :func:`modified_ctrl_load`, which always finishes every load.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .model import (
    ControllableLoad,
    ScenarioConfig,
    Schedule,
    UserProfile,
    _grid_need,
    check_schedule,
    ess_trajectory,
    weighted_cost,
)
from .offline import SolverOptions, solve_p1_distributed, solve_p1_monolithic

POLICIES = ("rhc", "ps", "obf")
FLOAT_BITS = 64
LOAD_TOL = 1e-9


class OnlinePolicyError(RuntimeError):
    """A policy produced an infeasible ledger.  Always a bug, never data."""

    def __init__(self, msg: str, violations: Sequence[str] = ()):
        super().__init__(msg + ("\n  " + "\n  ".join(violations) if violations else ""))
        self.violations = list(violations)


@dataclass(frozen=True)
class PredictionErrorModel:
    variance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.variance >= 0:
            raise ValueError(f"variance must be >= 0, got {self.variance}")


@dataclass
class OnlineState:
    """Everything a policy knows before deciding ``slot`` (0-based)."""

    slot: int
    ess_state: float
    remaining_energy: list[np.ndarray]
    realized_net: np.ndarray
    ledger: Schedule

    @classmethod
    def initial(cls, cfg: ScenarioConfig) -> "OnlineState":
        M, N = cfg.n_users, cfg.horizon
        z = np.zeros((M, N))
        ledger = Schedule(
            grid=z.copy(),
            charge=z.copy(),
            discharge=z.copy(),
            ctrl_load=[np.zeros((len(u.controllable_loads), N)) for u in cfg.users],
            ess_states=np.full(N + 1, cfg.shared_ess.initial_state),
            weighted_cost=0.0,
        )
        remaining = [np.array([q.total_energy for q in u.controllable_loads], dtype=float) for u in cfg.users]
        return cls(0, cfg.shared_ess.initial_state, remaining, np.zeros((M, 0)), ledger)


@dataclass
class SlotDecision:
    grid: np.ndarray
    charge: np.ndarray
    discharge: np.ndarray
    loads: list[np.ndarray]
    next_state: float
    bits_up: np.ndarray
    bits_down: int = 0


@dataclass
class OnlineRunResult:
    policy: str
    seed: int
    sigma2: float
    cost: float
    feasible: bool
    schedule: Schedule
    realized_net: np.ndarray
    bits_up: int
    bits_down: int
    messages: int
    trace: list[tuple] = field(default_factory=list)

    @property
    def bits(self) -> int:
        return self.bits_up + self.bits_down


@dataclass(frozen=True)
class RhcOptions:
    solver: str = "monolithic"
    solver_options: SolverOptions | None = None

    def __post_init__(self):
        if self.solver not in ("monolithic", "distributed"):
            raise ValueError("solver must be 'monolithic' or 'distributed'")


# --------------------------------------------------------------------------
# helpers


def sample_realization(cfg: ScenarioConfig, model: PredictionErrorModel) -> np.ndarray:
    """Forecast net profile plus i.i.d. Gaussian error, reproducible per seed."""
    base = cfg.net_matrix()
    if model.variance == 0:
        return base.copy()
    rng = np.random.default_rng(model.seed)
    return base + rng.normal(0.0, math.sqrt(model.variance), size=base.shape)


def realized_scenario(cfg: ScenarioConfig, net: np.ndarray) -> ScenarioConfig:
    """Scenario whose users have net profile ``net``; grid cap raised if needed."""
    users = tuple(
        UserProfile.from_net(u.id, net[m], u.price, u.weight, u.controllable_loads, u.quadratic)
        for m, u in enumerate(cfg.users)
    )
    out = replace(cfg, users=users)
    return replace(out, grid_cap=max(float(cfg.grid_cap), _grid_need(out)))


def modified_ctrl_load(load: ControllableLoad, remaining: float, slot: int) -> float:
    """Even spread of the unmet energy over the rest of the window; ``slot`` is 1-based."""
    if slot < load.start_slot or slot > load.end_slot:
        return 0.0
    left = load.end_slot - slot + 1
    return float(min(max(max(remaining, 0.0) / left, load.min_rate), load.max_rate))


def modified_net_profile(user: UserProfile, remaining: Sequence[float], slot: int, realized: float) -> float:
    """Realized net energy minus the modified controllable consumption at ``slot`` (1-based)."""
    total = sum(modified_ctrl_load(q, remaining[qi], slot) for qi, q in enumerate(user.controllable_loads))
    return float(realized - total)


def _modified_loads(cfg: ScenarioConfig, state: OnlineState) -> list[np.ndarray]:
    n = state.slot + 1
    return [
        np.array([modified_ctrl_load(q, state.remaining_energy[m][qi], n) for qi, q in enumerate(u.controllable_loads)])
        for m, u in enumerate(cfg.users)
    ]


def _heuristic_step(cfg: ScenarioConfig, state: OnlineState, realized: np.ndarray, share: Callable) -> SlotDecision:
    """Common body of the PS and OBF controllers; ``share`` maps deficits to offers."""
    ess = cfg.shared_ess
    M = cfg.n_users
    loads = _modified_loads(cfg, state)
    tilde = np.array([realized[m] - loads[m].sum() for m in range(M)])
    deficit = tilde < 0
    G = np.zeros(M)
    C = np.zeros(M)
    D = np.zeros(M)
    s = state.ess_state

    # surplus users store what fits, in user order; the rest is curtailed
    room = max(ess.max_state - s, 0.0) / ess.charge_eff
    for m in np.flatnonzero(tilde > 0):
        C[m] = min(tilde[m], ess.max_charge_per_user, room)
        room -= C[m]

    if deficit.any():
        need = -tilde[deficit]
        avail = min(ess.discharge_eff * max(s - ess.min_state, 0.0), M * ess.max_discharge_per_user)
        offer = share(avail, need)
        D[deficit] = np.minimum(offer, np.minimum(ess.max_discharge_per_user, need))
        G[deficit] = need - D[deficit]

    nxt = s + ess.charge_eff * C.sum() - D.sum() / ess.discharge_eff
    assert ess.min_state - 1e-9 <= nxt <= ess.max_state + 1e-9, nxt
    nxt = min(max(nxt, ess.min_state), ess.max_state)
    return SlotDecision(G, C, D, loads, nxt, np.zeros(M, dtype=np.int64), int(deficit.sum()) * FLOAT_BITS)


def _proportional(avail: float, need: np.ndarray) -> np.ndarray:
    gamma = avail / need.sum()
    return gamma * need


def _even(avail: float, need: np.ndarray) -> np.ndarray:
    return np.full(need.shape, avail / need.size)


def ps_step(cfg: ScenarioConfig, state: OnlineState, realized: np.ndarray) -> SlotDecision:
    dec = _heuristic_step(cfg, state, realized, _proportional)
    # each deficit user reports its shortfall as one float
    dec.bits_up = np.where(dec.grid + dec.discharge > 0, FLOAT_BITS, 0).astype(np.int64)
    return dec


def obf_step(cfg: ScenarioConfig, state: OnlineState, realized: np.ndarray) -> SlotDecision:
    dec = _heuristic_step(cfg, state, realized, _even)
    dec.bits_up = np.ones(cfg.n_users, dtype=np.int64)
    return dec


def _window_scenario(cfg: ScenarioConfig, state: OnlineState, net: np.ndarray, grid_cap: float) -> ScenarioConfig:
    """Slots n..N as a fresh instance; loads keep only their unmet energy."""
    n = state.slot
    users = []
    for m, u in enumerate(cfg.users):
        loads = []
        for qi, q in enumerate(u.controllable_loads):
            if q.end_slot < n + 1:
                continue
            start = max(q.start_slot, n + 1) - n
            loads.append(replace(q, start_slot=start, end_slot=q.end_slot - n, total_energy=float(max(state.remaining_energy[m][qi], 0.0))))
        users.append(UserProfile.from_net(u.id, net[m, n:], u.price[n:], u.weight, loads, u.quadratic[n:]))
    ess = cfg.shared_ess
    s = min(max(state.ess_state, ess.min_state), ess.max_state)
    return ScenarioConfig(cfg.horizon - n, tuple(users), replace(ess, initial_state=s), grid_cap=grid_cap)


def rhc_step(
    cfg: ScenarioConfig,
    state: OnlineState,
    realized: np.ndarray,
    forecast: np.ndarray | None = None,
    opts: RhcOptions | None = None,
    grid_cap: float | None = None,
) -> SlotDecision:
    """Plan slots n..N with realized slot n and forecasts after it; commit slot n."""
    opts = opts or RhcOptions()
    net = (cfg.net_matrix() if forecast is None else np.array(forecast, dtype=float)).copy()
    net[:, state.slot] = realized
    sub = _window_scenario(cfg, state, net, grid_cap if grid_cap is not None else float(cfg.grid_cap))
    if opts.solver == "monolithic":
        plan = solve_p1_monolithic(sub, validate=False)
    else:
        plan, diag = solve_p1_distributed(sub, opts.solver_options, validate=False)
    M = cfg.n_users
    loads = []
    for m, u in enumerate(cfg.users):
        row = np.zeros(len(u.controllable_loads))
        k = 0
        for qi, q in enumerate(u.controllable_loads):
            if q.end_slot < state.slot + 1:
                continue
            row[qi] = plan.ctrl_load[m][k, 0]
            if q.end_slot == state.slot + 1:
                row[qi] = state.remaining_energy[m][qi]
            k += 1
        loads.append(row)
    C, D = plan.charge[:, 0].copy(), plan.discharge[:, 0].copy()
    ess = cfg.shared_ess
    nxt = min(max(float(plan.ess_states[1]), ess.min_state), ess.max_state)
    # uplink: each user's window profile, once or once per iteration;
    # downlink: the committed storage decisions, or every multiplier broadcast
    rounds = 1 if opts.solver == "monolithic" else diag.iterations
    bits = np.full(M, FLOAT_BITS * sub.horizon * rounds, dtype=np.int64)
    down = FLOAT_BITS * M * (2 if rounds == 1 else sub.horizon * rounds + 2)
    dec = SlotDecision(plan.grid[:, 0].copy(), C, D, loads, nxt, bits, down)
    # the grid absorbs any rounding left by the final-slot load completion
    for m in range(M):
        short = dec.grid[m] - C[m] + D[m] + realized[m] - loads[m].sum()
        if short < 0:
            dec.grid[m] -= short
    return dec


# --------------------------------------------------------------------------
# driver


def _commit(cfg: ScenarioConfig, state: OnlineState, realized: np.ndarray, dec: SlotDecision) -> OnlineState:
    n = state.slot
    led = state.ledger
    led.grid[:, n] = dec.grid
    led.charge[:, n] = dec.charge
    led.discharge[:, n] = dec.discharge
    remaining = []
    for m in range(cfg.n_users):
        led.ctrl_load[m][:, n] = dec.loads[m]
        remaining.append(state.remaining_energy[m] - dec.loads[m])
    ess = cfg.shared_ess
    led.ess_states[n + 1] = float(
        ess_trajectory(state.ess_state, ess.charge_eff, ess.discharge_eff, dec.charge.sum(), dec.discharge.sum())[1]
    )
    realized_net = np.hstack([state.realized_net, realized[:, None]])
    return OnlineState(n + 1, float(led.ess_states[n + 1]), remaining, realized_net, led)


def _simulate(cfg: ScenarioConfig, policy: str, net: np.ndarray, rhc: RhcOptions | None):
    real_cfg = realized_scenario(cfg, net)
    forecast = cfg.net_matrix()
    state = OnlineState.initial(cfg)
    trace = []
    bits_up = 0
    bits_down = 0
    messages = 0
    for n in range(cfg.horizon):
        col = net[:, n]
        if policy == "ps":
            dec = ps_step(cfg, state, col)
        elif policy == "obf":
            dec = obf_step(cfg, state, col)
        else:
            dec = rhc_step(cfg, state, col, forecast, rhc, grid_cap=real_cfg.grid_cap)
        s_before = state.ess_state
        state = _commit(cfg, state, col, dec)
        bits_up += int(dec.bits_up.sum())
        bits_down += dec.bits_down
        messages += int(np.count_nonzero(dec.bits_up)) + (1 if dec.bits_down else 0)
        for m in range(cfg.n_users):
            trace.append(
                (n + 1, cfg.users[m].id, dec.charge[m], dec.discharge[m], dec.grid[m], float(dec.loads[m].sum()), s_before, int(dec.bits_up[m]))
            )
    led = state.ledger
    # drift between the committed states and a fresh recursion stays at rounding level
    ess = cfg.shared_ess
    led.ess_states = ess_trajectory(ess.initial_state, ess.charge_eff, ess.discharge_eff, led.charge.sum(axis=0), led.discharge.sum(axis=0))
    led.weighted_cost = weighted_cost(cfg, led.grid)
    return real_cfg, state, trace, bits_up, bits_down, messages


def run_once(cfg: ScenarioConfig, policy: str, model: PredictionErrorModel, rhc: RhcOptions | None = None) -> OnlineRunResult:
    """One realization, one policy, with the feasibility audit."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
    net = sample_realization(cfg, model)
    real_cfg, state, trace, up, down, msgs = _simulate(cfg, policy, net, rhc)
    led = state.ledger
    rep = check_schedule(real_cfg, led)
    for m, u in enumerate(cfg.users):
        for qi, q in enumerate(u.controllable_loads):
            got = float(led.ctrl_load[m][qi].sum())
            if abs(got - q.total_energy) > LOAD_TOL * max(1.0, q.total_energy):
                rep.add("load completion", f"user {u.id} load {q.id}", f"delivered {got!r} of {q.total_energy!r}")
    if not rep.ok:
        raise OnlinePolicyError(f"{policy} produced an infeasible ledger (seed {model.seed}, variance {model.variance})", rep.lines())
    return OnlineRunResult(policy, model.seed, model.variance, led.weighted_cost, True, led, net, up, down, msgs, trace)


def _run_star(args):
    return run_once(*args)


def run_online(
    cfg: ScenarioConfig,
    policy: str,
    model: PredictionErrorModel,
    n_runs: int = 1,
    rhc: RhcOptions | None = None,
    jobs: int = 1,
) -> list[OnlineRunResult]:
    """Run ``n_runs`` realizations; run i uses seed ``model.seed + i``."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    tasks = [(cfg, policy, replace(model, seed=model.seed + i), rhc) for i in range(n_runs)]
    if jobs > 1 and n_runs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(_run_star, tasks))
    else:
        out = [run_once(*t) for t in tasks]
    return sorted(out, key=lambda r: r.seed)


def hindsight_cost(cfg: ScenarioConfig, net: np.ndarray) -> float:
    """Off-line optimum had the realized profile been known in advance."""
    return solve_p1_monolithic(realized_scenario(cfg, net), validate=False).weighted_cost


def summarize(results: Sequence[OnlineRunResult]) -> dict:
    costs = np.array([r.cost for r in results])
    return {
        "policy": results[0].policy,
        "sigma2": results[0].sigma2,
        "runs": len(results),
        "mean_cost": float(costs.mean()),
        "std_cost": float(costs.std(ddof=1)) if len(costs) > 1 else 0.0,
        "mean_bits": float(np.mean([r.bits for r in results])),
        "feasible_rate": float(np.mean([r.feasible for r in results])),
    }


TRACE_HEADER = ["run", "slot", "user", "C", "D", "G", "sum_L", "S_n", "bits_sent"]
SUMMARY_HEADER = ["policy", "sigma2", "mean_cost", "std_cost", "mean_bits"]


def write_trace_csv(results: Sequence[OnlineRunResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for r in results:
            for row in r.trace:
                w.writerow([r.seed, row[0], row[1], *(repr(float(x)) for x in row[2:7]), row[7]])


def write_summary_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for s in rows:
            w.writerow([s["policy"], repr(float(s["sigma2"])), repr(s["mean_cost"]), repr(s["std_cost"]), repr(s["mean_bits"])])
