"""Domain types for users sharing one storage unit, plus the schedule checker.

Slots are 1-based everywhere a user sees them (JSON files, CSV output,
violation messages).  Internally arrays are indexed from 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

WEIGHT_TOL = 1e-9
CHECK_TOL = 1e-6
STATE_TOL = 1e-9


def _vec(x, n: int | None = None, name: str = "vector") -> np.ndarray:
    a = np.array(x, dtype=float)
    if a.ndim == 0 and n is not None:
        a = np.full(n, float(a))
    a = a.ravel()
    a.setflags(write=False)
    if n is not None and a.shape[0] != n:
        raise ValueError(f"{name} has length {a.shape[0]}, expected {n}")
    return a


@dataclass(frozen=True)
class ControllableLoad:
    id: str
    start_slot: int
    end_slot: int
    total_energy: float
    min_rate: float
    max_rate: float

    @property
    def window_len(self) -> int:
        return self.end_slot - self.start_slot + 1

    def window(self) -> slice:
        """0-based slice covering the load's slots."""
        return slice(self.start_slot - 1, self.end_slot)

    def mask(self, horizon: int) -> np.ndarray:
        m = np.zeros(horizon, dtype=bool)
        m[self.window()] = True
        return m


@dataclass(frozen=True)
class UserProfile:
    id: str
    fixed_load: np.ndarray
    renewable: np.ndarray
    controllable_loads: tuple[ControllableLoad, ...] = ()
    weight: float = 1.0
    price: np.ndarray | None = None
    quadratic: np.ndarray | None = None

    def __post_init__(self):
        n = len(np.ravel(self.fixed_load))
        object.__setattr__(self, "fixed_load", _vec(self.fixed_load, name="fixed_load"))
        object.__setattr__(self, "renewable", _vec(self.renewable, name="renewable"))
        object.__setattr__(self, "controllable_loads", tuple(self.controllable_loads))
        price = np.zeros(n) if self.price is None else self.price
        quad = np.zeros(n) if self.quadratic is None else self.quadratic
        object.__setattr__(self, "price", _vec(price, n, "price"))
        object.__setattr__(self, "quadratic", _vec(quad, n, "quadratic"))

    @property
    def horizon(self) -> int:
        return self.fixed_load.shape[0]

    @property
    def is_linear(self) -> bool:
        return not np.any(self.quadratic > 0)

    @classmethod
    def from_net(cls, id: str, net, price, weight: float, loads=(), quadratic=None) -> "UserProfile":
        """Build a user whose net profile (renewable minus fixed load) is ``net``."""
        net = np.asarray(net, dtype=float)
        return cls(
            id=id,
            fixed_load=np.maximum(-net, 0.0),
            renewable=np.maximum(net, 0.0),
            controllable_loads=tuple(loads),
            weight=weight,
            price=np.broadcast_to(np.asarray(price, dtype=float), net.shape),
            quadratic=quadratic,
        )

    def cost(self, grid: np.ndarray) -> np.ndarray:
        """Per-slot unweighted cost f_n(G_n)."""
        return self.price * grid + self.quadratic * grid**2


@dataclass(frozen=True)
class SharedEssSpec:
    min_state: float
    max_state: float
    initial_state: float
    max_charge_per_user: float
    max_discharge_per_user: float
    charge_eff: float
    discharge_eff: float

    def scaled(self, rho: float) -> "SharedEssSpec":
        """Capacity, floor, start level and rates multiplied by ``rho``."""
        return replace(
            self,
            min_state=rho * self.min_state,
            max_state=rho * self.max_state,
            initial_state=rho * self.initial_state,
            max_charge_per_user=rho * self.max_charge_per_user,
            max_discharge_per_user=rho * self.max_discharge_per_user,
        )


@dataclass(frozen=True)
class EssUnit:
    """One user's private storage in the distributed benchmark."""

    min_state: float
    max_state: float
    initial_state: float
    max_charge: float
    max_discharge: float
    charge_eff: float
    discharge_eff: float

    def scaled(self, rho: float) -> "EssUnit":
        return replace(
            self,
            min_state=rho * self.min_state,
            max_state=rho * self.max_state,
            initial_state=rho * self.initial_state,
            max_charge=rho * self.max_charge,
            max_discharge=rho * self.max_discharge,
        )


@dataclass(frozen=True)
class DistributedEssSpec:
    units: tuple[EssUnit, ...]

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))

    @classmethod
    def equal_split(cls, shared: SharedEssSpec, n_users: int) -> "DistributedEssSpec":
        """Split a shared unit so per-user bounds and rates sum to the shared ones."""
        k = float(n_users)
        unit = EssUnit(
            min_state=shared.min_state / k,
            max_state=shared.max_state / k,
            initial_state=shared.initial_state / k,
            max_charge=shared.max_charge_per_user / k,
            max_discharge=shared.max_discharge_per_user / k,
            charge_eff=shared.charge_eff,
            discharge_eff=shared.discharge_eff,
        )
        return cls(tuple(unit for _ in range(n_users)))

    def scaled(self, rho: float) -> "DistributedEssSpec":
        return DistributedEssSpec(tuple(u.scaled(rho) for u in self.units))


@dataclass(frozen=True)
class ScenarioConfig:
    horizon: int
    users: tuple[UserProfile, ...]
    shared_ess: SharedEssSpec
    distributed_ess: DistributedEssSpec | None = None
    grid_cap: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        if self.grid_cap is None:
            cap = max(default_grid_cap(self.users, self.horizon), _grid_need(self))
            object.__setattr__(self, "grid_cap", cap)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def weights(self) -> np.ndarray:
        return np.array([u.weight for u in self.users])

    @property
    def is_linear(self) -> bool:
        return all(u.is_linear for u in self.users)

    def net_matrix(self) -> np.ndarray:
        return np.vstack([net_profile(u) for u in self.users])

    def with_ess(self, shared: SharedEssSpec, distributed: DistributedEssSpec | None = None) -> "ScenarioConfig":
        return replace(self, shared_ess=shared, distributed_ess=distributed)


def peak_demand(users: Sequence[UserProfile], horizon: int) -> float:
    """Largest slot total of fixed load plus every load's maximum rate."""
    tot = np.zeros(horizon)
    for u in users:
        tot += u.fixed_load
        for q in u.controllable_loads:
            tot[q.window()] += q.max_rate
    return float(tot.max(initial=0.0))


def default_grid_cap(users: Sequence[UserProfile], horizon: int) -> float:
    return max(10.0 * peak_demand(users, horizon), 1.0)


@dataclass
class Schedule:
    grid: np.ndarray
    charge: np.ndarray
    discharge: np.ndarray
    ctrl_load: list[np.ndarray]
    ess_states: np.ndarray
    weighted_cost: float

    @property
    def n_users(self) -> int:
        return self.grid.shape[0]

    @property
    def horizon(self) -> int:
        return self.grid.shape[1]

    def load_totals(self) -> np.ndarray:
        """M x N matrix of controllable consumption summed over each user's loads."""
        return np.vstack([lq.sum(axis=0) if lq.size else np.zeros(self.horizon) for lq in self.ctrl_load])


# --------------------------------------------------------------------------
# operations


def net_profile(user: UserProfile) -> np.ndarray:
    r, l = user.renewable, user.fixed_load
    if r.shape != l.shape:
        raise ValueError(f"renewable length {r.shape[0]} != fixed_load length {l.shape[0]}")
    return r - l


def weighted_cost(cfg: ScenarioConfig, grid: np.ndarray) -> float:
    return float(sum(u.weight * u.cost(grid[m]).sum() for m, u in enumerate(cfg.users)))


def ess_trajectory(initial: float, charge_eff: float, discharge_eff: float, charge, discharge) -> np.ndarray:
    """States S_1..S_{N+1} from aggregate per-slot charge/discharge."""
    charge = np.asarray(charge, dtype=float)
    discharge = np.asarray(discharge, dtype=float)
    step = charge_eff * charge - discharge / discharge_eff
    return np.concatenate([[initial], initial + np.cumsum(step)])


@dataclass
class Violation:
    constraint: str
    location: str
    detail: str

    def __str__(self) -> str:
        return f"[{self.constraint}] {self.location}: {self.detail}"


@dataclass
class Report:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, constraint: str, location: str, detail: str) -> None:
        self.violations.append(Violation(constraint, location, detail))

    def __bool__(self) -> bool:
        return self.ok

    def lines(self) -> list[str]:
        return [str(v) for v in self.violations]


def _check_ess(rep, label, spec_min, spec_max, s1, ce, de):
    if not (0.0 <= spec_min <= spec_max):
        rep.add("ess", label, f"need 0 <= min_state ({spec_min}) <= max_state ({spec_max})")
    if not (spec_min <= s1 <= spec_max):
        rep.add("ess", label, f"initial_state {s1} outside [{spec_min}, {spec_max}]")
    for name, eff in (("charge_eff", ce), ("discharge_eff", de)):
        if not (0.0 < eff <= 1.0):
            rep.add("ess", label, f"{name} {eff} not in (0, 1]")


def validate_scenario(cfg: ScenarioConfig) -> Report:
    """Collect every violated scenario invariant; never raises."""
    rep = Report()
    N, M = cfg.horizon, cfg.n_users
    if N < 1:
        rep.add("scenario", "horizon", f"horizon {N} < 1")
    if M < 1:
        rep.add("scenario", "users", "no users")
    wsum = float(sum(u.weight for u in cfg.users))
    if M and abs(wsum - 1.0) > WEIGHT_TOL:
        rep.add("weights", "users", f"weights sum {wsum:.12g} != 1")
    for u in cfg.users:
        loc = f"user {u.id}"
        if not (0.0 <= u.weight <= 1.0):
            rep.add("weights", loc, f"weight {u.weight} outside [0, 1]")
        for name in ("fixed_load", "renewable", "price", "quadratic"):
            v = getattr(u, name)
            if v.shape[0] != N:
                rep.add("length", loc, f"{name} has {v.shape[0]} slots, horizon is {N}")
            elif np.any(v < 0) or not np.all(np.isfinite(v)):
                bad = int(np.flatnonzero((v < 0) | ~np.isfinite(v))[0]) + 1
                rep.add("sign", f"{loc} slot {bad}", f"{name} must be finite and >= 0")
        for q in u.controllable_loads:
            qloc = f"{loc} load {q.id}"
            if not (1 <= q.start_slot < q.end_slot <= N):
                rep.add("load-window", qloc, f"need 1 <= start ({q.start_slot}) < end ({q.end_slot}) <= {N}")
            if not (0.0 <= q.min_rate < q.max_rate):
                rep.add("load-rate", qloc, f"need 0 <= min_rate ({q.min_rate}) < max_rate ({q.max_rate})")
            w = q.window_len
            if not (w * q.min_rate - 1e-9 <= q.total_energy <= w * q.max_rate + 1e-9):
                rep.add(
                    "schedulable",
                    qloc,
                    f"total_energy {q.total_energy} outside [{w * q.min_rate}, {w * q.max_rate}] for {w} slots",
                )
    ess = cfg.shared_ess
    _check_ess(rep, "shared_ess", ess.min_state, ess.max_state, ess.initial_state, ess.charge_eff, ess.discharge_eff)
    if ess.max_charge_per_user < 0 or ess.max_discharge_per_user < 0:
        rep.add("ess", "shared_ess", "charge/discharge rates must be >= 0")
    if cfg.distributed_ess is not None:
        if len(cfg.distributed_ess.units) != M:
            rep.add("ess", "distributed_ess", f"{len(cfg.distributed_ess.units)} units for {M} users")
        for k, e in enumerate(cfg.distributed_ess.units):
            lab = f"distributed_ess unit {k + 1}"
            _check_ess(rep, lab, e.min_state, e.max_state, e.initial_state, e.charge_eff, e.discharge_eff)
            if e.max_charge < 0 or e.max_discharge < 0:
                rep.add("ess", lab, "charge/discharge rates must be >= 0")
    need = _grid_need(cfg)
    if cfg.grid_cap is None or not cfg.grid_cap >= need - 1e-9:
        rep.add("grid_cap", "scenario", f"grid_cap {cfg.grid_cap} below required {need:.6g}")
    return rep


def _grid_need(cfg: ScenarioConfig) -> float:
    """Grid purchase that always covers a user's worst slot, even while charging."""
    if not cfg.users:
        return 0.0
    rate = max(cfg.shared_ess.max_charge_per_user, 0.0)
    if cfg.distributed_ess is not None and cfg.distributed_ess.units:
        rate = max(rate, max(e.max_charge for e in cfg.distributed_ess.units))
    worst = 0.0
    for u in cfg.users:
        d = u.fixed_load.copy()
        for q in u.controllable_loads:
            lo, hi = max(q.start_slot - 1, 0), min(q.end_slot, d.shape[0])
            d[lo:hi] += q.max_rate
        worst = max(worst, float(d.max(initial=0.0)))
    return worst + rate


def check_schedule(cfg: ScenarioConfig, sched: Schedule, tol: float = CHECK_TOL, net: np.ndarray | None = None) -> Report:
    """Verify every schedule constraint.

    ``net`` overrides the forecast net profile (used for realized online
    runs).  The storage trajectory is recomputed from the charge/discharge
    matrices and must match ``sched.ess_states`` within 1e-9 kWh.
    """
    rep = Report()
    M, N = cfg.n_users, cfg.horizon
    G, C, D = sched.grid, sched.charge, sched.discharge
    for name, X in (("grid", G), ("charge", C), ("discharge", D)):
        if X.shape != (M, N):
            rep.add("shape", name, f"shape {X.shape} != {(M, N)}")
            return rep
        neg = np.argwhere(X < -tol)
        for m, n in neg[:5]:
            rep.add("sign", f"user {m + 1} slot {n + 1}", f"{name} = {X[m, n]:.6g} < 0")
    over = np.argwhere(G > cfg.grid_cap + tol)
    for m, n in over[:5]:
        rep.add("grid_cap", f"user {m + 1} slot {n + 1}", f"grid {G[m, n]:.6g} > {cfg.grid_cap:.6g}")

    states = np.asarray(sched.ess_states, dtype=float)
    if states.ndim == 1:
        ess = cfg.shared_ess
        for name, X, cap in (("charge", C, ess.max_charge_per_user), ("discharge", D, ess.max_discharge_per_user)):
            for m, n in np.argwhere(X > cap + tol)[:5]:
                rep.add("rate", f"user {m + 1} slot {n + 1}", f"{name} {X[m, n]:.6g} > {cap:.6g}")
        traj = ess_trajectory(ess.initial_state, ess.charge_eff, ess.discharge_eff, C.sum(axis=0), D.sum(axis=0))
        _check_states(rep, "shared", states, traj, ess.min_state, ess.max_state, tol)
    else:
        units = cfg.distributed_ess.units if cfg.distributed_ess is not None else ()
        if states.shape != (M, N + 1) or len(units) != M:
            rep.add("shape", "ess_states", f"distributed states shape {states.shape} invalid")
        else:
            for m, e in enumerate(units):
                for name, x, cap in (("charge", C[m], e.max_charge), ("discharge", D[m], e.max_discharge)):
                    for n in np.flatnonzero(x > cap + tol)[:5]:
                        rep.add("rate", f"user {m + 1} slot {n + 1}", f"{name} {x[n]:.6g} > {cap:.6g}")
                traj = ess_trajectory(e.initial_state, e.charge_eff, e.discharge_eff, C[m], D[m])
                _check_states(rep, f"user {m + 1}", states[m], traj, e.min_state, e.max_state, tol)

    if len(sched.ctrl_load) != M:
        rep.add("shape", "ctrl_load", f"{len(sched.ctrl_load)} users != {M}")
        return rep
    for m, u in enumerate(cfg.users):
        Lm = np.asarray(sched.ctrl_load[m], dtype=float).reshape(len(u.controllable_loads), N)
        for qi, q in enumerate(u.controllable_loads):
            loc = f"user {u.id} load {q.id}"
            row = Lm[qi]
            inside = q.mask(N)
            tot = float(row.sum())
            if abs(tot - q.total_energy) > tol * max(1.0, q.total_energy):
                rep.add("load energy", loc, f"sum {tot:.9g} != {q.total_energy:.9g}")
            for n in np.flatnonzero(inside & ((row < q.min_rate - tol) | (row > q.max_rate + tol)))[:5]:
                rep.add("load rate", f"{loc} slot {n + 1}", f"{row[n]:.6g} outside [{q.min_rate}, {q.max_rate}]")
            for n in np.flatnonzero(~inside & (np.abs(row) > tol))[:5]:
                rep.add("load window", f"{loc} slot {n + 1}", f"{row[n]:.6g} outside window")
    delta = cfg.net_matrix() if net is None else np.asarray(net, dtype=float)
    resid = G - C + D + delta - sched.load_totals()
    for m, n in np.argwhere(resid < -tol * np.maximum(1.0, np.abs(delta)))[:10]:
        rep.add("balance", f"user {m + 1} slot {n + 1}", f"residual {resid[m, n]:.6g} < 0")
    return rep


def _check_states(rep, label, states, traj, smin, smax, tol):
    if states.shape != traj.shape:
        rep.add("shape", f"{label} ess_states", f"length {states.shape} != {traj.shape}")
        return
    gap = np.abs(states - traj)
    if gap.max(initial=0.0) > STATE_TOL * max(1.0, float(np.abs(traj).max(initial=0.0))):
        n = int(np.argmax(gap))
        rep.add("state recursion", f"{label} state {n + 1}", f"stored {states[n]:.9g} != recomputed {traj[n]:.9g}")
    for n in np.flatnonzero(traj[1:] < smin - tol)[:5]:
        rep.add("min state", f"{label} slot {n + 1}", f"state {traj[n + 1]:.6g} < {smin:.6g}")
    for n in np.flatnonzero(traj[1:] > smax + tol)[:5]:
        rep.add("max state", f"{label} slot {n + 1}", f"state {traj[n + 1]:.6g} > {smax:.6g}")


# --------------------------------------------------------------------------
# JSON I/O


def _num_list(a) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def scenario_to_dict(cfg: ScenarioConfig, meta: dict[str, Any] | None = None) -> dict[str, Any]:
    d: dict[str, Any] = {}
    if meta:
        d["meta"] = meta
    d["horizon"] = cfg.horizon
    d["grid_cap"] = float(cfg.grid_cap)
    d["users"] = [
        {
            "id": u.id,
            "weight": float(u.weight),
            "fixed_load": _num_list(u.fixed_load),
            "renewable": _num_list(u.renewable),
            "cost_coeffs": {"price": _num_list(u.price), "quadratic": _num_list(u.quadratic)},
            "controllable_loads": [
                {
                    "id": q.id,
                    "start_slot": int(q.start_slot),
                    "end_slot": int(q.end_slot),
                    "total_energy": float(q.total_energy),
                    "min_rate": float(q.min_rate),
                    "max_rate": float(q.max_rate),
                }
                for q in u.controllable_loads
            ],
        }
        for u in cfg.users
    ]
    e = cfg.shared_ess
    d["shared_ess"] = {k: float(getattr(e, k)) for k in SharedEssSpec.__dataclass_fields__}
    if cfg.distributed_ess is not None:
        d["distributed_ess"] = {
            "units": [{k: float(getattr(x, k)) for k in EssUnit.__dataclass_fields__} for x in cfg.distributed_ess.units]
        }
    return d


class ScenarioFormatError(ValueError):
    pass


def _per_slot(v, N):
    if v is None:
        return np.zeros(N)
    if np.isscalar(v):
        return np.full(N, float(v))
    return v


def scenario_from_dict(d: dict[str, Any]) -> ScenarioConfig:
    try:
        N = int(d["horizon"])
        users = []
        for i, ud in enumerate(d["users"]):
            cc = ud.get("cost_coeffs", {})
            loads = tuple(
                ControllableLoad(
                    id=str(q.get("id", f"q{j + 1}")),
                    start_slot=int(q["start_slot"]),
                    end_slot=int(q["end_slot"]),
                    total_energy=float(q["total_energy"]),
                    min_rate=float(q.get("min_rate", 0.0)),
                    max_rate=float(q["max_rate"]),
                )
                for j, q in enumerate(ud.get("controllable_loads", []))
            )
            users.append(
                UserProfile(
                    id=str(ud.get("id", i + 1)),
                    fixed_load=ud["fixed_load"],
                    renewable=ud["renewable"],
                    controllable_loads=loads,
                    weight=float(ud["weight"]),
                    price=_per_slot(cc.get("price"), N),
                    quadratic=_per_slot(cc.get("quadratic"), N),
                )
            )
        shared = SharedEssSpec(**{k: float(d["shared_ess"][k]) for k in SharedEssSpec.__dataclass_fields__})
        dist = None
        if d.get("distributed_ess") is not None:
            dist = DistributedEssSpec(
                tuple(EssUnit(**{k: float(x[k]) for k in EssUnit.__dataclass_fields__}) for x in d["distributed_ess"]["units"])
            )
        grid_cap = d.get("grid_cap")
        return ScenarioConfig(N, tuple(users), shared, dist, None if grid_cap is None else float(grid_cap))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"malformed scenario: {exc!r}") from exc


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(cfg: ScenarioConfig, path: str | Path, meta: dict[str, Any] | None = None) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(cfg, meta), indent=2) + "\n")

