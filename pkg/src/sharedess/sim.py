"""Experiment drivers: capacity and noise sweeps, diversity study, fuzzing."""
from __future__ import annotations

import csv
import json
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .model import (
    ControllableLoad,
    DistributedEssSpec,
    ScenarioConfig,
    SharedEssSpec,
    UserProfile,
    _grid_need,
    load_scenario,
)
from .offline import no_storage_cost, solve_p1_monolithic, solve_p2_distributed_ess

SWEEP_KINDS = ("capacity_rho", "sigma2", "diversity")


# --------------------------------------------------------------------------
# random scenarios


@dataclass
class RandomScenarioOptions:
    max_loads_per_user: int = 2
    quadratic: bool = False
    time_varying_price: bool = True
    lossless: bool = False
    # relative spread of user weights around 1/M; wide spreads make the
    # dual problem badly conditioned (see docs)
    weight_spread: float = 0.5


def gen_random_scenario(seed: int, M: int, N: int, options: RandomScenarioOptions | None = None) -> ScenarioConfig:
    """Feasible-by-construction random instance, deterministic per seed."""
    if M < 1 or N < 1:
        raise ValueError("need M >= 1 and N >= 1")
    opt = options or RandomScenarioOptions()
    rng = np.random.default_rng(seed)
    raw = rng.uniform(1.0 - opt.weight_spread, 1.0 + opt.weight_spread, M)
    weights = raw / raw.sum()
    weights[-1] = 1.0 - weights[:-1].sum()
    phase = rng.uniform(0, 2 * np.pi, M)
    t = np.arange(N)
    # one time-of-use tariff for everybody on the feeder
    tariff = np.round(0.2 * (1.0 + rng.uniform(0.1, 0.4) * np.sin(2 * np.pi * t / max(N, 2) + rng.uniform(0, 2 * np.pi))), 4)
    users = []
    for m in range(M):
        fixed = rng.uniform(0.2, 2.5, N)
        shape = np.maximum(0.0, np.sin(2 * np.pi * t / max(N, 2) + phase[m]))
        renew = rng.uniform(0.5, 4.0) * shape + rng.uniform(0.0, 1.0, N)
        if opt.time_varying_price:
            price = tariff
        else:
            price = np.full(N, 0.2)
        quad = np.round(rng.uniform(0.005, 0.05, N), 4) if opt.quadratic else None
        loads = []
        if N >= 2:
            for q in range(int(rng.integers(0, opt.max_loads_per_user + 1))):
                start = int(rng.integers(1, N))
                end = int(rng.integers(start + 1, N + 1))
                w = end - start + 1
                lo_rate = float(np.round(rng.choice([0.0, rng.uniform(0.0, 0.5)]), 3))
                hi_rate = float(np.round(lo_rate + rng.uniform(0.5, 3.0), 3))
                energy = float(np.round(w * (lo_rate + rng.uniform(0.1, 0.9) * (hi_rate - lo_rate)), 3))
                loads.append(ControllableLoad(f"q{q + 1}", start, end, energy, lo_rate, hi_rate))
        users.append(
            UserProfile(
                id=str(m + 1),
                fixed_load=np.round(fixed, 3),
                renewable=np.round(renew, 3),
                controllable_loads=tuple(loads),
                weight=float(weights[m]),
                price=price,
                quadratic=quad,
            )
        )
    cap = float(np.round(rng.uniform(2.0, 20.0), 3))
    floor = float(np.round(rng.uniform(0.0, 0.2) * cap, 3))
    start = float(np.round(rng.uniform(floor, cap), 3))
    rate = float(np.round(rng.uniform(0.1, 0.5) * cap, 3))
    eff = 1.0 if opt.lossless else float(np.round(rng.uniform(0.8, 0.98), 3))
    shared = SharedEssSpec(floor, cap, start, rate, rate, eff, eff)
    return ScenarioConfig(N, tuple(users), shared, DistributedEssSpec.equal_split(shared, M))


# --------------------------------------------------------------------------
# bundled scenarios

HOURS = np.arange(24)


def _solar(peak: float, rise: float = 6.0, span: float = 13.0) -> np.ndarray:
    x = (HOURS + 0.5 - rise) / span
    return peak * np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)), 0.0)


def _wind(mean: float, swing: float, peak_hour: float, gust: float = 0.0) -> np.ndarray:
    base = mean + swing * np.cos(2 * np.pi * (HOURS - peak_hour) / 24)
    return np.maximum(base + gust * np.sin(2 * np.pi * HOURS / 7.0 + 1.0), 0.0)


def _household(base: float, morning: float, evening: float) -> np.ndarray:
    return (
        base
        + morning * np.exp(-(((HOURS - 7.5) / 1.5) ** 2))
        + evening * np.exp(-(((HOURS - 19.5) / 2.0) ** 2))
    )


EV = ControllableLoad("EV", 1, 9, 50.0, 0.0, 20.0)
EWH_MORNING = ControllableLoad("EWH-morning", 5, 8, 9.0, 0.0, 12.0)
EWH_EVENING = ControllableLoad("EWH-evening", 16, 19, 9.0, 0.0, 12.0)
DRYER = ControllableLoad("dryer", 9, 21, 2.95, 0.0, 2.95)

_FIXED = [(1.2, 1.5, 2.5), (0.9, 1.2, 2.0), (1.0, 0.8, 2.2), (1.4, 1.0, 2.8)]
_LOADS = [(EV,), (EWH_MORNING, DRYER), (EWH_EVENING, DRYER), (EWH_MORNING, EWH_EVENING)]


def _high_diversity_renewables() -> list[np.ndarray]:
    return [
        _wind(3.0, 1.6, 3.0, 0.5),
        _solar(8.0),
        _solar(6.5, rise=6.5, span=12.0),
        _wind(1.8, 1.0, 22.0, 0.3) + _solar(2.5),
    ]


def paper_like_scenario(diversity: str = "high") -> ScenarioConfig:
    """Four-user day with the bundled load table and synthetic profiles.

    ``high``: users 1 and 4 are wind-driven (user 4 adds a small PV array),
    users 2 and 3 have PV.  ``low``: every user has PV only, each with the
    same daily energy it had in the high-diversity case.
    """
    if diversity not in ("high", "low"):
        raise ValueError("diversity must be 'high' or 'low'")
    renew = _high_diversity_renewables()
    if diversity == "low":
        shapes = [_solar(1.0, 6.0, 13.0), _solar(1.0), _solar(1.0, 6.5, 12.0), _solar(1.0, 5.5, 14.0)]
        renew = [s * (r.sum() / s.sum()) for s, r in zip(shapes, renew)]
    users = []
    for m in range(4):
        users.append(
            UserProfile(
                id=str(m + 1),
                fixed_load=np.round(_household(*_FIXED[m]), 3),
                renewable=np.round(renew[m], 3),
                controllable_loads=_LOADS[m],
                weight=0.25,
                price=np.full(24, 0.2),
            )
        )
    cap = 18.0
    shared = SharedEssSpec(0.1 * cap, cap, 0.1 * cap, 0.15 * cap, 0.15 * cap, 0.87, 0.87)
    return ScenarioConfig(24, tuple(users), shared, DistributedEssSpec.equal_split(shared, 4))


BUNDLED = {
    "paper-like": lambda: paper_like_scenario("high"),
    "paper-like-low-diversity": lambda: paper_like_scenario("low"),
}


def bundled_path(name: str) -> Path:
    return Path(__file__).with_name("scenarios") / f"{name}.json"


def load_bundled(name: str = "paper-like") -> ScenarioConfig:
    return load_scenario(bundled_path(name))


# --------------------------------------------------------------------------
# sweeps


def rho_grid(stop: float = 3.0, step: float = 0.25) -> list[float]:
    return [round(step * i, 10) for i in range(int(round(stop / step)) + 1)]


@dataclass
class SweepSpec:
    scenario: str | Path | ScenarioConfig
    kind: str
    grid: Sequence[float]
    runs: int = 1
    output: str | Path | None = None
    seed: int = 0
    jobs: int = 1
    policies: Sequence[str] = ("rhc", "ps", "obf")

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ValueError(f"kind must be one of {SWEEP_KINDS}")
        if len(self.grid) == 0:
            raise ValueError("sweep grid is empty")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")

    def config(self) -> ScenarioConfig:
        if isinstance(self.scenario, ScenarioConfig):
            return self.scenario
        return load_scenario(self.scenario)


def scaled_scenario(cfg: ScenarioConfig, rho: float) -> ScenarioConfig:
    """Storage scaled by ``rho``; the grid cap grows with the charge rate if it must."""
    dist = cfg.distributed_ess.scaled(rho) if cfg.distributed_ess is not None else None
    out = cfg.with_ess(cfg.shared_ess.scaled(rho), dist)
    return replace(out, grid_cap=max(float(cfg.grid_cap), _grid_need(out)))


def _pool_map(fn, items, jobs: int):
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _capacity_point(args):
    cfg, rho = args
    sc = scaled_scenario(cfg, rho)
    shared = solve_p1_monolithic(sc).weighted_cost
    dist = solve_p2_distributed_ess(sc).weighted_cost if sc.distributed_ess is not None else float("nan")
    return rho, shared, dist


def sweep_capacity(spec: SweepSpec) -> list[dict]:
    """Shared and private-storage optima for each capacity multiplier."""
    cfg = spec.config()
    if cfg.distributed_ess is None:
        raise ValueError("capacity sweep needs a distributed_ess section")
    rows = []
    for rho, shared, dist in sorted(_pool_map(_capacity_point, [(cfg, r) for r in spec.grid], spec.jobs)):
        gap = 100.0 * (dist - shared) / dist if dist > 0 else 0.0
        rows.append({"rho": rho, "shared_cost": shared, "distributed_cost": dist, "saving_pct": gap})
    return rows


def _sigma_point(args):
    from .online import PredictionErrorModel, hindsight_cost, run_online, summarize

    cfg, sigma2, policy, runs, seed = args
    model = PredictionErrorModel(sigma2, seed)
    if policy == "oracle":
        from .online import sample_realization

        costs = np.array([
            hindsight_cost(cfg, sample_realization(cfg, PredictionErrorModel(sigma2, seed + i))) for i in range(runs)
        ])
        return {
            "policy": "oracle",
            "sigma2": sigma2,
            "runs": runs,
            "mean_cost": float(costs.mean()),
            "std_cost": float(costs.std(ddof=1)) if runs > 1 else 0.0,
            "mean_bits": 0.0,
            "feasible_rate": 1.0,
        }
    return summarize(run_online(cfg, policy, model, runs))


def sweep_sigma2(spec: SweepSpec) -> list[dict]:
    """Mean realized cost per policy and error variance, plus the hindsight oracle.

    Every policy sees the same realizations: run i at each variance uses
    seed ``spec.seed + i``.
    """
    cfg = spec.config()
    tasks = [(cfg, float(s2), pol, spec.runs, spec.seed) for s2 in spec.grid for pol in ("oracle", *spec.policies)]
    rows = _pool_map(_sigma_point, tasks, spec.jobs)
    order = {p: i for i, p in enumerate(("oracle", *spec.policies))}
    return sorted(rows, key=lambda r: (r["sigma2"], order[r["policy"]]))


# --------------------------------------------------------------------------
# diversity


def overlap_metric(charge: np.ndarray, discharge: np.ndarray) -> float:
    """Energy charged and discharged in the same slot: sum_n min(C_n, D_n) on aggregates."""
    return float(np.minimum(np.asarray(charge).sum(axis=0), np.asarray(discharge).sum(axis=0)).sum())


def saturation_rho(rhos: Sequence[float], savings: Sequence[float], rel: float = 0.01) -> float:
    """Smallest multiplier whose saving is within ``rel`` of the plateau (the saving at the largest multiplier)."""
    rhos = np.asarray(rhos, dtype=float)
    savings = np.asarray(savings, dtype=float)
    order = np.argsort(rhos)
    rhos, savings = rhos[order], savings[order]
    plateau = savings[-1]
    ok = savings >= plateau - rel * abs(plateau)
    # first point after which the curve never leaves the band again
    idx = len(ok) - 1
    while idx > 0 and ok[idx - 1]:
        idx -= 1
    return float(rhos[idx])


def _diversity_point(args):
    cfg, rho = args
    sc = scaled_scenario(cfg, rho)
    return rho, solve_p1_monolithic(sc).weighted_cost


@dataclass
class DiversityResult:
    tables: dict[str, list[dict]]
    saturation: dict[str, float]
    traces: dict[str, dict[str, np.ndarray]]
    overlap: dict[str, float]
    trace_rho: float


def diversity_experiment(
    high: ScenarioConfig,
    low: ScenarioConfig,
    rhos: Sequence[float] | None = None,
    trace_rho: float = 1.0,
    jobs: int = 1,
) -> DiversityResult:
    """Saving-versus-capacity curves and aggregate storage traces for two mixes.

    Saving is measured against the no-storage cost.  Traces come from the
    cost-optimal schedule with least charge plus discharge, so the overlap
    metric is not inflated by idle cycling.
    """
    rhos = list(rhos) if rhos is not None else rho_grid(6.0, 0.25)
    tables, sat, traces, overlap = {}, {}, {}, {}
    for label, cfg in (("high", high), ("low", low)):
        base = no_storage_cost(cfg)
        pts = sorted(_pool_map(_diversity_point, [(cfg, r) for r in rhos], jobs))
        tables[label] = [{"rho": r, "no_ess_cost": base, "shared_cost": c, "saving": base - c} for r, c in pts]
        sat[label] = saturation_rho([p[0] for p in pts], [base - p[1] for p in pts])
        sched = solve_p1_monolithic(scaled_scenario(cfg, trace_rho), min_throughput=True)
        traces[label] = {
            "charge": sched.charge.sum(axis=0),
            "discharge": sched.discharge.sum(axis=0),
            "state": sched.ess_states,
        }
        overlap[label] = overlap_metric(sched.charge, sched.discharge)
    return DiversityResult(tables, sat, traces, overlap, trace_rho)


# --------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_table_csv(rows: Sequence[dict], path: str | Path, columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_plot_data(series: dict[str, Sequence[tuple[float, float]]], path: str | Path, x_name: str) -> None:
    """Long format: one (series, x, value) row per point."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", x_name, "value"])
        for name in sorted(series):
            for x, y in series[name]:
                w.writerow([name, _fmt(float(x)), _fmt(float(y))])


def file_digest(path: str | Path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions() -> dict[str, str]:
    from importlib import metadata

    from ._accel import backend

    out = {"python": platform.python_version(), "numpy": np.__version__, "backend": backend()}
    for pkg in ("numba", "artifact"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "not installed"
    return out


def write_manifest(path: str | Path, kind: str, inputs: dict[str, Any], params: dict[str, Any], outputs: Sequence[str]) -> None:
    """Run manifest.  Holds no clock readings so reruns are byte-identical."""
    doc = {"kind": kind, "inputs": inputs, "params": params, "outputs": sorted(outputs), "versions": versions()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")
