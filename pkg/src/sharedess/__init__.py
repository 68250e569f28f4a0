"""Energy management for renewable-powered users sharing one storage unit.

Modules:

* ``model``    scenario types, JSON I/O and the schedule checker
* ``lp``       dense bounded-variable simplex (numba accelerated)
* ``offline``  monolithic oracle, price-coordination solver, private-storage benchmark
* ``online``   receding-horizon, proportional-sharing and one-bit-feedback policies
* ``sim``      capacity/noise sweeps, diversity study, random scenarios
* ``cli``      command-line front end
"""
from ._accel import HAVE_NUMBA, backend
from .model import (
    ControllableLoad,
    DistributedEssSpec,
    EssUnit,
    ScenarioConfig,
    Schedule,
    SharedEssSpec,
    UserProfile,
    check_schedule,
    load_scenario,
    save_scenario,
    validate_scenario,
)
from .offline import (
    SolverOptions,
    solve_p1_distributed,
    solve_p1_monolithic,
    solve_p2_distributed_ess,
)

__version__ = "0.1.0"

__all__ = [
    "HAVE_NUMBA",
    "ControllableLoad",
    "DistributedEssSpec",
    "EssUnit",
    "ScenarioConfig",
    "Schedule",
    "SharedEssSpec",
    "SolverOptions",
    "UserProfile",
    "backend",
    "check_schedule",
    "load_scenario",
    "save_scenario",
    "solve_p1_distributed",
    "solve_p1_monolithic",
    "solve_p2_distributed_ess",
    "validate_scenario",
]
