from .engine import GroundTruth, RunResult, Simulation, interleave, run_workload
from .faults import FaultError, FaultSpec
from .spec import SpecError, WorkloadSpec, catalog_names, load_spec, parse_spec, resolve_spec

__all__ = [
    "FaultError", "FaultSpec", "GroundTruth", "RunResult", "Simulation", "SpecError",
    "WorkloadSpec", "catalog_names", "interleave", "load_spec", "parse_spec", "resolve_spec",
    "run_workload",
]
