"""tivaloop: closed-loop propofol anesthesia simulation workbench.

Derives per-patient compartment models from demographics, runs an adaptive
TSK fuzzy controller against them through induction and maintenance with
surgical disturbances and sensor noise, and scores runs with the standard
clinical control-performance indices.
"""

__version__ = "0.1.0"

from .controller import (
    ControllerConfig,
    ControllerDivergence,
    ControllerState,
    MembershipSet,
    TskParams,
    controller_step,
    init_params,
)
from .engine import CohortResult, SimTrace, run, run_cohort
from .metrics import MetricsReport, compute_report, summarize_cohort
from .patient import (
    Demographics,
    HillParams,
    PatientRecord,
    PkParams,
    builtin_cohort,
    derive_pk,
    get_patient,
)
from .pkpd import PkModel, StepScheme, bis, simulate_open_loop
from .scenario import (
    DisturbanceEvent,
    NoiseModel,
    ScenarioSpec,
    induction_scenario,
    load_scenario,
    save_scenario,
    standard_profile,
    standard_scenario,
)

__all__ = [
    "__version__",
    "CohortResult",
    "ControllerConfig",
    "ControllerDivergence",
    "ControllerState",
    "Demographics",
    "DisturbanceEvent",
    "HillParams",
    "MembershipSet",
    "MetricsReport",
    "NoiseModel",
    "PatientRecord",
    "PkModel",
    "PkParams",
    "ScenarioSpec",
    "SimTrace",
    "StepScheme",
    "TskParams",
    "bis",
    "builtin_cohort",
    "compute_report",
    "controller_step",
    "derive_pk",
    "get_patient",
    "induction_scenario",
    "init_params",
    "load_scenario",
    "run",
    "run_cohort",
    "save_scenario",
    "simulate_open_loop",
    "standard_profile",
    "standard_scenario",
    "summarize_cohort",
]
