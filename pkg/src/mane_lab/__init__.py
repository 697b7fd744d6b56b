"""Numerical laboratory for Mañé critical values, barriers and Aubry sets on universal covers."""
from .core import (
    ChartExitError,
    CotangentState,
    DomainError,
    InputError,
    LagrangianSystem,
    ManeLabError,
    NumericalError,
    OptimizationError,
    ReferenceData,
    TangentState,
    convexity_probe,
    energy,
    legendre_forward,
    legendre_inverse,
)
from .systems import SystemSpec, build_system, reference_orbit, register_system
from .flow import IntegratorConfig, OrbitSegment, el_residual, flow_map, integrate, orbit_action
from .variational import (
    DiscretePath,
    MinimizeConfig,
    MinimizeResult,
    finite_time_potential,
    minimize_closed_loop,
    minimize_fixed_endpoints,
    path_action,
)
from .measures import (
    HolonomicMeasureSample,
    graph_union_witness,
    horocycle_measure,
    rescale_measure,
    sample_from_path,
    stationarity_residual,
)
from .critical import CriticalValueEstimate, estimate_cu, measure_energy_gap
from .barrier import (
    BarrierProfile,
    PreOrbit,
    aubry_flag,
    aubry_indicator,
    barrier_profile,
    phase_barrier_upper,
    preorbit_action,
    preorbit_energy_defect,
    shift_identity_residual,
)
from .symmaps import (
    Composition,
    CotangentLift,
    FiberTranslation,
    action_identity_residual,
    apply,
    barrier_transport_check,
    build_map,
    cu_invariance_report,
    mapped_system,
)

__version__ = "0.1.0"
