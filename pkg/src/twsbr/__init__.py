"""Two-wheeled self-balancing robot workbench."""

from .plant import (
    DEFAULT_J_C,
    EnergyBreakdown,
    PlantState,
    RobotParams,
    SingularMassMatrix,
    StateDerivative,
    StateSpaceModel,
    WheelTorque,
    linearize,
    nonlinear_dynamics,
    rk4_step,
    total_energy,
)
from .sensors import (
    DEFAULT_FILTER_WEIGHT,
    FilterState,
    ImuConfig,
    ImuReading,
    complementary_filter,
    sample_imu,
)
from .controllers import (
    ControlAction,
    DiscreteBiquadChain,
    Defuzzified,
    FlcConfig,
    LeadLagParams,
    PidGains,
    PidState,
    RationalTF,
    biquad_step,
    discretize_tustin,
    flc_core,
    flc_defuzzify,
    flc_fuzzify,
    flc_infer,
    flc_step,
    leadlag_tf,
    pid_step,
    saturate_to_pwm,
)
from .analysis import (
    PolyRoots,
    RootLocusData,
    StepMetrics,
    cancel_origin_pairs,
    closed_loop_poles,
    pid_tf,
    poly_roots,
    root_locus,
    series,
    ss_to_tf,
    step_metrics,
)
from .sim import (
    ClosedLoopSim,
    ComparisonReport,
    Scenario,
    ScenarioError,
    TelemetryRecord,
    RunResult,
    apply_mass_uncertainty,
    compare_controllers,
    load_scenario,
    run_closed_loop,
    scenario_from_dict,
    scenario_to_dict,
    write_telemetry_csv,
)

__version__ = "0.1.0"
