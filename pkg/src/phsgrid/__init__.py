"""Port-Hamiltonian modelling, passivity-based voltage control and simulation
of islanded DC microgrids."""

from phsgrid.phs_core import (
    DimensionError,
    DomainError,
    PhsSystem,
    QuadraticHamiltonian,
    StructureReport,
    check_structure,
    gradient,
    hamiltonian_value,
    outputs,
    power_balance_residual,
    rhs,
)
from phsgrid.plant import (
    DguParams,
    PiLine,
    ZipLoad,
    dgu_phs,
    estimate_line_capacitance,
    pi_line_from_length,
    rl_line_phs,
    zip_current,
)
from phsgrid.control import (
    ControllerParams,
    ControllerState,
    PassivityReport,
    check_strict_passivity,
    closed_loop_rhs,
    control_input,
    ia_equilibrium,
    ia_feedback,
    ida_feedback,
    no_ia_offset_prediction,
    r2_damping,
    verify_matching,
)
from phsgrid.network import (
    DguUnit,
    Event,
    SimulationError,
    TimeSeries,
    Topology,
    assemble_rhs,
    effective_node_capacitance,
    net_currents,
    simulate,
    step_rk4,
    total_hamiltonian,
)
from phsgrid.steady_state import (
    SteadyState,
    steady_state_newton,
    steady_state_with_ia,
)

__version__ = "0.1.0"
