"""Fisher information of continuously monitored open spin-boson systems.

Modules:

* ``hilbert`` -- collective spin (Dicke basis) tensored with a truncated boson mode
* ``models`` -- Tavis-Cummings, generalized Dicke and boundary time-crystal models
* ``trajectories`` -- photon-counting and homodyne trajectories, Lindblad integration
* ``fisher`` -- system-environment QFI, trajectory Fisher information, saturation checks
* ``meanfield`` -- generalized Dicke mean-field flow and fixed points
* ``cli`` -- batch command-line front end
"""

from .hilbert import (
    CompositeSpace,
    build_boson_operators,
    build_spin_operators,
    dicke_number_state,
    expectation,
    spin_coherent_state,
)
from .models import (
    Model,
    ModelParams,
    Target,
    build_dH,
    build_dK,
    build_hamiltonian,
    build_jump_operator,
    kraus_counting,
    kraus_homodyne,
)
from .trajectories import (
    DiscretizationError,
    EnsembleConfig,
    EnsembleResult,
    FockLeakageError,
    IntegrationError,
    ModelContext,
    Sampler,
    TrajectoryError,
    TrajectoryState,
    Unravelling,
    integrate_master,
    run_ensemble,
    run_trajectory,
    step_counting,
    step_homodyne,
)
from .fisher import (
    FisherSeries,
    check_condition_I,
    check_condition_II,
    check_saturating_class,
    class_closure_test,
    enumerate_counting_records,
    qfi_fd_oracle,
    qfi_system_environment,
    trajectory_fisher,
)
from .meanfield import (
    MeanFieldState,
    critical_coupling,
    gd_meanfield_rhs,
    integrate_meanfield,
    stationary_branches,
    tc_stationary_qfi_rates,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
