"""Gradient-descent-free Hamiltonian graph networks for mass-spring systems.

Models the scalar energy of an N-body system with a permutation-,
translation- and rotation-invariant graph network whose hidden layers are
randomly sampled (data-agnostic or data-driven) and whose linear readout
is fit by regularised least squares against observed time derivatives.
Trained models drive a symplectic integrator and generalise zero-shot to
larger graphs of the same family.
"""

from .core import (
    Dataset,
    GraphTopology,
    PhaseState,
    Sample,
    build_topology,
    chain_topology,
    lattice_topology,
    ring_topology,
    state_from_nodes,
    state_from_vector,
    validate_dataset,
)
from .invariance import (
    InvarianceConfig,
    InvariantFrame,
    InvariantState,
    build_basis,
    center_positions,
    encode_invariant,
    select_reference,
)
from .network import (
    ForwardCache,
    LayerParams,
    ModelDims,
    ModelParams,
    edge_features,
    forward,
    global_features,
    node_features,
    softplus,
)
from .gradients import (
    FDCheck,
    LearnedDynamics,
    finite_difference_check,
    grad_hamiltonian,
    jacobian_global,
    predicted_dynamics_batch,
)
from .sampling import (
    SamplerConfig,
    SwimSamplingError,
    build_random_layers,
    sample_elm,
    sample_swim,
)
from .training import (
    LinearSystem,
    TrainReport,
    assemble_system,
    build_linear_system,
    derivatives_from_trajectory,
    solve_least_squares,
    train,
)
from .physics import (
    AnalyticDynamics,
    DegenerateGeometryError,
    IntegrationError,
    SystemSpec,
    Trajectory,
    chain_system,
    generate_dataset,
    generate_samples,
    hamiltonian,
    hamiltonian_chain,
    hamiltonian_lattice,
    hamiltonian_ring,
    lattice_system,
    ring_system,
    stormer_verlet_rollout,
    true_dynamics,
)
from .metrics import mse, relative_error
from .modelio import load_model, save_model
from .datafiles import load_dataset, save_dataset
from .experiments import (
    RunConfig,
    evaluate_dynamics,
    run_ablation,
    run_rollout_eval,
    run_zero_shot,
    train_from_config,
)

__version__ = "0.1.0"
