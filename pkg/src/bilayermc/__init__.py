"""Bilayer spin models as monitored monolayer trajectories.

Compile a two-layer Hamiltonian with antiunitary layer exchange into
weak-measurement dynamics on a single layer, then estimate purity-normalized
observables of the bilayer ground-state approach, either exactly (dense
channel, Krylov) or by Metropolis sampling over trajectory-label pairs.
"""

__version__ = "0.1.0"

from .engine import Schedule, TrajectoryState, propagate, sequential_sample
from .errors import (
    BilayerError,
    ConfigError,
    DegenerateChain,
    KrylovConvergenceError,
    MappingError,
    NonFactorizable,
    NumericalFailure,
    PositivityFailure,
    SamplerError,
    SignViolation,
    SizeLimitExceeded,
    SymmetryViolation,
)
from .mapping import (
    BilayerTerm,
    DynamicsSpec,
    KappaPolicy,
    build_dynamics,
    decompose_bilayer,
    parse_bilayer_terms,
    validate_mapping,
)
from .models import ashkin_teller_terms, dimer_terms
from .oracle import (
    ChannelOperators,
    DensityMatrix,
    DimerParams,
    bilayer_correlators,
    bilayer_krylov_evolve,
    channel_step,
    dimer_dephasing_exact,
    dimer_dynamics,
    dimer_exact,
    dimer_transfer_matrix,
    enumerate_pair_sums,
    exact_slice_propagator,
    renyi2_correlator,
)
from .paulis import OperatorSum, PauliString, StateVector
from .sampling import (
    EstimatorResult,
    MCConfig,
    batch_means,
    estimate_interlayer,
    estimate_intralayer,
)

__all__ = [
    "__version__",
    "Schedule",
    "TrajectoryState",
    "propagate",
    "sequential_sample",
    "BilayerError",
    "ConfigError",
    "DegenerateChain",
    "KrylovConvergenceError",
    "MappingError",
    "NonFactorizable",
    "NumericalFailure",
    "PositivityFailure",
    "SamplerError",
    "SignViolation",
    "SizeLimitExceeded",
    "SymmetryViolation",
    "BilayerTerm",
    "DynamicsSpec",
    "KappaPolicy",
    "build_dynamics",
    "decompose_bilayer",
    "parse_bilayer_terms",
    "validate_mapping",
    "ashkin_teller_terms",
    "dimer_terms",
    "ChannelOperators",
    "DensityMatrix",
    "DimerParams",
    "bilayer_correlators",
    "bilayer_krylov_evolve",
    "channel_step",
    "dimer_dephasing_exact",
    "dimer_dynamics",
    "dimer_exact",
    "dimer_transfer_matrix",
    "enumerate_pair_sums",
    "exact_slice_propagator",
    "renyi2_correlator",
    "OperatorSum",
    "PauliString",
    "StateVector",
    "EstimatorResult",
    "MCConfig",
    "batch_means",
    "estimate_interlayer",
    "estimate_intralayer",
]
