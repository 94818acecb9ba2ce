"""Topology optimisation of test specimens for robust stiffness identification.

The package designs 2D plane-stress specimen topologies that minimise the
noise sensitivity of linear-elastic parameter identification from full-field
strain data, and benchmarks identification accuracy of the produced designs
under synthetic noisy measurements.
"""

from .cost import (
    CostContext,
    det_cost,
    frobenius_cond,
    min_distance_cost,
    p_norm_cond,
    two_norm_cond,
    unnormalised_det_cost,
)
from .equilibrium import (
    WeightedSystem,
    assemble_A_glob,
    build_weighted_system,
    consistent_weights,
    element_A,
)
from .errors import (
    ConfigError,
    DegenerateSystemError,
    ParameterError,
    RunError,
    SolverError,
    SpectoptError,
)
from .filtering import (
    DensityTriple,
    FilterContext,
    continuation_schedule,
    convolution_filter,
    grey_index,
    hard_threshold,
    make_filter_context,
    pde_filter,
    project,
)
from .identification import (
    IdentificationReport,
    NoiseModel,
    identify,
    reference_topology,
    sweep,
    synthesize,
)
from .material import (
    AnisotropyDescriptors,
    OrthotropicParams,
    StiffnessVector,
    anisotropy_ratios,
    isotropic_stiffness,
    orthotropic_stiffness,
    params_from_descriptors,
)
from .mesh import (
    BoundarySetup,
    EquilibriumSolver,
    StructuredMesh,
    assemble_stiffness,
    boundary_biaxial,
    boundary_uniaxial,
    build_mesh,
    element_stiffness,
    gauss_strains,
    solve_equilibrium,
)
from .optimizer import (
    IterationRecord,
    OptimizationConfig,
    OptimizationResult,
    constrained_step,
    initialize,
    optimize,
)
from .pipeline import DesignProblem, ForwardState, forward_evaluate
from .sensitivity import total_design_gradient, volume_gradient
from .studies import weights_study

__version__ = "0.1.0"
