"""Newton's method on the generalized Stiefel manifold and the
Grassmannian, a Lagrange-multiplier Newton baseline, and a
spectrum-truncated variant, with experiment drivers for Hessian-spectrum
comparison, convergence-neighborhood mapping and performance profiles.
"""

from .analysis import (
    NeighborhoodMap,
    PerformanceProfile,
    RadiiSummary,
    SpectrumComparison,
    compare_spectra,
    dataset_statistics,
    map_neighborhood,
    performance_profile,
    radii_summary,
)
from .costs import (
    BrockettCost,
    CostFunction,
    HartreeFockCost,
    IntegralSet,
    brockett_cost,
    fock_matrix,
    hf_energy,
    hf_euclidean_gradient,
    hf_euclidean_hessian,
)
from .io import ingest_integrals, load_manifest, write_integrals
from .manifolds import (
    GRASSMANN,
    STIEFEL,
    ManifoldPoint,
    MetricMatrix,
    TangentBasis,
    TangentVector,
    build_tangent_basis,
    exp_grassmann,
    exp_stiefel,
    metric_inner,
    project_grassmann,
    project_stiefel,
    riemannian_gradient,
)
from .solvers import (
    MRNM_ST,
    NMLM,
    RNM_GR,
    RNM_ST,
    SolverConfig,
    SolverTrace,
    initial_guess,
    newton_step_extrinsic,
    newton_step_intrinsic,
    newton_step_truncated,
    run,
    run_nmlm,
    run_rnm,
)

__version__ = "0.1.0"
