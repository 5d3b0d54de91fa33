"""ethlab: exact-diagonalization laboratory for subsystem thermalization.

Dense spin-chain spectra, block reductions, matrix divergences
(Umegaki and matrix-geometric), Petz recovery, formal-observable variances,
and experiment drivers that audit the inequalities and scaling trends
connecting them.
"""

__version__ = "0.1.0"

from .linalg import (
    SpectralDecomposition,
    LinalgError,
    hermitian_eig,
    matrix_function,
    partial_trace,
    schatten_norm,
    translate,
)
from .models import (
    HamiltonianSpec,
    LatticeSpec,
    build_hamiltonian,
    check_translation_invariance,
    translation_operator,
)
from .states import (
    BlockPartition,
    DensityMatrix,
    TransitionMatrix,
    pure_projector,
    reduce_pure,
    reduce_state,
    reduce_transition,
    regularize,
)
from .ensembles import (
    EnsembleSpec,
    gibbs_state,
    match_beta,
    microcanonical_state,
)
from .divergences import (
    DivergenceReport,
    FormalObservable,
    average_formal_observable,
    bs_entropy,
    bs_entropy_forms,
    bs_series_residual,
    distinguishability,
    fluctuation,
    formal_observable,
    moment,
    mutual_information,
    petz_recovery,
    pullup_identity_residual,
    quantum_variance,
    rescale_map,
    umegaki,
    variance_decomposition,
)
from .experiments import (
    ChebyshevRow,
    DecayRecord,
    ScalingRecord,
    SelectionPolicy,
    chebyshev_concentration,
    chebyshev_typicality,
    correlation_decay_probe,
    ensemble_equivalence,
    inequality_audit,
    offdiag_scan,
    subsystem_eth_scan,
    typicality_balance,
)

__all__ = [name for name in dir() if not name.startswith("_")]
