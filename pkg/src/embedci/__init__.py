"""Fragment-embedded configuration interaction with sampling-based solvers.

Pipeline: a full-system mean-field bundle is localized and partitioned into
atomic fragments; each fragment gains an entanglement bath and correlated
natural-orbital expansion; the resulting cluster Hamiltonians are solved by
full CI or by sampling-based subspace diagonalization with configuration
recovery; fragment-projected density matrices reassemble the total energy.
"""

from .cisolver import (
    CiVector,
    SubspaceBasis,
    build_projected_hamiltonian,
    compute_rdms,
    davidson_ground_state,
    energy_from_rdms,
    fci_solve,
    solve_subspace,
)
from .collate import ClusterResult, collate_global_energy, relative_energy_report
from .determinants import (
    Determinant,
    connected_singles,
    enumerate_space,
    excitation_degree_and_parity,
    slater_condon_element,
)
from .embedding import (
    EwfCluster,
    bno_expand,
    build_cluster,
    build_dmet_cluster,
    extract_cluster_hamiltonian,
    localize_system,
    orthogonalize_localize,
    per_atom_fragments,
    schmidt_bath,
)
from .hamio import (
    ClusterHamiltonian,
    MeanFieldBundle,
    SampleSet,
    load_meanfield_bundle,
    load_samples,
    parse_fcidump,
    save_samples,
    write_fcidump,
)
from .lucj import (
    double_factorize_t2,
    inject_readout_noise,
    lucj_from_factorization,
    mp2_amplitudes,
    prepare_lucj_state,
    sample_counts,
)
from .pipeline import PipelineConfig, run_pipeline, validate_config
from .sqd import (
    RecoveryConfig,
    dispatch_solver,
    extend_subspace,
    postselect_and_recover,
    run_configuration_recovery,
)

__version__ = "0.1.0"
