import numpy as np
import pytest

from embedci.cisolver import fci_solve
from embedci.determinants import hf_determinant, slater_condon_element
from embedci.embedding import (
    EwfCluster,
    FragmentSpec,
    bno_expand,
    build_cluster,
    build_dmet_cluster,
    extract_cluster_hamiltonian,
    localize_system,
    orthogonalize_localize,
    per_atom_fragments,
    schmidt_bath,
)
from embedci.exceptions import ValidationError
from embedci.hamio import MeanFieldBundle


@pytest.fixture(scope="module")
def h6_sys(h6_bundle):
    return localize_system(h6_bundle)


@pytest.fixture(scope="module")
def h4_sys(h4_bundle):
    return localize_system(h4_bundle)


def test_orthogonalize_identity_overlap():
    mf = MeanFieldBundle(
        n_ao=2, s=np.eye(2), c=np.eye(2), eps=np.zeros(2),
        d=np.diag([2.0, 0.0]), h_ao=np.zeros((2, 2)),
        eri_ao=np.zeros((2, 2, 2, 2)), e_nuc=0.0, n_elec=2,
        ao_atoms=np.array([0, 1]),
    )
    basis = orthogonalize_localize(mf)
    assert np.abs(basis.t - np.eye(2)).max() < 1e-14


def test_orthogonalize_two_ao_closed_form():
    s_off = 0.4
    s = np.array([[1.0, s_off], [0.4, 1.0]])
    mf = MeanFieldBundle(
        n_ao=2, s=s, c=np.eye(2), eps=np.zeros(2),
        d=np.zeros((2, 2)), h_ao=np.zeros((2, 2)),
        eri_ao=np.zeros((2, 2, 2, 2)), e_nuc=0.0, n_elec=0,
        ao_atoms=np.array([0, 1]),
    )
    basis = orthogonalize_localize(mf)
    assert np.abs(basis.t.T @ s @ basis.t - np.eye(2)).max() < 1e-12
    # closed form for a symmetric 2x2: eigenvalues 1 +/- s_off
    w = np.array([1 - s_off, 1 + s_off])
    v = np.array([[1, 1], [-1, 1]]) / np.sqrt(2)
    t_ref = (v / np.sqrt(w)) @ v.T
    assert np.abs(basis.t - t_ref).max() < 1e-12


def test_localized_density_trace(h6_sys):
    assert abs(np.trace(h6_sys.density) - 6) < 1e-8
    eigs = np.linalg.eigvalsh(h6_sys.density)
    assert eigs.min() > -1e-8 and eigs.max() < 2 + 1e-8


def test_schmidt_whole_system_fragment(h6_sys):
    bath, fo, fv = schmidt_bath(h6_sys.density, list(range(6)))
    assert bath.shape[1] == 0
    assert fo.shape[1] == 0 and fv.shape[1] == 0


def test_schmidt_single_orbital_fragment(h6_sys):
    bath, fo, fv = schmidt_bath(h6_sys.density, [0])
    assert bath.shape[1] <= 1
    # H6 at mean field entangles every atom with its environment
    assert bath.shape[1] == 1
    assert fo.shape[1] + fv.shape[1] + bath.shape[1] == 5


def test_schmidt_separated_dimer_toy_density():
    # two separated bonding pairs: the (0,1) pair carries density 1 on the
    # off-diagonal, so fragment {0} has exactly one bath orbital, orbital 1
    block = np.array([[1.0, 1.0], [1.0, 1.0]])
    density = np.block(
        [[block, np.zeros((2, 2))], [np.zeros((2, 2)), block]]
    )
    bath, fo, fv = schmidt_bath(density, [0])
    assert bath.shape[1] == 1
    assert abs(abs(bath[1, 0]) - 1.0) < 1e-12
    sv = np.linalg.svd(density[np.ix_([1, 2, 3], [0])], compute_uv=False)
    assert abs(sv[0] - abs(density[1, 0])) < 1e-12


def test_schmidt_bath_bound(h6_sys):
    for frag in ([0], [0, 1], [0, 1, 2]):
        bath, _, _ = schmidt_bath(h6_sys.density, frag)
        assert bath.shape[1] <= len(frag)


def test_schmidt_rejects_correlated_density(h6_sys):
    bad = h6_sys.density * 0.9
    with pytest.raises(ValidationError, match="idempotent"):
        schmidt_bath(bad, [0])


def test_per_atom_fragments_partition(h6_sys):
    spec = per_atom_fragments(h6_sys.atom_labels)
    spec.validate(6)
    assert len(spec.groups) == 6


def test_fragment_spec_rejects_overlap():
    spec = FragmentSpec(groups=[[0, 1], [1, 2]], labels=["a", "b"])
    with pytest.raises(ValidationError):
        spec.validate(3)


def test_dmet_cluster_mean_field_consistency(h6_sys, h6_bundle):
    # the single-determinant energy in every fragment+bath+frozen space
    # must reproduce the full-system mean-field energy
    for frag in per_atom_fragments(h6_sys.atom_labels).groups:
        cluster = build_dmet_cluster(h6_sys, frag)
        ham = extract_cluster_hamiltonian(h6_sys, cluster)
        hf = hf_determinant(ham.m, ham.n_alpha, ham.n_beta)
        e_hf = slater_condon_element(ham, hf, hf)
        assert abs(e_hf - h6_bundle.e_scf) < 1e-8


def test_exact_embedding_limit(h4_sys, h4_ham):
    cluster = build_dmet_cluster(h4_sys, list(range(4)))
    assert cluster.mo_count == 4
    ham = extract_cluster_hamiltonian(h4_sys, cluster)
    e_embedded = fci_solve(ham).energy
    e_full = fci_solve(h4_ham).energy
    assert abs(e_embedded - e_full) < 1e-8


def test_bno_eta_two_keeps_dmet_core(h6_sys):
    for frag in ([0], [2, 3]):
        dmet = build_dmet_cluster(h6_sys, frag)
        expanded = bno_expand(h6_sys, dmet, eta=2.0)
        assert expanded.mo_count == dmet.mo_count
        assert expanded.frozen_occ.shape[1] == dmet.frozen_occ.shape[1]


def test_bno_eta_zero_inflates_to_full_system(h6_sys):
    dmet = build_dmet_cluster(h6_sys, [0])
    expanded = bno_expand(h6_sys, dmet, eta=0.0)
    assert expanded.mo_count == 6
    assert expanded.frozen_occ.shape[1] == 0
    assert expanded.frozen_virt.shape[1] == 0


def test_bno_eta_monotonicity(h6_sys):
    dmet = build_dmet_cluster(h6_sys, [1])
    sizes = []
    for eta in (1e-2, 1e-4, 1e-6, 0.0):
        expanded = bno_expand(h6_sys, dmet, eta=eta)
        sizes.append(expanded.mo_count)
    assert sizes == sorted(sizes)


def test_bno_occupations_sorted_and_match_oracle(h6_sys):
    dmet = build_dmet_cluster(h6_sys, [0])
    expanded = bno_expand(h6_sys, dmet, eta=1e-5)
    virt_occ = expanded.bno_occupations["virtual"]
    assert (np.diff(virt_occ) <= 1e-14).all()
    # independent count: how many virtual-environment natural occupations
    # clear the threshold, recomputed via a dense eigendecomposition here
    kept = int(np.sum(virt_occ >= 1e-5))
    n_new_virt = expanded.mo_count - dmet.mo_count - int(
        np.sum(expanded.bno_occupations["occupied"] <= 2 - 1e-5)
    )
    assert kept == n_new_virt


def test_bno_expansion_mean_field_consistency(h6_sys, h6_bundle):
    for frag in per_atom_fragments(h6_sys.atom_labels).groups[:3]:
        cluster = build_cluster(h6_sys, frag, eta=1e-5)
        ham = extract_cluster_hamiltonian(h6_sys, cluster)
        hf = hf_determinant(ham.m, ham.n_alpha, ham.n_beta)
        assert abs(slater_condon_element(ham, hf, hf) - h6_bundle.e_scf) < 1e-8


def test_cluster_columns_orthonormal(h6_sys):
    for frag in per_atom_fragments(h6_sys.atom_labels).groups:
        cluster = build_cluster(h6_sys, frag, eta=1e-5)
        cluster.validate(tol=1e-10)
        rank = int(round(np.trace(cluster.projector)))
        assert rank == len(frag)


def test_extract_rejects_empty_cluster(h6_sys):
    cluster = build_dmet_cluster(h6_sys, [0])
    empty = EwfCluster(
        fragment_indices=[],
        coeffs=np.zeros((6, 0)),
        n_occ=0,
        frozen_occ=cluster.frozen_occ,
        frozen_virt=cluster.frozen_virt,
        projector=np.zeros((0, 0)),
    )
    with pytest.raises(ValidationError):
        extract_cluster_hamiltonian(h6_sys, empty)


def test_eta_out_of_range(h6_sys):
    dmet = build_dmet_cluster(h6_sys, [0])
    with pytest.raises(ValidationError):
        bno_expand(h6_sys, dmet, eta=-0.5)
    with pytest.raises(ValidationError):
        bno_expand(h6_sys, dmet, eta=2.5)
