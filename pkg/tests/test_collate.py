import numpy as np
import pytest

from embedci.cisolver import CiVector, SubspaceBasis, compute_rdms, fci_solve
from embedci.collate import (
    HARTREE_TO_KCAL,
    ClusterResult,
    collate_global_energy,
    project_cluster_rdms,
    relative_energy_report,
)
from embedci.determinants import hf_determinant
from embedci.embedding import (
    build_cluster,
    build_dmet_cluster,
    extract_cluster_hamiltonian,
    localize_system,
    per_atom_fragments,
)
from embedci.exceptions import ValidationError


@pytest.fixture(scope="module")
def h6_sys(h6_bundle):
    return localize_system(h6_bundle)


@pytest.fixture(scope="module")
def h4_sys(h4_bundle):
    return localize_system(h4_bundle)


def hf_cluster_result(sys, cluster, cid):
    ham = extract_cluster_hamiltonian(sys, cluster)
    basis = SubspaceBasis.from_determinants(
        [hf_determinant(ham.m, ham.n_alpha, ham.n_beta)], ham.m
    )
    vec = CiVector(basis=basis, coeffs=np.array([1.0]))
    rdm1, rdm2 = compute_rdms(vec)
    return ClusterResult(cid, "hf", 0.0, rdm1, rdm2, cluster)


def fci_cluster_result(sys, cluster, cid):
    ham = extract_cluster_hamiltonian(sys, cluster)
    res = fci_solve(ham, budget=10**6)
    return ClusterResult(cid, "fci", res.energy, res.rdm1, res.rdm2, cluster)


def test_identity_projector_whole_system(h4_sys):
    cluster = build_dmet_cluster(h4_sys, list(range(4)))
    result = fci_cluster_result(h4_sys, cluster, "whole")
    gamma_g, gamma2_p = project_cluster_rdms(result)
    # projector is the identity here, so nothing is scaled
    assert np.abs(gamma2_p - result.rdm2).max() < 1e-12
    rotated = cluster.coeffs @ result.rdm1 @ cluster.coeffs.T
    assert np.abs(gamma_g - rotated).max() < 1e-12


def test_zero_projector_gives_zero_contribution(h4_sys):
    cluster = build_dmet_cluster(h4_sys, list(range(4)))
    result = fci_cluster_result(h4_sys, cluster, "whole")
    result.cluster.projector = np.zeros_like(result.cluster.projector)
    gamma_g, gamma2_p = project_cluster_rdms(result)
    assert np.abs(gamma_g).max() == 0.0
    assert np.abs(gamma2_p).max() == 0.0


def test_exact_embedding_limit_energy(h4_sys, h4_ham):
    cluster = build_dmet_cluster(h4_sys, list(range(4)))
    result = fci_cluster_result(h4_sys, cluster, "whole")
    e_total, rdms, breakdown = collate_global_energy(h4_sys, [result])
    e_fci = fci_solve(h4_ham).energy
    assert abs(e_total - e_fci) < 1e-8
    assert abs(rdms.trace() - 4) < 1e-8
    assert abs(breakdown["whole"] + h4_sys.e_nuc - e_total) < 1e-12


@pytest.mark.parametrize("grouping", ["per_atom", "halves"])
def test_mean_field_closure(h6_sys, h6_bundle, grouping):
    if grouping == "per_atom":
        groups = per_atom_fragments(h6_sys.atom_labels).groups
    else:
        groups = [[0, 1, 2], [3, 4, 5]]
    results = []
    for i, frag in enumerate(groups):
        cluster = build_cluster(h6_sys, frag, eta=1e-5)
        results.append(hf_cluster_result(h6_sys, cluster, f"c{i}"))
    e_total, rdms, _ = collate_global_energy(h6_sys, results)
    assert abs(e_total - h6_bundle.e_scf) < 1e-8
    # at mean field the projected contributions recompose the exact density
    assert abs(rdms.trace() - 6) < 1e-8
    d_ref = h6_sys.density
    assert np.abs(rdms.gamma - d_ref).max() < 1e-8


def test_h6_per_atom_fci_accuracy(h6_sys):
    whole = build_dmet_cluster(h6_sys, list(range(6)))
    e_fci = fci_cluster_result(h6_sys, whole, "ref").energy
    results = []
    for i, frag in enumerate(per_atom_fragments(h6_sys.atom_labels).groups):
        cluster = build_cluster(h6_sys, frag, eta=1e-5)
        results.append(fci_cluster_result(h6_sys, cluster, f"c{i}"))
    e_total, rdms, _ = collate_global_energy(h6_sys, results)
    # regression bound: first measured 4.3e-5 Eh on this fixture, frozen
    # with margin; democratic partitioning of correlated RDMs conserves the
    # electron count only to the same order as its energy error
    assert abs(e_total - e_fci) < 1e-4
    assert abs(rdms.trace() - 6) < 1e-3


def test_collate_rejects_missing_cluster(h6_sys):
    groups = per_atom_fragments(h6_sys.atom_labels).groups
    results = []
    for i, frag in enumerate(groups[:-1]):
        cluster = build_cluster(h6_sys, frag, eta=2.0)
        results.append(hf_cluster_result(h6_sys, cluster, f"c{i}"))
    with pytest.raises(ValidationError, match="no cluster result covers"):
        collate_global_energy(h6_sys, results)


def test_collate_rejects_double_coverage(h6_sys):
    cluster = build_dmet_cluster(h6_sys, list(range(6)))
    a = hf_cluster_result(h6_sys, cluster, "a")
    b = hf_cluster_result(h6_sys, cluster, "b")
    with pytest.raises(ValidationError, match="contributed by both"):
        collate_global_energy(h6_sys, [a, b])


def test_relative_energy_zero():
    report = relative_energy_report(-1.5, -1.5)
    assert report.delta_kcal == 0.0


def test_relative_energy_reference_values():
    # 4-decimal table inputs give 55.47 kcal/mol
    report = relative_energy_report(
        -7354.1372, -7354.2256, labels=("unfolded", "folded")
    )
    assert abs(report.delta_kcal - 55.5) < 0.1
    assert abs(report.delta_kcal - 55.47) < 0.01
    text = report.to_text()
    assert "E_unfolded" in text and "E_folded" in text
    assert "55.47" in text


def test_relative_energy_antisymmetry():
    a = relative_energy_report(-2.0, -2.5)
    b = relative_energy_report(-2.5, -2.0)
    assert abs(a.delta_kcal + b.delta_kcal) < 1e-12
    assert abs(a.delta_kcal - 0.5 * HARTREE_TO_KCAL) < 1e-9
