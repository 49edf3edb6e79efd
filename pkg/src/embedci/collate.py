"""Reassembly of global observables from per-cluster reduced density
matrices.

Every cluster contributes its RDMs through a symmetrized fragment
projection: gamma -> (P gamma + gamma P) / 2 and the analogous projection
of the two-body density over its first index pair.  Fragments partition the
localized basis, so summing the projected contributions neither double
counts nor drops anything; the frozen environment of each cluster enters
through half its interaction field, mirroring the projection weight.

The two-body global density is never materialized as an N^4 array: energy
contraction streams per-cluster blocks and only the one-body global density
is dense.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embedding import EwfCluster, LocalizedSystem, frozen_potential
from .exceptions import ValidationError

HARTREE_TO_KCAL = 627.5094740631


@dataclass
class ClusterResult:
    """Solved cluster: energy, RDMs in the cluster orbital basis, and the
    orbital/projector data needed to project back into the full system."""

    cluster_id: str
    solver: str
    energy: float
    rdm1: np.ndarray
    rdm2: np.ndarray
    cluster: EwfCluster
    stats: dict = field(default_factory=dict)


def project_cluster_rdms(result: ClusterResult) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrized fragment projection of the cluster RDMs.

    Returns (gamma contribution in the global localized basis, projected
    two-body block still in cluster orbitals).  The fragment projector acts
    on the first index of gamma and the first index pair of the two-body
    density, symmetrized, so the sum over clusters of the one-body
    contributions reproduces any fragment-partitioned density exactly.
    """
    p = result.cluster.projector
    m = result.cluster.mo_count
    if result.rdm1.shape != (m, m) or result.rdm2.shape != (m,) * 4:
        raise ValidationError(
            f"cluster {result.cluster_id}: RDM shapes do not match {m} orbitals"
        )
    gamma_proj = 0.5 * (p @ result.rdm1 + result.rdm1 @ p)
    gamma2_proj = 0.5 * (
        np.einsum("pt,trqs->prqs", p, result.rdm2, optimize=True)
        + np.einsum("ptqs,tr->prqs", result.rdm2, p, optimize=True)
    )
    c = result.cluster.coeffs
    gamma_global = c @ gamma_proj @ c.T
    return gamma_global, gamma2_proj


@dataclass
class GlobalRdms:
    """Global one-body density plus per-cluster two-body blocks."""

    gamma: np.ndarray
    cluster_blocks: list[tuple[str, np.ndarray, np.ndarray]]
    # (cluster_id, cluster columns, projected two-body block)

    def trace(self) -> float:
        return float(np.trace(self.gamma))


def collate_global_energy(
    sys: LocalizedSystem,
    results: list[ClusterResult],
) -> tuple[float, GlobalRdms, dict[str, float]]:
    """Total embedded energy from fragment-projected cluster RDMs.

    E = E_nuc + sum_x [ tr((h + v_frozen_x / 2) gamma_x^P)
                        + 1/2 sum (pr|qs) Gamma_x^P ]

    evaluated per cluster in its own orbital basis; the half weight on the
    frozen field matches the half weight the symmetrized projection puts on
    each cluster's environment coupling.
    """
    if not results:
        raise ValidationError("no cluster results to collate")
    covered: dict[int, str] = {}
    for result in results:
        for idx in result.cluster.fragment_indices:
            if idx in covered:
                raise ValidationError(
                    f"fragment orbital {idx} contributed by both "
                    f"{covered[idx]} and {result.cluster_id}"
                )
            covered[idx] = result.cluster_id
    missing = set(range(sys.n)) - set(covered)
    if missing:
        raise ValidationError(f"no cluster result covers orbitals {sorted(missing)}")

    gamma_global = np.zeros((sys.n, sys.n))
    blocks = []
    breakdown: dict[str, float] = {}
    e_total = sys.e_nuc
    for result in results:
        cluster = result.cluster
        c = cluster.coeffs
        gamma_g, gamma2_p = project_cluster_rdms(result)
        gamma_global += gamma_g
        blocks.append((result.cluster_id, c, gamma2_p))

        v_frozen, _ = frozen_potential(sys, cluster)
        h_eff_half = c.T @ (sys.h + 0.5 * v_frozen) @ c
        gamma_p = 0.5 * (cluster.projector @ result.rdm1 + result.rdm1 @ cluster.projector)
        eri_cl = np.einsum(
            "pqrs,pi,qj,rk,sl->ijkl", sys.eri, c, c, c, c, optimize=True
        )
        e_x = float(
            np.einsum("pr,pr->", h_eff_half, gamma_p)
            + 0.5 * np.einsum("prqs,prqs->", eri_cl, gamma2_p)
        )
        breakdown[result.cluster_id] = e_x
        e_total += e_x
    return e_total, GlobalRdms(gamma=gamma_global, cluster_blocks=blocks), breakdown


@dataclass
class EnergyReport:
    """Two-conformer comparison in the standard table layout."""

    method: str
    label_a: str
    label_b: str
    e_a: float
    e_b: float
    per_cluster: dict[str, dict[str, float]] = field(default_factory=dict)
    solver_census: dict[str, int] = field(default_factory=dict)
    diagnostics: dict[str, str] = field(default_factory=dict)

    @property
    def delta_kcal(self) -> float:
        return (self.e_a - self.e_b) * HARTREE_TO_KCAL

    def to_text(self) -> str:
        lines = [
            f"{'method':<16} {'E_' + self.label_a + ' [Eh]':>18} "
            f"{'E_' + self.label_b + ' [Eh]':>18} {'dE [kcal/mol]':>15}",
            f"{self.method:<16} {self.e_a:>18.10f} {self.e_b:>18.10f} "
            f"{self.delta_kcal:>15.2f}",
        ]
        if self.solver_census:
            census = ", ".join(f"{k}: {v}" for k, v in sorted(self.solver_census.items()))
            lines.append(f"solvers: {census}")
        for label, contributions in self.per_cluster.items():
            lines.append(f"[{label}]")
            for cid in sorted(contributions):
                lines.append(f"  {cid:<12} {contributions[cid]:>18.10f}")
        for label, digest in self.diagnostics.items():
            lines.append(f"diagnostics {label}: {digest}")
        return "\n".join(lines) + "\n"


def relative_energy_report(
    e_a: float,
    e_b: float,
    labels: tuple[str, str] = ("A", "B"),
    method: str = "embedded-ci",
) -> EnergyReport:
    """Relative energy of two total energies in kcal/mol."""
    return EnergyReport(
        method=method, label_a=labels[0], label_b=labels[1], e_a=e_a, e_b=e_b
    )
