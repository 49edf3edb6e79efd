"""Fragment embedding: localized basis, entanglement baths, bath natural
orbital expansion, and per-cluster Hamiltonian extraction.

The minimal-basis localized orbitals are the symmetric (Lowdin)
orthogonalization of the AOs, one orbital per AO with the AO's atom label.
For each fragment (a group of localized orbitals) the mean-field density
yields a compact entanglement bath via SVD of its environment-fragment
block; the bath is then expanded with natural orbitals of two constrained
second-order densities, one probing the environment's virtual space and one
its occupied space.  Cluster orbitals are kept in aufbau order (occupied
block first, semicanonicalized), so downstream solvers can take the lowest
orbitals as the reference determinant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegeneracyError, ValidationError
from .hamio import ClusterHamiltonian, MeanFieldBundle

BATH_SV_TOL = 1e-8
ENV_IDEMPOTENCY_TOL = 1e-4
DEFAULT_ETA = 1e-5


@dataclass
class LocalBasis:
    """AO -> orthonormal localized transformation plus atom labels."""

    t: np.ndarray
    atom_labels: np.ndarray


@dataclass
class LocalizedSystem:
    """Mean-field data expressed in the localized orthonormal basis."""

    n: int
    h: np.ndarray
    eri: np.ndarray
    density: np.ndarray
    fock: np.ndarray
    e_nuc: float
    n_elec: int
    atom_labels: np.ndarray
    e_scf: float | None = None


@dataclass
class FragmentSpec:
    """Disjoint groups of localized-orbital indices covering the basis."""

    groups: list[list[int]]
    labels: list[str]

    def validate(self, n: int) -> None:
        seen: set[int] = set()
        for group in self.groups:
            for idx in group:
                if idx in seen:
                    raise ValidationError(f"orbital {idx} appears in two fragments")
                if not 0 <= idx < n:
                    raise ValidationError(f"orbital {idx} outside the localized basis")
                seen.add(idx)
        if seen != set(range(n)):
            raise ValidationError("fragments do not cover the localized basis")
        if len(self.labels) != len(self.groups):
            raise ValidationError("fragment labels do not match groups")


def per_atom_fragments(atom_labels: np.ndarray) -> FragmentSpec:
    """One fragment per atom: all localized orbitals sharing a label."""
    atoms = sorted(set(int(a) for a in atom_labels))
    groups = [[i for i, a in enumerate(atom_labels) if int(a) == atom] for atom in atoms]
    return FragmentSpec(groups=groups, labels=[f"atom{atom}" for atom in atoms])


def orthogonalize_localize(mf: MeanFieldBundle, atom_map=None) -> LocalBasis:
    """Symmetric orthogonalization T = S^(-1/2) with inherited atom labels."""
    w, v = np.linalg.eigh(mf.s)
    if w[0] <= 0 or w[-1] / w[0] > 1e10:
        raise ValidationError(
            f"overlap matrix is ill-conditioned (condition number {w[-1] / w[0]:.2e})"
        )
    t = (v / np.sqrt(w)) @ v.T
    if atom_map is not None:
        labels = np.asarray(atom_map, dtype=int)
    elif mf.ao_atoms is not None:
        labels = mf.ao_atoms
    else:
        raise ValidationError("no atom labels: bundle lacks ao_atoms and no map given")
    if labels.shape != (mf.n_ao,):
        raise ValidationError("atom labels must assign one atom per AO")
    check = t.T @ mf.s @ t
    if np.abs(check - np.eye(mf.n_ao)).max() > 1e-10:
        raise ValidationError("orthogonalization failed: T^T S T != identity")
    return LocalBasis(t=t, atom_labels=labels)


def localize_system(mf: MeanFieldBundle, basis: LocalBasis | None = None) -> LocalizedSystem:
    """Transform the bundle's integrals and density into the localized basis."""
    if basis is None:
        basis = orthogonalize_localize(mf)
    t = basis.t
    w, v = np.linalg.eigh(mf.s)
    s_half = (v * np.sqrt(w)) @ v.T
    density = s_half @ mf.d @ s_half
    eigs = np.linalg.eigvalsh(density)
    if eigs.min() < -1e-8 or eigs.max() > 2 + 1e-8:
        raise ValidationError("localized density has occupations outside [0, 2]")
    h = t.T @ mf.h_ao @ t
    eri = np.einsum("pqrs,pi,qj,rk,sl->ijkl", mf.eri_ao, t, t, t, t, optimize=True)
    coulomb = np.einsum("pqrs,rs->pq", eri, density)
    exchange = np.einsum("prqs,rs->pq", eri, density)
    fock = h + coulomb - 0.5 * exchange
    return LocalizedSystem(
        n=mf.n_ao,
        h=h,
        eri=eri,
        density=density,
        fock=fock,
        e_nuc=mf.e_nuc,
        n_elec=mf.n_elec,
        atom_labels=basis.atom_labels,
        e_scf=mf.e_scf,
    )


@dataclass
class EwfCluster:
    """Fragment + bath orbital block with frozen-environment bookkeeping.

    `coeffs` holds the cluster orbitals as columns over the localized basis
    in aufbau order: the first n_occ columns are the (semicanonical)
    occupied cluster orbitals.  The fragment projector is expressed in the
    cluster basis.
    """

    fragment_indices: list[int]
    coeffs: np.ndarray
    n_occ: int
    frozen_occ: np.ndarray
    frozen_virt: np.ndarray
    projector: np.ndarray
    bno_occupations: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def mo_count(self) -> int:
        return self.coeffs.shape[1]

    def validate(self, tol: float = 1e-10) -> None:
        c = self.coeffs
        if c.shape[1] == 0:
            raise ValidationError("cluster has no active orbitals")
        if np.abs(c.T @ c - np.eye(c.shape[1])).max() > tol:
            raise ValidationError("cluster columns are not orthonormal")
        for name, frozen in (("frozen_occ", self.frozen_occ), ("frozen_virt", self.frozen_virt)):
            if frozen.shape[1] and np.abs(c.T @ frozen).max() > tol:
                raise ValidationError(f"cluster columns overlap {name}")
        p = self.projector
        if np.abs(p - p.T).max() > tol or np.abs(p @ p - p).max() > tol:
            raise ValidationError("fragment projector is not an orthogonal projector")
        rank = int(round(np.trace(p)))
        if rank != len(self.fragment_indices):
            raise ValidationError(
                f"projector rank {rank} != fragment size {len(self.fragment_indices)}"
            )


def schmidt_bath(
    density: np.ndarray,
    fragment: list[int],
    sv_tol: float = BATH_SV_TOL,
    idem_tol: float = ENV_IDEMPOTENCY_TOL,
):
    """DMET entanglement bath from the environment-fragment density block.

    Returns (bath, frozen_occ, frozen_virt) as column blocks over the
    localized basis.  Bath orbitals are environment-supported left singular
    vectors with singular value above sv_tol; the remaining environment
    splits by its projected density into occupied (eigenvalue near 2) and
    virtual (near 0) frozen orbitals.
    """
    n = density.shape[0]
    env = [i for i in range(n) if i not in set(fragment)]
    half = density / 2.0
    if np.abs(half @ half - half).max() > 1e-6:
        raise ValidationError("density is not idempotent; a mean-field reference is required")
    if not env:
        empty = np.zeros((n, 0))
        return empty, empty, empty

    block = density[np.ix_(env, fragment)]
    u, sv, _ = np.linalg.svd(block, full_matrices=True)
    n_bath = int(np.sum(sv > sv_tol))
    bath = np.zeros((n, n_bath))
    bath[env, :] = u[:, :n_bath]

    rest = np.zeros((n, len(env) - n_bath))
    rest[env, :] = u[:, n_bath:]
    if rest.shape[1] == 0:
        empty = np.zeros((n, 0))
        return bath, empty, empty
    d_rest = rest.T @ density @ rest
    occ_n, vecs = np.linalg.eigh(d_rest)
    mid = (occ_n > idem_tol) & (occ_n < 2 - idem_tol)
    if mid.any():
        raise ValidationError(
            "environment density has fractional occupations "
            f"{occ_n[mid]}; bath construction requires an idempotent reference"
        )
    frozen_virt = rest @ vecs[:, occ_n <= idem_tol]
    frozen_occ = rest @ vecs[:, occ_n >= 2 - idem_tol]
    return bath, frozen_occ, frozen_virt


def _canonicalize_cluster(sys: LocalizedSystem, space: np.ndarray) -> tuple[np.ndarray, int]:
    """Split a cluster space into occupied/virtual columns and make each
    block diagonal in the Fock matrix; returns (columns, n_occ)."""
    d_cl = space.T @ sys.density @ space
    occ_n, vecs = np.linalg.eigh(d_cl)
    order = np.argsort(-occ_n)
    occ_n = occ_n[order]
    vecs = vecs[:, order]
    n_occ = int(np.sum(occ_n > 1.0))
    if np.abs(occ_n[:n_occ] - 2.0).max(initial=0.0) > 1e-6 or (
        n_occ < len(occ_n) and np.abs(occ_n[n_occ:]).max(initial=0.0) > 1e-6
    ):
        raise ValidationError("cluster density does not split into 0/2 occupations")
    cols = space @ vecs
    out = []
    for block in (cols[:, :n_occ], cols[:, n_occ:]):
        if block.shape[1]:
            f_block = block.T @ sys.fock @ block
            _, rot = np.linalg.eigh(f_block)
            out.append(block @ rot)
        else:
            out.append(block)
    return np.hstack(out), n_occ


def _fragment_projector(fragment: list[int], coeffs: np.ndarray) -> np.ndarray:
    rows = coeffs[fragment, :]
    return rows.T @ rows


def build_dmet_cluster(sys: LocalizedSystem, fragment: list[int]) -> EwfCluster:
    """Fragment plus entanglement bath, canonicalized and with the frozen
    environment split off."""
    bath, frozen_occ, frozen_virt = schmidt_bath(sys.density, fragment)
    frag_cols = np.zeros((sys.n, len(fragment)))
    for k, idx in enumerate(fragment):
        frag_cols[idx, k] = 1.0
    space = np.hstack([frag_cols, bath])
    coeffs, n_occ = _canonicalize_cluster(sys, space)
    cluster = EwfCluster(
        fragment_indices=list(fragment),
        coeffs=coeffs,
        n_occ=n_occ,
        frozen_occ=frozen_occ,
        frozen_virt=frozen_virt,
        projector=_fragment_projector(fragment, coeffs),
    )
    cluster.validate()
    return cluster


def _constrained_mp2_density(
    sys: LocalizedSystem,
    occ_cols: np.ndarray,
    virt_cols: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Doubles amplitudes for a restricted occupied/virtual pair of spaces.

    Both blocks are canonicalized in the Fock matrix first.  Returns the
    correction parts of the second-order density: (d_occ_correction in the
    canonical occupied basis, d_virt in the canonical virtual basis,
    canonical occ columns, canonical virt columns).
    """
    def canonical(cols):
        f = cols.T @ sys.fock @ cols
        eps, rot = np.linalg.eigh(f)
        return cols @ rot, eps

    occ, eps_o = canonical(occ_cols)
    virt, eps_v = canonical(virt_cols)
    no, nv = occ.shape[1], virt.shape[1]
    if no == 0 or nv == 0:
        return np.zeros((no, no)), np.zeros((nv, nv)), occ, virt
    ovov = np.einsum(
        "pqrs,pi,qa,rj,sb->iajb", sys.eri, occ, virt, occ, virt, optimize=True
    )
    denom = (
        eps_o[:, None, None, None]
        + eps_o[None, None, :, None]
        - eps_v[None, :, None, None]
        - eps_v[None, None, None, :]
    )
    if np.abs(denom).min() < 1e-8:
        raise DegeneracyError("degenerate occupied/virtual gap in bath expansion")
    t2 = (ovov / denom).transpose(0, 2, 1, 3)  # t2[i, j, a, b]
    d_occ_corr = 2.0 * (
        2.0 * np.einsum("ikab,jkab->ij", t2, t2)
        - np.einsum("ikab,jkba->ij", t2, t2)
    )
    d_virt = 2.0 * (
        2.0 * np.einsum("ijac,ijbc->ab", t2, t2)
        - np.einsum("ijac,ijcb->ab", t2, t2)
    )
    return d_occ_corr, d_virt, occ, virt


def bno_expand(sys: LocalizedSystem, cluster: EwfCluster, eta: float = DEFAULT_ETA) -> EwfCluster:
    """Expand the bath with natural orbitals of two constrained
    second-order densities.

    Virtual candidates come from a calculation with occupations restricted
    to the cluster's occupied space and every virtual active; occupied
    candidates from the converse.  Environment natural orbitals with
    occupation >= eta (virtual) or <= 2 - eta (occupied) join the cluster.
    """
    if not 0.0 <= eta <= 2.0:
        raise ValidationError(f"eta={eta} outside [0, 2]")
    occ_c = cluster.coeffs[:, : cluster.n_occ]
    virt_c = cluster.coeffs[:, cluster.n_occ:]
    env_occ = cluster.frozen_occ
    env_virt = cluster.frozen_virt

    new_virt = np.zeros((sys.n, 0))
    virt_occupations = np.zeros(0)
    if env_virt.shape[1]:
        all_virt = np.hstack([virt_c, env_virt])
        _, d_virt, _, virt_can = _constrained_mp2_density(sys, occ_c, all_virt)
        d_virt_loc = virt_can @ d_virt @ virt_can.T
        d_env = env_virt.T @ d_virt_loc @ env_virt
        occ_n, vecs = np.linalg.eigh(d_env)
        order = np.argsort(-occ_n)
        occ_n, vecs = occ_n[order], vecs[:, order]
        keep = occ_n >= eta
        new_virt = env_virt @ vecs[:, keep]
        virt_occupations = occ_n
        env_virt = env_virt @ vecs[:, ~keep]

    new_occ = np.zeros((sys.n, 0))
    occ_occupations = np.zeros(0)
    if env_occ.shape[1]:
        all_occ = np.hstack([occ_c, env_occ])
        d_occ_corr, _, occ_can, _ = _constrained_mp2_density(sys, all_occ, virt_c)
        d_occ_loc = occ_can @ d_occ_corr @ occ_can.T
        # environment block of (2 * occupied-space identity - correction)
        d_env = 2.0 * np.eye(env_occ.shape[1]) - env_occ.T @ d_occ_loc @ env_occ
        occ_n, vecs = np.linalg.eigh(d_env)
        order = np.argsort(occ_n)
        occ_n, vecs = occ_n[order], vecs[:, order]
        keep = occ_n <= 2.0 - eta
        new_occ = env_occ @ vecs[:, keep]
        occ_occupations = occ_n
        env_occ = env_occ @ vecs[:, ~keep]

    space = np.hstack([cluster.coeffs, new_occ, new_virt])
    overlap = space.T @ space
    if np.abs(overlap - np.eye(space.shape[1])).max() > 1e-10:
        w, v = np.linalg.eigh(overlap)
        space = space @ (v / np.sqrt(w)) @ v.T
    coeffs, n_occ = _canonicalize_cluster(sys, space)
    expanded = EwfCluster(
        fragment_indices=cluster.fragment_indices,
        coeffs=coeffs,
        n_occ=n_occ,
        frozen_occ=env_occ,
        frozen_virt=env_virt,
        projector=_fragment_projector(cluster.fragment_indices, coeffs),
        bno_occupations={"virtual": virt_occupations, "occupied": occ_occupations},
    )
    expanded.validate()
    return expanded


def frozen_potential(sys: LocalizedSystem, cluster: EwfCluster) -> tuple[np.ndarray, float]:
    """Coulomb-minus-half-exchange field of the frozen occupied density and
    that density's own mean-field energy."""
    fo = cluster.frozen_occ
    d_frozen = 2.0 * fo @ fo.T
    coulomb = np.einsum("pqrs,rs->pq", sys.eri, d_frozen)
    exchange = np.einsum("prqs,rs->pq", sys.eri, d_frozen)
    v = coulomb - 0.5 * exchange
    e_frozen = float(
        np.einsum("pq,pq->", d_frozen, sys.h) + 0.5 * np.einsum("pq,pq->", d_frozen, v)
    )
    return v, e_frozen


def extract_cluster_hamiltonian(sys: LocalizedSystem, cluster: EwfCluster) -> ClusterHamiltonian:
    """Active-space Hamiltonian over the cluster orbitals with the frozen
    environment folded into an effective one-body term and the constant."""
    cluster.validate()
    c = cluster.coeffs
    n_frozen = cluster.frozen_occ.shape[1]
    n_active = sys.n_elec - 2 * n_frozen
    if n_active < 0 or n_active % 2:
        raise ValidationError(
            f"frozen environment leaves {n_active} active electrons; "
            "a closed-shell cluster is required"
        )
    if n_active // 2 != cluster.n_occ:
        raise ValidationError(
            f"cluster claims {cluster.n_occ} occupied orbitals but the electron "
            f"count implies {n_active // 2}"
        )
    if cluster.mo_count == 0:
        raise ValidationError("cluster has no active orbitals")
    v_frozen, e_frozen = frozen_potential(sys, cluster)
    h_eff = sys.h + v_frozen
    h_cl = c.T @ h_eff @ c
    eri_cl = np.einsum("pqrs,pi,qj,rk,sl->ijkl", sys.eri, c, c, c, c, optimize=True)
    ham = ClusterHamiltonian(
        m=cluster.mo_count,
        n_alpha=cluster.n_occ,
        n_beta=cluster.n_occ,
        e0=sys.e_nuc + e_frozen,
        h=h_cl,
        eri=eri_cl,
    )
    ham.validate(tol=1e-8)
    return ham


def build_cluster(sys: LocalizedSystem, fragment: list[int], eta: float = DEFAULT_ETA) -> EwfCluster:
    """DMET bath construction followed by the natural-orbital expansion."""
    return bno_expand(sys, build_dmet_cluster(sys, fragment), eta=eta)
