"""Local unitary cluster-Jastrow state preparation and sampling.

The ansatz alternates orbital rotations exp(K) with diagonal density-density
phase layers exp(iJ) applied to the aufbau reference:

    |psi> = prod_mu exp(K_mu) exp(i J_mu) exp(-K_mu) |x_ref>

Parameters are initialized from doubles amplitudes through an exact
eigendecomposition of the amplitude matrix; each eigenvector yields one
(orbital rotation, diagonal Coulomb matrix) pair.  The rotations are complex
unitary: with real orthogonal rotations and real Coulomb matrices the
reconstruction identity for the amplitudes cannot absorb its explicit factor
of i, so exactness forces the complex form.

States are prepared exactly as statevectors over the particle-number sector,
which is the desk-scale stand-in for sampling hardware: the distribution
sampled here is the one a device is meant to produce.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .cisolver import SubspaceBasis
from .determinants import (
    hf_determinant,
    occupation_array,
    occupied_orbitals,
    sector_dimension,
    to_bitstring,
)
from .exceptions import CapacityError, DegeneracyError, FormatError, ValidationError
from .hamio import SampleSet

DEFAULT_STATEVECTOR_BUDGET = 400_000
DENOMINATOR_FLOOR = 1e-8


@dataclass
class AmplitudeSet:
    """Singles/doubles amplitudes plus the orbital energies they came from.

    t2 has shape (n_occ, n_occ, n_virt, n_virt) indexed t2[i, j, a, b] and is
    symmetric under the simultaneous (i<->j, a<->b) exchange.
    """

    t1: np.ndarray
    t2: np.ndarray
    eps: np.ndarray | None = None

    @property
    def n_occ(self) -> int:
        return self.t2.shape[0]

    @property
    def n_virt(self) -> int:
        return self.t2.shape[2]

    def validate(self, tol: float = 1e-12) -> None:
        no, nv = self.n_occ, self.n_virt
        if self.t2.shape != (no, no, nv, nv):
            raise ValidationError(f"t2 shape {self.t2.shape} is not (no, no, nv, nv)")
        if np.abs(self.t2 - self.t2.transpose(1, 0, 3, 2)).max(initial=0.0) > tol:
            raise ValidationError("t2 violates the (i<->j, a<->b) exchange symmetry")
        if self.t1.shape != (no, nv):
            raise ValidationError(f"t1 shape {self.t1.shape} is not (n_occ, n_virt)")


def semicanonicalize(ham) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diagonalize the closed-shell Fock matrix within the occ/virt blocks.

    Returns (rotation, eps, fock) where rotation is block diagonal over the
    aufbau occupied/virtual split and eps are the semicanonical energies.
    """
    if ham.n_alpha != ham.n_beta:
        raise ValidationError("closed-shell Hamiltonian required")
    n_occ = ham.n_alpha
    occ = list(range(n_occ))
    fock = ham.h.copy()
    if occ:
        fock += 2.0 * np.einsum("pqii->pq", ham.eri[:, :, occ][:, :, :, occ])
        fock -= np.einsum("piiq->pq", ham.eri[:, occ][:, :, occ])
    rot = np.zeros((ham.m, ham.m))
    eps = np.zeros(ham.m)
    if n_occ:
        eps[:n_occ], rot[:n_occ, :n_occ] = np.linalg.eigh(fock[:n_occ, :n_occ])
    if n_occ < ham.m:
        eps[n_occ:], rot[n_occ:, n_occ:] = np.linalg.eigh(fock[n_occ:, n_occ:])
    return rot, eps, fock


def mp2_amplitudes(ham) -> tuple[AmplitudeSet, float]:
    """Second-order doubles amplitudes and correlation energy for a cluster.

    The cluster orbitals must follow the aufbau convention (occupied block
    first); they are semicanonicalized internally and the amplitudes are
    rotated back, so the returned t2 lives in the cluster's own basis.
    """
    rot, eps, _ = semicanonicalize(ham)
    n_occ, m = ham.n_alpha, ham.m
    n_virt = m - n_occ
    if n_occ == 0 or n_virt == 0:
        t2 = np.zeros((n_occ, n_occ, n_virt, n_virt))
        return AmplitudeSet(t1=np.zeros((n_occ, n_virt)), t2=t2, eps=eps), 0.0

    eri_sc = np.einsum("pqrs,pi,qj,rk,sl->ijkl", ham.eri, rot, rot, rot, rot, optimize=True)
    ovov = eri_sc[:n_occ, n_occ:, :n_occ, n_occ:]  # (ia|jb)

    denom = (
        eps[:n_occ, None, None, None]
        + eps[None, :n_occ, None, None]
        - eps[None, None, n_occ:, None]
        - eps[None, None, None, n_occ:]
    )
    worst = np.abs(denom).min()
    if worst < DENOMINATOR_FLOOR:
        i, j, a, b = np.unravel_index(np.abs(denom).argmin(), denom.shape)
        raise DegeneracyError(
            f"orbital quadruple (i={i}, j={j}, a={a + n_occ}, b={b + n_occ}) has "
            f"denominator {worst:.2e}"
        )
    t2_sc = ovov.transpose(0, 2, 1, 3) / denom
    e_mp2 = float(
        np.einsum("ijab,iajb->", t2_sc, 2.0 * ovov)
        - np.einsum("ijab,ibja->", t2_sc, ovov)
    )
    u_occ = rot[:n_occ, :n_occ]
    u_virt = rot[n_occ:, n_occ:]
    t2 = np.einsum("IJAB,iI,jJ,aA,bB->ijab", t2_sc, u_occ, u_occ, u_virt, u_virt, optimize=True)
    amps = AmplitudeSet(t1=np.zeros((n_occ, n_virt)), t2=t2, eps=eps)
    amps.validate(tol=1e-10)
    return amps, e_mp2


@dataclass
class DoubleFactorization:
    """Eigendecomposition of the doubles amplitudes into (rotation, Coulomb)
    pairs, ordered by descending eigenvalue magnitude."""

    n_occ: int
    n_virt: int
    rotations: list[np.ndarray] = field(default_factory=list)  # complex unitary
    coulomb: list[np.ndarray] = field(default_factory=list)  # real symmetric

    @property
    def n_terms(self) -> int:
        return len(self.rotations)

    def truncated(self, n_terms: int) -> "DoubleFactorization":
        return DoubleFactorization(
            n_occ=self.n_occ,
            n_virt=self.n_virt,
            rotations=self.rotations[:n_terms],
            coulomb=self.coulomb[:n_terms],
        )

    def validate(self, tol: float = 1e-10) -> None:
        m = self.n_occ + self.n_virt
        for u, j in zip(self.rotations, self.coulomb):
            if np.abs(u.conj().T @ u - np.eye(m)).max() > tol:
                raise ValidationError("factorization rotation is not unitary")
            if np.abs(j - j.T).max() > tol:
                raise ValidationError("factorization Coulomb matrix is not symmetric")


def double_factorize_t2(t2: np.ndarray, tol: float = 1e-12) -> DoubleFactorization:
    """Exact double factorization of doubles amplitudes.

    Reconstructing through reconstruct_t2 reproduces t2 to numerical
    precision when every nonzero eigenpair is kept; truncation keeps the
    leading terms by eigenvalue magnitude.
    """
    no, _, nv, _ = t2.shape
    mat = t2.transpose(0, 2, 1, 3).reshape(no * nv, no * nv)
    if np.abs(mat - mat.T).max(initial=0.0) > 1e-10:
        raise ValidationError("t2 amplitude matrix is not symmetric under (ia)<->(jb)")
    m = no + nv
    df = DoubleFactorization(n_occ=no, n_virt=nv)
    if mat.size == 0:
        return df
    eigvals, eigvecs = np.linalg.eigh(mat)
    order = np.argsort(-np.abs(eigvals))
    phase = np.exp(-1j * np.pi / 4.0)
    for idx in order:
        lam = eigvals[idx]
        if abs(lam) <= tol:
            continue
        g = eigvecs[:, idx].reshape(no, nv)
        gmat = np.zeros((m, m))
        gmat[no:, :no] = g.T
        herm = phase * gmat + np.conj(phase) * gmat.T
        d, w = np.linalg.eigh(herm)
        df.rotations.append(w)
        df.coulomb.append(lam * np.outer(d, d))
    df.validate()
    return df


def reconstruct_t2(df: DoubleFactorization) -> np.ndarray:
    """Evaluate the amplitude-reconstruction identity for the kept terms."""
    no, nv = df.n_occ, df.n_virt
    out = np.zeros((no, no, nv, nv), dtype=complex)
    for u, j in zip(df.rotations, df.coulomb):
        u_occ = u[:no, :]
        u_virt = u[no:, :]
        out += 1j * np.einsum(
            "pq,ap,ip,bq,jq->ijab",
            j, u_virt, u_occ.conj(), u_virt, u_occ.conj(),
            optimize=True,
        )
    if np.abs(out.imag).max(initial=0.0) > 1e-8:
        raise ValidationError("reconstructed amplitudes have a large imaginary part")
    return out.real


def chi_diagnostic(df: DoubleFactorization, t2: np.ndarray) -> float:
    """Squared reconstruction error 0.5 * sum |t2_rebuilt - t2|^2."""
    diff = reconstruct_t2(df) - t2
    return float(0.5 * np.sum(np.abs(diff) ** 2))


@dataclass
class LucjParams:
    """Per-layer one-body generators and spin-orbital density couplings."""

    m: int
    layers: list[tuple[np.ndarray, np.ndarray]]  # (K anti-hermitian m x m, J 2m x 2m)

    def validate(self, tol: float = 1e-12) -> None:
        for k, j in self.layers:
            if np.abs(k + k.conj().T).max(initial=0.0) > tol:
                raise ValidationError("one-body generator is not anti-hermitian")
            if np.abs(j - j.T).max(initial=0.0) > tol:
                raise ValidationError("density coupling matrix is not symmetric")


def _adjacency_mask(m: int, connectivity) -> np.ndarray:
    """Boolean (2m, 2m) mask of allowed density-density couplings.

    `connectivity` is an iterable of spin-orbital index pairs (alpha orbital
    p at index p, beta at m+p); None means all-to-all.  Self couplings are
    always allowed.
    """
    if connectivity is None:
        return np.ones((2 * m, 2 * m), dtype=bool)
    mask = np.eye(2 * m, dtype=bool)
    for p, q in connectivity:
        if not (0 <= p < 2 * m and 0 <= q < 2 * m):
            raise ValidationError(f"connectivity pair ({p}, {q}) out of range")
        mask[p, q] = mask[q, p] = True
    return mask


def lucj_from_factorization(
    df: DoubleFactorization,
    connectivity=None,
    n_layers: int = 1,
) -> LucjParams:
    """Turn factorization terms into ansatz layers.

    Layer mu takes K from the principal matrix logarithm of the mu-th
    rotation and broadcasts the mu-th Coulomb matrix over the four spin
    blocks, then zeroes couplings not allowed by the connectivity map.
    """
    m = df.n_occ + df.n_virt
    if df.n_terms == 0:
        zero = (np.zeros((m, m), dtype=complex), np.zeros((2 * m, 2 * m)))
        return LucjParams(m=m, layers=[zero])
    if n_layers > df.n_terms:
        raise ValidationError(
            f"requested {n_layers} layers but the factorization has {df.n_terms} terms"
        )
    mask = _adjacency_mask(m, connectivity)
    layers = []
    for u, jmat in zip(df.rotations[:n_layers], df.coulomb[:n_layers]):
        eigs = np.linalg.eigvals(u)
        if np.abs(eigs + 1.0).min() < 1e-12:
            raise ValidationError(
                "rotation has an eigenvalue at -1; the principal logarithm is "
                "ambiguous, re-gauge the factorization"
            )
        k = scipy.linalg.logm(u)
        j_so = np.zeros((2 * m, 2 * m))
        j_so[:m, :m] = j_so[m:, m:] = j_so[:m, m:] = j_so[m:, :m] = jmat
        j_so[~mask] = 0.0
        layers.append((k, j_so))
    params = LucjParams(m=m, layers=layers)
    params.validate(tol=1e-10)
    return params


@dataclass
class Statevector:
    """Complex amplitudes over a full particle-number sector."""

    basis: SubspaceBasis
    amplitudes: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def spin_populations(self) -> tuple[float, float]:
        occ = _occupancy_matrix(self.basis)
        weights = np.abs(self.amplitudes) ** 2
        m = self.basis.m
        return float(weights @ occ[:, :m].sum(axis=1)), float(weights @ occ[:, m:].sum(axis=1))


def _occupancy_matrix(basis: SubspaceBasis) -> np.ndarray:
    cached = basis.__dict__.get("_occupancy")
    if cached is None:
        cached = np.array([occupation_array(det, basis.m) for det in basis.dets])
        basis.__dict__["_occupancy"] = cached
    return cached


def _one_body_operator(basis: SubspaceBasis, k: np.ndarray) -> sp.csr_matrix:
    """Matrix of sum_prs K[p,r] a+_ps a_rs over the sector basis."""
    d = len(basis)
    index = basis.index
    m = basis.m
    rows, cols, vals = [], [], []
    for j, det in enumerate(basis.dets):
        diag = 0.0 + 0.0j
        for channel in (0, 1):
            mask = det.alpha if channel == 0 else det.beta
            occ = occupied_orbitals(mask)
            for r in occ:
                diag += k[r, r]
                for p in range(m):
                    if p == r or (mask >> p) & 1:
                        continue
                    if k[p, r] == 0.0:
                        continue
                    lo, hi = (p, r) if p < r else (r, p)
                    between = ((1 << hi) - 1) & ~((1 << (lo + 1)) - 1)
                    sign = -1.0 if (mask & between).bit_count() & 1 else 1.0
                    new_mask = mask ^ (1 << r) ^ (1 << p)
                    new_det = (
                        det._replace(alpha=new_mask)
                        if channel == 0
                        else det._replace(beta=new_mask)
                    )
                    i = index.get(new_det)
                    if i is not None:
                        rows.append(i)
                        cols.append(j)
                        vals.append(sign * k[p, r])
        if diag != 0.0:
            rows.append(j)
            cols.append(j)
            vals.append(diag)
    return sp.csr_matrix((vals, (rows, cols)), shape=(d, d), dtype=complex)


def prepare_lucj_state(
    m: int,
    n_alpha: int,
    n_beta: int,
    params: LucjParams,
    budget: int = DEFAULT_STATEVECTOR_BUDGET,
) -> Statevector:
    """Apply the ansatz layers exactly to the aufbau reference state.

    Norm and per-spin particle number are conserved by construction: the
    one-body generators act within the sector basis and the density layers
    are diagonal phases.
    """
    if params.m != m:
        raise ValidationError(f"params built for m={params.m}, state asked for m={m}")
    dim = sector_dimension(m, n_alpha, n_beta)
    if dim > budget:
        raise CapacityError(f"sector dimension {dim} exceeds statevector budget {budget}")
    basis = SubspaceBasis.full_space(m, n_alpha, n_beta)
    amps = np.zeros(dim, dtype=complex)
    amps[basis.index[hf_determinant(m, n_alpha, n_beta)]] = 1.0

    occ = _occupancy_matrix(basis)
    for k, j_so in reversed(params.layers):
        if np.abs(j_so).max(initial=0.0) == 0.0 and np.abs(k).max(initial=0.0) == 0.0:
            continue
        op = _one_body_operator(basis, k) if np.abs(k).max(initial=0.0) else None
        if op is not None:
            amps = expm_multiply(-op, amps)
        if np.abs(j_so).max(initial=0.0):
            phases = np.einsum("dp,pq,dq->d", occ, j_so, occ, optimize=True)
            amps = amps * np.exp(1j * phases)
        if op is not None:
            amps = expm_multiply(op, amps)
    state = Statevector(basis=basis, amplitudes=amps)
    if abs(state.norm() - 1.0) > 1e-10:
        raise ValidationError(f"state norm drifted to {state.norm():.12f}")
    return state


def sample_counts(state: Statevector, shots: int, seed) -> SampleSet:
    """Multinomial draw from the Born distribution of the statevector."""
    if shots < 1:
        raise ValidationError("shots must be >= 1")
    probs = np.abs(state.amplitudes) ** 2
    probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(shots, probs)
    m = state.basis.m
    counts = {
        to_bitstring(state.basis.dets[i], m): int(n)
        for i, n in enumerate(draws)
        if n > 0
    }
    return SampleSet(n_qubits=2 * m, counts=counts)


def inject_readout_noise(samples: SampleSet, eps: float, seed, eps_up: float | None = None) -> SampleSet:
    """Flip every bit of every shot independently.

    `eps` is the flip probability; pass `eps_up` for an asymmetric channel
    where set bits flip with eps (1 -> 0) and clear bits with eps_up
    (0 -> 1).
    """
    if not 0.0 <= eps <= 1.0:
        raise ValidationError(f"eps={eps} outside [0, 1]")
    if eps_up is None:
        eps_up = eps
    elif not 0.0 <= eps_up <= 1.0:
        raise ValidationError(f"eps_up={eps_up} outside [0, 1]")
    if eps == 0.0 and eps_up == 0.0:
        return SampleSet(n_qubits=samples.n_qubits, counts=dict(samples.counts))
    rng = np.random.default_rng(seed)
    n_bits = samples.n_qubits
    out: dict[str, int] = {}
    for bits in sorted(samples.counts):
        count = samples.counts[bits]
        base = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
        prob = np.where(base == 1, eps, eps_up)
        flips = rng.random((count, n_bits)) < prob[None, :]
        flipped = np.bitwise_xor(base[None, :], flips.astype(np.uint8))
        rows, row_counts = np.unique(flipped, axis=0, return_counts=True)
        for row, n in zip(rows, row_counts):
            key = "".join("1" if b else "0" for b in row)
            out[key] = out.get(key, 0) + int(n)
    result = SampleSet(n_qubits=n_bits, counts=out)
    assert result.total_shots == samples.total_shots
    return result


def save_amplitudes(amps: AmplitudeSet, path) -> None:
    """Dense text format: dimension header, then t1 rows, then t2 blocks."""
    amps.validate(tol=1e-10)
    no, nv = amps.n_occ, amps.n_virt
    lines = [f"n_occ {no}", f"n_virt {nv}", "t1"]
    for i in range(no):
        lines.append(" ".join(f"{x:.17g}" for x in amps.t1[i]))
    lines.append("t2")
    for i in range(no):
        for j in range(no):
            lines.append(" ".join(f"{x:.17g}" for x in amps.t2[i, j].ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_amplitudes(path) -> AmplitudeSet:
    lines = [l.strip() for l in Path(path).read_text().splitlines() if l.strip()]
    try:
        no = int(lines[0].split()[1])
        nv = int(lines[1].split()[1])
        if lines[2] != "t1":
            raise FormatError(f"{path}: expected 't1' section header")
        t1 = np.array([[float(x) for x in lines[3 + i].split()] for i in range(no)])
        t1 = t1.reshape(no, nv) if no else np.zeros((0, nv))
        if lines[3 + no] != "t2":
            raise FormatError(f"{path}: expected 't2' section header")
        t2 = np.zeros((no, no, nv, nv))
        row = 4 + no
        for i in range(no):
            for j in range(no):
                t2[i, j] = np.array([float(x) for x in lines[row].split()]).reshape(nv, nv)
                row += 1
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: malformed amplitude file ({exc})") from exc
    amps = AmplitudeSet(t1=t1, t2=t2)
    amps.validate(tol=1e-10)
    return amps
