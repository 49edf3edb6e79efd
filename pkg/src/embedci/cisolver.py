"""Subspace CI: projected Hamiltonians, Davidson ground states, and reduced
density matrices.

The same machinery serves full CI (subspace = complete sector space) and
sampling-based selected CI (subspace drawn from measurements).  Projected
Hamiltonians are assembled sparse by default; an on-the-fly operator is
available when the assembled matrix would not fit in memory.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .determinants import (
    Determinant,
    _channel_excitation,
    _channel_sign,
    connected_doubles,
    connected_singles,
    enumerate_space,
    hf_determinant,
    occupation_array,
    occupied_orbitals,
    popcount,
    sector_dimension,
    slater_condon_element,
)
from .exceptions import CapacityError, ConvergenceError, ValidationError

DENSE_THRESHOLD = 512
DEFAULT_FCI_BUDGET = 500_000


@dataclass(frozen=True)
class SubspaceBasis:
    """Ordered, deduplicated determinant list within one particle sector."""

    dets: tuple[Determinant, ...]
    m: int
    n_alpha: int
    n_beta: int

    @classmethod
    def from_determinants(cls, dets: Iterable[Determinant], m: int) -> "SubspaceBasis":
        unique = sorted(set(dets))
        if not unique:
            raise ValidationError("subspace basis is empty")
        n_alpha = popcount(unique[0].alpha)
        n_beta = popcount(unique[0].beta)
        for det in unique:
            if popcount(det.alpha) != n_alpha or popcount(det.beta) != n_beta:
                raise ValidationError("subspace mixes particle-number sectors")
        return cls(dets=tuple(unique), m=m, n_alpha=n_alpha, n_beta=n_beta)

    @classmethod
    def full_space(cls, m: int, n_alpha: int, n_beta: int) -> "SubspaceBasis":
        return cls(dets=tuple(enumerate_space(m, n_alpha, n_beta)), m=m,
                   n_alpha=n_alpha, n_beta=n_beta)

    def __len__(self) -> int:
        return len(self.dets)

    @property
    def index(self) -> dict[Determinant, int]:
        cached = self.__dict__.get("_index")
        if cached is None:
            cached = {det: i for i, det in enumerate(self.dets)}
            self.__dict__["_index"] = cached
        return cached

    def check_sector(self, ham) -> None:
        if (self.n_alpha, self.n_beta) != (ham.n_alpha, ham.n_beta):
            raise ValidationError(
                f"basis sector ({self.n_alpha},{self.n_beta}) does not match "
                f"hamiltonian sector ({ham.n_alpha},{ham.n_beta})"
            )
        if self.m != ham.m:
            raise ValidationError(f"basis m={self.m} != hamiltonian m={ham.m}")


@dataclass
class CiVector:
    """Normalized CI coefficients over a SubspaceBasis."""

    basis: SubspaceBasis
    coeffs: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def occupations(self) -> np.ndarray:
        """Per-spin-orbital occupations <n_p_sigma>, alpha block first."""
        out = np.zeros(2 * self.basis.m)
        for det, c in zip(self.basis.dets, self.coeffs):
            out += (c * c) * occupation_array(det, self.basis.m)
        return out

    def coefficient_map(self, threshold: float = 0.0) -> dict[Determinant, float]:
        return {
            det: float(c)
            for det, c in zip(self.basis.dets, self.coeffs)
            if abs(c) >= threshold
        }


def _upper_connections(basis: SubspaceBasis) -> Iterator[tuple[int, int]]:
    """Yield index pairs (i, j) with j > i connected by degree 1 or 2."""
    index = basis.index
    for i, det in enumerate(basis.dets):
        seen = set()
        for other in connected_singles(det, basis.m):
            j = index.get(other)
            if j is not None and j > i and j not in seen:
                seen.add(j)
                yield i, j
        for other in connected_doubles(det, basis.m):
            j = index.get(other)
            if j is not None and j > i and j not in seen:
                seen.add(j)
                yield i, j


def build_projected_hamiltonian(ham, basis: SubspaceBasis) -> sp.csr_matrix:
    """Assemble P H P over the basis as a sparse symmetric matrix."""
    basis.check_sector(ham)
    d = len(basis)
    rows, cols, vals = [], [], []
    for i, det in enumerate(basis.dets):
        rows.append(i)
        cols.append(i)
        vals.append(slater_condon_element(ham, det, det))
    for i, j in _upper_connections(basis):
        v = slater_condon_element(ham, basis.dets[i], basis.dets[j])
        rows.extend((i, j))
        cols.extend((j, i))
        vals.extend((v, v))
    return sp.csr_matrix((vals, (rows, cols)), shape=(d, d))


class OnTheFlyHamiltonian(spla.LinearOperator):
    """Matrix-free projected Hamiltonian: rows regenerated at every matvec.

    Memory stays O(d); use when the assembled sparse matrix would not fit.
    """

    def __init__(self, ham, basis: SubspaceBasis):
        basis.check_sector(ham)
        self.ham = ham
        self.basis = basis
        d = len(basis)
        super().__init__(dtype=float, shape=(d, d))
        self.diag = np.array(
            [slater_condon_element(ham, det, det) for det in basis.dets]
        )

    def _matvec(self, x):
        x = np.asarray(x).ravel()
        y = self.diag * x
        dets = self.basis.dets
        for i, j in _upper_connections(self.basis):
            v = slater_condon_element(self.ham, dets[i], dets[j])
            y[i] += v * x[j]
            y[j] += v * x[i]
        return y

    def diagonal(self):
        return self.diag


def _fix_sign(vec: np.ndarray) -> np.ndarray:
    pivot = int(np.argmax(np.abs(vec)))
    return -vec if vec[pivot] < 0 else vec


def davidson_ground_state(
    h_s,
    guess: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int = 200,
    dense_threshold: int = DENSE_THRESHOLD,
    max_subspace: int = 24,
) -> tuple[float, np.ndarray]:
    """Lowest eigenpair of a symmetric matrix or linear operator.

    Small problems (d <= dense_threshold) fall back to a dense
    diagonalization; otherwise a Davidson iteration with diagonal
    preconditioning and max-overlap root following runs until the residual
    norm drops below tol.  Deterministic for a fixed guess and tolerance.
    """
    d = h_s.shape[0]
    if d < 1:
        raise ValidationError("empty subspace")
    if d <= dense_threshold:
        dense = h_s @ np.eye(d) if not hasattr(h_s, "toarray") else h_s.toarray()
        w, v = np.linalg.eigh(dense)
        return float(w[0]), _fix_sign(v[:, 0])

    if hasattr(h_s, "diagonal"):
        diag = np.asarray(h_s.diagonal(), dtype=float)
    else:
        raise ValidationError("iterative solve needs a diagonal() on the operator")
    if guess is None:
        guess = np.zeros(d)
        guess[int(np.argmin(diag))] = 1.0
    ref = guess / np.linalg.norm(guess)

    vmat = ref.reshape(-1, 1).copy()
    wmat = np.asarray(h_s @ vmat[:, 0]).reshape(-1, 1)
    residual_norm = np.inf
    for _ in range(max_iter):
        g = vmat.T @ wmat
        g = 0.5 * (g + g.T)
        thetas, y = np.linalg.eigh(g)
        ritz = vmat @ y
        pick = int(np.argmax(np.abs(ref @ ritz)))
        theta = float(thetas[pick])
        x = ritz[:, pick]
        residual = wmat @ y[:, pick] - theta * x
        if x[int(np.argmax(np.abs(x)))] < 0:
            x = -x
            residual = -residual
        residual_norm = float(np.linalg.norm(residual))
        if residual_norm < tol:
            return theta, x
        ref = x

        denom = theta - diag
        denom = np.where(np.abs(denom) < 1e-10, np.copysign(1e-10, denom + 1e-300), denom)
        t = residual / denom
        for _ in range(2):
            t -= vmat @ (vmat.T @ t)
        t_norm = np.linalg.norm(t)
        if t_norm < 1e-12:
            k = int(np.argmax(np.abs(residual)))
            t = np.zeros(d)
            t[k] = 1.0
            for _ in range(2):
                t -= vmat @ (vmat.T @ t)
            t_norm = np.linalg.norm(t)
            if t_norm < 1e-12:
                raise ConvergenceError(
                    f"davidson stalled at residual {residual_norm:.3e}",
                    residual=residual_norm,
                )
        t /= t_norm
        if vmat.shape[1] >= max_subspace:
            vmat = x.reshape(-1, 1).copy()
            wmat = np.asarray(h_s @ x).reshape(-1, 1)
            ref = x
        vmat = np.hstack([vmat, t.reshape(-1, 1)])
        wmat = np.hstack([wmat, np.asarray(h_s @ t).reshape(-1, 1)])
    raise ConvergenceError(
        f"davidson did not converge in {max_iter} iterations "
        f"(last residual {residual_norm:.3e})",
        residual=residual_norm,
    )


def solve_subspace(
    ham,
    basis: SubspaceBasis,
    tol: float = 1e-9,
    matrix_free: bool = False,
    dense_threshold: int = DENSE_THRESHOLD,
) -> tuple[float, CiVector]:
    """Ground state of the Hamiltonian projected onto `basis`.

    The initial guess is the aufbau reference determinant when the basis
    contains it, else the lowest-diagonal basis state.
    """
    basis.check_sector(ham)
    if matrix_free:
        op = OnTheFlyHamiltonian(ham, basis)
    else:
        op = build_projected_hamiltonian(ham, basis)
    guess = None
    hf = hf_determinant(ham.m, ham.n_alpha, ham.n_beta)
    hf_idx = basis.index.get(hf)
    if hf_idx is not None and len(basis) > dense_threshold:
        guess = np.zeros(len(basis))
        guess[hf_idx] = 1.0
    energy, coeffs = davidson_ground_state(
        op, guess=guess, tol=tol, dense_threshold=dense_threshold
    )
    return energy, CiVector(basis=basis, coeffs=coeffs)


class FciResult(NamedTuple):
    energy: float
    vector: CiVector
    rdm1: np.ndarray
    rdm2: np.ndarray


def fci_solve(
    ham,
    tol: float = 1e-9,
    budget: int = DEFAULT_FCI_BUDGET,
    matrix_free: bool = False,
) -> FciResult:
    """Full CI over the complete sector space, with RDMs of the ground state."""
    dim = sector_dimension(ham.m, ham.n_alpha, ham.n_beta)
    if dim > budget:
        raise CapacityError(
            f"full space of {dim} determinants exceeds the budget of {budget}; "
            "dispatch this cluster to the sampling-based solver instead"
        )
    basis = SubspaceBasis.full_space(ham.m, ham.n_alpha, ham.n_beta)
    energy, vector = solve_subspace(ham, basis, tol=tol, matrix_free=matrix_free)
    rdm1, rdm2 = compute_rdms(vector)
    return FciResult(energy=energy, vector=vector, rdm1=rdm1, rdm2=rdm2)


def compute_rdms(vector: CiVector) -> tuple[np.ndarray, np.ndarray]:
    """Spin-summed one- and two-body reduced density matrices.

    Conventions match the Hamiltonian: gamma[p, r] = sum_s <a+_ps a_rs> and
    Gamma[p, r, q, s] = sum_st <a+_ps a+_qt a_st a_rs>, so that
    energy_from_rdms reproduces the CI eigenvalue exactly.
    """
    basis = vector.basis
    m = basis.m
    coeffs = vector.coeffs
    gamma = np.zeros((m, m))
    gamma2 = np.zeros((m, m, m, m))

    for det, c in zip(basis.dets, coeffs):
        c2 = float(c * c)
        occ_a = occupied_orbitals(det.alpha)
        occ_b = occupied_orbitals(det.beta)
        for p in occ_a:
            gamma[p, p] += c2
        for p in occ_b:
            gamma[p, p] += c2
        for spin_occ in (occ_a, occ_b):
            for p in spin_occ:
                for q in spin_occ:
                    if p != q:
                        gamma2[p, p, q, q] += c2
                        gamma2[p, q, q, p] -= c2
        for p in occ_a:
            for q in occ_b:
                gamma2[p, p, q, q] += c2
                gamma2[q, q, p, p] += c2

    dets = basis.dets
    for i, j in _upper_connections(basis):
        cc = float(coeffs[i] * coeffs[j])
        if cc == 0.0:
            continue
        bra, ket = dets[i], dets[j]
        deg_a, holes_a, parts_a = _channel_excitation(ket.alpha, bra.alpha)
        deg_b, holes_b, parts_b = _channel_excitation(ket.beta, bra.beta)
        degree = deg_a + deg_b
        sign = _channel_sign(ket.alpha, holes_a, parts_a) * _channel_sign(
            ket.beta, holes_b, parts_b
        )
        val = sign * cc
        if degree == 1:
            if deg_a == 1:
                h, p = holes_a[0], parts_a[0]
                same = occupied_orbitals(bra.alpha & ket.alpha)
                other = occupied_orbitals(ket.beta)
            else:
                h, p = holes_b[0], parts_b[0]
                same = occupied_orbitals(bra.beta & ket.beta)
                other = occupied_orbitals(ket.alpha)
            gamma[p, h] += val
            gamma[h, p] += val
            for mm in same + other:
                gamma2[p, h, mm, mm] += val
                gamma2[h, p, mm, mm] += val
                gamma2[mm, mm, p, h] += val
                gamma2[mm, mm, h, p] += val
            for mm in same:
                gamma2[p, mm, mm, h] -= val
                gamma2[mm, h, p, mm] -= val
                gamma2[h, mm, mm, p] -= val
                gamma2[mm, p, h, mm] -= val
        else:
            if deg_a == 1 and deg_b == 1:
                ia, pa = holes_a[0], parts_a[0]
                ib, pb = holes_b[0], parts_b[0]
                gamma2[pa, ia, pb, ib] += val
                gamma2[pb, ib, pa, ia] += val
                gamma2[ia, pa, ib, pb] += val
                gamma2[ib, pb, ia, pa] += val
            else:
                (hi, hj), (pi, pj) = (
                    (holes_a, parts_a) if deg_a == 2 else (holes_b, parts_b)
                )
                gamma2[pi, hi, pj, hj] += val
                gamma2[pj, hj, pi, hi] += val
                gamma2[pi, hj, pj, hi] -= val
                gamma2[pj, hi, pi, hj] -= val
                gamma2[hi, pi, hj, pj] += val
                gamma2[hj, pj, hi, pi] += val
                gamma2[hj, pi, hi, pj] -= val
                gamma2[hi, pj, hj, pi] -= val
    return gamma, gamma2


def energy_from_rdms(ham, rdm1: np.ndarray, rdm2: np.ndarray) -> float:
    """E = e0 + sum h*gamma + 1/2 sum (pr|qs)*Gamma."""
    if rdm1.shape != (ham.m, ham.m) or rdm2.shape != (ham.m,) * 4:
        raise ValidationError("RDM shapes do not match the Hamiltonian")
    return float(
        ham.e0
        + np.einsum("pr,pr->", ham.h, rdm1)
        + 0.5 * np.einsum("prqs,prqs->", ham.eri, rdm2)
    )
