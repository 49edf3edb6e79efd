"""Bit-packed Slater determinants and their matrix elements.

A determinant is a pair of occupation bitmasks over M spatial orbitals,
one per spin channel: bit p of ``alpha`` set means spin-orbital (p, alpha)
is occupied.  Masks are plain Python ints, capping M at 64 orbitals.

The text encoding used by sample files puts alpha orbital p at string
position p and beta orbital p at position M + p.

All functions here are pure; determinant lists are safe to share across
threads.
"""

from __future__ import annotations

import itertools
from math import comb
from typing import NamedTuple

import numpy as np

from .exceptions import CapacityError, ValidationError

MAX_ORBITALS = 64


class Determinant(NamedTuple):
    """Occupation bitmasks for the alpha and beta spin channels."""

    alpha: int
    beta: int


def popcount(mask: int) -> int:
    return mask.bit_count()


def occupied_orbitals(mask: int) -> list[int]:
    """Indices of set bits, ascending."""
    out = []
    while mask:
        lsb = mask & -mask
        out.append(lsb.bit_length() - 1)
        mask ^= lsb
    return out


def hf_determinant(m: int, n_alpha: int, n_beta: int) -> Determinant:
    """Aufbau reference: the lowest n_alpha / n_beta orbitals occupied."""
    return Determinant((1 << n_alpha) - 1, (1 << n_beta) - 1)


def sector_dimension(m: int, n_alpha: int, n_beta: int) -> int:
    return comb(m, n_alpha) * comb(m, n_beta)


def _spin_masks(m: int, n: int) -> list[int]:
    """All n-subsets of m orbitals as masks, in increasing integer order."""
    masks = [sum(1 << p for p in occ) for occ in itertools.combinations(range(m), n)]
    masks.sort()
    return masks


def enumerate_space(m: int, n_alpha: int, n_beta: int) -> list[Determinant]:
    """Full determinant space of a particle-number sector.

    Returns C(m, n_alpha) * C(m, n_beta) determinants in the global
    deterministic order: ascending (alpha mask, beta mask) integer pairs.
    """
    if m > MAX_ORBITALS:
        raise CapacityError(f"m={m} exceeds the {MAX_ORBITALS}-bit mask capacity")
    if not (0 <= n_alpha <= m and 0 <= n_beta <= m):
        raise ValidationError(f"electron counts ({n_alpha},{n_beta}) outside [0,{m}]")
    alphas = _spin_masks(m, n_alpha)
    betas = _spin_masks(m, n_beta)
    return [Determinant(a, b) for a in alphas for b in betas]


def _mask_between(lo: int, hi: int) -> int:
    """Bits strictly between positions lo and hi (order-insensitive)."""
    if lo > hi:
        lo, hi = hi, lo
    return ((1 << hi) - 1) & ~((1 << (lo + 1)) - 1)


def _apply_single(mask: int, hole: int, particle: int) -> tuple[int, int]:
    """Move one electron hole -> particle; return (new mask, fermion sign)."""
    sign = -1 if popcount(mask & _mask_between(hole, particle)) & 1 else 1
    return mask ^ (1 << hole) ^ (1 << particle), sign


def _channel_excitation(src: int, dst: int) -> tuple[int, list[int], list[int]]:
    """Degree, holes and particles taking the src mask to dst within one spin."""
    diff = src ^ dst
    holes = occupied_orbitals(diff & src)
    particles = occupied_orbitals(diff & dst)
    return len(holes), holes, particles


def _channel_sign(src: int, holes: list[int], particles: list[int]) -> int:
    """Parity of the ordered hole->particle moves applied to src."""
    sign = 1
    mask = src
    for h, p in zip(holes, particles):
        mask, s = _apply_single(mask, h, p)
        sign *= s
    return sign


def excitation_degree_and_parity(a: Determinant, b: Determinant) -> tuple[int, int]:
    """Excitation degree between two determinants and the fermionic sign.

    Degree is half the total Hamming distance over both spin channels.
    The sign pairs holes and particles in ascending orbital order and is
    meaningful for degree <= 2 (returned as +1 beyond that).
    """
    deg_a, holes_a, parts_a = _channel_excitation(b.alpha, a.alpha)
    deg_b, holes_b, parts_b = _channel_excitation(b.beta, a.beta)
    degree = deg_a + deg_b
    if degree > 2:
        return degree, 1
    sign = _channel_sign(b.alpha, holes_a, parts_a) * _channel_sign(b.beta, holes_b, parts_b)
    return degree, sign


def connected_singles(det: Determinant, m: int) -> list[Determinant]:
    """Every spin-conserving single excitation of det, in deterministic order.

    Alpha excitations first, ordered by (hole, particle); count is
    n_alpha*(m - n_alpha) + n_beta*(m - n_beta).
    """
    out = []
    for channel in ("alpha", "beta"):
        mask = getattr(det, channel)
        occ = occupied_orbitals(mask)
        virt = [p for p in range(m) if not (mask >> p) & 1]
        for i in occ:
            for a in virt:
                new = mask ^ (1 << i) ^ (1 << a)
                if channel == "alpha":
                    out.append(Determinant(new, det.beta))
                else:
                    out.append(Determinant(det.alpha, new))
    return out


def connected_doubles(det: Determinant, m: int) -> list[Determinant]:
    """Every spin-conserving double excitation of det.

    Same-spin pair excitations within each channel plus all products of one
    alpha single with one beta single; deterministic order, det excluded.
    """
    out = []
    for channel in ("alpha", "beta"):
        mask = getattr(det, channel)
        occ = occupied_orbitals(mask)
        virt = [p for p in range(m) if not (mask >> p) & 1]
        for hi in range(len(occ)):
            for hj in range(hi + 1, len(occ)):
                for pi in range(len(virt)):
                    for pj in range(pi + 1, len(virt)):
                        new = (
                            mask
                            ^ (1 << occ[hi]) ^ (1 << occ[hj])
                            ^ (1 << virt[pi]) ^ (1 << virt[pj])
                        )
                        if channel == "alpha":
                            out.append(Determinant(new, det.beta))
                        else:
                            out.append(Determinant(det.alpha, new))
    occ_a = occupied_orbitals(det.alpha)
    virt_a = [p for p in range(m) if not (det.alpha >> p) & 1]
    occ_b = occupied_orbitals(det.beta)
    virt_b = [p for p in range(m) if not (det.beta >> p) & 1]
    for i in occ_a:
        for a in virt_a:
            new_a = det.alpha ^ (1 << i) ^ (1 << a)
            for j in occ_b:
                for b in virt_b:
                    out.append(Determinant(new_a, det.beta ^ (1 << j) ^ (1 << b)))
    return out


def slater_condon_element(ham, a: Determinant, b: Determinant) -> float:
    """Hamiltonian matrix element <a|H|b> by the Slater-Condon rules.

    `ham` supplies e0, the one-body matrix h and the chemists'-notation
    two-body tensor eri (see hamio.ClusterHamiltonian).  Both determinants
    must carry the same per-spin particle numbers; elements between
    determinants more than doubly excited from each other vanish.
    """
    if popcount(a.alpha) != popcount(b.alpha) or popcount(a.beta) != popcount(b.beta):
        raise ValidationError("determinants lie in different particle-number sectors")
    deg_a, holes_a, parts_a = _channel_excitation(b.alpha, a.alpha)
    deg_b, holes_b, parts_b = _channel_excitation(b.beta, a.beta)
    degree = deg_a + deg_b
    if degree > 2:
        return 0.0
    h, eri = ham.h, ham.eri
    if degree == 0:
        return _diagonal_element(ham, b)
    sign = _channel_sign(b.alpha, holes_a, parts_a) * _channel_sign(b.beta, holes_b, parts_b)
    if degree == 1:
        if deg_a == 1:
            i, p = holes_a[0], parts_a[0]
            same = occupied_orbitals(a.alpha & b.alpha)
            other = occupied_orbitals(b.beta)
        else:
            i, p = holes_b[0], parts_b[0]
            same = occupied_orbitals(a.beta & b.beta)
            other = occupied_orbitals(b.alpha)
        val = h[p, i]
        if same:
            val += eri[p, i, same, same].sum() - eri[p, same, same, i].sum()
        if other:
            val += eri[p, i, other, other].sum()
        return sign * val
    # degree == 2
    if deg_a == 2 or deg_b == 2:
        (i, j), (p, q) = (holes_a, parts_a) if deg_a == 2 else (holes_b, parts_b)
        return sign * (eri[p, i, q, j] - eri[p, j, q, i])
    ia, pa = holes_a[0], parts_a[0]
    ib, pb = holes_b[0], parts_b[0]
    return sign * eri[pa, ia, pb, ib]


def _diagonal_element(ham, det: Determinant) -> float:
    occ_a = occupied_orbitals(det.alpha)
    occ_b = occupied_orbitals(det.beta)
    h = ham.h
    jdiag, kdiag = ham.coulomb_diag, ham.exchange_diag
    val = ham.e0
    if occ_a:
        val += h[occ_a, occ_a].sum()
        val += 0.5 * (jdiag[np.ix_(occ_a, occ_a)].sum() - kdiag[np.ix_(occ_a, occ_a)].sum())
    if occ_b:
        val += h[occ_b, occ_b].sum()
        val += 0.5 * (jdiag[np.ix_(occ_b, occ_b)].sum() - kdiag[np.ix_(occ_b, occ_b)].sum())
    if occ_a and occ_b:
        val += jdiag[np.ix_(occ_a, occ_b)].sum()
    return float(val)


def to_bitstring(det: Determinant, m: int) -> str:
    """Text encoding: position p = alpha orbital p, position m+p = beta."""
    bits = []
    for p in range(m):
        bits.append("1" if (det.alpha >> p) & 1 else "0")
    for p in range(m):
        bits.append("1" if (det.beta >> p) & 1 else "0")
    return "".join(bits)


def from_bitstring(bitstring: str) -> Determinant:
    """Inverse of to_bitstring; the string length must be even (2M bits)."""
    n = len(bitstring)
    if n % 2:
        raise ValidationError(f"bitstring length {n} is odd; expected 2M bits")
    m = n // 2
    alpha = beta = 0
    for p, c in enumerate(bitstring[:m]):
        if c == "1":
            alpha |= 1 << p
    for p, c in enumerate(bitstring[m:]):
        if c == "1":
            beta |= 1 << p
    return Determinant(alpha, beta)


def occupation_array(det: Determinant, m: int) -> np.ndarray:
    """0/1 occupation vector over 2M spin orbitals (alpha block first)."""
    out = np.zeros(2 * m)
    for p in occupied_orbitals(det.alpha):
        out[p] = 1.0
    for p in occupied_orbitals(det.beta):
        out[m + p] = 1.0
    return out
