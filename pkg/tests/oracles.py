"""Brute-force second-quantization oracles, independent of the package's
Slater-Condon code paths.

Determinants are flattened into a single occupation mask over 2M spin
orbitals (alpha orbital p at bit p, beta orbital p at bit M+p) and operator
strings are applied literally with explicit fermionic signs.  Everything
here is O(M^4 d^2) and intended only for tiny fixtures.
"""

from __future__ import annotations

import numpy as np

from embedci.determinants import Determinant


def det_to_mask(det: Determinant, m: int) -> int:
    return det.alpha | (det.beta << m)


def mask_to_det(mask: int, m: int) -> Determinant:
    return Determinant(mask & ((1 << m) - 1), mask >> m)


def annihilate(mask: int, k: int):
    if not (mask >> k) & 1:
        return None
    sign = -1 if ((mask & ((1 << k) - 1)).bit_count() & 1) else 1
    return mask ^ (1 << k), sign


def create(mask: int, k: int):
    if (mask >> k) & 1:
        return None
    sign = -1 if ((mask & ((1 << k) - 1)).bit_count() & 1) else 1
    return mask | (1 << k), sign


def apply_op_string(mask: int, ops: list[tuple[str, int]]):
    """Apply (kind, spin-orbital) pairs right to left; returns (mask, sign)."""
    sign = 1
    for kind, k in reversed(ops):
        step = annihilate(mask, k) if kind == "a" else create(mask, k)
        if step is None:
            return None
        mask, s = step
        sign *= s
    return mask, sign


def apply_hamiltonian(ham, det: Determinant) -> dict[int, float]:
    """H|det> expanded over full-Fock-space masks."""
    m = ham.m
    src = det_to_mask(det, m)
    out: dict[int, float] = {src: ham.e0}

    def add(mask, amp):
        if amp != 0.0:
            out[mask] = out.get(mask, 0.0) + amp

    for sigma in (0, 1):
        off = sigma * m
        for p in range(m):
            for r in range(m):
                if ham.h[p, r] == 0.0:
                    continue
                step = apply_op_string(src, [("c", off + p), ("a", off + r)])
                if step is not None:
                    add(step[0], ham.h[p, r] * step[1])
    for sigma in (0, 1):
        for tau in (0, 1):
            so, to = sigma * m, tau * m
            for p in range(m):
                for r in range(m):
                    for q in range(m):
                        for s in range(m):
                            coef = 0.5 * ham.eri[p, r, q, s]
                            if coef == 0.0:
                                continue
                            step = apply_op_string(
                                src,
                                [("c", so + p), ("c", to + q), ("a", to + s), ("a", so + r)],
                            )
                            if step is not None:
                                add(step[0], coef * step[1])
    return out


def dense_hamiltonian(ham, dets: list[Determinant]) -> np.ndarray:
    """<det_i|H|det_j> assembled by direct operator application."""
    m = ham.m
    pos = {det_to_mask(d, m): i for i, d in enumerate(dets)}
    h = np.zeros((len(dets), len(dets)))
    for j, det in enumerate(dets):
        for mask, amp in apply_hamiltonian(ham, det).items():
            i = pos.get(mask)
            if i is not None:
                h[i, j] += amp
    return h


def dense_rdms(dets: list[Determinant], coeffs: np.ndarray, m: int):
    """Spin-summed 1- and 2-RDMs by direct operator application."""
    masks = [det_to_mask(d, m) for d in dets]
    pos = {mask: i for i, mask in enumerate(masks)}
    gamma = np.zeros((m, m))
    gamma2 = np.zeros((m, m, m, m))
    for j, mask in enumerate(masks):
        cj = coeffs[j]
        if cj == 0.0:
            continue
        for sigma in (0, 1):
            off = sigma * m
            for p in range(m):
                for r in range(m):
                    step = apply_op_string(mask, [("c", off + p), ("a", off + r)])
                    if step is None:
                        continue
                    i = pos.get(step[0])
                    if i is not None:
                        gamma[p, r] += coeffs[i] * cj * step[1]
        for sigma in (0, 1):
            for tau in (0, 1):
                so, to = sigma * m, tau * m
                for p in range(m):
                    for r in range(m):
                        for q in range(m):
                            for s in range(m):
                                step = apply_op_string(
                                    mask,
                                    [("c", so + p), ("c", to + q), ("a", to + s), ("a", so + r)],
                                )
                                if step is None:
                                    continue
                                i = pos.get(step[0])
                                if i is not None:
                                    gamma2[p, r, q, s] += coeffs[i] * cj * step[1]
    return gamma, gamma2


def random_cluster_hamiltonian(m, n_alpha, n_beta, seed, scale=0.2):
    """Random symmetric integrals with the full 8-fold eri symmetry."""
    from embedci.hamio import ClusterHamiltonian

    rng = np.random.default_rng(seed)
    h = rng.normal(scale=scale, size=(m, m))
    h = 0.5 * (h + h.T)
    eri = rng.normal(scale=scale, size=(m, m, m, m))
    eri = 0.5 * (eri + eri.transpose(1, 0, 2, 3))
    eri = 0.5 * (eri + eri.transpose(0, 1, 3, 2))
    eri = 0.5 * (eri + eri.transpose(2, 3, 0, 1))
    return ClusterHamiltonian(
        m=m, n_alpha=n_alpha, n_beta=n_beta,
        e0=float(rng.normal()), h=h, eri=eri,
    )
