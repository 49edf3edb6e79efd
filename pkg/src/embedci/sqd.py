"""Sampling-based subspace diagonalization with self-consistent
configuration recovery.

Measured bitstrings that violate particle-number conservation are repaired
stochastically, guided by the current estimate of the orbital occupations;
batches of repaired shots define determinant subspaces whose ground states
update the occupation estimate until energy and occupancy stop moving.  A
final augmentation step grows the best batch by single excitations of its
dominant determinants before the concluding diagonalization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cisolver import CiVector, SubspaceBasis, compute_rdms, solve_subspace
from .determinants import (
    Determinant,
    connected_singles,
    from_bitstring,
    hf_determinant,
    occupation_array,
    occupied_orbitals,
    popcount,
    sector_dimension,
)
from .exceptions import ConvergenceError, ValidationError
from .hamio import SampleSet

log = logging.getLogger(__name__)


@dataclass
class RecoveryConfig:
    """Knobs of the recovery loop; defaults follow the reference protocol."""

    samples_per_batch: int = 3000
    n_batches: int = 10
    e_tol: float = 1e-8
    occ_tol: float = 1e-5
    max_iters: int = 5
    carryover_threshold: float = 1e-4
    ext_dominance_threshold: float = 1e-5
    seed: int = 0
    repair: bool = True
    accumulate_carryover: bool = False
    subspace_cap: int = 2_000_000
    solver_tol: float = 1e-9
    keep_batches: bool = False

    def validate(self) -> None:
        positive = {
            "samples_per_batch": self.samples_per_batch,
            "n_batches": self.n_batches,
            "e_tol": self.e_tol,
            "occ_tol": self.occ_tol,
            "max_iters": self.max_iters,
            "carryover_threshold": self.carryover_threshold,
            "subspace_cap": self.subspace_cap,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ValidationError(f"{name} must be positive, got {value}")
        if self.ext_dominance_threshold < 0:
            raise ValidationError("ext_dominance_threshold must be nonnegative")


@dataclass
class BatchResult:
    index: int
    basis: SubspaceBasis
    energy: float
    vector: CiVector


@dataclass
class RecoveryState:
    iterations: int = 0
    occupations: np.ndarray | None = None
    carryover: set[Determinant] = field(default_factory=set)
    e_best: float = np.inf
    converged: bool = False


@dataclass
class IterationRecord:
    iteration: int
    batch_energies: list[float]
    batch_dims: list[int]
    e_best: float
    carryover_size: int
    occupations: np.ndarray
    batches: list[BatchResult] | None = None


@dataclass
class RecoveryResult:
    e_best: float
    best_batch: BatchResult
    state: RecoveryState
    history: list[IterationRecord]

    def diagnostics_text(self) -> str:
        """Line-oriented trace: one line per batch, per-iteration summary,
        and the occupation vector."""
        lines = []
        for rec in self.history:
            for b, (e, d) in enumerate(zip(rec.batch_energies, rec.batch_dims)):
                lines.append(f"iter {rec.iteration} batch {b} energy {e:.12f} dim {d}")
            lines.append(
                f"iter {rec.iteration} best {rec.e_best:.12f} "
                f"carryover {rec.carryover_size}"
            )
            occ = " ".join(f"{x:.10f}" for x in rec.occupations)
            lines.append(f"iter {rec.iteration} occ {occ}")
        lines.append(
            f"final best {self.e_best:.12f} iterations {self.state.iterations} "
            f"converged {int(self.state.converged)}"
        )
        return "\n".join(lines) + "\n"


def _repair_half(mask: int, target: int, weights: np.ndarray, m: int, rng) -> int:
    """Flip bits until popcount(mask) == target.

    Clearing an occupied bit p is weighted by 1 - n_p, setting an empty bit
    by n_p; degenerate all-zero weights fall back to uniform.
    """
    while popcount(mask) > target:
        occ = occupied_orbitals(mask)
        w = 1.0 - weights[occ]
        w = np.clip(w, 0.0, None)
        total = w.sum()
        probs = w / total if total > 0 else np.full(len(occ), 1.0 / len(occ))
        p = occ[rng.choice(len(occ), p=probs)]
        mask ^= 1 << p
    while popcount(mask) < target:
        empty = [p for p in range(m) if not (mask >> p) & 1]
        w = np.clip(weights[empty], 0.0, None)
        total = w.sum()
        probs = w / total if total > 0 else np.full(len(empty), 1.0 / len(empty))
        p = empty[rng.choice(len(empty), p=probs)]
        mask |= 1 << p
    return mask


def postselect_and_recover(
    raw: SampleSet,
    occupations: np.ndarray,
    sector: tuple[int, int],
    seed,
    repair: bool = True,
) -> list[Determinant]:
    """Restore particle-number conservation shot by shot.

    Returns one determinant per shot (multiplicities preserved).  In-sector
    shots pass through unchanged; out-of-sector shots are stochastically
    repaired, or dropped entirely when repair is off (the postselection-only
    baseline).
    """
    n_alpha, n_beta = sector
    m = raw.n_qubits // 2
    occupations = np.asarray(occupations, dtype=float)
    if occupations.shape != (2 * m,):
        raise ValidationError(f"occupation vector must have length {2 * m}")
    rng = np.random.default_rng(seed)
    out: list[Determinant] = []
    for bits in sorted(raw.counts):
        count = raw.counts[bits]
        det = from_bitstring(bits)
        in_sector = popcount(det.alpha) == n_alpha and popcount(det.beta) == n_beta
        if in_sector:
            out.extend([det] * count)
            continue
        if not repair:
            continue
        for _ in range(count):
            alpha = (
                det.alpha
                if popcount(det.alpha) == n_alpha
                else _repair_half(det.alpha, n_alpha, occupations[:m], m, rng)
            )
            beta = (
                det.beta
                if popcount(det.beta) == n_beta
                else _repair_half(det.beta, n_beta, occupations[m:], m, rng)
            )
            out.append(Determinant(alpha, beta))
    return out


def _initial_occupations(raw: SampleSet, m: int, sector: tuple[int, int]) -> np.ndarray:
    """Average occupations of the in-sector shots; aufbau fallback if none."""
    n_alpha, n_beta = sector
    total = 0
    acc = np.zeros(2 * m)
    for bits, count in raw.counts.items():
        det = from_bitstring(bits)
        if popcount(det.alpha) == n_alpha and popcount(det.beta) == n_beta:
            acc += count * occupation_array(det, m)
            total += count
    if total == 0:
        return occupation_array(hf_determinant(m, n_alpha, n_beta), m)
    return acc / total


def _closed_product_basis(
    dets: list[Determinant],
    m: int,
    sector: tuple[int, int],
    cap: int,
) -> SubspaceBasis:
    """Spin-symmetrized batch basis.

    For closed-shell sectors the alpha and beta half-string pools are merged
    and the basis is the closed product pool x pool, capped by dropping the
    least frequent half-strings first.
    """
    n_alpha, n_beta = sector
    if n_alpha == n_beta:
        freq: dict[int, int] = {}
        for det in dets:
            freq[det.alpha] = freq.get(det.alpha, 0) + 1
            freq[det.beta] = freq.get(det.beta, 0) + 1
        pool = sorted(freq, key=lambda h: (-freq[h], h))
        limit = max(1, int(np.sqrt(cap)))
        if len(pool) > limit:
            log.warning(
                "half-string pool of %d exceeds the subspace cap; keeping the "
                "%d most frequent halves", len(pool), limit,
            )
            pool = pool[:limit]
        return SubspaceBasis.from_determinants(
            [Determinant(a, b) for a in pool for b in pool], m
        )
    pools: list[list[int]] = []
    for attr in ("alpha", "beta"):
        freq = {}
        for det in dets:
            h = getattr(det, attr)
            freq[h] = freq.get(h, 0) + 1
        pool = sorted(freq, key=lambda h: (-freq[h], h))
        pools.append(pool)
    limit = max(1, int(np.sqrt(cap)))
    pools = [p[:limit] for p in pools]
    return SubspaceBasis.from_determinants(
        [Determinant(a, b) for a in pools[0] for b in pools[1]], m
    )


def run_configuration_recovery(ham, raw: SampleSet, cfg: RecoveryConfig) -> RecoveryResult:
    """Self-consistent recovery loop over sampled bitstrings.

    Each iteration re-repairs the raw shots with the current occupations,
    draws n_batches batches of samples_per_batch shots with replacement,
    unions each with the carryover determinants, solves every batch
    subspace, and averages the batch ground-state occupations for the next
    round.  Stops when both the running-best energy and the occupations
    move less than their tolerances, or at max_iters.
    """
    cfg.validate()
    raw.validate()
    m = ham.m
    if raw.n_qubits != 2 * m:
        raise ValidationError(f"samples have {raw.n_qubits} bits, expected {2 * m}")
    sector = (ham.n_alpha, ham.n_beta)
    occ = _initial_occupations(raw, m, sector)

    state = RecoveryState(occupations=occ)
    history: list[IterationRecord] = []
    best_batch: BatchResult | None = None
    prev_best = np.inf
    prev_occ = occ

    for iteration in range(1, cfg.max_iters + 1):
        recovered = postselect_and_recover(
            raw, occ, sector, seed=[cfg.seed, 101, iteration], repair=cfg.repair
        )
        if not recovered:
            raise ValidationError(
                "no usable shots: every sample is out of sector and repair is off"
            )
        batch_energies: list[float] = []
        batch_dims: list[int] = []
        batch_results: list[BatchResult] = []
        occ_sum = np.zeros(2 * m)
        for b in range(cfg.n_batches):
            rng = np.random.default_rng([cfg.seed, 202, iteration, b])
            picks = rng.integers(0, len(recovered), size=cfg.samples_per_batch)
            batch_dets = [recovered[i] for i in picks]
            batch_dets.extend(state.carryover)
            basis = _closed_product_basis(batch_dets, m, sector, cfg.subspace_cap)
            try:
                energy, vector = solve_subspace(ham, basis, tol=cfg.solver_tol)
            except ConvergenceError as exc:
                raise ConvergenceError(
                    f"batch {b} of iteration {iteration}: {exc}",
                    residual=exc.residual,
                ) from exc
            result = BatchResult(index=b, basis=basis, energy=energy, vector=vector)
            batch_results.append(result)
            batch_energies.append(energy)
            batch_dims.append(len(basis))
            occ_sum += vector.occupations()
            if energy < state.e_best:
                state.e_best = energy
                best_batch = result

        occ = occ_sum / cfg.n_batches
        carryover = set()
        for result in batch_results:
            for det, c in zip(result.basis.dets, result.vector.coeffs):
                if abs(c) >= cfg.carryover_threshold:
                    carryover.add(det)
        if cfg.accumulate_carryover:
            carryover |= state.carryover
        state.carryover = carryover
        state.iterations = iteration
        state.occupations = occ
        history.append(
            IterationRecord(
                iteration=iteration,
                batch_energies=batch_energies,
                batch_dims=batch_dims,
                e_best=state.e_best,
                carryover_size=len(carryover),
                occupations=occ.copy(),
                batches=batch_results if cfg.keep_batches else None,
            )
        )
        if (
            abs(state.e_best - prev_best) < cfg.e_tol
            and np.abs(occ - prev_occ).max() < cfg.occ_tol
        ):
            state.converged = True
            break
        prev_best = state.e_best
        prev_occ = occ

    assert best_batch is not None
    return RecoveryResult(
        e_best=state.e_best, best_batch=best_batch, state=state, history=history
    )


@dataclass
class ExtendedResult:
    energy: float
    vector: CiVector
    rdm1: np.ndarray
    rdm2: np.ndarray
    selected: int
    dimension: int


def extend_subspace(ham, best: BatchResult, cfg: RecoveryConfig) -> ExtendedResult:
    """Augment the best batch by single excitations of its dominant
    determinants, then re-diagonalize and contract RDMs."""
    coeffs = best.vector.coeffs
    dominant = [
        det
        for det, c in zip(best.basis.dets, coeffs)
        if abs(c) >= cfg.ext_dominance_threshold
    ]
    if not dominant:
        raise ValidationError(
            f"no determinant passes the dominance threshold "
            f"{cfg.ext_dominance_threshold:g}; the largest coefficient is "
            f"{np.abs(coeffs).max():.3e}"
        )
    augmented = set(dominant)
    for det in dominant:
        augmented.update(connected_singles(det, ham.m))
    basis = SubspaceBasis.from_determinants(augmented, ham.m)
    energy, vector = solve_subspace(ham, basis, tol=cfg.solver_tol)
    rdm1, rdm2 = compute_rdms(vector)
    return ExtendedResult(
        energy=energy,
        vector=vector,
        rdm1=rdm1,
        rdm2=rdm2,
        selected=len(dominant),
        dimension=len(basis),
    )


def dispatch_solver(mo_count: int, threshold: int = 15) -> str:
    """'fci' below the MO-count threshold, 'sqd' at or above it."""
    if mo_count < 1:
        raise ValidationError("cluster must contain at least one orbital")
    return "fci" if mo_count < threshold else "sqd"


@dataclass
class SubspaceReport:
    """Per-cluster subspace accounting for the run report."""

    cluster_id: str
    m: int
    n_alpha: int
    n_beta: int
    full_dim: int
    max_batch_dim: int
    ext_dim: int

    @classmethod
    def from_run(cls, cluster_id, ham, result: RecoveryResult, ext: ExtendedResult | None):
        max_batch = max(max(rec.batch_dims) for rec in result.history)
        return cls(
            cluster_id=cluster_id,
            m=ham.m,
            n_alpha=ham.n_alpha,
            n_beta=ham.n_beta,
            full_dim=sector_dimension(ham.m, ham.n_alpha, ham.n_beta),
            max_batch_dim=max_batch,
            ext_dim=ext.dimension if ext is not None else 0,
        )

    def to_line(self) -> str:
        ratio = self.max_batch_dim / self.full_dim if self.full_dim else 0.0
        ext_ratio = self.ext_dim / self.full_dim if self.full_dim else 0.0
        return (
            f"cluster {self.cluster_id} m {self.m} full_dim {self.full_dim} "
            f"max_batch_dim {self.max_batch_dim} ext_dim {self.ext_dim} "
            f"batch_ratio {ratio:.6e} ext_ratio {ext_ratio:.6e}"
        )
