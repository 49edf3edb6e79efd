"""On-disk artifacts: FCIDUMP Hamiltonians, sample files, mean-field bundles,
and run manifests.

Conventions fixed here and nowhere else:

* FCIDUMP orbital indices are 1-based on disk, 0-based in memory.
* Two-body integrals are chemists' notation (pr|qs) with 8-fold
  permutational symmetry; parsing populates all eight permutations and
  writing emits only canonical representatives.
* Sample files are lines of ``bitstring count``; string position p is
  alpha orbital p and position M+p is beta orbital p.
* Mean-field bundles are NumPy ``.npz`` containers of named dense arrays,
  so any external SCF code that can call ``numpy.savez`` can produce one.
  Required keys: s, c, eps, d, h_ao, eri_ao, e_nuc, n_elec; optional:
  ao_atoms (AO -> atom index), e_scf (reference total energy).
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ValidationError

SYMMETRY_TOL = 1e-12
DUPLICATE_TOL = 1e-10


@dataclass
class ClusterHamiltonian:
    """Active-space Hamiltonian: constant e0, one-body h, two-body eri.

    h is (m, m) symmetric; eri is the dense (m, m, m, m) chemists'-notation
    tensor with full 8-fold symmetry.  Energies in hartree.
    """

    m: int
    n_alpha: int
    n_beta: int
    e0: float
    h: np.ndarray
    eri: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.eri = np.asarray(self.eri, dtype=float)
        self._diag_cache = None

    def validate(self, tol: float = SYMMETRY_TOL) -> None:
        if self.h.shape != (self.m, self.m):
            raise ValidationError(f"h shape {self.h.shape} != ({self.m}, {self.m})")
        if self.eri.shape != (self.m,) * 4:
            raise ValidationError(f"eri shape {self.eri.shape} != {(self.m,) * 4}")
        if not (0 <= self.n_alpha <= self.m and 0 <= self.n_beta <= self.m):
            raise ValidationError(
                f"electron counts ({self.n_alpha},{self.n_beta}) outside [0,{self.m}]"
            )
        if np.abs(self.h - self.h.T).max(initial=0.0) > tol:
            raise ValidationError("one-body matrix not symmetric")
        for perm, name in (
            ((1, 0, 2, 3), "p<->r"),
            ((0, 1, 3, 2), "q<->s"),
            ((2, 3, 0, 1), "(pr)<->(qs)"),
        ):
            if np.abs(self.eri - self.eri.transpose(perm)).max(initial=0.0) > tol:
                raise ValidationError(f"eri violates the {name} permutation symmetry")

    @property
    def coulomb_diag(self) -> np.ndarray:
        """J[p, q] = (pp|qq), cached for diagonal matrix elements."""
        if self._diag_cache is None:
            j = np.einsum("ppqq->pq", self.eri)
            k = np.einsum("pqqp->pq", self.eri)
            self._diag_cache = (j, k)
        return self._diag_cache[0]

    @property
    def exchange_diag(self) -> np.ndarray:
        """K[p, q] = (pq|qp)."""
        self.coulomb_diag
        return self._diag_cache[1]


def _canonical_eri_index(p: int, r: int, q: int, s: int) -> tuple[int, int, int, int]:
    if p < r:
        p, r = r, p
    if q < s:
        q, s = s, q
    if (p, r) < (q, s):
        p, r, q, s = q, s, p, r
    return p, r, q, s


_HEADER_RE = re.compile(r"([A-Za-z0-9]+)\s*=\s*(-?\d+)")


def parse_fcidump(stream) -> ClusterHamiltonian:
    """Parse an FCIDUMP text stream into a ClusterHamiltonian.

    `stream` is an iterable of lines or a string.  Header keys NORB, NELEC
    and MS2 are required; body lines are ``value p r q s`` with 1-based
    indices, ``value p r 0 0`` filling h and ``value 0 0 0 0`` filling e0.
    """
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = [line.rstrip("\n") for line in stream]

    header_text = []
    body_start = None
    for lineno, line in enumerate(lines):
        stripped = line.strip()
        header_text.append(stripped)
        if "&END" in stripped.upper() or stripped.endswith("/"):
            body_start = lineno + 1
            break
    if body_start is None:
        raise FormatError("FCIDUMP header never terminated with &END or /")

    keys = {k.upper(): int(v) for k, v in _HEADER_RE.findall(" ".join(header_text))}
    for required in ("NORB", "NELEC"):
        if required not in keys:
            raise FormatError(f"FCIDUMP header missing {required} (line 1)")
    norb = keys["NORB"]
    nelec = keys["NELEC"]
    ms2 = keys.get("MS2", 0)
    if norb <= 0:
        raise FormatError(f"NORB={norb} must be positive")
    if (nelec + ms2) % 2 or nelec < abs(ms2):
        raise FormatError(f"NELEC={nelec}, MS2={ms2} do not define integer spin counts")
    n_alpha = (nelec + ms2) // 2
    n_beta = (nelec - ms2) // 2

    h = np.zeros((norb, norb))
    eri = np.zeros((norb,) * 4)
    e0 = 0.0
    seen: dict[tuple, float] = {}

    for lineno in range(body_start, len(lines)):
        stripped = lines[lineno].strip().replace("−", "-")
        if not stripped:
            continue
        parts = stripped.split()
        if len(parts) != 5:
            raise FormatError(f"line {lineno + 1}: expected 'value p r q s', got {stripped!r}")
        try:
            value = float(parts[0])
            p, r, q, s = (int(x) for x in parts[1:])
        except ValueError as exc:
            raise FormatError(f"line {lineno + 1}: {exc}") from exc
        for idx in (p, r, q, s):
            if not 0 <= idx <= norb:
                raise FormatError(
                    f"line {lineno + 1}: orbital index {idx} outside [0, {norb}]"
                )
        if p == r == q == s == 0:
            key = ("e0",)
            e0 = value
        elif q == 0 and s == 0:
            if p == 0 or r == 0:
                raise FormatError(f"line {lineno + 1}: malformed one-body indices")
            key = ("h", max(p, r), min(p, r))
            h[p - 1, r - 1] = value
            h[r - 1, p - 1] = value
        elif 0 in (p, r, q, s):
            raise FormatError(f"line {lineno + 1}: mixed zero and nonzero indices")
        else:
            key = ("eri",) + _canonical_eri_index(p, r, q, s)
            pi, ri, qi, si = p - 1, r - 1, q - 1, s - 1
            for a, b, c, d in (
                (pi, ri, qi, si), (ri, pi, qi, si), (pi, ri, si, qi), (ri, pi, si, qi),
                (qi, si, pi, ri), (si, qi, pi, ri), (qi, si, ri, pi), (si, qi, ri, pi),
            ):
                eri[a, b, c, d] = value
        if key in seen and abs(seen[key] - value) > DUPLICATE_TOL:
            raise ValidationError(
                f"line {lineno + 1}: duplicate entry {key} with inconsistent values "
                f"{seen[key]!r} vs {value!r}"
            )
        seen[key] = value

    ham = ClusterHamiltonian(m=norb, n_alpha=n_alpha, n_beta=n_beta, e0=e0, h=h, eri=eri)
    ham.validate()
    return ham


def write_fcidump(ham: ClusterHamiltonian) -> str:
    """Serialize a ClusterHamiltonian; round-trips through parse_fcidump.

    Only canonical representatives of each 8-fold class are written, with
    17 significant digits; exact zeros are omitted.
    """
    ham.validate()
    nelec = ham.n_alpha + ham.n_beta
    ms2 = ham.n_alpha - ham.n_beta
    out = [f" &FCI NORB={ham.m},NELEC={nelec},MS2={ms2},", " &END"]
    fmt = "{:.16e} {:4d} {:4d} {:4d} {:4d}"
    for p in range(ham.m):
        for r in range(p + 1):
            for q in range(p + 1):
                smax = r if q == p else q
                for s in range(smax + 1):
                    v = ham.eri[p, r, q, s]
                    if v != 0.0:
                        out.append(fmt.format(v, p + 1, r + 1, q + 1, s + 1))
    for p in range(ham.m):
        for r in range(p + 1):
            if ham.h[p, r] != 0.0:
                out.append(fmt.format(ham.h[p, r], p + 1, r + 1, 0, 0))
    out.append(fmt.format(ham.e0, 0, 0, 0, 0))
    return "\n".join(out) + "\n"


@dataclass
class SampleSet:
    """Multiset of measured bitstrings over 2M qubits."""

    n_qubits: int
    counts: dict[str, int]

    @property
    def total_shots(self) -> int:
        return sum(self.counts.values())

    def validate(self) -> None:
        if not self.counts:
            raise ValidationError("sample set is empty")
        for bits, count in self.counts.items():
            if len(bits) != self.n_qubits:
                raise FormatError(
                    f"bitstring {bits!r} has length {len(bits)}, expected {self.n_qubits}"
                )
            if set(bits) - {"0", "1"}:
                raise FormatError(f"bitstring {bits!r} contains non-binary characters")
            if count <= 0:
                raise FormatError(f"bitstring {bits!r} has non-positive count {count}")


def load_samples(path) -> SampleSet:
    """Read a ``bitstring count`` sample file; counts of repeated strings add."""
    counts: dict[str, int] = {}
    n_qubits = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'bitstring count'")
            bits, count_text = parts
            try:
                count = int(count_text)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad count {count_text!r}") from exc
            if count <= 0:
                raise FormatError(f"{path}:{lineno}: count must be positive")
            if n_qubits is None:
                n_qubits = len(bits)
            elif len(bits) != n_qubits:
                raise FormatError(
                    f"{path}:{lineno}: ragged bitstring length {len(bits)} != {n_qubits}"
                )
            counts[bits] = counts.get(bits, 0) + count
    if not counts:
        raise FormatError(f"{path}: no samples found")
    samples = SampleSet(n_qubits=n_qubits, counts=counts)
    samples.validate()
    return samples


def save_samples(samples: SampleSet, path) -> None:
    samples.validate()
    with open(path, "w") as fh:
        for bits in sorted(samples.counts):
            fh.write(f"{bits} {samples.counts[bits]}\n")


@dataclass
class MeanFieldBundle:
    """Restricted closed-shell mean-field reference for a full system.

    All matrices are in the AO basis: overlap s, MO coefficients c, orbital
    energies eps, one-particle density d (trace(d s) = n_elec), core
    Hamiltonian h_ao and two-body integrals eri_ao.  ao_atoms maps each AO
    to its atom index; e_scf carries the reference total energy when the
    producing code recorded it.
    """

    n_ao: int
    s: np.ndarray
    c: np.ndarray
    eps: np.ndarray
    d: np.ndarray
    h_ao: np.ndarray
    eri_ao: np.ndarray
    e_nuc: float
    n_elec: int
    ao_atoms: np.ndarray | None = None
    e_scf: float | None = None

    def validate(self, orth_tol: float = 1e-8, idem_tol: float = 1e-6) -> None:
        n = self.n_ao
        for name, arr, shape in (
            ("s", self.s, (n, n)),
            ("d", self.d, (n, n)),
            ("h_ao", self.h_ao, (n, n)),
            ("eri_ao", self.eri_ao, (n, n, n, n)),
        ):
            if arr.shape != shape:
                raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}")
        if self.c.shape[0] != n:
            raise ValidationError(f"c has {self.c.shape[0]} AO rows, expected {n}")
        if np.abs(self.s - self.s.T).max() > orth_tol:
            raise ValidationError("overlap matrix not symmetric")
        s_eigs = np.linalg.eigvalsh(self.s)
        if s_eigs[0] <= 0:
            raise ValidationError("overlap matrix not positive definite")
        ctsc = self.c.T @ self.s @ self.c
        if np.abs(ctsc - np.eye(self.c.shape[1])).max() > orth_tol:
            raise ValidationError(
                "MO orthonormality: C^T S C deviates from identity by "
                f"{np.abs(ctsc - np.eye(self.c.shape[1])).max():.2e}"
            )
        nelec = np.trace(self.d @ self.s)
        if abs(nelec - self.n_elec) > orth_tol:
            raise ValidationError(
                f"electron count: trace(D S) = {nelec:.10f}, expected {self.n_elec}"
            )
        w, v = np.linalg.eigh(self.s)
        s_half = (v * np.sqrt(w)) @ v.T
        half_density = s_half @ self.d @ s_half / 2.0
        if np.abs(half_density @ half_density - half_density).max() > idem_tol:
            raise ValidationError("density idempotency: D/2 is not a projector")


_BUNDLE_KEYS = ("s", "c", "eps", "d", "h_ao", "eri_ao", "e_nuc", "n_elec")


def save_meanfield_bundle(bundle: MeanFieldBundle, path) -> None:
    payload = {k: getattr(bundle, k) for k in _BUNDLE_KEYS}
    if bundle.ao_atoms is not None:
        payload["ao_atoms"] = bundle.ao_atoms
    if bundle.e_scf is not None:
        payload["e_scf"] = bundle.e_scf
    np.savez(path, **payload)


def load_meanfield_bundle(path, orth_tol: float = 1e-8, idem_tol: float = 1e-6) -> MeanFieldBundle:
    """Load and validate an .npz mean-field bundle.

    Invariant violations above the tolerances are rejected, not repaired.
    """
    with np.load(path) as data:
        missing = [k for k in _BUNDLE_KEYS if k not in data]
        if missing:
            raise FormatError(f"{path}: bundle missing keys {missing}")
        bundle = MeanFieldBundle(
            n_ao=int(data["s"].shape[0]),
            s=np.asarray(data["s"], dtype=float),
            c=np.asarray(data["c"], dtype=float),
            eps=np.asarray(data["eps"], dtype=float),
            d=np.asarray(data["d"], dtype=float),
            h_ao=np.asarray(data["h_ao"], dtype=float),
            eri_ao=np.asarray(data["eri_ao"], dtype=float),
            e_nuc=float(data["e_nuc"]),
            n_elec=int(data["n_elec"]),
            ao_atoms=np.asarray(data["ao_atoms"], dtype=int) if "ao_atoms" in data else None,
            e_scf=float(data["e_scf"]) if "e_scf" in data else None,
        )
    bundle.validate(orth_tol=orth_tol, idem_tol=idem_tol)
    return bundle


@dataclass
class ClusterRecord:
    """One cluster's entry in a run manifest."""

    cluster_id: str
    fcidump_path: str
    fragment_indices: list[int]
    mo_count: int
    solver: str


@dataclass
class RunManifest:
    """Per-run bookkeeping: which clusters exist, where their Hamiltonians
    live, and which solver each is assigned."""

    conformer: str
    n_localized: int
    e_nuc: float
    clusters: list[ClusterRecord] = field(default_factory=list)

    def validate(self) -> None:
        ids = [c.cluster_id for c in self.clusters]
        if len(set(ids)) != len(ids):
            raise ValidationError("cluster ids are not unique")
        seen: dict[int, str] = {}
        for rec in self.clusters:
            for idx in rec.fragment_indices:
                if idx in seen:
                    raise ValidationError(
                        f"fragment orbital {idx} claimed by both {seen[idx]} and {rec.cluster_id}"
                    )
                seen[idx] = rec.cluster_id
        if self.clusters and sorted(seen) != list(range(self.n_localized)):
            raise ValidationError("fragment orbitals do not partition the localized basis")


def save_manifest(manifest: RunManifest, path) -> None:
    manifest.validate()
    payload = {
        "conformer": manifest.conformer,
        "n_localized": manifest.n_localized,
        "e_nuc": manifest.e_nuc,
        "clusters": [dataclasses.asdict(c) for c in manifest.clusters],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_manifest(path) -> RunManifest:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    try:
        manifest = RunManifest(
            conformer=payload["conformer"],
            n_localized=int(payload["n_localized"]),
            e_nuc=float(payload["e_nuc"]),
            clusters=[ClusterRecord(**c) for c in payload["clusters"]],
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc})") from exc
    manifest.validate()
    return manifest
