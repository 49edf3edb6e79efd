"""End-to-end orchestration: fragment, dispatch, solve, collate, report.

A run is rooted at a working directory and is resumable: every cluster
result is checkpointed under a content hash of its Hamiltonian, solver
assignment and solver configuration, so re-running after an interruption
recomputes only what is missing and reproduces the original outputs byte
for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cisolver import fci_solve
from .collate import ClusterResult, EnergyReport, collate_global_energy
from .embedding import (
    EwfCluster,
    FragmentSpec,
    build_cluster,
    extract_cluster_hamiltonian,
    localize_system,
    per_atom_fragments,
)
from .exceptions import EmbedciError, ValidationError
from .hamio import (
    ClusterRecord,
    RunManifest,
    load_manifest,
    load_meanfield_bundle,
    load_samples,
    parse_fcidump,
    save_manifest,
    save_samples,
    write_fcidump,
)
from .lucj import (
    chi_diagnostic,
    double_factorize_t2,
    inject_readout_noise,
    lucj_from_factorization,
    mp2_amplitudes,
    prepare_lucj_state,
    sample_counts,
)
from .sqd import (
    RecoveryConfig,
    SubspaceReport,
    dispatch_solver,
    extend_subspace,
    run_configuration_recovery,
)

WORKDIR_ENV = "EMBEDCI_WORKDIR"

_CONFIG_DEFAULTS = {
    "conformer": "conformer",
    "fragmentation": "per-atom",
    "eta": 1e-5,
    "dispatch_threshold": 15,
    "sample_source": "simulator",
    "samples_dir": None,
    "shots": 100_000,
    "noise_eps": 0.0,
    "seed": 0,
    "parallelism": 1,
    "connectivity": None,
    "lucj_layers": "all",
    "fci_budget": 500_000,
    "bundle_orth_tol": 1e-8,
    "bundle_idem_tol": 1e-6,
    "recovery": {},
}

_RECOVERY_KEYS = {f.name for f in dataclasses.fields(RecoveryConfig)}


@dataclass
class PipelineConfig:
    bundle: str
    workdir: str
    conformer: str = "conformer"
    fragmentation: str | list[list[int]] = "per-atom"
    eta: float = 1e-5
    dispatch_threshold: int = 15
    sample_source: str = "simulator"
    samples_dir: str | None = None
    shots: int = 100_000
    noise_eps: float = 0.0
    seed: int = 0
    parallelism: int = 1
    connectivity: list[list[int]] | None = None
    lucj_layers: int | str = "all"
    fci_budget: int = 500_000
    bundle_orth_tol: float = 1e-8
    bundle_idem_tol: float = 1e-6
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)

    def load_bundle(self):
        return load_meanfield_bundle(
            self.bundle, orth_tol=self.bundle_orth_tol, idem_tol=self.bundle_idem_tol
        )


def validate_config(raw: dict) -> PipelineConfig:
    """Apply defaults, reject unknown keys and out-of-range values."""
    known = set(_CONFIG_DEFAULTS) | {"bundle", "workdir"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    for required in ("bundle", "workdir"):
        if required not in raw:
            raise ValidationError(f"config is missing required key {required!r}")
    merged = dict(_CONFIG_DEFAULTS)
    merged.update(raw)

    recovery_raw = merged.pop("recovery") or {}
    bad = set(recovery_raw) - _RECOVERY_KEYS
    if bad:
        raise ValidationError(f"unknown recovery keys: {sorted(bad)}")
    recovery = RecoveryConfig(**recovery_raw)
    recovery.validate()

    cfg = PipelineConfig(recovery=recovery, **merged)
    if not 0.0 <= cfg.eta <= 2.0:
        raise ValidationError(f"eta={cfg.eta} outside [0, 2]")
    if cfg.dispatch_threshold < 1:
        raise ValidationError("dispatch_threshold must be >= 1")
    if not 0.0 <= cfg.noise_eps <= 1.0:
        raise ValidationError(f"noise_eps={cfg.noise_eps} outside [0, 1]")
    if cfg.sample_source not in ("simulator", "file"):
        raise ValidationError("sample_source must be 'simulator' or 'file'")
    if cfg.sample_source == "file" and not cfg.samples_dir:
        raise ValidationError("sample_source 'file' requires samples_dir")
    if cfg.sample_source == "simulator" and cfg.shots < cfg.recovery.samples_per_batch:
        raise ValidationError(
            f"shots={cfg.shots} below samples_per_batch="
            f"{cfg.recovery.samples_per_batch}"
        )
    if cfg.parallelism < 1:
        raise ValidationError("parallelism must be >= 1")
    if cfg.lucj_layers != "all" and (
        not isinstance(cfg.lucj_layers, int) or cfg.lucj_layers < 1
    ):
        raise ValidationError("lucj_layers must be 'all' or a positive integer")
    if isinstance(cfg.fragmentation, str) and cfg.fragmentation != "per-atom":
        raise ValidationError(
            "fragmentation must be 'per-atom' or an explicit list of groups"
        )
    workdir = os.environ.get(WORKDIR_ENV)
    if workdir:
        cfg.workdir = workdir
    return cfg


def load_config(path) -> PipelineConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return validate_config(raw)


def _workdirs(cfg: PipelineConfig) -> dict[str, Path]:
    root = Path(cfg.workdir)
    dirs = {
        "root": root,
        "clusters": root / "clusters",
        "results": root / "results",
        "samples": root / "samples",
        "diagnostics": root / "diagnostics",
    }
    for path in dirs.values():
        path.mkdir(parents=True, exist_ok=True)
    return dirs


def _save_cluster(path: Path, cluster: EwfCluster) -> None:
    np.savez(
        path,
        coeffs=cluster.coeffs,
        n_occ=cluster.n_occ,
        frozen_occ=cluster.frozen_occ,
        frozen_virt=cluster.frozen_virt,
        projector=cluster.projector,
        fragment_indices=np.array(cluster.fragment_indices, dtype=int),
    )


def _load_cluster(path: Path) -> EwfCluster:
    with np.load(path) as data:
        return EwfCluster(
            fragment_indices=[int(i) for i in data["fragment_indices"]],
            coeffs=data["coeffs"],
            n_occ=int(data["n_occ"]),
            frozen_occ=data["frozen_occ"],
            frozen_virt=data["frozen_virt"],
            projector=data["projector"],
        )


def fragment_stage(cfg: PipelineConfig) -> RunManifest:
    """Build every cluster, write its FCIDUMP and geometry, emit the manifest."""
    dirs = _workdirs(cfg)
    bundle = cfg.load_bundle()
    sys = localize_system(bundle)
    if isinstance(cfg.fragmentation, str):
        spec = per_atom_fragments(sys.atom_labels)
    else:
        groups = [list(g) for g in cfg.fragmentation]
        spec = FragmentSpec(groups=groups, labels=[f"frag{i}" for i in range(len(groups))])
    spec.validate(sys.n)

    manifest = RunManifest(conformer=cfg.conformer, n_localized=sys.n, e_nuc=sys.e_nuc)
    for i, frag in enumerate(spec.groups):
        cid = f"c{i:03d}"
        try:
            cluster = build_cluster(sys, frag, eta=cfg.eta)
            ham = extract_cluster_hamiltonian(sys, cluster)
        except EmbedciError as exc:
            exc.args = (f"cluster {cid} (fragment stage): {exc}",)
            raise
        fcidump_path = dirs["clusters"] / f"{cid}.fcidump"
        fcidump_path.write_text(write_fcidump(ham))
        _save_cluster(dirs["clusters"] / f"{cid}_orbitals.npz", cluster)
        manifest.clusters.append(
            ClusterRecord(
                cluster_id=cid,
                fcidump_path=str(fcidump_path),
                fragment_indices=list(frag),
                mo_count=cluster.mo_count,
                solver=dispatch_solver(cluster.mo_count, cfg.dispatch_threshold),
            )
        )
    save_manifest(manifest, dirs["root"] / "manifest.json")
    return manifest


def _result_key(fcidump_text: str, record: ClusterRecord, cfg: PipelineConfig) -> str:
    payload = json.dumps(
        {
            "fcidump": fcidump_text,
            "solver": record.solver,
            "recovery": dataclasses.asdict(cfg.recovery),
            "shots": cfg.shots,
            "noise_eps": cfg.noise_eps,
            "seed": cfg.seed,
            "sample_source": cfg.sample_source,
            "connectivity": cfg.connectivity,
            "lucj_layers": cfg.lucj_layers,
            "fci_budget": cfg.fci_budget,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def _solve_sqd_cluster(ham, record: ClusterRecord, cfg: PipelineConfig, dirs, cluster_seed):
    samples_path = dirs["samples"] / f"{record.cluster_id}.txt"
    truncation_chi = None
    if cfg.sample_source == "file":
        src = Path(cfg.samples_dir) / f"{record.cluster_id}.txt"
        raw = load_samples(src)
    else:
        amps, _ = mp2_amplitudes(ham)
        df = double_factorize_t2(amps.t2)
        n_layers = df.n_terms if cfg.lucj_layers == "all" else min(cfg.lucj_layers, df.n_terms)
        params = lucj_from_factorization(
            df, connectivity=cfg.connectivity, n_layers=max(n_layers, 1) if df.n_terms else 1
        )
        if 0 < n_layers < df.n_terms:
            truncation_chi = chi_diagnostic(df.truncated(n_layers), amps.t2)
        state = prepare_lucj_state(ham.m, ham.n_alpha, ham.n_beta, params)
        raw = sample_counts(state, cfg.shots, seed=[cluster_seed, 1])
        if cfg.noise_eps > 0.0:
            raw = inject_readout_noise(raw, cfg.noise_eps, seed=[cluster_seed, 2])
        save_samples(raw, samples_path)

    recovery = dataclasses.replace(cfg.recovery, seed=cluster_seed)
    rec_result = run_configuration_recovery(ham, raw, recovery)
    ext = extend_subspace(ham, rec_result.best_batch, recovery)
    diag_path = dirs["diagnostics"] / f"{record.cluster_id}.txt"
    diag_path.write_text(rec_result.diagnostics_text())
    report = SubspaceReport.from_run(record.cluster_id, ham, rec_result, ext)
    stats = {
        "full_dim": report.full_dim,
        "max_batch_dim": report.max_batch_dim,
        "ext_dim": report.ext_dim,
        "e_sqd": rec_result.e_best,
        "e_ext": ext.energy,
        "converged": rec_result.state.converged,
        "iterations": rec_result.state.iterations,
    }
    if truncation_chi is not None:
        stats["lucj_truncation_chi"] = truncation_chi
    return ext.energy, ext.rdm1, ext.rdm2, stats


def _solve_one(record: ClusterRecord, cfg: PipelineConfig, dirs, index: int):
    fcidump_text = Path(record.fcidump_path).read_text()
    key = _result_key(fcidump_text, record, cfg)
    result_path = dirs["results"] / f"{record.cluster_id}.npz"
    if result_path.exists():
        with np.load(result_path, allow_pickle=False) as data:
            if str(data["key"]) == key:
                return ClusterResult(
                    cluster_id=record.cluster_id,
                    solver=str(data["solver"]),
                    energy=float(data["energy"]),
                    rdm1=data["rdm1"],
                    rdm2=data["rdm2"],
                    cluster=_load_cluster(
                        dirs["clusters"] / f"{record.cluster_id}_orbitals.npz"
                    ),
                    stats=json.loads(str(data["stats"])),
                ), True

    ham = parse_fcidump(fcidump_text)
    cluster_seed = cfg.seed * 100_003 + index
    if record.solver == "fci":
        fci = fci_solve(ham, budget=cfg.fci_budget)
        energy, rdm1, rdm2 = fci.energy, fci.rdm1, fci.rdm2
        stats = {
            "full_dim": len(fci.vector.basis),
            "e_fci": energy,
        }
    else:
        energy, rdm1, rdm2, stats = _solve_sqd_cluster(ham, record, cfg, dirs, cluster_seed)
    np.savez(
        result_path,
        key=key,
        solver=record.solver,
        energy=energy,
        rdm1=rdm1,
        rdm2=rdm2,
        stats=json.dumps(stats, sort_keys=True),
    )
    cluster = _load_cluster(dirs["clusters"] / f"{record.cluster_id}_orbitals.npz")
    return ClusterResult(
        cluster_id=record.cluster_id,
        solver=record.solver,
        energy=energy,
        rdm1=rdm1,
        rdm2=rdm2,
        cluster=cluster,
        stats=stats,
    ), False


def solve_stage(cfg: PipelineConfig, manifest: RunManifest | None = None):
    """Solve every cluster, reusing checkpointed results whose key matches."""
    dirs = _workdirs(cfg)
    if manifest is None:
        manifest = load_manifest(dirs["root"] / "manifest.json")
    records = list(manifest.clusters)

    def solve_with_context(record, index):
        try:
            return _solve_one(record, cfg, dirs, index)
        except EmbedciError as exc:
            exc.args = (f"cluster {record.cluster_id} (solve stage): {exc}",)
            raise

    if cfg.parallelism > 1:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            futures = [
                pool.submit(solve_with_context, rec, i)
                for i, rec in enumerate(records)
            ]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [solve_with_context(rec, i) for i, rec in enumerate(records)]
    results = [r for r, _ in outcomes]
    reused = sum(1 for _, hit in outcomes if hit)
    return results, reused


def collate_stage(cfg: PipelineConfig, results) -> dict:
    """Assemble the total energy and write the run summary and report."""
    dirs = _workdirs(cfg)
    bundle = cfg.load_bundle()
    sys = localize_system(bundle)
    e_total, rdms, breakdown = collate_global_energy(sys, results)
    census: dict[str, int] = {}
    for r in results:
        census[r.solver] = census.get(r.solver, 0) + 1
    summary = {
        "conformer": cfg.conformer,
        "e_total": e_total,
        "e_scf": bundle.e_scf,
        "gamma_trace": rdms.trace(),
        "n_elec": sys.n_elec,
        "per_cluster": {k: breakdown[k] for k in sorted(breakdown)},
        "cluster_energies": {r.cluster_id: r.energy for r in results},
        "solver_census": census,
        "stats": {r.cluster_id: r.stats for r in results},
    }
    (dirs["root"] / "run_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    stats_lines = []
    for r in results:
        if r.solver == "sqd":
            stats_lines.append(
                f"cluster {r.cluster_id} m {r.cluster.mo_count} "
                f"full_dim {r.stats['full_dim']} "
                f"max_batch_dim {r.stats['max_batch_dim']} "
                f"ext_dim {r.stats['ext_dim']}"
            )
        else:
            stats_lines.append(
                f"cluster {r.cluster_id} m {r.cluster.mo_count} "
                f"full_dim {r.stats['full_dim']} solver fci"
            )
    (dirs["root"] / "subspace_stats.txt").write_text("\n".join(stats_lines) + "\n")

    report_lines = [
        f"conformer {cfg.conformer}",
        f"E_total {e_total:.10f}",
        f"E_scf {bundle.e_scf:.10f}" if bundle.e_scf is not None else "E_scf unknown",
        "solver census " + ", ".join(f"{k}:{v}" for k, v in sorted(census.items())),
        "per-cluster fragment energies:",
    ]
    for cid in sorted(breakdown):
        report_lines.append(f"  {cid} {breakdown[cid]:.10f}")
    (dirs["root"] / "report.txt").write_text("\n".join(report_lines) + "\n")
    return summary


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Fragment, solve, collate; returns the run summary dictionary."""
    manifest = fragment_stage(cfg)
    results, _ = solve_stage(cfg, manifest)
    return collate_stage(cfg, results)


def conformer_report(summary_a: dict, summary_b: dict, method: str = "embedded-ci") -> EnergyReport:
    """Two-conformer comparison table from run summaries."""
    report = EnergyReport(
        method=method,
        label_a=summary_a["conformer"],
        label_b=summary_b["conformer"],
        e_a=summary_a["e_total"],
        e_b=summary_b["e_total"],
        per_cluster={
            summary_a["conformer"]: summary_a["per_cluster"],
            summary_b["conformer"]: summary_b["per_cluster"],
        },
        solver_census={
            k: summary_a["solver_census"].get(k, 0) + summary_b["solver_census"].get(k, 0)
            for k in set(summary_a["solver_census"]) | set(summary_b["solver_census"])
        },
    )
    return report
