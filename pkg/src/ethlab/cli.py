"""Configuration-driven command line: run experiment suites, compute one-off
divergences, export spectra.

Exit codes: 0 success, 1 usage or configuration error, 2 an invariant
violation was detected while running (outputs are still written).

The config is one JSON document; field semantics are fixed here and
documented in the README.  CSV column orders are normative and floats are
written with shortest round-trip repr, so a fixed config reproduces every
CSV byte for byte.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .divergences import bs_entropy_forms, umegaki
from .ensembles import gibbs_state, gibbs_weights, select_shell
from .experiments import (
    ChainWorkspace,
    SelectionPolicy,
    chebyshev_concentration,
    chebyshev_typicality,
    correlation_decay_probe,
    ensemble_equivalence,
    inequality_audit,
    loglog_fit,
    offdiag_scan,
    subsystem_eth_scan,
    typicality_balance,
)
from .linalg import LinalgError, SpectralDecomposition, schatten_norm
from .models import HamiltonianSpec, LatticeSpec
from .states import (
    BlockPartition,
    DensityMatrix,
    TransitionMatrix,
    embed_on_block,
    reduce_state,
    reduce_transition,
)
from .stateio import atomic_write_text, load_state

__all__ = ["main", "ExperimentConfig", "DEFAULT_CONFIG", "CSV_COLUMNS"]

EXPERIMENT_NAMES = (
    "eth-scan", "offdiag-scan", "corr-decay", "chebyshev",
    "typicality", "ensemble-eq", "inequality-audit",
)

DEFAULT_CONFIG = {
    "model": {
        "family": "tfim_long",
        "couplings": {"J": 1.0, "g": 1.05, "h": 0.5},
        "interaction_range": 2,
    },
    "sizes": [[8, 2], [10, 2], [12, 2]],
    "experiments": list(EXPERIMENT_NAMES),
    "selection": {"fraction": 0.1, "cap": 50},
    "corr_decay": {"size": [12, 2], "beta": 0.2},
    "typicality": {"size": [8, 2], "betas": [0.0, 0.2, 1.0]},
    "ensemble_eq": {"size": [10, 2], "shell_count": 20},
    "chebyshev": {
        "size": [10, 2],
        "shell_count": 20,
        "epsilons": [0.05, 0.1, 0.2, 0.5, 1.0],
        "score_epsilons": [1.0, 2.0, 4.0, 8.0],
    },
    "inequality_audit": {"pairs": 1000, "offdiag_pairs": 500, "dims": [2, 8]},
    "tolerances": {"identity": 1e-8, "chained": 1e-6, "theorem": 1e-12},
    "seed": 20250809,
    "output_dir": "runs/default",
    "memory_cap_dim": 8192,
    "threads": 1,
}

CSV_COLUMNS = {
    "eth_scan": [
        "status", "n_sites", "block_size", "block_count", "i", "j", "energy",
        "beta", "trace_distance", "bs_entropy", "umegaki", "variance_total",
        "variance_local", "variance_cross", "variance_first_block",
        "block_spread_max", "pinsker_slack", "hoelder_slack",
        "regularization_flag",
    ],
    "offdiag_scan": [
        "status", "n_sites", "block_size", "block_count", "i", "j", "energy",
        "beta", "sigma_norm1", "variance_total", "variance_local",
        "variance_cross", "variance_first_block", "block_spread_max",
        "hoelder_slack", "regularization_flag",
    ],
    "corr_decay": [
        "n_sites", "block_size", "beta", "block_k", "block_l", "distance",
        "corr_norm", "mutual_info", "pinsker_slack",
    ],
    "chebyshev": ["instance", "epsilon", "empirical", "bound", "slack"],
    "typicality": [
        "n_sites", "block_size", "beta", "v_dg", "v_off", "lhs_total",
        "rhs_total", "abs_diff", "sdti_max_dev", "sdti_off_max_dev",
        "eq_local_combination_max_dev", "orthogonality_max_dev",
    ],
    "ensemble_eq": [
        "n_sites", "block_size", "e_center", "delta", "shell_size", "beta",
        "lhs_half", "lhs_full", "rhs_bound", "margin",
    ],
    "inequality_audit": [
        "kind", "dim", "umegaki", "bs_form1", "bs_form2", "bs_form3",
        "trace_distance", "variance", "pinsker_slack",
        "bs_vs_umegaki_slack", "hoelder_slack", "regularization_flag",
    ],
    "spectrum": ["n_sites", "index", "energy"],
}

FILE_NAMES = {
    "eth-scan": "eth_scan",
    "offdiag-scan": "offdiag_scan",
    "corr-decay": "corr_decay",
    "chebyshev": "chebyshev",
    "typicality": "typicality",
    "ensemble-eq": "ensemble_eq",
    "inequality-audit": "inequality_audit",
}


class ConfigError(ValueError):
    pass


def _deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


class ExperimentConfig:
    """Normalized configuration: defaults deep-merged with the user document."""

    def __init__(self, data: dict):
        self.data = _deep_merge(DEFAULT_CONFIG, data)
        self.validate()

    @classmethod
    def from_file(cls, path: str, overrides: list[str] | None = None,
                  out_dir: str | None = None) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        for ov in overrides or []:
            if "=" not in ov:
                raise ConfigError(f"override '{ov}' is not key=value")
            key, _, raw = ov.partition("=")
            try:
                val = json.loads(raw)
            except json.JSONDecodeError:
                val = raw
            node = doc
            parts = key.split(".")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
                if not isinstance(node, dict):
                    raise ConfigError(f"override path '{key}' crosses a non-object")
            node[parts[-1]] = val
        if out_dir is not None:
            doc["output_dir"] = out_dir
        return cls(doc)

    def validate(self) -> None:
        d = self.data
        for name in d["experiments"]:
            if name not in EXPERIMENT_NAMES:
                raise ConfigError(f"unknown experiment '{name}'")
        sizes = [tuple(int(v) for v in pair) for pair in d["sizes"]]
        for n, n_a in sizes:
            if n_a < 1 or n % n_a != 0:
                raise ConfigError(
                    f"size pair N={n}, N_A={n_a}: N_A must divide N"
                )
        for key in ("corr_decay", "typicality", "ensemble_eq", "chebyshev"):
            n, n_a = (int(v) for v in d[key]["size"])
            if n_a < 1 or n % n_a != 0:
                raise ConfigError(
                    f"{key} size N={n}, N_A={n_a}: N_A must divide N"
                )
        if int(d["seed"]) < 0:
            raise ConfigError("seed must be a nonnegative integer")

    def serialize(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def sha256(self) -> str:
        return hashlib.sha256(
            json.dumps(self.data, sort_keys=True).encode()
        ).hexdigest()

    @property
    def ham(self) -> HamiltonianSpec:
        m = self.data["model"]
        return HamiltonianSpec(
            family=m["family"],
            couplings={k: float(v) for k, v in m["couplings"].items()},
            interaction_range=int(m.get("interaction_range", 2)),
        )

    @property
    def sizes(self) -> list[tuple[int, int]]:
        return [tuple(int(v) for v in pair) for pair in self.data["sizes"]]

    @property
    def selection(self) -> SelectionPolicy:
        s = self.data["selection"]
        return SelectionPolicy(fraction=float(s["fraction"]), cap=int(s["cap"]))

    def tol(self, name: str) -> float:
        return float(self.data["tolerances"][name])

    def required_dims(self) -> list[tuple[int, int]]:
        """(N, Hilbert dim) for every lattice any enabled experiment touches."""
        pairs = []
        if {"eth-scan", "offdiag-scan"} & set(self.data["experiments"]):
            pairs.extend(self.sizes)
        mapping = {
            "corr-decay": "corr_decay", "typicality": "typicality",
            "ensemble-eq": "ensemble_eq", "chebyshev": "chebyshev",
        }
        for exp, key in mapping.items():
            if exp in self.data["experiments"]:
                pairs.append(tuple(int(v) for v in self.data[key]["size"]))
        seen = {}
        for n, _ in pairs:
            seen[n] = 2**n
        return sorted(seen.items())


# ----------------------------------------------------------------------------
# CSV plumbing
# ----------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "True" if value else "False"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in columns))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _rows_from_records(records, columns) -> list[dict]:
    return [
        {c: getattr(r, {"i": "i", "j": "j"}.get(c, c)) for c in columns}
        for r in records
    ]


# ----------------------------------------------------------------------------
# experiment drivers (config -> rows, violations, manifest extras)
# ----------------------------------------------------------------------------

def _finite(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and np.isfinite(x)


def _slack_violations(rows, fields, tol, label) -> list[str]:
    out = []
    for idx, row in enumerate(rows):
        for f in fields:
            v = row.get(f)
            if _finite(v) and v < -tol:
                out.append(f"{label}[{idx}]: {f} = {v:.3e} < -{tol:.1e}")
    return out


def _run_eth_scan(cfg: ExperimentConfig, caches: dict, threads: int,
                  allow_large: bool):
    records = subsystem_eth_scan(
        cfg.sizes, cfg.ham, selection=cfg.selection,
        memory_cap_dim=int(cfg.data["memory_cap_dim"]),
        allow_large=allow_large, threads=threads, workspace_cache=caches,
    )
    rows = _rows_from_records(records, CSV_COLUMNS["eth_scan"])
    tol = cfg.tol("identity")
    violations = _slack_violations(
        rows, ["pinsker_slack", "hoelder_slack"], tol, "eth_scan")
    for idx, r in enumerate(records):
        if r.status != "ok":
            continue
        gap = abs(r.variance_total - r.variance_local - r.variance_cross)
        if gap > tol:
            violations.append(f"eth_scan[{idx}]: decomposition gap {gap:.3e}")
        loc_gap = abs(r.variance_local - r.variance_first_block / r.block_count)
        if loc_gap > tol:
            violations.append(
                f"eth_scan[{idx}]: local variance vs first block gap {loc_gap:.3e}"
            )
        if r.bs_entropy < r.umegaki - tol:
            violations.append(
                f"eth_scan[{idx}]: divergence ordering violated by "
                f"{r.umegaki - r.bs_entropy:.3e}"
            )
    extras = {"fits": _scaling_fits(records, "trace_distance"),
              "wall_time_records_s": float(sum(r.wall_time for r in records))}
    return rows, violations, extras


def _run_offdiag_scan(cfg: ExperimentConfig, caches: dict, threads: int,
                      allow_large: bool):
    records = offdiag_scan(
        cfg.sizes, cfg.ham, selection=cfg.selection,
        memory_cap_dim=int(cfg.data["memory_cap_dim"]),
        allow_large=allow_large, threads=threads, workspace_cache=caches,
    )
    rows = _rows_from_records(records, CSV_COLUMNS["offdiag_scan"])
    tol = cfg.tol("identity")
    violations = _slack_violations(rows, ["hoelder_slack"], tol, "offdiag_scan")
    for idx, r in enumerate(records):
        if r.status != "ok":
            continue
        gap = abs(r.variance_total - r.variance_local - r.variance_cross)
        if gap > tol:
            violations.append(f"offdiag_scan[{idx}]: decomposition gap {gap:.3e}")
        loc_gap = abs(r.variance_local - r.variance_first_block / r.block_count)
        if loc_gap > tol:
            violations.append(
                f"offdiag_scan[{idx}]: local variance vs first block gap {loc_gap:.3e}"
            )
    extras = {"fits": _scaling_fits(records, "sigma_norm1"),
              "wall_time_records_s": float(sum(r.wall_time for r in records))}
    return rows, violations, extras


def _scaling_fits(records, field: str) -> dict:
    """Median of ``field`` per (N, N_A) plus the log-log exponent per N_A."""
    by_block: dict[int, dict[int, list[float]]] = {}
    for r in records:
        if r.status != "ok":
            continue
        v = getattr(r, field)
        if _finite(v):
            by_block.setdefault(r.block_size, {}).setdefault(r.n_sites, []).append(v)
    out = {}
    for n_a, per_n in sorted(by_block.items()):
        medians = {n: float(np.median(vs)) for n, vs in sorted(per_n.items())}
        entry = {"medians": medians}
        if len(medians) >= 2:
            slope, half, rv = loglog_fit(list(medians), list(medians.values()))
            entry["exponent"] = slope
            entry["confidence_half_width"] = half
            entry["r_value"] = rv
        out[str(n_a)] = entry
    return out


def _run_corr_decay(cfg: ExperimentConfig, caches: dict, threads: int,
                    allow_large: bool):
    n, n_a = (int(v) for v in cfg.data["corr_decay"]["size"])
    beta = float(cfg.data["corr_decay"]["beta"])
    lattice = LatticeSpec(n)
    ws = _get_ws(caches, lattice, cfg.ham)
    partition = BlockPartition(lattice, n_a)
    rho = gibbs_state(ws.spectral, beta)
    records, fit = correlation_decay_probe(rho, partition)
    rows = [
        {"n_sites": n, "block_size": n_a, "beta": beta,
         "block_k": r.block_k, "block_l": r.block_l, "distance": r.distance,
         "corr_norm": r.corr_norm, "mutual_info": r.mutual_info,
         "pinsker_slack": r.pinsker_slack}
        for r in records
    ]
    violations = _slack_violations(
        rows, ["pinsker_slack"], cfg.tol("identity"), "corr_decay")
    extras = {"fit": {"model": fit.model, "parameter": fit.parameter,
                      "amplitude": fit.amplitude, "residual": fit.residual,
                      "n_points": fit.n_points}}
    return rows, violations, extras


def _get_ws(caches: dict, lattice: LatticeSpec, ham: HamiltonianSpec) -> ChainWorkspace:
    key = (lattice.n_sites, lattice.local_dim, ham.family,
           tuple(sorted(ham.couplings.items())))
    if key not in caches:
        caches[key] = ChainWorkspace(lattice, ham)
    return caches[key]


def _run_chebyshev(cfg: ExperimentConfig, caches: dict, threads: int,
                   allow_large: bool):
    c = cfg.data["chebyshev"]
    n, n_a = (int(v) for v in c["size"])
    eps_grid = [float(e) for e in c["epsilons"]]
    score_grid = [float(e) for e in c["score_epsilons"]]
    rng = np.random.default_rng(int(cfg.data["seed"]))
    rows = []

    # hand-checkable qubit instance
    rho_q = DensityMatrix(np.diag([0.5, 0.5]).astype(complex))
    basis_q = SpectralDecomposition(
        np.array([0.5, 0.5]), np.eye(2, dtype=complex))
    pauli_z = np.diag([1.0, -1.0]).astype(complex)
    for r in chebyshev_concentration(rho_q, basis_q, pauli_z, eps_grid, "qubit-z"):
        rows.append(r)

    # microcanonical shell with a translation-averaged local observable
    lattice = LatticeSpec(n)
    ws = _get_ws(caches, lattice, cfg.ham)
    partition = BlockPartition(lattice, n_a)
    idx, _, _ = select_shell(
        ws.energies, float(ws.energies.mean()), int(c["shell_count"]))
    mc_w = np.zeros(ws.energies.size)
    mc_w[idx] = 1.0 / idx.size
    g = rng.normal(size=(partition.block_dim,) * 2) \
        + 1j * rng.normal(size=(partition.block_dim,) * 2)
    a_loc = (g + g.conj().T) / 2
    u = ws.vectors
    a_avg = sum(
        embed_on_block(a_loc, partition, k)
        for k in range(partition.block_count)
    ) / partition.block_count
    rho_mc = DensityMatrix((u * mc_w) @ u.conj().T)
    basis_mc = SpectralDecomposition(mc_w.copy(), u)
    for r in chebyshev_concentration(
        rho_mc, basis_mc, a_avg, eps_grid, f"mc{n}-local",
    ):
        rows.append(r)

    # typicality-score concentration on the same shell
    for r in chebyshev_typicality(
        ws.spectral, mc_w, partition, score_grid, instance=f"mc{n}-scores",
    ):
        rows.append(r)

    out_rows = [
        {"instance": r.instance, "epsilon": r.epsilon,
         "empirical": r.empirical, "bound": r.bound, "slack": r.slack}
        for r in rows
    ]
    violations = _slack_violations(
        out_rows, ["slack"], cfg.tol("theorem"), "chebyshev")
    return out_rows, violations, {}


def _run_typicality(cfg: ExperimentConfig, caches: dict, threads: int,
                    allow_large: bool):
    t = cfg.data["typicality"]
    n, n_a = (int(v) for v in t["size"])
    lattice = LatticeSpec(n)
    ws = _get_ws(caches, lattice, cfg.ham)
    partition = BlockPartition(lattice, n_a)
    rng = np.random.default_rng(int(cfg.data["seed"]) + 1)
    rows = []
    violations = []
    for beta in (float(b) for b in t["betas"]):
        w = gibbs_weights(ws.energies, beta)
        rep = typicality_balance(
            ws.spectral, w, partition, rng=rng, label_beta=beta)
        rows.append({
            "n_sites": n, "block_size": n_a, "beta": beta,
            "v_dg": rep.v_dg, "v_off": rep.v_off,
            "lhs_total": rep.lhs_total, "rhs_total": rep.rhs_total,
            "abs_diff": rep.abs_diff, "sdti_max_dev": rep.sdti_max_dev,
            "sdti_off_max_dev": rep.sdti_off_max_dev,
            "eq_local_combination_max_dev": rep.eq_local_combination_max_dev,
            "orthogonality_max_dev": rep.orthogonality_max_dev,
        })
        tol = cfg.tol("chained")
        for fieldname in ("abs_diff", "sdti_max_dev", "sdti_off_max_dev",
                          "eq_local_combination_max_dev",
                          "orthogonality_max_dev"):
            val = rows[-1][fieldname]
            if val > tol:
                violations.append(
                    f"typicality beta={beta}: {fieldname} = {val:.3e} > {tol:.1e}"
                )
    return rows, violations, {}


def _run_ensemble_eq(cfg: ExperimentConfig, caches: dict, threads: int,
                     allow_large: bool):
    e = cfg.data["ensemble_eq"]
    n, n_a = (int(v) for v in e["size"])
    lattice = LatticeSpec(n)
    ws = _get_ws(caches, lattice, cfg.ham)
    rec = ensemble_equivalence(
        ws.spectral, lattice, n_a, float(ws.energies.mean()),
        shell_count=int(e["shell_count"]),
    )
    rows = [{
        "n_sites": rec.n_sites, "block_size": rec.block_size,
        "e_center": rec.e_center, "delta": rec.delta,
        "shell_size": rec.shell_size, "beta": rec.beta,
        "lhs_half": rec.lhs_half, "lhs_full": rec.lhs_full,
        "rhs_bound": rec.rhs_bound, "margin": rec.margin,
    }]
    violations = _slack_violations(rows, ["margin"], cfg.tol("identity"),
                                   "ensemble_eq")
    return rows, violations, {}


def _random_density(rng: np.random.Generator, dim: int) -> DensityMatrix:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    m = g @ g.conj().T
    m = (m + m.conj().T) / 2
    return DensityMatrix(m / m.trace().real)


def _run_inequality_audit(cfg: ExperimentConfig, caches: dict, threads: int,
                          allow_large: bool):
    a = cfg.data["inequality_audit"]
    lo, hi = (int(v) for v in a["dims"])
    rng = np.random.default_rng(int(cfg.data["seed"]) + 2)
    rows = []
    for k in range(int(a["pairs"])):
        dim = lo + k % (hi - lo + 1)
        sigma = _random_density(rng, dim)
        rho = _random_density(rng, dim)
        rep = inequality_audit(sigma, rho, kind="diagonal")
        rows.append(_audit_row("diagonal", dim, rep))
    for k in range(int(a["offdiag_pairs"])):
        d_a = 2 + k % 3
        d_b = d_a
        full = d_a * d_b
        g = rng.normal(size=(full, 2)) + 1j * rng.normal(size=(full, 2))
        q, _ = np.linalg.qr(g)
        lattice = LatticeSpec(2, local_dim=d_a)
        partition = BlockPartition(lattice, 1)
        sigma = reduce_transition(q[:, 0], q[:, 1], partition, 0)
        rho_full = _random_density(rng, full)
        rho_block = reduce_state(rho_full, partition, 0)
        rep = inequality_audit(sigma, rho_block, kind="offdiagonal")
        rows.append(_audit_row("offdiagonal", d_a, rep))
    tol = cfg.tol("identity")
    violations = _slack_violations(
        rows, ["pinsker_slack", "bs_vs_umegaki_slack", "hoelder_slack"],
        tol, "inequality_audit")
    for idx, row in enumerate(rows):
        if row["kind"] != "diagonal":
            continue
        spread = max(
            abs(row["bs_form1"] - row["bs_form3"]),
            abs(row["bs_form2"] - row["bs_form3"]),
        )
        if spread > tol:
            violations.append(
                f"inequality_audit[{idx}]: divergence forms disagree by {spread:.3e}"
            )
    return rows, violations, {}


def _audit_row(kind: str, dim: int, rep) -> dict:
    return {
        "kind": kind, "dim": dim, "umegaki": rep.umegaki,
        "bs_form1": rep.bs_form1, "bs_form2": rep.bs_form2,
        "bs_form3": rep.bs_form3, "trace_distance": rep.trace_distance,
        "variance": rep.variance, "pinsker_slack": rep.pinsker_slack,
        "bs_vs_umegaki_slack": rep.bs_vs_umegaki_slack,
        "hoelder_slack": rep.hoelder_slack,
        "regularization_flag": rep.regularization_flag,
    }


RUNNERS = {
    "eth-scan": _run_eth_scan,
    "offdiag-scan": _run_offdiag_scan,
    "corr-decay": _run_corr_decay,
    "chebyshev": _run_chebyshev,
    "typicality": _run_typicality,
    "ensemble-eq": _run_ensemble_eq,
    "inequality-audit": _run_inequality_audit,
}


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def cmd_run(args) -> int:
    try:
        cfg = ExperimentConfig.from_file(
            args.config, overrides=args.override, out_dir=args.out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    cap = int(cfg.data["memory_cap_dim"])
    if not args.allow_large:
        for n, dim in cfg.required_dims():
            if dim > cap:
                print(
                    f"error: N = {n} needs Hilbert dimension {dim} > memory "
                    f"cap {cap}; rerun with --allow-large", file=sys.stderr)
                return 1
    threads = args.threads if args.threads is not None else int(cfg.data["threads"])
    if threads == 0:
        threads = os.cpu_count() or 1
    out_dir = cfg.data["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    caches: dict = {}
    manifest = {
        "config": cfg.data,
        "config_sha256": cfg.sha256(),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "ethlab": __version__,
        },
        "experiments": {},
        "violations": [],
    }
    try:
        import scipy
        manifest["versions"]["scipy"] = scipy.__version__
    except ImportError:
        pass
    total_violations: list[str] = []
    reg_incidents = 0
    t_start = time.perf_counter()
    for name in cfg.data["experiments"]:
        t0 = time.perf_counter()
        try:
            rows, violations, extras = RUNNERS[name](
                cfg, caches, threads, args.allow_large)
        except MemoryError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        stem = FILE_NAMES[name]
        write_csv(os.path.join(out_dir, f"{stem}.csv"),
                  CSV_COLUMNS[stem], rows)
        reg_incidents += sum(
            1 for row in rows if row.get("regularization_flag") is True)
        entry = {"wall_time_s": time.perf_counter() - t0,
                 "n_records": len(rows), "violations": violations}
        entry.update(extras)
        manifest["experiments"][name] = entry
        total_violations.extend(violations)
    manifest["violations"] = total_violations
    manifest["regularization_incidents"] = reg_incidents
    manifest["total_wall_time_s"] = time.perf_counter() - t_start
    atomic_write_text(
        os.path.join(out_dir, "run_manifest.json"),
        json.dumps(manifest, indent=2, sort_keys=True, default=float) + "\n",
    )
    if total_violations:
        for v in total_violations:
            print(f"violation: {v}", file=sys.stderr)
        return 2
    return 0


def cmd_divergence(args) -> int:
    try:
        a = load_state(args.state_a)
        b = load_state(args.state_b)
    except (OSError, ValueError, LinalgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.measure in ("umegaki", "bs", "all"):
        if not isinstance(a, DensityMatrix) or not isinstance(b, DensityMatrix):
            print("error: divergence measures need two density matrices",
                  file=sys.stderr)
            return 1
    mat_a = a.matrix if isinstance(a, (DensityMatrix, TransitionMatrix)) else a
    mat_b = b.matrix if isinstance(b, (DensityMatrix, TransitionMatrix)) else b
    if mat_a.shape != mat_b.shape:
        print(
            f"error: dimension mismatch {mat_a.shape} vs {mat_b.shape}",
            file=sys.stderr)
        return 1
    out = {}
    if args.measure in ("umegaki", "all"):
        out["umegaki"] = umegaki(a, b)
    if args.measure in ("bs", "all"):
        f1, f2, f3 = bs_entropy_forms(a, b)
        out["bs"] = f3
        out["bs_forms"] = [f1, f2, f3]
    if args.measure in ("trace", "all"):
        diff = mat_a - mat_b
        out["trace_full"] = schatten_norm(diff, 1)
        out["trace_half"] = schatten_norm(diff, 1, halved=True)
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_spectrum(args) -> int:
    try:
        cfg = ExperimentConfig.from_file(args.config, overrides=args.override)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rows = []
    seen = set()
    for n, _ in cfg.sizes:
        if n in seen:
            continue
        seen.add(n)
        lattice = LatticeSpec(n)
        cap = int(cfg.data["memory_cap_dim"])
        if lattice.dim > cap and not args.allow_large:
            print(
                f"error: N = {n} needs Hilbert dimension {lattice.dim} > "
                f"memory cap {cap}", file=sys.stderr)
            return 1
        ws = ChainWorkspace(lattice, cfg.ham)
        for idx, energy in enumerate(ws.energies):
            rows.append({"n_sites": n, "index": idx, "energy": float(energy)})
        if args.vectors:
            from .stateio import save_state
            os.makedirs(args.vectors, exist_ok=True)
            save_state(
                os.path.join(args.vectors, f"eigenvectors_N{n}.json"),
                ws.vectors, kind="generic",
                site_dims=list(lattice.site_dims),
            )
    write_csv(args.out, CSV_COLUMNS["spectrum"], rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ethlab",
        description="Spin-chain thermalization laboratory: run experiment "
                    "suites, compute divergences, export spectra.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiments named in a config")
    run.add_argument("--config", required=True)
    run.add_argument("--out-dir", default=None)
    run.add_argument("--override", action="append", default=[],
                     metavar="KEY=VALUE",
                     help="dotted-path config override, value parsed as JSON")
    run.add_argument("--allow-large", action="store_true",
                     help="lift the memory cap on Hilbert dimension")
    run.add_argument("--threads", type=int, default=None,
                     help="worker threads for scan items (0 = auto)")
    run.set_defaults(func=cmd_run)

    div = sub.add_parser("divergence",
                         help="divergences between two state files")
    div.add_argument("state_a")
    div.add_argument("state_b")
    div.add_argument("--measure", default="all",
                     choices=["umegaki", "bs", "trace", "all"])
    div.set_defaults(func=cmd_divergence)

    spec = sub.add_parser("spectrum", help="export eigenvalues as CSV")
    spec.add_argument("--config", required=True)
    spec.add_argument("--out", required=True)
    spec.add_argument("--vectors", default=None,
                      help="also write eigenvector state files here")
    spec.add_argument("--override", action="append", default=[])
    spec.add_argument("--allow-large", action="store_true")
    spec.set_defaults(func=cmd_spectrum)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
