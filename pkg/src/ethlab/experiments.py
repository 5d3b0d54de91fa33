"""Batch drivers that turn identities and bounds into measured tables.

Each driver emits a list of plain records (dataclasses) plus, where
relevant, fitted parameters.  Heavy scans never build full-lattice Gibbs
matrices or projectors: reductions come from reshaped eigenvector stacks
and observables are applied block-locally to the eigenbasis.

Record-level inequality checks (Pinsker chains, Hoelder bounds,
decomposition exactness, concentration bounds) are recomputed by the
caller from the emitted fields; every slack field is stored so a
violation is visible in the output itself.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .divergences import (
    DivergenceReport,
    bs_entropy,
    bs_entropy_forms,
    fluctuation,
    formal_observable,
    mutual_information,
    quantum_variance,
    umegaki,
)
from .ensembles import gibbs_weights, match_beta, select_shell
from .linalg import (
    LinalgError,
    SpectralDecomposition,
    dagger,
    hermitian_eig,
    partial_trace,
    schatten_norm,
)
from .models import HamiltonianSpec, LatticeSpec, build_hamiltonian
from .states import (
    BlockPartition,
    DensityMatrix,
    TransitionMatrix,
    apply_embedded,
    reduce_pure,
    reduce_transition,
    reduce_weighted,
    regularize,
)

__all__ = [
    "ScalingRecord",
    "DecayRecord",
    "DecayFit",
    "ChebyshevRow",
    "BalanceReport",
    "EquivalenceRecord",
    "SelectionPolicy",
    "select_mid_spectrum",
    "ChainWorkspace",
    "subsystem_eth_scan",
    "offdiag_scan",
    "correlation_decay_probe",
    "chebyshev_concentration",
    "chebyshev_typicality",
    "typicality_balance",
    "ensemble_equivalence",
    "inequality_audit",
    "loglog_fit",
]

DEFAULT_EPS = 1e-12
DEFAULT_MEMORY_CAP_DIM = 2**13


# ----------------------------------------------------------------------------
# record types
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingRecord:
    """One (system size, eigenstate or eigenpair) row of a scan."""

    status: str  # ok | degenerate_partition | skipped_nondivisible
    n_sites: int
    block_size: int
    block_count: int
    i: int
    j: int  # equals i for diagonal records
    energy: float
    beta: float
    trace_distance: float  # half-convention ||sigma^i - rho^c||, diagonal only
    sigma_norm1: float  # raw ||sigma^{ij}||_1, off-diagonal only
    bs_entropy: float
    umegaki: float
    variance_total: float
    variance_local: float
    variance_cross: float
    variance_first_block: float  # V(rho, O on block 1); local = this / C
    block_spread_max: float
    pinsker_slack: float
    hoelder_slack: float
    regularization_flag: bool
    wall_time: float  # reported in the manifest, not in the CSV


@dataclass(frozen=True)
class DecayRecord:
    """Correlation strength between one block pair."""

    block_k: int
    block_l: int
    distance: int
    corr_norm: float  # raw ||rho_kl - rho_k x rho_l||_1
    mutual_info: float
    pinsker_slack: float  # sqrt(2 I) - corr_norm


@dataclass(frozen=True)
class DecayFit:
    model: str  # "exponential" | "algebraic" | "degenerate"
    parameter: float  # correlation length xi, or exponent gamma
    amplitude: float
    residual: float  # sum of squared log residuals of the winning model
    n_points: int


@dataclass(frozen=True)
class ChebyshevRow:
    instance: str
    epsilon: float
    empirical: float
    bound: float
    slack: float


@dataclass(frozen=True)
class BalanceReport:
    """Dual-path typicality aggregates and the identity checks around them."""

    beta: float
    v_dg: float
    v_off: float
    lhs_total: float
    rhs_total: float
    abs_diff: float
    sdti_max_dev: float  # average-state vs average-observable conversion, diagonal
    sdti_off_max_dev: float
    eq_local_combination_max_dev: float
    orthogonality_max_dev: float


@dataclass(frozen=True)
class EquivalenceRecord:
    n_sites: int
    block_size: int
    e_center: float
    delta: float
    shell_size: int
    beta: float
    lhs_half: float
    lhs_full: float
    rhs_bound: float
    margin: float


@dataclass(frozen=True)
class SelectionPolicy:
    """Mid-spectrum window: central fraction by index, capped."""

    fraction: float = 0.10
    cap: int = 50


def select_mid_spectrum(dim: int, policy: SelectionPolicy) -> np.ndarray:
    count = max(1, int(round(policy.fraction * dim)))
    count = min(count, policy.cap, dim)
    start = (dim - count) // 2
    return np.arange(start, start + count)


# ----------------------------------------------------------------------------
# per-model workspace
# ----------------------------------------------------------------------------

class ChainWorkspace:
    """Eigensystem of one (lattice, Hamiltonian) pair, shared across drivers."""

    def __init__(self, lattice: LatticeSpec, ham: HamiltonianSpec):
        self.lattice = lattice
        self.ham = ham
        h = build_hamiltonian(lattice, ham)
        self.spectral = hermitian_eig(h)
        del h

    @property
    def energies(self) -> np.ndarray:
        return self.spectral.eigenvalues

    @property
    def vectors(self) -> np.ndarray:
        return self.spectral.eigenvectors


def _workspace(cache: dict | None, lattice: LatticeSpec, ham: HamiltonianSpec) -> ChainWorkspace:
    if cache is None:
        return ChainWorkspace(lattice, ham)
    key = (lattice.n_sites, lattice.local_dim, ham.family,
           tuple(sorted(ham.couplings.items())))
    if key not in cache:
        cache[key] = ChainWorkspace(lattice, ham)
    return cache[key]


def check_memory_cap(lattice: LatticeSpec, cap_dim: int, allow_large: bool) -> None:
    if lattice.dim > cap_dim and not allow_large:
        raise MemoryError(
            f"N = {lattice.n_sites} needs Hilbert dimension {lattice.dim} "
            f"> cap {cap_dim}; pass allow_large to override"
        )


# ----------------------------------------------------------------------------
# fast variance decomposition against an eigenbasis
# ----------------------------------------------------------------------------

def _scaled_columns(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Eigenvector stack with columns scaled by sqrt of the weights.

    Every rho-weighted trace then collapses to a Frobenius inner product:
    Tr[rho A B] = <A-dag W, B W>_F for W = U sqrt(w).
    """
    return u * np.sqrt(np.clip(np.asarray(w, dtype=float), 0.0, None))


def _block1_reduction(scaled: np.ndarray, partition: BlockPartition) -> np.ndarray:
    """Reduction of the weighted state to block 1 (leading sites, no copy)."""
    m = scaled.reshape(partition.block_dim, -1)
    g = m @ m.conj().T
    return (g + g.conj().T) / 2


def _averaged_variance_parts(
    u: np.ndarray, w: np.ndarray, partition: BlockPartition,
    o_block: np.ndarray, scaled: np.ndarray | None = None,
) -> tuple[float, float, float, float]:
    """(total, local, cross, first_block) of V(rho, O_avg) for
    rho = sum_i w_i |u_i><u_i|.

    O_avg averages the block embeddings of ``o_block``.  total comes from
    applying the averaged operator to the eigenbasis; local and cross come
    from the per-block applications, so total = local + cross is a float
    identity check, exact in exact arithmetic.  first_block is V(rho, O on
    block 1), which equals C * local for translation invariant states.
    """
    c = partition.block_count
    if scaled is None:
        scaled = _scaled_columns(u, w)
    o_dag = dagger(o_block)
    e_list = [apply_embedded(scaled, o_dag, partition, k) for k in range(c)]
    # Tr[rho A_k] = conj(<W, A_k-dag W>_F)
    means = np.array([np.conj(np.vdot(scaled, e)) for e in e_list])
    avg = sum(e_list) / c
    total = float(np.vdot(avg, avg).real - abs(means.mean()) ** 2)
    local = 0.0
    first_block = 0.0
    for k in range(c):
        v_k = float(np.vdot(e_list[k], e_list[k]).real - abs(means[k]) ** 2)
        if k == 0:
            first_block = v_k
        local += v_k
    local /= c**2
    # cross: ordered pairs k != l of Tr[rho A_k A_l-dag] - m_k conj(m_l)
    cross = 0.0
    for k in range(c):
        for l in range(c):
            if k == l:
                continue
            cross += (np.vdot(e_list[k], e_list[l])
                      - means[k] * np.conjugate(means[l])).real
    cross /= c**2
    return float(total), float(local), float(cross), float(first_block)


# ----------------------------------------------------------------------------
# diagonal and off-diagonal scans
# ----------------------------------------------------------------------------

def _nan_record(status: str, n: int, n_a: int, i: int = -1, j: int = -1) -> ScalingRecord:
    nan = float("nan")
    return ScalingRecord(
        status=status, n_sites=n, block_size=n_a,
        block_count=(n // n_a if n_a and n % n_a == 0 else 0),
        i=i, j=j, energy=nan, beta=nan, trace_distance=nan, sigma_norm1=nan,
        bs_entropy=nan, umegaki=nan, variance_total=nan, variance_local=nan,
        variance_cross=nan, variance_first_block=nan, block_spread_max=nan,
        pinsker_slack=nan, hoelder_slack=nan, regularization_flag=False,
        wall_time=0.0,
    )


def _block_spread(blocks_sigma: list[np.ndarray]) -> float:
    """max over block pairs of the half-convention distance between copies."""
    worst = 0.0
    for a in range(len(blocks_sigma)):
        for b in range(a + 1, len(blocks_sigma)):
            worst = max(
                worst, schatten_norm(blocks_sigma[a] - blocks_sigma[b], 1, halved=True)
            )
    return worst


def _eth_record(
    ws: ChainWorkspace, partition: BlockPartition, i: int, eps: float,
) -> ScalingRecord:
    t0 = time.perf_counter()
    e = ws.energies
    u = ws.vectors
    n, n_a = ws.lattice.n_sites, partition.block_size
    c = partition.block_count
    beta = match_beta(ws.spectral, float(e[i]))
    w = gibbs_weights(e, beta)

    sigma_blocks = [reduce_pure(u[:, i], partition, k).matrix for k in range(c)]
    sigma = DensityMatrix(sigma_blocks[0])
    scaled = _scaled_columns(u, w)
    rho_b1 = DensityMatrix(_block1_reduction(scaled, partition))
    rho_reg, reg_flag = regularize(rho_b1, eps)

    dist_half = schatten_norm(sigma.matrix - rho_reg.matrix, 1, halved=True)
    dist_full = 2.0 * dist_half
    s_hat = bs_entropy(sigma, rho_reg, form=3, eps=None)
    s_um = umegaki(sigma, rho_reg, eps=None)
    o1 = formal_observable(rho_reg, sigma, eps=None)
    total, local, cross, first = _averaged_variance_parts(
        u, w, partition, o1.matrix, scaled=scaled)

    return ScalingRecord(
        status="ok", n_sites=n, block_size=n_a, block_count=c, i=i, j=i,
        energy=float(e[i]), beta=float(beta),
        trace_distance=float(dist_half), sigma_norm1=float("nan"),
        bs_entropy=float(s_hat), umegaki=float(s_um),
        variance_total=total, variance_local=local, variance_cross=cross,
        variance_first_block=first,
        block_spread_max=_block_spread(sigma_blocks),
        pinsker_slack=float(2.0 * s_hat - dist_full**2),
        hoelder_slack=float(first - dist_full**2),
        regularization_flag=reg_flag,
        wall_time=time.perf_counter() - t0,
    )


def _offdiag_record(
    ws: ChainWorkspace, partition: BlockPartition, i: int, j: int, eps: float,
) -> ScalingRecord:
    if i == j:
        raise ValueError("off-diagonal record needs two distinct eigenstates")
    t0 = time.perf_counter()
    e = ws.energies
    u = ws.vectors
    n, n_a = ws.lattice.n_sites, partition.block_size
    c = partition.block_count
    e_mean = 0.5 * float(e[i] + e[j])
    beta = match_beta(ws.spectral, e_mean)
    w = gibbs_weights(e, beta)

    sigma_blocks = [
        reduce_transition(u[:, i], u[:, j], partition, k, bra_index=i, ket_index=j).matrix
        for k in range(c)
    ]
    sigma = TransitionMatrix(sigma_blocks[0], bra_index=i, ket_index=j)
    scaled = _scaled_columns(u, w)
    rho_b1 = DensityMatrix(_block1_reduction(scaled, partition))
    rho_reg, reg_flag = regularize(rho_b1, eps)

    norm1 = schatten_norm(sigma.matrix, 1)
    o1 = formal_observable(rho_reg, sigma, eps=None)
    total, local, cross, first = _averaged_variance_parts(
        u, w, partition, o1.matrix, scaled=scaled)

    return ScalingRecord(
        status="ok", n_sites=n, block_size=n_a, block_count=c, i=i, j=j,
        energy=e_mean, beta=float(beta),
        trace_distance=float("nan"), sigma_norm1=float(norm1),
        bs_entropy=float("nan"), umegaki=float("nan"),
        variance_total=total, variance_local=local, variance_cross=cross,
        variance_first_block=first,
        block_spread_max=_block_spread(sigma_blocks),
        pinsker_slack=float("nan"),
        hoelder_slack=float(first - norm1**2),
        regularization_flag=reg_flag,
        wall_time=time.perf_counter() - t0,
    )


def _run_grid(
    grid, ham, record_fn, *, eps, memory_cap_dim, allow_large, threads,
    workspace_cache,
) -> list[ScalingRecord]:
    records: list[ScalingRecord] = []
    for n, n_a in grid:
        if n_a < 1 or n % n_a != 0:
            records.append(_nan_record("skipped_nondivisible", n, n_a))
            continue
        if n_a == n:
            records.append(_nan_record("degenerate_partition", n, n_a))
            continue
        lattice = LatticeSpec(n)
        check_memory_cap(lattice, memory_cap_dim, allow_large)
        ws = _workspace(workspace_cache, lattice, ham)
        partition = BlockPartition(lattice, n_a)
        items = record_fn(ws, partition)
        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                out = list(pool.map(lambda f: f(), items))
        else:
            out = [f() for f in items]
        records.extend(out)
    records.sort(key=lambda r: (r.n_sites, r.block_size, r.i, r.j))
    return records


def subsystem_eth_scan(
    grid, ham: HamiltonianSpec, *, selection: SelectionPolicy = SelectionPolicy(),
    eps: float = DEFAULT_EPS, memory_cap_dim: int = DEFAULT_MEMORY_CAP_DIM,
    allow_large: bool = False, threads: int = 1, workspace_cache: dict | None = None,
) -> list[ScalingRecord]:
    """Subsystem distance / divergence / variance rows for mid-spectrum states.

    ``grid`` is an iterable of (N, N_A); non-divisible pairs become warning
    records, N_A = N a degenerate-partition record.
    """

    def make_items(ws: ChainWorkspace, partition: BlockPartition):
        idx = select_mid_spectrum(ws.lattice.dim, selection)
        return [
            (lambda k=i: _eth_record(ws, partition, int(k), eps)) for i in idx
        ]

    return _run_grid(
        grid, ham, make_items, eps=eps, memory_cap_dim=memory_cap_dim,
        allow_large=allow_large, threads=threads, workspace_cache=workspace_cache,
    )


def offdiag_scan(
    grid, ham: HamiltonianSpec, *, selection: SelectionPolicy = SelectionPolicy(),
    eps: float = DEFAULT_EPS, memory_cap_dim: int = DEFAULT_MEMORY_CAP_DIM,
    allow_large: bool = False, threads: int = 1, workspace_cache: dict | None = None,
) -> list[ScalingRecord]:
    """Off-diagonal rows for consecutive eigenpairs in the selection window."""

    def make_items(ws: ChainWorkspace, partition: BlockPartition):
        idx = select_mid_spectrum(ws.lattice.dim, selection)
        return [
            (lambda a=i, b=j: _offdiag_record(ws, partition, int(a), int(b), eps))
            for i, j in zip(idx[:-1], idx[1:])
        ]

    return _run_grid(
        grid, ham, make_items, eps=eps, memory_cap_dim=memory_cap_dim,
        allow_large=allow_large, threads=threads, workspace_cache=workspace_cache,
    )


# ----------------------------------------------------------------------------
# correlation decay
# ----------------------------------------------------------------------------

CORR_FLOOR = 1e-14


def correlation_decay_probe(
    rho: DensityMatrix, partition: BlockPartition,
) -> tuple[list[DecayRecord], DecayFit]:
    """Block-pair correlation norms and mutual information vs ring distance.

    Fits ln(corr) against d (exponential) and ln d (algebraic) by least
    squares and reports the model with the smaller residual.  Pairs below
    the numerical floor are excluded from the fit.
    """
    c = partition.block_count
    if c < 3:
        raise ValueError(
            f"need at least 3 blocks for a distance range, got {c}"
        )
    lat = partition.lattice
    if rho.dim != lat.dim:
        raise LinalgError(f"state dim {rho.dim} != lattice dim {lat.dim}")
    singles = [
        partial_trace(rho.matrix, lat.site_dims, partition.sites(k))
        for k in range(c)
    ]
    records: list[DecayRecord] = []
    for k in range(c):
        for l in range(k + 1, c):
            keep = partition.sites(k) + partition.sites(l)
            pair = partial_trace(rho.matrix, lat.site_dims, keep)
            corr = schatten_norm(pair - np.kron(singles[k], singles[l]), 1)
            pair_dm = DensityMatrix((pair + dagger(pair)) / 2)
            mi = mutual_information(
                pair_dm,
                [partition.block_dim, partition.block_dim],
                [0],
            )
            mi = max(mi, 0.0)
            records.append(DecayRecord(
                block_k=k, block_l=l, distance=partition.distance(k, l),
                corr_norm=float(corr), mutual_info=float(mi),
                pinsker_slack=float(np.sqrt(2.0 * mi) - corr),
            ))
    records.sort(key=lambda r: (r.distance, r.block_k, r.block_l))
    return records, _fit_decay(records)


def _fit_decay(records: list[DecayRecord]) -> DecayFit:
    pts = [(r.distance, r.corr_norm) for r in records if r.corr_norm > CORR_FLOOR]
    if len({d for d, _ in pts}) < 2:
        return DecayFit(model="degenerate", parameter=float("nan"),
                        amplitude=float("nan"), residual=0.0, n_points=len(pts))
    d = np.array([p[0] for p in pts], dtype=float)
    y = np.log([p[1] for p in pts])

    def lsq(x):
        a = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(a, y, rcond=None)
        resid = float(np.sum((y - a @ coef) ** 2))
        return coef, resid

    (a_exp, slope_exp), r_exp = lsq(d)
    (a_alg, slope_alg), r_alg = lsq(np.log(d))
    if r_exp <= r_alg:
        xi = float("inf") if slope_exp >= 0 else -1.0 / slope_exp
        return DecayFit(model="exponential", parameter=xi,
                        amplitude=float(np.exp(a_exp)), residual=r_exp,
                        n_points=len(pts))
    gamma = -slope_alg
    return DecayFit(model="algebraic", parameter=float(gamma),
                    amplitude=float(np.exp(a_alg)), residual=r_alg,
                    n_points=len(pts))


# ----------------------------------------------------------------------------
# concentration checks
# ----------------------------------------------------------------------------

def chebyshev_concentration(
    rho: DensityMatrix, basis: SpectralDecomposition, a, eps_grid,
    instance: str = "",
) -> list[ChebyshevRow]:
    """Empirical tail of eigenbasis expectations vs the fluctuation bound.

    For each eps: P[|<j|A|j> - <A>| >= eps] <= Delta(rho, A)/eps^2, with the
    probability taken over the eigenweights of rho.
    """
    delta = fluctuation(rho, basis, a)
    u = basis.eigenvectors
    m = np.asarray(a, dtype=complex)
    diag = np.einsum("ji,jk,ki->i", u.conj(), m, u, optimize=True)
    p = np.clip(basis.eigenvalues, 0.0, None)
    mean = complex(p @ diag)
    dev = np.abs(diag - mean)
    rows = []
    for eps in eps_grid:
        if not (eps > 0):
            raise ValueError(f"epsilon grid must be positive, got {eps}")
        empirical = float(p[dev >= eps].sum())
        bound = float(delta / eps**2)
        rows.append(ChebyshevRow(
            instance=instance, epsilon=float(eps), empirical=empirical,
            bound=bound, slack=float(bound - empirical),
        ))
    return rows


def _block_vector_tensors(
    u: np.ndarray, partition: BlockPartition,
) -> list[np.ndarray]:
    """Per block k: eigenvector stack reshaped to (block_dim, rest, n_vec)."""
    lat = partition.lattice
    out = []
    for k in range(partition.block_count):
        sites = partition.sites(k)
        rest = [s for s in range(lat.n_sites) if s not in sites]
        t = u.reshape(lat.site_dims + (u.shape[1],))
        t = np.transpose(t, list(sites) + rest + [lat.n_sites])
        out.append(np.ascontiguousarray(t).reshape(partition.block_dim, -1, u.shape[1]))
    return out


def _averaged_block_transitions(
    u: np.ndarray, partition: BlockPartition, rows: np.ndarray,
) -> np.ndarray:
    """sigma-bar[i, j] = (1/C) sum_k Tr_rest |u_i><u_j| for i in ``rows``, all j.

    Returns an array of shape (len(rows), n_vec, d_A, d_A).
    """
    tensors = _block_vector_tensors(u, partition)
    n_vec = u.shape[1]
    d_a = partition.block_dim
    out = np.zeros((len(rows), n_vec, d_a, d_a), dtype=complex)
    for tk in tensors:
        sel = tk[:, :, rows]  # (d_A, rest, n_rows)
        out += np.einsum("ari,brj->ijab", sel, tk.conj(), optimize=True)
    out /= partition.block_count
    return out


def _typicality_scores(
    u: np.ndarray, partition: BlockPartition, rho_b1_inv: np.ndarray,
    rho_b1: np.ndarray, rows: np.ndarray,
) -> np.ndarray:
    """s_i = sum_j V(rho, J^{-1/2}(sigma-bar^{ij})) for the selected rows.

    Uses the block-level closed form V = Tr[X-dag rho_B1^-1 X] - |Tr X|^2
    with X = sigma-bar^{ij} (minus rho_B1 on the diagonal).
    """
    sbar = _averaged_block_transitions(u, partition, rows)
    for r, i in enumerate(rows):
        sbar[r, i] -= rho_b1
    vals = np.einsum(
        "ijba,bc,ijca->ij", sbar.conj(), rho_b1_inv, sbar, optimize=True
    ).real
    traces = np.einsum("ijaa->ij", sbar)
    # diagonal X has trace 0 after the rho_B1 subtraction; off-diagonal ~0
    vals -= np.abs(traces) ** 2
    return vals.sum(axis=1)


def _basis_side_aggregate(
    u: np.ndarray, p: np.ndarray, partition: BlockPartition,
    rho_b1: np.ndarray,
) -> float:
    """sum_{alpha,beta} p'_beta V(rho, (1/C) sum_k J^{-1/2}(Pi^{alpha beta}_k)).

    Pi^{alpha beta} are outer products of the eigenbasis of rho_B1 embedded
    on every block; V uses the Tr[rho A A-dag] ordering.
    """
    pp, vb = np.linalg.eigh(rho_b1)
    pp = np.clip(pp, DEFAULT_EPS, None)
    c = partition.block_count
    d_a = partition.block_dim
    total = 0.0
    for alpha in range(d_a):
        for beta_i in range(d_a):
            coef = 1.0 / np.sqrt(pp[alpha] * pp[beta_i])
            pi = coef * np.outer(vb[:, alpha], vb[:, beta_i].conj())
            g_u = sum(
                apply_embedded(u, pi, partition, k) for k in range(c)
            ) / c
            gd_u = sum(
                apply_embedded(u, dagger(pi), partition, k) for k in range(c)
            ) / c
            second = float(
                np.einsum("ai,ai->i", gd_u.conj(), gd_u, optimize=True).real @ p
            )
            mean = complex(np.einsum("ai,ai->i", u.conj(), g_u, optimize=True) @ p)
            total += pp[beta_i] * (second - abs(mean) ** 2)
    return float(total)


def chebyshev_typicality(
    spectral: SpectralDecomposition, weights: np.ndarray,
    partition: BlockPartition, eps_grid, instance: str = "",
    eps: float = DEFAULT_EPS,
) -> list[ChebyshevRow]:
    """Concentration of the per-eigenstate typicality score.

    The score of eigenstate i is s_i = sum_j V(rho, J^{-1/2}(sigma-bar^{ij})),
    a nonnegative variable under the eigenweights; its tail obeys
    P[s_i >= eps^2] <= aggregate / eps^2 with the aggregate evaluated on the
    independent basis side.
    """
    u = spectral.eigenvectors
    p = np.clip(np.asarray(weights, dtype=float), 0.0, None)
    rho_b1 = reduce_weighted(u, p, partition.lattice, partition.sites(0))
    rho_reg, _ = regularize(DensityMatrix(rho_b1), eps)
    inv = np.linalg.inv(rho_reg.matrix)
    inv = (inv + dagger(inv)) / 2
    rows = np.flatnonzero(p > 0)
    scores = _typicality_scores(u, partition, inv, rho_reg.matrix, rows)
    aggregate = _basis_side_aggregate(u, p, partition, rho_reg.matrix)
    out = []
    for e in eps_grid:
        if not (e > 0):
            raise ValueError(f"epsilon grid must be positive, got {e}")
        empirical = float(p[rows][scores >= e**2].sum())
        bound = float(aggregate / e**2)
        out.append(ChebyshevRow(
            instance=instance, epsilon=float(e), empirical=empirical,
            bound=bound, slack=float(bound - empirical),
        ))
    return out


# ----------------------------------------------------------------------------
# typicality balance
# ----------------------------------------------------------------------------

def typicality_balance(
    spectral: SpectralDecomposition, weights: np.ndarray,
    partition: BlockPartition, *, eps: float = DEFAULT_EPS,
    rng: np.random.Generator | None = None, label_beta: float = float("nan"),
) -> BalanceReport:
    """Dual-path evaluation of the summed diagonal/off-diagonal variances.

    The state side sums p_i V(rho, J^{-1/2}(averaged block reductions of
    |u_i><u_j|)) over all pairs, with adjoint ordering Tr[rho A-dag A] for
    the non-Hermitian off-diagonal terms; the basis side sums
    p'_beta V(rho, averaged embedded J^{-1/2}(Pi^{alpha beta})) with the
    plain ordering.  They agree identically for translation invariant rho.
    Also audits the average-state/average-observable conversions, the
    local-variance combination identity, and the rescaled-basis
    orthogonality relations.
    """
    u = spectral.eigenvectors
    p = np.clip(np.asarray(weights, dtype=float), 0.0, None)
    p = p / p.sum()
    lat = partition.lattice
    rho_b1 = reduce_weighted(u, p, lat, partition.sites(0))
    rho_reg, _ = regularize(DensityMatrix(rho_b1), eps)
    inv = np.linalg.inv(rho_reg.matrix)
    inv = (inv + dagger(inv)) / 2

    rows = np.arange(u.shape[1])
    sbar = _averaged_block_transitions(u, partition, rows)
    diag_idx = rows
    sbar_shifted = sbar.copy()
    for r, i in enumerate(diag_idx):
        sbar_shifted[r, i] -= rho_reg.matrix
    vals = np.einsum(
        "ijba,bc,ijca->ij", sbar_shifted.conj(), inv, sbar_shifted, optimize=True
    ).real
    traces = np.einsum("ijaa->ij", sbar_shifted)
    vals -= np.abs(traces) ** 2
    v_dg = float(p @ np.diagonal(vals))
    v_off = float(p @ (vals.sum(axis=1) - np.diagonal(vals)))
    lhs_total = v_dg + v_off

    rhs_total = _basis_side_aggregate(u, p, partition, rho_reg.matrix)

    # conversion identities between averaged local states and averaged
    # observables, probed with random local operators
    rng = rng or np.random.default_rng(0)
    d_a = partition.block_dim
    g = rng.normal(size=(d_a, d_a)) + 1j * rng.normal(size=(d_a, d_a))
    a_loc = (g + dagger(g)) / 2
    a_avg_u = sum(
        apply_embedded(u, a_loc, partition, k) for k in range(partition.block_count)
    ) / partition.block_count
    proj_means = np.einsum("ai,ai->i", u.conj(), a_avg_u, optimize=True)
    rho_mean = complex(p @ proj_means)
    sdti_dev = 0.0
    sdti_off_dev = 0.0
    probe = rows[:: max(1, len(rows) // 8)]
    for i in probe:
        lhs = abs(np.trace((sbar[i, i] - rho_reg.matrix) @ a_loc)) ** 2
        rhs = abs(proj_means[i] - rho_mean) ** 2
        sdti_dev = max(sdti_dev, abs(lhs - rhs))
        j = int((i + 1) % len(rows))
        if j == i:
            continue
        lhs = abs(np.trace(sbar[i, j] @ a_loc)) ** 2
        rhs = abs(np.vdot(u[:, j], a_avg_u[:, i])) ** 2
        sdti_off_dev = max(sdti_off_dev, abs(lhs - rhs))

    # local-variance combination identity on block 0
    pp, vb = np.linalg.eigh(rho_reg.matrix)
    pp = np.clip(pp, DEFAULT_EPS, None)
    eq55_dev = 0.0
    for alpha in range(d_a):
        lhs55 = 0.0
        comb = np.zeros((d_a, d_a), dtype=complex)
        for beta_i in range(d_a):
            pi = np.outer(vb[:, alpha], vb[:, beta_i].conj())
            scaled = pi / np.sqrt(pp[alpha] * pp[beta_i])
            a_u = apply_embedded(u, scaled, partition, 0)
            ad_u = apply_embedded(u, dagger(scaled), partition, 0)
            second = float(np.einsum("ai,ai->i", ad_u.conj(), ad_u, optimize=True).real @ p)
            mean = complex(np.einsum("ai,ai->i", u.conj(), a_u, optimize=True) @ p)
            lhs55 += pp[beta_i] * (second - abs(mean) ** 2)
            comb += pi
        comb /= pp[alpha]
        a_u = apply_embedded(u, comb, partition, 0)
        ad_u = apply_embedded(u, dagger(comb), partition, 0)
        second = float(np.einsum("ai,ai->i", ad_u.conj(), ad_u, optimize=True).real @ p)
        mean = complex(np.einsum("ai,ai->i", u.conj(), a_u, optimize=True) @ p)
        rhs55 = pp[alpha] * (second - abs(mean) ** 2)
        eq55_dev = max(eq55_dev, abs(lhs55 - rhs55))

    # orthogonality of rescaled basis operators
    ortho_dev = 0.0
    for alpha in range(d_a):
        j_alpha = np.outer(vb[:, alpha], vb[:, alpha].conj()) / pp[alpha]
        for beta_i in range(d_a):
            if beta_i == alpha:
                continue
            j_ab = np.outer(vb[:, alpha], vb[:, beta_i].conj()) / np.sqrt(
                pp[alpha] * pp[beta_i]
            )
            ortho_dev = max(ortho_dev, float(np.abs(j_alpha @ dagger(j_ab)).max()))
            for gamma in range(d_a):
                if gamma == beta_i:
                    continue
                j_ag = np.outer(vb[:, alpha], vb[:, gamma].conj()) / np.sqrt(
                    pp[alpha] * pp[gamma]
                )
                ortho_dev = max(
                    ortho_dev, float(np.abs(j_ag @ dagger(j_ab)).max())
                )

    return BalanceReport(
        beta=label_beta, v_dg=v_dg, v_off=v_off,
        lhs_total=float(lhs_total), rhs_total=float(rhs_total),
        abs_diff=float(abs(lhs_total - rhs_total)),
        sdti_max_dev=float(sdti_dev), sdti_off_max_dev=float(sdti_off_dev),
        eq_local_combination_max_dev=float(eq55_dev),
        orthogonality_max_dev=float(ortho_dev),
    )


# ----------------------------------------------------------------------------
# ensemble equivalence
# ----------------------------------------------------------------------------

def ensemble_equivalence(
    spectral: SpectralDecomposition, lattice: LatticeSpec, block_size: int,
    e_center: float, delta: float | None = None, shell_count: int | None = None,
    eps: float = DEFAULT_EPS,
) -> EquivalenceRecord:
    """Distance between microcanonical and canonical block reductions vs the
    averaged-variance bound.

    Either a fixed shell width ``delta`` or an adaptive ``shell_count``
    selects the shell; beta is matched to the shell's mean energy.
    """
    e = spectral.eigenvalues
    if delta is not None:
        mask = (e > e_center - delta) & (e <= e_center)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            nearest = float(e[np.argmin(np.abs(e - e_center))])
            raise ValueError(
                f"shell ({e_center - delta}, {e_center}] is empty; nearest "
                f"eigenvalue {nearest}"
            )
        top, width = float(e_center), float(delta)
    else:
        count = shell_count or 20
        idx, top, width = select_shell(e, e_center, count)
    partition = BlockPartition(lattice, block_size)
    u = spectral.eigenvectors
    d_shell = idx.size
    mc_w = np.zeros(e.size)
    mc_w[idx] = 1.0 / d_shell
    beta = match_beta(spectral, float(e[idx].mean()))
    c_w = gibbs_weights(e, beta)

    rho_mc_b1 = reduce_weighted(u, mc_w, lattice, partition.sites(0))
    rho_c_b1 = reduce_weighted(u, c_w, lattice, partition.sites(0))
    rho_c_reg, _ = regularize(DensityMatrix(rho_c_b1), eps)
    inv = np.linalg.inv(rho_c_reg.matrix)
    inv = (inv + dagger(inv)) / 2

    lhs_full = schatten_norm(rho_mc_b1 - rho_c_reg.matrix, 1)
    tensors = _block_vector_tensors(u, partition)
    rhs = 0.0
    for i in idx:
        sbar = np.zeros((partition.block_dim,) * 2, dtype=complex)
        for tk in tensors:
            vi = tk[:, :, i]
            sbar += vi @ vi.conj().T
        sbar /= partition.block_count
        x = sbar - rho_c_reg.matrix
        v = float(np.einsum("ba,bc,ca->", x.conj(), inv, x, optimize=True).real)
        rhs += np.sqrt(max(v, 0.0)) / d_shell
    return EquivalenceRecord(
        n_sites=lattice.n_sites, block_size=block_size,
        e_center=float(top), delta=float(width), shell_size=int(d_shell),
        beta=float(beta), lhs_half=float(0.5 * lhs_full),
        lhs_full=float(lhs_full), rhs_bound=float(rhs),
        margin=float(rhs - lhs_full),
    )


# ----------------------------------------------------------------------------
# inequality audit
# ----------------------------------------------------------------------------

def inequality_audit(sigma, rho: DensityMatrix, kind: str = "diagonal",
                     eps: float = DEFAULT_EPS) -> DivergenceReport:
    """All divergences, distances and slacks for one state pair.

    Diagonal kind compares two density matrices (Pinsker and divergence
    ordering plus the Hoelder chain); off-diagonal kind takes a traceless
    transition matrix against the reference state, where only the Hoelder
    chain applies and the entropy fields are NaN.
    """
    nan = float("nan")
    rho_reg, flag = regularize(rho, eps)
    if kind == "diagonal":
        if not isinstance(sigma, DensityMatrix):
            raise TypeError("diagonal audit needs a DensityMatrix sigma")
        f1, f2, f3 = bs_entropy_forms(sigma, rho_reg, eps=None)
        s_um = umegaki(sigma, rho_reg, eps=None)
        d1 = schatten_norm(sigma.matrix - rho_reg.matrix, 1)
        o = formal_observable(rho_reg, sigma, eps=None)
        v = quantum_variance(rho_reg, o.matrix)
        return DivergenceReport(
            umegaki=float(s_um), bs_form1=float(f1), bs_form2=float(f2),
            bs_form3=float(f3), trace_distance=float(d1), variance=float(v),
            pinsker_slack=float(2.0 * s_um - d1**2),
            bs_vs_umegaki_slack=float(f3 - s_um),
            hoelder_slack=float(v - d1**2),
            regularization_flag=flag,
        )
    if kind == "offdiagonal":
        if not isinstance(sigma, TransitionMatrix):
            raise TypeError("off-diagonal audit needs a TransitionMatrix sigma")
        d1 = schatten_norm(sigma.matrix, 1)
        o = formal_observable(rho_reg, sigma, eps=None)
        v = quantum_variance(rho_reg, o.matrix)
        return DivergenceReport(
            umegaki=nan, bs_form1=nan, bs_form2=nan, bs_form3=nan,
            trace_distance=float(d1), variance=float(v),
            pinsker_slack=nan, bs_vs_umegaki_slack=nan,
            hoelder_slack=float(v - d1**2),
            regularization_flag=flag,
        )
    raise ValueError(f"unknown audit kind '{kind}'")


# ----------------------------------------------------------------------------
# scaling fits
# ----------------------------------------------------------------------------

def loglog_fit(sizes, values) -> tuple[float, float, float]:
    """Least squares of ln(value) vs ln(size): (exponent, half_width, r_value).

    ``half_width`` is the 95% confidence half-interval of the slope.
    """
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    res = sps.linregress(x, y)
    dof = len(x) - 2
    half = float(sps.t.ppf(0.975, dof) * res.stderr) if dof > 0 else float("inf")
    return float(res.slope), half, float(res.rvalue)
