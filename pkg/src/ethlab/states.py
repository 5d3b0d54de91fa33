"""Density matrices, transition matrices, block partitions, reductions.

A ``DensityMatrix`` is Hermitian, unit trace, positive semidefinite up to
numerics; a ``TransitionMatrix`` holds Tr_rest |i><j| for a labeled bra/ket
pair and is traceless when the source vectors are orthonormal.  Reductions
of pure states and transition pairs go through reshaped state vectors and
never build full-lattice projectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import LinalgError, hermiticity_defect, kron_all, partial_trace
from .models import LatticeSpec

__all__ = [
    "DensityMatrix",
    "TransitionMatrix",
    "BlockPartition",
    "pure_projector",
    "reduce_state",
    "reduce_pure",
    "reduce_transition",
    "reduce_weighted",
    "regularize",
    "embed_on_block",
]

HERM_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-10


@dataclass(frozen=True)
class DensityMatrix:
    """Validated quantum state.  ``min_eigenvalue`` is cached at construction."""

    matrix: np.ndarray
    min_eigenvalue: float = field(default=np.nan)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise LinalgError(f"density matrix must be square, got {m.shape}")
        dim = m.shape[0]
        defect = hermiticity_defect(m)
        if defect > HERM_TOL * dim:
            raise LinalgError(f"density matrix not Hermitian (defect {defect:.3e})")
        tr = m.trace()
        if abs(tr - 1.0) > TRACE_TOL:
            raise LinalgError(f"density matrix trace {tr:.12f} != 1")
        object.__setattr__(self, "matrix", m)
        if np.isnan(self.min_eigenvalue):
            object.__setattr__(
                self, "min_eigenvalue", float(np.linalg.eigvalsh(m)[0])
            )
        if self.min_eigenvalue < -PSD_TOL:
            raise LinalgError(
                f"density matrix not PSD (min eigenvalue {self.min_eigenvalue:.3e})"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class TransitionMatrix:
    """Reduction of |bra_index><ket_index| between two orthonormal vectors."""

    matrix: np.ndarray
    bra_index: int
    ket_index: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise LinalgError(f"transition matrix must be square, got {m.shape}")
        if self.bra_index != self.ket_index and abs(m.trace()) > TRACE_TOL:
            raise LinalgError(
                f"off-diagonal transition matrix has trace {m.trace():.3e}"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class BlockPartition:
    """Equipartition of a periodic chain into contiguous translation-related blocks."""

    lattice: LatticeSpec
    block_size: int

    def __post_init__(self):
        n, na = self.lattice.n_sites, self.block_size
        if na < 1 or n % na != 0:
            raise ValueError(
                f"block size {na} does not equipartition {n} sites"
            )

    @property
    def block_count(self) -> int:
        return self.lattice.n_sites // self.block_size

    @property
    def block_dim(self) -> int:
        return self.lattice.local_dim**self.block_size

    def sites(self, k: int) -> tuple[int, ...]:
        """Site indices of block k (0-based)."""
        self._check_block(k)
        a = k * self.block_size
        return tuple(range(a, a + self.block_size))

    def distance(self, k: int, l: int) -> int:
        """Minimal site-to-site ring distance between blocks k and l, in sites."""
        self._check_block(k)
        self._check_block(l)
        if k == l:
            return 0
        m = abs(k - l)
        m = min(m, self.block_count - m)
        return (m - 1) * self.block_size + 1

    def _check_block(self, k: int) -> None:
        if not (0 <= k < self.block_count):
            raise ValueError(
                f"block index {k} out of range for {self.block_count} blocks"
            )


def pure_projector(v: np.ndarray) -> DensityMatrix:
    """Rank-1 projector |v><v| from a normalized state vector."""
    v = np.asarray(v, dtype=complex).ravel()
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > 1e-10:
        raise LinalgError(f"state vector norm {norm:.12f} != 1")
    return DensityMatrix(np.outer(v, v.conj()), min_eigenvalue=0.0)


def _block_shaped(v: np.ndarray, partition: BlockPartition, k: int) -> np.ndarray:
    """State vector as a (block_dim, rest_dim) matrix with block k leading."""
    lat = partition.lattice
    sites = partition.sites(k)
    rest = [s for s in range(lat.n_sites) if s not in sites]
    t = np.asarray(v, dtype=complex).reshape(lat.site_dims)
    t = np.transpose(t, list(sites) + rest)
    return t.reshape(partition.block_dim, -1)


def reduce_pure(v: np.ndarray, partition: BlockPartition, k: int) -> DensityMatrix:
    """Reduced state of |v><v| on block k, via the reshaped vector."""
    b = _block_shaped(v, partition, k)
    m = b @ b.conj().T
    m = (m + m.conj().T) / 2
    return DensityMatrix(m / m.trace().real)


def reduce_transition(
    vi: np.ndarray, vj: np.ndarray, partition: BlockPartition, k: int,
    bra_index: int = 0, ket_index: int = 1,
) -> TransitionMatrix:
    """Tr over the complement of block k of |vi><vj|."""
    bi = _block_shaped(vi, partition, k)
    bj = _block_shaped(vj, partition, k)
    return TransitionMatrix(bi @ bj.conj().T, bra_index=bra_index, ket_index=ket_index)


def reduce_state(
    state: DensityMatrix | TransitionMatrix, partition: BlockPartition, k: int
):
    """Reduce a full-lattice state or transition matrix to block k.

    Density input yields a DensityMatrix; transition input stays a (traceless)
    TransitionMatrix.
    """
    lat = partition.lattice
    m = state.matrix
    if m.shape[0] != lat.dim:
        raise LinalgError(
            f"state dim {m.shape[0]} != lattice dim {lat.dim}"
        )
    red = partial_trace(m, lat.site_dims, partition.sites(k))
    if isinstance(state, DensityMatrix):
        red = (red + red.conj().T) / 2
        return DensityMatrix(red)
    return TransitionMatrix(red, state.bra_index, state.ket_index)


def reduce_weighted(
    u: np.ndarray, weights: np.ndarray, lattice: LatticeSpec,
    sites: tuple[int, ...],
) -> np.ndarray:
    """Reduction of sum_i w_i |u_i><u_i| to an arbitrary site subset.

    ``u`` holds orthonormal columns; computed as M M-dagger with
    M = (u * sqrt(w)) reshaped so the kept sites lead.  This is how Gibbs
    and microcanonical reductions are taken without forming the full matrix.
    """
    w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
    m = u * np.sqrt(w)
    sites = tuple(sites)
    rest = [s for s in range(lattice.n_sites) if s not in sites]
    d_keep = int(np.prod([lattice.site_dims[s] for s in sites]))
    t = m.reshape(lattice.site_dims + (m.shape[1],))
    t = np.transpose(t, list(sites) + rest + [lattice.n_sites])
    t = np.ascontiguousarray(t).reshape(d_keep, -1)
    out = t @ t.conj().T
    return (out + out.conj().T) / 2


def regularize(rho: DensityMatrix, eps: float = 1e-12) -> tuple[DensityMatrix, bool]:
    """Clamp eigenvalues to at least ``eps`` and renormalize the trace.

    Returns the (possibly unchanged) state and a flag telling whether any
    clamping occurred.  The floor is inflated by 1/(1 - dim*eps) so the
    minimum eigenvalue stays >= eps after renormalization.
    """
    if not (eps > 0):
        raise LinalgError(f"regularization epsilon must be positive, got {eps}")
    if rho.min_eigenvalue >= eps:
        return rho, False
    w, v = np.linalg.eigh(rho.matrix)
    if w[0] >= eps:  # cached minimum was pessimistic
        return rho, False
    # floor inflated so the minimum stays >= eps after trace renormalization,
    # including slack for inputs that were only PSD up to -1e-10
    floor = eps * (1.0 + 2.0 * rho.dim * (eps + PSD_TOL))
    w = np.clip(w, floor, None)
    w = w / w.sum()
    m = (v * w) @ v.conj().T
    m = (m + m.conj().T) / 2
    return DensityMatrix(m / m.trace().real, min_eigenvalue=float(w[0])), True


def embed_on_block(op: np.ndarray, partition: BlockPartition, k: int) -> np.ndarray:
    """Tensor a block operator with identities on all other sites.

    Blocks are contiguous, so the embedding is a plain Kronecker sandwich.
    """
    op = np.asarray(op, dtype=complex)
    if op.shape != (partition.block_dim,) * 2:
        raise LinalgError(
            f"block operator shape {op.shape} != block dim {partition.block_dim}"
        )
    partition._check_block(k)
    q = partition.lattice.local_dim
    left = q ** (k * partition.block_size)
    right = partition.lattice.dim // (left * partition.block_dim)
    return kron_all([np.eye(left, dtype=complex), op, np.eye(right, dtype=complex)])


def apply_embedded(
    vecs: np.ndarray, op: np.ndarray, partition: BlockPartition, k: int
) -> np.ndarray:
    """Apply the block-k embedding of ``op`` to state-vector columns without
    building the full-lattice matrix.

    Contiguous blocks make the block digits one reshaped axis, so this is a
    small matrix product against a reshaped view.
    """
    lat = partition.lattice
    d_a = partition.block_dim
    left = lat.local_dim ** (k * partition.block_size)
    right = lat.dim // (left * d_a)
    shape = vecs.shape
    cols = vecs.reshape(lat.dim, -1)
    t = cols.reshape(left, d_a, right, cols.shape[1])
    out = np.einsum("ab,xbrc->xarc", op, t, optimize=True)
    return out.reshape(shape)
