"""Dense complex linear algebra substrate.

Hermitian eigendecomposition, spectral matrix functions, Schatten norms,
partial traces over arbitrary site subsets, and cyclic lattice translations.
Everything operates on plain ``numpy`` complex arrays and is pure: no
function mutates its input.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "SpectralDecomposition",
    "LinalgError",
    "dagger",
    "hermiticity_defect",
    "hermitian_eig",
    "matrix_function",
    "singular_values",
    "schatten_norm",
    "apply_translation",
    "partial_trace",
    "translation_permutation",
    "translate",
    "kron_all",
]

HERMITICITY_TOL = 1e-10  # per unit dimension, matches double-precision eigensolvers


class LinalgError(ValueError):
    """Raised when an operand violates a structural precondition."""


class SpectralDecomposition(NamedTuple):
    """Hermitian eigensystem: ``eigenvalues`` ascending, ``eigenvectors`` unitary columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.conj().T

    def apply(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """U diag(f(lambda)) U-dagger."""
        u = self.eigenvectors
        return (u * f(self.eigenvalues)) @ u.conj().T


def dagger(m: np.ndarray) -> np.ndarray:
    return m.conj().T


def hermiticity_defect(m: np.ndarray) -> float:
    """Largest entrywise deviation from M = M-dagger."""
    return float(np.abs(m - m.conj().T).max())


def _as_square(m: np.ndarray, who: str) -> np.ndarray:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise LinalgError(f"{who}: expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise LinalgError(f"{who}: matrix contains non-finite entries")
    return m.astype(complex, copy=False)


def hermitian_eig(m: np.ndarray, tol: float | None = None) -> SpectralDecomposition:
    """Eigendecompose a Hermitian matrix, eigenvalues ascending.

    Rejects non-square or non-Hermitian input; the tolerance defaults to
    ``1e-10 * dim`` on the largest entrywise deviation from M-dagger.
    """
    m = _as_square(m, "hermitian_eig")
    dim = m.shape[0]
    if tol is None:
        tol = HERMITICITY_TOL * dim
    defect = hermiticity_defect(m)
    if defect > tol:
        raise LinalgError(
            f"hermitian_eig: matrix is not Hermitian within {tol:.3e} "
            f"(defect {defect:.3e})"
        )
    w, u = np.linalg.eigh(m)
    return SpectralDecomposition(eigenvalues=w, eigenvectors=u)


def matrix_function(
    m: np.ndarray | SpectralDecomposition,
    f: Callable[[np.ndarray], np.ndarray],
    domain_guard: Callable[[np.ndarray], np.ndarray] | None = None,
    name: str = "f",
) -> np.ndarray:
    """Spectral function of a Hermitian matrix: U diag(f(lambda)) U-dagger.

    ``domain_guard`` is a vectorized predicate on the eigenvalues; any
    eigenvalue outside the domain aborts with the offending value reported.
    The result is re-Hermitized (averaged with its adjoint) to scrub
    round-off asymmetry.
    """
    spec = m if isinstance(m, SpectralDecomposition) else hermitian_eig(m)
    w = spec.eigenvalues
    if domain_guard is not None:
        ok = np.asarray(domain_guard(w), dtype=bool)
        if not ok.all():
            bad = w[~ok]
            raise LinalgError(
                f"matrix_function: eigenvalue {bad[0]:.6e} outside the domain of {name}"
            )
    out = spec.apply(f)
    return (out + out.conj().T) / 2


def singular_values(m: np.ndarray) -> np.ndarray:
    """Singular values via the Hermitian eigensystem of M-dagger M, descending."""
    m = _as_square(m, "singular_values")
    w = np.linalg.eigvalsh(m.conj().T @ m)
    return np.sqrt(np.clip(w, 0.0, None))[::-1]


def schatten_norm(m: np.ndarray, k: float, halved: bool = False) -> float:
    """Schatten k-norm (sum of k-th powers of singular values, to the 1/k).

    ``k = np.inf`` returns the largest singular value.  ``halved=True``
    applies the trace-distance convention (half the value), meant for
    k = 1 on differences of states.
    """
    if not (k > 0):
        raise LinalgError(f"schatten_norm: order must be positive, got {k}")
    s = singular_values(m)
    if np.isinf(k):
        val = float(s[0]) if s.size else 0.0
    else:
        val = float(np.sum(s**k) ** (1.0 / k))
    return 0.5 * val if halved else val


def partial_trace(
    m: np.ndarray, site_dims: Sequence[int], keep: Sequence[int]
) -> np.ndarray:
    """Trace out all sites not in ``keep``; kept sites retain their order.

    ``site_dims`` lists the local dimension of each tensor factor; their
    product must equal the matrix dimension.
    """
    m = _as_square(m, "partial_trace")
    dims = [int(d) for d in site_dims]
    n = len(dims)
    if int(np.prod(dims)) != m.shape[0]:
        raise LinalgError(
            f"partial_trace: site dims {dims} give {int(np.prod(dims))}, "
            f"matrix dim is {m.shape[0]}"
        )
    keep = sorted(set(int(k) for k in keep))
    if not keep or any(k < 0 or k >= n for k in keep):
        raise LinalgError(f"partial_trace: keep set {keep} invalid for {n} sites")
    traced = [k for k in range(n) if k not in keep]
    t = m.reshape(dims + dims)
    for k in sorted(traced, reverse=True):
        half = t.ndim // 2
        t = np.trace(t, axis1=k, axis2=k + half)
    d_keep = int(np.prod([dims[k] for k in keep]))
    return np.ascontiguousarray(t.reshape(d_keep, d_keep))


def translation_permutation(n_sites: int, local_dim: int = 2) -> np.ndarray:
    """Basis-index image of the one-site cyclic shift.

    Returns ``perm`` with T e_i = e_perm[i], where T moves the content of
    site j to site j+1 (site 0 is the most significant digit).
    """
    dim = local_dim**n_sites
    idx = np.arange(dim)
    digits = np.empty((n_sites, dim), dtype=np.int64)
    for k in range(n_sites):
        digits[k] = (idx // local_dim ** (n_sites - 1 - k)) % local_dim
    rolled = np.roll(digits, 1, axis=0)  # new site k carries old site k-1
    perm = np.zeros(dim, dtype=np.int64)
    for k in range(n_sites):
        perm = perm * local_dim + rolled[k]
    return perm


def translate(x: np.ndarray, lattice, shift: int) -> np.ndarray:
    """Conjugate by the cyclic shift: T^shift X T^(-shift).

    ``lattice`` provides ``n_sites`` and ``local_dim``.  A single-site
    operator on site j lands on site (j + shift) mod N.  Implemented as a
    row/column permutation; no matrix products.
    """
    x = _as_square(x, "translate")
    n, q = lattice.n_sites, lattice.local_dim
    if x.shape[0] != q**n:
        raise LinalgError(
            f"translate: operator dim {x.shape[0]} != lattice dim {q**n}"
        )
    shift = shift % n
    if shift == 0:
        return x.copy()
    base = translation_permutation(n, q)
    perm = base
    for _ in range(shift - 1):
        perm = perm[base]
    # T X T^-1 has entries (TXT^-1)[perm[i], perm[j]] = X[i, j]
    out = np.empty_like(x)
    out[np.ix_(perm, perm)] = x
    return out


def apply_translation(v: np.ndarray, lattice, shift: int = 1) -> np.ndarray:
    """T^shift acting on a state vector."""
    n, q = lattice.n_sites, lattice.local_dim
    shift = shift % n
    out = np.asarray(v)
    perm = translation_permutation(n, q)
    for _ in range(shift):
        new = np.empty_like(out)
        new[perm] = out
        out = new
    return out.copy() if shift == 0 else out


def kron_all(factors: Sequence[np.ndarray]) -> np.ndarray:
    """Kronecker product of a sequence of matrices, left to right."""
    out = np.asarray(factors[0], dtype=complex)
    for f in factors[1:]:
        out = np.kron(out, f)
    return out
