"""Translation-invariant Hamiltonians on periodic spin chains.

Model families are sums over all lattice translations of one local term,
so translation invariance holds by construction; ``check_translation_invariance``
quantifies the defect for arbitrary operators.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import LinalgError, kron_all, translate, translation_permutation

__all__ = [
    "LatticeSpec",
    "HamiltonianSpec",
    "PAULI_X",
    "PAULI_Y",
    "PAULI_Z",
    "build_hamiltonian",
    "translation_operator",
    "check_translation_invariance",
]

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic chain of ``n_sites`` sites with local dimension ``local_dim``."""

    n_sites: int
    local_dim: int = 2
    spatial_dim: int = 1
    boundary: str = "periodic"

    def __post_init__(self):
        if self.n_sites < 2:
            raise ValueError(f"lattice needs at least 2 sites, got {self.n_sites}")
        if self.local_dim < 2:
            raise ValueError(f"local dimension must be >= 2, got {self.local_dim}")
        if self.spatial_dim != 1:
            raise ValueError("only one-dimensional chains are supported")
        if self.boundary != "periodic":
            raise ValueError("only periodic boundaries are supported")

    @property
    def dim(self) -> int:
        return self.local_dim**self.n_sites

    @property
    def site_dims(self) -> tuple[int, ...]:
        return (self.local_dim,) * self.n_sites


@dataclass(frozen=True)
class HamiltonianSpec:
    """Model family plus named couplings.

    Families:
      * ``tfim_long``: sum_i [J Z_i Z_{i+1} + g X_i + h Z_i], periodic wrap.
      * ``xxz_field``: sum_i [J (X_i X_{i+1} + Y_i Y_{i+1}) + delta Z_i Z_{i+1} + h Z_i].
      * ``custom_local``: one local term on ``interaction_range`` consecutive
        sites, summed over all translations.
    """

    family: str
    couplings: dict = field(default_factory=dict)
    interaction_range: int = 2
    local_term: np.ndarray | None = None

    def coupling(self, name: str) -> float:
        if name not in self.couplings:
            raise ValueError(f"{self.family}: missing coupling '{name}'")
        return float(self.couplings[name])


def _site_op(op: np.ndarray, site: int, lattice: LatticeSpec) -> np.ndarray:
    return kron_all(
        [op if k == site else ID2 for k in range(lattice.n_sites)]
    )


def _bond_op(a: np.ndarray, b: np.ndarray, site: int, lattice: LatticeSpec) -> np.ndarray:
    n = lattice.n_sites
    ops = [ID2] * n
    ops[site] = a
    ops[(site + 1) % n] = b  # wrap bond lands on sites n-1 and 0
    return kron_all(ops)


def build_hamiltonian(lattice: LatticeSpec, spec: HamiltonianSpec) -> np.ndarray:
    """Dense Hamiltonian matrix for the given family on the given lattice."""
    if lattice.local_dim != 2 and spec.family in ("tfim_long", "xxz_field"):
        raise ValueError(f"{spec.family} is a spin-1/2 family (local_dim 2)")
    n = lattice.n_sites
    h = np.zeros((lattice.dim, lattice.dim), dtype=complex)
    if spec.family == "tfim_long":
        j = spec.coupling("J")
        g = spec.coupling("g")
        hz = spec.coupling("h")
        for i in range(n):
            h += j * _bond_op(PAULI_Z, PAULI_Z, i, lattice)
            h += g * _site_op(PAULI_X, i, lattice)
            h += hz * _site_op(PAULI_Z, i, lattice)
    elif spec.family == "xxz_field":
        j = spec.coupling("J")
        delta = spec.coupling("delta")
        hz = spec.coupling("h")
        for i in range(n):
            h += j * _bond_op(PAULI_X, PAULI_X, i, lattice)
            h += j * _bond_op(PAULI_Y, PAULI_Y, i, lattice)
            h += delta * _bond_op(PAULI_Z, PAULI_Z, i, lattice)
            h += hz * _site_op(PAULI_Z, i, lattice)
    elif spec.family == "custom_local":
        if spec.local_term is None:
            raise ValueError("custom_local family requires a local_term matrix")
        r = spec.interaction_range
        term = np.asarray(spec.local_term, dtype=complex)
        if term.shape != (lattice.local_dim**r,) * 2:
            raise ValueError(
                f"local_term shape {term.shape} does not match range {r}"
            )
        base = kron_all([term] + [ID2] * (n - r)) if n > r else term
        for i in range(n):
            h += translate(base, lattice, i)
    else:
        raise ValueError(f"unknown Hamiltonian family '{spec.family}'")
    defect = float(np.abs(h - h.conj().T).max())
    if defect > 1e-10 * lattice.dim:
        raise LinalgError(f"constructed Hamiltonian not Hermitian (defect {defect:.3e})")
    return h


def translation_operator(lattice: LatticeSpec) -> np.ndarray:
    """Unitary permutation matrix of the one-site cyclic shift; T^N = 1."""
    perm = translation_permutation(lattice.n_sites, lattice.local_dim)
    t = np.zeros((lattice.dim, lattice.dim), dtype=complex)
    t[perm, np.arange(lattice.dim)] = 1.0
    return t


def check_translation_invariance(x: np.ndarray, lattice: LatticeSpec) -> float:
    """Entrywise-max of T X T-dagger minus X; caller decides thresholds."""
    x = np.asarray(x)
    if x.shape != (lattice.dim, lattice.dim):
        raise LinalgError(
            f"dimension mismatch: operator {x.shape}, lattice dim {lattice.dim}"
        )
    return float(np.abs(translate(x, lattice, 1) - x).max())
