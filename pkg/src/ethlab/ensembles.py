"""Canonical and microcanonical ensembles from exact spectra.

Gibbs weights are computed with the spectrum shifted by its maximum of
``-beta*E`` before exponentiating, so any real beta is safe.  Inverse
temperatures are matched to target energies by bisection on the strictly
decreasing map beta -> <H>_beta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import SpectralDecomposition, hermitian_eig
from .states import DensityMatrix

__all__ = [
    "EnsembleSpec",
    "gibbs_weights",
    "gibbs_state",
    "thermal_energy",
    "match_beta",
    "microcanonical_state",
    "select_shell",
]


@dataclass(frozen=True)
class EnsembleSpec:
    """Which equilibrium family to compare against.

    ``canonical`` uses ``beta`` (None means: match beta to each eigenstate
    energy).  ``microcanonical`` uses the shell (e_center - delta, e_center];
    if ``delta`` is None the shell is chosen adaptively around e_center
    (``shell_count`` states, ties included).
    """

    kind: str = "canonical"
    beta: float | None = None
    e_center: float | None = None
    delta: float | None = None
    shell_count: int | None = None

    def __post_init__(self):
        if self.kind not in ("canonical", "microcanonical"):
            raise ValueError(f"unknown ensemble kind '{self.kind}'")


def _spectral(h) -> SpectralDecomposition:
    if isinstance(h, SpectralDecomposition):
        return h
    return hermitian_eig(np.asarray(h))


def gibbs_weights(energies: np.ndarray, beta: float) -> np.ndarray:
    """exp(-beta E_i)/Z, overflow-guarded by shifting the exponent maximum to 0."""
    x = -beta * np.asarray(energies, dtype=float)
    x = x - x.max()
    w = np.exp(x)
    return w / w.sum()


def gibbs_state(h, beta: float) -> DensityMatrix:
    """Canonical state exp(-beta H)/Z via the spectral exponential.

    ``h`` may be a Hermitian matrix or a precomputed SpectralDecomposition.
    """
    spec = _spectral(h)
    w = gibbs_weights(spec.eigenvalues, beta)
    u = spec.eigenvectors
    m = (u * w) @ u.conj().T
    m = (m + m.conj().T) / 2
    return DensityMatrix(m / m.trace().real, min_eigenvalue=float(w.min()))


def thermal_energy(energies: np.ndarray, beta: float) -> float:
    """<H>_beta for the given spectrum."""
    w = gibbs_weights(energies, beta)
    return float(w @ np.asarray(energies, dtype=float))


def match_beta(h, e_target: float, tol_factor: float = 1e-9) -> float:
    """Inverse temperature with Tr[rho_c(beta) H] = e_target.

    Bisection on beta over [-beta_max, beta_max] with beta_max = 50/width;
    the energy is matched to within ``tol_factor *`` spectral width.  The
    target must lie strictly inside the spectral range.
    """
    spec = _spectral(h)
    e = spec.eigenvalues
    e_min, e_max = float(e[0]), float(e[-1])
    if not (e_min < e_target < e_max):
        raise ValueError(
            f"target energy {e_target} outside open spectral range "
            f"({e_min}, {e_max})"
        )
    width = e_max - e_min
    if width == 0.0:
        raise ValueError("spectrum is a single point; beta is undefined")
    beta_max = 50.0 / width
    lo, hi = -beta_max, beta_max  # <H> decreasing: value at lo is largest
    f_lo = thermal_energy(e, lo) - e_target
    f_hi = thermal_energy(e, hi) - e_target
    tol = tol_factor * width
    if f_lo < 0 or f_hi > 0:
        if abs(f_lo) <= tol:
            return lo
        if abs(f_hi) <= tol:
            return hi
        raise ValueError(
            f"target energy {e_target} not reachable within |beta| <= {beta_max:.3g}"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = thermal_energy(e, mid) - e_target
        if abs(f_mid) <= tol:
            return mid
        if f_mid > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def select_shell(
    energies: np.ndarray, e_center: float, count: int
) -> tuple[np.ndarray, float, float]:
    """Indices of the ``count`` eigenvalues nearest e_center, as a shell (E-delta, E].

    Ties within 1e-12 * spectral width of the selection boundary are
    included so near-degenerate multiplets are never split.  Returns
    (indices ascending, shell top E, shell width delta).
    """
    e = np.asarray(energies, dtype=float)
    if count < 1:
        raise ValueError("shell must hold at least one state")
    count = min(count, e.size)
    width = float(e[-1] - e[0]) if e.size > 1 else 1.0
    order = np.argsort(np.abs(e - e_center), kind="stable")
    chosen = order[:count]
    cutoff = np.abs(e[chosen] - e_center).max()
    tie = np.abs(np.abs(e - e_center) - cutoff) <= 1e-12 * max(width, 1.0)
    mask = np.zeros(e.size, dtype=bool)
    mask[chosen] = True
    mask |= tie
    idx = np.flatnonzero(mask)
    e_sel = e[idx]
    top = float(e_sel.max())
    below = e[e < e_sel.min() - 1e-12 * max(width, 1.0)]
    if below.size:
        delta = float(top - 0.5 * (e_sel.min() + below.max()))
    else:
        delta = float(top - e_sel.min()) + max(width, 1.0)
    return idx, top, delta


def microcanonical_state(
    h, e_center: float, delta: float
) -> tuple[DensityMatrix, np.ndarray]:
    """Equal-weight mixture over the shell (e_center - delta, e_center].

    Returns the state and the ascending shell indices; an empty shell is
    rejected with the nearest eigenvalue named.
    """
    spec = _spectral(h)
    e = spec.eigenvalues
    mask = (e > e_center - delta) & (e <= e_center)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        nearest = float(e[np.argmin(np.abs(e - e_center))])
        raise ValueError(
            f"shell ({e_center - delta}, {e_center}] is empty; "
            f"nearest eigenvalue is {nearest}"
        )
    u = spec.eigenvectors[:, idx]
    m = (u @ u.conj().T) / idx.size
    m = (m + m.conj().T) / 2
    return DensityMatrix(m / m.trace().real, min_eigenvalue=0.0), idx
