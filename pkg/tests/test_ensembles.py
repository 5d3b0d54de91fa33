import numpy as np
import pytest

from ethlab.ensembles import (
    gibbs_state,
    gibbs_weights,
    match_beta,
    microcanonical_state,
    select_shell,
    thermal_energy,
)
from ethlab.linalg import hermitian_eig
from ethlab.models import PAULI_Z, HamiltonianSpec, LatticeSpec, build_hamiltonian

rng = np.random.default_rng(404)


def rand_hermitian(d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


def chaotic_chain(n):
    return build_hamiltonian(
        LatticeSpec(n), HamiltonianSpec("tfim_long", {"J": 1.0, "g": 1.05, "h": 0.5})
    )


# ---------------------------------------------------------------- gibbs

def test_gibbs_infinite_temperature():
    rho = gibbs_state(rand_hermitian(6), 0.0)
    assert np.abs(rho.matrix - np.eye(6) / 6).max() < 1e-12


def test_gibbs_low_temperature_projects_on_ground_state():
    h = rand_hermitian(5)
    spec = hermitian_eig(h)
    gap = spec.eigenvalues[1] - spec.eigenvalues[0]
    beta = 40.0 / gap
    rho = gibbs_state(spec, beta)
    ground = np.outer(spec.eigenvectors[:, 0], spec.eigenvectors[:, 0].conj())
    assert np.abs(rho.matrix - ground).max() < 1e-8


def test_gibbs_qubit_frozen_value():
    rho = gibbs_state(PAULI_Z, 1.0)
    z = np.exp(1.0) + np.exp(-1.0)
    assert np.allclose(rho.matrix, np.diag([np.exp(-1.0), np.exp(1.0)]) / z)


def test_gibbs_commutes_with_h():
    h = chaotic_chain(4)
    rho = gibbs_state(h, 0.8)
    comm = rho.matrix @ h - h @ rho.matrix
    assert np.abs(comm).max() < 1e-10


def test_gibbs_weights_handle_extreme_beta():
    e = np.linspace(-1000.0, 1000.0, 11)
    for beta in (-80.0, 80.0):
        w = gibbs_weights(e, beta)
        assert np.isfinite(w).all()
        assert w.sum() == pytest.approx(1.0)


# ---------------------------------------------------------------- match_beta

def test_match_beta_infinite_temperature_mean():
    h = rand_hermitian(7)
    target = h.trace().real / 7
    beta = match_beta(h, target)
    assert abs(beta) < 1e-6


def test_match_beta_qubit_tanh_inversion():
    beta = match_beta(PAULI_Z, -np.tanh(1.0))
    assert beta == pytest.approx(1.0, abs=1e-7)


def test_match_beta_roundtrip():
    h = rand_hermitian(8)
    spec = hermitian_eig(h)
    for beta0 in (-1.3, 0.05, 2.0):
        target = thermal_energy(spec.eigenvalues, beta0)
        assert match_beta(spec, target) == pytest.approx(beta0, abs=1e-6)


def test_match_beta_rejects_out_of_range():
    h = np.diag([0.0, 1.0]).astype(complex)
    with pytest.raises(ValueError, match="outside open spectral range"):
        match_beta(h, 1.5)


def test_thermal_energy_strictly_decreasing():
    e = np.sort(rng.normal(size=16))
    betas = np.linspace(-3, 3, 13)
    vals = [thermal_energy(e, b) for b in betas]
    assert all(a > b for a, b in zip(vals, vals[1:]))


# ---------------------------------------------------------------- microcanonical

def test_microcanonical_full_spectrum_is_maximally_mixed():
    h = rand_hermitian(6)
    spec = hermitian_eig(h)
    w = spec.eigenvalues
    rho, idx = microcanonical_state(
        spec, float(w[-1]) + 1e-9, float(w[-1] - w[0]) + 1.0
    )
    assert idx.size == 6
    assert np.abs(rho.matrix - np.eye(6) / 6).max() < 1e-12


def test_microcanonical_single_state_is_projector():
    h = rand_hermitian(6)
    spec = hermitian_eig(h)
    e = spec.eigenvalues
    gap_below = e[3] - e[2]
    rho, idx = microcanonical_state(spec, float(e[3]), float(gap_below) / 2)
    assert list(idx) == [3]
    proj = np.outer(spec.eigenvectors[:, 3], spec.eigenvectors[:, 3].conj())
    assert np.abs(rho.matrix - proj).max() < 1e-12


def test_microcanonical_empty_shell_names_nearest():
    h = np.diag([0.0, 1.0, 2.0]).astype(complex)
    with pytest.raises(ValueError, match="nearest eigenvalue"):
        microcanonical_state(h, 0.4, 0.2)


def test_microcanonical_commutes_with_h():
    h = chaotic_chain(4)
    spec = hermitian_eig(h)
    mid = float(np.median(spec.eigenvalues))
    rho, _ = microcanonical_state(spec, mid, 0.8)
    assert np.abs(rho.matrix @ h - h @ rho.matrix).max() < 1e-10


def test_microcanonical_rank_matches_shell():
    h = chaotic_chain(8)
    spec = hermitian_eig(h)
    idx, top, delta = select_shell(spec.eigenvalues, float(spec.eigenvalues.mean()), 20)
    rho, idx2 = microcanonical_state(spec, top, delta)
    assert np.array_equal(idx, idx2)
    assert abs(rho.matrix.trace() - 1) < 1e-10
    rank = int(np.sum(np.linalg.eigvalsh(rho.matrix) > 1e-12))
    assert rank == idx.size


def test_select_shell_returns_requested_count():
    e = np.linspace(-5, 5, 101)
    idx, top, delta = select_shell(e, 0.3, 7)
    assert idx.size == 7
    inside = (e > top - delta) & (e <= top)
    assert np.array_equal(np.flatnonzero(inside), idx)
