import numpy as np
import pytest

from ethlab.divergences import formal_observable, quantum_variance
from ethlab.ensembles import gibbs_state, gibbs_weights, select_shell
from ethlab.experiments import (
    SelectionPolicy,
    ChainWorkspace,
    chebyshev_concentration,
    chebyshev_typicality,
    correlation_decay_probe,
    ensemble_equivalence,
    inequality_audit,
    loglog_fit,
    offdiag_scan,
    select_mid_spectrum,
    subsystem_eth_scan,
    typicality_balance,
    _averaged_variance_parts,
    _eth_record,
)
from ethlab.linalg import SpectralDecomposition, hermitian_eig, schatten_norm
from ethlab.models import PAULI_Z, HamiltonianSpec, LatticeSpec, build_hamiltonian
from ethlab.states import (
    BlockPartition,
    DensityMatrix,
    TransitionMatrix,
    reduce_state,
    reduce_transition,
    regularize,
)

rng = np.random.default_rng(606)

CHAOTIC = HamiltonianSpec("tfim_long", {"J": 1.0, "g": 1.05, "h": 0.5})
CLASSICAL = HamiltonianSpec("tfim_long", {"J": 1.0, "g": 0.0, "h": 0.25})


def rand_density(d):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    m = g @ g.conj().T
    return DensityMatrix(m / m.trace().real)


# ---------------------------------------------------------------- selection

def test_mid_spectrum_selection_centered_and_capped():
    idx = select_mid_spectrum(256, SelectionPolicy(0.1, 50))
    assert idx.size == 26
    assert idx[0] == (256 - 26) // 2
    idx = select_mid_spectrum(4096, SelectionPolicy(0.1, 50))
    assert idx.size == 50
    assert idx[0] == (4096 - 50) // 2


# ---------------------------------------------------------------- scans

def test_eth_scan_statuses():
    recs = subsystem_eth_scan([(9, 2), (4, 4), (4, 2)], CHAOTIC,
                              selection=SelectionPolicy(0.2, 4))
    statuses = {r.status for r in recs}
    assert "skipped_nondivisible" in statuses
    assert "degenerate_partition" in statuses
    ok = [r for r in recs if r.status == "ok"]
    assert len(ok) == 3  # round(0.2 * 16)
    for r in ok:
        assert abs(r.variance_total - r.variance_local - r.variance_cross) < 1e-8
        assert r.pinsker_slack >= -1e-8
        assert r.hoelder_slack >= -1e-8
        assert r.bs_entropy >= r.umegaki - 1e-8


def test_eth_scan_memory_cap():
    with pytest.raises(MemoryError, match="N = 14"):
        subsystem_eth_scan([(14, 2)], CHAOTIC, memory_cap_dim=2**13)


def test_eth_record_classical_all_down_state_hand_oracle():
    """The unique all-down eigenstate of the classical chain with field.

    At J=1, h=0.25 its energy 4J - 4h = 3 is nondegenerate and interior to
    the spectrum, the eigenvector is exactly |1111>, its block reduction is
    the |11> projector, and the matched ensemble is diagonal, so the
    distance reduces to classical enumeration over spin configurations.
    """
    n, n_a = 4, 2
    ws = ChainWorkspace(LatticeSpec(n), CLASSICAL)
    part = BlockPartition(LatticeSpec(n), n_a)
    # classical oracle: E(s) = J sum s_i s_{i+1} + h sum s_i over s in {+-1}^4
    j_c, h_c = 1.0, 0.25
    configs = [
        [1 - 2 * ((c >> (n - 1 - k)) & 1) for k in range(n)] for c in range(2**n)
    ]
    energies = np.array([
        j_c * sum(s[k] * s[(k + 1) % n] for k in range(n))
        + h_c * sum(s) for s in configs
    ])
    e_down = 4 * j_c - 4 * h_c
    assert np.sum(np.abs(energies - e_down) < 1e-9) == 1  # nondegenerate
    i_down = int(np.argmin(np.abs(ws.energies - e_down)))
    rec = _eth_record(ws, part, i_down, 1e-12)
    assert rec.status == "ok"
    assert rec.energy == pytest.approx(e_down)

    w = np.exp(-rec.beta * (energies - energies.max()))
    w /= w.sum()
    # marginal of block {0,1}: group configs by their first two spins
    marg = np.zeros(4)
    for c, _ in enumerate(configs):
        marg[(c >> (n - 2)) & 3] += w[c]
    # all-down eigenstate is |1111>; reduced state is the projector on |11>
    sigma_diag = np.array([0.0, 0.0, 0.0, 1.0])
    hand_distance = 0.5 * np.abs(sigma_diag - marg).sum()
    assert rec.trace_distance == pytest.approx(hand_distance, abs=1e-6)
    assert rec.beta < 0  # above the mean energy: negative temperature side


def test_offdiag_scan_records():
    recs = offdiag_scan([(6, 2)], CHAOTIC, selection=SelectionPolicy(0.1, 5))
    ok = [r for r in recs if r.status == "ok"]
    assert len(ok) == 4  # 5 states -> 4 consecutive pairs
    for r in ok:
        assert r.j == r.i + 1
        assert np.isnan(r.trace_distance)
        assert r.sigma_norm1 >= 0
        assert r.hoelder_slack >= -1e-8
        assert abs(r.variance_total - r.variance_local - r.variance_cross) < 1e-8


def test_offdiag_rejects_equal_pair():
    from ethlab.experiments import _offdiag_record

    ws = ChainWorkspace(LatticeSpec(4), CHAOTIC)
    part = BlockPartition(LatticeSpec(4), 2)
    with pytest.raises(ValueError, match="distinct"):
        _offdiag_record(ws, part, 3, 3, 1e-12)


def test_offdiag_orthogonal_product_states_give_zero():
    # two product states differing on the traced-out site reduce to zero
    part = BlockPartition(LatticeSpec(2), 1)
    e00 = np.zeros(4)
    e00[0] = 1.0
    e01 = np.zeros(4)
    e01[1] = 1.0
    sig = reduce_transition(e00, e01, part, 0)
    assert np.abs(sig.matrix).max() < 1e-14


def test_fast_variance_parts_match_library():
    lat = LatticeSpec(6)
    ws = ChainWorkspace(lat, CHAOTIC)
    part = BlockPartition(lat, 3)
    w = gibbs_weights(ws.energies, 0.3)
    rho = gibbs_state(ws.spectral, 0.3)
    sigma = rand_density(8)
    rho_b1, _ = regularize(reduce_state(rho, part, 0))
    o = formal_observable(rho_b1, sigma, eps=None)
    from ethlab.divergences import variance_decomposition

    ref = variance_decomposition(rho, part, o)
    total, local, cross, first = _averaged_variance_parts(
        ws.vectors, w, part, o.matrix)
    assert (total, local, cross) == pytest.approx(ref, abs=1e-10)
    assert first == pytest.approx(local * part.block_count, abs=1e-8)


# ---------------------------------------------------------------- decay probe

def test_decay_product_state_is_flat_zero():
    lat = LatticeSpec(6)
    part = BlockPartition(lat, 2)
    single = rand_density(4)
    rho = DensityMatrix(
        np.kron(np.kron(single.matrix, single.matrix), single.matrix)
    )
    recs, fit = correlation_decay_probe(rho, part)
    assert all(r.corr_norm <= 1e-10 for r in recs)
    assert fit.model == "degenerate"


def test_decay_infinite_temperature_exactly_factorizes():
    lat = LatticeSpec(8)
    part = BlockPartition(lat, 2)
    rho = DensityMatrix(np.eye(256, dtype=complex) / 256)
    recs, _ = correlation_decay_probe(rho, part)
    assert all(r.corr_norm <= 1e-10 for r in recs)


def test_decay_needs_three_blocks():
    lat = LatticeSpec(4)
    part = BlockPartition(lat, 2)
    with pytest.raises(ValueError, match="3 blocks"):
        correlation_decay_probe(rand_density(16), part)


def test_decay_high_temperature_chain_monotone():
    lat = LatticeSpec(8)
    ws = ChainWorkspace(lat, CHAOTIC)
    part = BlockPartition(lat, 2)
    rho = gibbs_state(ws.spectral, 0.2)
    recs, fit = correlation_decay_probe(rho, part)
    assert all(r.pinsker_slack >= -1e-10 for r in recs)
    by_d = {}
    for r in recs:
        by_d.setdefault(r.distance, []).append(r.corr_norm)
    ds = sorted(by_d)
    means = [np.mean(by_d[d]) for d in ds]
    assert all(a >= b - 1e-12 for a, b in zip(means, means[1:]))
    assert fit.model in ("exponential", "algebraic")


# ---------------------------------------------------------------- concentration

def test_chebyshev_identity_observable_never_deviates():
    rho = rand_density(4)
    basis = hermitian_eig(rho.matrix)
    rows = chebyshev_concentration(rho, basis, np.eye(4), [0.1, 1.0])
    assert all(r.empirical == 0.0 for r in rows)


def test_chebyshev_qubit_two_outcome_arithmetic():
    rho = DensityMatrix(np.diag([0.5, 0.5]).astype(complex))
    basis = SpectralDecomposition(np.array([0.5, 0.5]), np.eye(2, dtype=complex))
    rows = chebyshev_concentration(rho, basis, PAULI_Z, [0.5])
    assert rows[0].empirical == pytest.approx(1.0)
    assert rows[0].bound == pytest.approx(4.0)  # vacuous but valid


def test_chebyshev_bound_holds_on_random_instances():
    for _ in range(10):
        d = int(rng.integers(2, 6))
        rho = rand_density(d)
        basis = hermitian_eig(rho.matrix)
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rows = chebyshev_concentration(rho, basis, a, [0.05, 0.2, 1.0, 5.0])
        assert all(r.empirical <= r.bound + 1e-12 for r in rows)


def test_chebyshev_typicality_microcanonical():
    lat = LatticeSpec(6)
    ws = ChainWorkspace(lat, CHAOTIC)
    part = BlockPartition(lat, 2)
    idx, _, _ = select_shell(ws.energies, float(ws.energies.mean()), 10)
    w = np.zeros(64)
    w[idx] = 1.0 / idx.size
    rows = chebyshev_typicality(ws.spectral, w, part, [0.5, 1.0, 2.0, 8.0])
    assert all(r.empirical <= r.bound + 1e-12 for r in rows)
    assert any(r.empirical > 0 for r in rows)


# ---------------------------------------------------------------- typicality balance

def classical_balance_oracle(p_sites, d=2):
    """Closed-form aggregates for a diagonal 2-site product-basis state.

    p_sites is the diagonal of the full state (length d*d, computational
    basis); returns the summed diagonal + off-diagonal variance aggregate
    computed by explicit scalar enumeration.
    """
    n = 2
    dim = d * d
    p = np.asarray(p_sites, dtype=float)
    # marginal of site 0 and site 1
    marg = [np.zeros(d), np.zeros(d)]
    for c in range(dim):
        a, b = divmod(c, d)
        marg[0][a] += p[c]
        marg[1][b] += p[c]
    rho_b1 = (marg[0] + marg[1]) / 2  # translation-averaged single-site state
    # diag of rho_B1 in the computational basis; it is already diagonal
    total = 0.0
    for i in range(dim):
        ai, bi = divmod(i, d)
        for j in range(dim):
            aj, bj = divmod(j, d)
            # sigma-bar^{ij} = (1/2)(|ai><aj| delta_{bi bj} + |bi><bj| delta_{ai aj})
            x = np.zeros((d, d), dtype=complex)
            x[ai, aj] += 0.5 * (1.0 if bi == bj else 0.0)
            x[bi, bj] += 0.5 * (1.0 if ai == aj else 0.0)
            if i == j:
                x -= np.diag(rho_b1)
            val = 0.0
            for a in range(d):
                for b in range(d):
                    val += abs(x[b, a]) ** 2 / rho_b1[b]
            val -= abs(np.trace(x)) ** 2
            total += p[i] * val
    return total


def test_typicality_balance_classical_hand_case():
    # diagonal translation-invariant 2-site state: both aggregates equal the
    # classical enumeration
    lat = LatticeSpec(2)
    part = BlockPartition(lat, 1)
    p = np.array([0.4, 0.15, 0.15, 0.3])  # symmetric under site swap
    u = np.eye(4, dtype=complex)
    spec = SpectralDecomposition(p.copy(), u)
    rep = typicality_balance(spec, p, part)
    oracle = classical_balance_oracle(p)
    assert rep.lhs_total == pytest.approx(oracle, abs=1e-8)
    assert rep.rhs_total == pytest.approx(oracle, abs=1e-8)
    assert rep.abs_diff < 1e-8


def test_typicality_balance_c1_completeness():
    lat = LatticeSpec(4)
    ws = ChainWorkspace(lat, CHAOTIC)
    part = BlockPartition(lat, 4)  # C = 1
    w = gibbs_weights(ws.energies, 0.5)
    rep = typicality_balance(ws.spectral, w, part)
    assert rep.abs_diff < 1e-8


def test_typicality_balance_gibbs_dual_path():
    lat = LatticeSpec(6)
    ws = ChainWorkspace(lat, CHAOTIC)
    part = BlockPartition(lat, 2)
    for beta in (0.0, 0.2, 1.0):
        w = gibbs_weights(ws.energies, beta)
        rep = typicality_balance(ws.spectral, w, part, label_beta=beta)
        assert rep.abs_diff < 1e-6
        assert rep.sdti_max_dev < 1e-8
        assert rep.sdti_off_max_dev < 1e-8
        assert rep.eq_local_combination_max_dev < 1e-6
        assert rep.orthogonality_max_dev < 1e-10


# ---------------------------------------------------------------- ensemble equivalence

def test_ensemble_equivalence_full_spectrum_infinite_temperature():
    lat = LatticeSpec(4)
    ws = ChainWorkspace(lat, CHAOTIC)
    rec = ensemble_equivalence(
        ws.spectral, lat, 2, float(ws.energies.mean()),
        shell_count=ws.energies.size,
    )
    assert rec.shell_size == 16
    assert rec.lhs_full <= 1e-8
    assert rec.margin >= -1e-8


def test_ensemble_equivalence_single_state_shell():
    lat = LatticeSpec(6)
    ws = ChainWorkspace(lat, CHAOTIC)
    part = BlockPartition(lat, 2)
    mid = ws.energies.size // 2
    rec = ensemble_equivalence(
        ws.spectral, lat, 2, float(ws.energies[mid]), shell_count=1,
    )
    assert rec.shell_size == 1
    # lhs equals that eigenstate's averaged-block distance to the canonical
    # reduction at beta matched to its energy
    from ethlab.states import reduce_pure, reduce_weighted
    from ethlab.ensembles import match_beta

    i = int(np.argmin(np.abs(ws.energies - rec.e_center)))
    beta = match_beta(ws.spectral, float(ws.energies[i]))
    w = gibbs_weights(ws.energies, beta)
    rho_c = reduce_weighted(ws.vectors, w, lat, part.sites(0))
    sbar = sum(
        reduce_pure(ws.vectors[:, i], part, k).matrix for k in range(3)
    ) / 3
    direct = schatten_norm(sbar - rho_c, 1)
    assert rec.lhs_full == pytest.approx(direct, abs=1e-6)
    assert rec.margin >= -1e-8


def test_ensemble_equivalence_mid_spectrum_margin():
    lat = LatticeSpec(8)
    ws = ChainWorkspace(lat, CHAOTIC)
    rec = ensemble_equivalence(
        ws.spectral, lat, 2, float(ws.energies.mean()), shell_count=16,
    )
    assert rec.margin >= -1e-8
    assert rec.lhs_half <= 0.5  # sanity, not the acceptance band


# ---------------------------------------------------------------- audits

def test_audit_identical_states_all_zero():
    rho = rand_density(4)
    rep = inequality_audit(rho, rho, kind="diagonal")
    assert rep.umegaki == pytest.approx(0.0, abs=1e-9)
    assert rep.bs_form3 == pytest.approx(0.0, abs=1e-9)
    assert rep.trace_distance == pytest.approx(0.0, abs=1e-9)
    assert rep.variance == pytest.approx(0.0, abs=1e-9)


def test_audit_commuting_pair_scalar_arithmetic():
    sigma = DensityMatrix(np.diag([0.5, 0.5]).astype(complex))
    rho = DensityMatrix(np.diag([0.75, 0.25]).astype(complex))
    rep = inequality_audit(sigma, rho, kind="diagonal")
    kl = 0.5 * np.log(4.0 / 3.0)
    assert rep.umegaki == pytest.approx(kl, abs=1e-10)
    assert rep.bs_form1 == pytest.approx(kl, abs=1e-10)
    assert rep.trace_distance == pytest.approx(0.5)  # full Schatten-1
    # V = Tr[(sigma-rho) rho^-1 (sigma-rho)] = (1/16)(4/3) + (1/16)(4) scalar
    assert rep.variance == pytest.approx(1.0 / 12.0 + 0.25, abs=1e-10)
    assert rep.pinsker_slack >= -1e-12
    assert rep.hoelder_slack >= -1e-12


def test_audit_offdiagonal_kind():
    part = BlockPartition(LatticeSpec(2, local_dim=3), 1)
    g = rng.normal(size=(9, 2)) + 1j * rng.normal(size=(9, 2))
    q, _ = np.linalg.qr(g)
    sigma = reduce_transition(q[:, 0], q[:, 1], part, 0)
    rho = reduce_state(rand_density(9), part, 0)
    rep = inequality_audit(sigma, rho, kind="offdiagonal")
    assert np.isnan(rep.umegaki)
    assert rep.hoelder_slack >= -1e-8


def test_audit_randomized_no_violations():
    for _ in range(50):
        d = int(rng.integers(2, 5))
        rep = inequality_audit(rand_density(d), rand_density(d), "diagonal")
        assert rep.pinsker_slack >= -1e-8
        assert rep.bs_vs_umegaki_slack >= -1e-8
        assert rep.hoelder_slack >= -1e-8
        assert abs(rep.bs_form1 - rep.bs_form3) < 1e-8


def test_audit_type_guards():
    with pytest.raises(TypeError):
        inequality_audit(np.eye(2) / 2, rand_density(2), "diagonal")
    with pytest.raises(ValueError, match="unknown"):
        inequality_audit(rand_density(2), rand_density(2), "sideways")


# ---------------------------------------------------------------- fits

def test_loglog_fit_recovers_exponent():
    sizes = [8, 10, 12, 14]
    values = [2.0 * n**-0.5 for n in sizes]
    slope, half, r = loglog_fit(sizes, values)
    assert slope == pytest.approx(-0.5, abs=1e-12)
    assert abs(r) > 0.999999
