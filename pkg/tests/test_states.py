import numpy as np
import pytest

from ethlab.linalg import LinalgError, schatten_norm, translate
from ethlab.models import LatticeSpec
from ethlab.states import (
    BlockPartition,
    DensityMatrix,
    TransitionMatrix,
    embed_on_block,
    pure_projector,
    reduce_pure,
    reduce_state,
    reduce_transition,
    reduce_weighted,
    regularize,
)

rng = np.random.default_rng(202)


def rand_density(d):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    m = g @ g.conj().T
    return DensityMatrix(m / m.trace().real)


def rand_unit(d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------- DensityMatrix

def test_density_rejects_bad_trace():
    with pytest.raises(LinalgError, match="trace"):
        DensityMatrix(np.eye(2, dtype=complex))


def test_density_rejects_nonhermitian():
    m = np.array([[0.5, 0.5], [0.0, 0.5]], dtype=complex)
    with pytest.raises(LinalgError, match="Hermitian"):
        DensityMatrix(m)


def test_density_rejects_negative():
    m = np.diag([1.5, -0.5]).astype(complex)
    with pytest.raises(LinalgError, match="PSD"):
        DensityMatrix(m)


def test_mixture_of_projectors_is_valid():
    d = 4
    vs = [rand_unit(d) for _ in range(3)]
    p = np.array([0.5, 0.3, 0.2])
    m = sum(pi * np.outer(v, v.conj()) for pi, v in zip(p, vs))
    dm = DensityMatrix(m)
    assert dm.min_eigenvalue >= -1e-10


# ---------------------------------------------------------------- pure projector

def test_projector_basis_vector():
    p = pure_projector(np.array([1.0, 0.0]))
    assert np.allclose(p.matrix, np.diag([1.0, 0.0]))


def test_projector_plus_state():
    p = pure_projector(np.array([1.0, 1.0]) / np.sqrt(2))
    assert np.allclose(p.matrix, np.full((2, 2), 0.5))


def test_projector_idempotent_oracle():
    p = pure_projector(rand_unit(6)).matrix
    assert np.abs(p @ p - p).max() < 1e-10


def test_projector_rejects_unnormalized():
    with pytest.raises(LinalgError, match="norm"):
        pure_projector(np.array([1.0, 1.0]))


# ---------------------------------------------------------------- partitions

def test_partition_requires_equipartition():
    with pytest.raises(ValueError, match="equipartition"):
        BlockPartition(LatticeSpec(6), 4)


def test_partition_ring_distance():
    part = BlockPartition(LatticeSpec(12), 2)  # 6 blocks
    assert part.distance(0, 1) == 1
    assert part.distance(0, 2) == 3
    assert part.distance(0, 3) == 5
    assert part.distance(0, 4) == 3  # wraps around
    assert part.distance(0, 5) == 1
    assert part.distance(2, 2) == 0


def test_partition_block_sites():
    part = BlockPartition(LatticeSpec(6), 2)
    assert part.sites(0) == (0, 1)
    assert part.sites(2) == (4, 5)
    with pytest.raises(ValueError, match="out of range"):
        part.sites(3)


# ---------------------------------------------------------------- reductions

def test_reduce_product_state():
    r1, r2 = rand_density(2), rand_density(4)
    lat = LatticeSpec(3)
    part = BlockPartition(lat, 1)
    full = DensityMatrix(np.kron(r1.matrix, r2.matrix))
    red = reduce_state(full, part, 0)
    assert np.abs(red.matrix - r1.matrix).max() < 1e-12


def test_reduce_is_linear_over_mixtures():
    lat = LatticeSpec(4)
    part = BlockPartition(lat, 2)
    vs = [rand_unit(16) for _ in range(4)]
    p = np.array([0.4, 0.3, 0.2, 0.1])
    mix = DensityMatrix(
        sum(pi * np.outer(v, v.conj()) for pi, v in zip(p, vs))
    )
    lhs = reduce_state(mix, part, 1).matrix
    rhs = sum(pi * reduce_pure(v, part, 1).matrix for pi, v in zip(p, vs))
    assert np.abs(lhs - rhs).max() < 1e-12


def reduce_oracle(v, n, block_sites):
    """Index-summation partial trace of |v><v| onto the block."""
    d_a = 2 ** len(block_sites)
    rest = [s for s in range(n) if s not in block_sites]
    t = v.reshape([2] * n)
    out = np.zeros((d_a, d_a), dtype=complex)
    for a in range(d_a):
        for b in range(d_a):
            abits = [(a >> (len(block_sites) - 1 - i)) & 1 for i in range(len(block_sites))]
            bbits = [(b >> (len(block_sites) - 1 - i)) & 1 for i in range(len(block_sites))]
            for r in range(2 ** len(rest)):
                rbits = [(r >> (len(rest) - 1 - i)) & 1 for i in range(len(rest))]
                ia = [0] * n
                ib = [0] * n
                for s, bit in zip(block_sites, abits):
                    ia[s] = bit
                for s, bit in zip(block_sites, bbits):
                    ib[s] = bit
                for s, bit in zip(rest, rbits):
                    ia[s] = bit
                    ib[s] = bit
                out[a, b] += t[tuple(ia)] * np.conj(t[tuple(ib)])
    return out


def test_reduce_pure_matches_summation_oracle():
    lat = LatticeSpec(8)
    part = BlockPartition(lat, 2)
    v = rand_unit(256)
    for k in (0, 2):
        fast = reduce_pure(v, part, k).matrix
        slow = reduce_oracle(v, 8, list(part.sites(k)))
        assert np.abs(fast - slow).max() < 1e-12


def test_reduce_transition_traceless_and_adjoint():
    lat = LatticeSpec(4)
    part = BlockPartition(lat, 2)
    g = rng.normal(size=(16, 2)) + 1j * rng.normal(size=(16, 2))
    q, _ = np.linalg.qr(g)
    sij = reduce_transition(q[:, 0], q[:, 1], part, 0, 0, 1)
    sji = reduce_transition(q[:, 1], q[:, 0], part, 0, 1, 0)
    assert abs(sij.matrix.trace()) < 1e-10
    assert np.abs(sij.matrix.conj().T - sji.matrix).max() < 1e-10
    overlap = np.trace(sij.matrix @ sij.matrix.conj().T).real
    assert overlap >= -1e-12


def test_reduce_block_out_of_range():
    lat = LatticeSpec(4)
    part = BlockPartition(lat, 2)
    with pytest.raises(ValueError, match="out of range"):
        reduce_state(rand_density(16), part, 5)


def test_reduce_commutes_with_translation():
    # content moves +shift sites, so block k+1 content sits at block 1 after
    # translating by -k*N_A
    from ethlab.linalg import partial_trace

    lat = LatticeSpec(6)
    part = BlockPartition(lat, 2)
    x = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
    for k in range(part.block_count):
        shifted = translate(x, lat, -k * part.block_size)
        lhs = partial_trace(shifted, lat.site_dims, part.sites(0))
        rhs = partial_trace(x, lat.site_dims, part.sites(k))
        assert np.abs(lhs - rhs).max() < 1e-12


def test_reduce_weighted_matches_mixture():
    lat = LatticeSpec(4)
    part = BlockPartition(lat, 2)
    g = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
    q, _ = np.linalg.qr(g)
    w = rng.random(16)
    w /= w.sum()
    fast = reduce_weighted(q, w, lat, part.sites(1))
    slow = sum(wi * reduce_pure(q[:, i], part, 1).matrix for i, wi in enumerate(w))
    assert np.abs(fast - slow).max() < 1e-12


# ---------------------------------------------------------------- regularize

def test_regularize_full_rank_unchanged():
    rho = rand_density(4)
    out, flag = regularize(rho, 1e-12)
    assert not flag
    assert out is rho


def test_regularize_forces_floor():
    rho = DensityMatrix(np.diag([1.0, 0.0]).astype(complex))
    out, flag = regularize(rho, 1e-12)
    assert flag
    assert out.min_eigenvalue >= 1e-12
    w = np.linalg.eigvalsh(out.matrix)
    assert w[0] >= 1e-12 - 2 * 1e-15  # reconstruction slop at machine scale
    assert abs(out.matrix.trace() - 1) < 1e-12


def test_regularize_rank_deficient_audit():
    d = 6
    v = [rand_unit(d) for _ in range(3)]
    m = sum(np.outer(x, x.conj()) for x in v) / 3
    rho = DensityMatrix((m + m.conj().T) / 2)
    eps = 1e-12
    out, flag = regularize(rho, eps)
    assert flag
    assert out.min_eigenvalue >= eps  # the represented spectrum is floored
    w = np.linalg.eigvalsh(out.matrix)
    assert w[0] >= eps - d * 1e-15  # eigvalsh of the rebuilt matrix has
    assert abs(out.matrix.trace() - 1) < 1e-12  # absolute error ~ machine eps
    assert schatten_norm(out.matrix - rho.matrix, 1) <= 2 * d * eps * 1.01 + 1e-15


def test_regularize_rejects_nonpositive_eps():
    with pytest.raises(LinalgError, match="positive"):
        regularize(rand_density(2), 0.0)


# ---------------------------------------------------------------- embedding

def test_embed_on_block_matches_kron():
    lat = LatticeSpec(4)
    part = BlockPartition(lat, 2)
    op = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    lhs = embed_on_block(op, part, 1)
    rhs = np.kron(np.eye(4), op)
    assert np.abs(lhs - rhs).max() == 0.0
