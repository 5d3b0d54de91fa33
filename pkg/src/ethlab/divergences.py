"""Variances, fluctuations, relative entropies, recovery maps, moments.

Central objects:

* quantum variance V(rho, A) = Tr(rho A A-dag) - |Tr rho A|^2 and the
  eigenbasis fluctuation Delta(rho, A), with Delta <= V;
* the Umegaki relative entropy S(sigma||rho) = Tr sigma (ln sigma - ln rho)
  and the matrix-geometric relative entropy
  S_hat(sigma||rho) = Tr[sigma ln(rho^-1 sigma)], computed in three
  algebraically equivalent forms that serve as mutual cross-checks
  (S_hat >= S >= ||sigma - rho||_1^2 / 2);
* the rescaling map J_rho^a(X) = rho^a X rho^a, the formal observable
  O = J_rho^{-1/2}(sigma) whose variance first-order-expands S_hat, and the
  recovery map R = J_rho^{1/2} o J_{rho_block}^{-1/2} that pulls block
  quantities to the full lattice;
* the translation-averaged formal observable, its exact
  total = local + cross variance decomposition over block pairs, moments
  of O - 1, and the log-series diagnostics built from them.

States entering an inverse are regularized to a strictly positive floor
(default 1e-12); callers that must disclose clamping call
``states.regularize`` themselves and pass ``eps=None`` to forbid silent
repair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import (
    LinalgError,
    SpectralDecomposition,
    dagger,
    hermitian_eig,
    hermiticity_defect,
    matrix_function,
    partial_trace,
    schatten_norm,
)
from .models import check_translation_invariance
from .states import (
    BlockPartition,
    DensityMatrix,
    TransitionMatrix,
    embed_on_block,
    reduce_state,
    regularize,
)

__all__ = [
    "FormalObservable",
    "DivergenceReport",
    "SeriesDiagnostics",
    "SupportError",
    "quantum_variance",
    "fluctuation",
    "distinguishability",
    "von_neumann_entropy",
    "umegaki",
    "bs_entropy",
    "bs_entropy_forms",
    "rescale_map",
    "formal_observable",
    "petz_recovery",
    "pullup_identity_residual",
    "average_formal_observable",
    "variance_decomposition",
    "moment",
    "bs_series_residual",
    "mutual_information",
    "entropic_uncertainty",
    "entropic_uncertainty_log_form",
]

DEFAULT_EPS = 1e-12
_WEIGHT_FLOOR = 1e-14  # spectral weights below this do not contribute to traces


class SupportError(LinalgError):
    """sigma has weight outside the support of rho and repair is forbidden."""


@dataclass(frozen=True)
class FormalObservable:
    """J_rho^{-1/2}(sigma): the operator whose variance expands the divergence.

    ``kind`` is "diagonal" (sigma a state, <O> = 1) or "offdiagonal"
    (sigma traceless, <O> = 0); ``block`` records where it acts
    (a block index or "averaged").
    """

    matrix: np.ndarray
    kind: str
    block: int | str = 0
    source: str = ""

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class DivergenceReport:
    """One audited state pair: divergences, distances, and inequality slacks."""

    umegaki: float
    bs_form1: float
    bs_form2: float
    bs_form3: float
    trace_distance: float  # full Schatten-1 norm of the difference
    variance: float
    pinsker_slack: float
    bs_vs_umegaki_slack: float
    hoelder_slack: float
    regularization_flag: bool


@dataclass(frozen=True)
class SeriesDiagnostics:
    """Spectral value vs truncated log-series of the divergence."""

    exact: float
    truncated: float
    residual: float
    converged: bool
    hs_distance_to_identity: float


def _matrix(a) -> np.ndarray:
    if isinstance(a, (DensityMatrix, TransitionMatrix, FormalObservable)):
        return a.matrix
    return np.asarray(a, dtype=complex)


def _check_same_dim(x: np.ndarray, y: np.ndarray, who: str) -> None:
    if x.shape != y.shape:
        raise LinalgError(f"{who}: dimension mismatch {x.shape} vs {y.shape}")


def quantum_variance(rho, a) -> float:
    """V(rho, A) = Tr(rho A A-dag) - |Tr(rho A)|^2, valid for any operator A."""
    r = _matrix(rho)
    m = _matrix(a)
    _check_same_dim(r, m, "quantum_variance")
    second = np.vdot(m, r @ m).real  # Tr[rho A A-dag]
    mean = np.trace(r @ m)
    return float(second - abs(mean) ** 2)


def fluctuation(rho: DensityMatrix, basis: SpectralDecomposition, a) -> float:
    """Delta(rho, A): variance of the eigenbasis diagonal of A.

    ``basis`` must diagonalize rho (checked to 1e-10 per unit dimension);
    Delta = sum_j p_j |<j|A|j>|^2 - |Tr rho A|^2 and satisfies
    0 <= Delta <= V(rho, A).
    """
    r = _matrix(rho)
    recon = basis.reconstruct()
    defect = float(np.abs(recon - r).max())
    if defect > 1e-10 * r.shape[0]:
        raise LinalgError(
            f"fluctuation: basis does not diagonalize rho (defect {defect:.3e})"
        )
    m = _matrix(a)
    _check_same_dim(r, m, "fluctuation")
    u = basis.eigenvectors
    diag = np.einsum("ji,jk,ki->i", u.conj(), m, u, optimize=True)
    p = basis.eigenvalues
    mean = p @ diag
    return float((p @ np.abs(diag) ** 2).real - abs(mean) ** 2)


def distinguishability(tau, rho, a) -> float:
    """|Tr[(tau - rho) A]|^2, bounded by ||tau - rho||_1^2 ||A||_inf^2."""
    t, r, m = _matrix(tau), _matrix(rho), _matrix(a)
    _check_same_dim(t, r, "distinguishability")
    _check_same_dim(t, m, "distinguishability")
    return float(abs(np.trace((t - r) @ m)) ** 2)


def _xlogx(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0.0, None)
    out = np.zeros_like(w)
    pos = w > 0
    out[pos] = w[pos] * np.log(w[pos])
    return out


def von_neumann_entropy(rho) -> float:
    """-Tr rho ln rho in nats; zero eigenvalues contribute nothing."""
    w = np.linalg.eigvalsh(_matrix(rho))
    return float(-np.sum(_xlogx(w)))


def _positive_state(rho: DensityMatrix, eps: float | None, who: str) -> DensityMatrix:
    if eps is None:
        if rho.min_eigenvalue < DEFAULT_EPS:
            raise SupportError(
                f"{who}: rho is singular (min eigenvalue "
                f"{rho.min_eigenvalue:.3e}) and regularization is disabled"
            )
        return rho
    out, _ = regularize(rho, eps)
    return out


def umegaki(sigma: DensityMatrix, rho: DensityMatrix,
            eps: float | None = DEFAULT_EPS) -> float:
    """S(sigma||rho) = Tr sigma ln sigma - Tr sigma ln rho, in nats.

    With ``eps`` set, rho is regularized to strict positivity first.  With
    ``eps=None`` a singular rho is accepted only if sigma carries no weight
    (beyond 1e-10) on its null space; otherwise a SupportError reports the
    offending weight.
    """
    _check_same_dim(sigma.matrix, rho.matrix, "umegaki")
    if eps is not None:
        rho, _ = regularize(rho, eps)
    s_spec = hermitian_eig(sigma.matrix)
    ent = float(np.sum(_xlogx(s_spec.eigenvalues)))
    r_spec = hermitian_eig(rho.matrix)
    w = r_spec.eigenvalues
    u = r_spec.eigenvectors
    sig_w = np.einsum("ki,kl,li->i", u.conj(), sigma.matrix, u, optimize=True).real
    null = w <= _WEIGHT_FLOOR
    if null.any():
        leak = float(np.clip(sig_w[null], 0.0, None).sum())
        if leak > 1e-10:
            raise SupportError(
                f"umegaki: sigma carries weight {leak:.3e} outside the "
                f"support of rho"
            )
    cross = float(np.sum(sig_w[~null] * np.log(w[~null])))
    return float(ent - cross)


_LEAK_TOL = 1e-10  # spectral weight above this on a nonpositive direction is an error


def _bs_core(rho: DensityMatrix, eps: float | None):
    """rho^(1/2), rho^(-1/2), rho^(-1) of the (regularized) reference state."""
    rho = _positive_state(rho, eps, "bs_entropy")
    spec = hermitian_eig(rho.matrix)
    w = spec.eigenvalues
    if w[0] <= 0:
        raise SupportError(
            f"bs_entropy: rho has nonpositive eigenvalue {w[0]:.3e}"
        )
    u = spec.eigenvectors
    r_half = (u * np.sqrt(w)) @ u.conj().T
    r_inv_half = (u * (w**-0.5)) @ u.conj().T
    r_inv = (u * (1.0 / w)) @ u.conj().T
    return rho, r_half, r_inv_half, r_inv


def _weighted_log_trace(core: np.ndarray, weight_source: np.ndarray, who: str) -> float:
    """sum_k ln(lambda_k(core)) <v_k|weight_source|v_k>, skipping null weights."""
    spec = hermitian_eig((core + dagger(core)) / 2)
    w = np.einsum(
        "ki,kl,li->i", spec.eigenvectors.conj(), weight_source,
        spec.eigenvectors, optimize=True,
    ).real
    out = 0.0
    for lam, wv in zip(spec.eigenvalues, w):
        if abs(wv) <= _WEIGHT_FLOOR:
            continue
        if lam <= 0:
            if abs(wv) <= _LEAK_TOL:
                continue  # numerically null direction
            raise SupportError(
                f"{who}: weight {wv:.3e} on nonpositive eigenvalue {lam:.3e}"
            )
        out += wv * np.log(lam)
    return float(out)


def bs_entropy(
    sigma: DensityMatrix, rho: DensityMatrix, form: int = 3,
    eps: float | None = DEFAULT_EPS,
) -> float:
    """Tr[sigma ln(rho^-1 sigma)] along one of three equivalent routes.

    Form 1 diagonalizes sigma^1/2 rho^-1 sigma^1/2 and weights its log
    spectrum with sigma.  Forms 2 and 3 diagonalize
    X = rho^-1/2 sigma rho^-1/2: form 2 realizes the non-Hermitian logarithm
    in Tr[sigma ln(rho^-1 sigma)] through the similarity
    ln(rho^-1 sigma) = rho^-1/2 ln(X) rho^1/2 (same trace functional) and
    weights ln X with rho^1/2 sigma rho^-1/2; form 3 evaluates
    Tr[rho X ln X] directly with x ln x -> 0 at 0.
    """
    if form not in (1, 2, 3):
        raise ValueError(f"form must be 1, 2 or 3, got {form}")
    sig_m = _matrix(sigma)
    _check_same_dim(sig_m, rho.matrix, "bs_entropy")
    rho, r_half, r_inv_half, r_inv = _bs_core(rho, eps)
    if form == 1:
        s_spec = hermitian_eig(sig_m)
        s_half = (
            s_spec.eigenvectors * np.sqrt(np.clip(s_spec.eigenvalues, 0, None))
        ) @ s_spec.eigenvectors.conj().T
        y = s_half @ r_inv @ s_half
        return _weighted_log_trace(y, sig_m, "bs_entropy form 1")
    x = r_inv_half @ sig_m @ r_inv_half
    if form == 2:
        b = r_half @ sig_m @ r_inv_half
        return _weighted_log_trace(x, b, "bs_entropy form 2")
    x_spec = hermitian_eig((x + dagger(x)) / 2)
    g = _xlogx(x_spec.eigenvalues)
    w3 = (x_spec.eigenvectors * g) @ x_spec.eigenvectors.conj().T
    return float(np.trace(rho.matrix @ w3).real)


def bs_entropy_forms(
    sigma: DensityMatrix, rho: DensityMatrix, eps: float | None = DEFAULT_EPS
) -> tuple[float, float, float]:
    """All three routes of the divergence; they agree to eigensolver noise."""
    return tuple(bs_entropy(sigma, rho, form=f, eps=eps) for f in (1, 2, 3))


def rescale_map(rho: DensityMatrix, alpha: float, x, eps: float | None = DEFAULT_EPS) -> np.ndarray:
    """J_rho^alpha(X) = rho^alpha X rho^alpha.

    Negative alpha requires strict positivity (regularized under ``eps``);
    positive fractional powers clip the PSD tail at zero.
    """
    m = _matrix(x)
    _check_same_dim(rho.matrix, m, "rescale_map")
    if alpha == 0:
        return m.copy()
    if alpha < 0:
        rho = _positive_state(rho, eps, "rescale_map")
        spec = hermitian_eig(rho.matrix)
        r_a = matrix_function(
            spec, lambda w: w**alpha, domain_guard=lambda w: w > 0, name="power"
        )
    else:
        spec = hermitian_eig(rho.matrix)
        r_a = matrix_function(spec, lambda w: np.clip(w, 0.0, None) ** alpha)
    return r_a @ m @ r_a


def formal_observable(
    rho_block: DensityMatrix, sigma_block, eps: float | None = DEFAULT_EPS,
    block: int | str = 0,
) -> FormalObservable:
    """O = J_rho^{-1/2}(sigma); <O> = 1 for states, 0 for transition matrices."""
    sig_m = _matrix(sigma_block)
    _check_same_dim(rho_block.matrix, sig_m, "formal_observable")
    out = rescale_map(rho_block, -0.5, sig_m, eps)
    kind = "offdiagonal" if isinstance(sigma_block, TransitionMatrix) else "diagonal"
    if kind == "diagonal":
        out = (out + dagger(out)) / 2
    return FormalObservable(matrix=out, kind=kind, block=block)


def petz_recovery(
    rho_full: DensityMatrix, partition: BlockPartition, k: int, sigma_block,
    eps: float | None = DEFAULT_EPS,
) -> np.ndarray:
    """Recovery map J_rho^{1/2} o J_{rho_Bk}^{-1/2} applied to a block operator.

    The rescaled block operator is embedded as (operator x identity on the
    complement) before the outer rescaling; the result is trace preserving
    and maps PSD to PSD.
    """
    rho_reg = _positive_state(rho_full, eps, "petz_recovery")
    rho_k = reduce_state(rho_reg, partition, k)
    sig_m = _matrix(sigma_block)
    if sig_m.shape != (partition.block_dim,) * 2:
        raise LinalgError(
            f"petz_recovery: block operator shape {sig_m.shape} != "
            f"block dim {partition.block_dim}"
        )
    inner = rescale_map(rho_k, -0.5, sig_m, eps)
    lifted = embed_on_block(inner, partition, k)
    spec = hermitian_eig(rho_reg.matrix)
    r_half = matrix_function(spec, np.sqrt, domain_guard=lambda w: w >= 0, name="sqrt")
    return r_half @ lifted @ r_half


def pullup_identity_residual(
    rho_full: DensityMatrix, partition: BlockPartition, k: int, sigma_block,
    eps: float | None = DEFAULT_EPS,
) -> float:
    """|S_hat(sigma||rho_Bk) - S_hat(R(sigma)||rho_full)|.

    Exact in exact arithmetic; both sides are evaluated against the same
    regularized global state so the residual probes numerics only.
    """
    rho_reg = _positive_state(rho_full, eps, "pullup_identity_residual")
    rho_k = reduce_state(rho_reg, partition, k)
    sig_m = _matrix(sigma_block)
    local = bs_entropy(DensityMatrix(sig_m), rho_k, form=3, eps=eps)
    recovered = petz_recovery(rho_reg, partition, k, sigma_block, eps)
    recovered = (recovered + dagger(recovered)) / 2
    glob = bs_entropy(
        DensityMatrix(recovered / recovered.trace().real),
        rho_reg, form=3, eps=eps,
    )
    return float(abs(local - glob))


def average_formal_observable(
    rho_full: DensityMatrix, partition: BlockPartition, sigma_on_block1,
    eps: float | None = DEFAULT_EPS, invariance_tol: float = 1e-8,
) -> FormalObservable:
    """(1/C) sum_k J_{rho_Bk}^{-1/2}(sigma copy on block k), embedded and averaged.

    Requires a translation invariant global state; the translational copy of
    sigma on block k is the same block matrix placed on block k's sites.
    """
    defect = check_translation_invariance(rho_full.matrix, partition.lattice)
    if defect > invariance_tol:
        raise LinalgError(
            f"average_formal_observable: state not translation invariant "
            f"(defect {defect:.3e} > {invariance_tol:.1e})"
        )
    sig_m = _matrix(sigma_on_block1)
    c = partition.block_count
    dim = partition.lattice.dim
    out = np.zeros((dim, dim), dtype=complex)
    for k in range(c):
        rho_k = reduce_state(rho_full, partition, k)
        o_k = rescale_map(rho_k, -0.5, sig_m, eps)
        out += embed_on_block(o_k, partition, k)
    out /= c
    kind = "offdiagonal" if isinstance(sigma_on_block1, TransitionMatrix) else "diagonal"
    if kind == "diagonal":
        out = (out + dagger(out)) / 2
    return FormalObservable(matrix=out, kind=kind, block="averaged")


def variance_decomposition(
    rho_full: DensityMatrix, partition: BlockPartition, o_block,
) -> tuple[float, float, float]:
    """Split V(rho, O_avg) into a local and a correlation (cross) part.

    total is the direct variance of the averaged embedded observable;
    local = (1/C^2) sum_k V(rho, O_k) = V(rho, O_1)/C;
    cross = (1/C^2) sum_{k != l} Tr[(O x O-dag)(rho_kl - rho_k x rho_l)]
    over ordered block pairs.  total = local + cross exactly.
    """
    o_m = _matrix(o_block)
    if o_m.shape != (partition.block_dim,) * 2:
        raise LinalgError(
            f"variance_decomposition: block operator shape {o_m.shape} != "
            f"block dim {partition.block_dim}"
        )
    lat = partition.lattice
    c = partition.block_count
    embeds = [embed_on_block(o_m, partition, k) for k in range(c)]
    avg = sum(embeds) / c
    total = quantum_variance(rho_full, avg)
    local = sum(quantum_variance(rho_full, e) for e in embeds) / c**2
    cross = 0.0
    singles = [
        partial_trace(rho_full.matrix, lat.site_dims, partition.sites(k))
        for k in range(c)
    ]
    for k in range(c):
        for l in range(c):
            if k == l:
                continue
            keep = partition.sites(k) + partition.sites(l)
            pair = partial_trace(rho_full.matrix, lat.site_dims, keep)
            if l < k:  # partial_trace orders kept sites ascending
                op = np.kron(dagger(o_m), o_m)
            else:
                op = np.kron(o_m, dagger(o_m))
            corr = pair - np.kron(
                singles[min(k, l)], singles[max(k, l)]
            )
            cross += np.trace(op @ corr).real / c**2
    return float(total), float(local), float(cross)


def moment(rho, o, m: int) -> float:
    """m-th central-style moment Tr[rho (O - 1)^m] for Hermitian O."""
    if m < 1:
        raise ValueError(f"moment order must be >= 1, got {m}")
    o_m = _matrix(o)
    if hermiticity_defect(o_m) > 1e-10 * o_m.shape[0]:
        raise LinalgError("moment: observable must be Hermitian (diagonal type)")
    r = _matrix(rho)
    _check_same_dim(r, o_m, "moment")
    spec = hermitian_eig(o_m)
    q = np.einsum(
        "ki,kl,li->i", spec.eigenvectors.conj(), r, spec.eigenvectors,
        optimize=True,
    ).real
    return float(q @ (spec.eigenvalues - 1.0) ** m)


def bs_series_residual(rho, o, n_max: int = 6) -> SeriesDiagnostics:
    """Spectral divergence Tr[rho O ln O] vs its truncated moment series.

    The series is V/2 + sum_{n=3}^{n_max} (-1)^n M^(n) / ((n-1) n); it
    converges when ||O - 1||_2 <= 1, which is reported as the flag.  Purely
    diagnostic: nothing is asserted when the flag is false.
    """
    o_m = _matrix(o)
    if hermiticity_defect(o_m) > 1e-10 * o_m.shape[0]:
        raise LinalgError("bs_series_residual: observable must be Hermitian")
    r = _matrix(rho)
    _check_same_dim(r, o_m, "bs_series_residual")
    spec = hermitian_eig(o_m)
    q = np.einsum(
        "ki,kl,li->i", spec.eigenvectors.conj(), r, spec.eigenvectors,
        optimize=True,
    ).real
    u = spec.eigenvalues - 1.0
    exact = float(q @ _xlogx(spec.eigenvalues))
    truncated = 0.5 * float(q @ u**2)
    for n in range(3, n_max + 1):
        truncated += (-1.0) ** n / ((n - 1) * n) * float(q @ u**n)
    hs = schatten_norm(o_m - np.eye(o_m.shape[0]), 2)
    return SeriesDiagnostics(
        exact=exact,
        truncated=float(truncated),
        residual=float(abs(exact - truncated)),
        converged=bool(hs <= 1.0),
        hs_distance_to_identity=float(hs),
    )


def mutual_information(
    rho_joint: DensityMatrix, site_dims, part_a,
) -> float:
    """I(A:C) = S(A) + S(C) - S(AC) = S(rho_AC || rho_A x rho_C), in nats."""
    dims = [int(d) for d in site_dims]
    n = len(dims)
    part_a = sorted(set(int(s) for s in part_a))
    part_c = [s for s in range(n) if s not in part_a]
    if not part_a or not part_c:
        raise LinalgError("mutual_information: split must leave both parts nonempty")
    m = rho_joint.matrix
    rho_a = partial_trace(m, dims, part_a)
    rho_c = partial_trace(m, dims, part_c)
    return float(
        von_neumann_entropy(rho_a)
        + von_neumann_entropy(rho_c)
        - von_neumann_entropy(m)
    )


def entropic_uncertainty(probs, states, rho: DensityMatrix,
                         eps: float | None = DEFAULT_EPS) -> float:
    """sum_i p_i S_hat(rho_i || rho) over a measurement decomposition of rho."""
    total = 0.0
    for p, st in zip(probs, states):
        if p <= _WEIGHT_FLOOR:
            continue
        total += p * bs_entropy(st, rho, form=3, eps=eps)
    return float(total)


def entropic_uncertainty_log_form(probs, states, rho: DensityMatrix,
                                  eps: float | None = DEFAULT_EPS) -> float:
    """Tr[rho ln(sum_i J_{rho_i}^{1/2}(rho^-1))].

    Valid as an identity with ``entropic_uncertainty`` only when the rho_i
    are mutually orthogonal (e.g. rank-1 measurement branches); exposed as a
    diagnostic for that case.
    """
    rho_reg = _positive_state(rho, eps, "entropic_uncertainty_log_form")
    spec = hermitian_eig(rho_reg.matrix)
    r_inv = matrix_function(spec, lambda w: 1.0 / w,
                            domain_guard=lambda w: w > 0, name="inverse")
    acc = np.zeros_like(r_inv)
    for p, st in zip(probs, states):
        if p <= _WEIGHT_FLOOR:
            continue
        acc += rescale_map(st, 0.5, r_inv, eps=None)
    acc_spec = hermitian_eig((acc + dagger(acc)) / 2)
    w = np.einsum(
        "ki,kl,li->i", acc_spec.eigenvectors.conj(), rho_reg.matrix,
        acc_spec.eigenvectors, optimize=True,
    ).real
    out = 0.0
    for av, wv in zip(acc_spec.eigenvalues, w):
        if abs(wv) <= _WEIGHT_FLOOR:
            continue
        if av <= 0:
            raise SupportError(
                f"entropic_uncertainty_log_form: weight {wv:.3e} on "
                f"nonpositive eigenvalue {av:.3e}"
            )
        out += wv * np.log(av)
    return float(out)
