"""Tests for banded multiplication operators and their closed forms."""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import solve_triangular

import banded_operators
from banded_operators import (
    BandedSymmetric,
    BandedUpper,
    banded_cholesky,
    banded_product,
    commutator_norm,
    condition_estimate,
    jac_cholesky,
    jac_D,
    jac_mult_closed_forms,
    jac_mult_ops,
    jac_Rinv_rows,
    jac_RSRinv,
    jac_S,
    sh_cholesky_R,
    sh_cholesky_recurrence,
    sh_D,
    sh_minv_entry,
    sh_minv_section,
    sh_mult_M,
    sh_products_recurrence,
    sh_RDRt,
    sh_RRt,
    upper_inverse_diagonals,
)
from connection_givens import compose_steps, jacobi_chain_sequences
from errors import DomainError, NotPositiveDefiniteError
from models import JacobiParams
from special_functions import eval_assoc_legendre_norm, gauss_jacobi_rule

PARAMS = [JacobiParams(alpha=a, beta=b) for a in (0.0, 0.5, 1.0, 2.0) for b in (0.0, 0.5, 1.0, 2.0)]


def _make_random_banded(size: int, half_bandwidth: int, seed: int = 0) -> BandedSymmetric:
    rng = np.random.default_rng(seed)
    diags = [rng.standard_normal(size - d) for d in range(half_bandwidth + 1)]
    return BandedSymmetric.from_diagonals(*diags, size=size)


def _relative(actual: np.ndarray, expected: np.ndarray) -> float:
    return float(np.max(np.abs(actual - expected) / np.maximum(np.abs(expected), 1e-300)))


# ── band storage ──

def test_from_dense_round_trip():
    """Band storage reproduces a dense symmetric band matrix."""
    A = _make_random_banded(9, 2)
    assert_allclose(BandedSymmetric.from_dense(A.to_dense(), 2).to_dense(), A.to_dense())


def test_section_and_small_sizes():
    """Sections keep the leading block; diagonals of tiny sections are empty, not errors."""
    A = _make_random_banded(10, 2)
    assert_allclose(A.section(4).to_dense(), A.to_dense()[:4, :4])
    tiny = A.section(1)
    assert tiny.diagonal(2).size == 0
    assert tiny.to_dense().shape == (1, 1)


def test_add_scale_shift():
    """Band arithmetic agrees with dense arithmetic."""
    A, B = _make_random_banded(8, 1, 1), _make_random_banded(8, 2, 2)
    assert_allclose((A + B).to_dense(), A.to_dense() + B.to_dense())
    assert_allclose(A.scaled(-3.0).to_dense(), -3.0 * A.to_dense())
    assert_allclose(A.shifted(2.5).to_dense(), A.to_dense() + 2.5 * np.eye(8))


def test_banded_product_of_commuting_tridiagonals():
    """The band product of a matrix with itself equals the dense square."""
    A = _make_random_banded(12, 1, 3)
    assert_allclose(banded_product(A, A).to_dense(), A.to_dense() @ A.to_dense(), atol=1e-14)


def test_upper_gram_and_outer():
    """R^T R and R diag(d) R^T agree with dense products."""
    rng = np.random.default_rng(4)
    R = BandedUpper.from_diagonals(rng.uniform(1, 2, 10), rng.standard_normal(9), rng.standard_normal(8), size=10)
    d = rng.uniform(0.5, 2.0, 10)
    dense = R.to_dense()
    assert_allclose(R.gram().to_dense(), dense.T @ dense, atol=1e-14)
    assert_allclose(R.outer(d).to_dense(), dense @ np.diag(d) @ dense.T, atol=1e-14)


def test_banded_cholesky_matches_dense():
    """Banded Cholesky reproduces A = R^T R."""
    A = _make_random_banded(16, 2, 5).shifted(20.0)
    R = banded_cholesky(A)
    assert_allclose(R.gram().to_dense(), A.to_dense(), atol=1e-12)


def test_banded_cholesky_names_the_node():
    """Loss of positivity raises with the caller's node label."""
    A = BandedSymmetric.from_diagonals(np.array([1.0, -1.0, 2.0]), np.zeros(2), size=3)
    with pytest.raises(NotPositiveDefiniteError) as exc_info:
        banded_cholesky(A, node="layer 3")
    assert exc_info.value.node == "layer 3"


def test_upper_inverse_diagonals_match_solve():
    """Back-substitution diagonals equal those of the dense inverse."""
    R = jac_cholesky(JacobiParams(alpha=1, beta=0.5), 20)
    inverse = solve_triangular(R.to_dense(), np.eye(20))
    diags = upper_inverse_diagonals(R, 4)
    for d in range(4):
        assert_allclose(diags[d, : 20 - d], np.diagonal(inverse, d), rtol=1e-12, atol=1e-13 * np.max(np.abs(inverse)))


# ── spherical harmonic operators ──

def test_sh_multiplication_entries():
    """a_1 = 2/3 and b_1 = -sqrt(4/45) for m = 0; a_1 = 2(m+1)/(2m+3) in general."""
    M = sh_mult_M(0, 4)
    assert_allclose(M.diagonal(0)[0], 2 / 3, rtol=1e-15)
    assert_allclose(M.diagonal(2)[0], -np.sqrt(4 / 45), rtol=1e-15)
    assert np.all(M.diagonal(1) == 0.0)
    for m in (1, 2, 5, 10):
        assert_allclose(sh_mult_M(m, 2).diagonal(0)[0], 2 * (m + 1) / (2 * m + 3), rtol=1e-14)


@pytest.mark.parametrize("m", [0, 1, 3])
def test_sh_multiplication_matches_quadrature(m):
    """Entries of 1 - x^2 multiplication equal quadrature inner products."""
    N = 10
    rule = gauss_jacobi_rule(N + m + 4, JacobiParams())
    f = np.array([eval_assoc_legendre_norm(l + m, m, rule.nodes) for l in range(N)])
    oracle = (f * (1 - rule.nodes**2) * rule.weights) @ f.T
    assert_allclose(sh_mult_M(m, N).to_dense(), oracle, atol=1e-13)


def test_sh_cholesky_corner_values():
    """c_1 = sqrt(2/3), e_1 = 4/5 and g_1 = 4/5 for m = 0."""
    assert_allclose(sh_cholesky_R(0, 3).diagonal(0)[0], np.sqrt(2 / 3), rtol=1e-15)
    assert_allclose(sh_RRt(0, 3).diagonal(0)[0], 4 / 5, rtol=1e-15)
    assert_allclose(sh_RDRt(0, 3).diagonal(0)[0], 4 / 5, rtol=1e-14)


@pytest.mark.parametrize("m", [0, 1, 2, 7, 30])
def test_sh_closed_forms_match_recurrences(m):
    """Closed-form c, d, e, f, g, h agree with the recurrence path to 1e-13."""
    N = 256
    R = sh_cholesky_R(m, N)
    R_rec = sh_cholesky_recurrence(m, N)
    assert _relative(R_rec.diagonal(0), R.diagonal(0)) <= 1e-13
    assert _relative(R_rec.diagonal(2), R.diagonal(2)) <= 1e-13
    RRt, RDRt = sh_products_recurrence(m, N)
    for rec, closed in ((RRt, sh_RRt(m, N)), (RDRt, sh_RDRt(m, N))):
        assert _relative(rec.diagonal(0), closed.diagonal(0)) <= 1e-13
        assert _relative(rec.diagonal(2), closed.diagonal(2)) <= 1e-13


def test_sh_cholesky_reproduces_multiplication():
    """R^T R = M and R D R^T matches its closed form."""
    m, N = 3, 40
    assert_allclose(sh_cholesky_R(m, N).gram().to_dense(), sh_mult_M(m, N).to_dense(), atol=1e-14)
    wide = sh_cholesky_R(m, N + 2).outer(sh_D(m, N + 2).entries).section(N)
    assert_allclose(wide.to_dense(), sh_RDRt(m, N).to_dense(), rtol=1e-13, atol=1e-12)


def test_sh_minv_entries():
    """Inverse multiplication: (0,0,1) = 3/2, odd parity is zero, order 0 diverges."""
    entry = sh_minv_entry(0, 0, 1)
    assert_allclose(entry.value, 1.5, rtol=1e-14)
    assert entry.sign == 1 and not entry.overflow
    assert sh_minv_entry(0, 1, 1).value == 0.0
    with pytest.raises(DomainError):
        sh_minv_entry(0, 0, 0)


def test_sh_minv_extreme_entries_stay_in_log_space():
    """Far off-diagonal entries at high order keep a finite log magnitude without raising."""
    entry = sh_minv_entry(0, 1000, 400)
    assert np.isfinite(entry.log_magnitude)
    assert entry.log_magnitude < -100
    assert entry.value >= 0.0 and not entry.overflow


@pytest.mark.parametrize("m", [1, 2, 4])
def test_sh_minv_inverts_multiplication(m):
    """M times its semiseparable inverse is the identity on interior rows."""
    N = 8
    product = sh_mult_M(m, N).to_dense() @ sh_minv_section(m, N).to_dense()
    assert np.max(np.abs(product[: N - 2] - np.eye(N)[: N - 2])) <= 1e-8


# ── weighted Jacobi operators ──

def test_jacobi_multiplication_corner_values():
    """Legendre: M1 off-diagonal 1/sqrt(3), M1 corner 1, and M1 + M2 = 2I."""
    ops = jac_mult_ops(JacobiParams(), 6)
    assert_allclose(ops.M1.diagonal(1)[0], 1 / np.sqrt(3), rtol=1e-15)
    assert_allclose(ops.M1.diagonal(0)[0], 1.0, rtol=1e-15)
    assert_allclose((ops.M1 + ops.M2).to_dense(), 2 * np.eye(6), atol=1e-15)


@pytest.mark.parametrize("p", PARAMS)
def test_jacobi_closed_forms_match_products(p):
    """M1 and M2 closed forms equal the x-recurrence operators."""
    N = 128
    ops = jac_mult_ops(p, N)
    M1, M2 = jac_mult_closed_forms(p, N)
    assert_allclose(M1.to_dense(), ops.M1.to_dense(), rtol=1e-13, atol=1e-15)
    assert_allclose(M2.to_dense(), ops.M2.to_dense(), rtol=1e-13, atol=1e-15)


def test_jacobi_products_are_pentadiagonal():
    """M, M+ and M- have half bandwidth 2 and match dense products on interior rows."""
    ops = jac_mult_ops(JacobiParams(alpha=1, beta=2), 20, closure="section")
    M1, M2 = ops.M1.to_dense(), ops.M2.to_dense()
    assert ops.M.half_bandwidth == 2
    assert_allclose(ops.M.to_dense(), M1 @ M2, atol=1e-14)
    assert_allclose(ops.Mplus.to_dense(), M1 @ M1, atol=1e-14)
    assert_allclose(ops.Mminus.to_dense(), M2 @ M2, atol=1e-14)


def test_jac_S_trivial_and_unit_jump():
    """Equal parameters give S = 0; (0,0) -> (2,2) gives S = M+ + M- - 4M."""
    p = JacobiParams(alpha=0.5, beta=1.0)
    assert np.all(jac_S(p, p, 10).to_dense() == 0.0)
    ops = jac_mult_ops(JacobiParams(), 10)
    expected = ops.Mplus.to_dense() + ops.Mminus.to_dense() - 4 * ops.M.to_dense()
    assert_allclose(jac_S(JacobiParams(), JacobiParams(alpha=2, beta=2), 10).to_dense(), expected, atol=1e-14)


def test_jac_S_rejects_odd_jump():
    """Parameter jumps must be non-negative even integers."""
    with pytest.raises(DomainError):
        jac_S(JacobiParams(), JacobiParams(alpha=1), 8)


def test_jacobi_eigenfunction_property():
    """(M D + S) u = lambda M u for exact connection columns, lambda = n(n + g + d + 1)."""
    low, high = JacobiParams(), JacobiParams(alpha=2, beta=2)
    N = 24
    ops = jac_mult_ops(low, N, closure="section")
    M = ops.M.to_dense()
    D = np.diag(jac_D(low, N).entries)
    S = jac_S(low, high, N, closure="section").to_dense()
    C = compose_steps(jacobi_chain_sequences(low, high, N))
    for n in range(6):
        u = np.zeros(N)
        u[: n + 3] = C[: n + 3, n]
        lam = n * (n + 2 + 2 + 1)
        residual = (M @ D + S) @ u - lam * M @ u
        assert np.linalg.norm(residual) <= 1e-9 * max(1.0, lam) * np.linalg.norm(u)


def test_jacobi_cholesky_corner_values():
    """Legendre: e_1 = sqrt(2/3), f_1 = 0, g_1 = -2/sqrt(30), R^-1 corner sqrt(6)/2."""
    R = jac_cholesky(JacobiParams(), 6)
    assert_allclose(R.diagonal(0)[0], np.sqrt(2 / 3), rtol=1e-15)
    assert R.diagonal(1)[0] == 0.0
    assert_allclose(R.diagonal(2)[0], -2 / np.sqrt(30), rtol=1e-14)
    assert_allclose(jac_Rinv_rows(JacobiParams(), 6)[0, 0], np.sqrt(6) / 2, rtol=1e-15)


@pytest.mark.parametrize("p", PARAMS)
def test_jacobi_cholesky_reproduces_M(p):
    """R^T R = M entrywise for N = 64."""
    N = 64
    assert_allclose(jac_cholesky(p, N).gram().to_dense(), jac_mult_ops(p, N).M.to_dense(), rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("p", PARAMS)
def test_jacobi_inverse_rows_match_back_substitution(p):
    """Closed-form R^-1 diagonals equal the back-substitution recurrence."""
    N = 256
    closed = jac_Rinv_rows(p, N)
    solved = upper_inverse_diagonals(jac_cholesky(p, N), 3)
    for d in range(3):
        keep = slice(0, N - d)
        assert_allclose(closed[d, keep], solved[d, keep], rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("low, high", [
    (JacobiParams(), JacobiParams(alpha=2, beta=2)),
    (JacobiParams(alpha=0.5, beta=1.0), JacobiParams(alpha=2.5, beta=1.0)),
    (JacobiParams(alpha=1.0, beta=0.0), JacobiParams(alpha=1.0, beta=2.0)),
])
def test_RSRinv_symmetric_pentadiagonal(low, high):
    """R S R^-1 equals R^-T S R^T and has half bandwidth 2 on N = 64 sections."""
    N = 64
    out = jac_RSRinv(low, high, N)
    S = jac_S(low, high, N, closure="section").to_dense()
    R = banded_cholesky(jac_mult_ops(low, N, "section").M).to_dense()
    reference = solve_triangular(R.T, S @ R.T, lower=True)
    scale = np.max(np.abs(S))
    assert np.max(np.abs(out.to_dense() - reference)) <= 1e-10 * scale
    assert np.max(np.abs(reference - reference.T)) <= 1e-10 * scale


def test_RSRinv_operator_closure_uses_closed_inverse(monkeypatch):
    """The operator closure builds its lower band from the closed-form R^-1 diagonals."""
    low, high = JacobiParams(alpha=0.5, beta=0.5), JacobiParams(alpha=2.5, beta=2.5)
    N = 40
    calls = []
    closed_rows = banded_operators.jac_Rinv_rows
    monkeypatch.setattr(banded_operators, "jac_Rinv_rows", lambda p, n: calls.append(n) or closed_rows(p, n))
    out = jac_RSRinv(low, high, N, closure="operator").to_dense()
    assert calls == [N + 2]
    R = jac_cholesky(low, N + 2).to_dense()
    S = jac_S(low, high, N + 2, "operator").to_dense()
    reference = (R @ S @ np.linalg.inv(R))[:N, :N]
    scale = np.max(np.abs(S))
    assert np.max(np.abs(np.tril(out) - np.tril(np.triu(reference, -2)))) <= 1e-10 * scale


def test_commutator_vanishes_on_interior():
    """M S - S M is zero on interior entries of operator sections."""
    low, high = JacobiParams(alpha=0.5, beta=0.5), JacobiParams(alpha=2.5, beta=2.5)
    N = 64
    M = jac_mult_ops(low, N).M
    S = jac_S(low, high, N)
    assert commutator_norm(M, S, N - 4) <= 1e-10 * np.max(np.abs(S.to_dense()))


def test_operators_positive_definite():
    """Leading sections of M, M1, M2 and R R^T have positive spectra."""
    ops = jac_mult_ops(JacobiParams(alpha=0.5, beta=1.0), 32)
    for op in (ops.M, ops.M1, ops.M2, sh_RRt(2, 32), sh_mult_M(0, 32)):
        assert np.min(np.linalg.eigvalsh(op.to_dense())) > 0


def test_condition_estimate_grows_modestly():
    """The Cholesky condition estimate is at least 1 and grows sub-quadratically."""
    small = condition_estimate(sh_cholesky_R(2, 32))
    large = condition_estimate(sh_cholesky_R(2, 128))
    assert 1.0 <= small < large < 16 * small
