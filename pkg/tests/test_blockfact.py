import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockop.blockfact import (NotInvertible, SeriesDiverged, SymbolMismatch, assemble_block, block_resolvent,
                               consistency_check, dense_block, engel_residual, factorization_residual, kernel_split,
                               m_factor, minv_representations, random_dense_block, reassembled_apply, relative_bounds,
                               resolvent_consistency, row_reductions)
from blockop.gridspace import GridVector, SpaceTag
from blockop.modelzoo import alpha_example, keller_segel
from blockop.opcore import Dense, TagMismatch, apply, laplacian, zero
from conftest import admissible_lambdas


def _decoupled(g):
    t = SpaceTag()
    return assemble_block(1 - laplacian(), zero(t, t), zero(t, t), 1 - laplacian(), t, t, g)


def test_decoupled_block(grid16):
    b = _decoupled(grid16)
    assert np.all(b.offdiagonal.rep(grid16).data == 0)
    fb = m_factor(b, -1.0)
    assert np.allclose(fb.M1.rep(grid16).data, 1) and np.allclose(fb.M2.rep(grid16).data, 1)


def test_wrong_tag_names_entry():
    t1, t2 = SpaceTag(), SpaceTag(s=1.0)
    with pytest.raises(TagMismatch, match="B"):
        assemble_block(laplacian(1, t1, t1), laplacian(1, t1, t1), laplacian(1, t1, t2), laplacian(1, t2, t2),
                       t1, t2)


def test_be_tags_and_bounds(be16):
    assert be16.x1_tag.s == -1 and be16.x1_tag.homogeneous and be16.x2_tag.s == 0
    r = relative_bounds(be16)
    assert r.c_A == pytest.approx(1.0) and r.c_D == pytest.approx(1.0) and r.L == pytest.approx(0.0, abs=1e-12)


def test_relative_bounds_zero_coupling(grid16):
    r = relative_bounds(_decoupled(grid16))
    assert (r.c_A, r.c_D, r.L) == (0, 0, 0)


def test_relative_bounds_alpha_example(grid16):
    assert relative_bounds(alpha_example(grid16, 2.0)).c_D == pytest.approx(1.0)


def test_be_m1_symbol(be16, grid16):
    M1 = m_factor(be16, -1.0).M1.rep(grid16).data[:, 0, 0]
    assert M1[grid16.index_of(1)] == pytest.approx(1.25, abs=1e-14)
    s = grid16.abs2
    assert np.allclose(M1[1:], 1 + s[1:] ** 2 / (1 + s[1:]) ** 2, atol=1e-14)


def test_resolvent_zero_coupling_is_diagonal(grid16):
    b = _decoupled(grid16)
    R = block_resolvent(b, -2.0).rep(grid16).data
    expect = 1 / (-2.0 - (1 + grid16.abs2))
    assert np.allclose(R[:, 0, 0], expect) and np.allclose(R[:, 1, 1], expect)
    assert np.allclose(R[:, 0, 1], 0) and np.allclose(R[:, 1, 0], 0)


def test_not_invertible_at_eigenvalue():
    b = dense_block([[1.0]], [[1.0]], [[1.0]], [[1.0]])  # eigenvalues 0 and 2
    with pytest.raises(NotInvertible):
        block_resolvent(b, 2.0)


def test_neumann_diverges_for_large_coupling():
    b = dense_block([[1.0]], [[3.0]], [[3.0]], [[1.0]])
    with pytest.raises(SeriesDiverged):
        block_resolvent(b, -1.0, "neumann")


def test_neumann_matches_direct():
    b = dense_block(np.diag([1.0, 2.0]), 0.3 * np.ones((2, 1)), 0.3 * np.ones((1, 2)), [[1.5]])
    x = np.arange(3) + 1j
    a = apply(block_resolvent(b, -1 + 1j, "neumann", tol=1e-14), x)
    d = apply(block_resolvent(b, -1 + 1j, "direct"), x)
    assert np.linalg.norm(a - d) <= 1e-12 * np.linalg.norm(d)


def test_factorization_on_be(be16, grid16):
    v = GridVector.random(grid16, 2, 0)
    assert factorization_residual(be16, -1 + 2j, v) <= 1e-10


def test_corrupted_factor_is_detected():
    rng = np.random.default_rng(1)
    b = random_dense_block(rng, 3, 2)
    fb = m_factor(b, -2.0)
    eps = 1e-3
    bad = fb.M + Dense(eps * np.eye(5))
    x = rng.standard_normal(5)
    r = factorization_residual(b, -2.0, x, M=bad)
    assert 1e-5 < r < 1e-1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_dense_identities(seed):
    rng = np.random.default_rng(seed)
    n1, n2 = (int(k) for k in rng.integers(1, 6, 2))
    b = random_dense_block(rng, n1, n2)
    lam = admissible_lambdas(rng, 1, 3.0)[0]
    x = rng.standard_normal(n1 + n2) + 1j * rng.standard_normal(n1 + n2)
    try:
        fb = m_factor(b, lam)
        reps = [apply(M, x) for M in minv_representations(b, fb)]
        rows = [apply(M, x) for M in row_reductions(b, fb)]
    except (NotInvertible, ArithmeticError):
        return
    assert factorization_residual(b, lam, x) <= 1e-10
    assert engel_residual(b, lam, x) <= 1e-10
    Mx = apply(fb.M, x)
    for r in rows:
        assert np.linalg.norm(r - Mx) <= 1e-10 * np.linalg.norm(Mx)
    for r in reps[1:]:
        assert np.linalg.norm(r - reps[0]) <= 1e-10 * max(np.linalg.norm(reps[0]), 1.0) * np.linalg.cond(fb.M.rep().data)
    f = apply(block_resolvent(b, lam), x)
    d = apply(block_resolvent(b, lam, "direct"), x)
    assert np.linalg.norm(f - d) <= 1e-8 * np.linalg.norm(d)


def test_kernel_split_decoupled_laplacians(grid16):
    t = SpaceTag()
    b = assemble_block(-laplacian(), zero(t, t), zero(t, t), -laplacian(), t, t, grid16)
    s = kernel_split(b)
    assert s.kernel_components == [0, 1]
    assert np.array_equal(s.A_N, np.zeros((2, 2)))


def test_kernel_split_injective_block(grid16):
    s = kernel_split(_decoupled(grid16))
    assert s.kernel_components == [] and s.A_N.size == 0


def test_kernel_split_keller_segel(grid16):
    b = keller_segel(grid16, z=1.0, form="neumann")
    s = kernel_split(b)
    assert s.A_N.shape == (2, 2)
    assert np.allclose(np.triu(s.A_N), 0)
    for seed in range(4):
        v = GridVector.random(grid16, 2, seed)
        a, r = apply(b.full, v).freq, reassembled_apply(s, v).freq
        assert np.linalg.norm(a - r) <= 1e-12 * np.linalg.norm(a)


def test_consistency_across_p(be16, grid16):
    v1 = GridVector.random(grid16, 1, 0)
    v = GridVector.random(grid16, 2, 0)
    b4 = be16.with_p(4.0)
    assert consistency_check(be16, b4, -1.0, v1) <= 1e-12
    assert resolvent_consistency(be16, b4, -1.0, v) <= 1e-12


def test_consistency_rejects_other_symbols(grid16):
    a, b = alpha_example(grid16, 1.0), alpha_example(grid16, 2.0)
    with pytest.raises(SymbolMismatch):
        consistency_check(a, b, -1.0, GridVector.random(grid16, 1, 0))
