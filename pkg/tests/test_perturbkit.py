import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockop import perturbkit as pk
from blockop.blockfact import assemble_block, block_resolvent, dense_block, m_factor, relative_bounds
from blockop.gridspace import SpaceTag, make_grid
from blockop.modelzoo import alpha_example, structural_zero_fixture
from blockop.opcore import Dense, Inverse, abs2, laplacian, operator_norm, rep_norm, scalar_multiplier, zero
from blockop.sectorscan import SweepSpec, sector_constants

SPEC = SweepSpec(rays=6, radii=12)


def _decoupled(g, sym=lambda xi: 1 + abs2(xi)):
    t = SpaceTag()
    op = scalar_multiplier(sym, t, t)
    return assemble_block(op, zero(t, t), zero(t, t), op, t, t, g)


def test_smallness_zero_coupling(grid16):
    s = pk.smallness_check(_decoupled(grid16), np.pi / 2, SPEC)
    assert s.sup1 == 0 and s.sup2 == 0 and s.neumann_admissible


def test_smallness_be_beyond_neumann(be16, grid16):
    s = pk.smallness_check(be16, np.pi / 2, SPEC)
    assert 0.9 < s.sup1 <= 1.0 and not s.neumann_admissible
    for lam in pk.sample_points(be16, np.pi / 2, SPEC):
        M1i = Inverse(m_factor(be16, lam).M1).rep(grid16)
        assert rep_norm(M1i, be16.x1_tag, be16.x1_tag).value <= 2.0 + 1e-12


def test_smallness_scaled_coupling(be16):
    s = pk.smallness_check(be16.scaled_coupling(0.3, 1.0), np.pi / 2, SPEC)
    assert s.sup1 == pytest.approx(0.3, rel=0.01) and s.neumann_admissible


def test_constants_examples():
    c = pk.perturbation_constants(1, 2, 2, 0)
    assert (c.R, c.epsilon0, c.nu0) == (1 / 16, 1 / 32, 0)
    assert pk.perturbation_constants(1, 1, 1, 0).threshold_L0 == 1
    c = pk.perturbation_constants(1, 2, 2, 1)
    assert c.nu0_prime == 1.5 and c.nu0 == 48


def test_constants_degenerate():
    c = pk.perturbation_constants(0, 2, 2, 1)
    assert c.status == "unconstrained" and np.isinf(c.R)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0, 10))
def test_constants_formulas(cD, NA, ND, L):
    c = pk.perturbation_constants(cD, NA, ND, L)
    R = 1 / (2 * cD * ND * NA * ND)
    assert c.R == pytest.approx(R, rel=1e-15)
    assert c.epsilon0 == pytest.approx(R / NA, rel=1e-15)
    nu_p = L / cD * (1 + 1 / ND)
    assert c.nu0_prime == pytest.approx(nu_p, rel=1e-15, abs=0)
    assert c.nu0 == pytest.approx(max(nu_p, L / R * (1 + NA)), rel=1e-15, abs=0)


def test_gh_be(be16):
    r = pk.gh_criterion(be16)
    assert np.max(np.abs(r.HG.data[1:, 0, 0] + 1)) <= 1e-12
    assert r.invertible and r.bound_inverse == pytest.approx(0.5, abs=1e-12)


def test_gh_zero_coupling(grid16):
    r = pk.gh_criterion(_decoupled(grid16))
    assert r.norm_HG == 0 and r.bound_inverse == pytest.approx(1.0)


def test_gh_singular_fixture():
    r = pk.gh_criterion(dense_block([[1.0]], [[1.0]], [[1.0]], [[1.0]]))
    assert r.norm_HG == pytest.approx(1.0) and not r.invertible


def test_gh_limit_sequence(be16):
    seq = pk.gh_limit_sequence(be16)
    assert all(a > b for a, b in zip(seq, seq[1:])) and seq[-1] < 0.01


def test_fractional_be_minus(be16):
    r = pk.fractional_relation_check(be16, 0.25, "minus")
    assert r.const_C_side == pytest.approx(1.0, abs=1e-12) and r.const_B_side == pytest.approx(1.0, abs=1e-12)


def test_fractional_unequal_orders_unstable():
    r = pk.fractional_relation_check(alpha_example(make_grid(1, 64), 2.0, "fractions"), 0.25, "plus")
    assert not (r.stable_B and r.stable_C)
    r1 = pk.fractional_relation_check(alpha_example(make_grid(1, 64), 1.0, "fractions"), 0.25, "plus")
    assert r1.stable_B and r1.stable_C


def test_fractional_zero_coupling(grid16):
    r = pk.fractional_relation_check(_decoupled(grid16), 0.25)
    assert r.const_B_side == 0 and r.const_C_side == 0


def test_moment_bounds():
    A = np.diag([1.0, 4.0, 9.0, 16.0])
    eps = 0.1
    assert pk.moment_bound(Dense(A), Dense(np.sqrt(A)), 0.5, eps).C_eps <= 1 / (4 * eps) + 1e-12
    Az = np.diag([1e-6, 1.0, 4.0])
    assert pk.moment_bound(Dense(Az), Dense(np.eye(3)), 0.5, eps).C_eps == pytest.approx(1.0, abs=1e-5)


def test_moment_bound_gradient_stable():
    from blockop.opcore import Multiplier
    vals = []
    for n in (16, 64):
        g = make_grid(1, n)
        grad = Multiplier(lambda xi: 1j * xi[0], 1, 1)
        vals.append(pk.moment_bound(1 - laplacian(), grad, 0.5, 0.1, grid=g).C_eps)
    assert np.isfinite(vals[1]) and vals[1] == pytest.approx(vals[0], rel=0.05)


def test_dissipativity_examples(be16, grid16):
    d = pk.dissipativity_check(_decoupled(grid16), samples=500)
    assert d.min_exact >= 1 - 1e-10 and d.min_sampled >= 1 - 1e-10
    r = pk.dissipativity_check(be16, samples=500)
    assert r.cancellation <= 1e-12 and min(r.min_exact, r.min_sampled) >= 0
    bad = pk.dissipativity_check(_decoupled(grid16, lambda xi: -np.ones(xi.shape[1])), samples=100)
    assert bad.min_exact < 0


def test_j_symmetry(be16, grid16):
    assert pk.j_symmetry_check(be16) <= 1e-12
    assert pk.j_symmetry_check(_decoupled(grid16)) == 0
    t = SpaceTag()
    b = assemble_block(1 - laplacian(), scalar_multiplier(lambda xi: 2 * np.ones(xi.shape[1]), t, t), zero(t, t),
                       1 - laplacian(), t, t, grid16)
    assert pk.j_symmetry_check(b) >= 0.5


def test_structural_zero_coupling():
    g = make_grid(1, 16)
    b = structural_zero_fixture(g)
    for lam in (-1.0, -3 + 2j, 5j):
        assert np.all(m_factor(b, lam).coupling1.rep(g).data == 0)
    rb = relative_bounds(b)
    assert rb.c_D > pk.perturbation_constants(max(rb.c_D, 1e-300), 1, 1, rb.L).epsilon0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 0.8))
def test_neumann_certificate_soundness(seed, s):
    rng = np.random.default_rng(seed)
    A = np.diag(rng.uniform(0.5, 3, 3))
    D = np.diag(rng.uniform(0.5, 3, 2))
    B, C = rng.standard_normal((3, 2)), rng.standard_normal((2, 3))
    spec = SweepSpec(rays=4, radii=8, scale=1.0)
    base = pk.smallness_check(dense_block(A, B, C, D), np.pi / 2, spec)
    b = dense_block(A, B, C * (s / base.sup1), D)
    chk = pk.smallness_check(b, np.pi / 2, spec)
    assert chk.sup1 == pytest.approx(s, rel=1e-9)
    for lam in pk.sample_points(b, np.pi / 2, spec):
        block_resolvent(b, lam, "neumann")
        n = operator_norm(Inverse(m_factor(b, lam).M1)).value
        assert n <= 1.05 / (1 - chk.sup1)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_epsilon0_scaling_makes_coupling_small(seed):
    # bounded couplings: use the exact pair c_D = ||B D^{-1}||, L = 0
    rng = np.random.default_rng(seed)
    A = np.diag(rng.uniform(0.5, 3, 2))
    D = np.diag(rng.uniform(0.5, 3, 2))
    B, C = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
    spec = SweepSpec(rays=4, radii=10)
    NA = sector_constants(Dense(A), np.pi / 2, spec).N_S
    ND = sector_constants(Dense(D), np.pi / 2, spec).N_S
    c = pk.perturbation_constants(np.linalg.norm(B @ np.linalg.inv(D), 2), NA, ND, 0.0)
    rel_C = np.linalg.norm(C @ np.linalg.inv(A), 2)
    b = dense_block(A, B, C * (0.9 * c.epsilon0 / rel_C), D).shifted(c.nu0)
    assert pk.smallness_check(b, np.pi / 2, spec).neumann_admissible
