"""2x2 block operator matrices, the coupling factorization and its derived operators."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .gridspace import FreqGrid, GridVector, SpaceTag, product_tag
from .opcore import (Block, Dense, Inverse, Multiplier, Operator, Rep, Resolvent, SingularResolvent,
                     TagMismatch, apply, identity, zero)


class NotInvertible(ArithmeticError):
    pass


class SeriesDiverged(ArithmeticError):
    pass


class UnsupportedKernel(ValueError):
    pass


class SymbolMismatch(ValueError):
    pass


class Retag(Operator):
    """Same action as the wrapped operator, different space tags."""

    def __init__(self, op: Operator, in_tag: SpaceTag, out_tag: SpaceTag):
        if in_tag.components != op.in_tag.components or out_tag.components != op.out_tag.components:
            raise TagMismatch("retagging must preserve the number of components")
        self.op, self.in_tag, self.out_tag, self.order = op, in_tag, out_tag, op.order

    def leaves(self):
        yield from self.op.leaves()

    def rep(self, grid=None):
        return self.op.rep(grid)

    def symbol(self, xi):
        return self.op.symbol(xi)


class Fixed(Operator):
    """Operator known only through its evaluation on one grid."""

    def __init__(self, rep: Rep, in_tag: SpaceTag, out_tag: SpaceTag):
        self._rep, self.in_tag, self.out_tag = rep, in_tag, out_tag

    def rep(self, grid=None):
        if self._rep.kind == "mult" and grid is not None and grid != self._rep.grid:
            raise ValueError("fixed operator evaluated on a different grid")
        return self._rep


@dataclass
class RelativeBoundReport:
    c_A: float
    c_D: float
    L: float
    method: str
    sample_count: int = 0


@dataclass
class BlockOperator:
    A: Operator
    B: Operator
    C: Operator
    D: Operator
    x1_tag: SpaceTag
    x2_tag: SpaceTag
    grid: FreqGrid | None = None
    dominance: RelativeBoundReport | None = None
    name: str = ""
    notes: list[str] = field(default_factory=list)
    spec: object | None = None

    @property
    def tag(self) -> SpaceTag:
        return product_tag(self.x1_tag, self.x2_tag)

    @property
    def dense(self) -> bool:
        return not any(isinstance(l, Multiplier) for b in (self.A, self.B, self.C, self.D) for l in b.leaves())

    @property
    def is_symbol(self) -> bool:
        return all(b.is_symbol for b in (self.A, self.B, self.C, self.D))

    @property
    def full(self) -> Operator:
        return Block(self.A, self.B, self.C, self.D, self.tag, self.tag)

    @property
    def diagonal(self) -> Operator:
        return Block(self.A, self._zero(self.x2_tag, self.x1_tag), self._zero(self.x1_tag, self.x2_tag),
                     self.D, self.tag, self.tag)

    @property
    def offdiagonal(self) -> Operator:
        return Block(self._zero(self.x1_tag, self.x1_tag), self.B, self.C,
                     self._zero(self.x2_tag, self.x2_tag), self.tag, self.tag)

    def _zero(self, tin, tout):
        return zero(tin, tout, dense=self.dense)

    def _id(self, tag):
        return identity(tag, dense=self.dense)

    def with_p(self, p: float) -> "BlockOperator":
        t1, t2 = self.x1_tag.with_p(p), self.x2_tag.with_p(p)
        return replace(self, A=Retag(self.A, t1, t1), B=Retag(self.B, t2, t1), C=Retag(self.C, t1, t2),
                       D=Retag(self.D, t2, t2), x1_tag=t1, x2_tag=t2, dominance=None)

    def scaled_coupling(self, b: float = 1.0, c: float = 1.0) -> "BlockOperator":
        return replace(self, B=Retag(b * self.B, self.x2_tag, self.x1_tag),
                       C=Retag(c * self.C, self.x1_tag, self.x2_tag), dominance=None)

    def shifted(self, nu: float) -> "BlockOperator":
        """nu + block: shifts both diagonal entries."""
        return replace(self, A=Retag(nu + self.A, self.x1_tag, self.x1_tag),
                       D=Retag(nu + self.D, self.x2_tag, self.x2_tag), dominance=None)


def assemble_block(A: Operator, B: Operator, C: Operator, D: Operator, x1_tag: SpaceTag | None = None,
                   x2_tag: SpaceTag | None = None, grid: FreqGrid | None = None, name: str = "") -> BlockOperator:
    x1_tag = x1_tag or A.in_tag
    x2_tag = x2_tag or D.in_tag
    expected = {"A": (x1_tag, x1_tag), "B": (x2_tag, x1_tag), "C": (x1_tag, x2_tag), "D": (x2_tag, x2_tag)}
    for label, op in zip("ABCD", (A, B, C, D)):
        tin, tout = expected[label]
        if op.in_tag != tin:
            raise TagMismatch(f"block entry {label}: input tag {op.in_tag} does not match {tin}")
        if op.out_tag != tout:
            raise TagMismatch(f"block entry {label}: output tag {op.out_tag} does not match {tout}")
    return BlockOperator(A, B, C, D, x1_tag, x2_tag, grid, name=name)


def dense_block(A, B, C, D, name: str = "") -> BlockOperator:
    A, B, C, D = (np.atleast_2d(np.asarray(x, dtype=complex)) for x in (A, B, C, D))
    t1, t2 = SpaceTag(components=A.shape[0]), SpaceTag(components=D.shape[0])
    return assemble_block(Dense(A, t1, t1), Dense(B, t2, t1), Dense(C, t1, t2), Dense(D, t2, t2), t1, t2,
                          name=name)


def random_dense_block(rng, n1: int, n2: int, coupling: float = 1.0) -> BlockOperator:
    def rnd(r, c):
        return rng.standard_normal((r, c)) + 1j * rng.standard_normal((r, c))
    return dense_block(rnd(n1, n1), coupling * rnd(n1, n2), coupling * rnd(n2, n1), rnd(n2, n2))


# relative bounds

def _rel_exact(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Per-mode (c, L) with ||num y|| <= c ||den y|| + L ||y||."""
    pinv = np.linalg.pinv(den, rcond=1e-12)
    k = den.shape[-1]
    kernel_part = num @ (np.eye(k) - pinv @ den)
    leak = np.linalg.norm(kernel_part, 2, axis=(1, 2))
    scale = np.maximum(np.linalg.norm(num, 2, axis=(1, 2)), 1e-300)
    clean = leak <= 1e-12 * scale
    ratio = np.linalg.norm(num @ pinv, 2, axis=(1, 2))
    c = float(np.max(ratio[clean], initial=0.0))
    L = float(np.max(np.linalg.norm(num, 2, axis=(1, 2))[~clean], initial=0.0))
    return c, L


def _vec_norm(v, tag: SpaceTag) -> float:
    from .gridspace import norm
    if isinstance(v, GridVector):
        return norm(v, tag)
    return float(np.sum(np.abs(v) ** tag.p) ** (1 / tag.p))


def _random_vector(block: BlockOperator, comps: int, rng):
    if block.grid is None:
        return rng.standard_normal(comps) + 1j * rng.standard_normal(comps)
    kind = rng.integers(3)
    if kind == 0:
        v = GridVector.random(block.grid, comps, rng, decay=float(rng.uniform(0, 4)))
    elif kind == 1:
        k = rng.integers(-block.grid.n // 2, block.grid.n // 2, size=block.grid.d)
        v = GridVector.mode(block.grid, k, comps, int(rng.integers(comps)))
    else:
        v = GridVector.random(block.grid, comps, rng)
    return v


def _fit_envelope(num, den, base) -> tuple[float, float]:
    num, den, base = map(np.asarray, (num, den, base))
    X = np.stack([den, base], axis=1)
    coef, *_ = np.linalg.lstsq(X, num, rcond=None)
    c, L = max(coef[0], 0.0), max(coef[1], 0.0)
    slack = (num - c * den - L * base) / np.maximum(base, 1e-300)
    L += max(0.0, float(np.max(slack)))
    return float(c), float(L)


def relative_bounds(block: BlockOperator, samples: int = 200, seed: int = 0) -> RelativeBoundReport:
    p2 = block.x1_tag.p == 2 and block.x2_tag.p == 2
    if block.is_symbol and p2 and block.grid is not None:
        from .opcore import weighted_symbol
        g = block.grid
        ws = {k: weighted_symbol(getattr(block, k).rep(g), getattr(block, k).in_tag, getattr(block, k).out_tag)
              for k in "ABCD"}
        cA, LA = _rel_exact(ws["C"], ws["A"])
        cD, LD = _rel_exact(ws["B"], ws["D"])
        rep = RelativeBoundReport(cA, cD, max(LA, LD), "exact-symbol", g.size)
    else:
        rng = np.random.default_rng(seed)
        rows = {"A": [], "D": []}
        for _ in range(samples):
            x = _random_vector(block, block.x1_tag.components, rng)
            rows["A"].append((_vec_norm(apply(block.C, x), block.x2_tag), _vec_norm(apply(block.A, x), block.x1_tag),
                              _vec_norm(x, block.x1_tag)))
            y = _random_vector(block, block.x2_tag.components, rng)
            rows["D"].append((_vec_norm(apply(block.B, y), block.x1_tag), _vec_norm(apply(block.D, y), block.x2_tag),
                              _vec_norm(y, block.x2_tag)))
        cA, LA = _fit_envelope(*zip(*rows["A"]))
        cD, LD = _fit_envelope(*zip(*rows["D"]))
        rep = RelativeBoundReport(cA, cD, max(LA, LD), "sampled", samples)
    block.dominance = rep
    return rep


# factorization

@dataclass
class FactorBundle:
    lam: complex
    RA: Operator
    RD: Operator
    M: Operator
    M1: Operator
    M2: Operator
    S1: Operator
    S2: Operator
    N1: Operator
    N2: Operator
    coupling1: Operator
    coupling2: Operator


def _check(op: Operator, grid, label: str):
    try:
        op.rep(grid)
    except SingularResolvent as e:
        raise SingularResolvent(f"{label}: {e}", point=e.point, cond=e.cond, label=label) from None


def m_factor(block: BlockOperator, lam: complex, check: bool = True) -> FactorBundle:
    lam = complex(lam)
    A, B, C, D = block.A, block.B, block.C, block.D
    RA, RD = Resolvent(A, lam, "A"), Resolvent(D, lam, "D")
    if check:
        _check(RA, block.grid, "A")
        _check(RD, block.grid, "D")
    I1, I2 = block._id(block.x1_tag), block._id(block.x2_tag)
    K1 = B @ RD @ C @ RA
    K2 = C @ RA @ B @ RD
    M = Block(I1, -(B @ RD), -(C @ RA), I2, block.tag, block.tag)
    return FactorBundle(
        lam=lam, RA=RA, RD=RD, M=M,
        M1=I1 - K1, M2=I2 - K2,
        S1=(lam - A) - B @ RD @ C, S2=(lam - D) - C @ RA @ B,
        N1=I1 - RA @ B @ RD @ C, N2=I2 - RD @ C @ RA @ B,
        coupling1=K1, coupling2=K2,
    )


def minv_representations(block: BlockOperator, fb: FactorBundle) -> list[Operator]:
    """The three block forms of M(lam)^{-1}."""
    B, C = block.B, block.C
    I1, I2 = block._id(block.x1_tag), block._id(block.x2_tag)
    Z12, Z21 = block._zero(block.x2_tag, block.x1_tag), block._zero(block.x1_tag, block.x2_tag)
    M1i, M2i = Inverse(fb.M1, "M1"), Inverse(fb.M2, "M2")
    t = block.tag
    r1 = Block(M1i, M1i @ B @ fb.RD, M2i @ C @ fb.RA, M2i, t, t)
    r2 = Block(I1, B @ fb.RD @ M2i, Z21, M2i, t, t) @ Block(I1, Z12, C @ fb.RA, I2, t, t)
    r3 = Block(M1i, Z12, C @ fb.RA @ M1i, I2, t, t) @ Block(I1, B @ fb.RD, Z21, I2, t, t)
    return [r1, r2, r3]


def row_reductions(block: BlockOperator, fb: FactorBundle) -> list[Operator]:
    """Both triangular factorizations of M(lam)."""
    B, C = block.B, block.C
    I1, I2 = block._id(block.x1_tag), block._id(block.x2_tag)
    Z12, Z21 = block._zero(block.x2_tag, block.x1_tag), block._zero(block.x1_tag, block.x2_tag)
    t = block.tag
    f1 = Block(I1, Z12, -(C @ fb.RA), I2, t, t) @ Block(I1, -(B @ fb.RD), Z21, fb.M2, t, t)
    f2 = Block(I1, -(B @ fb.RD), Z21, I2, t, t) @ Block(fb.M1, Z12, -(C @ fb.RA), I2, t, t)
    return [f1, f2]


def _rep_norm(rep: Rep) -> float:
    if rep.kind == "mult":
        return float(np.max(np.linalg.norm(rep.data, 2, axis=(1, 2)), initial=0.0))
    return float(np.linalg.norm(rep.data, 2)) if rep.data.size else 0.0


def _identity_like(rep: Rep) -> np.ndarray:
    k = rep.data.shape[-1]
    return np.broadcast_to(np.eye(k), rep.data.shape).copy() if rep.kind == "mult" else np.eye(k, dtype=complex)


def neumann_inverse(K: Operator, grid, tol: float = 1e-12, max_terms: int = 500) -> tuple[Rep, list[float]]:
    """sum_n K^n, stopping once the geometric tail estimate falls below tol times the partial sum norm."""
    k = K.rep(grid)
    total = _identity_like(k)
    term = _identity_like(k)
    norms = []
    prev = 1.0
    for _ in range(max_terms):
        term = term @ k.data
        tn = _rep_norm(Rep(k.kind, term, grid))
        norms.append(tn)
        total = total + term
        q = tn / prev if prev > 0 else 0.0
        prev = tn
        tail = tn * q / (1 - q) if q < 1 else np.inf
        if tn == 0 or tail <= tol * max(1.0, _rep_norm(Rep(k.kind, total, grid))):
            return Rep(k.kind, total, grid), norms
        if len(norms) >= 3 and norms[-1] >= norms[-2] >= norms[-3]:
            raise SeriesDiverged(f"Neumann terms stopped decreasing at norm {tn:.3e}")
    raise SeriesDiverged(f"no convergence within {max_terms} terms")


def block_resolvent(block: BlockOperator, lam: complex, method: str = "factorized",
                    tol: float = 1e-12, max_terms: int = 500) -> Operator:
    lam = complex(lam)
    g = block.grid
    t = block.tag
    if method == "direct":
        R = Resolvent(block.full, lam, "block")
        R.rep(g)
        return R
    fb = m_factor(block, lam)
    diag_res = Block(fb.RA, block._zero(block.x2_tag, block.x1_tag), block._zero(block.x1_tag, block.x2_tag),
                     fb.RD, t, t)
    if method == "factorized":
        minv = minv_representations(block, fb)[0]
        try:
            out = diag_res @ minv
            out.rep(g)
        except SingularResolvent as e:
            raise NotInvertible(f"M(lam) not invertible at lam={lam}: {e}") from None
        return out
    if method == "neumann":
        rep, _ = neumann_inverse(fb.coupling1, g, tol, max_terms)
        M1i = Fixed(rep, block.x1_tag, block.x1_tag)
        I2 = block._id(block.x2_tag)
        Z12, Z21 = block._zero(block.x2_tag, block.x1_tag), block._zero(block.x1_tag, block.x2_tag)
        minv = Block(M1i, Z12, block.C @ fb.RA @ M1i, I2, t, t) @ Block(block._id(block.x1_tag),
                                                                         block.B @ fb.RD, Z21, I2, t, t)
        return diag_res @ minv
    raise ValueError(f"unknown resolvent method {method!r}")


def _flat(v) -> np.ndarray:
    return v.freq.ravel() if isinstance(v, GridVector) else np.asarray(v).ravel()


def factorization_residual(block: BlockOperator, lam: complex, v, M: Operator | None = None) -> float:
    lam = complex(lam)
    fb = m_factor(block, lam)
    lhs = apply(lam - block.full, v)
    rhs = apply(M if M is not None else fb.M, apply(lam - block.diagonal, v))
    a, b = _flat(lhs), _flat(rhs)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))


def engel_residual(block: BlockOperator, lam: complex, v) -> float:
    """(lam - A) = (lam - D_diag) N(lam) with N = diag(N1, N2) plus off-diagonal resolvent couplings."""
    lam = complex(lam)
    fb = m_factor(block, lam)
    t = block.tag
    N = Block(block._id(block.x1_tag), -(fb.RA @ block.B), -(fb.RD @ block.C), block._id(block.x2_tag), t, t)
    lhs = apply(lam - block.full, v)
    rhs = apply(lam - block.diagonal, apply(N, v))
    a, b = _flat(lhs), _flat(rhs)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))


# kernel splitting

@dataclass
class KernelSplit:
    A_I: BlockOperator
    A_N: np.ndarray
    kernel_components: list[int]


def _masked(op: Operator, rows: list[int], cols: list[int]) -> Multiplier:
    def fn(xi):
        m = np.array(op.symbol(xi))
        at0 = np.all(xi == 0, axis=0)
        for r in rows:
            m[at0, r, :] = 0
        for c in cols:
            m[at0, :, c] = 0
        return m
    return Multiplier(fn, op.out_tag.components, op.in_tag.components, op.in_tag, op.out_tag, op.order)


def kernel_split(block: BlockOperator) -> KernelSplit:
    if not block.is_symbol or block.grid is None:
        raise UnsupportedKernel("kernel splitting needs multiplier blocks on a grid")
    g = block.grid
    m1 = block.x1_tag.components
    kern = []
    for label, op, offset in (("A", block.A, 0), ("D", block.D, m1)):
        sym = op.rep(g).data
        s = np.linalg.svd(sym, compute_uv=False)
        scale = max(float(np.max(s)), 1.0)
        sing = s[:, -1] <= 1e-12 * scale
        if sing[1:].any():
            raise UnsupportedKernel(f"{label} is singular away from the zero mode")
        if sing[0]:
            if np.max(np.abs(sym[0])) > 1e-12 * scale:
                raise UnsupportedKernel(f"kernel of {label} is not the full zero-mode subspace")
            kern.extend(range(offset, offset + sym.shape[1]))
    full0 = block.full.rep(g).data[0]
    other = [j for j in range(full0.shape[0]) if j not in kern]
    if kern and other:
        if np.max(np.abs(full0[np.ix_(kern, other)]), initial=0) > 0 or \
                np.max(np.abs(full0[np.ix_(other, kern)]), initial=0) > 0:
            raise UnsupportedKernel("zero-mode couplings mix the kernel with the range")
    A_N = np.array(full0[np.ix_(kern, kern)])
    k1 = [j for j in kern if j < m1]
    k2 = [j - m1 for j in kern if j >= m1]
    A_I = BlockOperator(_masked(block.A, k1, k1), _masked(block.B, k1, k2), _masked(block.C, k2, k1),
                        _masked(block.D, k2, k2), block.x1_tag, block.x2_tag, g, name=block.name + "[I]")
    return KernelSplit(A_I, A_N, kern)


def reassembled_apply(split: KernelSplit, v: GridVector) -> GridVector:
    out = apply(split.A_I.full, v)
    if split.kernel_components:
        k = split.kernel_components
        out.freq[k, 0] += split.A_N @ v.freq[k, 0]
    return out


# consistency across integrability scales

def _same_symbols(b1: BlockOperator, b2: BlockOperator) -> bool:
    g = b1.grid
    for k in "ABCD":
        r1, r2 = getattr(b1, k).rep(g), getattr(b2, k).rep(g)
        if r1.kind != r2.kind or r1.data.shape != r2.data.shape or not np.array_equal(r1.data, r2.data):
            return False
    return True


def consistency_check(b1: BlockOperator, b2: BlockOperator, lam: complex, v) -> float:
    if b1.grid != b2.grid or not _same_symbols(b1, b2):
        raise SymbolMismatch("blocks do not share their underlying symbols")
    f1, f2 = m_factor(b1, lam), m_factor(b2, lam)
    a, b = _flat(apply(f1.M1, v)), _flat(apply(f2.M1, v))
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))


def resolvent_consistency(b1: BlockOperator, b2: BlockOperator, lam: complex, v) -> float:
    if b1.grid != b2.grid or not _same_symbols(b1, b2):
        raise SymbolMismatch("blocks do not share their underlying symbols")
    a = _flat(apply(block_resolvent(b1, lam), v))
    b = _flat(apply(block_resolvent(b2, lam), v))
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-300))
