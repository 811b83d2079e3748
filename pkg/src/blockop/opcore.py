"""Linear operators as matrix-valued Fourier symbols, dense matrices, or expression trees."""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .gridspace import FreqGrid, GridVector, SpaceTag, make_grid

DENSE_LIMIT = 4096
COND_GUARD = 1e12
SINGULAR_RTOL = 1e-12


class SingularResolvent(ArithmeticError):
    def __init__(self, msg, point=None, cond=None, label=None):
        super().__init__(msg)
        self.point = point
        self.cond = cond
        self.label = label


class BranchCut(ArithmeticError):
    pass


class NonNormalSymbol(ArithmeticError):
    pass


class TagMismatch(ValueError):
    pass


class SizeGuard(ValueError):
    pass


@dataclass
class Rep:
    """Evaluated operator: 'mult' holds (N, m_out, m_in) symbol values, 'dense' a matrix."""

    kind: str
    data: np.ndarray
    grid: FreqGrid | None = None

    @property
    def shape(self) -> tuple[int, int]:
        if self.kind == "mult":
            return self.data.shape[1], self.data.shape[2]
        return self.data.shape


def densify(rep: Rep) -> np.ndarray:
    if rep.kind == "dense":
        return rep.data
    m = rep.data
    N, mo, mi = m.shape
    if mo * N > DENSE_LIMIT or mi * N > DENSE_LIMIT:
        raise SizeGuard(f"dense materialization of size {mo * N}x{mi * N} exceeds {DENSE_LIMIT}")
    out = np.zeros((mo * N, mi * N), dtype=complex)
    k = np.arange(N)
    for a in range(mo):
        for b in range(mi):
            out[a * N + k, b * N + k] = m[:, a, b]
    return out


def _pair(x: Rep, y: Rep) -> tuple[Rep, Rep]:
    if x.kind == y.kind:
        return x, y
    return Rep("dense", densify(x)), Rep("dense", densify(y))


def _inv_batch(m: np.ndarray, xi: np.ndarray | None, label: str | None, scale=None) -> np.ndarray:
    """Pointwise inverse of (N, k, k) matrices, raising at singular lattice points."""
    s = np.linalg.svd(m, compute_uv=False)
    smin, smax = s[:, -1], s[:, 0]
    ref = np.maximum(smax, 1.0) if scale is None else np.maximum(scale, smax)
    bad = smin <= SINGULAR_RTOL * ref
    if np.any(bad):
        j = int(np.argmax(bad))
        pt = None if xi is None else tuple(int(v) for v in xi[:, j])
        raise SingularResolvent(f"singular symbol at lattice point {pt}" + (f" ({label})" if label else ""),
                                point=pt, label=label)
    return np.linalg.inv(m)


def _inv_dense(M: np.ndarray, label: str | None = None) -> np.ndarray:
    if not np.all(np.isfinite(M)):
        raise SingularResolvent("non-finite matrix", label=label)
    c = np.linalg.cond(M)
    if not np.isfinite(c) or c > COND_GUARD:
        raise SingularResolvent(f"condition number {c:.3e} above guard" + (f" ({label})" if label else ""),
                                cond=c, label=label)
    lu = sla.lu_factor(M)
    return sla.lu_solve(lu, np.eye(M.shape[0], dtype=complex))


class Operator:
    """Base class; subclasses implement rep(grid) and, for symbol trees, symbol(xi)."""

    in_tag: SpaceTag
    out_tag: SpaceTag
    order: float = 0.0

    def rep(self, grid: FreqGrid | None = None) -> Rep:
        raise NotImplementedError

    def symbol(self, xi: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no pointwise symbol")

    @property
    def is_symbol(self) -> bool:
        return all(isinstance(l, Multiplier) for l in self.leaves())

    def leaves(self):
        yield self

    # algebra
    def __add__(self, other):
        if np.isscalar(other):
            return Shift(complex(other), self)
        return Sum(self, other)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if np.isscalar(other):
            return Shift(-complex(other), self)
        return Sum(self, Scale(-1.0, other))

    def __rsub__(self, other):
        return Shift(complex(other), Scale(-1.0, self))

    def __neg__(self):
        return Scale(-1.0, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return Scale(complex(other), self)
        return Product(self, other)

    def __rmul__(self, other):
        return Scale(complex(other), self)

    def __matmul__(self, other):
        return Product(self, other)


class Multiplier(Operator):
    """Fourier multiplier with symbol xi -> (K, m_out, m_in); xi has shape (d, K)."""

    def __init__(self, symbol: Callable, m_out: int = 1, m_in: int | None = None,
                 in_tag: SpaceTag | None = None, out_tag: SpaceTag | None = None,
                 order: float = 0.0, name: str = ""):
        self._fn = symbol
        self.m_out = m_out
        self.m_in = m_out if m_in is None else m_in
        self.in_tag = in_tag or SpaceTag(components=self.m_in)
        self.out_tag = out_tag or SpaceTag(components=self.m_out)
        if self.in_tag.components != self.m_in or self.out_tag.components != self.m_out:
            raise TagMismatch(f"symbol shape {self.m_out}x{self.m_in} does not match tags")
        self.order = order
        self.name = name
        self._cache: dict[FreqGrid, np.ndarray] = {}
        self._lock = threading.Lock()

    def symbol(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        val = np.asarray(self._fn(xi), dtype=complex)
        K = xi.shape[1]
        if val.ndim == 0:
            val = np.full(K, val)
        if val.ndim == 1:
            if self.m_out != self.m_in:
                raise TagMismatch("scalar symbol requires a square multiplier")
            val = val[:, None, None] * np.eye(self.m_out)
        return np.broadcast_to(val, (K, self.m_out, self.m_in))

    def rep(self, grid=None) -> Rep:
        if grid is None:
            raise ValueError(f"multiplier {self.name or ''} needs a grid")
        with self._lock:
            if grid not in self._cache:
                val = np.array(self.symbol(grid.xi))
                val.setflags(write=False)
                self._cache[grid] = val
            return Rep("mult", self._cache[grid], grid)


def scalar_multiplier(fn: Callable, tag_in: SpaceTag | None = None, tag_out: SpaceTag | None = None,
                      components: int = 1, order: float = 0.0, name: str = "") -> Multiplier:
    """Multiplier fn(xi) * I acting componentwise."""
    return Multiplier(lambda xi: fn(xi), components, components, tag_in, tag_out, order, name)


def abs2(xi: np.ndarray) -> np.ndarray:
    return np.sum(xi ** 2, axis=0)


def laplacian(components: int = 1, tag_in=None, tag_out=None) -> Multiplier:
    """Delta, symbol -|xi|^2."""
    return scalar_multiplier(lambda xi: -abs2(xi), tag_in, tag_out, components, 2.0, "laplacian")


class Dense(Operator):
    def __init__(self, matrix, in_tag: SpaceTag | None = None, out_tag: SpaceTag | None = None,
                 order: float = 0.0, name: str = ""):
        self.matrix = np.array(np.atleast_2d(matrix), dtype=complex)
        self.matrix.setflags(write=False)
        r, c = self.matrix.shape
        self.in_tag = in_tag or SpaceTag(components=c)
        self.out_tag = out_tag or SpaceTag(components=r)
        self.order = order
        self.name = name

    def rep(self, grid=None) -> Rep:
        return Rep("dense", self.matrix, grid)


def identity(tag: SpaceTag, dense: bool = False) -> Operator:
    if dense:
        return Dense(np.eye(tag.components), tag, tag)
    return Multiplier(lambda xi: np.ones(xi.shape[1]), tag.components, tag.components, tag, tag, 0.0, "I")


def zero(in_tag: SpaceTag, out_tag: SpaceTag, dense: bool = False) -> Operator:
    if dense:
        return Dense(np.zeros((out_tag.components, in_tag.components)), in_tag, out_tag)
    mo, mi = out_tag.components, in_tag.components
    return Multiplier(lambda xi: np.zeros((xi.shape[1], mo, mi)), mo, mi, in_tag, out_tag, 0.0, "0")


class Composite(Operator):
    children: tuple[Operator, ...] = ()

    def leaves(self):
        for c in self.children:
            yield from c.leaves()


class Sum(Composite):
    def __init__(self, a: Operator, b: Operator):
        if a.in_tag.components != b.in_tag.components or a.out_tag.components != b.out_tag.components:
            raise TagMismatch("sum of operators with different shapes")
        self.children = (a, b)
        self.in_tag, self.out_tag = a.in_tag, a.out_tag
        self.order = max(a.order, b.order)

    def rep(self, grid=None):
        x, y = _pair(self.children[0].rep(grid), self.children[1].rep(grid))
        return Rep(x.kind, x.data + y.data, grid)

    def symbol(self, xi):
        return self.children[0].symbol(xi) + self.children[1].symbol(xi)


class Product(Composite):
    """Composition a o b."""

    def __init__(self, a: Operator, b: Operator):
        if a.in_tag.components != b.out_tag.components:
            raise TagMismatch(f"cannot compose: {a.in_tag.components} inputs vs {b.out_tag.components} outputs")
        self.children = (a, b)
        self.in_tag, self.out_tag = b.in_tag, a.out_tag
        self.order = a.order + b.order

    def rep(self, grid=None):
        x, y = _pair(self.children[0].rep(grid), self.children[1].rep(grid))
        return Rep(x.kind, x.data @ y.data, grid)

    def symbol(self, xi):
        return self.children[0].symbol(xi) @ self.children[1].symbol(xi)


class Scale(Composite):
    def __init__(self, c: complex, a: Operator):
        self.c = c
        self.children = (a,)
        self.in_tag, self.out_tag, self.order = a.in_tag, a.out_tag, a.order

    def rep(self, grid=None):
        x = self.children[0].rep(grid)
        return Rep(x.kind, self.c * x.data, grid)

    def symbol(self, xi):
        return self.c * self.children[0].symbol(xi)


def _add_identity(data: np.ndarray, kind: str, c: complex) -> np.ndarray:
    n = data.shape[-1]
    if data.shape[-2] != n:
        raise TagMismatch("scalar shift of a non-square operator")
    return data + c * np.eye(n)


class Shift(Composite):
    """c*I + a."""

    def __init__(self, c: complex, a: Operator):
        self.c = c
        self.children = (a,)
        self.in_tag, self.out_tag, self.order = a.in_tag, a.out_tag, a.order

    def rep(self, grid=None):
        x = self.children[0].rep(grid)
        return Rep(x.kind, _add_identity(x.data, x.kind, self.c), grid)

    def symbol(self, xi):
        return _add_identity(self.children[0].symbol(xi), "mult", self.c)


class Inverse(Composite):
    def __init__(self, a: Operator, label: str | None = None):
        self.children = (a,)
        self.label = label
        self.in_tag, self.out_tag, self.order = a.out_tag, a.in_tag, -a.order

    def rep(self, grid=None):
        x = self.children[0].rep(grid)
        if x.kind == "mult":
            return Rep("mult", _inv_batch(x.data, grid.xi, self.label), grid)
        return Rep("dense", _inv_dense(x.data, self.label), grid)

    def symbol(self, xi):
        return _inv_batch(self.children[0].symbol(xi), xi, self.label)


class Resolvent(Composite):
    """(lam - a)^{-1}."""

    def __init__(self, a: Operator, lam: complex, label: str | None = None):
        self.children = (a,)
        self.lam = complex(lam)
        self.label = label
        self.in_tag, self.out_tag, self.order = a.in_tag, a.out_tag, -a.order

    def _inv(self, m, xi):
        scale = np.maximum(abs(self.lam), np.linalg.norm(m, 2, axis=(1, 2)))
        return _inv_batch(_add_identity(-m, "mult", self.lam), xi, self.label, np.maximum(scale, 1e-300))

    def rep(self, grid=None):
        x = self.children[0].rep(grid)
        if x.kind == "mult":
            return Rep("mult", self._inv(x.data, grid.xi), grid)
        return Rep("dense", _inv_dense(_add_identity(-x.data, "dense", self.lam), self.label), grid)

    def symbol(self, xi):
        return self._inv(self.children[0].symbol(xi), xi)


class Block(Composite):
    """2x2 operator matrix [[A, B], [C, D]] acting on a product space."""

    def __init__(self, A: Operator, B: Operator, C: Operator, D: Operator, in_tag=None, out_tag=None):
        self.children = (A, B, C, D)
        from .gridspace import product_tag
        self.in_tag = in_tag or product_tag(A.in_tag, D.in_tag)
        self.out_tag = out_tag or self.in_tag
        self.order = max(c.order for c in self.children)

    def rep(self, grid=None):
        reps = [c.rep(grid) for c in self.children]
        if all(r.kind == "mult" for r in reps):
            a, b, c, d = (r.data for r in reps)
            return Rep("mult", np.concatenate([np.concatenate([a, b], 2), np.concatenate([c, d], 2)], 1), grid)
        a, b, c, d = (densify(r) for r in reps)
        return Rep("dense", np.block([[a, b], [c, d]]), grid)

    def symbol(self, xi):
        a, b, c, d = (ch.symbol(xi) for ch in self.children)
        return np.concatenate([np.concatenate([a, b], 2), np.concatenate([c, d], 2)], 1)


class Power(Composite):
    """Principal-branch power a^gamma; the zero mode of a vanishing symbol maps to zero."""

    def __init__(self, a: Operator, gamma: float):
        self.children = (a,)
        self.gamma = float(gamma)
        self.in_tag, self.out_tag, self.order = a.in_tag, a.out_tag, a.order * gamma

    def rep(self, grid=None):
        x = self.children[0].rep(grid)
        if x.kind == "mult":
            return Rep("mult", self._mult_power(x.data, grid.xi), grid)
        return Rep("dense", _dense_power(x.data, self.gamma), grid)

    def symbol(self, xi):
        return self._mult_power(self.children[0].symbol(xi), xi)

    def _mult_power(self, m, xi):
        g = self.gamma
        if g == 0:
            return np.broadcast_to(np.eye(m.shape[1]), m.shape).astype(complex)
        at_zero = np.all(xi == 0, axis=0)
        if m.shape[1] == 1:
            v = m[:, 0, 0]
            return _scalar_power(v, g, at_zero)[:, None, None]
        scale = np.linalg.norm(m, 2, axis=(1, 2))
        comm = m @ np.conj(np.swapaxes(m, 1, 2)) - np.conj(np.swapaxes(m, 1, 2)) @ m
        if np.any(np.linalg.norm(comm, 2, axis=(1, 2)) > 1e-10 * np.maximum(scale, 1e-300) ** 2):
            raise NonNormalSymbol("matrix symbol is not normal; use the contour calculus")
        w, V = np.linalg.eig(m)
        zero_ok = np.broadcast_to(at_zero[:, None], w.shape)
        wg = _scalar_power(w.ravel(), g, zero_ok.ravel(), np.repeat(scale, w.shape[1])).reshape(w.shape)
        return V @ (wg[:, :, None] * np.linalg.inv(V))


def _scalar_power(v, g, zero_ok, scale=None):
    v = np.asarray(v, dtype=complex)
    ref = np.abs(v) if scale is None else scale
    tiny = np.abs(v) <= 1e-14 * np.maximum(ref, 1.0)
    if np.any(tiny & ~zero_ok):
        raise BranchCut("symbol vanishes away from the zero mode")
    cut = (~tiny) & (v.real < 0) & (np.abs(v.imag) <= 1e-14 * np.abs(v))
    if np.any(cut):
        raise BranchCut("symbol touches the negative real axis")
    out = np.zeros_like(v)
    ok = ~tiny
    out[ok] = np.exp(g * np.log(v[ok]))
    return out


def _dense_power(M, g):
    if g == 0:
        return np.eye(M.shape[0], dtype=complex)
    w, V = np.linalg.eig(M)
    if np.linalg.cond(V) > COND_GUARD:
        raise NonNormalSymbol("matrix is not diagonalizable to working precision")
    if np.any(np.abs(w) <= 1e-14 * max(1.0, np.max(np.abs(w)))):
        raise BranchCut("matrix has a zero eigenvalue")
    if np.any((w.real < 0) & (np.abs(w.imag) <= 1e-14 * np.abs(w))):
        raise BranchCut("spectrum touches the negative real axis")
    return V @ np.diag(np.exp(g * np.log(w))) @ np.linalg.inv(V)


# operations

def apply(op: Operator, v):
    if isinstance(v, GridVector):
        if v.components != op.in_tag.components:
            raise TagMismatch(f"operator expects {op.in_tag.components} components, got {v.components}")
        r = op.rep(v.grid)
        if r.kind == "mult":
            return GridVector(v.grid, np.einsum("kij,jk->ik", r.data, v.freq))
        M = r.data
        x = v.freq.ravel()
        if M.shape[1] != x.size:
            raise TagMismatch(f"dense operator of width {M.shape[1]} applied to {x.size} coefficients")
        return GridVector(v.grid, (M @ x).reshape(-1, v.grid.size))
    r = op.rep(None)
    x = np.asarray(v, dtype=complex)
    if r.data.shape[1] != x.shape[0]:
        raise TagMismatch(f"dense operator of width {r.data.shape[1]} applied to vector of length {x.shape[0]}")
    return r.data @ x


def resolvent(op: Operator, lam: complex, grid: FreqGrid | None = None, label: str | None = None) -> Operator:
    """Handle for (lam - op)^{-1}; checked eagerly when a grid is given or op is dense."""
    R = Resolvent(op, lam, label)
    if grid is not None or not any(isinstance(l, Multiplier) for l in op.leaves()):
        R.rep(grid)
    return R


def fractional_power(op: Operator, gamma: float, grid: FreqGrid | None = None) -> Operator:
    P = Power(op, gamma)
    if grid is not None or not any(isinstance(l, Multiplier) for l in op.leaves()):
        P.rep(grid)
    return P


def materialize(op: Operator, grid: FreqGrid | None = None) -> np.ndarray:
    """Dense matrix whose columns are op applied to coefficient basis vectors."""
    if grid is None:
        return np.array(op.rep(None).data)
    m = op.in_tag.components
    N = grid.size
    if m * N > DENSE_LIMIT:
        raise SizeGuard("materialization too large")
    cols = []
    for j in range(m * N):
        e = np.zeros(m * N, dtype=complex)
        e[j] = 1
        cols.append(apply(op, GridVector(grid, e.reshape(m, N))).freq.ravel())
    return np.stack(cols, axis=1)


@dataclass
class NormResult:
    value: float
    method: str
    argmax: tuple | None = None

    def __float__(self):
        return self.value


def weighted_symbol(rep: Rep, tag_in: SpaceTag, tag_out: SpaceTag) -> np.ndarray:
    """W_out m W_in^{-1} with inactive rows/columns zeroed."""
    g = rep.grid
    wi, ai = tag_in.weights(g)
    wo, ao = tag_out.weights(g)
    ok_in = ai & (wi > 0) & np.isfinite(wi)
    inv_in = np.where(ok_in, 1.0 / np.where(ok_in, wi, 1.0), 0.0)
    wo = np.where(ao, wo, 0.0)
    m = rep.data
    with np.errstate(invalid="ignore"):
        out = wo[:, :, None] * m * inv_in[:, None, :]
    return np.nan_to_num(np.where(m == 0, 0.0, out), nan=0.0)


def operator_norm(op: Operator, tag_in: SpaceTag | None = None, tag_out: SpaceTag | None = None,
                  grid: FreqGrid | None = None, iters: int = 40, seed: int = 0) -> NormResult:
    tag_in = tag_in or op.in_tag
    tag_out = tag_out or op.out_tag
    if tag_in.components != op.in_tag.components or tag_out.components != op.out_tag.components:
        raise TagMismatch("norm tags do not match operator shape")
    return rep_norm(op.rep(grid), tag_in, tag_out, iters=iters, seed=seed)


def rep_norm(r: Rep, tag_in: SpaceTag, tag_out: SpaceTag, exclude_zero: bool = False,
             iters: int = 40, seed: int = 0) -> NormResult:
    """Norm of an evaluated operator between tagged spaces."""
    p_in, p_out = tag_in.p, tag_out.p
    if r.kind == "mult":
        grid = r.grid
        S = weighted_symbol(r, tag_in, tag_out)
        if exclude_zero:
            S = S.copy()
            S[0] = 0
        if p_in == 2 and p_out == 2:
            s = np.linalg.norm(S, 2, axis=(1, 2))
            j = int(np.argmax(s))
            return NormResult(float(s[j]), "exact", tuple(int(v) for v in grid.xi[:, j]))
        return NormResult(_pnorm_mult(S, grid, p_in, p_out, iters, seed), "lower-bound estimate")
    M = r.data
    if p_in == 2 and p_out == 2:
        return NormResult(float(np.linalg.norm(M, 2)) if M.size else 0.0, "exact")
    return NormResult(_pnorm_dense(M, p_in, p_out, iters, seed), "lower-bound estimate")


def _power_iterate(apply_fn, adj_fn, x0s, p_in, p_out, norm_in, norm_out, dual_fn, iters):
    q_in = p_in / (p_in - 1)
    best = 0.0
    for x in x0s:
        x = x / norm_in(x, p_in)
        for _ in range(iters):
            y = apply_fn(x)
            ny = norm_out(y, p_out)
            best = max(best, ny)
            if ny == 0:
                break
            z = adj_fn(dual_fn(y, p_out))
            nz = norm_in(z, q_in)
            if nz == 0:
                break
            xn = dual_fn(z, q_in)
            xn = xn / norm_in(xn, p_in)
            if np.allclose(xn, x, rtol=1e-12, atol=1e-14):
                break
            x = xn
    return best


def _pnorm_dense(M, p_in, p_out, iters, seed):
    rng = np.random.default_rng(seed)
    nrm = lambda v, p: float(np.sum(np.abs(v) ** p) ** (1 / p))

    def dual(y, p):
        n = nrm(y, p)
        if n == 0:
            return np.zeros_like(y)
        a = np.abs(y)
        return np.where(a > 0, np.where(a > 0, a, 1.0) ** (p - 2), 0.0) * y / n ** (p - 1)

    n = M.shape[1]
    starts = [np.ones(n, dtype=complex)] + [rng.standard_normal(n) + 1j * rng.standard_normal(n) for _ in range(3)]
    starts += [np.eye(n)[j].astype(complex) for j in range(min(n, 8))]
    return _power_iterate(lambda x: M @ x, lambda y: M.conj().T @ y, starts, p_in, p_out,
                          nrm, nrm, dual, iters)


def _pnorm_mult(S, grid, p_in, p_out, iters, seed):
    rng = np.random.default_rng(seed)
    N, mo, mi = S.shape
    SH = np.conj(np.swapaxes(S, 1, 2))

    def to_phys(c):
        return GridVector(grid, c).physical().reshape(c.shape[0], -1)

    def to_freq(f):
        return GridVector.from_physical(grid, f.reshape((f.shape[0],) + grid.shape)).freq

    def nrm(f, p):
        return float(np.mean(np.sqrt(np.sum(np.abs(f) ** 2, axis=0)) ** p) ** (1 / p))

    def dual(f, p):
        n = nrm(f, p)
        if n == 0:
            return np.zeros_like(f)
        a = np.sqrt(np.sum(np.abs(f) ** 2, axis=0))
        return np.where(a > 0, np.where(a > 0, a, 1.0) ** (p - 2), 0.0) * f / n ** (p - 1)

    ap = lambda f: to_phys(np.einsum("kij,jk->ik", S, to_freq(f)))
    ad = lambda f: to_phys(np.einsum("kij,jk->ik", SH, to_freq(f)))
    s2 = np.linalg.norm(S, 2, axis=(1, 2))
    j = int(np.argmax(s2))
    u = np.linalg.svd(S[j])[2][0].conj()
    c = np.zeros((mi, N), dtype=complex)
    c[:, j] = u
    starts = [to_phys(c)]
    for _ in range(3):
        starts.append(rng.standard_normal((mi, N)) + 1j * rng.standard_normal((mi, N)))
    return _power_iterate(ap, ad, starts, p_in, p_out, nrm, nrm, dual, iters)


@dataclass
class SymbolCertificate:
    sup_bound: float
    lizorkin_bound: float
    grid_refinements: list[tuple[int, float]]
    alpha_bounds: dict[int, dict[tuple, float]] = field(default_factory=dict)
    stable: bool = False


def _mixed_difference(op: Operator, xi: np.ndarray, alpha: tuple[int, ...], rel_step: float = 1e-3):
    dims = [j for j, a in enumerate(alpha) if a]
    if not dims:
        return op.symbol(xi)
    h = rel_step * np.maximum(1.0, np.abs(xi))
    acc = 0.0
    for signs in itertools.product((1, -1), repeat=len(dims)):
        pt = xi.copy()
        for j, s in zip(dims, signs):
            pt[j] = pt[j] + s * h[j]
        acc = acc + np.prod(signs) * op.symbol(pt)
    denom = np.prod([2 * h[j] for j in dims], axis=0)
    return acc / denom[:, None, None]


def lizorkin_certificate(op: Operator, refinements=(32, 64, 128), d: int = 1,
                         tol: float = 0.05) -> SymbolCertificate:
    if not op.is_symbol:
        raise TypeError("Lizorkin certificates need a pure multiplier")
    table, per_alpha = [], {}
    sup = 0.0
    for n in refinements:
        g = make_grid(d, n)
        xi = g.xi
        bounds = {}
        for alpha in itertools.product((0, 1), repeat=d):
            m = _mixed_difference(op, xi, alpha)
            w = np.prod([xi[j] if a else np.ones(xi.shape[1]) for j, a in enumerate(alpha)], axis=0)
            val = np.linalg.norm(w[:, None, None] * m, 2, axis=(1, 2))
            bounds[alpha] = float(np.max(val))
        sup = bounds[(0,) * d]
        per_alpha[n] = bounds
        table.append((n, max(bounds.values())))
    stable = True
    if len(table) >= 2:
        a, b = table[-2][1], table[-1][1]
        stable = abs(b - a) <= tol * max(abs(a), abs(b), 1e-300) or max(a, b) == 0
    return SymbolCertificate(sup, table[-1][1], table, per_alpha, stable)
