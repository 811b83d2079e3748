"""Example block operators on periodic grids.

All models are returned in the form where -calA generates the evolution, i.e. x' + calA x = f.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blockfact import BlockOperator, assemble_block
from .gridspace import FreqGrid, SpaceTag, ZeroMode, product_tag
from .opcore import Dense, Multiplier, abs2


@dataclass(frozen=True)
class ModelSpec:
    name: str
    parameters: dict
    deviations: tuple[str, ...] = field(default_factory=tuple)


def _col(xi):
    return np.swapaxes(xi, 0, 1)[:, :, None]  # (K, d, 1)


def _row(xi):
    return np.swapaxes(xi, 0, 1)[:, None, :]  # (K, 1, d)


def leray_symbol(xi: np.ndarray) -> np.ndarray:
    """P(xi) = I - xi xi^T / |xi|^2, zero at the zero mode."""
    s = abs2(xi)
    d = xi.shape[0]
    outer = _col(xi) * _row(xi)
    safe = np.where(s > 0, s, 1.0)
    P = np.eye(d) - outer / safe[:, None, None]
    P[s == 0] = 0
    return P


def leray_projector(d: int, components_tag: SpaceTag | None = None) -> Multiplier:
    tag = components_tag or SpaceTag(components=d)
    return Multiplier(leray_symbol, d, d, tag, tag, 0.0, "leray")


def _mult(fn, tin, tout, order=0.0, name=""):
    return Multiplier(fn, tout.components, tin.components, tin, tout, order, name)


def _attach(block: BlockOperator, spec: ModelSpec) -> BlockOperator:
    block.name = spec.name
    block.notes = list(spec.deviations)
    block.spec = spec
    return block


def beris_edwards_delta(grid: FreqGrid, zero_mode: str = "project") -> BlockOperator:
    """[-Delta, div Delta; -grad, -Delta] on H^{-1} x L^2 (homogeneous first factor)."""
    d = grid.d
    zm = ZeroMode(zero_mode)
    t1 = SpaceTag(s=-1.0, homogeneous=True, components=1, zero_mode=zm)
    t2 = SpaceTag(s=0.0, components=d)
    A = _mult(lambda xi: abs2(xi), t1, t1, 2, "-Delta")
    B = _mult(lambda xi: -1j * abs2(xi)[:, None, None] * _row(xi), t2, t1, 3, "div Delta")
    C = _mult(lambda xi: -1j * _col(xi), t1, t2, 1, "-grad")
    D = _mult(lambda xi: abs2(xi), t2, t2, 2, "-Delta")
    spec = ModelSpec("beris_edwards_delta", {"d": d, "n": grid.n, "zero_mode": zm.value},
                     ("full space replaced by the torus", "zero mode handled by policy " + zm.value))
    return _attach(assemble_block(A, B, C, D, t1, t2, grid), spec)


def beris_edwards_inverse_symbol(lam: complex):
    """Pointwise symbol of M1(lam)^{-1}: (lam-|xi|^2)^2 / ((lam-|xi|^2)^2 + |xi|^4)."""
    def fn(xi):
        s = abs2(xi)
        q = (lam - s) ** 2
        return q / (q + s ** 2)
    return Multiplier(fn, 1, 1, name="m_tilde")


def damped_wave(grid: FreqGrid, eps: float = 1.0, order: int = 2, form: str = "sectorial") -> BlockOperator:
    """u'' + eps S u' + S u = f with S = (-Delta)^{order/2}, written as a first order system."""
    if order not in (2, 4):
        raise ValueError("order must be 2 (wave) or 4 (plate)")
    if eps < 0:
        raise ValueError("damping must be nonnegative")
    t1 = SpaceTag(s=float(order), components=1)
    t2 = SpaceTag(s=0.0, components=1)
    S = lambda xi: abs2(xi) ** (order // 2)
    sign = 1.0 if form == "sectorial" else -1.0
    if form not in ("sectorial", "generator"):
        raise ValueError(f"unknown form {form!r}")
    A = _mult(lambda xi: np.zeros(xi.shape[1]), t1, t1, 0)
    B = _mult(lambda xi: -sign * np.ones(xi.shape[1]), t2, t1, 0)
    C = _mult(lambda xi: sign * S(xi), t1, t2, order)
    D = _mult(lambda xi: sign * eps * S(xi), t2, t2, order)
    dev = ["periodic surrogate for S"]
    if eps == 0:
        dev.append("out of theory: no damping, the second diagonal entry is not sectorial")
    spec = ModelSpec("damped_wave", {"eps": eps, "order": order, "form": form}, tuple(dev))
    return _attach(assemble_block(A, B, C, D, t1, t2, grid), spec)


def thermoelastic_plate(grid: FreqGrid, eps: float = 1.0, thermal_coupling: float = 1.0) -> BlockOperator:
    """Plate with strong damping coupled to heat conduction; X1 = H^4 x L^2, X2 = L^2."""
    if eps <= 0:
        raise ValueError("damping must be positive")
    t1 = product_tag(SpaceTag(s=4.0), SpaceTag(s=0.0))
    t2 = SpaceTag(s=0.0, components=1)
    a = thermal_coupling

    def Afn(xi):
        s2 = abs2(xi) ** 2
        out = np.zeros((xi.shape[1], 2, 2), dtype=complex)
        out[:, 0, 1] = -1
        out[:, 1, 0] = s2
        out[:, 1, 1] = eps * s2
        return out

    def Bfn(xi):
        out = np.zeros((xi.shape[1], 2, 1), dtype=complex)
        out[:, 1, 0] = -a * abs2(xi)
        return out

    def Cfn(xi):
        out = np.zeros((xi.shape[1], 1, 2), dtype=complex)
        out[:, 0, 1] = abs2(xi)
        return out

    A = _mult(Afn, t1, t1, 4)
    B = _mult(Bfn, t2, t1, 2)
    C = _mult(Cfn, t1, t2, 2)
    D = _mult(lambda xi: abs2(xi), t2, t2, 2)
    spec = ModelSpec("thermoelastic_plate", {"eps": eps, "thermal_coupling": a}, ("periodic surrogate",))
    return _attach(assemble_block(A, B, C, D, t1, t2, grid), spec)


def artificial_stokes(grid: FreqGrid, eps: float = 1.0, projection: str = "none") -> BlockOperator:
    """[0, eps^{-2} div; grad, -Delta] on H^1 x L^2."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = grid.d
    if projection not in ("none", "leray"):
        raise ValueError(f"unknown projection {projection!r}")
    if projection == "leray" and d < 2:
        raise ValueError("the Leray variant needs d >= 2")
    t1 = SpaceTag(s=1.0, components=1)
    t2 = SpaceTag(s=0.0, components=d)
    P = leray_symbol if projection == "leray" else (lambda xi: np.broadcast_to(np.eye(d), (xi.shape[1], d, d)))
    A = _mult(lambda xi: np.zeros(xi.shape[1]), t1, t1, 0)
    B = _mult(lambda xi: (1j / eps ** 2) * _row(xi) @ P(xi), t2, t1, 1)
    C = _mult(lambda xi: P(xi) @ (1j * _col(xi)), t1, t2, 1)
    D = _mult(lambda xi: abs2(xi), t2, t2, 2)
    dev = ["periodic surrogate, no-slip boundary dropped", "velocity offset v_s = 0"]
    if projection == "leray":
        dev.append("velocity restricted to mean-free solenoidal fields")
    spec = ModelSpec("artificial_stokes", {"eps": eps, "projection": projection}, tuple(dev))
    return _attach(assemble_block(A, B, C, D, t1, t2, grid), spec)


def _pseudo_product(grid: FreqGrid, z: np.ndarray) -> np.ndarray:
    """Coefficient matrix of v -> z v with out-of-lattice frequencies dropped."""
    from .gridspace import GridVector
    zc = GridVector.from_physical(grid, z).freq[0]
    xi = grid.xi.astype(int)
    N = grid.size
    half = grid.n // 2
    M = np.zeros((N, N), dtype=complex)
    for j in range(N):
        diff = xi - xi[:, j:j + 1]
        ok = np.all((diff >= -half) & (diff < half), axis=0)
        idx = np.ravel_multi_index(tuple(np.mod(diff[:, ok], grid.n)), grid.shape)
        M[ok, j] = zc[idx]
    return M


def keller_segel(grid: FreqGrid, z=1.0, form: str = "shifted") -> BlockOperator:
    """Linearized chemotaxis block; B(z) v = z Delta v."""
    t = SpaceTag(components=1)
    if form == "shifted":
        a0, c0, d0 = 1.0, -1.0, 2.0
    elif form == "neumann":
        a0, c0, d0 = 0.0, -1.0, 0.0
    else:
        raise ValueError(f"unknown form {form!r}")
    A = _mult(lambda xi: a0 + abs2(xi), t, t, 2)
    C = _mult(lambda xi: np.full(xi.shape[1], c0), t, t, 0)
    D = _mult(lambda xi: d0 + abs2(xi), t, t, 2)
    dev = ["periodic surrogate for the Neumann and Dirichlet Laplacians"]
    if np.isscalar(z):
        zz = complex(z)
        B = _mult(lambda xi: -zz * abs2(xi), t, t, 2)
        params = {"z": z, "form": form}
    else:
        z = np.asarray(z)
        lap = np.diag(-grid.abs2)
        B = Dense(_pseudo_product(grid, z) @ lap, t, t, 2)
        dev.append("approximate: grid function z enters through a truncated pseudo-product")
        params = {"z": "grid function", "form": form}
    spec = ModelSpec("keller_segel", params, tuple(dev))
    return _attach(assemble_block(A, B, C, D, t, t, grid), spec)


ALPHA_VARIANT_ALIASES = {"ex34": "unequal_orders", "remark_amu": "shifted"}


def alpha_example(grid: FreqGrid, alpha: float = 2.0, variant: str = "unequal_orders",
                  mu: float = 0.0) -> BlockOperator:
    """Coupling of order 2 alpha against a diagonal of order 2 (unequal_orders), its bounded-diagonal
    shift by mu (shifted), or the same orders on 1 - Delta (fractions)."""
    variant = ALPHA_VARIANT_ALIASES.get(variant, variant)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    t = SpaceTag(components=1)
    if variant == "unequal_orders":
        A = _mult(lambda xi: abs2(xi), t, t, 2)
        B = _mult(lambda xi: -abs2(xi) ** alpha, t, t, 2 * alpha)
        C = _mult(lambda xi: np.zeros(xi.shape[1]), t, t, 0)
        D = _mult(lambda xi: abs2(xi) ** alpha, t, t, 2 * alpha)
        params = {"alpha": alpha, "variant": variant}
    elif variant == "shifted":
        A = _mult(lambda xi: np.full(xi.shape[1], mu - 1.0), t, t, 0)
        B = _mult(lambda xi: -abs2(xi), t, t, 2)
        C = _mult(lambda xi: np.ones(xi.shape[1]), t, t, 0)
        D = _mult(lambda xi: mu + abs2(xi), t, t, 2)
        params = {"variant": variant, "mu": mu}
    elif variant == "fractions":
        A = _mult(lambda xi: 1 + abs2(xi), t, t, 2)
        B = _mult(lambda xi: -(1 + abs2(xi)) ** alpha, t, t, 2 * alpha)
        C = _mult(lambda xi: 1 + abs2(xi), t, t, 2)
        D = _mult(lambda xi: (1 + abs2(xi)) ** alpha, t, t, 2 * alpha)
        params = {"alpha": alpha, "variant": variant}
    else:
        raise ValueError(f"unknown variant {variant!r}")
    spec = ModelSpec("alpha_example", params, ("full space replaced by the torus",))
    return _attach(assemble_block(A, B, C, D, t, t, grid), spec)


def ericksen_leslie_structure(grid: FreqGrid, gradient=None) -> BlockOperator:
    """Tri-diagonal liquid crystal structure with a frozen director gradient G[l, i] = d_i d_l."""
    d = grid.d
    if d < 2:
        raise ValueError("the Ericksen-Leslie structure needs d >= 2")
    G = np.zeros((d, d)) if gradient is None else np.asarray(gradient, dtype=float)
    if G.shape != (d, d):
        raise ValueError(f"director gradient must be {d}x{d}")
    t = SpaceTag(components=d)

    def Bfn(xi):
        s = abs2(xi)
        col = _col(xi)
        Gxi = np.einsum("lk,kK->Kl", G, xi)  # sum_k G[l,k] xi_k
        coupling = -(G.T[None] * s[:, None, None] + col * Gxi[:, None, :])
        return -leray_symbol(xi) @ coupling

    A = _mult(lambda xi: abs2(xi), t, t, 2, "Stokes")
    B = _mult(Bfn, t, t, 2, "director coupling")
    C = _mult(lambda xi: np.zeros((xi.shape[1], d, d)), t, t, 0)
    D = _mult(lambda xi: abs2(xi), t, t, 2, "-Laplacian")
    dev = ["torus surrogate: Stokes operator equals -Delta on solenoidal fields",
           "Neumann Laplacian replaced by the periodic -Delta (kernel = constants)"]
    if np.any(G):
        dev.append("approximate: affine director frozen to a constant gradient")
    spec = ModelSpec("ericksen_leslie_structure", {"gradient": G.tolist()}, tuple(dev))
    return _attach(assemble_block(A, B, C, D, t, t, grid), spec)


def structural_zero_fixture(grid: FreqGrid) -> BlockOperator:
    """3x3 operator [[A, 0, B12], [C21, D11, 0], [0, 0, D22]] regrouped as 1 + 2 components."""
    t1 = SpaceTag(components=1)
    t2 = SpaceTag(components=2)
    def Bfn(xi):
        out = np.zeros((xi.shape[1], 1, 2), dtype=complex)
        out[:, 0, 1] = 3 * abs2(xi)
        return out

    def Cfn(xi):
        out = np.zeros((xi.shape[1], 2, 1), dtype=complex)
        out[:, 0, 0] = 3 * abs2(xi)
        return out

    def Dfn(xi):
        out = np.zeros((xi.shape[1], 2, 2), dtype=complex)
        out[:, 0, 0] = 1 + abs2(xi)
        out[:, 1, 1] = 2 + abs2(xi)
        return out

    spec = ModelSpec("structural_zero", {}, ("coupling chosen large on purpose",))
    return _attach(assemble_block(_mult(lambda xi: 1 + abs2(xi), t1, t1, 2), _mult(Bfn, t2, t1, 2),
                                  _mult(Cfn, t1, t2, 2), _mult(Dfn, t2, t2, 2), t1, t2, grid), spec)


MODELS = {
    "beris_edwards_delta": beris_edwards_delta,
    "damped_wave": damped_wave,
    "thermoelastic_plate": thermoelastic_plate,
    "artificial_stokes": artificial_stokes,
    "keller_segel": keller_segel,
    "alpha_example": alpha_example,
    "ericksen_leslie_structure": ericksen_leslie_structure,
    "structural_zero": structural_zero_fixture,
}


def build_model(name: str, grid: FreqGrid, **params) -> BlockOperator:
    if name not in MODELS:
        raise KeyError(f"unknown model {name!r}")
    return MODELS[name](grid, **params)
