"""Perturbation certificates for block operators: smallness, constants, GH criterion, weights."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .blockfact import BlockOperator, m_factor
from .funcalc import power_rep
from .gridspace import GridVector, SpaceTag, norm, project_zero_mode
from .opcore import (DENSE_LIMIT, BranchCut, Operator, Rep, SingularResolvent, SizeGuard, rep_norm,
                     weighted_symbol)
from .sectorscan import DEFAULT_SEED, RBoundEstimate, SweepSpec, rbound, spectrum_scale

NEUMANN_MARGIN = 1.05


class InvalidWeight(ValueError):
    pass


# smallness

@dataclass
class CouplingSmallness:
    sup1: float
    sup2: float
    rbound1: RBoundEstimate
    rbound2: RBoundEstimate
    argmax1: complex
    argmax2: complex
    samples: int
    neumann_admissible: bool
    method: str = "exact"


def sample_points(block: BlockOperator, psi: float, spec: SweepSpec | None = None) -> np.ndarray:
    """Sampled lambda outside the closed sector of angle psi."""
    spec = spec or SweepSpec(theta_min=psi)
    if spec.theta_min < psi:
        raise ValueError("sample rays must lie outside the sector")
    scale = spec.scale or spectrum_scale(block.full.rep(block.grid), exclude_zero=not block.dense)
    return np.array([r * np.exp(1j * th) for th in spec.angles() for r in spec.radius_values(scale)])


def smallness_check(block: BlockOperator, psi: float, spec: SweepSpec | None = None, budget: int = 32,
                    seed: int = DEFAULT_SEED) -> CouplingSmallness:
    """sup of ||B(lam-D)^{-1}C(lam-A)^{-1}|| and its mirror over sampled lam, with R-bound estimates."""
    lams = sample_points(block, psi, spec)
    f1, f2, n1, n2 = [], [], [], []
    for lam in lams:
        fb = m_factor(block, lam)
        r1, r2 = fb.coupling1.rep(block.grid), fb.coupling2.rep(block.grid)
        f1.append(r1)
        f2.append(r2)
        n1.append(rep_norm(r1, block.x1_tag, block.x1_tag).value)
        n2.append(rep_norm(r2, block.x2_tag, block.x2_tag).value)
    i1, i2 = int(np.argmax(n1)), int(np.argmax(n2))
    R1 = rbound(f1, block.x1_tag, budget=budget, seed=seed, grid=block.grid)
    R2 = rbound(f2, block.x2_tag, budget=budget, seed=seed, grid=block.grid)
    ok = max(n1[i1], n2[i2]) * NEUMANN_MARGIN < 1
    method = "exact" if block.tag.p == 2 else "lower-bound estimate"
    return CouplingSmallness(n1[i1], n2[i2], R1, R2, complex(lams[i1]), complex(lams[i2]), len(lams), ok, method)


# constants

@dataclass
class PerturbationConstants:
    R: float
    epsilon0: float
    nu0_prime: float
    nu0: float
    threshold_L0: float
    c_D: float
    N_A: float
    N_D: float
    L: float
    status: str = "ok"


def _div(a: float, b: float) -> float:
    if b == 0:
        return 0.0 if a == 0 else math.inf
    return a / b


def perturbation_constants(c_D: float, N_A: float, N_D: float, L: float) -> PerturbationConstants:
    """Smallness radius and shift for a relatively bounded coupling; 'unconstrained' when a factor vanishes."""
    if min(c_D, N_A, N_D, L) < 0:
        raise ValueError("all inputs must be nonnegative")
    prod = c_D * N_D * N_A * N_D
    status = "unconstrained" if prod == 0 else "ok"
    R = _div(1.0, 2 * prod)
    eps0 = _div(R, N_A) if math.isfinite(R) else math.inf
    nu0p = _div(L, c_D) * (1 + _div(1.0, N_D)) if L else 0.0
    second = (L / R) * (1 + N_A) if L and math.isfinite(R) else 0.0
    nu0 = max(nu0p, second)
    return PerturbationConstants(R, eps0, nu0p, nu0, _div(1.0, c_D * N_A * N_D), c_D, N_A, N_D, L, status)


# GH criterion

@dataclass
class GHReport:
    norm_HG: float
    norm_GH: float
    invertible: bool
    bound_inverse: float
    HG: Rep = field(repr=False, default=None)


def _inverse_data(rep: Rep, mask: np.ndarray | None, label: str) -> np.ndarray:
    data = rep.data
    if rep.kind == "dense":
        s = np.linalg.svd(data, compute_uv=False)
        if s[-1] <= 1e-12 * max(s[0], 1e-300):
            raise SingularResolvent(f"{label} is not injective", label=label)
        return np.linalg.inv(data)
    out = np.zeros_like(data, dtype=complex)
    s = np.linalg.svd(data, compute_uv=False)
    scale = max(float(s.max()), 1e-300)
    bad = s[:, -1] <= 1e-12 * scale
    if mask is not None:
        bad &= mask
    if np.any(bad):
        j = int(np.argmax(bad))
        raise SingularResolvent(f"{label} is not injective", point=tuple(int(v) for v in rep.grid.xi[:, j]),
                                label=label)
    keep = np.ones(len(data), dtype=bool) if mask is None else mask
    out[keep] = np.linalg.inv(data[keep])
    return out


def _mean_free_mask(block: BlockOperator):
    if block.dense:
        return None
    A, D = block.A.rep(block.grid).data, block.D.rep(block.grid).data
    mask = np.ones(block.grid.size, dtype=bool)
    if np.linalg.matrix_rank(A[0]) < A.shape[-1] or np.linalg.matrix_rank(D[0]) < D.shape[-1]:
        mask[0] = False
    return mask


def _compose(block: BlockOperator, t: float | None):
    """B (t+D)^{-1} C (t+A)^{-1} per mode; t = None gives the limit B D^{-1} C A^{-1}."""
    g = block.grid
    mask = _mean_free_mask(block)
    A, B, C, D = (x.rep(g) for x in (block.A, block.B, block.C, block.D))
    shift = 0.0 if t is None else t
    kA, kD = A.data.shape[-1], D.data.shape[-1]
    Ai = _inverse_data(Rep(A.kind, A.data + shift * np.eye(kA), g), mask, "A")
    Di = _inverse_data(Rep(D.kind, D.data + shift * np.eye(kD), g), mask, "D")
    Bd, Cd = B.data, C.data
    if A.kind == "dense" or D.kind == "dense":
        from .opcore import densify
        Bd, Cd = densify(B), densify(C)
        Ai = Ai if A.kind == "dense" else np.linalg.inv(densify(Rep("mult", A.data + shift * np.eye(kA), g)))
        Di = Di if D.kind == "dense" else np.linalg.inv(densify(Rep("mult", D.data + shift * np.eye(kD), g)))
        kind = "dense"
    else:
        kind = "mult"
    H, G = Bd @ Di, Cd @ Ai
    return Rep(kind, H @ G, g), Rep(kind, G @ H, g), mask


def gh_criterion(block: BlockOperator) -> GHReport:
    """Norms of HG = (B D^{-1})(C A^{-1}) and GH, and the inverse of I - HG, on the grid."""
    HG, GH, mask = _compose(block, None)
    ex = mask is not None and not mask[0]
    n_hg = rep_norm(HG, block.x1_tag, block.x1_tag, exclude_zero=ex).value
    n_gh = rep_norm(GH, block.x2_tag, block.x2_tag, exclude_zero=ex).value
    k = HG.data.shape[-1]
    Mx = np.eye(k) - HG.data
    if HG.kind == "mult":
        s = np.linalg.svd(Mx, compute_uv=False)
        if ex:
            s[0] = 1.0
        ok = bool(np.all(s[:, -1] > 1e-12 * np.maximum(s[:, 0], 1.0)))
        if not ok:
            return GHReport(n_hg, n_gh, False, math.inf, HG)
        inv = np.linalg.inv(np.where(ex & (np.arange(len(Mx)) == 0)[:, None, None], np.eye(k), Mx))
        if ex:
            inv[0] = 0
        bound = rep_norm(Rep("mult", inv, HG.grid), block.x1_tag, block.x1_tag, exclude_zero=ex).value
    else:
        s = np.linalg.svd(Mx, compute_uv=False)
        ok = bool(s[-1] > 1e-12 * max(s[0], 1.0))
        if not ok:
            return GHReport(n_hg, n_gh, False, math.inf, HG)
        bound = float(np.linalg.norm(np.linalg.inv(Mx), 2))
    return GHReport(n_hg, n_gh, True, bound, HG)


def gh_limit_sequence(block: BlockOperator, ts=(1.0, 0.1, 0.01, 0.001)) -> list[float]:
    """||B(t+D)^{-1}C(t+A)^{-1} - HG|| on mean-free data along decreasing t."""
    HG, _, mask = _compose(block, None)
    ex = mask is not None and not mask[0]
    out = []
    for t in ts:
        K, _, _ = _compose(block, t)
        diff = Rep(K.kind, K.data - HG.data, K.grid)
        out.append(rep_norm(diff, block.x1_tag, block.x1_tag, exclude_zero=ex).value)
    return out


# fractional relative bounds

@dataclass
class FractionalRelation:
    const_C_side: float
    const_B_side: float
    stable_C: bool
    stable_B: bool
    method: str
    delta: float
    variant: str


def _ratio_sup(P: Rep, Q: Rep, tag_num: SpaceTag, tag_den: SpaceTag, mask) -> tuple[float, float]:
    """sup ||P x|| / ||Q x|| per mode, over all modes and over the lower half of the frequency band."""
    data = np.zeros_like(P.data, dtype=complex)
    keep = np.ones(len(Q.data), dtype=bool) if mask is None else mask.copy()
    s = np.linalg.svd(Q.data, compute_uv=False)
    null = s[:, -1] <= 1e-13 * max(float(s.max()), 1e-300)
    pn = np.linalg.norm(P.data, axis=(1, 2))
    if np.any(null & keep & (pn > 0)):
        raise BranchCut("denominator vanishes where the numerator does not")
    keep &= ~null
    data[keep] = P.data[keep] @ np.linalg.inv(Q.data[keep])
    W = weighted_symbol(Rep("mult", data, P.grid), tag_den, tag_num)
    per = np.linalg.norm(W, 2, axis=(1, 2))
    grid = P.grid
    low = np.max(np.abs(grid.xi), axis=0) < grid.n / 4
    return float(per.max(initial=0.0)), float(per[low].max(initial=0.0))


def fractional_relation_check(block: BlockOperator, delta: float, variant: str = "plus", samples: int = 64,
                              seed: int = 0) -> FractionalRelation:
    """Constants in ||D^{+-delta} C x|| <~ ||A^{1+-delta} x|| and the mirrored estimate for B.

    A side counts as unstable when its constant over the whole grid exceeds the constant over the
    lower half of the frequency band by more than 5%.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if variant not in ("plus", "minus"):
        raise ValueError("variant must be 'plus' or 'minus'")
    sgn = 1.0 if variant == "plus" else -1.0
    g = block.grid
    A, B, C, D = (x.rep(g) for x in (block.A, block.B, block.C, block.D))
    mask = _mean_free_mask(block)
    mf = mask is not None and not mask[0]
    Dd, Aa = power_rep(D, sgn * delta, mf), power_rep(A, 1 + sgn * delta, mf)
    Ad, Dn = power_rep(A, sgn * delta, mf), power_rep(D, 1 + sgn * delta, mf)
    if A.kind == "mult" and block.tag.p == 2:
        PC = Rep("mult", Dd.data @ C.data, g)
        PB = Rep("mult", Ad.data @ B.data, g)
        c_all, c_low = _ratio_sup(PC, Aa, block.x2_tag, block.x1_tag, mask)
        b_all, b_low = _ratio_sup(PB, Dn, block.x1_tag, block.x2_tag, mask)
        return FractionalRelation(c_all, b_all, c_all <= 1.05 * c_low, b_all <= 1.05 * b_low, "exact", delta,
                                  variant)
    rng = np.random.default_rng(seed)

    def sampled(num_op, left, den, tag_in, tag_out):
        best = 0.0
        for _ in range(samples):
            if A.kind == "mult":
                v = GridVector.random(g, tag_in.components, rng, decay=2.0)
                if mf:
                    v = project_zero_mode(v)
                y = GridVector(g, np.einsum("kij,jk->ik", left.data @ num_op.data, v.freq))
                q = GridVector(g, np.einsum("kij,jk->ik", den.data, v.freq))
                a, b = norm(y, tag_out), norm(q, tag_in)
            else:
                v = rng.standard_normal(den.data.shape[1]) + 1j * rng.standard_normal(den.data.shape[1])
                a, b = np.linalg.norm(left.data @ num_op.data @ v), np.linalg.norm(den.data @ v)
            if b > 0:
                best = max(best, a / b)
        return best

    c = sampled(C, Dd, Aa, block.x1_tag, block.x2_tag)
    b = sampled(B, Ad, Dn, block.x2_tag, block.x1_tag)
    return FractionalRelation(c, b, True, True, "lower-bound estimate", delta, variant)


# moment inequality

@dataclass
class MomentBound:
    C_eps: float
    gamma_constant: float
    argmax: int


def moment_bound(opA: Operator, opC: Operator, gamma: float, eps: float, samples: int = 256, seed: int = 0,
                 grid=None) -> MomentBound:
    """Smallest C with ||Cx|| <= eps ||Ax|| + C ||x|| on the sample set (unit modes plus random vectors)."""
    if not 0 < gamma < 1 or eps <= 0:
        raise ValueError("need gamma in (0, 1) and eps > 0")
    A, C = opA.rep(grid), opC.rep(grid)
    # a zero mode that C annihilates never enters the moment constant
    Ag = power_rep(A, gamma, mean_free=A.kind == "mult" and not np.any(C.data[0]))
    rng = np.random.default_rng(seed)
    if A.kind == "mult":
        k = A.data.shape[-1]
        vecs = []
        for j in range(A.data.shape[0]):
            for c in range(k):
                e = np.zeros((A.data.shape[0], k), dtype=complex)
                e[j, c] = 1.0
                vecs.append(e)
        for _ in range(samples):
            vecs.append(GridVector.random(A.grid, k, rng, decay=1.0).freq.T)
        ap = lambda R, x: np.einsum("kij,kj->ki", R.data, x)
        nrm = lambda x: float(np.sqrt(np.sum(np.abs(x) ** 2)))
    else:
        n = A.data.shape[0]
        w, V = np.linalg.eig(A.data)
        vecs = [V[:, j] for j in range(n)]
        vecs += [rng.standard_normal(n) + 1j * rng.standard_normal(n) for _ in range(samples)]
        ap = lambda R, x: R.data @ x
        nrm = lambda x: float(np.linalg.norm(x))
    best, arg, kg = 0.0, -1, 0.0
    for i, x in enumerate(vecs):
        nx = nrm(x)
        if nx == 0:
            continue
        cx = nrm(ap(C, x))
        val = (cx - eps * nrm(ap(A, x))) / nx
        gx = nrm(ap(Ag, x))
        if gx > 0:
            kg = max(kg, cx / gx)
        if val > best:
            best, arg = val, i
    return MomentBound(best, kg, arg)


# Hilbert-space structure

@dataclass
class Dissipativity:
    min_sampled: float
    min_exact: float
    cancellation: float
    samples: int


def _mode_weights(block: BlockOperator, gamma: float, weights):
    t1, t2 = weights if weights is not None else (block.x1_tag, block.x2_tag)
    if t1.components != block.x1_tag.components or t2.components != block.x2_tag.components:
        raise InvalidWeight("weight tags do not match the block")
    w1, a1 = t1.weights(block.grid)
    w2, a2 = t2.weights(block.grid)
    w = np.concatenate([np.sqrt(gamma) * w1, w2], axis=1)
    active = np.concatenate([a1, a2], axis=1)
    homogeneous = any(p.homogeneous for p in t1.parts + t2.parts)
    if homogeneous:
        active[0] = False
    bad = active & ~((w > 0) & np.isfinite(w))
    if np.any(bad):
        raise InvalidWeight("weights must be positive and finite on active modes")
    return np.where(active, w, 0.0), active


def _weighted_block(block: BlockOperator, gamma: float, weights):
    """Per-mode matrices W M W^{-1} of the full block in orthonormal coordinates of the weighted product."""
    if block.tag.p != 2:
        raise ValueError("Hilbert-space checks need p = 2")
    M = block.full.rep(block.grid)
    if M.kind != "mult":
        raise ValueError("per-mode weights need a multiplier block")
    w, active = _mode_weights(block, gamma, weights)
    inv = np.where(active, 1.0 / np.where(active, w, 1.0), 0.0)
    return w[:, :, None] * M.data * inv[:, None, :], active


def dissipativity_check(block: BlockOperator, gamma: float = 1.0, weights=None, samples: int = 10000,
                        seed: int = 0) -> Dissipativity:
    """min Re(calA h | h) over unit h in the gamma-weighted product inner product."""
    if gamma <= 0:
        raise InvalidWeight("gamma must be positive")
    k1 = block.x1_tag.components
    rng = np.random.default_rng(seed)
    if block.dense:
        if block.tag.p != 2:
            raise ValueError("Hilbert-space checks need p = 2")
        M = block.full.rep(None).data
        Wd = np.concatenate([np.full(k1, np.sqrt(gamma)), np.ones(M.shape[0] - k1)])
        Mt = Wd[:, None] * M / Wd[None, :]
        H = (Mt + Mt.conj().T) / 2
        exact = float(np.linalg.eigvalsh(H)[0])
        h = rng.standard_normal((samples, M.shape[0])) + 1j * rng.standard_normal((samples, M.shape[0]))
        h /= np.linalg.norm(h, axis=1, keepdims=True)
        vals = np.real(np.einsum("si,ij,sj->s", h.conj(), H, h))
        off = Mt[:k1, k1:] + Mt[k1:, :k1].conj().T
        return Dissipativity(float(vals.min()), exact, float(np.linalg.norm(off, 2)), samples)
    Mt, active = _weighted_block(block, gamma, weights)
    H = (Mt + np.conj(np.swapaxes(Mt, 1, 2))) / 2
    live = np.any(active, axis=1)
    H = H * (active[:, :, None] & active[:, None, :])
    ev = np.linalg.eigvalsh(H[live])
    act = active[live]
    exact = float(min(np.min(np.where(act[j], ev[j], np.inf)) for j in range(len(ev)))) if len(ev) else 0.0
    # random unit vectors supported on random active modes
    modes = np.flatnonzero(live)
    pick = rng.choice(modes, size=samples)
    h = rng.standard_normal((samples, Mt.shape[1])) + 1j * rng.standard_normal((samples, Mt.shape[1]))
    h = h * active[pick]
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    vals = np.real(np.einsum("si,sij,sj->s", h.conj(), H[pick], h))
    off = Mt[:, :k1, k1:] + np.conj(np.swapaxes(Mt[:, k1:, :k1], 1, 2))
    canc = float(np.max(np.linalg.norm(off[live], 2, axis=(1, 2)), initial=0.0))
    return Dissipativity(float(vals.min()), exact, canc, samples)


def j_symmetry_check(block: BlockOperator, weights=None) -> float:
    """Relative residual ||JA - (JA)^*|| / ||JA|| with J = diag(1, -1), per mode for multiplier blocks."""
    k1 = block.x1_tag.components
    if block.dense:
        if block.tag.p != 2:
            raise ValueError("Hilbert-space checks need p = 2")
        M = block.full.rep(None).data
        if M.shape[0] > DENSE_LIMIT:
            raise SizeGuard("dense symmetry check above the size limit")
        J = np.diag(np.concatenate([np.ones(k1), -np.ones(M.shape[0] - k1)]))
        JM = J @ M
        den = np.linalg.norm(JM, 2)
        return float(np.linalg.norm(JM - JM.conj().T, 2) / den) if den else 0.0
    Mt, active = _weighted_block(block, 1.0, weights)
    k = Mt.shape[1]
    J = np.concatenate([np.ones(k1), -np.ones(k - k1)])
    JM = J[None, :, None] * Mt
    diff = np.linalg.norm(JM - np.conj(np.swapaxes(JM, 1, 2)), 2, axis=(1, 2))
    size = np.linalg.norm(JM, 2, axis=(1, 2))
    live = size > 0
    return float(np.max(diff[live] / size[live], initial=0.0))
