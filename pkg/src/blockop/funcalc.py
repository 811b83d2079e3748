"""Holomorphic functional calculus by contour quadrature and related measurements."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import expm, fractional_matrix_power

from .blockfact import BlockOperator, Fixed
from .gridspace import GridVector, SpaceTag, norm, project_zero_mode
from .opcore import (DENSE_LIMIT, SINGULAR_RTOL, BranchCut, Dense, Operator, Rep, SingularResolvent, SizeGuard,
                     rep_norm)
from .sectorscan import spectral_angle, spectrum_scale


class NonConvergent(ArithmeticError):
    pass


class ContourError(ValueError):
    pass


class AngleTooLarge(ValueError):
    pass


# test functions

@dataclass(frozen=True)
class TestFunction:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    psi_max: float = np.pi
    decay: float = 1.0

    __test__ = False

    def __call__(self, z):
        return self.fn(np.asarray(z, dtype=complex))


def phi() -> TestFunction:
    return TestFunction("phi", lambda z: z / (1 + z) ** 2)


def power(eps: float) -> TestFunction:
    if not 0 < eps:
        raise ValueError("power exponent must be positive")
    return TestFunction(f"power({eps:g})", lambda z: z ** eps * (1 + z) ** (-2 * eps), decay=eps)


def zeta_n(n: float) -> TestFunction:
    if n <= 0:
        raise ValueError("zeta index must be positive")
    return TestFunction(f"zeta_n({n:g})", lambda z: n / (n + z) - 1 / (1 + n * z))


def exp_decay(t: float) -> TestFunction:
    if t <= 0:
        raise ValueError("decay time must be positive")
    return TestFunction(f"exp_decay({t:g})", lambda z: np.exp(-t * z), psi_max=np.pi / 2, decay=0.0)


def blaschke(zeros, cutoff: float = 1e6) -> TestFunction:
    """prod (z - a)/(z + a) times zeta_n(cutoff); bounded by 1 on the right half plane."""
    zeros = [float(a) for a in zeros]
    if any(a <= 0 for a in zeros):
        raise ValueError("Blaschke zeros must be positive")
    cut = zeta_n(cutoff)

    def fn(z):
        out = cut(z)
        for a in zeros:
            out = out * (z - a) / (z + a)
        return out
    return TestFunction(f"blaschke[{len(zeros)}]", fn, psi_max=np.pi / 2)


def product(f: TestFunction, g: TestFunction) -> TestFunction:
    return TestFunction(f"{f.name}*{g.name}", lambda z: f(z) * g(z), min(f.psi_max, g.psi_max),
                        f.decay + g.decay)


REGISTRY = {"phi": phi, "power": power, "zeta_n": zeta_n, "exp_decay": exp_decay}


def get_function(key: str | TestFunction) -> TestFunction:
    """Parse 'phi', 'power(0.5)', 'zeta_n(4)' or 'exp_decay(1)'."""
    if isinstance(key, TestFunction):
        return key
    m = re.fullmatch(r"\s*(\w+)\s*(?:\(([^)]*)\))?\s*", key)
    if not m or m.group(1) not in REGISTRY:
        raise KeyError(f"unknown test function {key!r}")
    args = [float(a) for a in m.group(2).split(",")] if m.group(2) else []
    return REGISTRY[m.group(1)](*args)


def hinf_norm(f: TestFunction, psi: float, samples: int = 4096, span: float = 1e8) -> float:
    """sup |f| on the sector of angle psi, by sampling both boundary rays."""
    if psi > f.psi_max + 1e-12:
        raise ValueError(f"{f.name} is not bounded on the sector of angle {psi}")
    r = np.concatenate([[0.0], np.geomspace(1 / span, span, samples)])
    z = np.concatenate([r * np.exp(1j * psi), r * np.exp(-1j * psi)])
    with np.errstate(all="ignore"):
        v = np.abs(f(z))
    return float(np.nanmax(v))


# contours

@dataclass(frozen=True)
class Contour:
    theta: float
    r_min: float = 1e-6
    r_max: float = 1e6
    nodes_per_ray: int = 400

    def __post_init__(self):
        if not 0 < self.theta < np.pi:
            raise ContourError("contour angle must lie in (0, pi)")
        if not 0 < self.r_min < self.r_max:
            raise ContourError("need 0 < r_min < r_max")
        if self.nodes_per_ray < 4:
            raise ContourError("need at least 4 nodes per ray")

    def nodes(self, count: int | None = None):
        """Nodes and weights w with f(T) ~ sum w f(lam) (lam - T)^{-1}.

        The boundary runs in from infinity along the upper ray and out along the lower ray.
        """
        n = count or self.nodes_per_ray
        u = np.linspace(np.log(self.r_min), np.log(self.r_max), n)
        h = u[1] - u[0]
        tw = np.full(n, h)
        tw[[0, -1]] = h / 2
        r = np.exp(u)
        e = np.exp(1j * self.theta)
        lam = np.concatenate([r * np.conj(e), r * e])
        w = np.concatenate([tw * r * np.conj(e), -tw * r * e]) / (2j * np.pi)
        return lam, w, h

    def refined(self) -> "Contour":
        return Contour(self.theta, self.r_min, self.r_max, 2 * self.nodes_per_ray - 1)


def default_contour(rep: Rep, psi: float, exclude_zero: bool = False) -> Contour:
    omega = spectral_angle(rep, exclude_zero)
    scale = spectrum_scale(rep, exclude_zero)
    return Contour(0.5 * (omega + psi), 1e-6 * scale, 1e6 * scale, 400)


def _check_admissible(rep: Rep, theta: float, psi: float):
    omega = spectral_angle(rep)
    if not omega < theta < psi:
        raise ContourError(f"contour angle {theta:.6g} outside the admissible window ({omega:.6g}, {psi:.6g})")


# quadrature core

def _plain_norm(data: np.ndarray, kind: str) -> float:
    if kind == "mult":
        if data.shape[1] == data.shape[2] == 1:
            return float(np.max(np.abs(data)))
        return float(np.max(np.linalg.norm(data, 2, axis=(1, 2))))
    return float(np.linalg.norm(data, 2))


def _resolvents(rep: Rep, lam: np.ndarray) -> np.ndarray:
    """(lam_j - T)^{-1} stacked over nodes; raises at numerically singular nodes."""
    m = rep.data
    k = m.shape[-1]
    eye = np.eye(k)
    if rep.kind == "mult":
        Z = lam[:, None, None, None] * eye - m[None]
    else:
        Z = lam[:, None, None] * eye - m[None]
    with np.errstate(all="ignore"):
        R = np.linalg.inv(Z)
    size = np.max(np.abs(R), axis=(-2, -1)) * np.maximum(np.max(np.abs(Z), axis=(-2, -1)), 1e-300)
    bad = ~np.isfinite(size) | (size > 1 / SINGULAR_RTOL)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        point = None
        if rep.kind == "mult":
            point = tuple(int(v) for v in rep.grid.xi[:, idx[1]])
        raise SingularResolvent(f"resolvent singular at contour node {lam[idx[0]]:.6g}", point=point)
    return R


def _chunked_sum(rep: Rep, lam, coeff, extra: Callable | None = None):
    """sum_j coeff_j R(lam_j) [extra(lam_j)] in node chunks."""
    per = rep.data.size
    chunk = max(1, int(2e6 // max(per, 1)))
    total = np.zeros(rep.data.shape, dtype=complex)
    for s in range(0, len(lam), chunk):
        R = _resolvents(rep, lam[s:s + chunk])
        if extra is not None:
            R = R @ extra(lam[s:s + chunk])
        c = coeff[s:s + chunk]
        total += np.tensordot(c, R, axes=(0, 0))
    return total


def _end_sizes(rep: Rep, lam, fv, n, extra=None):
    """Integrand sizes per unit log radius at the two outermost nodes of each end of each ray."""
    idx = np.array([0, 1, n - 2, n - 1, n, n + 1, 2 * n - 2, 2 * n - 1])
    R = _resolvents(rep, lam[idx])
    if extra is not None:
        R = R @ extra(lam[idx])
    fvals = fv(lam[idx])
    return [abs(fj) * abs(l) * _plain_norm(Rj, rep.kind) / (2 * np.pi) for fj, l, Rj in zip(fvals, lam[idx], R)]


def _tail(g, h) -> float:
    """Power-law extrapolation of the integrand beyond both truncation radii."""
    total = 0.0
    for lo0, lo1, hi1, hi0 in (g[0:4], g[4:8]):
        if lo0 > 0:
            slope = np.log(lo1 / lo0) / h if lo1 > 0 else -np.inf
            total += lo0 / slope if slope > 0 else np.inf
        if hi0 > 0:
            slope = np.log(hi0 / hi1) / h if hi1 > 0 else np.inf
            total += hi0 / -slope if slope < 0 else np.inf
    return total


class Computed(Fixed):
    """Result of a contour quadrature with its error budget."""

    def __init__(self, rep: Rep, in_tag: SpaceTag, out_tag: SpaceTag, error: float, change: float,
                 tail: float, contour: Contour, function: str):
        super().__init__(rep, in_tag, out_tag)
        self.error, self.change, self.tail = error, change, tail
        self.contour, self.function = contour, function


def _quadrature(rep: Rep, fv: Callable, contour: Contour, extra=None):
    fine = contour.refined()
    lam, w, h = fine.nodes()
    coeff = w * fv(lam)
    I_fine = _chunked_sum(rep, lam, coeff, extra)
    # the coarse rule uses every other fine node with doubled weight
    n = fine.nodes_per_ray
    lam_c, w_c, hc = contour.nodes()
    coarse_idx = np.concatenate([np.arange(0, n, 2), n + np.arange(0, n, 2)])
    I_coarse = _chunked_sum(rep, lam[coarse_idx], w_c * fv(lam_c), extra)
    change = _plain_norm(I_fine - I_coarse, rep.kind)
    tail = _tail(_end_sizes(rep, lam, fv, n, extra), h)
    return I_fine, change, tail


def dunford(op: Operator | Rep, f: TestFunction | str, contour: Contour | None = None, grid=None,
            psi: float | None = None, check: bool = True) -> Computed:
    """f(T) by trapezoidal quadrature in log radius along the boundary of a sector.

    With check=False the node-doubling test is skipped and only reported.
    """
    f = get_function(f)
    rep = op if isinstance(op, Rep) else op.rep(grid)
    psi = f.psi_max if psi is None else psi
    contour = contour or default_contour(rep, psi)
    _check_admissible(rep, contour.theta, min(psi, f.psi_max))
    with np.errstate(all="ignore"):
        I, change, tail = _quadrature(rep, f, contour)
    if not np.isfinite(tail):
        raise NonConvergent(f"{f.name}: integrand does not decay at a truncation radius")
    atol = 1e-10 * max(1.0, _plain_norm(I, rep.kind))
    if check and change > max(10 * tail, atol):
        raise NonConvergent(f"{f.name}: node doubling changed the result by {change:.3g} (tail {tail:.3g})")
    tin = op.in_tag if isinstance(op, Operator) else SpaceTag(components=rep.data.shape[-1])
    tout = op.out_tag if isinstance(op, Operator) else tin
    return Computed(Rep(rep.kind, I, rep.grid), tin, tout, change + tail, change, tail, contour, f.name)


@dataclass
class HinfReport:
    value: float
    ratios: dict
    argmax: str
    psi: float


def hinf_bound(op: Operator, family, psi: float, contour: Contour | None = None, grid=None,
               tag: SpaceTag | None = None) -> HinfReport:
    """max over the family of ||f(T)|| / ||f||_inf on the sector; a lower bound on the calculus constant."""
    rep = op.rep(grid)
    tag = tag or op.in_tag
    ratios = {}
    for f in family:
        f = get_function(f)
        try:
            res = dunford(rep, f, contour, psi=psi)
        except (SingularResolvent, NonConvergent, ContourError) as exc:
            exc.function = f.name
            raise type(exc)(f"{f.name}: {exc}") from exc
        ratios[f.name] = rep_norm(res.rep(grid), tag, tag).value / hinf_norm(f, psi)
    name = max(ratios, key=ratios.get)
    return HinfReport(ratios[name], ratios, name, psi)


def stress_fixture(size: int, ratio: float = 1.5, gap: int = 6):
    """Operator with geometric spectrum on a badly conditioned basis, and functions that expose it.

    T = S diag(ratio^k) S^{-1} with S = I + lower shift. The functions are Blaschke products whose zeros sit
    between every gap-th pair of eigenvalues, cut off at both ends.
    """
    if size < 2:
        raise ValueError("fixture size must be at least 2")
    lam = ratio ** (np.arange(size) - (size - 1) / 2)
    S = np.eye(size) + np.eye(size, k=-1)
    T = S @ np.diag(lam) @ np.linalg.inv(S)
    mids = np.sqrt(lam[:-1] * lam[1:])
    family = [blaschke(mids[g // 2::g], 10 * lam.max()) for g in sorted({max(gap // 2, 1), gap})]
    contour = Contour(np.pi / 4, lam.min() * 1e-6, lam.max() * 1e6, 600)
    return Dense(T), family, contour


# shifted calculus

@dataclass
class ShiftedResidual:
    norm: float
    scaled: Rep
    identity_error: float
    quadrature_error: float


def shifted_calculus_residual(op: Operator, mu0: float, f: TestFunction | str, contour: Contour | None = None,
                              grid=None) -> ShiftedResidual:
    """Integral of f(lam) (lam - T)^{-1} (lam - mu0 - T)^{-1}, oriented so that
    f(T) - f(mu0 + T) = mu0 / (2 pi i) times it."""
    if mu0 < 0:
        raise ValueError("shift must be nonnegative")
    f = get_function(f)
    rep = op.rep(grid)
    k = rep.data.shape[-1]
    shifted = Rep(rep.kind, rep.data + mu0 * np.eye(k), rep.grid)
    contour = contour or default_contour(rep, f.psi_max)
    _check_admissible(rep, contour.theta, f.psi_max)

    def second(lam):
        return _resolvents(shifted, lam)

    with np.errstate(all="ignore"):
        I, change, tail = _quadrature(rep, f, contour, extra=second)
    # the quadrature weights carry 1/(2 pi i) and the positive orientation; flip and rescale
    R = -(2j * np.pi) * I
    scaled = -mu0 * I
    fT = dunford(rep, f, contour)
    fS = dunford(shifted, f, contour)
    gap = _plain_norm(fT.rep().data - fS.rep().data - scaled, rep.kind)
    return ShiftedResidual(_plain_norm(R, rep.kind), Rep(rep.kind, scaled, rep.grid), gap,
                           2 * np.pi * (change + tail) + fT.error + fS.error)


def zeta_approximation(op: Operator, ns, v: GridVector, grid=None, tag: SpaceTag | None = None):
    """Norms of zeta_n(T) and errors ||zeta_n(T) v - v|| over the indices ns."""
    rep = op.rep(grid or v.grid)
    tag = tag or op.in_tag
    norms, errors = [], []
    for n in ns:
        Z = dunford(rep, zeta_n(n)).rep(v.grid)
        norms.append(rep_norm(Z, tag, tag).value)
        w = GridVector(v.grid, np.einsum("kij,jk->ik", Z.data, v.freq)) if Z.kind == "mult" else \
            GridVector(v.grid, (Z.data @ v.freq.ravel()).reshape(v.freq.shape))
        errors.append(norm(w - v, tag))
    return norms, errors


# fractional powers

def _batched_power(data: np.ndarray, gamma: float, zero_ok: np.ndarray | None = None) -> np.ndarray:
    """Principal power per mode: eigendecomposition when well conditioned, Schur-Pade otherwise."""
    k = data.shape[-1]
    out = np.zeros_like(data, dtype=complex)
    w, V = np.linalg.eig(data)
    for j in range(data.shape[0]):
        m, ev = data[j], w[j]
        scale = max(np.max(np.abs(ev)), np.linalg.norm(m, 2), 1e-300)
        small = np.abs(ev) <= 1e-13 * scale
        if np.all(np.abs(m) == 0):
            if gamma < 0 and not (zero_ok is not None and zero_ok[j]):
                raise BranchCut("negative power of a vanishing symbol")
            continue
        if np.any(small):
            if zero_ok is not None and zero_ok[j] and gamma > 0:
                if np.linalg.norm(m, 2) > 1e-13 and np.linalg.cond(V[j]) > 1e8:
                    raise BranchCut("fractional power of a nilpotent mode")
                continue
            raise BranchCut("symbol has a zero eigenvalue away from the zero mode")
        if np.any((ev.real < 0) & (np.abs(ev.imag) <= 1e-14 * np.abs(ev))):
            raise BranchCut("spectrum touches the negative real axis")
        if k == 1:
            out[j] = np.exp(gamma * np.log(m))
        elif np.linalg.cond(V[j]) < 1e8:
            out[j] = V[j] @ np.diag(np.exp(gamma * np.log(ev))) @ np.linalg.inv(V[j])
        else:
            out[j] = fractional_matrix_power(m, gamma)
    return out


def power_rep(rep: Rep, gamma: float, mean_free: bool = False) -> Rep:
    if rep.kind == "mult":
        zero_ok = np.zeros(rep.data.shape[0], dtype=bool)
        zero_ok[0] = True
        data = rep.data.copy()
        if mean_free:
            data[0] = 0
        return Rep("mult", _batched_power(data, gamma, zero_ok), rep.grid)
    if rep.data.shape[0] > DENSE_LIMIT:
        raise SizeGuard("dense fractional power above the size limit")
    return Rep("dense", _batched_power(rep.data[None], gamma)[0], rep.grid)


@dataclass
class Bracket:
    lower: float
    upper: float
    samples: int
    theta: float


def frac_domain_equivalence(block: BlockOperator, theta: float, samples: int = 64, seed: int = 0) -> Bracket:
    """min and max of ||calA^theta v|| / ||calD^theta v|| over random samples."""
    if not -0.5 < theta < 1:
        raise ValueError("theta must lie in (-1/2, 1)")
    tag = block.tag
    if theta < 0 and tag.p != 2:
        raise ValueError("negative powers are supported in the Hilbert setting only")
    grid = block.grid
    full, diag = block.full.rep(grid), block.diagonal.rep(grid)
    mean_free = full.kind == "mult" and (np.linalg.matrix_rank(full.data[0]) < full.data.shape[-1]
                                         or np.linalg.matrix_rank(diag.data[0]) < diag.data.shape[-1])
    PA, PD = power_rep(full, theta, mean_free), power_rep(diag, theta, mean_free)
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(samples):
        if full.kind == "mult":
            v = GridVector.random(grid, tag.components, rng, decay=1.0)
            if mean_free:
                v = project_zero_mode(v)
            a = GridVector(grid, np.einsum("kij,jk->ik", PA.data, v.freq))
            d = GridVector(grid, np.einsum("kij,jk->ik", PD.data, v.freq))
            na, nd = norm(a, tag), norm(d, tag)
        else:
            v = rng.standard_normal(full.data.shape[0]) + 1j * rng.standard_normal(full.data.shape[0])
            na, nd = np.linalg.norm(PA.data @ v), np.linalg.norm(PD.data @ v)
        if nd > 0:
            ratios.append(na / nd)
    if not ratios:
        raise ValueError("every sample fell in the kernel")
    return Bracket(float(min(ratios)), float(max(ratios)), len(ratios), theta)


# maximal regularity probe

@dataclass(frozen=True)
class ForcingEnsemble:
    """Forcings sum_j g_j(t) v_j with random spatial profiles v_j and time profiles vanishing at t = 0."""
    members: int = 4
    profiles: tuple[str, ...] = ("sine", "sine2")
    decay: float = 1.0
    seed: int = 0


def _time_profile(name: str, t: np.ndarray, T_end: float) -> np.ndarray:
    if name == "sine":
        return np.sin(np.pi * t / T_end)
    if name == "sine2":
        return np.sin(2 * np.pi * t / T_end)
    if name == "const":
        return np.ones_like(t)
    raise ValueError(f"unknown time profile {name!r}")


@dataclass
class MaxRegReport:
    ratio: float
    ratios: list
    steps: int
    T_end: float
    p: float


def _phi_matrices(M: np.ndarray, h: float):
    """exp(-hM), h phi1(-hM), h phi2(-hM) per mode from one augmented exponential."""
    n, k, _ = M.shape
    big = np.zeros((n, 3 * k, 3 * k), dtype=complex)
    eye = np.eye(k)
    big[:, :k, :k] = -h * M
    big[:, :k, k:2 * k] = eye
    big[:, k:2 * k, 2 * k:] = eye
    E = expm(big)
    return E[:, :k, :k], h * E[:, :k, k:2 * k], h * E[:, :k, 2 * k:]


def _time_norm(values: np.ndarray, h: float, p: float) -> float:
    w = np.full(len(values), h)
    w[[0, -1]] = h / 2
    return float(np.sum(w * values ** p) ** (1 / p))


def maxreg_probe(block: BlockOperator | Operator, p: float = 2.0, ensemble: ForcingEnsemble | None = None,
                 T_end: float = 1.0, steps: int = 200, grid=None, forcings=None) -> MaxRegReport:
    """Solve x' + calA x = f from zero by exponential time differencing and compare time norms."""
    ensemble = ensemble or ForcingEnsemble()
    if isinstance(block, BlockOperator):
        op, grid, tag = block.full, block.grid, block.tag.with_p(p)
    else:
        op, tag = block, block.in_tag.with_p(p)
    rep = op.rep(grid)
    omega = spectral_angle(rep, exclude_zero=rep.kind == "mult")
    if omega >= np.pi / 2 - 1e-9:
        raise AngleTooLarge(f"spectral angle {omega:.6g} is not below pi/2")
    if rep.kind == "dense":
        if rep.data.shape[0] > 512:
            raise SizeGuard("dense probe above 512 unknowns")
        M = rep.data[None]
    else:
        M = rep.data
    h = T_end / steps
    E, P1, P2 = _phi_matrices(M, h)
    t = np.linspace(0, T_end, steps + 1)
    rng = np.random.default_rng(ensemble.seed)
    k = M.shape[-1]

    def spatial(c):  # c: (N, k) coefficients
        if rep.kind == "dense":
            return float(np.sum(np.abs(c) ** p) ** (1 / p))
        return norm(GridVector(grid, c.T), tag)

    if forcings is None:
        forcings = []
        for _ in range(ensemble.members):
            prof = []
            for name in ensemble.profiles:
                if rep.kind == "mult":
                    v = GridVector.random(grid, k, rng, decay=ensemble.decay).freq.T
                else:
                    v = (rng.standard_normal(k) + 1j * rng.standard_normal(k))[None]
                prof.append((name, v))
            forcings.append(prof)
    ratios = []
    for prof in forcings:
        F = sum(_time_profile(name, t, T_end)[:, None, None] * v[None] for name, v in prof)
        x = np.zeros(M.shape[:2], dtype=complex)
        dx, Ax, fn = [], [], []
        for i in range(steps + 1):
            Mx = np.einsum("kij,kj->ki", M, x)
            dx.append(spatial(F[i] - Mx))
            Ax.append(spatial(Mx))
            fn.append(spatial(F[i]))
            if i < steps:
                x = (np.einsum("kij,kj->ki", E, x) + np.einsum("kij,kj->ki", P1, F[i])
                     + np.einsum("kij,kj->ki", P2, F[i + 1] - F[i]))
        den = _time_norm(np.array(fn), h, p)
        ratios.append((_time_norm(np.array(dx), h, p) + _time_norm(np.array(Ax), h, p)) / den)
    return MaxRegReport(float(max(ratios)), ratios, steps, T_end, p)
