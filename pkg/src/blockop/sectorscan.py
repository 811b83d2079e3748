"""Resolvent sweeps over sectors, angle estimation and Rademacher bounds."""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .blockfact import NotInvertible, m_factor
from .gridspace import FreqGrid, GridVector, SpaceTag
from .opcore import (COND_GUARD, SINGULAR_RTOL, Inverse, Operator, Rep, SingularResolvent,
                     rep_norm, weighted_symbol)

DEFAULT_SEED = 0x5EC70A
ENUMERATION_CAP = 10


class Inconclusive(RuntimeError):
    pass


@dataclass(frozen=True)
class Sector:
    psi: float

    def __post_init__(self):
        if not 0 < self.psi < np.pi:
            raise ValueError("sector angle must lie in (0, pi)")

    def contains(self, z: complex) -> bool:
        return z != 0 and abs(np.angle(z)) < self.psi

    def in_complement(self, z: complex) -> bool:
        return z == 0 or abs(np.angle(z)) > self.psi


@dataclass(frozen=True)
class SweepSpec:
    rays: int = 16
    theta_min: float = np.pi / 2
    theta_max: float = np.pi
    r_min: float = 1e-3
    r_max: float = 1e3
    radii: int = 25
    scale: float | None = None
    both_sides: bool = True

    def angles(self) -> np.ndarray:
        th = np.linspace(self.theta_min, self.theta_max, self.rays)
        if self.both_sides:
            th = np.concatenate([th, -th[(th > 0) & (th < np.pi)]])
        return th

    def radius_values(self, scale: float) -> np.ndarray:
        return scale * np.geomspace(self.r_min, self.r_max, self.radii)


def angle_spec(rays: int = 256, r_min: float = 1e-3, r_max: float = 1e3, radii: int = 25) -> SweepSpec:
    """Ray set 0, pi/rays, ..., pi on both half planes, for angle estimation."""
    return SweepSpec(rays=rays + 1, theta_min=0.0, theta_max=np.pi, r_min=r_min, r_max=r_max, radii=radii)


def spectrum_scale(rep: Rep, exclude_zero: bool = False) -> float:
    if rep.kind == "mult":
        data = rep.data[1:] if exclude_zero else rep.data
        ev = np.abs(np.linalg.eigvals(data)).ravel()
    else:
        ev = np.abs(np.linalg.eigvals(rep.data))
    ev = ev[ev > 1e-12 * max(1.0, ev.max(initial=0.0))]
    return float(np.median(ev)) if ev.size else 1.0


def spectral_angle(rep: Rep, exclude_zero: bool = False) -> float:
    """Largest |arg| over the nonzero spectrum on the grid."""
    if rep.kind == "mult":
        data = rep.data[1:] if exclude_zero else rep.data
        ev = np.linalg.eigvals(data).ravel()
    else:
        ev = np.linalg.eigvals(rep.data)
    ev = ev[np.abs(ev) > 1e-12 * max(1.0, np.abs(ev).max(initial=0.0))]
    return float(np.max(np.abs(np.angle(ev)), initial=0.0))


class ResolventEvaluator:
    """Evaluates ||lam (lam - T)^{-1} - shift*I|| for one evaluated operator."""

    def __init__(self, rep: Rep, tag_in: SpaceTag, tag_out: SpaceTag | None = None,
                 exclude_zero: bool = False, subtract_identity: bool = False):
        self.rep = rep
        self.tag_in = tag_in
        self.tag_out = tag_out or tag_in
        self.exclude_zero = exclude_zero
        self.subtract = subtract_identity
        if rep.kind == "mult":
            self.scale = np.linalg.norm(rep.data, 2, axis=(1, 2))
        else:
            self.scale = float(np.linalg.norm(rep.data, 2)) if rep.data.size else 0.0

    def operator(self, lam: complex) -> Rep:
        """lam (lam - T)^{-1}, or T (lam - T)^{-1} when subtracting the identity."""
        r = self.rep
        k = r.data.shape[-1]
        if r.kind == "mult":
            Mx = lam * np.eye(k) - r.data
            s = np.linalg.svd(Mx, compute_uv=False)
            bad = s[:, -1] <= SINGULAR_RTOL * np.maximum(np.maximum(abs(lam), self.scale), 1e-300)
            if self.exclude_zero:
                bad[0] = False
                Mx = Mx.copy()
                Mx[0] = np.eye(k)
            if np.any(bad):
                j = int(np.argmax(bad))
                raise SingularResolvent("singular", point=tuple(int(v) for v in r.grid.xi[:, j]))
            R = lam * np.linalg.inv(Mx)
        else:
            Mx = lam * np.eye(k) - r.data
            s = np.linalg.svd(Mx, compute_uv=False)
            c = s[0] / s[-1] if s[-1] > 0 else np.inf
            small = s[-1] <= SINGULAR_RTOL * max(abs(lam), self.scale, 1e-300)
            if small or not np.isfinite(c) or c > COND_GUARD:
                raise SingularResolvent("singular", cond=c)
            R = lam * np.linalg.inv(Mx)
        if self.subtract:
            R = R - np.eye(k)
        return Rep(r.kind, R, r.grid)

    def __call__(self, lam: complex) -> float:
        try:
            R = self.operator(lam)
        except SingularResolvent:
            return np.inf
        return rep_norm(R, self.tag_in, self.tag_out, exclude_zero=self.exclude_zero).value


@dataclass
class ResolventSweep:
    rays: np.ndarray
    radii: np.ndarray
    values: np.ndarray
    singular: np.ndarray
    refined: np.ndarray
    method: str
    scale: float = 1.0
    argmax: list = field(default_factory=list)

    def rows(self):
        for i, th in enumerate(self.rays):
            for j, r in enumerate(self.radii):
                lam = r * np.exp(1j * th)
                yield th, r, lam.real, lam.imag, self.values[i, j], bool(self.singular[i, j])

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("theta,radius,re_lambda,im_lambda,norm,singular\n")
            for th, r, re, im, v, s in self.rows():
                fh.write(f"{th:.17g},{r:.17g},{re:.17g},{im:.17g},{v:.17g},{int(s)}\n")


def _refine_ray(ev: ResolventEvaluator, theta: float, radii: np.ndarray, vals: np.ndarray) -> tuple[float, float]:
    """Continuous maximization in log r around local maxima of the samples."""
    best, where = float(np.max(vals)), float(radii[int(np.argmax(vals))])
    if not np.isfinite(best):
        return best, where
    u = np.log(radii)
    cand = [i for i in range(len(vals))
            if (i == 0 or vals[i] >= vals[i - 1]) and (i == len(vals) - 1 or vals[i] >= vals[i + 1])]
    cand = sorted(cand, key=lambda i: -vals[i])[:4]
    for i in cand:
        lo, hi = u[max(i - 1, 0)], u[min(i + 1, len(u) - 1)]
        if hi <= lo:
            continue
        f = lambda t: -ev(np.exp(t) * np.exp(1j * theta))
        with np.errstate(invalid="ignore"):
            res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        v = -res.fun
        if v > best or not np.isfinite(v):
            best, where = v, float(np.exp(res.x))
    return best, where


def sweep(op: Operator | Rep, rays=None, radii=None, grid: FreqGrid | None = None, tag: SpaceTag | None = None,
          exclude_zero: bool = False, refine: bool = True, workers: int = 1, subtract_identity: bool = False,
          spec: SweepSpec | None = None) -> ResolventSweep:
    """Table of ||lam (lam - T)^{-1}|| over rays x radii (singular cells flagged)."""
    rep = op if isinstance(op, Rep) else op.rep(grid)
    tag = tag or (op.in_tag if isinstance(op, Operator) else SpaceTag(components=rep.data.shape[-1]))
    spec = spec or SweepSpec()
    scale = spec.scale or spectrum_scale(rep, exclude_zero)
    rays = spec.angles() if rays is None else np.asarray(rays, dtype=float)
    radii = spec.radius_values(scale) if radii is None else np.asarray(radii, dtype=float)
    ev = ResolventEvaluator(rep, tag, tag, exclude_zero, subtract_identity)

    def one_ray(theta):
        vals = np.array([ev(r * np.exp(1j * theta)) for r in radii])
        if refine:
            ref, where = _refine_ray(ev, theta, radii, vals)
        else:
            ref, where = float(np.max(vals)), float(radii[int(np.argmax(vals))])
        return vals, ref, where

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one_ray, rays))
    else:
        out = [one_ray(t) for t in rays]
    values = np.stack([o[0] for o in out])
    singular = ~np.isfinite(values)
    method = "exact" if tag.p == 2 else "lower-bound estimate"
    return ResolventSweep(rays, radii, values, singular, np.array([o[1] for o in out]), method, scale,
                          [o[2] for o in out])


@dataclass
class AngleEstimate:
    omega_hat: float
    bound_at: dict
    blowup_flags: dict
    bracket: tuple[float, float]
    spacing: float


def estimate_angle(sw: ResolventSweep, stability_window: float = 10.0, angular_factor: float = 1.5) -> AngleEstimate:
    """Smallest sampled |theta| such that every ray at or beyond it is finite and radius-stable.

    A ray also counts as blowing up when its sup exceeds angular_factor * C0 / sin(spacing), where C0 is
    the best sup over all rays: a normal operator never exceeds 1/sin(distance to its spectrum).
    """
    absth = np.round(np.abs(sw.rays), 14)
    levels = np.unique(absth)
    if len(levels) < 8:
        raise ValueError("angle estimation needs at least 8 ray angles")
    if np.log10(sw.radii.max() / sw.radii.min()) < 3 - 1e-9:
        raise ValueError("angle estimation needs at least 3 decades of radii")
    spacing = float(np.max(np.diff(levels)))
    finite = sw.refined[np.isfinite(sw.refined)]
    base = max(1.0, float(finite.min())) if finite.size else 1.0
    cap = angular_factor * base / np.sin(min(spacing, np.pi / 2))
    logr = np.log10(sw.radii)
    outer = logr >= logr.max() - 1
    prev = (logr < logr.max() - 1) & (logr >= logr.max() - 2)
    inner = logr <= logr.min() + 1
    nxt = (logr > logr.min() + 1) & (logr <= logr.min() + 2)
    flags, sup_at = {}, {}
    for lv in levels:
        idx = np.where(absth == lv)[0]
        reasons = []
        vals = sw.values[idx]
        if sw.singular[idx].any() or not np.all(np.isfinite(sw.refined[idx])):
            reasons.append("singular")
        sup = float(np.max(sw.refined[idx]))
        if sup > cap:
            reasons.append("unbounded")
        if np.all(np.isfinite(vals)):
            if np.max(vals[:, outer]) > stability_window * max(np.max(vals[:, prev]), 1e-300):
                reasons.append("growth as r grows")
            if np.max(vals[:, inner]) > stability_window * max(np.max(vals[:, nxt]), 1e-300):
                reasons.append("growth as r shrinks")
        flags[float(lv)] = reasons
        sup_at[float(lv)] = sup
    bad = [lv for lv in levels if flags[float(lv)]]
    lower = max(bad) if bad else 0.0
    good = [lv for lv in levels if lv > lower] if bad else list(levels)
    if not good:
        raise Inconclusive("no sampled ray is stable")
    omega = float(min(good))
    bound_at, running = {}, 0.0
    for lv in sorted(levels, reverse=True):
        running = max(running, sup_at[float(lv)])
        bound_at[float(lv)] = running
    return AngleEstimate(omega, dict(sorted(bound_at.items())), flags, (float(lower), omega), spacing)


# R-bounds

@dataclass
class RBoundEstimate:
    value: float
    method: str
    family_size: int
    vector_strategy: str
    closed_form: float | None = None
    samples: int | None = None
    seed: int | None = None
    single_norms: list = field(default_factory=list)


def _family_stack(family, grid, tag_in, tag_out):
    """Weighted symbols stacked as (m, N, k_out, k_in); a dense member counts as a single mode."""
    reps = [f if isinstance(f, Rep) else f.rep(grid) for f in family]
    kinds = {r.kind for r in reps}
    if len(kinds) != 1:
        raise ValueError("family members must share their representation kind")
    if reps[0].kind == "mult":
        return np.stack([weighted_symbol(r, tag_in, tag_out) for r in reps]), "mult", reps[0].grid
    return np.stack([np.asarray(r.data)[None] for r in reps]), "dense", None


class _Norm:
    def __init__(self, kind, grid, p):
        self.kind, self.grid, self.p = kind, grid, p

    def sq(self, y):
        """Squared norms of a stack of vectors y with shape (S, N, k)."""
        if self.p == 2:
            return np.sum(np.abs(y) ** 2, axis=(1, 2))
        if self.kind == "mult":
            out = []
            for yy in y:
                f = GridVector(self.grid, yy.T).physical().reshape(yy.shape[1], -1)
                out.append(np.mean(np.sqrt(np.sum(np.abs(f) ** 2, axis=0)) ** self.p) ** (2 / self.p))
            return np.array(out)
        return np.sum(np.abs(y) ** self.p, axis=(1, 2)) ** (2 / self.p)


def _sign_patterns(m, method, budget, rng):
    if method == "enumeration":
        return np.array(list(itertools.product((1.0, -1.0), repeat=m)))
    return rng.choice((-1.0, 1.0), size=(budget, m))


def rbound(family, tag: SpaceTag | None = None, method: str = "auto", budget: int = 64,
           seed: int = DEFAULT_SEED, grid: FreqGrid | None = None, tag_out: SpaceTag | None = None,
           iters: int = 30) -> RBoundEstimate:
    """Lower bound for the Rademacher bound of a finite family.

    Vectors are chosen by alternating maximization: with the signs fixed, a block power step on the
    sign-averaged Gram operator; the ratio of Rademacher averages is then re-evaluated.
    """
    family = list(family)
    m = len(family)
    if m < 1:
        raise ValueError("empty family")
    first = family[0]
    if tag is None:
        tag = first.in_tag if isinstance(first, Operator) else SpaceTag(components=np.asarray(first.data).shape[-1])
    tag_out = tag_out or tag
    if method == "auto":
        method = "enumeration" if m <= ENUMERATION_CAP else "monte-carlo"
    if method == "enumeration" and m > ENUMERATION_CAP:
        raise ValueError(f"enumeration is capped at {ENUMERATION_CAP} members")
    S, kind, g = _family_stack(family, grid, tag, tag_out)
    singles = [rep_norm(Rep("mult", Sj, g) if kind == "mult" else Rep("dense", Sj[0], None),
                        SpaceTag(p=tag.p, components=Sj.shape[-1]),
                        SpaceTag(p=tag_out.p, components=Sj.shape[-2])).value for Sj in S]
    rng = np.random.default_rng(seed)
    signs = _sign_patterns(m, method, budget, rng)
    nin, nout = _Norm(kind, g, tag.p), _Norm(kind, g, tag_out.p)
    SH = np.conj(np.swapaxes(S, -1, -2))

    def ratio(xs):
        ys = np.einsum("mkij,mkj->mki", S, xs)
        num = nout.sq(np.tensordot(signs, ys, axes=(1, 0))).sum()
        den = nin.sq(np.tensordot(signs, xs, axes=(1, 0))).sum()
        return float(np.sqrt(num / den)) if den > 0 else 0.0

    shape = (m, S.shape[1], S.shape[3])
    j = int(np.argmax(singles))
    x0 = np.zeros(shape, dtype=complex)
    norms = np.linalg.norm(S[j], 2, axis=(1, 2))
    k = int(np.argmax(norms))
    if norms[k] > 0:
        x0[j, k] = np.linalg.svd(S[j, k])[2][0].conj()
    else:
        x0[j, k, 0] = 1.0
    starts = [x0, rng.standard_normal(shape) + 1j * rng.standard_normal(shape)]
    best = 0.0
    for xs in starts:
        val = ratio(xs)
        for _ in range(iters):
            ys = np.einsum("mkij,mkj->mki", S, xs)
            sums = np.tensordot(signs, ys, axes=(1, 0))
            grad = np.einsum("mkij,mkj->mki", SH, np.tensordot(signs.T, sums, axes=(1, 0)))
            tot = np.sqrt(np.sum(np.abs(grad) ** 2))
            if tot == 0:
                break
            new = ratio(grad / tot)
            if new <= val * (1 + 1e-12):
                break
            xs, val = grad / tot, new
        best = max(best, val)
    value = max(best, max(singles))
    closed = max(singles) if tag.p == 2 and tag_out.p == 2 else None
    return RBoundEstimate(float(value), method, m, "alternating maximization from top singular vector",
                          closed, len(signs), seed if method == "monte-carlo" else None, singles)


def ray_dyadic_rbound(block, theta: float, a: float = 2.0, K: int = 6, j: int = 1, radii=None,
                      base_points: int = 4, method: str = "auto", budget: int = 64,
                      seed: int = DEFAULT_SEED) -> RBoundEstimate:
    """max over base points lam on both half-rays of R{M_j(a^k lam)^{-1} : |k| <= K}."""
    if a <= 1:
        raise ValueError("dyadic factor must exceed 1")
    radii = np.geomspace(1.0, a, base_points, endpoint=False) if radii is None else np.asarray(radii, float)
    tag = block.x1_tag if j == 1 else block.x2_tag
    best = None
    for sgn in (1, -1):
        for r in radii:
            lam = r * np.exp(1j * sgn * theta)
            fam = []
            for k in range(-K, K + 1):
                mu = a ** k * lam
                fb = m_factor(block, mu)
                Mj = fb.M1 if j == 1 else fb.M2
                try:
                    fam.append(Inverse(Mj, f"M{j}").rep(block.grid))
                except SingularResolvent:
                    raise NotInvertible(f"M{j} not invertible at lam={lam}, k={k}") from None
            est = rbound(fam, tag, method, budget, seed, block.grid)
            if best is None or est.value > best.value:
                best = est
    best.vector_strategy += f"; a={a}, K={K}"
    return best


@dataclass
class SectorConstants:
    N_S: float
    N_R: RBoundEstimate
    argmax: complex
    psi: float


def sector_constants(op: Operator, psi: float, spec: SweepSpec | None = None, grid: FreqGrid | None = None,
                     tag: SpaceTag | None = None, exclude_zero: bool = False, budget: int = 32,
                     seed: int = DEFAULT_SEED) -> SectorConstants:
    """Sampled sup of ||T (lam - T)^{-1}|| over the sector complement, plus its R-bound."""
    Sector(psi)
    spec = spec or SweepSpec(theta_min=psi)
    if spec.theta_min < psi:
        raise ValueError("sweep rays must lie outside the sector")
    rep = op.rep(grid)
    tag = tag or op.in_tag
    scale = spec.scale or spectrum_scale(rep, exclude_zero)
    ev = ResolventEvaluator(rep, tag, tag, exclude_zero, subtract_identity=True)
    fam, best, arg = [], -1.0, 0j
    for th in spec.angles():
        for r in spec.radius_values(scale):
            lam = r * np.exp(1j * th)
            R = ev.operator(lam)
            if exclude_zero and R.kind == "mult":
                R = Rep("mult", np.where(np.arange(R.data.shape[0])[:, None, None] == 0, 0, R.data), R.grid)
            v = rep_norm(R, tag, tag).value
            fam.append(R)
            if v > best:
                best, arg = v, lam
    NR = rbound(fam, tag, "auto", budget, seed, grid)
    return SectorConstants(float(best), NR, complex(arg), psi)
