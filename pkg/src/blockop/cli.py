"""Scenario runner: `blockop validate|run|plot`."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .blockfact import (assemble_block, consistency_check, engel_residual, factorization_residual,
                        kernel_split, m_factor, reassembled_apply, relative_bounds, resolvent_consistency)
from .expr import ExprError, parse_symbol
from .funcalc import (Contour, ForcingEnsemble, dunford, frac_domain_equivalence, get_function, hinf_bound,
                      maxreg_probe, shifted_calculus_residual)
from .gridspace import GridVector, SpaceTag, make_grid
from .modelzoo import MODELS, build_model
from .opcore import Inverse, Multiplier, Rep, apply, lizorkin_certificate, rep_norm
from .perturbkit import (dissipativity_check, fractional_relation_check, gh_criterion, j_symmetry_check,
                         perturbation_constants, smallness_check)
from .sectorscan import (SweepSpec, angle_spec, estimate_angle, ray_dyadic_rbound, rbound, sector_constants,
                         spectrum_scale, sweep)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_TASK, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[str]):
        super().__init__("\n".join(diagnostics))
        self.diagnostics = diagnostics


# parameter converters

def _complex(v) -> complex:
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, str):
        return complex(v.replace(" ", "").replace("i", "j"))
    if isinstance(v, bool):
        raise TypeError("boolean is not a number")
    return complex(v)


def _number(v) -> float:
    if isinstance(v, bool):
        raise TypeError("boolean is not a number")
    return float(v)


def _integer(v) -> int:
    if isinstance(v, bool) or int(v) != v:
        raise TypeError("expected an integer")
    return int(v)


def _flag(v) -> bool:
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _text(v) -> str:
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _texts(v) -> list[str]:
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise TypeError("expected a list of strings")
    return list(v)


def _integers(v) -> list[int]:
    if not isinstance(v, list):
        raise TypeError("expected a list of integers")
    return [_integer(x) for x in v]


def _positive(x):
    return x > 0


def _angle(x):
    return 0 < x <= math.pi


@dataclass(frozen=True)
class Param:
    convert: object
    default: object = None
    check: object = None
    hint: str = ""


PI = math.pi
TASKS: dict[str, dict[str, Param]] = {
    "factorization-check": {"samples": Param(_integer, 20, _positive, "positive"),
                            "psi": Param(_number, PI / 2, _angle, "in (0, pi]")},
    "relative-bounds": {"samples": Param(_integer, 200, _positive, "positive")},
    "sweep": {"rays": Param(_integer, 16, _positive, "positive"), "theta_min": Param(_number, PI / 2),
              "theta_max": Param(_number, PI), "r_min": Param(_number, 1e-3, _positive, "positive"),
              "r_max": Param(_number, 1e3, _positive, "positive"), "radii": Param(_integer, 25, _positive, "positive"),
              "exclude_zero": Param(_flag, False), "refine": Param(_flag, True)},
    "angle": {"rays": Param(_integer, 64, lambda x: x >= 8, ">= 8"), "radii": Param(_integer, 25, _positive),
              "r_min": Param(_number, 1e-3, _positive, "positive"), "r_max": Param(_number, 1e3, _positive),
              "stability_window": Param(_number, 10.0, lambda x: x > 1, "> 1"),
              "angular_factor": Param(_number, 1.5, lambda x: x > 1, "> 1"), "exclude_zero": Param(_flag, False)},
    "rbound": {"theta": Param(_number, PI / 2, _angle, "in (0, pi]"), "radii": Param(_integer, 8, _positive),
               "r_min": Param(_number, 1e-2, _positive), "r_max": Param(_number, 1e2, _positive),
               "budget": Param(_integer, 64, _positive), "method": Param(_text, "auto",
                                                                          lambda x: x in ("auto", "enumeration",
                                                                                          "monte-carlo"))},
    "ray-dyadic": {"theta": Param(_number, PI / 2, _angle, "in (0, pi]"), "a": Param(_number, 2.0, lambda x: x > 1),
                   "K": Param(_integer, 6, lambda x: x >= 0, ">= 0"), "j": Param(_integer, 1, lambda x: x in (1, 2)),
                   "budget": Param(_integer, 64, _positive)},
    "sector-constants": {"psi": Param(_number, PI / 2, _angle, "in (0, pi]"), "rays": Param(_integer, 16, _positive),
                         "radii": Param(_integer, 25, _positive), "budget": Param(_integer, 32, _positive),
                         "exclude_zero": Param(_flag, False)},
    "smallness": {"psi": Param(_number, PI / 2, _angle, "in (0, pi]"), "rays": Param(_integer, 16, _positive),
                  "radii": Param(_integer, 25, _positive), "budget": Param(_integer, 32, _positive)},
    "perturbation-constants": {"c_D": Param(_number, None, lambda x: x >= 0, ">= 0"),
                               "N_A": Param(_number, None, lambda x: x >= 0, ">= 0"),
                               "N_D": Param(_number, None, lambda x: x >= 0, ">= 0"),
                               "L": Param(_number, None, lambda x: x >= 0, ">= 0"),
                               "psi": Param(_number, PI / 2, _angle, "in (0, pi]")},
    "gh": {},
    "fractional-relations": {"delta": Param(_number, 0.25, lambda x: 0 < x < 1, "in (0, 1)"),
                             "variant": Param(_text, "plus", lambda x: x in ("plus", "minus"), "plus or minus"),
                             "samples": Param(_integer, 64, _positive)},
    "dunford": {"function": Param(_text, "phi"), "theta": Param(_number, None, _angle),
                "nodes": Param(_integer, 400, lambda x: x >= 4, ">= 4"), "r_min": Param(_number, None, _positive),
                "r_max": Param(_number, None, _positive)},
    "hinf": {"functions": Param(_texts, ["phi", "zeta_n(4)", "power(0.5)"]),
             "psi": Param(_number, PI / 2, _angle, "in (0, pi]")},
    "shifted-calculus": {"mu0": Param(_number, 1.0, lambda x: x >= 0, ">= 0"), "function": Param(_text, "phi")},
    "frac-equivalence": {"theta": Param(_number, 0.5, lambda x: -0.5 < x < 1, "in (-1/2, 1)"),
                         "samples": Param(_integer, 64, _positive)},
    "maxreg": {"p": Param(_number, 2.0, lambda x: x > 1, "> 1"), "steps": Param(_integer, 200, _positive),
               "T_end": Param(_number, 1.0, _positive), "members": Param(_integer, 4, _positive)},
    "dissipativity": {"gamma": Param(_number, 1.0, _positive, "positive"), "samples": Param(_integer, 10000, _positive)},
    "j-symmetry": {},
    "kernel-split": {"samples": Param(_integer, 8, _positive)},
    "consistency": {"p2": Param(_number, 4.0, lambda x: x > 1, "> 1"), "lam": Param(_complex, -1.0)},
    "lizorkin": {"lam": Param(_complex, -1.0), "refinements": Param(_integers, [32, 64, 128]),
                 "tol": Param(_number, 0.05, _positive)},
}

TOLERANCES = {"factorization": 1e-10, "consistency": 1e-10, "kernel_split": 1e-12}


# scenario

@dataclass
class TaskSpec:
    name: str
    id: str
    params: dict


@dataclass
class Scenario:
    d: int
    n: int
    p: float
    model: str | None
    model_params: dict
    custom: dict | None
    tasks: list[TaskSpec]
    out: str
    seed: int
    tolerances: dict
    source: str = ""
    _block: object = field(default=None, repr=False, compare=False)

    def canonical(self) -> dict:
        return {"grid": {"d": self.d, "n": self.n, "p": self.p}, "model": self.model,
                "model_params": self.model_params, "custom": self.custom,
                "tasks": [{"name": t.name, "id": t.id, "params": t.params} for t in self.tasks],
                "seed": self.seed, "tolerances": self.tolerances}

    def hash(self) -> str:
        return hashlib.sha256(dumps(self.canonical()).encode()).hexdigest()

    def block(self):
        if self._block is None:
            self._block = build_block(self)
        return self._block


def _line_of(text: str, *needles: str) -> str:
    for needle in needles:
        for i, line in enumerate(text.splitlines(), 1):
            if re.search(needle, line):
                return f" (line {i})"
    return ""


def _key_at(text: str, key: str) -> str:
    return _line_of(text, r"^\s*" + re.escape(str(key)) + r"\s*=")


def _table_at(text: str, key: str) -> str:
    return _line_of(text, r"^\s*\[*" + re.escape(str(key)))


def _tag_from(table: dict | None, components: int) -> SpaceTag:
    table = dict(table or {})
    table.setdefault("components", components)
    return SpaceTag(s=float(table.get("s", 0.0)), homogeneous=bool(table.get("homogeneous", False)),
                    components=int(table["components"]), zero_mode=table.get("zero_mode", "project"))


def build_block(sc: Scenario):
    grid = make_grid(sc.d, sc.n)
    if sc.model is not None:
        block = build_model(sc.model, grid, **sc.model_params)
    else:
        exprs = {k: parse_symbol(sc.custom[k]) for k in "ABCD"}
        t1 = _tag_from(sc.custom.get("x1"), exprs["A"].shape[1])
        t2 = _tag_from(sc.custom.get("x2"), exprs["D"].shape[1])
        want = {"A": (t1, t1), "B": (t2, t1), "C": (t1, t2), "D": (t2, t2)}
        ops = {}
        for k, e in exprs.items():
            tin, tout = want[k]
            if e.shape != (tout.components, tin.components):
                raise ExprError(f"entry {k} has shape {e.shape}, expected {(tout.components, tin.components)}")
            ops[k] = Multiplier(e, tout.components, tin.components, tin, tout, name=k)
        block = assemble_block(ops["A"], ops["B"], ops["C"], ops["D"], t1, t2, grid, name="custom")
    if sc.p != 2:
        block = block.with_p(sc.p)
    return block


def _resolve_params(name: str, raw: dict, text: str) -> tuple[dict, list[str]]:
    spec = TASKS[name]
    diags, out = [], {}
    for key in raw:
        if key in ("name", "id"):
            continue
        if key not in spec:
            diags.append(f"task {name}: unknown parameter {key!r}{_key_at(text, key)}")
    for key, prm in spec.items():
        if key not in raw:
            out[key] = prm.default
            continue
        try:
            val = prm.convert(raw[key])
        except (TypeError, ValueError) as exc:
            diags.append(f"task {name}: parameter {key}: {exc}{_key_at(text, key)}")
            continue
        if prm.check is not None and val is not None and not prm.check(val):
            diags.append(f"task {name}: parameter {key} = {raw[key]!r} out of range"
                         f"{' (' + prm.hint + ')' if prm.hint else ''}{_key_at(text, key)}")
            continue
        out[key] = val
    return out, diags


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse and fully validate a scenario; raises ConfigError with every diagnostic found."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{source}: parse error: {exc}"]) from None
    diags: list[str] = []
    known = {"grid", "model", "custom", "tasks", "out", "seed", "tolerances"}
    for key in data:
        if key not in known:
            diags.append(f"unknown top-level key {key!r}{_table_at(text, key)}")
    grid = data.get("grid", {})
    try:
        d, n = _integer(grid.get("d", 1)), _integer(grid.get("n", 64))
        p = _number(grid.get("p", 2.0))
        make_grid(d, n)
        SpaceTag(p=p)
    except (TypeError, ValueError) as exc:
        diags.append(f"grid: {exc}{_table_at(text, 'grid')}")
        d, n, p = 1, 64, 2.0
    model = data.get("model")
    custom = data.get("custom")
    name, mparams = None, {}
    if (model is None) == (custom is None):
        diags.append("exactly one of [model] or [custom] is required")
    elif model is not None:
        name = model.get("name")
        mparams = dict(model.get("params", {}))
        if name not in MODELS:
            diags.append(f"unknown model {name!r}{_key_at(text, 'name')}; known: {', '.join(MODELS)}")
    else:
        for k in "ABCD":
            if k not in custom:
                diags.append(f"custom block is missing entry {k}")
                continue
            try:
                parse_symbol(custom[k])
            except ExprError as exc:
                diags.append(f"custom.{k}: {exc}{_key_at(text, k)}")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        diags.append(f"seed must be a nonnegative integer{_key_at(text, 'seed')}")
        seed = 0
    tol = dict(TOLERANCES)
    for k, v in data.get("tolerances", {}).items():
        if k not in TOLERANCES:
            diags.append(f"unknown tolerance {k!r}{_key_at(text, k)}")
        elif isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
            diags.append(f"tolerance {k} must be a positive number{_key_at(text, k)}")
        else:
            tol[k] = float(v)
    tasks, seen = [], {}
    raw_tasks = data.get("tasks", [])
    if not isinstance(raw_tasks, list) or not raw_tasks:
        diags.append("at least one [[tasks]] entry is required")
        raw_tasks = []
    for raw in raw_tasks:
        tname = raw.get("name")
        if tname not in TASKS:
            where = _line_of(text, r"name\s*=\s*." + re.escape(str(tname)) + ".")
            diags.append(f"unknown task {tname!r}{where}")
            continue
        params, pd = _resolve_params(tname, raw, text)
        diags.extend(pd)
        seen[tname] = seen.get(tname, 0) + 1
        tid = str(raw.get("id", tname if seen[tname] == 1 else f"{tname}-{seen[tname]}"))
        tasks.append(TaskSpec(tname, tid, params))
    ids = [t.id for t in tasks]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        diags.append(f"duplicate task id {dup!r}")
    sc = Scenario(d, n, p, name, mparams, custom, tasks, str(data.get("out", "blockop-out")), seed, tol, source)
    if not diags:
        try:
            sc.block()
        except (TypeError, ValueError, ExprError) as exc:
            where = _line_of(text, r'^\s*\[model\.params\]', r'^\s*\[model\]', r'^\s*\[custom\]')
            diags.append(f"model: {exc}{where}")
    if diags:
        raise ConfigError(diags)
    return sc


def validate_config(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from None
    return parse_scenario(text, str(path))


# serialization

def _fmt(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def dumps(obj, indent: int = 0, level: int = 0) -> str:
    """JSON with floats written to 17 significant digits; complex numbers as {re, im}."""
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    sep = "," + pad if indent else ", "
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k))}: {dumps(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + pad + sep.join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + pad + sep.join(dumps(v, indent, level + 1) for v in obj) + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return dumps({"re": float(obj.real), "im": float(obj.imag)}, indent, level)
    return json.dumps(str(obj))


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])


# task runners; each returns (result, tables, plot)

@dataclass
class Ctx:
    scenario: Scenario
    seed: int
    threads: int

    @property
    def block(self):
        return self.scenario.block()

    @property
    def grid(self):
        return self.block.grid

    def rng(self):
        return np.random.default_rng(self.seed)


def _scale(ctx: Ctx) -> float:
    return spectrum_scale(ctx.block.full.rep(ctx.grid), exclude_zero=not ctx.block.dense)


def _admissible_lambdas(ctx: Ctx, count: int, psi: float) -> list[complex]:
    rng, scale = ctx.rng(), _scale(ctx)
    th = rng.uniform(psi, math.pi, count) * rng.choice((-1, 1), count)
    r = scale * 10 ** rng.uniform(-2, 2, count)
    return list(r * np.exp(1j * th))


def _random_vector(ctx: Ctx, rng, components: int | None = None):
    b = ctx.block
    k = components or b.tag.components
    if b.dense:
        return rng.standard_normal(k) + 1j * rng.standard_normal(k)
    return GridVector.random(ctx.grid, k, rng, decay=2.0)


def t_factorization(ctx, prm):
    res, eng = [], []
    rng = ctx.rng()
    for lam in _admissible_lambdas(ctx, prm["samples"], prm["psi"]):
        v = _random_vector(ctx, rng)
        res.append(factorization_residual(ctx.block, lam, v))
        eng.append(engel_residual(ctx.block, lam, v))
    tol = ctx.scenario.tolerances["factorization"]
    return {"max_residual": max(res), "max_engel_residual": max(eng), "samples": len(res),
            "passed": max(res) <= tol and max(eng) <= tol, "tolerance": tol}, {}, None


def t_relative(ctx, prm):
    r = relative_bounds(ctx.block, samples=prm["samples"], seed=ctx.seed)
    return {"c_A": r.c_A, "c_D": r.c_D, "L": r.L, "method": r.method, "samples": r.sample_count}, {}, None


def t_sweep(ctx, prm):
    spec = SweepSpec(prm["rays"], prm["theta_min"], prm["theta_max"], prm["r_min"], prm["r_max"], prm["radii"])
    b = ctx.block
    sw = sweep(b.full, grid=b.grid, tag=b.tag, spec=spec, exclude_zero=prm["exclude_zero"],
               refine=prm["refine"], workers=ctx.threads)
    rows = list(sw.rows())
    finite = sw.values[np.isfinite(sw.values)]
    plot = {"kind": "heatmap", "columns": ["theta", "radius", "norm"], "rows": [[r[0], r[1], r[4]] for r in rows]}
    return ({"max_norm": float(finite.max(initial=0.0)), "max_refined": float(np.max(sw.refined)),
             "singular_cells": int(sw.singular.sum()), "scale": sw.scale, "method": sw.method},
            {"sweep": (["theta", "radius", "re_lambda", "im_lambda", "norm", "singular"], rows)}, plot)


def t_angle(ctx, prm):
    b = ctx.block
    spec = angle_spec(prm["rays"], prm["r_min"], prm["r_max"], prm["radii"])
    sw = sweep(b.full, grid=b.grid, tag=b.tag, spec=spec, exclude_zero=prm["exclude_zero"], workers=ctx.threads)
    est = estimate_angle(sw, prm["stability_window"], prm["angular_factor"])
    rows = [[psi, bound, ";".join(est.blowup_flags[psi])] for psi, bound in est.bound_at.items()]
    plot = {"kind": "profile", "columns": ["psi", "bound"], "rows": [r[:2] for r in rows]}
    return ({"omega_hat": est.omega_hat, "bracket": list(est.bracket), "spacing": est.spacing,
             "flagged_rays": sum(1 for r in rows if r[2])},
            {"angle": (["psi", "bound", "flags"], rows)}, plot)


def t_rbound(ctx, prm):
    b = ctx.block
    scale = _scale(ctx)
    lams = [r * np.exp(1j * prm["theta"]) for r in scale * np.geomspace(prm["r_min"], prm["r_max"], prm["radii"])]
    rep = b.full.rep(b.grid)
    k = rep.data.shape[-1]
    fam = [Rep(rep.kind, lam * np.linalg.inv(lam * np.eye(k) - rep.data), rep.grid) for lam in lams]
    est = rbound(fam, b.tag, prm["method"], prm["budget"], ctx.seed, b.grid)
    return ({"value": est.value, "method": est.method, "family_size": est.family_size,
             "closed_form": est.closed_form, "strategy": est.vector_strategy, "samples": est.samples}, {}, None)


def t_dyadic(ctx, prm):
    est = ray_dyadic_rbound(ctx.block, prm["theta"], prm["a"], prm["K"], prm["j"], budget=prm["budget"],
                            seed=ctx.seed)
    return {"value": est.value, "method": est.method, "family_size": est.family_size,
            "strategy": est.vector_strategy, "a": prm["a"], "K": prm["K"]}, {}, None


def t_sector(ctx, prm):
    b = ctx.block
    spec = SweepSpec(prm["rays"], prm["psi"], PI, radii=prm["radii"])
    sc = sector_constants(b.full, prm["psi"], spec, b.grid, b.tag, prm["exclude_zero"], prm["budget"], ctx.seed)
    return {"N_S": sc.N_S, "N_R": sc.N_R.value, "N_R_method": sc.N_R.method, "argmax": sc.argmax}, {}, None


def t_smallness(ctx, prm):
    spec = SweepSpec(prm["rays"], prm["psi"], PI, radii=prm["radii"])
    s = smallness_check(ctx.block, prm["psi"], spec, prm["budget"], ctx.seed)
    return {"sup1": s.sup1, "sup2": s.sup2, "rbound1": s.rbound1.value, "rbound2": s.rbound2.value,
            "argmax1": s.argmax1, "argmax2": s.argmax2, "samples": s.samples,
            "neumann_admissible": s.neumann_admissible, "method": s.method}, {}, None


def t_constants(ctx, prm):
    given = [prm[k] for k in ("c_D", "N_A", "N_D", "L")]
    provenance = "given"
    if any(v is None for v in given):
        b = ctx.block
        rb = relative_bounds(b, seed=ctx.seed)
        spec = SweepSpec(16, prm["psi"], PI)
        NA = sector_constants(b.A, prm["psi"], spec, b.grid, b.x1_tag, exclude_zero=not b.dense, seed=ctx.seed)
        ND = sector_constants(b.D, prm["psi"], spec, b.grid, b.x2_tag, exclude_zero=not b.dense, seed=ctx.seed)
        measured = [rb.c_D, NA.N_R.value, ND.N_R.value, rb.L]
        given = [m if g is None else g for g, m in zip(given, measured)]
        provenance = "measured (sampled lower bounds)"
    pc = perturbation_constants(*given)
    return {"R": pc.R, "epsilon0": pc.epsilon0, "nu0_prime": pc.nu0_prime, "nu0": pc.nu0,
            "threshold_L0": pc.threshold_L0, "c_D": pc.c_D, "N_A": pc.N_A, "N_D": pc.N_D, "L": pc.L,
            "status": pc.status, "provenance": provenance}, {}, None


def t_gh(ctx, prm):
    r = gh_criterion(ctx.block)
    return {"norm_HG": r.norm_HG, "norm_GH": r.norm_GH, "invertible": r.invertible,
            "bound_inverse": r.bound_inverse}, {}, None


def t_fractional(ctx, prm):
    r = fractional_relation_check(ctx.block, prm["delta"], prm["variant"], prm["samples"], ctx.seed)
    return {"const_C_side": r.const_C_side, "const_B_side": r.const_B_side, "stable_C": r.stable_C,
            "stable_B": r.stable_B, "method": r.method}, {}, None


def _contour(ctx, prm, f):
    if prm["theta"] is None and prm["r_min"] is None and prm["r_max"] is None and prm["nodes"] == 400:
        return None
    rep = ctx.block.full.rep(ctx.grid)
    from .funcalc import default_contour
    base = default_contour(rep, f.psi_max)
    return Contour(prm["theta"] or base.theta, prm["r_min"] or base.r_min, prm["r_max"] or base.r_max,
                   prm["nodes"])


def t_dunford(ctx, prm):
    f = get_function(prm["function"])
    b = ctx.block
    res = dunford(b.full, f, _contour(ctx, prm, f), grid=b.grid)
    R = res.rep(b.grid)
    value = rep_norm(R, b.tag, b.tag).value
    plot = None
    tables = {}
    if R.kind == "mult":
        size = np.linalg.norm(R.data, 2, axis=(1, 2))
        ax = np.sqrt(b.grid.abs2)
        order = np.lexsort((size, ax))
        rows = [[float(ax[i]), float(size[i])] for i in order]
        tables["profile"] = (["abs_xi", "value"], rows)
        plot = {"kind": "profile", "columns": ["abs_xi", "value"], "rows": rows}
    return {"function": f.name, "norm": value, "error": res.error, "change": res.change, "tail": res.tail,
            "contour_angle": res.contour.theta}, tables, plot


def t_hinf(ctx, prm):
    b = ctx.block
    r = hinf_bound(b.full, prm["functions"], prm["psi"], grid=b.grid, tag=b.tag)
    rows = [[k, v] for k, v in r.ratios.items()]
    return ({"value": r.value, "argmax": r.argmax, "ratios": r.ratios},
            {"hinf": (["function", "ratio"], rows)}, {"kind": "bars", "columns": ["function", "ratio"], "rows": rows})


def t_shifted(ctx, prm):
    b = ctx.block
    r = shifted_calculus_residual(b.full, prm["mu0"], prm["function"], grid=b.grid)
    return {"norm": r.norm, "identity_error": r.identity_error, "quadrature_error": r.quadrature_error}, {}, None


def t_fraceq(ctx, prm):
    r = frac_domain_equivalence(ctx.block, prm["theta"], prm["samples"], ctx.seed)
    return {"lower": r.lower, "upper": r.upper, "samples": r.samples}, {}, None


def t_maxreg(ctx, prm):
    ens = ForcingEnsemble(members=prm["members"], seed=ctx.seed)
    r = maxreg_probe(ctx.block, prm["p"], ens, prm["T_end"], prm["steps"])
    return {"ratio": r.ratio, "ratios": r.ratios, "steps": r.steps, "T_end": r.T_end, "p": r.p}, {}, None


def t_dissipativity(ctx, prm):
    r = dissipativity_check(ctx.block, prm["gamma"], samples=prm["samples"], seed=ctx.seed)
    return {"min_sampled": r.min_sampled, "min_exact": r.min_exact, "cancellation": r.cancellation,
            "samples": r.samples, "accretive": min(r.min_sampled, r.min_exact) >= 0}, {}, None


def t_jsym(ctx, prm):
    return {"residual": j_symmetry_check(ctx.block)}, {}, None


def t_kernel(ctx, prm):
    b = ctx.block
    split = kernel_split(b)
    rng = ctx.rng()
    worst = 0.0
    for _ in range(prm["samples"]):
        v = GridVector.random(b.grid, b.tag.components, rng)
        a, c = apply(b.full, v).freq, reassembled_apply(split, v).freq
        worst = max(worst, float(np.linalg.norm(a - c) / max(np.linalg.norm(a), 1e-300)))
    tol = ctx.scenario.tolerances["kernel_split"]
    return {"kernel_components": split.kernel_components, "A_N": split.A_N.tolist(), "reassembly_residual": worst,
            "passed": worst <= tol}, {}, None


def t_consistency(ctx, prm):
    b = ctx.block
    b2 = b.with_p(prm["p2"])
    rng = ctx.rng()
    m = consistency_check(b, b2, prm["lam"], _random_vector(ctx, rng, b.x1_tag.components))
    r = resolvent_consistency(b, b2, prm["lam"], _random_vector(ctx, rng))
    tol = ctx.scenario.tolerances["consistency"]
    return {"m1_residual": m, "resolvent_residual": r, "passed": max(m, r) <= tol}, {}, None


def t_lizorkin(ctx, prm):
    b = ctx.block
    fb = m_factor(b, prm["lam"])
    cert = lizorkin_certificate(Inverse(fb.M1, "M1"), tuple(prm["refinements"]), b.grid.d, prm["tol"])
    rows = [[n, v] for n, v in cert.grid_refinements]
    return ({"sup_bound": cert.sup_bound, "lizorkin_bound": cert.lizorkin_bound, "stable": cert.stable},
            {"lizorkin": (["n", "bound"], rows)}, {"kind": "convergence", "columns": ["n", "bound"], "rows": rows})


RUNNERS = {
    "factorization-check": t_factorization, "relative-bounds": t_relative, "sweep": t_sweep, "angle": t_angle,
    "rbound": t_rbound, "ray-dyadic": t_dyadic, "sector-constants": t_sector, "smallness": t_smallness,
    "perturbation-constants": t_constants, "gh": t_gh, "fractional-relations": t_fractional, "dunford": t_dunford,
    "hinf": t_hinf, "shifted-calculus": t_shifted, "frac-equivalence": t_fraceq, "maxreg": t_maxreg,
    "dissipativity": t_dissipativity, "j-symmetry": t_jsym, "kernel-split": t_kernel, "consistency": t_consistency,
    "lizorkin": t_lizorkin,
}


def task_seed(seed: int, task: TaskSpec) -> int:
    """Per-task seed that does not depend on the position of the task in the scenario."""
    h = hashlib.sha256(f"{seed}:{task.name}:{dumps(task.params)}".encode()).digest()
    return int.from_bytes(h[:4], "little")


def run_scenario(sc: Scenario, out: str | Path | None = None, seed: int | None = None,
                 threads: int = 1) -> tuple[dict, int]:
    """Run every task, write report.json and CSV tables; returns (report, exit code)."""
    if seed is not None:
        sc.seed = seed
    out = Path(out or sc.out)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    records, failed = [], False
    for task in sc.tasks:
        ctx = Ctx(sc, task_seed(sc.seed, task), threads)
        rec = {"task": task.name, "id": task.id, "params": task.params, "seed": ctx.seed}
        try:
            result, tables, plot = RUNNERS[task.name](ctx, task.params)
            files = []
            for tname, (cols, rows) in tables.items():
                fname = f"{task.id}.csv" if len(tables) == 1 else f"{task.id}_{tname}.csv"
                write_csv(out / fname, cols, rows)
                files.append(fname)
            rec.update(status="ok", result=result, files=files)
            if plot is not None:
                rec["plot"] = plot
        except OSError:
            raise
        except Exception as exc:  # task errors never abort later tasks
            failed = True
            rec.update(status="error", error=f"{type(exc).__name__}: {exc}")
        records.append(rec)
    report = {"schema_version": SCHEMA_VERSION, "toolkit_version": __version__, "scenario_hash": sc.hash(),
              "seed": sc.seed, "grid": {"d": sc.d, "n": sc.n, "p": sc.p},
              "model": sc.model if sc.model else "custom", "tasks": records}
    (out / "report.json").write_text(dumps(report, indent=2) + "\n")
    return report, EXIT_TASK if failed else EXIT_OK


def emit_plot_data(report_path, selection: str, out: str | Path | None = None) -> list[Path]:
    """Write the plot table of one task from a report as CSV."""
    report_path = Path(report_path)
    report = json.loads(report_path.read_text())
    recs = [r for r in report.get("tasks", []) if selection in (r.get("id"), r.get("task"))]
    if not recs:
        raise KeyError(f"report has no task {selection!r}")
    written = []
    out = Path(out) if out else report_path.parent
    out.mkdir(parents=True, exist_ok=True)
    for rec in recs:
        plot = rec.get("plot")
        if plot is None:
            raise KeyError(f"task {selection!r} has no plot data")
        path = out / f"{rec['id']}_plot.csv"
        write_csv(path, plot["columns"], plot["rows"])
        written.append(path)
    return written


def _threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("BLOCKOP_THREADS")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="blockop", description="Block operator analysis scenarios.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("file")
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("file")
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    p = sub.add_parser("plot", help="emit plot tables from a report")
    p.add_argument("report")
    p.add_argument("--task", required=True)
    p.add_argument("--out")
    args = ap.parse_args(argv)

    if args.cmd == "plot":
        try:
            for path in emit_plot_data(args.report, args.task, args.out):
                print(path)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_TASK
        except KeyError as exc:
            print(f"error: {exc.args[0]}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        sc = validate_config(args.file)
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    if args.cmd == "validate":
        print(f"ok: {len(sc.tasks)} task(s), grid {sc.d}x{sc.n}, model {sc.model or 'custom'}")
        return EXIT_OK
    try:
        report, code = run_scenario(sc, args.out, args.seed, _threads(args.threads))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TASK
    for rec in report["tasks"]:
        print(f"{rec['id']}: {rec['status']}" + (f" ({rec['error']})" if rec["status"] == "error" else ""))
    return code


if __name__ == "__main__":
    sys.exit(main())
