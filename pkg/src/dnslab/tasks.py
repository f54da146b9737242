"""Experiment configuration and the task runner behind the CLI and the HTTP service.

A report is a JSON-ready dict::

    {"task", "passed", "criteria": [{"name", "passed", "value", "threshold"}],
     "measurements": {...}, "config": {...}, "versions": {...}}

Reports contain no timestamps, so equal configs give byte-identical JSON.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import scipy
import scipy.io
from pydantic import BaseModel, Field, field_validator

from . import __version__
from . import experiments as ex
from .geometry import grid_from_config
from .sobolev import assemble_gram, export_matrix_market
from .solver import dbar_op, hodge_decompose, neumann_solve, solve_report

TASKS = ("verify-identities", "symbol-check", "assemble", "adjoint-check", "hodge", "neumann",
         "boundary-identity", "blowup-family", "density-corrector")

TaskName = Literal["verify-identities", "symbol-check", "assemble", "adjoint-check", "hodge",
                   "neumann", "boundary-identity", "blowup-family", "density-corrector"]

DEFAULT_TOLERANCES = {
    "recursion": 1e-12, "adjoint": 1e-10, "orthogonality": 1e-9, "pythagoras": 1e-9,
    "residual": 1e-8, "variation": 0.25, "order": 1.0, "norm_ratio": 0.10,
    "slope": 0.05, "slope_target": -0.25,
}


class DomainConfig(BaseModel):
    shape: Literal["ball", "ellipsoid"] = "ball"
    n: int = Field(1, ge=1, le=3)
    radius: float = Field(1.0, gt=0)
    semiaxes: Optional[list[float]] = None
    band_width_cells: float = Field(4, gt=0)
    pad_cells: int = Field(4, ge=1)

    def grid(self, h: float):
        cfg = self.model_dump()
        cfg["h"] = h
        return grid_from_config(cfg)


class ExperimentConfig(BaseModel):
    task: TaskName
    domain: DomainConfig = DomainConfig()
    s: int = Field(1, ge=0, le=8)
    q: int = Field(1, ge=0)
    grid_sizes: list[float] = Field(default_factory=lambda: [1 / 16])
    tolerances: dict[str, float] = Field(default_factory=dict)
    seed: int = 0
    samples: int = Field(20, ge=1)
    field: Literal["smooth", "noise", "zero"] = "smooth"
    max_s: int = Field(8, ge=1, le=12)
    eps: float = Field(0.05, gt=0)
    octaves: int = Field(4, ge=1)
    out: Optional[str] = None
    dump_ops: Optional[str] = None
    csv: Optional[str] = None

    @field_validator("grid_sizes")
    @classmethod
    def _grids(cls, v):
        if not v:
            raise ValueError("grid list must be nonempty")
        if any(h <= 0 for h in v):
            raise ValueError("grid spacings must be positive")
        return v

    @field_validator("tolerances")
    @classmethod
    def _tols(cls, v):
        bad = [k for k, t in v.items() if not t > 0 and k != "slope_target"]
        if bad:
            raise ValueError(f"tolerances must be > 0: {bad}")
        return v

    def tol(self, key: str) -> float:
        return self.tolerances.get(key, DEFAULT_TOLERANCES[key])


def _criterion(name, value, threshold, passed) -> dict:
    return {"name": name, "passed": bool(passed), "value": _clean(value), "threshold": _clean(threshold)}


def _clean(v):
    """Make a value JSON-serializable (complex -> [re, im], numpy -> python)."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (complex, np.complexfloating)):
        return [float(np.real(v)), float(np.imag(v))]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    return v


def versions() -> dict:
    return {"dnslab": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# -- task bodies -------------------------------------------------------------------------

def _verify_identities(cfg):
    m = ex.identity_suite(max_s=cfg.max_s, seed=cfg.seed)
    crit = [_criterion(k, m[k], True, m[k]) for k in
            ("f_identity_ok", "pascal_ok", "multinomial_ok", "unit_collapse_ok", "b_direct_equals_closed")]
    return crit, m


def _symbol_check(cfg):
    from .symbol import symbol_report
    rep = symbol_report(cfg.max_s)
    ell = ex.ellipticity_suite(cfg.max_s, samples=cfg.samples, seed=cfg.seed)
    crit = [_criterion("symbol_report", rep["passed"], True, rep["passed"]),
            _criterion("determinants_nonzero", ell["determinants_nonzero"], True, ell["determinants_nonzero"]),
            _criterion("quadratic_form_positive", ell["quadratic_form_positive"], True,
                       ell["quadratic_form_positive"]),
            _criterion("homogeneity", ell["homogeneity_ok"], True, ell["homogeneity_ok"])]
    return crit, {"symbol_report": rep, "ellipticity": ell}


def _assemble(cfg):
    crit, meas = [], {"grids": []}
    for h in cfg.grid_sizes:
        grid = cfg.domain.grid(h)
        M = assemble_gram(grid, cfg.s)
        one = M.vector(np.ones(grid.shape))
        rec = ex.recursion_study(grid, max_s=max(cfg.s, 1), pairs=cfg.samples, seed=cfg.seed)
        dd = ex.dbar_squared(grid)
        entry = {"h": h, "grid": grid.summary(), "gram_nnz": int(M.matrix.nnz),
                 "one_one": M.dot(one, one).real, "volume": grid.volume(),
                 "symmetric": bool((M.matrix != M.matrix.T).nnz == 0),
                 "recursion_residual": rec, "dbar_squared_nnz": dd}
        meas["grids"].append(entry)
        crit.append(_criterion(f"recursion h={h}", max(rec.values()), cfg.tol("recursion"),
                               max(rec.values()) <= cfg.tol("recursion")))
        crit.append(_criterion(f"dbar^2 = 0 h={h}", dd, 0, all(v == 0 for v in dd.values())))
        crit.append(_criterion(f"symmetric h={h}", entry["symmetric"], True, entry["symmetric"]))
        if cfg.dump_ops:
            out = Path(cfg.dump_ops)
            out.mkdir(parents=True, exist_ok=True)
            for k in range(grid.n + 1):
                export_matrix_market(assemble_gram(grid, cfg.s, level=k), out / f"gram_s{cfg.s}_L{k}_h{h:g}.mtx")
            for q in range(grid.n):
                _mm_general(dbar_op(grid, q).matrix, out / f"dbar_q{q}_h{h:g}.mtx")
            grid.export_nodes(out / f"nodes_h{h:g}.bin")
    return crit, meas


def _mm_general(mat, path):
    scipy.io.mmwrite(str(path), mat.tocoo(), field="complex", symmetry="general")


def _adjoint_check(cfg):
    crit, meas = [], {"grids": []}
    for h in cfg.grid_sizes:
        grid = cfg.domain.grid(h)
        res = ex.adjoint_study(grid, cfg.s, pairs=cfg.samples, seed=cfg.seed)
        meas["grids"].append({"h": h, "max_relative_defect": res})
        worst = max(res.values()) if res else 0.0
        crit.append(_criterion(f"adjointness h={h}", worst, cfg.tol("adjoint"), worst <= cfg.tol("adjoint")))
    return crit, meas


def _field_for(cfg, grid, k):
    from .forms import FormField
    if cfg.field == "zero":
        return FormField.zeros(grid, cfg.q)
    if cfg.field == "smooth":
        return ex.random_smooth_form(grid, cfg.q, cfg.seed, k)
    rng = np.random.default_rng([cfg.seed, k])
    comps = {J: ex.random_field_box(grid, rng) for J in FormField.zeros(grid, cfg.q).indices}
    return FormField(cfg.q, comps, grid, np.ones(grid.shape, bool))


def _hodge(cfg):
    crit, meas = [], {"grids": []}
    for h in cfg.grid_sizes:
        grid = cfg.domain.grid(h)
        f = _field_for(cfg, grid, 0)
        d = hodge_decompose(f, cfg.q, cfg.s).diagnostics
        meas["grids"].append({"h": h, **d})
        crit.append(_criterion(f"orthogonality h={h}", max(d["orth_12"], d["orth_1h"], d["orth_2h"]),
                               cfg.tol("orthogonality"),
                               max(d["orth_12"], d["orth_1h"], d["orth_2h"]) <= cfg.tol("orthogonality")))
        crit.append(_criterion(f"pythagoras h={h}", d["pythagoras"], cfg.tol("pythagoras"),
                               d["pythagoras"] <= cfg.tol("pythagoras")))
        if d["harmonic_dim"] == 0:
            crit.append(_criterion(f"box(N f) = f h={h}", d["residual"], cfg.tol("residual"),
                                   d["residual"] <= cfg.tol("residual")))
    return crit, meas


def _neumann(cfg):
    crit, meas = [], {"grids": [], "reports": []}
    maxima = []
    for h in cfg.grid_sizes:
        grid = cfg.domain.grid(h)
        ratios, worst_res = [], 0.0
        for k in range(cfg.samples):
            u, rep = neumann_solve(_field_for(cfg, grid, k), cfg.q, cfg.s)
            ratios.append(rep["norm_ratio"])
            worst_res = max(worst_res, rep["residual"])
        maxima.append(max(ratios))
        meas["grids"].append({"h": h, "max_ratio": max(ratios), "ratios": ratios})
        meas["reports"].append(solve_report(grid, cfg.q, cfg.s, {**rep, "residual": worst_res,
                                                                 "norm_ratio": max(ratios)}))
        crit.append(_criterion(f"residual h={h}", worst_res, cfg.tol("residual"), worst_res <= cfg.tol("residual")))
    if len(maxima) > 1 and min(maxima) > 0:
        var = (max(maxima) - min(maxima)) / min(maxima)
        crit.append(_criterion("max ratio variation", var, cfg.tol("variation"), var < cfg.tol("variation")))
    if cfg.csv:
        _write_csv(cfg.csv, ["h", "max_ratio"], zip(cfg.grid_sizes, maxima))
    return crit, meas


def _boundary_identity(cfg):
    m = ex.green_study(cfg.grid_sizes, cfg.s, cfg.domain.n)
    crit = []
    if len(cfg.grid_sizes) > 1:
        crit.append(_criterion("convergence order", m["order"], cfg.tol("order"), m["order"] >= cfg.tol("order")))
    if cfg.csv:
        _write_csv(cfg.csv, ["h", "error"], zip(m["h"], m["error"]))
    return crit, m


def _blowup(cfg):
    # the sweep needs eps/h >= 6 at the smallest eps; only explicit grids override
    h = min(cfg.grid_sizes) if "grid_sizes" in cfg.model_fields_set else 1 / 2048
    m = ex.blowup_sweep(h=h, eps0=cfg.eps, octaves=cfg.octaves, s=max(cfg.s, 1))
    dev = max(abs(r - 1) for r in m["norm_ratios"])
    crit = [_criterion("norm stability", dev, cfg.tol("norm_ratio"), dev <= cfg.tol("norm_ratio")),
            _criterion("pairing slope", m["slope"], [cfg.tol("slope_target"), cfg.tol("slope")],
                       abs(m["slope"] - cfg.tol("slope_target")) <= cfg.tol("slope"))]
    if cfg.csv:
        _write_csv(cfg.csv, ["eps", "norm", "pairing"], zip(m["eps"], m["norms"], m["pairing"]))
    return crit, m


def _density_corrector(cfg):
    m = ex.corrector_study(cfg.grid_sizes, max(cfg.s, 1), n=cfg.domain.n)
    crit = []
    if len(cfg.grid_sizes) > 1:
        crit.append(_criterion("trace order", m["order"], cfg.tol("order"), m["order"] >= cfg.tol("order")))
    if cfg.csv:
        _write_csv(cfg.csv, ["h", "trace_sup_corrected"], zip(m["h"], m["trace_sup_corrected"]))
    return crit, m


RUNNERS = {
    "verify-identities": _verify_identities, "symbol-check": _symbol_check, "assemble": _assemble,
    "adjoint-check": _adjoint_check, "hodge": _hodge, "neumann": _neumann,
    "boundary-identity": _boundary_identity, "blowup-family": _blowup,
    "density-corrector": _density_corrector,
}


class TaskError(RuntimeError):
    pass


def run(config: ExperimentConfig | dict) -> dict:
    """Execute one task and return its report (also written to config.out when set)."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.model_validate(config)
    try:
        crit, meas = RUNNERS[cfg.task](cfg)
    except (ValueError, RuntimeError) as exc:
        raise TaskError(f"{cfg.task}: {exc}") from exc
    report = {"task": cfg.task, "passed": all(c["passed"] for c in crit), "criteria": crit,
              "measurements": _clean(meas), "config": cfg.model_dump(), "versions": versions()}
    if cfg.out:
        Path(cfg.out).write_text(dumps(report))
    return report


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
