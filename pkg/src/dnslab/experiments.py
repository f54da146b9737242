"""Reusable measurement drivers: refinement studies, sweeps and random fields.

Each driver returns plain dicts of floats/lists so that reports and tests
can consume them directly.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from . import multiindex as mi
from . import symbol as sym
from .forms import FormField, form_indices
from .geometry import (blowup_family, density_corrector, make_ball, normal_power_trace,
                       normal_trace, unit_trace_form)
from .sobolev import assemble_gram, quadrature_inner, recursion_check
from .solver import (boundary_identity_check, dbar_op, form_to_vector, get_complex,
                     interior_sup, kappa_defect)


def fitted_order(hs, errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    return float(np.polyfit(np.log(np.asarray(hs, float)), np.log(np.asarray(errors, float)), 1)[0])


def random_node_vector(rng, size: int) -> np.ndarray:
    """Complex standard normal per unknown."""
    return (rng.standard_normal(size) + 1j * rng.standard_normal(size)) / np.sqrt(2)


def random_smooth_field(grid, seed: int, k: int, degree: int = 3) -> np.ndarray:
    """Complex polynomial of the real coordinates with seeded normal coefficients.

    Coefficients depend only on (seed, k, dim, degree), so the same field is
    produced on every grid.
    """
    rng = np.random.default_rng([seed, k, grid.dim, degree])
    X = grid.coords
    out = np.zeros(grid.shape, complex)
    for alpha in mi.graded_indices(grid.dim, degree):
        c = rng.standard_normal() + 1j * rng.standard_normal()
        term = np.ones(grid.shape)
        for a, p in enumerate(alpha):
            if p:
                term = term * X[a] ** p
        out += c * term
    return out


def random_smooth_form(grid, q: int, seed: int, k: int) -> FormField:
    comps = {J: random_smooth_field(grid, seed, 1000 * k + i) for i, J in enumerate(form_indices(grid.n, q))}
    return FormField(q, comps, grid, np.ones(grid.shape, bool))


# -- exact suites -----------------------------------------------------------------------

def identity_suite(max_k: int = 30, max_p: int = 30, max_s: int = 8, seed: int = 0) -> dict:
    failures = mi.verify_f_identity(max_k, max_p)
    pascal_ok = all(mi.gamma_pascal_check(a) for d in (2, 4, 6)
                    for a in mi.graded_indices(d, 8) if a.order > 0)
    multinom_ok = all(sum(mi.gamma(a) for a in mi.multi_indices(2 * n, s)) == (2 * n) ** s
                      for n in (1, 2, 3) for s in range(7))
    rng = np.random.default_rng(seed)
    unit_ok = True
    for s in range(7):
        nu = rng.standard_normal(4)
        unit_ok &= mi.multinomial_unit_check(s, nu / np.linalg.norm(nu), 1e-12)
    sym_ok = all(sym.b_direct(s, ell) == sym.b_closed(s, ell) for s in range(1, max_s + 1) for ell in range(s))
    return {"f_identity_failures": [list(f) for f in failures], "f_identity_ok": not failures,
            "pascal_ok": pascal_ok, "multinomial_ok": multinom_ok, "unit_collapse_ok": bool(unit_ok),
            "b_direct_equals_closed": sym_ok}


def random_rational_vector(rng, length: int) -> list[Fraction]:
    while True:
        v = [Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 10))) for _ in range(length)]
        if any(v):
            return v


def ellipticity_suite(max_s: int = 8, xis=("1/2", "1", "2"), samples: int = 50, qf_max_s: int = 4,
                      seed: int = 0) -> dict:
    xis = [Fraction(x) for x in xis]
    dets = {f"{s}@{xi}": sym.ellipticity_determinant(s, xi) for s in range(1, max_s + 1) for xi in xis}
    rng = np.random.default_rng(seed)
    qf_min = {}
    for s in range(1, qf_max_s + 1):
        vals = [sym.quadratic_form_check(s, xi, random_rational_vector(rng, s))
                for xi in xis for _ in range(samples)]
        qf_min[s] = min(vals)
    homog = {}
    for s in range(1, max_s + 1):
        d1 = sym.ellipticity_determinant(s, 1)
        d = sym.determinant_degree(s)
        homog[s] = all(sym.ellipticity_determinant(s, x) == Fraction(x) ** d * d1 for x in (1, 2, 3))
    return {"determinants": {k: str(v) for k, v in dets.items()},
            "determinants_nonzero": all(v != 0 for v in dets.values()),
            "quadratic_form_min": {str(k): str(v) for k, v in qf_min.items()},
            "quadratic_form_positive": all(v > 0 for v in qf_min.values()),
            "homogeneity_ok": all(homog.values())}


# -- grid experiments -----------------------------------------------------------------

def dbar_squared(grid) -> dict:
    """Stored nonzeros of dbar_{q+1} dbar_q after dropping exact zeros, for every q."""
    out = {}
    for q in range(grid.n - 1):
        P = (dbar_op(grid, q + 1).matrix @ dbar_op(grid, q).matrix).tocsr()
        P.eliminate_zeros()
        out[q] = int(P.nnz)
    return out


def recursion_study(grid, max_s: int = 3, pairs: int = 20, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    worst = {}
    for s in range(1, max_s + 1):
        M = assemble_gram(grid, s)
        rel = 0.0
        for _ in range(pairs):
            f = random_field_box(grid, rng)
            g = random_field_box(grid, rng)
            r = recursion_check(f, g, grid, s)
            rel = max(rel, r / (M.norm(M.vector(f)) * M.norm(M.vector(g))))
        worst[s] = rel
    return worst


def random_field_box(grid, rng) -> np.ndarray:
    return (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) / np.sqrt(2)


def adjoint_study(grid, s: int, pairs: int = 20, seed: int = 0) -> dict:
    """max |<A phi, psi>_s - <phi, A* psi>_s| / (|phi|_s |psi|_s) over random pairs, per q."""
    rng = np.random.default_rng(seed)
    cx = get_complex(grid, s)
    out = {}
    for q in range(grid.n):
        A, adj = cx.A(q), cx.adjoint(q)
        worst = 0.0
        for _ in range(pairs):
            phi = random_node_vector(rng, cx.size(q))
            psi = random_node_vector(rng, cx.size(q + 1))
            lhs = cx.inner(q + 1, A @ phi, psi)
            rhs = cx.inner(q, phi, adj @ psi)
            worst = max(worst, abs(lhs - rhs) / (cx.norm(q, phi) * cx.norm(q + 1, psi)))
        out[q] = worst
    return out


def boundedness_trend(hs, s: int = 1, q: int = 1, samples: int = 20, seed: int = 0, n: int = 1) -> dict:
    """max over random smooth f of |N_s f|_s / |f|_s, per grid spacing."""
    maxima, harmonic = [], []
    for h in hs:
        grid = make_ball(n, 1.0, h)
        cx = get_complex(grid, s)
        ratios = []
        for k in range(samples):
            f = form_to_vector(random_smooth_form(grid, q, seed, k))
            out = cx.neumann(q, f)
            ratios.append(out["norm_ratio"])
        maxima.append(max(ratios))
        harmonic.append(out["harmonic_dim"])
    variation = (max(maxima) - min(maxima)) / min(maxima)
    return {"h": list(hs), "max_ratio": maxima, "variation": variation, "harmonic_dim": harmonic}


def green_polynomials(grid):
    x, y = grid.coords[0], grid.coords[grid.n]
    z = x + 1j * y
    full = np.ones(grid.shape, bool)
    phi = FormField.from_functions(grid, 0, lambda X: z**2 * np.conj(z) + x, full)
    psi_fn = {J: (lambda X, i=i: (z * z + np.conj(z) * y**2) * (1 + 0.5 * i))
              for i, J in enumerate(form_indices(grid.n, 1))}
    psi = FormField.from_functions(grid, 1, psi_fn, full)
    return phi, psi


def green_study(hs, s: int = 1, n: int = 1) -> dict:
    gaps, surfs, errs = [], [], []
    for h in hs:
        grid = make_ball(n, 1.0, h)
        phi, psi = green_polynomials(grid)
        gap, surf = boundary_identity_check(phi, psi, s)
        gaps.append(gap)
        surfs.append(surf)
        errs.append(abs(gap - surf))
    return {"h": list(hs), "gap": [complex(g) for g in gaps], "surface_sum": [complex(v) for v in surfs],
            "error": errs, "order": fitted_order(hs, errs)}


def interior_bump_form(grid, radius: float = 0.5):
    """(0,1) form b(x)(1 + x_1) dzbar_1 with a C-infinity bump b in |x| < radius, and its exact vartheta."""
    X = grid.coords
    r2 = (X**2).sum(axis=0)
    inside = r2 < radius**2
    d = np.where(inside, radius**2 - r2, 1.0)
    b = np.where(inside, np.exp(1 / radius**2 - 1 / d), 0.0)
    db = -b / d**2
    p = b * (1 + X[0])
    grads = [2 * X[a] * db * (1 + X[0]) + (b if a == 0 else 0.0) for a in range(grid.dim)]
    full = np.ones(grid.shape, bool)
    comps = {J: np.zeros(grid.shape, complex) for J in form_indices(grid.n, 1)}
    comps[(1,)] = p.astype(complex)
    psi = FormField(1, comps, grid, full)
    # vartheta(f dzbar_1) = -df/dz_1
    ref = {I: np.zeros(grid.shape, complex) for I in form_indices(grid.n, 0)}
    ref[()] = -0.5 * (grads[0] - 1j * grads[grid.n])
    return psi, FormField(0, ref, grid, full)


def kappa_study(hs, s: int = 1, n: int = 1, depth: float = 0.25) -> dict:
    analytic, discrete = [], []
    for h in hs:
        grid = make_ball(n, 1.0, h)
        psi, ref = interior_bump_form(grid)
        analytic.append(interior_sup(kappa_defect(psi, s, reference=ref), depth))
        discrete.append(interior_sup(kappa_defect(psi, s), depth))
    return {"h": list(hs), "analytic_defect": analytic, "discrete_defect": discrete,
            "order": fitted_order(hs, analytic)}


def corrector_study(hs, s: int = 1, eps: float = 0.25, n: int = 1) -> dict:
    raw, corrected = [], []
    for h in hs:
        grid = make_ball(n, 1.0, h, band_width_cells=int(np.ceil(eps / h)) + 2)
        X = grid.coords
        z = X[0] + 1j * X[grid.n]
        comps = {J: np.exp(X[0]) * z + X[grid.n] * (i + 1) for i, J in enumerate(form_indices(grid.n, 1))}
        phi = FormField(1, comps, grid, np.ones(grid.shape, bool))
        psi = density_corrector(phi, s, eps)
        raw.append(max(t.sup() for t in normal_power_trace(phi, s).values()))
        corrected.append(max(t.sup() for t in normal_power_trace(phi - psi, s).values()))
    return {"h": list(hs), "trace_sup_phi": raw, "trace_sup_corrected": corrected,
            "order": fitted_order(hs, corrected)}


def blowup_sweep(h: float = 1 / 2048, eps0: float = 0.05, octaves: int = 4, s: int = 1,
                 delta: float = 0.5, p=(1.0, 0.0)) -> dict:
    """Norms of the blow-up family and its boundary pairing with a unit-trace form, n = 1 ball."""
    grid = make_ball(1, 1.0, h, window=(p, delta))
    target = normal_power_trace(unit_trace_form(grid, s), s)[()]
    eps = [eps0 / 2**k for k in range(octaves + 1)]
    norms, pairs = [], []
    for e in eps:
        phi = blowup_family(grid, s, e, p, delta)
        a = phi[()]
        norms.append(float(np.sqrt(quadrature_inner(a, a, grid, s).real)))
        pairs.append(abs(normal_trace(a, phi.mask, s, grid).pair(target)))
    ratios = [norms[i + 1] / norms[i] for i in range(octaves)]
    return {"h": h, "eps": eps, "norms": norms, "norm_ratios": ratios, "pairing": pairs,
            "slope": fitted_order(eps, pairs), "unit_trace_error": float(np.abs(target.values - 1).max())}
