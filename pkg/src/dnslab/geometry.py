"""Model domains in C^n on a uniform lattice.

A :class:`DomainGrid` samples the signed distance rho (negative inside) and
the unit normal field nu = grad rho on a padded bounding box.  It owns the
difference operators (centred, second order), the volume weights (exact
planar cut-cell fractions) and the boundary quadrature.

Coordinates follow z_j = x_j + i x_{j+n}; axis ``a`` of the box is x_{a+1}.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from math import ceil, factorial
from typing import Callable, Sequence

import numpy as np

from .forms import FormField, contract, dbar_rho_form, form_indices, wedge_left

FRACTION_FLOOR = 1e-9
GRAD_TOL = 1e-3
NODE_DUMP_MAGIC = b"DNSLABG1"


class GeometryError(ValueError):
    pass


def _axis_slice(dim: int, axis: int, sl: slice) -> tuple:
    idx = [slice(None)] * dim
    idx[axis] = sl
    return tuple(idx)


def cell_fraction(rho: np.ndarray, nu: np.ndarray, h: float, drop_tol: float = 1e-3) -> np.ndarray:
    """Volume fraction of the cube of side h centred at each node below the tangent plane.

    ``rho`` has shape (P,), ``nu`` shape (d, P).  Uses the inclusion-exclusion
    formula for a cube cut by a half-space; normal components below
    ``drop_tol`` are treated as zero (the cut does not depend on them).
    """
    d, P = nu.shape
    a = np.abs(nu)
    active = a > drop_tol
    out = np.empty(P)
    patterns, inverse = np.unique(active.T, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    for pid, pattern in enumerate(patterns):
        sel = inverse == pid
        aa = a[pattern][:, sel]
        dd = aa.shape[0]
        t = -rho[sel] / h + 0.5 * aa.sum(axis=0)
        if dd == 0:
            out[sel] = (rho[sel] <= 0).astype(float)
            continue
        total = np.zeros(sel.sum())
        for v in product((0, 1), repeat=dd):
            v = np.array(v)
            arg = t - (aa * v[:, None]).sum(axis=0)
            total += (-1) ** v.sum() * np.maximum(arg, 0.0) ** dd
        out[sel] = total / (factorial(dd) * np.prod(aa, axis=0))
    return np.clip(out, 0.0, 1.0)


@dataclass
class BoundaryTrace:
    """Complex samples at boundary points with positive surface weights."""

    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    def integral(self) -> complex:
        return complex(np.sum(self.weights * self.values))

    def pair(self, other: "BoundaryTrace") -> complex:
        """Surface integral of self * conj(other)."""
        return complex(np.sum(self.weights * self.values * np.conj(other.values)))

    def sup(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    def area(self) -> float:
        return float(self.weights.sum())


class DomainGrid:
    """Uniform lattice over the box c + [-L, L]^{2n}, L = ceil(half_extent/h) + pad cells.

    The centre c defaults to the origin; a window centred elsewhere (snapped
    to the lattice h Z^{2n}) resolves a neighbourhood of one boundary point.
    """

    def __init__(self, n: int, h: float, rho_fn: Callable, normal_fn: Callable,
                 half_extent: float, *, spec: dict | None = None,
                 pad_cells: int = 4, band_width_cells: float = 4, center=None):
        if n < 1:
            raise GeometryError("complex dimension must be >= 1")
        if h <= 0:
            raise GeometryError("grid spacing must be positive")
        self.n = n
        self.dim = 2 * n
        self.h = float(h)
        self.rho_fn = rho_fn
        self.normal_fn = normal_fn
        self.pad_cells = int(pad_cells)
        self.band_width_cells = float(band_width_cells)
        self.spec = dict(spec or {})
        self.cache: dict = {}
        self.half_count = int(ceil(half_extent / h - 1e-12)) + self.pad_cells
        m = 2 * self.half_count + 1
        self.shape = (m,) * self.dim
        c = np.zeros(self.dim) if center is None else np.round(np.asarray(center, float) / h) * h
        if c.shape != (self.dim,):
            raise GeometryError(f"center must have {self.dim} entries")
        self.center = c
        ticks = self.h * np.arange(-self.half_count, self.half_count + 1)
        self.axes = [c[a] + ticks for a in range(self.dim)]
        self.origin = np.array([ax[0] for ax in self.axes])

        X = self.coords
        self.rho = np.asarray(rho_fn(X), float)
        nu = np.asarray(normal_fn(X), float)
        norm = np.sqrt((nu**2).sum(axis=0))
        self.nu_valid = np.abs(norm - 1.0) < 1e-10
        self.nu = np.where(self.nu_valid, nu, 0.0)
        self.interior = self.rho < 0

        frac = (self.rho < 0).astype(float)
        cut = np.abs(self.rho) < 0.5 * self.h * np.sqrt(self.dim) + 1e-14
        cut &= self.nu_valid
        if cut.any():
            frac[cut] = cell_fraction(self.rho[cut], self.nu[:, cut], self.h)
        frac[frac < FRACTION_FLOOR] = 0.0
        self.fraction = frac
        self.weights = frac * self.h**self.dim

        self._build_band()
        self._levels: dict[int, np.ndarray] = {0: self.fraction > 0}
        if self._levels[0].sum() == 0:
            raise GeometryError("no grid node inside the domain")

    # -- construction helpers -------------------------------------------------

    @cached_property
    def coords(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    def _build_band(self):
        cand = np.abs(self.rho) <= self.band_width_cells * self.h
        cand &= self.nu_valid
        pts = self.coords[:, cand]
        grad = self.fd_gradient(pts)
        gnorm = np.sqrt((grad**2).sum(axis=0))
        ok = np.abs(gnorm - 1.0) <= GRAD_TOL
        band = np.zeros(self.shape, bool)
        band[cand] = ok
        self.band = band
        self.band_excluded = int((~ok).sum()) + int(
            ((np.abs(self.rho) <= self.band_width_cells * self.h) & ~self.nu_valid).sum())

    def fd_gradient(self, pts: np.ndarray, step: float | None = None) -> np.ndarray:
        """Central-difference gradient of rho_fn at points (dim, P), step independent of h."""
        step = 1e-5 * max(self.h, 1e-3) if step is None else step
        grad = np.empty_like(pts)
        for a in range(self.dim):
            e = np.zeros((self.dim, 1))
            e[a] = step
            grad[a] = (self.rho_fn(pts + e) - self.rho_fn(pts - e)) / (2 * step)
        return grad

    # -- lattice operators ------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.shape))

    def diff(self, f: np.ndarray, axis: int) -> np.ndarray:
        """Centred first difference along ``axis``; zero on the two box faces."""
        out = np.zeros(f.shape, dtype=np.result_type(f.dtype, float))
        d = self.dim
        out[_axis_slice(d, axis, slice(1, -1))] = (
            f[_axis_slice(d, axis, slice(2, None))] - f[_axis_slice(d, axis, slice(None, -2))]
        ) / (2 * self.h)
        return out

    def erode(self, mask: np.ndarray, axes: Sequence[int] | None = None) -> np.ndarray:
        """Nodes of ``mask`` whose +-1 neighbours along every axis in ``axes`` are in ``mask``."""
        axes = range(self.dim) if axes is None else axes
        out = mask.copy()
        d = self.dim
        for a in axes:
            shifted = np.zeros_like(mask)
            inner = _axis_slice(d, a, slice(1, -1))
            shifted[inner] = (mask[_axis_slice(d, a, slice(2, None))]
                              & mask[_axis_slice(d, a, slice(None, -2))])
            out &= shifted
        return out

    def dilate(self, mask: np.ndarray) -> np.ndarray:
        out = mask.copy()
        d = self.dim
        for a in range(d):
            out[_axis_slice(d, a, slice(1, None))] |= mask[_axis_slice(d, a, slice(None, -1))]
            out[_axis_slice(d, a, slice(None, -1))] |= mask[_axis_slice(d, a, slice(1, None))]
        return out

    def level_mask(self, k: int) -> np.ndarray:
        """L_0 = nodes of positive weight; L_{k+1} = erode(L_k); L_{k-1} = dilate(L_k)."""
        if k not in self._levels:
            if k > 0:
                self._levels[k] = self.erode(self.level_mask(k - 1))
            else:
                self._levels[k] = self.dilate(self.level_mask(k + 1))
        return self._levels[k]

    def normal_derivative(self, f: np.ndarray) -> np.ndarray:
        """N f = sum_k nu_k D_k f."""
        return sum(self.nu[a] * self.diff(f, a) for a in range(self.dim))

    def volume(self) -> float:
        return float(self.weights.sum())

    # -- boundary ---------------------------------------------------------------

    def _crossings(self, axis: int):
        d = self.dim
        r0 = self.rho[_axis_slice(d, axis, slice(None, -1))]
        r1 = self.rho[_axis_slice(d, axis, slice(1, None))]
        hit = (r0 > 0) != (r1 > 0)
        idx = np.nonzero(hit)
        lo = np.stack([self.axes[a][i] for a, i in enumerate(idx)])
        hi = lo.copy()
        hi[axis] += self.h
        pos_lo = r0[idx] > 0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            rm = self.rho_fn(mid)
            same = (rm > 0) == pos_lo
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        return 0.5 * (lo + hi)

    @cached_property
    def boundary_samples(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(points (dim,P), normals (dim,P), surface weights (P,)) on the zero level set.

        Points are grid-line/boundary intersections.  For n = 1 they are
        ordered by angle and weighted by half the adjacent chord lengths;
        otherwise each crossing on an axis-a line with a = argmax|nu| carries
        the projected area h^{2n-1}/|nu_a|.
        """
        if self.dim == 2:
            pts = np.concatenate([self._crossings(a) for a in range(2)], axis=1)
            ang = np.arctan2(pts[1], pts[0])
            order = np.argsort(ang, kind="stable")
            pts, ang = pts[:, order], ang[order]
            keep = np.ones(pts.shape[1], bool)
            keep[1:] = np.sqrt(((pts[:, 1:] - pts[:, :-1]) ** 2).sum(axis=0)) > 1e-12
            pts = pts[:, keep]
            chord = np.sqrt(((np.roll(pts, -1, axis=1) - pts) ** 2).sum(0))
            if chord[-1] > 4 * self.h:
                # window grid: the sampled curve is open, drop the wrap-around chord
                chord[-1] = 0.0
            w = 0.5 * (chord + np.roll(chord, 1))
            return pts, self.normal_fn(pts), w
        all_pts, all_nrm, all_w = [], [], []
        for a in range(self.dim):
            pts = self._crossings(a)
            nrm = self.normal_fn(pts)
            sel = np.argmax(np.abs(nrm), axis=0) == a
            all_pts.append(pts[:, sel])
            all_nrm.append(nrm[:, sel])
            all_w.append(self.h ** (self.dim - 1) / np.abs(nrm[a, sel]))
        return (np.concatenate(all_pts, axis=1), np.concatenate(all_nrm, axis=1),
                np.concatenate(all_w))

    def surface_area(self) -> float:
        return float(self.boundary_samples[2].sum())

    def interpolate(self, values: np.ndarray, mask: np.ndarray, points: np.ndarray):
        """Multilinear interpolation at points (dim, P); returns (values, corners_all_valid)."""
        m = self.shape[0]
        g = (points - self.origin[:, None]) / self.h
        i0 = np.clip(np.floor(g).astype(int), 0, m - 2)
        fr = g - i0
        out = np.zeros(points.shape[1], dtype=np.result_type(values.dtype, float))
        ok = np.ones(points.shape[1], bool)
        for off in product((0, 1), repeat=self.dim):
            idx = tuple(i0[a] + off[a] for a in range(self.dim))
            wgt = np.prod([fr[a] if off[a] else 1 - fr[a] for a in range(self.dim)], axis=0)
            out += wgt * values[idx]
            ok &= mask[idx]
        return out, ok

    # -- io -----------------------------------------------------------------------

    def to_config(self) -> dict:
        cfg = dict(self.spec)
        cfg.update(n=self.n, h=self.h, band_width_cells=self.band_width_cells, pad_cells=self.pad_cells)
        return cfg

    def summary(self) -> dict:
        return {"n": self.n, "h": self.h, "box_shape": list(self.shape),
                "interior_nodes": int(self.level_mask(0).sum()),
                "band_nodes": int(self.band.sum()), "band_excluded": self.band_excluded,
                "volume": self.volume(), "boundary_samples": int(self.boundary_samples[2].size)}

    def export_nodes(self, path) -> None:
        """Binary node dump, little endian.

        Header: 8-byte magic ``DNSLABG1``; uint32 n; uint32 dim; float64 h;
        uint64 node count N; dim x uint32 box shape.  Body, row-major over
        nodes in C order of the box: float64 coordinates (N, dim); float64 rho
        (N,); float64 nu (N, dim); uint8 level-0 mask (N,).
        """
        N = self.num_nodes
        with open(path, "wb") as fh:
            fh.write(NODE_DUMP_MAGIC)
            fh.write(struct.pack("<IIdQ", self.n, self.dim, self.h, N))
            fh.write(struct.pack(f"<{self.dim}I", *self.shape))
            fh.write(np.ascontiguousarray(self.coords.reshape(self.dim, N).T, "<f8").tobytes())
            fh.write(np.ascontiguousarray(self.rho.reshape(N), "<f8").tobytes())
            fh.write(np.ascontiguousarray(self.nu.reshape(self.dim, N).T, "<f8").tobytes())
            fh.write(self.level_mask(0).reshape(N).astype("u1").tobytes())


def read_node_dump(path) -> dict:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != NODE_DUMP_MAGIC:
        raise GeometryError("not a node dump")
    n, dim, h, N = struct.unpack_from("<IIdQ", buf, 8)
    off = 8 + struct.calcsize("<IIdQ")
    shape = struct.unpack_from(f"<{dim}I", buf, off)
    off += 4 * dim
    coords = np.frombuffer(buf, "<f8", N * dim, off).reshape(N, dim)
    off += 8 * N * dim
    rho = np.frombuffer(buf, "<f8", N, off)
    off += 8 * N
    nu = np.frombuffer(buf, "<f8", N * dim, off).reshape(N, dim)
    off += 8 * N * dim
    mask = np.frombuffer(buf, "u1", N, off).astype(bool)
    return {"n": n, "dim": dim, "h": h, "shape": shape, "coords": coords, "rho": rho,
            "nu": nu, "mask": mask}


# -- model domains ----------------------------------------------------------------

def make_ball(n: int, radius: float, h: float, *, pad_cells: int = 4,
              band_width_cells: float = 4, window=None) -> DomainGrid:
    """Ball of the given radius about the origin.

    ``window = (center, half_extent)`` restricts the lattice to a box around
    ``center`` instead of the whole ball.
    """
    if radius <= 0:
        raise GeometryError("radius must be positive")
    if not h < radius / 4:
        raise GeometryError(f"need h < radius/4, got h={h}, radius={radius}")
    if 2 * radius / h + 1 < 5:
        raise GeometryError("fewer than 5 interior nodes per axis")

    def rho_fn(X):
        return np.sqrt((np.asarray(X) ** 2).sum(axis=0)) - radius

    def normal_fn(X):
        X = np.asarray(X, float)
        r = np.sqrt((X**2).sum(axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(r > 0, X / np.where(r > 0, r, 1.0), 0.0)

    spec = {"shape": "ball", "radius": float(radius)}
    center, extent = None, radius
    if window is not None:
        center, extent = window
        spec["window"] = {"center": [float(c) for c in center], "half_extent": float(extent)}
    return DomainGrid(n, h, rho_fn, normal_fn, extent, spec=spec, pad_cells=pad_cells,
                      band_width_cells=band_width_cells, center=center)


def ellipsoid_closest_point(X: np.ndarray, semiaxes: Sequence[float], tol: float = 1e-13,
                            max_iter: int = 200):
    """Closest point on sum y_i^2/a_i^2 = 1 for points X (dim, ...).

    Solves the Lagrange condition y_i = a_i^2 x_i/(a_i^2 + t) for the root of
    g(t) = sum a_i^2 x_i^2/(a_i^2+t)^2 - 1 on (-min a^2, inf) by safeguarded
    Newton.  Returns (y, t, converged).
    """
    X = np.asarray(X, float)
    a2 = np.asarray(semiaxes, float).reshape((-1,) + (1,) * (X.ndim - 1)) ** 2
    lo = np.full(X.shape[1:], -a2.min() * (1 - 1e-15))
    hi = np.full(X.shape[1:], 0.0)
    # upper bracket: g(hi) <= 0
    r = np.sqrt((X**2).sum(axis=0))
    hi = np.maximum(hi, r * np.sqrt(a2.max()) + 1.0)

    def g_and_dg(t):
        den = a2 + t
        q = a2 * X**2 / den**2
        return q.sum(axis=0) - 1.0, (-2 * q / den).sum(axis=0)

    t = np.zeros(X.shape[1:])
    glo, _ = g_and_dg(lo)
    on_medial = glo < 0
    converged = np.zeros(X.shape[1:], bool)
    for _ in range(max_iter):
        gv, dg = g_and_dg(t)
        lo = np.where(gv > 0, t, lo)
        hi = np.where(gv <= 0, t, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = t - gv / dg
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        t_new = np.where(bad, 0.5 * (lo + hi), step)
        converged = np.abs(t_new - t) <= tol * (1 + np.abs(t))
        t = t_new
        if converged.all():
            break
    t = np.where(on_medial, -a2.min(), t)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = a2 * X / (a2 + t)
    if on_medial.any():
        # x lies on the medial set: the root sits at t = -a_min^2 and the
        # closest point leaves the hyperplane x_min = 0
        k = int(np.argmin(a2.reshape(-1)))
        rest = [i for i in range(X.shape[0]) if i != k]
        s = sum((y[i] ** 2 / a2[i]) for i in rest)
        yk = np.sqrt(a2[k]) * np.sqrt(np.maximum(0.0, 1.0 - s))
        yk = np.where(X[k] < 0, -yk, yk).reshape(X.shape[1:])
        y[k] = np.where(on_medial, yk, y[k])
    return y, t, converged | on_medial


def make_ellipsoid(n: int, semiaxes: Sequence[float], h: float, *, pad_cells: int = 4,
                   band_width_cells: float = 4) -> DomainGrid:
    semiaxes = [float(a) for a in semiaxes]
    if len(semiaxes) != 2 * n:
        raise GeometryError(f"need {2 * n} semiaxes")
    if min(semiaxes) <= 0:
        raise GeometryError("semiaxes must be positive")
    a = np.array(semiaxes)

    def shape_of(X):
        return a.reshape((-1,) + (1,) * (np.asarray(X).ndim - 1))

    def rho_fn(X):
        X = np.asarray(X, float)
        y, _, _ = ellipsoid_closest_point(X, semiaxes)
        dist = np.sqrt(((X - y) ** 2).sum(axis=0))
        inside = ((X / shape_of(X)) ** 2).sum(axis=0) < 1
        return np.where(inside, -dist, dist)

    def normal_fn(X):
        X = np.asarray(X, float)
        y, _, _ = ellipsoid_closest_point(X, semiaxes)
        grad = y / shape_of(X) ** 2
        nrm = np.sqrt((grad**2).sum(axis=0))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = grad / nrm
        return np.where(nrm > 0, out, 0.0)

    # Newton must converge at every band node
    probe = make_probe_points(n, a.max(), h, pad_cells)
    y, t, conv = ellipsoid_closest_point(probe, semiaxes)
    dist = np.sqrt(((probe - y) ** 2).sum(axis=0))
    near = dist <= band_width_cells * h
    if not conv[near].all():
        raise GeometryError("closest-point Newton did not converge in the band")

    spec = {"shape": "ellipsoid", "semiaxes": semiaxes}
    return DomainGrid(n, h, rho_fn, normal_fn, a.max(), spec=spec, pad_cells=pad_cells,
                      band_width_cells=band_width_cells)


def make_probe_points(n: int, half_extent: float, h: float, pad_cells: int) -> np.ndarray:
    M = int(ceil(half_extent / h - 1e-12)) + pad_cells
    ax = h * np.arange(-M, M + 1)
    return np.stack(np.meshgrid(*([ax] * (2 * n)), indexing="ij"))


def grid_from_config(cfg: dict) -> DomainGrid:
    """Build a grid from {shape, n, radius | semiaxes, h, band_width_cells, pad_cells}."""
    shape = cfg.get("shape", "ball")
    kw = {"pad_cells": int(cfg.get("pad_cells", 4)),
          "band_width_cells": float(cfg.get("band_width_cells", 4))}
    if shape == "ball":
        win = cfg.get("window")
        if win is not None:
            kw["window"] = (win["center"], win["half_extent"])
        return make_ball(int(cfg["n"]), float(cfg.get("radius", 1.0)), float(cfg["h"]), **kw)
    if shape == "ellipsoid":
        return make_ellipsoid(int(cfg["n"]), cfg["semiaxes"], float(cfg["h"]), **kw)
    raise GeometryError(f"unknown domain shape {shape!r}")


def load_domain(path) -> DomainGrid:
    with open(path) as fh:
        return grid_from_config(json.load(fh))


# -- normal/tangential calculus -----------------------------------------------------

def tangential_decompose(grid: DomainGrid, j: int):
    """(Y_j, nu_j N) as callables on box arrays, j in 0..2n-1, with D_j = Y_j + nu_j N."""
    if not 0 <= j < grid.dim:
        raise GeometryError(f"axis {j} out of range")
    if not grid.band.any():
        raise GeometryError("no band nodes: normal field undefined")

    def normal_part(f):
        return grid.nu[j] * grid.normal_derivative(f)

    def tangential(f):
        return grid.diff(f, j) - normal_part(f)

    return tangential, normal_part


def one_sided_weights(s: int, step: float) -> np.ndarray:
    """Weights w_m, m = 0..s+1 (one point when s = 0), for d^s/dt^s at t = 0, second order."""
    npts = 1 if s == 0 else s + 2
    t = step * np.arange(npts)
    V = np.vander(t, npts, increasing=True).T
    rhs = np.zeros(npts)
    rhs[s] = factorial(s)
    return np.linalg.solve(V, rhs)


def normal_trace(values: np.ndarray, mask: np.ndarray, s: int, grid: DomainGrid,
                 ray_step: float | None = None) -> BoundaryTrace:
    """N^s of a scalar box field at the boundary samples via a one-sided stencil on the inward ray."""
    if s < 0:
        raise GeometryError("s must be non-negative")
    hn = grid.h if ray_step is None else float(ray_step)
    pts, nrm, w = grid.boundary_samples
    wts = one_sided_weights(s, hn)
    acc = np.zeros(pts.shape[1], complex)
    for m, wm in enumerate(wts):
        vals, ok = grid.interpolate(values, mask, pts - m * hn * nrm)
        if not ok.all():
            raise GeometryError("insufficient interior depth for the normal-ray stencil")
        acc += wm * vals
    # rho decreases along the inward ray t, so N = -d/dt
    return BoundaryTrace(pts, nrm, w, (-1) ** s * acc)


def normal_power_trace(psi: FormField, s: int, grid: DomainGrid | None = None,
                       ray_step: float | None = None) -> dict:
    """N^s (psi _| dbar rho)_I on the boundary, for every I."""
    grid = psi.grid if grid is None else grid
    if psi.q < 1:
        raise GeometryError("trace condition is defined for forms of degree >= 1")
    c = contract(psi, dbar_rho_form(grid))
    return {I: normal_trace(c.components[I], c.mask, s, grid, ray_step) for I in c.indices}


# -- special families -----------------------------------------------------------------

def smooth_step(x):
    """C-infinity step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, float)
    with np.errstate(divide="ignore", over="ignore"):
        f0 = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        f1 = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1 - x, 1.0)), 0.0)
    return f0 / (f0 + f1)


def smooth_cutoff(r):
    """1 on |r| <= 1/2, 0 on |r| >= 1, smooth in between."""
    return 1.0 - smooth_step(2 * np.abs(np.asarray(r, float)) - 1)


def blowup_family(grid: DomainGrid, s: int, eps: float, p: Sequence[float], delta: float,
                  I: tuple = (), cutoff: Callable | None = None) -> FormField:
    """phi = (-rho)^{s-1} (-rho + eps)^{3/4} chi dzbar^I, chi supported in B(p, delta).

    Samples are kept where -rho + eps > 0; the mask marks that set.
    """
    if s < 1:
        raise GeometryError("the family is defined for s >= 1")
    if not 0 < eps < delta:
        raise GeometryError("need 0 < eps < delta")
    cutoff = smooth_cutoff if cutoff is None else cutoff
    X = grid.coords
    p = np.asarray(p, float).reshape((-1,) + (1,) * grid.dim)
    r = np.sqrt(((X - p) ** 2).sum(axis=0)) / delta
    if not (grid.interior & (r < 1)).any():
        raise GeometryError("B(p, delta) does not meet the grid interior")
    chi = cutoff(r)
    base = eps - grid.rho
    valid = base > 0
    vals = np.where(valid, (-grid.rho) ** (s - 1) * np.where(valid, base, 0.0) ** 0.75 * chi, 0.0)
    comps = {J: np.zeros(grid.shape, complex) for J in form_indices(grid.n, len(I))}
    comps[tuple(I)] = vals.astype(complex)
    return FormField(len(I), comps, grid, valid)


def unit_trace_form(grid: DomainGrid, s: int) -> FormField:
    """(0,1) form psi with N^s (psi _| dbar rho) = 1 on the boundary (scalar contraction)."""
    omega = dbar_rho_form(grid)
    norm2 = 0.25 * (grid.nu**2).sum(axis=0)
    safe = np.where(norm2 > 0, norm2, 1.0)
    coef = (-1) ** s / factorial(s) * (-grid.rho) ** s / safe
    eta = FormField.scalar(grid, coef, grid.nu_valid)
    return wedge_left(omega, eta)


def density_corrector(phi: FormField, s: int, eps: float, grid: DomainGrid | None = None,
                      cutoff: Callable | None = None) -> FormField:
    """psi = c (-rho)^s chi(-rho/eps) dbar(rho) ^ N^s(phi _| dbar rho), c = (-1)^s / (s! |dbar rho|^2).

    With this normalisation N^s((phi - psi) _| dbar rho) vanishes on the boundary.
    """
    grid = phi.grid if grid is None else grid
    if phi.q < 1:
        raise GeometryError("corrector needs a form of degree >= 1")
    if eps > grid.band_width_cells * grid.h:
        raise GeometryError("band too thin for the support of chi(-rho/eps)")
    cutoff = smooth_cutoff if cutoff is None else cutoff
    omega = dbar_rho_form(grid)
    g = contract(phi, omega)
    comps, mask = dict(g.components), g.mask.copy()
    for _ in range(s):
        comps = {I: grid.normal_derivative(a) for I, a in comps.items()}
        mask = grid.erode(mask)
    support = np.abs(grid.rho) < eps
    norm2 = 0.25 * (grid.nu**2).sum(axis=0)
    safe = np.where(norm2 > 0, norm2, 1.0)
    coef = np.where(support, (-1) ** s / factorial(s) * (-grid.rho) ** s
                    * cutoff(-grid.rho / eps) / safe, 0.0)
    eta = FormField(g.q, {I: coef * np.where(support, a, 0) for I, a in comps.items()}, grid,
                    (mask & grid.nu_valid) | ~support)
    psi = wedge_left(omega, eta)
    return FormField(psi.q, psi.components, grid, eta.mask & phi.mask)
