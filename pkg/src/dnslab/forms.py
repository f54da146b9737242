"""(0,q) forms sampled on a grid, and the pointwise/differential algebra acting on them.

A form stores one complex array per increasing index J (entries 1..n) over
the grid's bounding box, together with a boolean mask of nodes where the
samples are meaningful. Differential operators shrink the mask to the nodes
whose centred stencil stays inside it.

Difference operators come from the grid (``grid.diff``, ``grid.erode``);
nothing here knows about the domain shape.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Mapping

import numpy as np


def form_indices(n: int, q: int) -> list[tuple[int, ...]]:
    """Increasing q-tuples with entries in 1..n, lexicographic."""
    if not 0 <= q <= n:
        return []
    return list(combinations(range(1, n + 1), q))


def permutation_sign(seq) -> int:
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
            elif seq[i] == seq[j]:
                return 0
    return sign


def epsilon(K, k: int, J) -> int:
    """Sign of the permutation kJ -> K when {k} u J = K as sets, else 0."""
    K, J = tuple(K), tuple(J)
    if len(K) != len(J) + 1:
        raise ValueError(f"degree mismatch: |K|={len(K)}, |J|={len(J)}")
    word = (k,) + J
    if sorted(word) != list(K):
        return 0
    return permutation_sign(word)


@dataclass(frozen=True, eq=False)
class FormField:
    q: int
    components: Mapping[tuple[int, ...], np.ndarray]
    grid: object
    mask: np.ndarray

    def __post_init__(self):
        expected = form_indices(self.grid.n, self.q)
        if set(self.components) != set(expected):
            raise ValueError(f"(0,{self.q}) form needs components {expected}")
        comps = {J: np.asarray(self.components[J], dtype=complex) for J in expected}
        for J, arr in comps.items():
            if arr.shape != self.grid.shape:
                raise ValueError(f"component {J} has shape {arr.shape}, grid is {self.grid.shape}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def indices(self) -> list[tuple[int, ...]]:
        return form_indices(self.grid.n, self.q)

    def __getitem__(self, J) -> np.ndarray:
        return self.components[tuple(J)]

    @classmethod
    def zeros(cls, grid, q: int, mask=None) -> "FormField":
        mask = np.ones(grid.shape, bool) if mask is None else mask
        return cls(q, {J: np.zeros(grid.shape, complex) for J in form_indices(grid.n, q)}, grid, mask)

    @classmethod
    def from_functions(cls, grid, q: int, funcs: Mapping[tuple, Callable] | Callable,
                       mask=None) -> "FormField":
        """Sample ``funcs[J](x)`` (x of shape (2n, ...)) at every box node; missing J are zero."""
        if callable(funcs):
            funcs = {(): funcs} if q == 0 else {form_indices(grid.n, q)[0]: funcs}
        X = grid.coords
        comps = {}
        for J in form_indices(grid.n, q):
            f = funcs.get(J)
            comps[J] = np.zeros(grid.shape, complex) if f is None else np.broadcast_to(
                np.asarray(f(X), dtype=complex), grid.shape).copy()
        mask = np.ones(grid.shape, bool) if mask is None else mask
        return cls(q, comps, grid, mask)

    @classmethod
    def scalar(cls, grid, values, mask=None) -> "FormField":
        mask = np.ones(grid.shape, bool) if mask is None else mask
        return cls(0, {(): values}, grid, mask)

    def with_mask(self, mask) -> "FormField":
        mask = np.asarray(mask, bool)
        return FormField(self.q, {J: np.where(mask, a, 0) for J, a in self.components.items()},
                         self.grid, mask)

    def _binary(self, other: "FormField", op) -> "FormField":
        if other.grid is not self.grid:
            raise ValueError("forms live on different grids")
        if other.q != self.q:
            raise ValueError("forms have different degrees")
        comps = {J: op(self.components[J], other.components[J]) for J in self.indices}
        return FormField(self.q, comps, self.grid, self.mask & other.mask)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, c):
        if isinstance(c, np.ndarray):
            return FormField(self.q, {J: a * c for J, a in self.components.items()}, self.grid, self.mask)
        return FormField(self.q, {J: a * c for J, a in self.components.items()}, self.grid, self.mask)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def sup(self, mask=None) -> float:
        m = self.mask if mask is None else (self.mask & mask)
        if not m.any():
            return 0.0
        return max(float(np.abs(a[m]).max()) for a in self.components.values())

    def pointwise_norm2(self) -> np.ndarray:
        return sum(np.abs(a) ** 2 for a in self.components.values())


def dbar_z(f: np.ndarray, k: int, grid) -> np.ndarray:
    """Wirtinger derivative d/dzbar_k = (D_k + i D_{k+n}) / 2, k in 1..n."""
    n = grid.n
    return 0.5 * (grid.diff(f, k - 1) + 1j * grid.diff(f, k - 1 + n))


def d_z(f: np.ndarray, k: int, grid) -> np.ndarray:
    """Wirtinger derivative d/dz_k = (D_k - i D_{k+n}) / 2."""
    n = grid.n
    return 0.5 * (grid.diff(f, k - 1) - 1j * grid.diff(f, k - 1 + n))


def dbar(phi: FormField, grid=None) -> FormField:
    grid = phi.grid if grid is None else grid
    n, q = grid.n, phi.q
    if q >= n:
        raise ValueError(f"dbar of a (0,{q}) form with n={n} is not defined")
    out = {K: np.zeros(grid.shape, complex) for K in form_indices(n, q + 1)}
    for J in form_indices(n, q):
        comp = phi.components[J]
        for k in range(1, n + 1):
            if k in J:
                continue
            K = tuple(sorted((k,) + J))
            out[K] += epsilon(K, k, J) * dbar_z(comp, k, grid)
    return FormField(q + 1, out, grid, grid.erode(phi.mask))


def vartheta(psi: FormField, grid=None) -> FormField:
    """Formal adjoint: -sum eps^J_{iI} d(psi_J)/dz_i dzbar^I."""
    grid = psi.grid if grid is None else grid
    n, q = grid.n, psi.q
    if q < 1:
        raise ValueError("vartheta needs a form of degree >= 1")
    out = {I: np.zeros(grid.shape, complex) for I in form_indices(n, q - 1)}
    for I in form_indices(n, q - 1):
        for i in range(1, n + 1):
            if i in I:
                continue
            J = tuple(sorted((i,) + I))
            out[I] -= epsilon(J, i, I) * d_z(psi.components[J], i, grid)
    return FormField(q - 1, out, grid, grid.erode(psi.mask))


def contract(psi: FormField, omega: FormField) -> FormField:
    """(psi _| omega)_I = sum eps^K_{kI} psi_K conj(omega_k); omega is a (0,1) form."""
    if psi.q < 1:
        raise ValueError("contraction needs a form of degree >= 1")
    if omega.q != 1:
        raise ValueError("contract with a (0,1) form")
    n = psi.n
    out = {I: np.zeros(psi.grid.shape, complex) for I in form_indices(n, psi.q - 1)}
    for I in out:
        for k in range(1, n + 1):
            if k in I:
                continue
            K = tuple(sorted((k,) + I))
            out[I] += epsilon(K, k, I) * psi.components[K] * np.conj(omega.components[(k,)])
    return FormField(psi.q - 1, out, psi.grid, psi.mask & omega.mask)


def wedge_left(omega: FormField, eta: FormField) -> FormField:
    """omega ^ eta for a (0,1) form omega: components sum eps^K_{kJ} omega_k eta_J."""
    if omega.q != 1:
        raise ValueError("left factor must be a (0,1) form")
    n = eta.n
    if eta.q >= n:
        raise ValueError(f"cannot raise a (0,{eta.q}) form when n={n}")
    out = {K: np.zeros(eta.grid.shape, complex) for K in form_indices(n, eta.q + 1)}
    for J in form_indices(n, eta.q):
        for k in range(1, n + 1):
            if k in J:
                continue
            K = tuple(sorted((k,) + J))
            out[K] += epsilon(K, k, J) * omega.components[(k,)] * eta.components[J]
    return FormField(eta.q + 1, out, eta.grid, eta.mask & omega.mask)


def dbar_rho_form(grid) -> FormField:
    """The (0,1) form dbar(rho) with coefficients (nu_k + i nu_{k+n}) / 2."""
    n = grid.n
    comps = {(k,): 0.5 * (grid.nu[k - 1] + 1j * grid.nu[k - 1 + n]) for k in range(1, n + 1)}
    return FormField(1, comps, grid, grid.nu_valid.copy())


def wedge_dbar_rho(eta: FormField, grid=None) -> FormField:
    """dbar(rho) ^ eta, so that contracting back with dbar(rho) gives |dbar rho|^2 eta
    minus dbar(rho) ^ (eta _| dbar rho)."""
    grid = eta.grid if grid is None else grid
    omega = dbar_rho_form(grid)
    return wedge_left(omega, eta)
