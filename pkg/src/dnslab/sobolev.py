"""Discrete W^s inner products on a DomainGrid.

Unknowns live on node sets S(k, c): start from the level set L_k and erode
c_a times along each axis a.  The per-axis centred difference D_a maps
S(k, c) onto S(k, c + e_a), so D^alpha is a product of sparse matrices whose
image set does not depend on the order of the factors.  Each set carries
lumped volume weights: the mass of level-0 nodes outside the set is moved to
the nearest node inside it.  Weights therefore depend on the set alone, which
is what makes the recursion

    <f, g>_s = <f, g>_0 + sum_j <D_j f, D_j g>_{s-1}

hold to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
from scipy import ndimage

from .forms import FormField
from .multiindex import MultiIndex, gamma, graded_indices


def _key(c) -> tuple[int, ...]:
    return tuple(int(v) for v in c)


def node_set(grid, level: int, c=None) -> np.ndarray:
    """Mask of S(level, c)."""
    c = (0,) * grid.dim if c is None else _key(c)
    key = ("set", level, c)
    if key not in grid.cache:
        if not any(c):
            grid.cache[key] = grid.level_mask(level)
        else:
            a = max(i for i in range(grid.dim) if c[i] > 0)
            prev = list(c)
            prev[a] -= 1
            grid.cache[key] = grid.erode(node_set(grid, level, prev), axes=[a])
    return grid.cache[key]


def set_nodes(grid, level: int, c=None) -> np.ndarray:
    """Flat (C order) indices of S(level, c); this is the unknown ordering."""
    c = (0,) * grid.dim if c is None else _key(c)
    key = ("nodes", level, c)
    if key not in grid.cache:
        grid.cache[key] = np.flatnonzero(node_set(grid, level, c).ravel())
    return grid.cache[key]


def lumped_weights(grid, level: int, c=None) -> np.ndarray:
    """Volume weights on S(level, c) (one per node), summing to the total level-0 mass."""
    c = (0,) * grid.dim if c is None else _key(c)
    key = ("weights", level, c)
    if key not in grid.cache:
        S = node_set(grid, level, c)
        if not S.any():
            raise ValueError("empty node set: stencils exceed the grid")
        w = grid.weights
        lost = (w > 0) & ~S
        out = w.copy()
        if lost.any():
            _, inds = ndimage.distance_transform_edt(~S, return_indices=True)
            src = np.flatnonzero(lost.ravel())
            dst = np.ravel_multi_index(tuple(i.ravel()[src] for i in inds), grid.shape)
            flat = out.ravel()
            np.add.at(flat, dst, w.ravel()[src])
            out = flat.reshape(grid.shape)
        grid.cache[key] = out.ravel()[set_nodes(grid, level, c)]
    return grid.cache[key]


def axis_difference(grid, level: int, c, axis: int) -> sp.csr_matrix:
    """Centred difference along ``axis`` from S(level, c) to S(level, c + e_axis)."""
    c = _key(c)
    key = ("D", level, c, axis)
    if key not in grid.cache:
        src = set_nodes(grid, level, c)
        c2 = list(c)
        c2[axis] += 1
        dst = set_nodes(grid, level, c2)
        pos = np.full(grid.num_nodes, -1, dtype=np.int64)
        pos[src] = np.arange(src.size)
        stride = int(np.prod(grid.shape[axis + 1:]))
        fwd, bwd = pos[dst + stride], pos[dst - stride]
        if (fwd < 0).any() or (bwd < 0).any():
            raise AssertionError("eroded set is not closed under the stencil")
        rows = np.repeat(np.arange(dst.size), 2)
        cols = np.stack([fwd, bwd], axis=1).ravel()
        vals = np.tile([1.0 / (2 * grid.h), -1.0 / (2 * grid.h)], dst.size)
        grid.cache[key] = sp.csr_matrix((vals, (rows, cols)), shape=(dst.size, src.size))
    return grid.cache[key]


def restriction(grid, level: int, c_from, c_to) -> sp.csr_matrix:
    """0/1 matrix picking the nodes of S(level, c_to) out of the larger S(level, c_from)."""
    src, dst = set_nodes(grid, level, c_from), set_nodes(grid, level, c_to)
    pos = np.full(grid.num_nodes, -1, dtype=np.int64)
    pos[src] = np.arange(src.size)
    cols = pos[dst]
    if (cols < 0).any():
        raise ValueError("target set is not contained in the source set")
    return sp.csr_matrix((np.ones(dst.size), (np.arange(dst.size), cols)), shape=(dst.size, src.size))


def derivative_matrix(grid, level: int, alpha, c0=None) -> tuple[sp.csr_matrix, tuple]:
    """D^alpha on S(level, c0) as a product of axis differences, axes in increasing order."""
    alpha = tuple(MultiIndex(tuple(alpha)))
    c = list((0,) * grid.dim if c0 is None else _key(c0))
    mat = sp.identity(set_nodes(grid, level, c).size, format="csr")
    for a in range(grid.dim):
        for _ in range(alpha[a]):
            mat = axis_difference(grid, level, c, a) @ mat
            c[a] += 1
    return mat.tocsr(), tuple(c)


@dataclass(frozen=True, eq=False)
class GramMatrix:
    s: int
    level: int
    c0: tuple
    matrix: sp.csr_matrix
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.size

    def vector(self, field: np.ndarray) -> np.ndarray:
        return np.asarray(field).ravel()[self.nodes]

    def norm(self, v) -> float:
        v = np.asarray(v)
        return float(np.sqrt(max(np.vdot(v, self.matrix @ v).real, 0.0)))

    def dot(self, u, v) -> complex:
        """<u, v> = v^H M u (linear in u)."""
        return complex(np.vdot(v, self.matrix @ u))


def assemble_gram(grid, s: int, level: int = 0, c0=None, order=None) -> GramMatrix:
    """M_s = sum_{|alpha| <= s} gamma_alpha (D^alpha)^T W_alpha D^alpha on S(level, c0).

    ``order`` permutes the processing order of the alpha terms; the result is
    bitwise the same because terms are merged after sorting by
    (row, col, graded rank of alpha).
    """
    if s < 0:
        raise ValueError("s must be non-negative")
    c0 = (0,) * grid.dim if c0 is None else _key(c0)
    key = ("gram", s, level, c0)
    if order is None and key in grid.cache:
        return grid.cache[key]
    alphas = graded_indices(grid.dim, s)
    ranks = list(range(len(alphas))) if order is None else list(order)
    if sorted(ranks) != list(range(len(alphas))):
        raise ValueError("order must be a permutation of the alpha terms")
    N = set_nodes(grid, level, c0).size
    rows, cols, vals, tags = [], [], [], []
    for r in ranks:
        alpha = alphas[r]
        try:
            D, c = derivative_matrix(grid, level, alpha, c0)
            w = lumped_weights(grid, level, c)
        except ValueError as exc:
            raise ValueError(f"s={s} too large for this grid: {exc}") from None
        term = (D.T @ sp.diags(gamma(alpha) * w) @ D).tocoo()
        rows.append(term.row)
        cols.append(term.col)
        vals.append(term.data)
        tags.append(np.full(term.nnz, r))
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    vals, tags = np.concatenate(vals), np.concatenate(tags)
    perm = np.lexsort((tags, cols, rows))
    rows, cols, vals = rows[perm], cols[perm], vals[perm]
    flat = rows.astype(np.int64) * N + cols
    starts = np.flatnonzero(np.r_[True, flat[1:] != flat[:-1]])
    summed = np.add.reduceat(vals, starts)
    M = sp.csr_matrix((summed, (rows[starts], cols[starts])), shape=(N, N))
    M = (0.5 * (M + M.T)).tocsr()
    M.sort_indices()
    G = GramMatrix(s, level, c0, M, set_nodes(grid, level, c0), lumped_weights(grid, level, c0))
    if order is None:
        grid.cache[key] = G
    return G


def form_block(M: GramMatrix, count: int) -> sp.csr_matrix:
    """Block-diagonal Gram for ``count`` stacked form components."""
    return sp.block_diag([M.matrix] * count, format="csr")


def form_vector(f: FormField, nodes: np.ndarray) -> np.ndarray:
    return np.concatenate([f.components[J].ravel()[nodes] for J in f.indices])


def inner(f: FormField, g: FormField, M: GramMatrix) -> complex:
    """sum_J <f_J, g_J>_s, linear in f; forms of different degree pair to zero."""
    if f.grid is not g.grid:
        raise ValueError("forms live on different grids")
    if f.q != g.q:
        return 0j
    total = 0j
    for J in f.indices:
        total += M.dot(M.vector(f.components[J]), M.vector(g.components[J]))
    return total


def norm(f: FormField, M: GramMatrix) -> float:
    return float(np.sqrt(max(inner(f, f, M).real, 0.0)))


def quadrature_inner(f: np.ndarray, g: np.ndarray, grid, s: int, level: int = 0) -> complex:
    """Array-slicing evaluation of sum_alpha gamma_alpha sum_S w D^alpha f conj(D^alpha g).

    Shares no code with the sparse assembly beyond the node sets and weights.
    """
    total = 0j
    for alpha in graded_indices(grid.dim, s):
        df, dg = np.asarray(f, complex), np.asarray(g, complex)
        for a in range(grid.dim):
            for _ in range(alpha[a]):
                df, dg = grid.diff(df, a), grid.diff(dg, a)
        c = tuple(alpha)
        nodes = set_nodes(grid, level, c)
        w = lumped_weights(grid, level, c)
        total += gamma(alpha) * np.sum(w * df.ravel()[nodes] * np.conj(dg.ravel()[nodes]))
    return complex(total)


def recursion_check(f: np.ndarray, g: np.ndarray, grid, s: int, level: int = 0) -> float:
    """|<f,g>_s - <f,g>_0 - sum_j <D_j f, D_j g>_{s-1}| with every term from its own Gram matrix."""
    if s < 1:
        raise ValueError("recursion needs s >= 1")
    Ms, M0 = assemble_gram(grid, s, level), assemble_gram(grid, 0, level)
    fv, gv = Ms.vector(f), Ms.vector(g)
    lhs = Ms.dot(fv, gv)
    rhs = M0.dot(fv, gv)
    for j in range(grid.dim):
        e = [0] * grid.dim
        e[j] = 1
        Dj = axis_difference(grid, level, (0,) * grid.dim, j)
        Mj = assemble_gram(grid, s - 1, level, e)
        rhs += Mj.dot(Dj @ fv, Dj @ gv)
    return abs(lhs - rhs)


def min_eigenvalue(M: GramMatrix) -> float:
    """Smallest eigenvalue (dense; small grids only)."""
    return float(np.linalg.eigvalsh(M.matrix.toarray())[0])


def export_matrix_market(M, path, comment: str = "") -> None:
    """Write a Gram matrix (or any Hermitian sparse matrix) as complex Hermitian Matrix Market."""
    mat = M.matrix if isinstance(M, GramMatrix) else M
    scipy.io.mmwrite(str(path), sp.coo_matrix(mat, dtype=complex), comment=comment,
                     field="complex", symmetry="hermitian")
