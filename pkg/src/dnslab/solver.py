"""Discrete (dbar, s)-Neumann problem.

(0,q) forms live on the level set L_q (stacked components, increasing J,
nodes in C order) and dbar_q maps L_q into L_{q+1}.  With A = dbar_{q-1},
B = dbar_q and block Gram matrices M_k, the W^s adjoint is
A* = M_{q-1}^{-1} A^H M_q and the box operator is A A* + B* B.  Its
M_q-Hermitian form is

    K = M_q A M_{q-1}^{-1} A^H M_q + B^H M_{q+1} B.

Direct solves use the equivalent saddle system in (u, y = A* u):

    [ B^H M_{q+1} B   M_q A    ] [u]   [M_q f]
    [ A^H M_q        -M_{q-1}  ] [y] = [  0  ]
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import FormField, dbar, dbar_rho_form, epsilon, form_indices, vartheta
from .multiindex import gamma, graded_indices
from .sobolev import assemble_gram, axis_difference, form_block, set_nodes

DIRECT_LIMIT = 20000
HARMONIC_RTOL = 1e-8


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SparseOperator:
    matrix: sp.csr_matrix
    q_from: int
    q_to: int

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, v):
        return self.matrix @ v


def _pick(grid, src_level: int, src_c, dst_level: int) -> sp.csr_matrix:
    """0/1 restriction from S(src_level, src_c) onto L_{dst_level}."""
    src = set_nodes(grid, src_level, src_c)
    dst = set_nodes(grid, dst_level)
    pos = np.full(grid.num_nodes, -1, dtype=np.int64)
    pos[src] = np.arange(src.size)
    cols = pos[dst]
    if (cols < 0).any():
        raise AssertionError("level set is not inside the stencil image")
    return sp.csr_matrix((np.ones(dst.size), (np.arange(dst.size), cols)), shape=(dst.size, src.size))


def dbar_op(grid, q: int) -> SparseOperator:
    """Matrix of forms.dbar from (0,q) forms on L_q to (0,q+1) forms on L_{q+1}."""
    n = grid.n
    if not 0 <= q < n:
        raise ValueError(f"dbar_op needs 0 <= q < n, got q={q}, n={n}")
    key = ("dbar", q)
    if key not in grid.cache:
        zero = (0,) * grid.dim
        wirt = {}
        for k in range(1, n + 1):
            parts = []
            for a, coef in ((k - 1, 0.5), (k - 1 + n, 0.5j)):
                e = [0] * grid.dim
                e[a] = 1
                parts.append(coef * (_pick(grid, q, e, q + 1) @ axis_difference(grid, q, zero, a)))
            wirt[k] = (parts[0] + parts[1]).tocsr()
        rowsI, colsI = form_indices(n, q + 1), form_indices(n, q)
        blocks = [[None] * len(colsI) for _ in rowsI]
        for bi, K in enumerate(rowsI):
            for bj, J in enumerate(colsI):
                for k in range(1, n + 1):
                    if k not in J and tuple(sorted((k,) + J)) == K:
                        blocks[bi][bj] = epsilon(K, k, J) * wirt[k]
        Nr, Nc = set_nodes(grid, q + 1).size, set_nodes(grid, q).size
        for bi in range(len(rowsI)):
            if blocks[bi][0] is None:
                blocks[bi][0] = sp.csr_matrix((Nr, Nc), dtype=complex)
        for bj in range(len(colsI)):
            if blocks[0][bj] is None:
                blocks[0][bj] = sp.csr_matrix((Nr, Nc), dtype=complex)
        grid.cache[key] = SparseOperator(sp.bmat(blocks, format="csr", dtype=complex), q, q + 1)
    return grid.cache[key]


def form_to_vector(f: FormField, level: int | None = None) -> np.ndarray:
    level = f.q if level is None else level
    nodes = set_nodes(f.grid, level)
    return np.concatenate([f.components[J].ravel()[nodes] for J in f.indices])


def vector_to_form(v: np.ndarray, grid, q: int, level: int | None = None) -> FormField:
    level = q if level is None else level
    nodes = set_nodes(grid, level)
    comps = {}
    for i, J in enumerate(form_indices(grid.n, q)):
        arr = np.zeros(grid.num_nodes, complex)
        arr[nodes] = v[i * nodes.size:(i + 1) * nodes.size]
        comps[J] = arr.reshape(grid.shape)
    return FormField(q, comps, grid, grid.level_mask(level))


class _RealLU:
    """splu of a real matrix applied to complex right-hand sides."""

    def __init__(self, mat):
        try:
            self.lu = spla.splu(sp.csc_matrix(mat))
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from None

    def solve(self, b):
        b = np.asarray(b)
        if np.iscomplexobj(b):
            return self.lu.solve(np.ascontiguousarray(b.real)) + 1j * self.lu.solve(
                np.ascontiguousarray(b.imag))
        return self.lu.solve(b)


class AdjointOperator:
    """A* with <A x, y>_to = <x, A* y>_from, i.e. M_from (A* y) = A^H M_to y."""

    def __init__(self, A, M_from, M_to, lu_from=None):
        self.A = A.matrix if isinstance(A, SparseOperator) else A
        self.M_from, self.M_to = M_from, M_to
        self.lu_from = _RealLU(M_from) if lu_from is None else lu_from
        self._lu_to = None

    @property
    def shape(self):
        return self.A.shape[::-1]

    def __matmul__(self, y):
        return self.lu_from.solve(self.A.conj().T @ (self.M_to @ y))

    def adjoint_apply(self, x):
        """(A*)* x computed from the definition; equals A x."""
        if self._lu_to is None:
            self._lu_to = _RealLU(self.M_to)
        # (A*)^H = M_to A M_from^{-1}
        return self._lu_to.solve(self.M_to @ (self.A @ self.lu_from.solve(self.M_from @ x)))


def adjoint_op(A, M_from, M_to) -> AdjointOperator:
    mf = M_from.matrix if hasattr(M_from, "matrix") else M_from
    mt = M_to.matrix if hasattr(M_to, "matrix") else M_to
    return AdjointOperator(A, mf, mt)


class DbarComplex:
    """Cached Gram matrices, dbar matrices and factorizations for one (grid, s)."""

    def __init__(self, grid, s: int):
        if s < 0:
            raise ValueError("s must be non-negative")
        self.grid, self.s, self.n = grid, s, grid.n
        self._M, self._Mlu, self._saddle, self._harm = {}, {}, {}, {}

    def size(self, q: int) -> int:
        return comb(self.n, q) * set_nodes(self.grid, q).size

    def M(self, q: int) -> sp.csr_matrix:
        if q not in self._M:
            self._M[q] = form_block(assemble_gram(self.grid, self.s, level=q), comb(self.n, q))
        return self._M[q]

    def Mlu(self, q: int) -> _RealLU:
        if q not in self._Mlu:
            self._Mlu[q] = _RealLU(self.M(q))
        return self._Mlu[q]

    def A(self, q: int) -> sp.csr_matrix:
        """dbar on (0,q) forms."""
        return dbar_op(self.grid, q).matrix

    def adjoint(self, q: int) -> AdjointOperator:
        """dbar* from (0,q+1) to (0,q)."""
        return AdjointOperator(self.A(q), self.M(q), self.M(q + 1), self.Mlu(q))

    def inner(self, q: int, u, v) -> complex:
        return complex(np.vdot(v, self.M(q) @ u))

    def norm(self, q: int, u) -> float:
        return float(np.sqrt(max(self.inner(q, u, u).real, 0.0)))

    def _check_q(self, q: int):
        if not 1 <= q <= self.n:
            raise ValueError(f"box is posed for 1 <= q <= n, got q={q}")

    def _BMB(self, q: int):
        if q < self.n:
            B = self.A(q)
            return (B.conj().T @ self.M(q + 1) @ B).tocsr()
        N = self.size(q)
        return sp.csr_matrix((N, N), dtype=complex)

    def box_apply(self, q: int, u):
        self._check_q(q)
        out = self.A(q - 1) @ (self.adjoint(q - 1) @ u)
        if q < self.n:
            out = out + self.adjoint(q) @ (self.A(q) @ u)
        return out

    def K_apply(self, q: int, u):
        return self.M(q) @ self.box_apply(q, u)

    def K_operator(self, q: int) -> spla.LinearOperator:
        N = self.size(q)
        return spla.LinearOperator((N, N), matvec=lambda u: self.K_apply(q, u), dtype=complex)

    def saddle(self, q: int, Z=None, shift: float = 0.0):
        """Sparse LU of the saddle system, optionally bordered by the columns M_q Z."""
        self._check_q(q)
        key = (q, None if Z is None else Z.shape[1], shift)
        if key not in self._saddle:
            Mq, Mp, A = self.M(q), self.M(q - 1), self.A(q - 1)
            top = self._BMB(q) + shift * Mq
            blocks = [[top, Mq @ A], [A.conj().T @ Mq, -Mp]]
            if Z is not None:
                MZ = sp.csr_matrix(Mq @ Z)
                blocks[0].append(MZ)
                blocks[1].append(None)
                blocks.append([MZ.conj().T, None, None])
            S = sp.bmat(blocks, format="csc", dtype=complex)
            try:
                self._saddle[key] = spla.splu(S)
            except RuntimeError as exc:
                raise SolverError(f"saddle factorization failed: {exc}") from None
        return self._saddle[key]

    def _saddle_solve(self, q: int, rhs, Z=None, shift: float = 0.0):
        lu = self.saddle(q, Z, shift)
        extra = self.size(q - 1) + (0 if Z is None else Z.shape[1])
        sol = lu.solve(np.concatenate([rhs, np.zeros(extra, complex)]))
        N = self.size(q)
        return sol[:N], sol[N:N + self.size(q - 1)]

    def harmonic(self, q: int, k: int = 8) -> dict:
        """Smallest and largest eigenvalues of the pencil (K, M_q) and the near-kernel basis."""
        self._check_q(q)
        if q in self._harm:
            return self._harm[q]
        N = self.size(q)
        Kop = self.K_operator(q)
        Mq = self.M(q).astype(complex)
        Minv = spla.LinearOperator((N, N), matvec=self.Mlu(q).solve, dtype=complex)
        v0 = np.ones(N, complex)
        lam_max = float(np.real(spla.eigsh(Kop, k=1, M=Mq, Minv=Minv, which="LM", v0=v0,
                                           tol=1e-6, return_eigenvectors=False))[0])
        try:
            self.saddle(q)
            shift = 0.0
        except SolverError:
            shift = 1e-10 * lam_max
        inv = spla.LinearOperator((N, N), matvec=lambda b: self._saddle_solve(q, b, None, shift)[0],
                                  dtype=complex)
        k = max(1, min(k, N - 2))
        while True:
            # the low spectrum comes in tight clusters; a wide Krylov space separates them cheaply
            ncv = min(N - 1, max(5 * k, 40))
            vals, vecs = spla.eigsh(Kop, k=k, M=Mq, sigma=-shift, OPinv=inv, which="LM", v0=v0,
                                    ncv=ncv, tol=1e-7)
            vals = np.real(vals)
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
            small = vals < HARMONIC_RTOL * lam_max
            if small.sum() < k or k >= N - 2:
                break
            k = min(2 * k, N - 2)
        Z = vecs[:, small]
        if Z.shape[1]:
            # M-orthonormalise
            G = Z.conj().T @ (Mq @ Z)
            L = np.linalg.cholesky(G)
            Z = Z @ np.linalg.inv(L).conj().T
        self._harm[q] = {"eigen_min": float(vals[0]), "eigen_max": lam_max,
                         "harmonic_dim": int(small.sum()), "Z": Z, "eigenvalues": vals.tolist()}
        return self._harm[q]

    def neumann(self, q: int, f, method: str = "auto", tol: float = 1e-10, maxiter: int = 20000,
                check_harmonic: bool = True) -> dict:
        """u = N_s f on the M_q-orthogonal complement of the discrete harmonic space."""
        self._check_q(q)
        f = np.asarray(f, complex)
        N = self.size(q)
        harm = self.harmonic(q) if check_harmonic else {"harmonic_dim": 0, "Z": None}
        Z = harm["Z"] if harm["harmonic_dim"] else None
        Mq = self.M(q)
        fh = np.zeros_like(f)
        if Z is not None:
            fh = Z @ (Z.conj().T @ (Mq @ f))
        if method == "auto":
            method = "direct" if N < DIRECT_LIMIT else "cg"
        iters = 0
        if method == "direct":
            u, y = self._saddle_solve(q, Mq @ (f - fh), Z)
        elif method == "cg":
            u, iters = self._cg(q, f - fh, tol, maxiter)
            if Z is not None:
                u = u - Z @ (Z.conj().T @ (Mq @ u))
            y = self.adjoint(q - 1) @ u
        else:
            raise ValueError(f"unknown method {method!r}")
        box_u = self.A(q - 1) @ y
        if q < self.n:
            box_u = box_u + self.adjoint(q) @ (self.A(q) @ u)
        fn = self.norm(q, f)
        res = self.norm(q, box_u - (f - fh)) / fn if fn > 0 else float(self.norm(q, box_u))
        return {"u": u, "y": y, "box_u": box_u, "f_harmonic": fh, "residual": res,
                "norm_ratio": self.norm(q, u) / fn if fn > 0 else 0.0,
                "harmonic_dim": harm["harmonic_dim"], "eigen_min": harm.get("eigen_min"),
                "iterations": iters, "method": method}

    def _cg(self, q: int, f, tol: float, maxiter: int):
        Mq, Mp, A = self.M(q), self.M(q - 1), self.A(q - 1)
        diag = np.real((self._BMB(q)).diagonal())
        C = Mq @ A
        diag = diag + np.real(np.asarray((C.multiply(C.conj()) @ (1.0 / Mp.diagonal())[:, None])).ravel())
        diag = np.where(diag > 0, diag, 1.0)
        N = self.size(q)
        P = spla.LinearOperator((N, N), matvec=lambda v: v / diag, dtype=complex)
        count = [0]

        def cb(_):
            count[0] += 1

        u, info = spla.cg(self.K_operator(q), Mq @ f, rtol=tol, atol=0.0, maxiter=maxiter, M=P,
                          callback=cb)
        if info != 0:
            raise SolverError(f"CG did not converge in {maxiter} iterations")
        return u, count[0]


def get_complex(grid, s: int) -> DbarComplex:
    key = ("complex", s)
    if key not in grid.cache:
        grid.cache[key] = DbarComplex(grid, s)
    return grid.cache[key]


# -- operations on FormFields ---------------------------------------------------------

@dataclass
class BoxOperator:
    complex: DbarComplex
    q: int

    def __matmul__(self, u):
        return self.complex.box_apply(self.q, u)

    def hermitian_form(self, u, v) -> complex:
        """<box u, v>_s."""
        return self.complex.inner(self.q, self @ u, v)


def box_op(grid, q: int, s: int) -> BoxOperator:
    if q < 1:
        raise ValueError("box is not posed on functions (q = 0)")
    cx = get_complex(grid, s)
    cx._check_q(q)
    return BoxOperator(cx, q)


@dataclass
class HodgePieces:
    f1: FormField
    f2: FormField
    h: FormField
    diagnostics: dict = field(default_factory=dict)


def neumann_solve(f: FormField, q: int, s: int, **kw) -> tuple[FormField, dict]:
    if f.q != q:
        raise ValueError("form degree does not match q")
    cx = get_complex(f.grid, s)
    out = cx.neumann(q, form_to_vector(f), **kw)
    report = {k: out[k] for k in ("residual", "norm_ratio", "harmonic_dim", "eigen_min",
                                  "iterations", "method")}
    return vector_to_form(out["u"], f.grid, q), report


def hodge_decompose(f: FormField, q: int, s: int, **kw) -> HodgePieces:
    if f.q != q:
        raise ValueError("form degree does not match q")
    grid = f.grid
    cx = get_complex(grid, s)
    fv = form_to_vector(f)
    out = cx.neumann(q, fv, **kw)
    f1 = cx.A(q - 1) @ out["y"]
    f2 = cx.adjoint(q) @ (cx.A(q) @ out["u"]) if q < cx.n else np.zeros_like(fv)
    h = fv - f1 - f2
    nf, n1, n2, nh = (cx.norm(q, v) for v in (fv, f1, f2, h))
    scale2 = nf**2 if nf > 0 else 1.0
    diag = {
        "norm_f": nf, "norm_f1": n1, "norm_f2": n2, "norm_h": nh,
        "orth_12": abs(cx.inner(q, f1, f2)) / (n1 * n2) if n1 * n2 > 0 else 0.0,
        "orth_1h": abs(cx.inner(q, f1, h)) / scale2,
        "orth_2h": abs(cx.inner(q, f2, h)) / scale2,
        "pythagoras": abs(nf**2 - n1**2 - n2**2 - nh**2) / scale2,
        "residual": out["residual"], "harmonic_dim": out["harmonic_dim"],
        "eigen_min": out["eigen_min"], "norm_ratio": out["norm_ratio"],
    }
    return HodgePieces(vector_to_form(f1, grid, q), vector_to_form(f2, grid, q),
                       vector_to_form(h, grid, q), diag)


def canonical_solve(f: FormField, q: int, s: int, range_tol: float = 1e-6) -> tuple[FormField, dict]:
    """v = dbar* N_s f: the solution of dbar v = f of least W^s norm."""
    grid = f.grid
    cx = get_complex(grid, s)
    fv = form_to_vector(f)
    out = cx.neumann(q, fv)
    f1 = cx.A(q - 1) @ out["y"]
    nf = cx.norm(q, fv)
    defect = cx.norm(q, fv - f1) / nf if nf > 0 else 0.0
    if defect > range_tol:
        raise SolverError(f"f is not in the range of dbar (relative defect {defect:.3e})")
    v = out["y"]
    res = cx.norm(q, cx.A(q - 1) @ v - fv) / nf if nf > 0 else 0.0
    return vector_to_form(v, grid, q - 1), {"range_defect": defect, "residual": res}


def kappa_defect(psi: FormField, s: int, reference: FormField | None = None) -> FormField:
    """K psi = dbar* psi - vartheta psi on L_{q-1}.

    By default vartheta is the discrete formal adjoint (forms.vartheta);
    ``reference`` replaces it with a supplied field, e.g. the analytic
    vartheta psi, so that the defect also carries the truncation error.
    """
    q = psi.q
    if q < 1:
        raise ValueError("kappa_defect needs a form of degree >= 1")
    grid = psi.grid
    cx = get_complex(grid, s)
    adj = vector_to_form(cx.adjoint(q - 1) @ form_to_vector(psi), grid, q - 1)
    th = vartheta(psi) if reference is None else reference
    out = adj - th
    return out.with_mask(out.mask & grid.level_mask(q - 1))


def interior_sup(f: FormField, depth: float) -> float:
    """Sup-norm over valid nodes with rho < -depth."""
    return f.sup(f.grid.rho < -depth)


def _derivative(arr, alpha, grid):
    for a in range(grid.dim):
        for _ in range(alpha[a]):
            arr = grid.diff(arr, a)
    return arr


def boundary_identity_check(phi: FormField, psi: FormField, s: int) -> tuple[complex, complex]:
    """(gap, surface_sum) for <dbar phi, psi>_s - <phi, vartheta psi>_s.

    Both fields must be sampled on a neighbourhood of the closed domain; the
    volume sums use the cut-cell weights on L_0 and the surface sum uses the
    boundary samples with multilinear interpolation of D^alpha.
    """
    grid = phi.grid
    if psi.q != phi.q + 1:
        raise ValueError("psi must have degree q + 1")
    need = grid.level_mask(-(s + 2))
    if not ((phi.mask | ~need).all() and (psi.mask | ~need).all()):
        raise ValueError("stencil depth insufficient: fields must cover a neighbourhood of the domain")
    dphi, tpsi = dbar(phi), vartheta(psi)
    nodes = set_nodes(grid, 0)
    w = grid.weights.ravel()[nodes]
    pts, _, sw = grid.boundary_samples
    om = dbar_rho_form(grid)
    zbar = {k: 0.5 * (grid.normal_fn(pts)[k - 1] + 1j * grid.normal_fn(pts)[k - 1 + grid.n])
            for k in range(1, grid.n + 1)}
    full = np.ones(grid.shape, bool)
    gap = 0j
    surf = 0j
    for alpha in graded_indices(grid.dim, s):
        g = gamma(alpha)
        for K in psi.indices:
            a = _derivative(dphi.components[K], alpha, grid).ravel()[nodes]
            b = _derivative(psi.components[K], alpha, grid)
            gap += g * np.sum(w * a * np.conj(b.ravel()[nodes]))
        for I in phi.indices:
            a = _derivative(phi.components[I], alpha, grid).ravel()[nodes]
            b = _derivative(tpsi.components[I], alpha, grid).ravel()[nodes]
            gap -= g * np.sum(w * a * np.conj(b))
        for I in phi.indices:
            pv, _ = grid.interpolate(_derivative(phi.components[I], alpha, grid), full, pts)
            for k in range(1, grid.n + 1):
                if k in I:
                    continue
                K = tuple(sorted((k,) + I))
                sv, _ = grid.interpolate(_derivative(psi.components[K], alpha, grid), full, pts)
                surf += g * epsilon(K, k, I) * np.sum(sw * pv * np.conj(sv) * zbar[k])
    return complex(gap), complex(surf)


def solve_report(grid, q: int, s: int, info: dict) -> dict:
    return {"grid": grid.to_config(), "n": grid.n, "q": q, "s": s,
            "residual": float(info["residual"]), "norm_ratio": float(info["norm_ratio"]),
            "harmonic_dim": int(info["harmonic_dim"]),
            "eigen_min": None if info.get("eigen_min") is None else float(info["eigen_min"]),
            "iterations": int(info.get("iterations", 0))}
