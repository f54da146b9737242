"""Exact boundary-symbol calculus for the half-line model of the K boundary problem.

After flattening the boundary and Fourier transforming tangentially, the
boundary operators become polynomials in ``t`` (standing for d/dx0) with
coefficients polynomial in ``xi2`` (|xi|^2). All arithmetic is exact:
integers for the polynomials, :class:`fractions.Fraction` for evaluation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, factorial
from typing import Iterable, Mapping, Sequence


@dataclass(frozen=True)
class SymbolPoly:
    """Polynomial sum c[a, b] t^a (xi^2)^b with integer coefficients."""

    coeffs: Mapping[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        clean = {(int(a), int(b)): int(c) for (a, b), c in dict(self.coeffs).items() if c != 0}
        object.__setattr__(self, "coeffs", dict(sorted(clean.items())))

    @classmethod
    def t(cls, power: int = 1) -> "SymbolPoly":
        return cls({(power, 0): 1})

    @classmethod
    def xi2(cls, power: int = 1) -> "SymbolPoly":
        return cls({(0, power): 1})

    @classmethod
    def const(cls, c: int) -> "SymbolPoly":
        return cls({(0, 0): c})

    def __add__(self, other: "SymbolPoly") -> "SymbolPoly":
        out = dict(self.coeffs)
        for key, c in other.coeffs.items():
            out[key] = out.get(key, 0) + c
        return SymbolPoly(out)

    def __neg__(self) -> "SymbolPoly":
        return SymbolPoly({k: -c for k, c in self.coeffs.items()})

    def __sub__(self, other: "SymbolPoly") -> "SymbolPoly":
        return self + (-other)

    def __mul__(self, other) -> "SymbolPoly":
        if isinstance(other, int):
            return SymbolPoly({k: c * other for k, c in self.coeffs.items()})
        out: dict[tuple[int, int], int] = {}
        for (a1, b1), c1 in self.coeffs.items():
            for (a2, b2), c2 in other.coeffs.items():
                key = (a1 + a2, b1 + b2)
                out[key] = out.get(key, 0) + c1 * c2
        return SymbolPoly(out)

    __rmul__ = __mul__

    def __pow__(self, k: int) -> "SymbolPoly":
        result = SymbolPoly.const(1)
        for _ in range(k):
            result = result * self
        return result

    def __eq__(self, other) -> bool:
        return isinstance(other, SymbolPoly) and self.coeffs == other.coeffs

    def __hash__(self):
        return hash(tuple(self.coeffs.items()))

    def is_zero(self) -> bool:
        return not self.coeffs

    @property
    def t_degree(self) -> int:
        return max((a for a, _ in self.coeffs), default=-1)

    def leading_t_coeff(self) -> SymbolPoly:
        d = self.t_degree
        return SymbolPoly({(0, b): c for (a, b), c in self.coeffs.items() if a == d})

    def terms(self) -> list[list[int]]:
        """[t power, xi^2 power, coefficient] triples, sorted."""
        return [[a, b, c] for (a, b), c in self.coeffs.items()]

    def __repr__(self) -> str:
        if not self.coeffs:
            return "0"
        parts = [f"{c}*t^{a}*xi2^{b}" for (a, b), c in sorted(self.coeffs.items(), reverse=True)]
        return " + ".join(parts)


def _check_range(s: int, ell: int):
    if s < 1 or not 0 <= ell <= s - 1:
        raise ValueError(f"need s >= 1 and 0 <= ell <= s-1, got s={s}, ell={ell}")


def b_direct(s: int, ell: int) -> SymbolPoly:
    """B_{s,l} expanded from sum_j C(j+l, l) (-Delta')^j (-Delta)^{s-1-l-j} d^{l+1}.

    Uses -Delta' -> xi^2 and -Delta -> -t^2 + xi^2.
    """
    _check_range(s, ell)
    minus_lap = SymbolPoly({(2, 0): -1, (0, 1): 1})
    total = SymbolPoly()
    for j in range(s - ell):
        total = total + comb(j + ell, ell) * SymbolPoly.xi2(j) * minus_lap ** (s - 1 - ell - j)
    return total * SymbolPoly.t(ell + 1)


def b_closed(s: int, ell: int) -> SymbolPoly:
    """B_{s,l} = sum_k (-1)^k C(s, l+k+1) xi^{2(s-1-l-k)} t^{l+2k+1}."""
    _check_range(s, ell)
    out = {}
    for k in range(s - ell):
        out[(ell + 2 * k + 1, s - 1 - ell - k)] = (-1) ** k * comb(s, ell + k + 1)
    return SymbolPoly(out)


def exp_basis_derivative(p: int, m: int, xi: Fraction) -> Fraction:
    """d^p/dx^p of x^m e^{-xi x} at x = 0."""
    if p < m:
        return Fraction(0)
    return Fraction(comb(p, m) * factorial(m)) * (-xi) ** (p - m)


def apply_to_exp_basis(P: SymbolPoly, m: int, xi) -> Fraction:
    """Exact (P v_m)(0) for v_m = x^m e^{-xi x}."""
    xi = Fraction(xi)
    if m < 0:
        raise ValueError("m must be non-negative")
    if xi <= 0:
        raise ValueError("xi must be positive")
    total = Fraction(0)
    for (a, b), c in P.coeffs.items():
        total += c * xi ** (2 * b) * exp_basis_derivative(a, m, xi)
    return total


def boundary_matrix(s: int, xi) -> list[list[Fraction]]:
    return [[apply_to_exp_basis(b_closed(s, ell), m, xi) for m in range(s)] for ell in range(s)]


def ellipticity_determinant(s: int, xi) -> Fraction:
    """det[(B_{s,l} v_m)(0)]_{l,m}; nonzero means only the trivial bounded solution."""
    if s < 1:
        raise ValueError("s must be >= 1")
    return fraction_det(boundary_matrix(s, Fraction(xi)))


def fraction_det(rows: list[list[Fraction]]) -> Fraction:
    a = [list(r) for r in rows]
    n = len(a)
    det = Fraction(1)
    for col in range(n):
        pivot = next((r for r in range(col, n) if a[r][col] != 0), None)
        if pivot is None:
            return Fraction(0)
        if pivot != col:
            a[col], a[pivot] = a[pivot], a[col]
            det = -det
        det *= a[col][col]
        for r in range(col + 1, n):
            f = a[r][col] / a[col][col]
            if f:
                for c in range(col, n):
                    a[r][c] -= f * a[col][c]
    return det


def determinant_degree(s: int) -> int:
    """Homogeneity degree of the determinant in xi (row degrees 2s-1-l minus basis degrees m)."""
    return sum(2 * s - 1 - ell for ell in range(s)) - sum(range(s))


def _poly_derivative_exp(c: list[Fraction], xi: Fraction) -> list[Fraction]:
    # d/dx [p(x) e^{-xi x}] = (p' - xi p) e^{-xi x}
    out = [-xi * ck for ck in c]
    for k in range(1, len(c)):
        out[k - 1] += k * c[k]
    return out


def _integral_sq(c: list[Fraction], xi: Fraction) -> Fraction:
    # int_0^inf p(x)^2 e^{-2 xi x} dx with int x^k e^{-a x} = k!/a^{k+1}
    a = 2 * xi
    total = Fraction(0)
    for i, ci in enumerate(c):
        if ci == 0:
            continue
        for j, cj in enumerate(c):
            if cj:
                k = i + j
                total += ci * cj * Fraction(factorial(k)) / a ** (k + 1)
    return total


def quadratic_form_check(s: int, xi, coeffs: Sequence) -> Fraction:
    """sum_j C(s,j) xi^{2(s-j)} int_0^inf |d^j v|^2 for v = sum_m c_m x^m e^{-xi x}."""
    xi = Fraction(xi)
    if xi <= 0:
        raise ValueError("xi must be positive")
    c = [Fraction(v) for v in coeffs]
    total = Fraction(0)
    for j in range(s + 1):
        total += comb(s, j) * xi ** (2 * (s - j)) * _integral_sq(c, xi)
        c = _poly_derivative_exp(c, xi)
    return total


def leading_sign_table(max_s: int) -> list[dict]:
    rows = []
    for s in range(1, max_s + 1):
        for ell in range(s):
            lead = b_closed(s, ell).leading_t_coeff()
            expected = SymbolPoly.const((-1) ** (s - 1 - ell))
            rows.append({"s": s, "ell": ell, "k": s - ell,
                         "t_degree": b_closed(s, ell).t_degree,
                         "leading": lead.terms(), "ok": lead == expected})
    return rows


def symbol_report(max_s: int = 8, xis: Iterable = (Fraction(1, 2), Fraction(1), Fraction(2))) -> dict:
    """Polynomial term lists, determinants and pass flags for every (s, l) up to max_s."""
    xis = [Fraction(x) for x in xis]
    entries = []
    determinants = []
    for s in range(1, max_s + 1):
        for ell in range(s):
            bd, bc = b_direct(s, ell), b_closed(s, ell)
            entries.append({
                "s": s, "ell": ell,
                "terms": bc.terms(),
                "direct_equals_closed": bd == bc,
                "t_degree": bc.t_degree,
                "t_degree_ok": bc.t_degree == 2 * s - 1 - ell,
                "leading_sign_ok": bc.leading_t_coeff() == SymbolPoly.const((-1) ** (s - 1 - ell)),
            })
        for xi in xis:
            det = ellipticity_determinant(s, xi)
            determinants.append({"s": s, "xi": str(xi), "det": str(det), "nonzero": det != 0})
    passed = all(e["direct_equals_closed"] and e["t_degree_ok"] and e["leading_sign_ok"] for e in entries)
    passed = passed and all(d["nonzero"] for d in determinants)
    return {"polynomials": entries, "determinants": determinants, "passed": passed}
