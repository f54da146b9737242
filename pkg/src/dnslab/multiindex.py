"""Exact multi-index arithmetic and the binomial identities used by the boundary analysis.

Everything here works in Python integers (arbitrary precision); the only
floating-point routine is :func:`multinomial_unit_check`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb, factorial, prod
from typing import Iterator, Sequence


@dataclass(frozen=True, order=True)
class MultiIndex:
    exponents: tuple[int, ...]

    def __post_init__(self):
        exps = tuple(int(a) for a in self.exponents)
        if any(a < 0 for a in exps):
            raise ValueError(f"negative exponent in multi-index {exps}")
        object.__setattr__(self, "exponents", exps)

    def __len__(self) -> int:
        return len(self.exponents)

    def __iter__(self):
        return iter(self.exponents)

    def __getitem__(self, j: int) -> int:
        return self.exponents[j]

    @property
    def order(self) -> int:
        return sum(self.exponents)

    def minus(self, j: int) -> "MultiIndex":
        e = list(self.exponents)
        e[j] -= 1
        return MultiIndex(tuple(e))

    def plus(self, j: int) -> "MultiIndex":
        e = list(self.exponents)
        e[j] += 1
        return MultiIndex(tuple(e))


def as_multiindex(alpha) -> MultiIndex:
    return alpha if isinstance(alpha, MultiIndex) else MultiIndex(tuple(alpha))


def gamma(alpha) -> int:
    """Polynomial coefficient |alpha|! / alpha!."""
    alpha = as_multiindex(alpha)
    return factorial(alpha.order) // prod(factorial(a) for a in alpha)


def multi_indices(dim: int, order: int) -> Iterator[MultiIndex]:
    """All alpha in N^dim with |alpha| == order, lexicographically descending.

    Descending lex puts (order, 0, ..., 0) first, i.e. derivatives along the
    first axis are taken before the later ones.
    """
    if order == 0:
        yield MultiIndex((0,) * dim)
        return
    if dim == 1:
        yield MultiIndex((order,))
        return
    for first in range(order, -1, -1):
        for rest in multi_indices(dim - 1, order - first):
            yield MultiIndex((first,) + rest.exponents)


def graded_indices(dim: int, max_order: int) -> list[MultiIndex]:
    """Graded lexicographic enumeration of {alpha : |alpha| <= max_order}."""
    out: list[MultiIndex] = []
    for k in range(max_order + 1):
        out.extend(multi_indices(dim, k))
    return out


def count_graded(dim: int, max_order: int) -> int:
    return comb(dim + max_order, max_order)


def gamma_pascal_check(alpha) -> bool:
    """gamma_alpha == sum over j with alpha_j > 0 of gamma_{alpha - e_j}."""
    alpha = as_multiindex(alpha)
    if alpha.order == 0:
        raise ValueError("Pascal recursion needs |alpha| >= 1")
    rhs = sum(gamma(alpha.minus(j)) for j in range(len(alpha)) if alpha[j] > 0)
    return gamma(alpha) == rhs


def multinomial_sum(s: int, nu: Sequence[float]) -> float:
    """sum_{|alpha| = s} gamma_alpha nu^{2 alpha}."""
    nu2 = [float(v) ** 2 for v in nu]
    total = 0.0
    for alpha in multi_indices(len(nu2), s):
        total += gamma(alpha) * prod(v**a for v, a in zip(nu2, alpha))
    return total


def multinomial_unit_check(s: int, nu: Sequence[float], tol: float) -> bool:
    if s < 0:
        raise ValueError("s must be non-negative")
    target = sum(float(v) ** 2 for v in nu) ** s
    return abs(multinomial_sum(s, nu) - target) <= tol


def f_identity(k: int, p: int, m: int) -> tuple[int, int]:
    """(sum_{j<=m} C(k+j, j) C(p-j, m-j), C(p+k+1, m)); equal for 0 <= m <= p."""
    if m > p:
        raise ValueError(f"need m <= p, got m={m}, p={p}")
    if m < 0 or k < 0:
        raise ValueError("k and m must be non-negative")
    lhs = sum(comb(k + j, j) * comb(p - j, m - j) for j in range(m + 1))
    return lhs, comb(p + k + 1, m)


def verify_f_identity(max_k: int = 30, max_p: int = 30) -> list[tuple[int, int, int]]:
    """Return every (k, p, m) in range where the identity fails (empty list = pass)."""
    failures = []
    for k, p in itertools.product(range(max_k + 1), range(max_p + 1)):
        for m in range(p + 1):
            lhs, rhs = f_identity(k, p, m)
            if lhs != rhs:
                failures.append((k, p, m))
    return failures
