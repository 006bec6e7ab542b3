"""Shifted Legendre polynomials on [0,1] and quadrature rule generation.

The abscissae of an s-stage rule are the zeros of P_s - zeta*P_{s-1}:
zeta = 0 gives Gauss (order 2s), zeta = -1 and 1 give the two Radau
families (order 2s-1), any other real zeta still gives order 2s-1.
Weights come from the Vandermonde system sum_i b_i c_i^(k-1) = 1/k.

All polynomial families (P_q, G_q, R_l, F_q) carry exact rational
coefficients; only node finding and inner products at the nodes use
high-precision floats.
"""

from __future__ import annotations

import json
from fractions import Fraction
from functools import lru_cache
from math import comb
from typing import Sequence

import mpmath as mp

__all__ = [
    "UniPoly",
    "QuadRule",
    "QuadratureError",
    "legendre",
    "gamma_lead",
    "g_poly",
    "r_poly",
    "f_poly",
    "quad_rule",
    "discrete_ip",
    "continuous_ip",
    "check_discip_lemma",
]

# Root isolation window.  Wide enough for every zeta the analysis uses
# (zeta = 2 puts one node near 1.3); a root escaping the window means the
# rule is rejected rather than silently truncated.
_WINDOW = (Fraction(-4), Fraction(5))


class QuadratureError(ValueError):
    """Rule construction failed: complex, repeated, or out-of-window roots."""


def _rat(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, str)):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(x)  # exact binary expansion
    raise TypeError(f"cannot convert {x!r} to an exact rational; pass str or Fraction")


class UniPoly:
    """Univariate polynomial, ascending exact rational coefficients."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Sequence):
        cs = [_rat(c) for c in coeffs]
        while cs and cs[-1] == 0:
            cs.pop()
        object.__setattr__(self, "coeffs", tuple(cs))

    def __setattr__(self, *a):
        raise AttributeError("UniPoly is immutable")

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1  # -1 for the zero polynomial

    def is_zero(self) -> bool:
        return not self.coeffs

    def is_monic(self) -> bool:
        return bool(self.coeffs) and self.coeffs[-1] == 1

    def __eq__(self, other):
        return isinstance(other, UniPoly) and self.coeffs == other.coeffs

    def __hash__(self):
        return hash(self.coeffs)

    def __repr__(self):
        return f"UniPoly({list(self.coeffs)})"

    def __add__(self, other: "UniPoly") -> "UniPoly":
        n = max(len(self.coeffs), len(other.coeffs))
        a = list(self.coeffs) + [Fraction(0)] * (n - len(self.coeffs))
        for k, c in enumerate(other.coeffs):
            a[k] += c
        return UniPoly(a)

    def __neg__(self) -> "UniPoly":
        return UniPoly([-c for c in self.coeffs])

    def __sub__(self, other: "UniPoly") -> "UniPoly":
        return self + (-other)

    def __mul__(self, other) -> "UniPoly":
        if not isinstance(other, UniPoly):
            c = _rat(other)
            return UniPoly([c * v for v in self.coeffs])
        out = [Fraction(0)] * (len(self.coeffs) + len(other.coeffs) - 1 or 1)
        for i, ci in enumerate(self.coeffs):
            if ci == 0:
                continue
            for j, cj in enumerate(other.coeffs):
                out[i + j] += ci * cj
        return UniPoly(out)

    __rmul__ = __mul__

    def derivative(self) -> "UniPoly":
        return UniPoly([k * c for k, c in enumerate(self.coeffs)][1:])

    def integral(self) -> "UniPoly":
        """Antiderivative with zero constant term."""
        return UniPoly([Fraction(0)] + [c / (k + 1) for k, c in enumerate(self.coeffs)])

    def __call__(self, x):
        """Horner evaluation; exact on Fraction input, mpf on mpf input."""
        if isinstance(x, Fraction) or isinstance(x, int):
            acc = Fraction(0)
            for c in reversed(self.coeffs):
                acc = acc * x + c
            return acc
        acc = mp.mpf(0)
        for c in reversed(self.coeffs):
            acc = acc * x + mp.mpf(c.numerator) / c.denominator
        return acc


@lru_cache(maxsize=None)
def legendre(q: int) -> UniPoly:
    """Shifted Legendre P_q on [0,1] by the Rodrigues formula.

    P_q(x) = (1/q!) d^q/dx^q [x^q (x-1)^q], so P_q(1) = 1 and the leading
    coefficient is gamma_q = (2q)!/(q!)^2.
    """
    if q < 0:
        raise ValueError("q must be non-negative")
    # x^q (x-1)^q expanded by the binomial theorem
    base = [Fraction(0)] * (2 * q + 1)
    for k in range(q + 1):
        base[q + k] = Fraction(comb(q, k) * (-1) ** (q - k))
    p = UniPoly(base)
    for _ in range(q):
        p = p.derivative()
    fact = 1
    for i in range(2, q + 1):
        fact *= i
    return p * Fraction(1, fact)


def gamma_lead(q: int) -> int:
    """Leading coefficient gamma_q = (2q)!/(q!)^2 of P_q."""
    return comb(2 * q, q)


@lru_cache(maxsize=None)
def g_poly(q: int) -> UniPoly:
    """G_q(x) = integral_0^x P_{q-1}."""
    if q < 1:
        raise ValueError("q must be positive")
    return legendre(q - 1).integral()


def r_poly(l: int, s: int, zeta) -> UniPoly:
    """R_l family: P_l below s, P_s - zeta*P_{s-1} at s, products above."""
    if s < 1:
        raise ValueError("s must be positive")
    if l < 0:
        raise ValueError("l must be non-negative")
    z = _rat(zeta)
    if l <= s - 1:
        return legendre(l)
    rs = legendre(s) - z * legendre(s - 1)
    if l == s:
        return rs
    return rs * legendre(l - s)


def f_poly(q: int, s: int, zeta) -> UniPoly:
    """F_q(x) = integral_0^x R_{q-1}; equals G_q for q <= s."""
    if q < 1:
        raise ValueError("q must be positive")
    return r_poly(q - 1, s, zeta).integral()


# ---------------------------------------------------------------------------
# root isolation on the exact polynomial


def _sturm_chain(p: UniPoly) -> list:
    chain = [p, p.derivative()]
    while chain[-1].degree > 0:
        a, b = chain[-2], chain[-1]
        # polynomial remainder a mod b, negated
        ra = list(a.coeffs)
        bc = b.coeffs
        while len(ra) >= len(bc) and any(c != 0 for c in ra):
            if ra[-1] == 0:
                ra.pop()
                continue
            f = ra[-1] / bc[-1]
            shift = len(ra) - len(bc)
            for i, c in enumerate(bc):
                ra[shift + i] -= f * c
            ra.pop()
        rem = UniPoly(ra)
        if rem.is_zero():
            break
        chain.append(-rem)
    return chain


def _sign_changes(chain, x: Fraction) -> int:
    signs = []
    for p in chain:
        v = p(x)
        if v != 0:
            signs.append(1 if v > 0 else -1)
    return sum(1 for a, b in zip(signs, signs[1:]) if a != b)


def _isolate_roots(p: UniPoly, lo: Fraction, hi: Fraction) -> list:
    """Disjoint rational brackets each containing exactly one real root."""
    chain = _sturm_chain(p)

    def count(a, b):
        return _sign_changes(chain, a) - _sign_changes(chain, b)

    total = count(lo, hi)
    brackets = []
    stack = [(lo, hi, total)]
    while stack:
        a, b, n = stack.pop()
        if n == 0:
            continue
        if n == 1:
            brackets.append((a, b))
            continue
        mid = (a + b) / 2
        while p(mid) == 0:  # nudge off an exact rational root
            mid = (a + 2 * mid) / 3
        nl = count(a, mid)
        stack.append((a, mid, nl))
        stack.append((mid, b, n - nl))
    brackets.sort()
    return brackets


def _polish_root(p: UniPoly, lo: Fraction, hi: Fraction, dps: int):
    """Bisect to a narrow bracket, then Newton to 10^(-dps+2)."""
    dp = p.derivative()
    flo = p(lo)
    for _ in range(80):  # exact bisection until the bracket is tiny
        mid = (lo + hi) / 2
        fm = p(mid)
        if fm == 0:
            lo = hi = mid
            break
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < Fraction(1, 10**20):
            break
    with mp.workdps(dps + 15):
        x = (mp.mpf(lo.numerator) / lo.denominator + mp.mpf(hi.numerator) / hi.denominator) / 2
        tol = mp.mpf(10) ** (-dps + 2)
        for _ in range(200):
            fx = p(x)
            if abs(fx) == 0:
                break
            step = fx / dp(x)
            x = x - step
            if abs(step) < tol * max(1, abs(x)):
                break
        return +x


class QuadRule:
    """Quadrature rule: abscissae c, weights b, stages s, parameter zeta."""

    __slots__ = ("s", "zeta", "zeta_exact", "c", "b", "order", "precision_digits", "in_unit_interval")

    def __init__(self, s, zeta, zeta_exact, c, b, order, precision_digits, in_unit_interval):
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "zeta_exact", zeta_exact)
        object.__setattr__(self, "c", tuple(c))
        object.__setattr__(self, "b", tuple(b))
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "precision_digits", precision_digits)
        object.__setattr__(self, "in_unit_interval", in_unit_interval)

    def __setattr__(self, *a):
        raise AttributeError("QuadRule is immutable")

    def __repr__(self):
        return f"QuadRule(s={self.s}, zeta={mp.nstr(self.zeta, 8)}, order={self.order})"

    def node_poly(self) -> UniPoly:
        """Monic node polynomial rho_s = prod (x - c_i), exact coefficients."""
        rho = legendre(self.s) - self.zeta_exact * legendre(self.s - 1)
        return rho * Fraction(1, gamma_lead(self.s))

    def to_json(self) -> str:
        d = self.precision_digits
        return json.dumps(
            {
                "s": self.s,
                "zeta": mp.nstr(self.zeta, d),
                "c": [mp.nstr(ci, d) for ci in self.c],
                "b": [mp.nstr(bi, d) for bi in self.b],
                "order": self.order,
            }
        )


def quad_rule(s: int, zeta, precision_digits: int = 50) -> QuadRule:
    """Construct the s-stage rule with abscissae at the zeros of P_s - zeta*P_{s-1}.

    Roots are isolated by Sturm bracketing on the exact polynomial and
    polished by Newton at working precision; weights solve the Vandermonde
    system.  Raises QuadratureError when s distinct real roots cannot be
    found inside the admissible window (complex or runaway roots), and
    flags rules whose nodes leave [0,1] via in_unit_interval.
    """
    if s < 1:
        raise ValueError("s must be positive")
    if precision_digits < 15:
        raise ValueError("precision_digits too small")
    z = _rat(zeta)
    rho = legendre(s) - z * legendre(s - 1)
    lo, hi = _WINDOW
    brackets = _isolate_roots(rho, lo, hi)
    if len(brackets) != s:
        raise QuadratureError(
            f"P_{s} - zeta*P_{s-1} with zeta={z} has {len(brackets)} real roots "
            f"in {float(lo), float(hi)}; need {s} distinct real roots"
        )
    with mp.workdps(precision_digits + 15):
        c = [_polish_root(rho, a, b, precision_digits) for a, b in brackets]
        c.sort()
        # distinctness at working precision
        for x, y in zip(c, c[1:]):
            if abs(y - x) < mp.mpf(10) ** (-precision_digits + 5):
                raise QuadratureError("repeated abscissae at working precision")
        V = mp.matrix(s, s)
        rhs = mp.matrix(s, 1)
        for k in range(1, s + 1):
            for i in range(s):
                V[k - 1, i] = c[i] ** (k - 1)
            rhs[k - 1] = mp.mpf(1) / k
        try:
            b = mp.lu_solve(V, rhs)
        except ZeroDivisionError as e:
            raise QuadratureError(f"singular Vandermonde system: {e}") from e
        order = 2 * s if z == 0 else 2 * s - 1
        rule = QuadRule(
            s=s,
            zeta=mp.mpf(z.numerator) / z.denominator,
            zeta_exact=z,
            c=c,
            b=[b[i] for i in range(s)],
            order=order,
            precision_digits=precision_digits,
            in_unit_interval=all(0 <= x <= 1 for x in c),
        )
        _validate_rule(rule)
    return rule


def _validate_rule(rule: QuadRule) -> None:
    tol = mp.mpf(10) ** (-rule.precision_digits + 5)
    for k in range(1, rule.order + 1):
        r = mp.fsum(bi * ci ** (k - 1) for bi, ci in zip(rule.b, rule.c)) - mp.mpf(1) / k
        if abs(r) > tol:
            raise QuadratureError(
                f"quadrature condition k={k} violated: residual {mp.nstr(r, 5)}; "
                "raise precision_digits"
            )
    if rule.zeta_exact == -1 and abs(rule.c[0]) > tol:
        raise QuadratureError("zeta=-1 must place c_1 = 0")
    if rule.zeta_exact == 1 and abs(rule.c[-1] - 1) > tol:
        raise QuadratureError("zeta=1 must place c_s = 1")


def discrete_ip(u: UniPoly, v: UniPoly, rule: QuadRule):
    """<u, v>_D = sum_i b_i u(c_i) v(c_i) at the rule's working precision."""
    with mp.workdps(rule.precision_digits + 15):
        return mp.fsum(bi * u(ci) * v(ci) for bi, ci in zip(rule.b, rule.c))


def continuous_ip(u: UniPoly, v: UniPoly) -> Fraction:
    """Exact integral_0^1 u*v."""
    prod = u * v
    return sum((c / (k + 1) for k, c in enumerate(prod.coeffs)), Fraction(0))


def _poly_mod(p: UniPoly, d: UniPoly) -> UniPoly:
    """Exact remainder of p modulo the monic divisor d."""
    n = d.degree
    dc = d.coeffs
    rem = list(p.coeffs)
    for k in range(len(rem) - 1, n - 1, -1):
        f = rem[k]
        if f == 0:
            continue
        rem[k] = Fraction(0)
        for i in range(n):
            rem[k - n + i] -= f * dc[i]
    return UniPoly(rem[:n] or [Fraction(0)])


def discrete_ip_exact(u: UniPoly, v: UniPoly, rule: QuadRule) -> Fraction:
    """<u, v>_D as an exact rational number.

    sum_i b_i g(c_i) is unchanged by subtracting any multiple of the node
    polynomial from g, and the remainder has degree < s, where the rule is
    exact.  The discrete product of rational-coefficient polynomials is
    therefore rational even when it differs from the continuous integral.
    """
    rem = _poly_mod(u * v, rule.node_poly())
    return continuous_ip(rem, UniPoly([1]))


def check_discip_lemma(rule: QuadRule, pi_m: UniPoly, theta: UniPoly):
    """Residual of the exactness decomposition for a monic pi_m of degree = order.

    With rho_s the monic node polynomial and theta any monic polynomial of
    degree order - s, the discrete integral of pi_m must equal the exact
    integral minus <rho_s, theta>.  Returns the absolute defect.
    """
    if not pi_m.is_monic() or pi_m.degree != rule.order:
        raise ValueError("pi_m must be monic of degree equal to the rule order")
    if not theta.is_monic() or theta.degree != rule.order - rule.s:
        raise ValueError("theta must be monic of degree order - s")
    rho = rule.node_poly()
    exact_side = continuous_ip(pi_m, UniPoly([1])) - continuous_ip(rho, theta)
    with mp.workdps(rule.precision_digits + 15):
        disc = discrete_ip(pi_m, UniPoly([1]), rule)
        return abs(disc - (mp.mpf(exact_side.numerator) / exact_side.denominator))
