"""Exact arithmetic for rational rotation orbits.

A rational rotation by p/q visits the grid {theta0 + j/q} exactly once per
period, so interval hit counts and first-hit times reduce to integer
problems.  These run in O(log q), which keeps astronomically large
denominators (produced by the convergence scheduler) fully tractable.
"""
from __future__ import annotations

from fractions import Fraction
from math import gcd


def _floor_div(a: int, b: int) -> int:
    return a // b


def count_grid_in_interval(q: int, t0: Fraction, lo: Fraction, hi: Fraction) -> int:
    """#{ j in [0,q) : frac(t0 + j/q) in [lo, hi] } for 0 <= lo <= hi < lo + 1.

    Exact.  The interval may wrap (hi may exceed 1, meaning [lo,1) U [0,hi-1]).
    """
    if hi < lo:
        raise ValueError("need lo <= hi")
    if hi - lo >= 1:
        return q
    t0 = t0 - (t0.numerator // t0.denominator)  # frac
    # positions are ((m + j) mod q + f)/q with t0*q = m + f
    mq = t0 * q
    m = mq.numerator // mq.denominator
    f = mq - m
    # count integers k in [0,q) with (k + f)/q in [lo, hi] (mod 1)
    # i.e. k in [lo*q - f, hi*q - f] (mod q)
    a = lo * q - f
    b = hi * q - f
    ka = -((-a.numerator) // a.denominator)  # ceil(a)
    kb = b.numerator // b.denominator        # floor(b)
    if ka > kb:
        return 0
    # the k's form one integer run; reduce both endpoints mod q and count
    total = kb - ka + 1
    return min(total, q)


def orbit_interval_count(p: int, q: int, theta0: Fraction,
                         lo: Fraction, hi: Fraction) -> int:
    """#{ 0 <= m < q : frac(theta0 + m * p/q) in [lo, hi] }, exact.

    Requires gcd(p, q) == 1 so the orbit is the full grid.
    """
    if gcd(p % q, q) != 1:
        raise ValueError("rotation numerator and denominator must be coprime")
    return count_grid_in_interval(q, theta0, lo, hi)


def first_below(a: int, b: int, mod: int, k: int):
    """Minimal j >= 0 with (a*j + b) % mod < k, or None.  O(log mod).

    Walks the orbit wrap by wrap: between wraps values only grow, and the
    value just after each wrap follows an affine orbit modulo a, giving the
    Euclidean recursion.
    """
    if k <= 0:
        return None
    if k >= mod:
        return 0
    a %= mod
    b %= mod
    if b < k:
        return 0
    if a == 0:
        return None
    need = min(k, a)
    a2 = (-mod) % a
    r0 = (b - mod) % a
    if r0 < need:
        i = 0
    else:
        if a2 == 0:
            return None
        i = first_below(a2, r0, a, need)
        if i is None:
            return None
    r_i = (r0 + i * a2) % a
    return ((i + 1) * mod + r_i - b) // a


def first_hit_residue(c: int, q: int, lo: int, hi: int):
    """Minimal m >= 0 with (m*c) % q in [lo, hi], or None."""
    if lo < 0 or hi >= q or lo > hi:
        raise ValueError("need 0 <= lo <= hi < q")
    return first_below(c % q, (-lo) % q, q, hi - lo + 1)


def first_hit_time(alpha: Fraction, lo: Fraction, hi: Fraction):
    """Minimal m >= 0 with frac(m * alpha) in [lo, hi] subset [0, 1), or None.

    Exact: converts to a residue range and runs the Euclidean search.
    """
    p, q = alpha.numerator, alpha.denominator
    r_lo = -((-(lo * q)).numerator // (lo * q).denominator) if lo > 0 else 0
    hi_q = hi * q
    r_hi = hi_q.numerator // hi_q.denominator
    if r_hi >= q:
        r_hi = q - 1
    if r_lo > r_hi:
        return None
    return first_hit_residue(p % q, q, r_lo, r_hi)


def grid_point_in_interval(q: int, lo: Fraction, hi: Fraction) -> bool:
    """True iff some j/q with j integer lies in [lo, hi]."""
    ka = -((-(lo * q)).numerator // (lo * q).denominator)
    hq = hi * q
    kb = hq.numerator // hq.denominator
    return ka <= kb
