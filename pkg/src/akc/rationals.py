"""Exact rational arithmetic: continued fractions, rotation-number schedulers,
and interleaved Liouville-type denominator ladders.

All scheduling decisions are made with ``fractions.Fraction`` comparisons;
no floating point enters any accept/reject test.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

Rational = Fraction  # arbitrary-precision p/q, always in lowest terms


class CoefficientShortfall(ValueError):
    """Raised when more convergents are requested than coefficients allow."""


class DenominatorOverflow(ValueError):
    """Raised when a denominator ladder exceeds practical sampling size."""


@dataclass
class ConvergentSequence:
    """Convergents p_k/q_k of a continued fraction, with their coefficients."""

    entries: list[Rational]
    source: list[int]

    def denominators(self) -> list[int]:
        return [f.denominator for f in self.entries]

    def numerators(self) -> list[int]:
        return [f.numerator for f in self.entries]

    def check_determinants(self) -> bool:
        """q_k p_{k-1} - p_k q_{k-1} = +/-1 for consecutive convergents."""
        e = self.entries
        return all(
            abs(e[k].denominator * e[k - 1].numerator - e[k].numerator * e[k - 1].denominator) == 1
            for k in range(1, len(e))
        )

    def value(self) -> Rational:
        """Exact value of the finite continued fraction (last convergent)."""
        if not self.entries:
            raise ValueError("empty convergent sequence has no value")
        return self.entries[-1]


def convergents(cf_coeffs: Sequence[int], count: int | None = None) -> ConvergentSequence:
    """First ``count`` convergents of [a0; a1, a2, ...] via the standard recurrence.

    a0 may be 0; all later coefficients must be >= 1.
    """
    coeffs = list(cf_coeffs)
    if not coeffs:
        raise ValueError("continued fraction needs at least one coefficient")
    if coeffs[0] < 0 or any(a < 1 for a in coeffs[1:]):
        raise ValueError(f"invalid continued fraction coefficients {coeffs}")
    if count is None:
        count = len(coeffs)
    if count > len(coeffs):
        raise CoefficientShortfall(
            f"requested {count} convergents but only {len(coeffs)} coefficients "
            f"given (short by {count - len(coeffs)})"
        )
    p_prev, q_prev = 1, 0
    p, q = coeffs[0], 1
    entries = [Fraction(p, q)]
    for a in coeffs[1:count]:
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
        entries.append(Fraction(p, q))
    return ConvergentSequence(entries=entries, source=coeffs[:count])


def _exact_ceil(x: Fraction) -> int:
    return -((-x.numerator) // x.denominator)


def convergence_bound(alpha: Rational, norm_est: float, n: int) -> Fraction:
    """Exact value of the step bound 1 / (2^n q_n norm_est^n)."""
    if norm_est < 1:
        raise ValueError("norm estimate must be >= 1")
    q_n = alpha.denominator
    return Fraction(1, 1) / (2**n * q_n * Fraction(norm_est) ** n)


@dataclass
class AlphaStep:
    """One scheduler step: the new rotation number plus its audit trail."""

    alpha_next: Rational
    q_next: int            # denominator of alpha_next
    multiple: int          # the chosen multiple P of q_n, alpha_next = alpha_n + 1/(q_n P)
    bound: Fraction        # exact step bound from the convergence inequality
    step: Fraction         # exact |alpha_next - alpha_n|

    def satisfied(self) -> bool:
        return self.step <= self.bound


def next_alpha(alpha_n: Rational, norm_est: float, n: int, q_floor: int = 1) -> AlphaStep:
    """Choose alpha_{n+1} = alpha_n + 1/(q_n P) with P the smallest multiple of q_n
    meeting the floor and the convergence bound |alpha_{n+1}-alpha_n| <= 1/(2^n q_n norm^n).

    The returned denominator q_{n+1} = q_n * P is itself a multiple of q_n (in fact
    of q_n^2), so fundamental domains nest across stages.  All comparisons are exact.
    """
    if q_floor < 1:
        raise ValueError("q_floor must be >= 1")
    q_n = alpha_n.denominator
    bound = convergence_bound(alpha_n, norm_est, n)
    # 1/(q_n P) <= bound  <=>  P >= 1/(q_n * bound)
    p_min = _exact_ceil(Fraction(1, 1) / (q_n * bound))
    p_min = max(p_min, q_floor, 1)
    multiple = ((p_min + q_n - 1) // q_n) * q_n
    alpha_next = alpha_n + Fraction(1, q_n * multiple)
    step = alpha_next - alpha_n
    out = AlphaStep(
        alpha_next=alpha_next,
        q_next=alpha_next.denominator,
        multiple=multiple,
        bound=bound,
        step=step,
    )
    assert out.satisfied()
    assert out.q_next % q_n == 0 and out.q_next >= q_floor
    return out


# Denominators above this bit length make even parametric sampling pointless.
_MAX_DENOM_BITS = 1 << 20


def _exceeds_exact_growth(q_small: int, q_big: int) -> bool:
    """True when q_big >= e^{4 q_small} fails; report-only, evaluated in logs."""
    # log of a Python int is exact to ~1 ulp even for huge ints
    return math.log(q_big) < 4.0 * q_small - 1e-9


@dataclass
class LiouvillePair:
    """Interleaved convergent ladders for a pair (alpha, alpha')."""

    first: ConvergentSequence
    second: ConvergentSequence
    scale: float
    exact_growth_holds: bool = False
    checks: list[tuple[str, int, int]] = field(default_factory=list)

    def recheck(self) -> bool:
        """Re-verify the scaled growth inequalities from the stored ladders (exact)."""
        q = self.first.denominators()
        qp = self.second.denominators()
        s = Fraction(self.scale)
        ok = True
        for k in range(len(qp)):
            ok &= Fraction(qp[k]) >= s ** q[k]
        for k in range(len(qp)):
            if k + 1 < len(q):
                ok &= Fraction(q[k + 1]) >= s ** qp[k]
        return ok


def liouville_pair(depth: int, scale: float = 2.0, q1: int = 1) -> LiouvillePair:
    """Build interleaved ladders q'_k >= scale^{q_k}, q_{k+1} >= scale^{q'_k}.

    ``depth`` is the number of levels (pairs q_k, q'_k).  The growth that the
    source construction actually demands uses base e^4; a flag records whether
    the built ladder happens to satisfy it too.  Beyond three levels the
    denominators outgrow any practical sampling, hence the hard error.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth > 3:
        raise DenominatorOverflow(
            f"depth {depth} > 3: level-4 denominators exceed practical sampling "
            "(they grow like scale^scale^scale^q and cannot be represented)"
        )
    if scale < 2:
        raise ValueError("scale must be >= 2")
    if depth == 0:
        return LiouvillePair(
            first=ConvergentSequence([], []),
            second=ConvergentSequence([], []),
            scale=scale,
        )
    if q1 < 1:
        raise ValueError("q1 must be >= 1")

    cf_a: list[int] = [0, q1]            # q_1 = q1
    cf_b: list[int] = [0]
    q_dens = [q1]
    qp_dens: list[int] = []
    checks: list[tuple[str, int, int]] = []

    def next_den(target: float | int, prev_q: int, prev_prev_q: int) -> int:
        t = _exact_ceil(Fraction(target)) if not isinstance(target, int) else target
        a = max(1, -((-(t - prev_prev_q)) // prev_q))  # ceil((t - q_{k-2}) / q_{k-1})
        return a, a * prev_q + prev_prev_q

    def pow_target(base: float, expo: int) -> int:
        bits = expo * math.log2(base)
        if bits > _MAX_DENOM_BITS:
            raise DenominatorOverflow(
                f"required denominator ~ scale^{expo} needs {bits:.3g} bits; "
                "reduce depth, scale, or q1"
            )
        if float(base).is_integer():
            return int(base) ** expo
        return _exact_ceil(Fraction(base) ** expo)

    for level in range(depth):
        # q'_level >= scale^{q_level}
        target = pow_target(scale, q_dens[level])
        if level == 0:
            a = max(1, target)
            cf_b.append(a)
            qp_dens.append(a)
        else:
            a, den = next_den(target, qp_dens[-1], qp_dens[-2] if len(qp_dens) >= 2 else 1)
            cf_b.append(a)
            qp_dens.append(den)
        checks.append(("q'_k >= s^q_k", q_dens[level], qp_dens[level]))
        if level + 1 < depth:
            # q_{level+1} >= scale^{q'_level}
            target = pow_target(scale, qp_dens[level])
            a, den = next_den(target, q_dens[-1], q_dens[-2] if len(q_dens) >= 2 else 1)
            cf_a.append(a)
            q_dens.append(den)
            checks.append(("q_k+1 >= s^q'_k", qp_dens[level], q_dens[level + 1]))

    first = convergents(cf_a)
    second = convergents(cf_b)
    # drop the leading a0-convergent so entry k corresponds to level k
    first = ConvergentSequence(first.entries[1:], cf_a)
    second = ConvergentSequence(second.entries[1:], cf_b)

    exact = all(not _exceeds_exact_growth(s, b) for (_, s, b) in checks)
    pair = LiouvillePair(first=first, second=second, scale=scale,
                         exact_growth_holds=exact, checks=checks)
    assert pair.recheck()
    return pair
