"""Measurement machinery: Birkhoff sums, natural averages, simplex gaps,
eps-density, (eps, m)-minimality, and low-discrepancy measure estimation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .diffeo import DiffeoChain, AnnulusPoint, wrap01, circle_dist


@dataclass
class Observable:
    evaluator: Callable  # (rho, theta) arrays -> array
    label: str

    def __call__(self, rho, theta):
        return self.evaluator(np.asarray(rho, float), np.asarray(theta, float))


@dataclass
class NaturalAverages:
    mean_area: float
    mean_left: float
    mean_right: float


@dataclass
class OrbitSegment:
    base: AnnulusPoint
    length: int

    def points(self, f: DiffeoChain) -> Iterable[AnnulusPoint]:
        p = self.base
        for _ in range(self.length):
            yield p
            p = f.apply_point(p)


def halton(n: int, skip: int = 20) -> np.ndarray:
    """2-D Halton points (bases 2, 3), deterministic; shape (n, 2)."""
    def vdc(idx, base):
        out = np.zeros(len(idx))
        denom = 1.0
        idx = idx.copy()
        while np.any(idx > 0):
            denom *= base
            out += (idx % base) / denom
            idx //= base
        return out

    idx = np.arange(skip, skip + n, dtype=np.int64)
    return np.stack([vdc(idx, 2), vdc(idx, 3)], axis=1)


def birkhoff_average(f: DiffeoChain, phi: Observable, z: AnnulusPoint, m: int) -> float:
    """S_{f,m} phi(z) / m by direct orbit iteration."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rho, theta = z.as_arrays()
    total = 0.0
    for _ in range(m):
        total += float(phi(rho, theta)[0])
        rho, theta = f.apply(rho, theta)
    return total / m


def natural_averages(phi: Observable, quad_res: int = 512) -> NaturalAverages:
    """Area and boundary-circle averages by composite quadrature.

    Theta uses the periodic rectangle rule (spectrally accurate for smooth
    integrands); rho uses composite Simpson.
    """
    if quad_res < 256:
        raise ValueError("quad_res must be >= 256")
    n = quad_res + (quad_res % 2)  # even for Simpson
    rho = np.linspace(0.0, 1.0, n + 1)
    theta = (np.arange(n) + 0.5) / n
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w /= 3.0 * n
    R, T = np.meshgrid(rho, theta, indexing="ij")
    vals = phi(R.ravel(), T.ravel()).reshape(n + 1, n)
    area = float(np.sum(vals.mean(axis=1) * w))
    left = float(np.mean(phi(np.zeros(n), theta)))
    right = float(np.mean(phi(np.ones(n), theta)))
    return NaturalAverages(area, left, right)


def simplex_gap(avg: float, na: NaturalAverages) -> tuple[float, float, str]:
    """Distance from ``avg`` to the two segments [mean_side, mean_area].

    Returns (gap, c_star, side): the best convex weight c with
    avg ~ c * mean_area + (1-c) * mean_side.
    """
    best = None
    for side, ms in (("l", na.mean_left), ("r", na.mean_right)):
        span = na.mean_area - ms
        if span == 0.0:
            c = 1.0
        else:
            c = min(1.0, max(0.0, (avg - ms) / span))
        gap = abs(avg - (c * na.mean_area + (1 - c) * ms))
        if best is None or gap < best[0] - 1e-18:
            best = (gap, c, side)
    return best


def eps_dense(points: np.ndarray, region: Sequence[tuple], eps: float,
              member=None) -> tuple[bool, float]:
    """Check eps-density of ``points`` in a union of rectangles.

    ``points``: array (n, 2) of (rho, theta).  ``region``: rectangles
    (rho0, rho1, theta0, theta1).  Every node of an eps/2 grid of the region
    (optionally filtered by ``member``) must be within eps of some point.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if len(region) == 0:
        raise ValueError("region must be nonempty")
    nodes = []
    for (r0, r1, t0, t1) in region:
        nr = max(2, int(math.ceil((r1 - r0) / (eps / 2))) + 1)
        nt = max(2, int(math.ceil((t1 - t0) / (eps / 2))) + 1)
        g = np.meshgrid(np.linspace(r0, r1, nr), np.linspace(t0, t1, nt), indexing="ij")
        nodes.append(np.stack([g[0].ravel(), g[1].ravel()], axis=1))
    nodes = np.concatenate(nodes, axis=0)
    if member is not None:
        keep = member(nodes[:, 0], nodes[:, 1])
        nodes = nodes[keep]
        if len(nodes) == 0:
            return True, 0.0
    if len(points) == 0:
        return False, float("inf")
    pts = np.asarray(points, dtype=float)
    worst = 0.0
    for chunk in np.array_split(nodes, max(1, len(nodes) * len(pts) // 4_000_000 + 1)):
        dr = np.abs(chunk[:, None, 0] - pts[None, :, 0])
        dt = circle_dist(chunk[:, None, 1], pts[None, :, 1])
        d = np.maximum(dr, dt).min(axis=1)
        worst = max(worst, float(d.max()))
    return worst <= eps, worst


def eps_minimal(f: DiffeoChain, sample: Sequence[AnnulusPoint], eps: float,
                m: int) -> bool:
    """(eps, m)-minimality on the sample: every ordered pair (x, y) has some
    n <= m with d(f^n(x), y) < eps.  Direct orbit iteration."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if len(sample) == 0:
        return True
    ys = np.array([[p.rho, p.theta] for p in sample])
    for x in sample:
        rho, theta = x.as_arrays()
        remaining = np.ones(len(sample), dtype=bool)
        for _ in range(m):
            rho, theta = f.apply(rho, theta)
            d = np.maximum(np.abs(rho[0] - ys[:, 0]), circle_dist(theta[0], ys[:, 1]))
            remaining &= ~(d < eps)
            if not remaining.any():
                break
        else:
            if remaining.any():
                return False
    return True


def measure_estimate(member: Callable, samples: int = 20000) -> tuple[float, float]:
    """Low-discrepancy area estimate of a membership predicate with a nominal
    binomial 95% half-width."""
    if samples < 10**4:
        raise ValueError("samples must be >= 1e4")
    pts = halton(samples)
    hit = np.asarray(member(pts[:, 0], pts[:, 1]), dtype=bool)
    p = float(np.mean(hit))
    ci = 1.96 * math.sqrt(max(p * (1 - p), 0.0) / samples)
    return p, ci


def conjugated_circle_average(conjugacy: DiffeoChain, phi: Observable,
                              rho0: float, theta0: float, q: int,
                              max_enum: int = 2_000_000,
                              quad_points: int | None = None) -> tuple[float, float]:
    """Average of phi over the f-orbit of H(rho0, theta0) at horizon q, where
    f = H S_{p/q} H^{-1}.

    At the full period the orbit is H of the uniform theta-grid, so for
    enumerable q the sum is exact; for larger q the grid average equals the
    circle integral up to V(phi o H)/q, evaluated by dense quadrature.
    Returns (average, bound on the substitution error).
    """
    if q <= max_enum:
        theta = wrap01(theta0 + np.arange(q) / q)
        r, t = conjugacy.apply(np.full(q, rho0), theta)
        return float(np.mean(phi(r, t))), 0.0
    n = quad_points or max(200_000, 4 * int(1 / max(conjugacy.min_feature(), 1e-6)))
    n = min(n, 4_000_000)
    theta = wrap01(theta0 + (np.arange(n) + 0.5) / n)
    r, t = conjugacy.apply(np.full(n, rho0), theta)
    vals = phi(r, t)
    variation = float(np.sum(np.abs(np.diff(vals)))) + abs(float(vals[-1] - vals[0]))
    # Koksma bound for the grid average of a 1-periodic function of bounded
    # variation, plus the same bound for the quadrature grid itself.
    err = variation / q + variation / n
    return float(np.mean(vals)), err
