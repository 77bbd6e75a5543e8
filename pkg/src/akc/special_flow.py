"""Special flows over two-torus translations under an analytic ceiling,
distribution checkers, and the horocycle commutation limit."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .stats import halton


class RolloverBudget(RuntimeError):
    """Flow advance exceeded the configured rollover budget."""


@dataclass(frozen=True)
class CeilingFunction:
    """phi(x, x') = 1 + sum_{k=2}^K [cos(2 pi k x) + cos(2 pi k x')] e^{-k}.

    Strictly positive (min > 0.13 crude bound, actual ~ 0.57) with exact mean 1.
    """

    truncation: int = 40

    def __post_init__(self):
        if self.truncation < 2:
            raise ValueError("truncation must be >= 2")
        ks = np.arange(2, self.truncation + 1)
        object.__setattr__(self, "_ks", ks)
        object.__setattr__(self, "_coef", np.exp(-ks.astype(float)))

    def __call__(self, x, xp):
        x = np.asarray(x, dtype=float)
        xp = np.asarray(xp, dtype=float)
        kx = 2 * np.pi * np.multiply.outer(x, self._ks)
        ky = 2 * np.pi * np.multiply.outer(xp, self._ks)
        return 1.0 + np.cos(kx) @ self._coef + np.cos(ky) @ self._coef

    def truncation_error(self) -> float:
        k = self.truncation
        return 2 * math.exp(-(k + 1)) / (1 - math.exp(-1))

    def lower_bound(self) -> float:
        s = math.exp(-2) / (1 - math.exp(-1))
        return 1.0 - 2 * s

    def mean_quadrature(self, n: int = 512) -> float:
        g = (np.arange(n) + 0.5) / n
        X, Y = np.meshgrid(g, g, indexing="ij")
        return float(np.mean(self(X.ravel(), Y.ravel())))


def phi(x, xp, K: int = 40):
    """Ceiling value(s) at truncation K."""
    return CeilingFunction(K)(x, xp)


@dataclass(frozen=True)
class SpecialFlowPoint:
    x: float
    xp: float
    s: float


@dataclass
class SpecialFlow:
    """Special flow over the translation R_(alpha, alpha') under the ceiling."""

    alpha: float
    alpha_p: float
    ceiling: CeilingFunction = field(default_factory=CeilingFunction)
    rollover_budget: int = 200000

    def advance_arrays(self, x, xp, s, t: float):
        """Vectorized T^t; raises RolloverBudget if the total rollover count
        across the batch exceeds the budget."""
        x = np.array(x, dtype=float, copy=True)
        xp = np.array(xp, dtype=float, copy=True)
        s = np.array(s, dtype=float, copy=True) + float(t)
        steps = 0
        while True:
            ceil = self.ceiling(x, xp)
            over = s >= ceil
            if not np.any(over):
                break
            s[over] -= ceil[over]
            x[over] = np.mod(x[over] + self.alpha, 1.0)
            xp[over] = np.mod(xp[over] + self.alpha_p, 1.0)
            steps += 1
            if steps > self.rollover_budget:
                raise RolloverBudget(
                    f"exceeded {self.rollover_budget} rollovers at t={t} "
                    f"(advanced {steps} fibers so far)"
                )
        while True:
            under = s < 0
            if not np.any(under):
                break
            x[under] = np.mod(x[under] - self.alpha, 1.0)
            xp[under] = np.mod(xp[under] - self.alpha_p, 1.0)
            s[under] += self.ceiling(x[under], xp[under])
            steps += 1
            if steps > self.rollover_budget:
                raise RolloverBudget(f"exceeded {self.rollover_budget} rollovers at t={t}")
        return x, xp, s

    def advance(self, p: SpecialFlowPoint, t: float) -> SpecialFlowPoint:
        x, xp, s = self.advance_arrays(np.array([p.x]), np.array([p.xp]),
                                       np.array([p.s]), t)
        return SpecialFlowPoint(float(x[0]), float(xp[0]), float(s[0]))

    def sample_space(self, n: int, skip: int = 60):
        """Low-discrepancy points of the flow space {0 <= s < phi(x, x')} by
        rejection from the bounding slab."""
        top = 1.0 + 2 * math.exp(-2) / (1 - math.exp(-1)) + 1e-9
        got_x, got_xp, got_s = [], [], []
        need = n
        idx = skip
        while need > 0:
            m = int(need * top * 1.3) + 64
            pts = _halton3(m, idx)
            idx += m
            x, xp, u = pts[:, 0], pts[:, 1], pts[:, 2] * top
            keep = u < self.ceiling(x, xp)
            got_x.append(x[keep])
            got_xp.append(xp[keep])
            got_s.append(u[keep])
            need = n - sum(len(g) for g in got_x)
        x = np.concatenate(got_x)[:n]
        xp = np.concatenate(got_xp)[:n]
        s = np.concatenate(got_s)[:n]
        return x, xp, s


def _halton3(n: int, skip: int) -> np.ndarray:
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
    return np.stack([vdc(idx, 2), vdc(idx, 3), vdc(idx, 5)], axis=1)


def flow_distance(a, b, ceiling: CeilingFunction, alpha: float, alpha_p: float):
    """Chart distance on the flow space, minimized over one rollover either way."""
    ax, axp, as_ = a
    bx, bxp, bs = b

    def circ(u, v):
        d = np.abs(np.mod(u, 1) - np.mod(v, 1))
        return np.minimum(d, 1 - d)

    def chart(px, pxp, ps, qx, qxp, qs):
        return np.maximum.reduce([circ(px, qx), circ(pxp, qxp), np.abs(ps - qs)])

    d0 = chart(ax, axp, as_, bx, bxp, bs)
    # roll b up: (x,x',s) ~ (x+a, x'+a', s - phi(x,x'))
    d1 = chart(ax, axp, as_, np.mod(bx + alpha, 1), np.mod(bxp + alpha_p, 1),
               bs - ceiling(bx, bxp))
    bxd = np.mod(bx - alpha, 1)
    bxpd = np.mod(bxp - alpha_p, 1)
    d2 = chart(ax, axp, as_, bxd, bxpd, bs + ceiling(bxd, bxpd))
    return np.minimum.reduce([d0, d1, d2])


def correlation(flow: SpecialFlow, F: Callable, G: Callable, t: float,
                samples: int = 20000, skip: int = 60) -> tuple[float, float]:
    """Estimate of int F * (G o T^t) d mu - int F d mu * int G d mu with a
    nominal 95% half-width."""
    if samples < 10**4:
        raise ValueError("samples must be >= 1e4")
    x, xp, s = flow.sample_space(samples, skip=skip)
    fv = F(x, xp, s)
    x2, xp2, s2 = flow.advance_arrays(x, xp, s, t)
    gv = G(x2, xp2, s2)
    g0 = G(x, xp, s)
    prod = fv * gv
    est = float(np.mean(prod) - np.mean(fv) * np.mean(g0))
    ci = 1.96 * float(np.std(prod)) / math.sqrt(samples)
    return est, ci


def periodic_flow_distance(flow: SpecialFlow, alpha_n: Fraction, alpha_p_n: Fraction,
                           t: float, samples: int = 2000,
                           q_pair: tuple[int, int] | None = None) -> dict:
    """Sampled sup distance between T^t and the periodic-base approximant T^t_n,
    compared to the predicted scale t/(q_n q_{n+1})."""
    approx = SpecialFlow(float(alpha_n), float(alpha_p_n), flow.ceiling,
                         flow.rollover_budget)
    x, xp, s = flow.sample_space(samples)
    a = flow.advance_arrays(x, xp, s, t)
    b = approx.advance_arrays(x, xp, s, t)
    d = flow_distance(a, b, flow.ceiling, flow.alpha, flow.alpha_p)
    sup = float(np.max(d))
    out = {"t": t, "sup_distance": sup}
    if q_pair is not None:
        qn, qn1 = q_pair
        scale = t / (qn * qn1)
        out["scale"] = scale
        out["fitted_C"] = sup / scale if scale > 0 else float("inf")
    return out


@dataclass
class BoxFamily:
    """Disjoint boxes [i/q,(i+1)/q] x [i'/q',(i'+1)/q'] x [s, s+delta] kept
    below the ceiling over their base cell; delta = 1/q."""

    q: int
    qp: int
    boxes: list  # (i, ip, s_lo) triples
    delta: float

    @staticmethod
    def build(q: int, qp: int, ceiling: CeilingFunction, probe: int = 4) -> "BoxFamily":
        delta = 1.0 / q
        g = (np.arange(probe) + 0.5) / probe
        boxes = []
        for i in range(q):
            xs = (i + g) / q
            for ip in range(qp):
                ys = (ip + g) / qp
                X, Y = np.meshgrid(xs, ys, indexing="ij")
                m = float(np.min(ceiling(X.ravel(), Y.ravel()))) - 0.02
                k = 0
                while (k + 1) * delta <= m:
                    boxes.append((i, ip, k * delta))
                    k += 1
        return BoxFamily(q, qp, boxes, delta)

    def total_measure(self) -> float:
        return len(self.boxes) / (self.q * self.qp) * self.delta

    def locate(self, x, xp, s):
        """Index of the containing box per point, or -1."""
        i = np.clip((np.asarray(x) * self.q).astype(int), 0, self.q - 1)
        ip = np.clip((np.asarray(xp) * self.qp).astype(int), 0, self.qp - 1)
        k = np.floor(np.asarray(s) / self.delta).astype(int)
        lookup = {(b[0], b[1], round(b[2] / self.delta)): j for j, b in enumerate(self.boxes)}
        out = np.full(len(i), -1, dtype=int)
        for n, key in enumerate(zip(i.tolist(), ip.tolist(), k.tolist())):
            out[n] = lookup.get(key, -1)
        return out


def uniform_distribution_check(points: np.ndarray, box: tuple, eps: float,
                               eta: float) -> tuple[bool, dict]:
    """Definition check: the empirical measure of ``points`` inside ``box``
    matches volume proportions on every atom of an eps-grid, within relative
    error eta.  ``box`` = (x0,x1,y0,y1,s0,s1); atoms with zero expected mass
    are excluded and noted."""
    x0, x1, y0, y1, s0, s1 = box
    pts = np.asarray(points, dtype=float)
    inside = ((pts[:, 0] >= x0) & (pts[:, 0] <= x1) &
              (pts[:, 1] >= y0) & (pts[:, 1] <= y1) &
              (pts[:, 2] >= s0) & (pts[:, 2] <= s1))
    pts = pts[inside]
    n_b = len(pts)
    if n_b == 0:
        return False, {"reason": "no points inside the region"}
    dims = (x1 - x0, y1 - y0, s1 - s0)
    grids = [max(1, int(math.ceil(d / eps))) for d in dims]
    idx = np.zeros(n_b, dtype=int)
    mult = 1
    for axis, (lo, d, g) in enumerate(zip((x0, y0, s0), dims, grids)):
        cells = np.clip(((pts[:, axis] - lo) / d * g).astype(int), 0, g - 1)
        idx = idx + cells * mult
        mult *= g
    counts = np.bincount(idx, minlength=grids[0] * grids[1] * grids[2])
    expect = n_b / (grids[0] * grids[1] * grids[2])
    rel = np.abs(counts - expect) / expect
    ok = bool(np.all(rel <= eta))
    return ok, {"atoms": int(len(counts)), "max_rel_dev": float(np.max(rel)),
                "eta": eta, "excluded": 0}


def identical_distribution_check(points: np.ndarray, fam: BoxFamily, u: float,
                                 v: float) -> tuple[bool, dict]:
    """Definition check: traces of ``points`` in every pair of boxes agree
    atom-by-atom on a shared u-grid, within relative error v."""
    pts = np.asarray(points, dtype=float)
    which = fam.locate(pts[:, 0], pts[:, 1], pts[:, 2])
    gx = max(1, int(math.ceil((1.0 / fam.q) / u)))
    gy = max(1, int(math.ceil((1.0 / fam.qp) / u)))
    gs = max(1, int(math.ceil(fam.delta / u)))
    n_atoms = gx * gy * gs
    n_boxes = len(fam.boxes)
    table = np.zeros((n_boxes, n_atoms), dtype=float)
    sel = which >= 0
    p = pts[sel]
    w = which[sel]
    bx = np.array([fam.boxes[j][0] for j in range(n_boxes)])
    by = np.array([fam.boxes[j][1] for j in range(n_boxes)])
    bs = np.array([fam.boxes[j][2] for j in range(n_boxes)])
    lx = (p[:, 0] - bx[w] / fam.q) * fam.q
    ly = (p[:, 1] - by[w] / fam.qp) * fam.qp
    ls = (p[:, 2] - bs[w]) / fam.delta
    ax = np.clip((lx * gx).astype(int), 0, gx - 1)
    ay = np.clip((ly * gy).astype(int), 0, gy - 1)
    asx = np.clip((ls * gs).astype(int), 0, gs - 1)
    atom = ax + gx * (ay + gy * asx)
    np.add.at(table, (w, atom), 1.0)
    skipped = 0
    worst = 0.0
    ok = True
    occupied = table.sum(axis=1) > 0
    live = np.flatnonzero(occupied)
    if len(live) < 2:
        return False, {"reason": "fewer than two boxes contain points"}
    ref = table[live]
    for k in range(n_atoms):
        col = ref[:, k]
        base = col.max()
        if base == 0:
            skipped += 1
            continue
        dev = float(np.max(np.abs(col[:, None] - col[None, :])))
        denom = max(float(col.min()), 1e-12)
        rel = dev / max(denom, 1.0)
        worst = max(worst, rel)
        if np.any(col == 0) or rel > v:
            ok = False
    return ok, {"atoms": n_atoms, "boxes_occupied": int(len(live)),
                "skipped_atoms": skipped, "worst_rel_dev": worst, "v": v}


def horocycle_matrix(t: float) -> np.ndarray:
    """G_t R_{e^{-2t}/(2 pi)} G_{-t}, which tends to the unipotent [[1,1],[0,1]]."""
    sp = math.exp(-2 * t)
    c, s = math.cos(sp), math.sin(sp)
    return np.array([[c, math.exp(2 * t) * s], [-math.exp(-2 * t) * s, c]])


def horocycle_limit(t: float) -> tuple[np.ndarray, float]:
    """The conjugated rotation matrix and its entrywise distance to H_1."""
    m = horocycle_matrix(t)
    h1 = np.array([[1.0, 1.0], [0.0, 1.0]])
    return m, float(np.max(np.abs(m - h1)))
