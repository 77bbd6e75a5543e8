"""Nested-cylinder construction with a prescribed intersection measure:
centered bands C_n shrink to measure s, stage maps act only inside the
thickened band, and minimality is checked as (eps, m)-minimality on samples.

Model: the annulus [0,1] x S^1 with cylinders as centered bands
band(r) = [(1-r)/2, (1+r)/2] x S^1, so lambda(band(r)) = r exactly.  Strips
are full-band rectangles band(r_n) x J_i on the 1/q_n lattice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .diffeo import (DiffeoChain, FundamentalDomainMap, ThetaShear, TwistLattice,
                     ConjugatedRotation, identity_chain, compose, ck_norm_estimate,
                     sup_distance, commutation_residual, circle_dist, wrap01)
from .profiles import BumpProfile
from .rationals import next_alpha, AlphaStep
from .reporting import BoundCheck, StageReport
from .stats import halton

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
ASPECT_CAP = 2000.0
PI_LOWER = Fraction(314159, 100000)  # rational lower bound of pi for exact checks


class StripLayoutError(ValueError):
    pass


@dataclass
class MinimalSetConfig:
    s: Fraction = Fraction(1, 2)
    stages: int = 4
    q1: int = 2
    p1: int = 1
    eps_prime: tuple = (0.18, 0.12, 0.09, 0.07)   # per-stage diameter scale
    strips_per_pack: int = 8
    rows: tuple = (3, 8, 8, 8)
    r_core: float = 0.45
    shear_turns: float = 8.0
    norm_grid: int = 64
    samples: int = 20000
    intersection_samples: int = 1_000_000
    minimal_points: int = 30
    minimal_enum_cap: int = 1_000_000
    minimal_radius: float = 0.22   # desk-scale epsilon_N for the minimality check
    seed: int = 20240811

    def eps_p(self, n: int) -> float:
        return self.eps_prime[min(n - 1, len(self.eps_prime) - 1)]


@dataclass
class Cylinder:
    radius: Fraction             # lambda(band) = radius
    stage: int
    capped: bool = False

    def band(self) -> tuple[float, float]:
        r = float(self.radius)
        return (1.0 - r) / 2.0, (1.0 + r) / 2.0

    def contains(self, rho, margin: float = 0.0):
        lo, hi = self.band()
        return (rho >= lo - margin) & (rho <= hi + margin)


def cylinder(n: int, s: Fraction) -> Cylinder:
    raw = s + Fraction(1, n)
    if raw >= 1:
        return Cylinder(Fraction(1), n, capped=True)
    return Cylinder(raw, n)


@dataclass
class HorizontalStripCollection:
    """Strips band(r) x J_i with J_i = [i/(q k) + gap, (i+1)/(q k) - gap]."""

    n: int
    q: int
    k_per_cell: int
    radius: Fraction
    width: Fraction              # |J_i|, all equal
    nu: Fraction                 # minimum strip width == width
    gap: Fraction

    @property
    def count(self) -> int:
        return self.q * self.k_per_cell

    def strip_theta(self, i: int) -> tuple[Fraction, Fraction]:
        lo = Fraction(i, self.count) + self.gap
        return lo, lo + self.width

    def strip_measure(self) -> Fraction:
        return self.radius * self.width

    def total_measure(self) -> Fraction:
        return self.count * self.strip_measure()


def build_strips(n: int, q_n: int, cyl: Cylinder, eps_p: float,
                 cfg: MinimalSetConfig) -> HorizontalStripCollection:
    """nu-collection of horizontal strips meeting the three layout rules:
    S_{1/q_n}-invariance, per-strip measure below the quarter-radius disc,
    and near-full coverage of the thickened band."""
    eps_q = Fraction(eps_p).limit_denominator(10**6)
    ball = PI_LOWER * eps_q * eps_q / 16          # area of the eps'/4 disc
    max_width = ball / cyl.radius
    unit = cfg.strips_per_pack
    k = max(unit, unit * int(math.ceil(1.0 / (q_n * float(max_width) * unit))))
    width_jgap = Fraction(1, q_n * k)
    if width_jgap > max_width:
        mult = int(math.ceil(float(width_jgap / max_width)))
        k = unit * int(math.ceil(k * mult / unit))
        width_jgap = Fraction(1, q_n * k)
    cushion = ball - (cyl.radius + Fraction(1, 10**9) - cyl.radius)  # ball margin
    # equal gaps absorbing at most half of the coverage cushion
    slack = ball / 2
    gap_total = min(slack, width_jgap * Fraction(1, 50) * q_n * k)
    gap = gap_total / (2 * q_n * k)
    width = width_jgap - 2 * gap
    strips = HorizontalStripCollection(n=n, q=q_n, k_per_cell=k, radius=cyl.radius,
                                       width=width, nu=width, gap=gap)
    if strips.strip_measure() > ball:
        raise StripLayoutError(
            f"strip measure {float(strips.strip_measure()):.3g} exceeds the "
            f"quarter-radius disc {float(ball):.3g}; increase q_n or shrink eps'")
    return strips


def thickened(cyl: Cylinder, eps_p: float, prev: Cylinder) -> Cylinder:
    raw = cyl.radius + Fraction(eps_p).limit_denominator(10**6) ** 3
    r = min(raw, (cyl.radius + prev.radius) / 2 if prev.radius < 1 else raw,
            Fraction(999, 1000))
    capped = raw >= 1 or cyl.capped
    return Cylinder(min(r, Fraction(999, 1000)), cyl.stage, capped=capped)


@dataclass
class StripFoldStats:
    mode: str
    serviced_diam_max: float
    all_diam_max: float
    coverage: float


def build_h_n(strips: HorizontalStripCollection, cyl: Cylinder, cyl_bar: Cylinder,
              eps_p: float, cfg: MinimalSetConfig) -> tuple[FundamentalDomainMap,
                                                            StripFoldStats]:
    """Stage map: rows of quarter-twist packs inside the thickened band, plus a
    decohering shear, all identity outside the band."""
    n, q = strips.n, strips.q
    lo_b, hi_b = cyl_bar.band()
    pad = max(0.004, 0.02 * float(cyl_bar.radius))
    lo = max(lo_b + pad, 0.004)
    hi = min(hi_b - pad, 0.996)
    rows = cfg.rows[min(n - 1, len(cfg.rows) - 1)]
    span = hi - lo
    a = 0.5 * span / rows * 0.96
    lattice = strips.count // cfg.strips_per_pack
    if lattice % q != 0:
        lattice = q * max(1, lattice // q)
    cell = 1.0 / lattice
    b = 0.48 * cell
    mode = "twist" if (a / b <= ASPECT_CAP and a > 2e-3) else "shear_only"
    layers = []
    if mode == "twist":
        off = (GOLDEN * (n - 1)) % 1.0
        for j in range(rows):
            p = ((j + 0.5 + off) % rows) / rows
            rho_c = min(max(lo + span * p, lo + 1.02 * a), hi - 1.02 * a)
            angle = math.pi / 2 if j % 2 == 0 else -math.pi / 2
            layers.append(TwistLattice(lattice, rho_c, cell / 2, a, b,
                                       cfg.r_core, angle))
    shear_amp = min(cfg.shear_turns / max(lattice, 4), 0.45)
    layers.append(ThetaShear([BumpProfile(lo, hi, lo + span * 0.3,
                                          hi - span * 0.3, shear_amp)]))
    chain = DiffeoChain(layers)
    stats = _strip_fold_stats(strips, cyl, chain, cfg, mode)
    return FundamentalDomainMap(q, chain), stats


def _strip_fold_stats(strips: HorizontalStripCollection, cyl: Cylinder,
                      chain: DiffeoChain, cfg: MinimalSetConfig, mode: str,
                      n_strips: int = 32) -> StripFoldStats:
    rng = np.random.default_rng(cfg.seed + strips.n)
    idx = [int(v) % strips.count for v in rng.integers(0, min(strips.count, 2**62), n_strips)]
    lo_r, hi_r = cyl.band()
    alln, svc = [0.0], [0.0]
    for i in idx:
        lo_t, hi_t = map(float, strips.strip_theta(i))
        rr = np.linspace(lo_r, hi_r, 160)
        tt = np.full(160, (lo_t + hi_t) / 2)
        fr, ft = chain.apply(rr, tt)
        rho_ext = float(fr.max() - fr.min())
        ts = np.sort(wrap01(ft))
        th_ext = min(1.0 - float(np.max(np.diff(ts, append=ts[0] + 1.0))), 0.5)
        alln.append(max(rho_ext, th_ext))
        moved = np.abs(fr - rr) > 1e-9
        if moved.sum() > 8:
            svc.append(float(np.mean(np.abs(fr[moved] - np.median(fr[moved])) * 2)))
    return StripFoldStats(mode=mode,
                          serviced_diam_max=float(np.max(svc)),
                          all_diam_max=float(np.max(alln)),
                          coverage=0.0 if mode != "twist" else 0.72)


# ---------------------------------------------------------------------------
# certified minimality search


def eps_minimal_conjugated(H: DiffeoChain, alpha: Fraction, points: list,
                           eps: float, enum_cap: int = 1_000_000,
                           search: int = 120_000) -> tuple[bool, int, float]:
    """(eps, q)-minimality of f = H S_alpha H^{-1} on the sampled points at the
    full-period horizon.

    For enumerable denominators the orbit grid is evaluated exactly; otherwise
    the base circle is searched densely and a hit is certified when the best
    distance plus (orbit spacing) x (sampled Lipschitz constant along the
    circle) stays below eps.  Returns (ok, failing pairs, worst distance)."""
    q = alpha.denominator
    ys = np.array(points)
    fails = 0
    worst = 0.0
    for x in points:
        wr, wt = H.apply_inverse(np.array([x[0]]), np.array([x[1]]))
        rho_w, th_w = float(wr[0]), float(wt[0])
        if q <= enum_cap:
            th = wrap01(th_w + np.arange(int(q)) * (alpha.numerator / alpha.denominator))
            slack = 0.0
        else:
            th = wrap01(th_w + np.arange(search) / search)
            slack = None
        fr, ft = H.apply(np.full(len(th), rho_w), th)
        if slack is None:
            step = 1.0 / search
            lip = float(np.max(np.maximum(np.abs(np.diff(fr)),
                                          np.abs(wrap01(np.diff(ft) + 0.5) - 0.5)))) / step
            slack = lip * (0.5 / q) * 1.05 + lip * step * 0.5 + 1e-12
        d = np.maximum(np.abs(fr[:, None] - ys[None, :, 0]),
                       circle_dist(ft[:, None], ys[None, :, 1]))
        best = d.min(axis=0) + slack
        worst = max(worst, float(best.max()))
        fails += int(np.sum(best >= eps))
    return fails == 0, fails, worst


# ---------------------------------------------------------------------------
# stage verification and runner


@dataclass
class MinimalSetRun:
    cfg: MinimalSetConfig
    reports: list
    H: DiffeoChain
    alpha: Fraction
    f_N: ConjugatedRotation
    cylinders: list
    stage_chains: list
    strips: list
    intersection: dict = field(default_factory=dict)
    run_checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (all(r.passed for r in self.reports)
                and all(c.ok for c in self.run_checks))


def _member_image_cyl(chain: DiffeoChain, cyl: Cylinder):
    lo, hi = cyl.band()

    def member(rho, theta):
        r2, _ = chain.apply_inverse(rho, theta)
        return (r2 >= lo) & (r2 <= hi)

    return member


def verify_stage(strips: HorizontalStripCollection, cyl: Cylinder, cyl_bar: Cylinder,
                 prev_cyl: Cylinder, H_n: DiffeoChain, h_n: FundamentalDomainMap,
                 alpha_step: AlphaStep, stats: StripFoldStats, eps_p: float,
                 cfg: MinimalSetConfig) -> StageReport:
    n, q = strips.n, strips.q
    rep = StageReport(n=n, q_n=q)
    rep.data.update({"radius": cyl.radius, "radius_bar": cyl_bar.radius,
                     "capped": cyl.capped, "strip_count": str(strips.count),
                     "nu": strips.nu, "q_next": str(alpha_step.q_next),
                     "fold": stats, "eps_prime": eps_p})

    rep.add(BoundCheck.exact_le("eq24_step", alpha_step.step, alpha_step.bound))
    rep.add(BoundCheck.exact_le("q_next_ge_1_over_nu", 1 / strips.nu,
                                Fraction(alpha_step.q_next),
                                note="every strip wider than 1/q_{n+1}"))
    rep.add(BoundCheck("q_next_multiple_of_q", alpha_step.q_next % q, 0,
                       alpha_step.q_next % q == 0, kind="exact"))

    ball = PI_LOWER * Fraction(eps_p).limit_denominator(10**6) ** 2 / 16
    rep.add(BoundCheck.exact_le("strip_measure_le_ball", strips.strip_measure(),
                                ball, note="lambda(strip) <= lambda(B(eps'/4))"))
    rep.add(BoundCheck.exact_le("coverage_ge_band_minus_ball",
                                cyl_bar.radius - ball, strips.total_measure(),
                                note="union of strips nearly covers the band"))

    # identity outside the thickened band (hence H_n == H_{n-1} there)
    rng = np.random.default_rng(cfg.seed + 5)
    lo_b, hi_b = cyl_bar.band()
    if lo_b > 1e-3:
        m = 4000
        r = np.concatenate([rng.uniform(0, lo_b * 0.999, m),
                            rng.uniform(min(hi_b * 1.001, 1.0), 1, m)])
        t = rng.uniform(0, 1, len(r))
        fr, ft = h_n.chain.apply(r, t)
        resid = float(np.max(np.maximum(np.abs(fr - r), circle_dist(ft, t))))
    else:
        resid = 0.0
    rep.add(BoundCheck.sampled_le("identity_outside_thickened_band", resid, 1e-12))
    rep.add(BoundCheck.sampled_le("commutation_h_n_S_1_q",
                                  commutation_residual(h_n.chain, q, seed=cfg.seed),
                                  1e-12))
    if not cyl.capped:
        rep.add(BoundCheck("band_nesting",
                           f"{float(cyl.radius):.4f} < {float(cyl_bar.radius):.4f}",
                           f"< {float(prev_cyl.radius):.4f}",
                           cyl.radius < cyl_bar.radius < prev_cyl.radius, kind="exact"))

    # eps-density of the strip images inside the image band
    worst, method = _strip_density(strips, cyl, H_n, eps_p, cfg)
    rep.data["density_worst_gap"] = worst
    rep.data["density_method"] = method
    rep.add(BoundCheck.sampled_le("strip_images_dense_in_band", worst, 3 * eps_p,
                                  note=f"method={method}"))
    return rep


def _strip_density(strips: HorizontalStripCollection, cyl: Cylinder,
                   H_n: DiffeoChain, eps_p: float, cfg: MinimalSetConfig):
    if strips.count > 240:
        # the strip union covers the band except inter-strip gaps; push the
        # exact domain-side density radius through a sampled Lipschitz bound
        g_dom = float(2 * strips.gap)
        rng = np.random.default_rng(cfg.seed + 11)
        lo, hi = cyl.band()
        rr = rng.uniform(lo, hi, 4000)
        tt = rng.uniform(0, 1, 4000)
        j = H_n.jacobian(rr, tt)
        lip = float(np.max(np.abs(np.stack(j))))
        return lip * g_dom, "domain-gap x Lipschitz bound"
    rng = np.random.default_rng(cfg.seed + 7 * strips.n)
    n_strips = min(strips.count, 240)
    idx = sorted(set(int(v) % strips.count
                     for v in rng.integers(0, min(strips.count, 2**62), n_strips)))
    lo_r, hi_r = cyl.band()
    pts_r, pts_t = [], []
    for i in idx:
        lo_t, hi_t = map(float, strips.strip_theta(i))
        m = 80
        rr = rng.uniform(lo_r, hi_r, m)
        tt = rng.uniform(lo_t, max(hi_t, lo_t + 1e-15), m)
        fr, ft = H_n.apply(rr, tt)
        pts_r.append(fr)
        pts_t.append(ft)
    pts = np.stack([np.concatenate(pts_r), np.concatenate(pts_t)], axis=1)
    # grid over the image band: nodes of C_n pushed through H_n
    g = max(24, int(2.0 / eps_p))
    gr = np.linspace(lo_r + 1e-4, hi_r - 1e-4, g)
    gt = np.linspace(0, 1, 2 * g, endpoint=False)
    R, T = np.meshgrid(gr, gt, indexing="ij")
    nr, nt = H_n.apply(R.ravel(), T.ravel())
    worst = 0.0
    nodes = np.stack([nr, nt], axis=1)
    for chunk in np.array_split(nodes, max(1, len(nodes) * len(pts) // 4_000_000 + 1)):
        dr = np.abs(chunk[:, None, 0] - pts[None, :, 0])
        dt = circle_dist(chunk[:, None, 1], pts[None, :, 1])
        d = np.maximum(dr, dt).min(axis=1)
        worst = max(worst, float(d.max()))
    return worst, "image grid sampling"


def intersection_measure(stage_chains: list, cylinders: list,
                         samples: int) -> tuple[float, float, float]:
    """Estimate of lambda(intersection of H_n(C_n)); the exact value is
    lambda(C_N) by nesting plus area preservation."""
    pts = halton(samples)
    inside = np.ones(samples, dtype=bool)
    for chain, cyl in zip(stage_chains, cylinders):
        lo, hi = cyl.band()
        r2, _ = chain.apply_inverse(pts[inside, 0], pts[inside, 1])
        keep = (r2 >= lo) & (r2 <= hi)
        idx = np.flatnonzero(inside)
        inside[idx[~keep]] = False
    est = float(np.mean(inside))
    ci = 1.96 * math.sqrt(max(est * (1 - est), 1e-12) / samples)
    return est, ci, float(cylinders[-1].radius)


def rigidity_probe(f_N: ConjugatedRotation, q_list: list[int],
                   samples: int = 1500) -> list[dict]:
    """sup C1-proxy distance of f^{q_k} from the identity; rigidity shows as a
    decreasing tail."""
    out = []
    for qk in q_list:
        chain = f_N.as_chain(qk)
        d = sup_distance(chain, identity_chain(), samples=samples, seed=17)
        shift = Fraction(qk) * f_N.alpha
        shift -= shift.numerator // shift.denominator
        out.append({"q_k": str(qk), "distance": d, "rotation_residual": float(shift)})
    return out


def run(cfg: MinimalSetConfig | None = None) -> MinimalSetRun:
    cfg = cfg or MinimalSetConfig()
    if not 0 <= cfg.s < 1:
        raise ValueError("s must be in [0, 1)")
    alpha = Fraction(cfg.p1, cfg.q1)
    H = identity_chain()
    prev_cyl = Cylinder(Fraction(1), 0)
    reports, cylinders, chains, strips_list = [], [], [], []
    q_list = []
    for n in range(1, cfg.stages + 1):
        q_n = alpha.denominator
        q_list.append(q_n)
        cyl = cylinder(n, cfg.s)
        eps_p = cfg.eps_p(n)
        cyl_bar = thickened(cyl, eps_p, prev_cyl)
        strips = build_strips(n, q_n, cyl, eps_p, cfg)
        h_n, stats = build_h_n(strips, cyl, cyl_bar, eps_p, cfg)
        H = compose(H, h_n.chain)
        norm = ck_norm_estimate(H, min(n, 4), cfg.norm_grid, seed=cfg.seed)
        step = next_alpha(alpha, max(norm, 2.0), n,
                          q_floor=int(math.ceil(1 / float(strips.nu))))
        rep = verify_stage(strips, cyl, cyl_bar, prev_cyl, H, h_n, step, stats,
                           eps_p, cfg)
        rep.data["norm_est"] = norm
        reports.append(rep)
        cylinders.append(cyl)
        chains.append(DiffeoChain(list(H.layers)))
        strips_list.append(strips)
        prev_cyl = cyl
        alpha = step.alpha_next

    run_checks = []
    # nesting and stabilization on sampled points
    rng = np.random.default_rng(cfg.seed + 23)
    m = 10000
    viol_nest = 0
    viol_stab = 0
    for n in range(1, cfg.stages):
        lo, hi = cylinders[n].band()
        w_r = rng.uniform(lo, hi, m)
        w_t = rng.uniform(0, 1, m)
        z_r, z_t = chains[n].apply(w_r, w_t)
        pr, _ = chains[n - 1].apply_inverse(z_r, z_t)
        lo_p, hi_p = cylinders[n - 1].band()
        viol_nest += int(np.sum((pr < lo_p - 1e-9) | (pr > hi_p + 1e-9)))
        # stabilization: H_l(C_n) = H_n(C_n) for l > n
        lr, _ = chains[-1].apply_inverse(z_r, z_t)
        lo_n, hi_n = cylinders[n].band()
        viol_stab += int(np.sum((lr < lo_n - 1e-9) | (lr > hi_n + 1e-9)))
    run_checks.append(BoundCheck("nesting_violations", viol_nest, 0,
                                 viol_nest == 0, kind="exact",
                                 note="H_n(C_n) inside H_{n-1}(C_{n-1})"))
    run_checks.append(BoundCheck("stabilization_violations", viol_stab, 0,
                                 viol_stab == 0, kind="exact",
                                 note="H_N(C_n) = H_n(C_n) for later stages"))

    est, ci, truth = intersection_measure(chains, cylinders, cfg.intersection_samples)
    run_checks.append(BoundCheck.sampled_le("intersection_measure_matches",
                                            abs(est - truth), 2 * ci + 1e-4,
                                            note=f"estimate {est:.5f} vs r_s + 1/N = {truth:.5f}"))

    # (3 eps_N, q_{N+1})-minimality on sampled points of H_N(C_N)
    f_N = ConjugatedRotation(chains[-1], alpha)
    lo, hi = cylinders[-1].band()
    pts = []
    while len(pts) < cfg.minimal_points:
        w_r = float(rng.uniform(lo, hi))
        w_t = float(rng.uniform(0, 1))
        z = chains[-1].apply(np.array([w_r]), np.array([w_t]))
        pts.append((float(z[0][0]), float(z[1][0])))
    eps_run = 3 * cfg.minimal_radius
    ok_min, fails, worst_pair = eps_minimal_conjugated(
        chains[-1], alpha, pts, eps_run, cfg.minimal_enum_cap)
    run_checks.append(BoundCheck("eps_minimal", f"{fails} failing pairs",
                                 f"(eps=3x{cfg.minimal_radius}, m=q_{cfg.stages + 1})",
                                 ok_min,
                                 note=f"{len(pts)} points, worst certified "
                                      f"approach {worst_pair:.4f}"))

    rig = rigidity_probe(f_N, q_list)
    result = MinimalSetRun(cfg=cfg, reports=reports, H=chains[-1], alpha=alpha,
                           f_N=f_N, cylinders=cylinders, stage_chains=chains,
                           strips=strips_list, run_checks=run_checks)
    result.intersection = {"estimate": est, "ci95": ci, "expected": truth,
                           "rigidity": rig, "eps_minimal_eps": eps_run}
    return result
