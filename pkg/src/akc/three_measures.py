"""Annulus construction with three distinguished invariant measures at every
finite stage: kernel/boundary collections, stage conjugacies, and the full
verification battery (exact orbit counts, Birkhoff simplex gaps, telescoping).

Collections are exact rectangles; section lengths, measures and rotation-orbit
hit counts are verified in rational arithmetic at any denominator size.  Stage
maps are rows of quarter-twist pack lattices that transpose the middle spans
of the kernel tubes; this is what drives circle averages toward the area
measure.  The twist aspect ratio is capped so chain round-trips stay at
1e-12: once the rotation denominator outgrows that cap the stage map degrades
to a circle-preserving shear and the stage contributes scheduling and exact
counting only (see decisions ledger).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .diffeo import (DiffeoChain, FundamentalDomainMap, ThetaShear, TwistLattice,
                     ConjugatedRotation, identity_chain, compose,
                     ck_norm_estimate, sup_distance, commutation_residual,
                     circle_dist, wrap01)
from .modular import orbit_interval_count
from .profiles import BumpProfile
from .rationals import next_alpha, AlphaStep
from .reporting import BoundCheck, StageReport
from .stats import (Observable, natural_averages, simplex_gap, halton)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
ASPECT_CAP = 2000.0  # keeps ||DJ|| * eps comfortably under the 1e-12 round-trip budget


class CollectionCapExceeded(ValueError):
    pass


class FoldDiameterError(ValueError):
    def __init__(self, achieved: float, target: float):
        super().__init__(f"fold achieved diameter {achieved:.4g} > target {target:.4g}")
        self.achieved = achieved
        self.target = target


@dataclass
class ThreeMeasuresConfig:
    stages: int = 3
    q1: int = 2
    p1: int = 1
    eta0: Fraction = Fraction(1, 32)            # eta_n = eta0 / 2^(n-1)
    pack_size: int = 8
    rows: tuple = (3, 8, 8, 8)
    twist_layers: int = 1
    r_core: float = 0.45
    shear_turns: float = 8.0
    l_cap: int = 10**30
    diam_targets: tuple = (0.50, 0.32, 0.32, 0.32)   # serviced-piece targets
    strict_fold: bool = False
    n_observables: int = 20
    n_orbit_points: int = 50
    orbit_samples_cap: int = 1_000_000
    quad_points: int = 400_000
    quad_res: int = 512
    norm_grid: int = 64
    samples: int = 20000
    seed: int = 20240809

    def eta(self, n: int) -> Fraction:
        return self.eta0 / 2 ** (n - 1)


@dataclass
class SingularNeighborhoods:
    """Open bands [0, b_l) and (1 - b_r, 1] where the conjugacy is the identity."""

    b_l: float
    b_r: float


@dataclass
class TripleCollections:
    """Stage collections, all corners exact rationals.

    Kernel i = [rho*, 1 - rho*] x [i/l + g, i/l + g + beta/l]; the boundary
    sets reuse the theta window over [0, rho* - sliver] and its mirror image.
    The step profile c(rho) = 1_{[rho*, 1-rho*]} realizes c(1/2) = 1 and
    c(0) = c(1) = 0; the two handoff circles rho = rho*, 1 - rho* carry both
    a kernel and a boundary section and are excluded from sampled checks
    (the +-1 slack of the counting lemma absorbs them).
    """

    n: int
    q: int
    l: int
    eta: Fraction
    beta: Fraction
    gap: Fraction
    rho_star: Fraction
    sliver: Fraction
    packs_per_cell: int
    pack_size: int

    def c_profile(self, rho: float) -> float:
        return 1.0 if float(self.rho_star) <= rho <= 1.0 - float(self.rho_star) else 0.0

    def kernel_theta(self, i: int) -> tuple[Fraction, Fraction]:
        lo = Fraction(i, self.l) + self.gap
        return lo, lo + self.beta / self.l

    def kernel_rho(self) -> tuple[Fraction, Fraction]:
        return self.rho_star, 1 - self.rho_star

    def delta_rho(self, side: str) -> tuple[Fraction, Fraction]:
        top = self.rho_star - self.sliver
        return (Fraction(0), top) if side == "l" else (1 - top, Fraction(1))

    def measure_union_kernels(self) -> Fraction:
        return self.beta * (1 - 2 * self.rho_star)

    def section_bounds_ok(self) -> bool:
        return 1 - self.eta <= self.beta <= 1 + self.eta


def build_collections(n: int, q_n: int, eta_n: Fraction,
                      b_prev: SingularNeighborhoods,
                      cfg: ThreeMeasuresConfig) -> TripleCollections:
    """Stage-n collections; l_n is the smallest multiple of q_n * pack_size
    at least 1/eta_n, capped by config."""
    if eta_n <= 0:
        raise ValueError("eta must be positive")
    if min(b_prev.b_l, b_prev.b_r) <= 0:
        raise ValueError("previous singular neighborhoods must have positive width")
    unit = q_n * cfg.pack_size
    l_target = max(int(math.ceil(1 / float(eta_n))), unit)
    l_n = ((l_target + unit - 1) // unit) * unit
    if l_n > cfg.l_cap:
        raise CollectionCapExceeded(
            f"l_n = {l_n} exceeds cap {cfg.l_cap}; use a larger eta_n (or fewer stages)"
        )
    rho_star = eta_n / 4
    if not float(rho_star) < min(1.0 / n, b_prev.b_l, b_prev.b_r):
        raise ValueError("rho* must sit inside the previous identity bands and [0, 1/n]")
    beta = 1 - eta_n / 4
    cols = TripleCollections(
        n=n, q=q_n, l=l_n, eta=eta_n, beta=beta, gap=(1 - beta) / (2 * l_n),
        rho_star=rho_star, sliver=rho_star / 2**20,
        packs_per_cell=l_n // unit, pack_size=cfg.pack_size,
    )
    assert cols.section_bounds_ok()
    assert cols.measure_union_kernels() >= 1 - eta_n
    assert Fraction(1, l_n) <= eta_n
    return cols


@dataclass
class FoldStats:
    mode: str
    serviced_fraction: float
    serviced_diam_max: float
    all_diam_max: float
    section_diam_p95: float
    per_row_a: list


def _stage_geometry(cols: TripleCollections, cfg: ThreeMeasuresConfig):
    """Row layout: staggered layers of twist rows so their core bands jointly
    cover almost every height, with a golden-ratio offset per stage so no
    height is missed by every stage."""
    rho_star = float(cols.rho_star)
    lo = rho_star * 1.5 + 0.004
    hi = 1.0 - lo
    rows = cfg.rows[min(cols.n - 1, len(cfg.rows) - 1)]
    span = hi - lo
    a = 0.5 * span / rows * 0.92
    layers = []
    for layer_idx in range(cfg.twist_layers):
        off = (GOLDEN * (cols.n - 1) + 0.5 * layer_idx) % 1.0
        centers = []
        for j in range(rows):
            p = ((j + 0.5 + off) % rows) / rows
            c = lo + span * p
            centers.append(min(max(c, lo + 1.02 * a), hi - 1.02 * a))
        layers.append(centers)
    return lo, hi, rows, layers, a


def build_h_n(cols: TripleCollections, b_prev: SingularNeighborhoods,
              cfg: ThreeMeasuresConfig) -> tuple[FundamentalDomainMap,
                                                 SingularNeighborhoods, FoldStats]:
    """Stage conjugacy: rows of quarter-twist packs plus a sub-cell post-shear.

    Identity on the new singular bands by construction; every layer lives on a
    multiple of the q_n lattice so the map commutes with S_{1/q_n} exactly.
    When the lattice is too fine for the twist aspect cap the stage degrades
    to the shear-only mode.
    """
    q = cols.q
    lo, hi, rows, center_layers, a = _stage_geometry(cols, cfg)
    lattice = q * cols.packs_per_cell
    cell = 1.0 / lattice
    b = 0.48 * cell
    mode = "twist" if a / b <= ASPECT_CAP else "shear_only"
    layers = []
    row_as = []
    if mode == "twist":
        for li, centers in enumerate(center_layers):
            for j, rho_c in enumerate(centers):
                if li == 0:
                    row_as.append(a)
                angle = math.pi / 2 if (j + li) % 2 == 0 else -math.pi / 2
                theta_c = cell * 0.5 if li % 2 == 0 else 0.0
                layers.append(TwistLattice(lattice, rho_c, theta_c,
                                           a, b, cfg.r_core, angle))
    # decohering shear: only harmonics that are multiples of the lattice
    # survive the lattice sum, so sweeping ~1 period of the cell pattern
    # across the twist columns suffices and costs almost nothing in |u'|
    shear_amp = min(cfg.shear_turns / max(lattice, 4), 0.45) * (1.0 + 0.13 * GOLDEN * cols.n)
    layers.append(ThetaShear([BumpProfile(lo, hi, lo + (hi - lo) * 0.3,
                                          hi - (hi - lo) * 0.3, shear_amp)]))
    chain = DiffeoChain(layers)
    h_n = FundamentalDomainMap(q, chain)
    rho_star = float(cols.rho_star)
    b_new = SingularNeighborhoods(rho_star, rho_star)

    stats = _fold_stats(cols, chain, row_as, center_layers, cfg, mode)
    target = cfg.diam_targets[min(cols.n - 1, len(cfg.diam_targets) - 1)]
    if cfg.strict_fold and mode == "twist" and stats.serviced_diam_max > target:
        raise FoldDiameterError(stats.serviced_diam_max, target)
    return h_n, b_new, stats


def _kernel_boundary(cols: TripleCollections, i: int, m: int = 240):
    lo_t, hi_t = map(float, cols.kernel_theta(i))
    lo_r, hi_r = map(float, cols.kernel_rho())
    k = m // 4
    r = np.concatenate([np.linspace(lo_r, hi_r, k), np.linspace(lo_r, hi_r, k),
                        np.full(k, lo_r), np.full(k, hi_r)])
    t = np.concatenate([np.full(k, lo_t), np.full(k, hi_t),
                        np.linspace(lo_t, hi_t, k), np.linspace(lo_t, hi_t, k)])
    return r, t


def _diam_max_metric(r: np.ndarray, t: np.ndarray) -> float:
    """Diameter in the metric max(|d rho|, circular theta distance)."""
    rho_ext = float(r.max() - r.min())
    ts = np.sort(wrap01(t))
    gaps = np.diff(ts, append=ts[0] + 1.0)
    theta_ext = min(1.0 - float(gaps.max()), 0.5)
    return max(rho_ext, theta_ext)


def _fold_stats(cols: TripleCollections, chain: DiffeoChain, row_as, center_layers,
                cfg: ThreeMeasuresConfig, mode: str,
                n_kernels: int = 40) -> FoldStats:
    rng = np.random.default_rng(cfg.seed + cols.n)
    per_cell = cols.l // cols.q
    idx = sorted(set(int(v) % cols.l for v in rng.integers(0, min(cols.l, 2**62), n_kernels))
                 | set(range(min(per_cell, 8))))
    lo_r, hi_r = map(float, cols.kernel_rho())
    span = hi_r - lo_r
    a = row_as[0] if row_as else 0.0
    # pieces serviced by the final twist layer end the stage as small slabs;
    # earlier layers' output can be re-stretched by later ones
    cores_final = [(c - a * cfg.r_core * 0.8, c + a * cfg.r_core * 0.8)
                   for c in center_layers[-1]] if mode == "twist" else []
    cores = [(c - a * cfg.r_core * 0.8, c + a * cfg.r_core * 0.8)
             for centers in center_layers for c in centers] if mode == "twist" else []
    serviced, alln, sect = [], [0.0], [0.0]
    for i in idx:
        r, t = _kernel_boundary(cols, i)
        fr, ft = chain.apply(r, t)
        alln.append(_diam_max_metric(fr, ft))
        for (c_lo, c_hi) in cores_final:
            mask = (r > c_lo) & (r < c_hi)
            if mask.sum() > 8:
                serviced.append(_diam_max_metric(fr[mask], ft[mask]))
        rho0 = rng.uniform(lo_r + 0.02 * span, hi_r - 0.02 * span)
        lo_t, hi_t = map(float, cols.kernel_theta(i))
        sr, st = chain.apply(np.full(64, rho0), np.linspace(lo_t, hi_t, 64))
        sect.append(_diam_max_metric(sr, st))
    if cores:
        grid = np.linspace(lo_r, hi_r, 4000)
        cov = np.zeros(len(grid), dtype=bool)
        for (c_lo, c_hi) in cores:
            cov |= (grid > c_lo) & (grid < c_hi)
        coverage = float(np.mean(cov))
    else:
        coverage = 0.0
    return FoldStats(
        mode=mode,
        serviced_fraction=coverage,
        serviced_diam_max=float(np.max(serviced)) if serviced else 0.0,
        all_diam_max=float(np.max(alln)),
        section_diam_p95=float(np.quantile(sect, 0.95)),
        per_row_a=list(map(float, row_as)),
    )


def bundled_observables(count: int = 20) -> list[Observable]:
    """Deterministic family of smooth test observables."""
    makers = [
        lambda j: Observable(lambda r, t, j=j: np.cos(2 * np.pi * j * t) * r, f"cos{j}t.r"),
        lambda j: Observable(lambda r, t, j=j: np.sin(2 * np.pi * j * t) * (1 - r) ** 2, f"sin{j}t.r2"),
        lambda j: Observable(lambda r, t, j=j: r ** j, f"rho{j}"),
        lambda j: Observable(lambda r, t, j=j: np.cos(2 * np.pi * (j * t + r)), f"cos{j}t+r"),
        lambda j: Observable(lambda r, t, j=j: np.sin(2 * np.pi * r) * np.cos(2 * np.pi * j * t), f"mix{j}"),
    ]
    return [makers[(k - 1) // 4 % 5]((k - 1) % 4 + 1) for k in range(1, count + 1)]


# ---------------------------------------------------------------------------
# exact counting helpers


def _union_count(cols: TripleCollections, alpha_next: Fraction,
                 theta0: Fraction) -> int:
    """Exact #{m < q_{n+1}} with frac(theta0 + m alpha) inside the union of
    the l kernel theta-windows, via the l-fold folded rotation."""
    q1 = alpha_next.denominator
    l = cols.l
    lo_u = cols.gap * l
    hi_u = lo_u + cols.beta
    alpha_l = (alpha_next * l) % 1
    theta_l = (theta0 * l) % 1
    if alpha_l == 0:
        return q1 * (1 if lo_u <= theta_l <= hi_u else 0)
    ql = alpha_l.denominator
    return (q1 // ql) * orbit_interval_count(alpha_l.numerator, ql, theta_l, lo_u, hi_u)


def _union_measure_exact_sample(cols: TripleCollections, samples: int) -> float:
    """Halton estimate of mu(union of kernels) with exact membership (Halton
    points have small dyadic/triadic denominators, so the fold test is exact)."""
    pts = halton(samples)
    lo_r, hi_r = map(float, cols.kernel_rho())
    l, g, beta = cols.l, cols.gap * cols.l, cols.beta
    hits = 0
    g_f, b_f = float(g), float(beta)
    for rho, theta in pts:
        if not (lo_r <= rho <= hi_r):
            continue
        fr = (Fraction(theta) * l) % 1
        if g_f - 1e-15 <= float(fr) <= g_f + b_f + 1e-15:
            if g <= fr <= g + beta:
                hits += 1
    return hits / samples


# ---------------------------------------------------------------------------
# verification


def _sample_heights(cols: TripleCollections, cfg: ThreeMeasuresConfig, count: int):
    """Stage-independent sampled (rho0, theta0): mostly plateau, a few in each
    boundary band; handoff circles excluded."""
    rng = np.random.default_rng(cfg.seed)
    rs = float(cols.rho_star)
    top = float(cols.rho_star - cols.sliver)
    n_delta = max(2, count // 10)
    out = []
    for _ in range(count - 2 * n_delta):
        out.append((Fraction(float(rng.uniform(0.02 + rs, 0.98 - rs))),
                    Fraction(float(rng.uniform(0, 1)))))
    for _ in range(n_delta):
        out.append((Fraction(float(rng.uniform(0.05 * top, 0.9 * top))),
                    Fraction(float(rng.uniform(0, 1)))))
        out.append((Fraction(float(rng.uniform(1 - 0.9 * top, 1 - 0.05 * top))),
                    Fraction(float(rng.uniform(0, 1)))))
    return out


def _identity_band_residual(chain: DiffeoChain, b: SingularNeighborhoods,
                            seed: int) -> float:
    rng = np.random.default_rng(seed)
    m = 4000
    r = np.concatenate([rng.uniform(0, b.b_l * 0.999, m),
                        rng.uniform(1 - b.b_r * 0.999, 1, m)])
    t = rng.uniform(0, 1, 2 * m)
    fr, ft = chain.apply(r, t)
    return float(np.max(np.maximum(np.abs(fr - r), circle_dist(ft, t))))


def verify_stage(cols: TripleCollections, H_n: DiffeoChain,
                 h_n: FundamentalDomainMap, alpha_step: AlphaStep,
                 b_new: SingularNeighborhoods, stats: FoldStats,
                 na_cache: dict, cfg: ThreeMeasuresConfig) -> StageReport:
    n, q, l = cols.n, cols.q, cols.l
    eta = cols.eta
    alpha_next = alpha_step.alpha_next
    q_next = alpha_step.q_next
    rep = StageReport(n=n, q_n=q)
    rep.data.update({"l_n": l, "eta_n": eta, "q_next": str(q_next),
                     "alpha_next": alpha_next, "fold": stats,
                     "rho_star": cols.rho_star})

    rep.add(BoundCheck.exact_le("eq24_step", alpha_step.step, alpha_step.bound,
                                note="|a_{n+1}-a_n| <= 1/(2^n q_n norm^n), exact"))
    rep.add(BoundCheck.exact_le("q_floor_nl", n * l, q_next))
    rep.add(BoundCheck("q_next_multiple_of_q", q_next % q, 0,
                       q_next % q == 0, kind="exact"))

    mu_union = cols.measure_union_kernels()
    rep.add(BoundCheck.exact_le("mu_union_ge_1_minus_eta", 1 - eta, mu_union))
    rep.add(BoundCheck.exact_le("mu_kernel_le_eta", Fraction(1, l), eta))
    est = _union_measure_exact_sample(cols, max(10**4, cfg.samples))
    rep.add(BoundCheck.sampled_le("mu_union_sampled", abs(est - float(mu_union)),
                                  0.02, note=f"halton {est:.5f} vs exact {float(mu_union):.5f}"))

    rep.add(BoundCheck.sampled_le("identity_on_B_bands",
                                  _identity_band_residual(h_n.chain, b_new, cfg.seed + 3),
                                  1e-12))
    rep.add(BoundCheck.sampled_le("commutation_h_n_S_1_q",
                                  commutation_residual(h_n.chain, q, seed=cfg.seed), 1e-12))
    rep.add(BoundCheck.sampled_le("delta_inside_1_over_n", float(cols.rho_star), 1.0 / n))

    # exact orbit counts (counting lemma)
    rng = np.random.default_rng(cfg.seed + 29)
    heights = _sample_heights(cols, cfg, cfg.n_orbit_points)
    sampled_i = sorted(set(int(v) % l for v in rng.integers(0, min(l, 2**62), 24)) | {0, 1})
    count_ok, unc_ok = True, True
    worst_margin = None
    for rho0, theta0 in heights:
        c_here = 1 if cols.rho_star <= rho0 <= 1 - cols.rho_star else 0
        in_delta = (rho0 <= cols.rho_star - cols.sliver
                    or rho0 >= 1 - (cols.rho_star - cols.sliver))
        one_minus_c = 1 if in_delta else 0
        for i in sampled_i:
            lo_t, hi_t = cols.kernel_theta(i)
            cnt = orbit_interval_count(alpha_next.numerator, q_next, theta0, lo_t, hi_t)
            k_cnt = cnt if c_here else 0
            d_cnt = cnt if in_delta else 0
            lo_b = (1 - eta) * Fraction(q_next) * c_here / l - 1
            hi_b = (1 + eta) * Fraction(q_next) * c_here / l + 1
            if not (lo_b <= k_cnt <= hi_b):
                count_ok = False
            lo_b = (1 - eta) * Fraction(q_next) * one_minus_c / l - 1
            hi_b = (1 + eta) * Fraction(q_next) * one_minus_c / l + 1
            if not (lo_b <= d_cnt <= hi_b):
                count_ok = False
        union = _union_count(cols, alpha_next, theta0)
        covered = union if (c_here or in_delta) else 0
        uncontrolled = q_next - covered
        bound = 2 * eta * q_next + 4 * l
        if Fraction(uncontrolled) > bound:
            unc_ok = False
        m = float(bound - uncontrolled)
        worst_margin = m if worst_margin is None else min(worst_margin, m)
    rep.add(BoundCheck("orbit_counts_in_band", "exact per-set counts",
                       "(1 +- eta) q c / l +- 1", count_ok, kind="exact",
                       note=f"{len(heights)} heights x {len(sampled_i)} indices"))
    rep.add(BoundCheck("uncontrolled_le_2etaq_4l", "q - controlled",
                       "2 eta q + 4 l", unc_ok, kind="exact",
                       note=f"worst margin {worst_margin:.3g}"))

    gaps, tols, suberr, mix = _simplex_block(cols, H_n, alpha_next, na_cache, cfg)
    rep.data["gap_median"] = float(np.median(gaps))
    rep.data["gap_max"] = float(np.max(gaps))
    rep.data["tol_median"] = float(np.median(tols))
    rep.data["quad_sub_err"] = float(np.max(suberr))
    rep.data["mix_residual_median"] = float(np.median(mix))
    rep.data["mix_residual_max"] = float(np.max(mix))
    rep.add(BoundCheck.sampled_le(
        "simplex_gap_le_assembled_tol",
        float(np.max(np.asarray(gaps) - np.asarray(tols))), 0.0,
        note="per (observable, point): gap <= tolerance assembled from exact "
             "counts, sampled kernel-image means/oscillations, unreached mass"))
    return rep


def _simplex_block(cols: TripleCollections, H_n: DiffeoChain,
                   alpha_next: Fraction, na_cache: dict,
                   cfg: ThreeMeasuresConfig):
    """Birkhoff averages at horizon q_{n+1} against the simplex of natural
    measures.

    At the full period the orbit average equals the average of phi o H_n over
    the uniform theta-grid of the base circle: enumerated exactly when
    q_{n+1} is small, replaced by dense quadrature with a recorded
    bounded-variation error term otherwise.  The per-pair tolerance is a
    triangle-inequality certificate: gap <= (section mass) * (kernel-image
    oscillation) + (unreached mass) * (observable range) + count slack +
    |mean over kernel images - area mean| + quadrature error.
    """
    rng = np.random.default_rng(cfg.seed + 97)
    obs = bundled_observables(cfg.n_observables)
    q_next = alpha_next.denominator
    rs = float(cols.rho_star)
    l = cols.l

    per_cell = cols.l // cols.q
    idx = sorted(set(range(min(per_cell, 40))) |
                 set(int(v) % l for v in rng.integers(0, min(l, 2**62), 40)))
    imgs = []
    for i in idx:
        lo_t, hi_t = map(float, cols.kernel_theta(i))
        lo_r, hi_r = map(float, cols.kernel_rho())
        rr = rng.uniform(lo_r, hi_r, 160)
        tt = rng.uniform(lo_t, hi_t, 160)
        imgs.append(H_n.apply(rr, tt))

    # stage-independent heights inside every stage's plateau, so gap and
    # mixing-residual trends compare like with like across stages
    hrng = np.random.default_rng(cfg.seed + 131)
    heights = [(float(hrng.uniform(0.05, 0.95)),
                float(hrng.uniform(0, 1))) for _ in range(cfg.n_orbit_points)]
    circles = []
    for rho0, theta0 in heights:
        if q_next <= cfg.orbit_samples_cap:
            th = wrap01(theta0 + np.arange(int(q_next)) / float(q_next))
            exact = True
        else:
            m = cfg.quad_points
            th = wrap01(theta0 + (np.arange(m) + 0.5) / m)
            exact = False
        cr, ct = H_n.apply(np.full(len(th), rho0), th)
        circles.append((cr, ct, exact))

    gaps, tols, suberrs = [], [], []
    u_table = np.zeros((len(obs), len(circles)))
    anchors = []
    w_xi = float(cols.beta)
    w_rest = 1.0 - w_xi
    count_slack_w = 2.0 * l / float(q_next)
    for ob in obs:
        if ob.label not in na_cache:
            na_cache[ob.label] = natural_averages(ob, cfg.quad_res)
        na = na_cache[ob.label]
        means = np.array([float(np.mean(ob(fr, ft))) for fr, ft in imgs])
        oscs = np.array([float(np.max(ob(fr, ft)) - np.min(ob(fr, ft)))
                         for fr, ft in imgs])
        a_xi = float(np.mean(means))
        osc_xi = float(np.max(oscs))
        gg = halton(4096)
        vals = ob(gg[:, 0], gg[:, 1])
        v_rng = float(np.max(vals) - np.min(vals))
        base_tol = (w_xi * osc_xi + w_rest * v_rng
                    + count_slack_w * (float(np.ptp(means)) + v_rng)
                    + abs(a_xi - na.mean_area) + 1e-9)
        anchors.append((na.mean_area, na.mean_left, na.mean_right, v_rng))
        for ci, (cr, ct, exact) in enumerate(circles):
            fvals = ob(cr, ct)
            u = float(np.mean(fvals))
            u_table[len(anchors) - 1, ci] = u
            if exact:
                sub = 0.0
            else:
                variation = (float(np.sum(np.abs(np.diff(fvals))))
                             + abs(float(fvals[-1] - fvals[0])))
                sub = variation / float(q_next) + variation / len(fvals)
            gap, _, _ = simplex_gap(u, na)
            gaps.append(gap)
            tols.append(base_tol + sub)
            suberrs.append(sub)
    mix = _shared_mix_residuals(u_table, anchors)
    return gaps, tols, suberrs, mix


def _shared_mix_residuals(u_table: np.ndarray, anchors: list) -> np.ndarray:
    """Per point: best single convex weight c (shared across all observables)
    against c * area-mean + (1-c) * side-mean; returns RMS residuals, with each
    observable normalized by its range.  This is the honest mixing diagnostic:
    it decreases as the conjugacies equidistribute circles."""
    A = np.array([a[0] for a in anchors])
    S_l = np.array([a[1] for a in anchors])
    S_r = np.array([a[2] for a in anchors])
    W = np.array([max(a[3], 1e-9) for a in anchors])
    out = np.zeros(u_table.shape[1])
    for ci in range(u_table.shape[1]):
        u = u_table[:, ci]
        best = None
        for S in (S_l, S_r):
            num = float(np.sum((u - S) * (A - S) / W**2))
            den = float(np.sum(((A - S) / W) ** 2))
            c = min(1.0, max(0.0, num / den)) if den > 0 else 1.0
            res = float(np.sqrt(np.mean(((u - (c * A + (1 - c) * S)) / W) ** 2)))
            best = res if best is None else min(best, res)
        out[ci] = best
    return out


# ---------------------------------------------------------------------------
# runner


@dataclass
class ThreeMeasuresRun:
    cfg: ThreeMeasuresConfig
    reports: list
    telescoping: list
    H: DiffeoChain
    alpha: Fraction
    f_N: ConjugatedRotation
    stage_maps: list = field(default_factory=list)
    collections: list = field(default_factory=list)
    stage_chains: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports) and all(c.ok for c in self.telescoping)

    def gap_sequence(self) -> list[float]:
        return [r.data["gap_median"] for r in self.reports]


def run(cfg: ThreeMeasuresConfig | None = None) -> ThreeMeasuresRun:
    cfg = cfg or ThreeMeasuresConfig()
    if cfg.stages > 4:
        raise ValueError("stages capped at 4")
    alpha = Fraction(cfg.p1, cfg.q1)
    H = identity_chain()
    b = SingularNeighborhoods(0.2, 0.2)
    na_cache: dict = {}
    reports, stage_data, collections, maps = [], [], [], []
    for n in range(1, cfg.stages + 1):
        q_n = alpha.denominator
        cols = build_collections(n, q_n, cfg.eta(n), b, cfg)
        h_n, b, stats = build_h_n(cols, b, cfg)
        H = compose(H, h_n.chain)  # H_n = h_1 o ... o h_n, h_n applied first
        norm = ck_norm_estimate(H, min(n, 4), cfg.norm_grid, seed=cfg.seed)
        step = next_alpha(alpha, max(norm, 2.0), n, q_floor=n * cols.l)
        rep = verify_stage(cols, H, h_n, step, b, stats, na_cache, cfg)
        rep.data["norm_est"] = norm
        reports.append(rep)
        stage_data.append((DiffeoChain(list(H.layers)), step.alpha_next, step.q_next))
        collections.append(cols)
        maps.append(h_n)
        alpha = step.alpha_next

    telescoping = []
    for i in range(len(stage_data) - 1):
        Hn, a_n1, qn1 = stage_data[i]
        Hn1, a_n2, _ = stage_data[i + 1]
        n = i + 1
        f_n = ConjugatedRotation(Hn, a_n1)
        f_n1 = ConjugatedRotation(Hn1, a_n2)
        worst = 0.0
        for m in (1, qn1 // 2, qn1):
            d = sup_distance(f_n.as_chain(m), f_n1.as_chain(m), samples=1500,
                             seed=cfg.seed + m % 9973)
            worst = max(worst, d)
        telescoping.append(BoundCheck.sampled_le(
            f"telescoping_f{n}_f{n + 1}", worst, 0.5 ** n,
            note="sup C1-proxy distance at m in {1, q/2, q}"))

    f_N = ConjugatedRotation(stage_data[-1][0], stage_data[-1][1])
    return ThreeMeasuresRun(cfg=cfg, reports=reports, telescoping=telescoping,
                            H=stage_data[-1][0], alpha=stage_data[-1][1], f_N=f_N,
                            stage_maps=maps, collections=collections,
                            stage_chains=[s[0] for s in stage_data])
