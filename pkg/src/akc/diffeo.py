"""Area-preserving map chains on the annulus [0,1] x S^1.

Three primitive layer types, each with closed-form forward, inverse and
Jacobian, and unit Jacobian determinant as an algebraic identity:

* ``Rotation`` -- theta += t;
* ``ThetaShear`` -- theta += u(rho) with u a sum of smooth bumps;
* ``TwistLattice`` / ``LaneTwistLayer`` -- local elliptic twists (rigid
  rotation in rescaled coordinates, smoothly damped), replicated along a
  1/q theta-lattice so the layer commutes with S_{1/q} by construction.

Chains compose layers first-to-last.  All evaluation is vectorized.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .profiles import BumpProfile, fall_profile, fall_profile_d

TAU_TOL = 1e-12


class SeamError(ValueError):
    """Jacobian requested at a non-smooth seam of a piecewise layer."""


def wrap01(x):
    """Reduce to [0, 1); keeps arrays as arrays."""
    return np.mod(np.asarray(x, dtype=float), 1.0)


def circle_dist(a, b):
    d = np.abs(wrap01(a) - wrap01(b))
    return np.minimum(d, 1.0 - d)


def annulus_dist(p, q):
    """max(|d rho|, circle distance in theta) -- the metric used throughout."""
    return np.maximum(np.abs(p[0] - q[0]), circle_dist(p[1], q[1]))


@dataclass(frozen=True)
class AnnulusPoint:
    rho: float
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho {self.rho} outside [0,1]")
        object.__setattr__(self, "theta", float(self.theta) % 1.0)

    def as_arrays(self):
        return np.array([self.rho]), np.array([self.theta])


# ---------------------------------------------------------------------------
# layers


class Rotation:
    def __init__(self, t: float):
        self.t = float(t)

    def forward(self, rho, theta):
        return rho, wrap01(theta + self.t)

    def inverse(self, rho, theta):
        return rho, wrap01(theta - self.t)

    def jacobian(self, rho, theta):
        one = np.ones_like(rho)
        zero = np.zeros_like(rho)
        return one, zero, zero, one

    def min_feature(self) -> float:
        return 1.0

    def seams(self):
        return []

    def to_dict(self):
        return {"type": "rotation", "t": float(self.t).hex()}


class ThetaShear:
    """theta += u(rho), u a sum of BumpProfiles. Commutes with every rotation."""

    def __init__(self, bumps: list[BumpProfile]):
        self.bumps = list(bumps)

    def _u(self, rho):
        out = np.zeros_like(np.asarray(rho, dtype=float))
        for b in self.bumps:
            out = out + b(rho)
        return out

    def _du(self, rho):
        out = np.zeros_like(np.asarray(rho, dtype=float))
        for b in self.bumps:
            out = out + b.deriv(rho)
        return out

    def forward(self, rho, theta):
        return rho, wrap01(theta + self._u(rho))

    def inverse(self, rho, theta):
        return rho, wrap01(theta - self._u(rho))

    def jacobian(self, rho, theta):
        one = np.ones_like(rho)
        zero = np.zeros_like(rho)
        return one, zero, self._du(rho), one

    def min_feature(self) -> float:
        return min((b.min_feature() for b in self.bumps), default=1.0)

    def seams(self):
        return []

    def to_dict(self):
        return {"type": "theta_shear", "bumps": [b.to_dict() for b in self.bumps]}


def _twist_xy(x, y, angle, r_core, invert=False):
    """Rotate (x, y) by angle * fall(r) inside the unit disc; returns images."""
    r = np.hypot(x, y)
    psi = angle * fall_profile(r, r_core)
    if invert:
        psi = -psi
    c, s = np.cos(psi), np.sin(psi)
    return c * x - s * y, s * x + c * y


def _twist_jac_xy(x, y, angle, r_core):
    """Jacobian of the damped rotation in normalized coordinates (det == 1)."""
    r = np.hypot(x, y)
    psi = angle * fall_profile(r, r_core)
    dpsi = angle * fall_profile_d(r, r_core)
    c, s = np.cos(psi), np.sin(psi)
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(r > 0, dpsi / np.maximum(r, 1e-300), 0.0)
    # R'(psi) z = (-s x - c y, c x - s y)
    ux = -s * x - c * y
    uy = c * x - s * y
    j11 = c + k * ux * x
    j12 = -s + k * ux * y
    j21 = s + k * uy * x
    j22 = c + k * uy * y
    return j11, j12, j21, j22


class TwistLattice:
    """One elliptic twist per 1/lattice cell: rigid rotation by ``angle`` on the
    core of the ellipse (semi-axes a, b around (rho_c, theta_c)), damped to the
    identity at the ellipse boundary.  Exactly area-preserving."""

    def __init__(self, lattice: int, rho_c: float, theta_c: float,
                 a: float, b: float, r_core: float, angle: float):
        if not 0 < r_core < 1:
            raise ValueError("r_core must be in (0,1)")
        if lattice < 1:
            raise ValueError("lattice must be >= 1")
        if not (0 < rho_c - a and rho_c + a < 1):
            raise ValueError("twist ellipse must stay inside the open annulus")
        if b > 0.5 / lattice + TAU_TOL:
            raise ValueError("twist ellipse wider than its lattice cell")
        self.lattice = int(lattice)
        self.rho_c = float(rho_c)
        self.theta_c = float(theta_c)
        self.a = float(a)
        self.b = float(b)
        self.r_core = float(r_core)
        self.angle = float(angle)

    def _local(self, rho, theta):
        pitch = 1.0 / self.lattice
        d = theta - self.theta_c
        d -= np.round(d * self.lattice) * pitch
        return (rho - self.rho_c) / self.a, d / self.b, d

    def _map(self, rho, theta, invert):
        x, y, d = self._local(rho, theta)
        inside = x * x + y * y < 1.0
        if not np.any(inside):
            return rho, wrap01(theta)
        xi, yi = x[inside], y[inside]
        xo, yo = _twist_xy(xi, yi, self.angle, self.r_core, invert=invert)
        rho2 = np.array(rho, dtype=float, copy=True)
        th2 = np.array(theta, dtype=float, copy=True)
        rho2[inside] = self.rho_c + self.a * xo
        th2[inside] = theta[inside] + self.b * (yo - yi)
        return rho2, wrap01(th2)

    def forward(self, rho, theta):
        return self._map(np.asarray(rho, float), np.asarray(theta, float), False)

    def inverse(self, rho, theta):
        return self._map(np.asarray(rho, float), np.asarray(theta, float), True)

    def jacobian(self, rho, theta):
        rho = np.asarray(rho, float)
        theta = np.asarray(theta, float)
        x, y, _ = self._local(rho, theta)
        one = np.ones_like(rho)
        zero = np.zeros_like(rho)
        inside = x * x + y * y < 1.0
        j11, j12, j21, j22 = one.copy(), zero.copy(), zero.copy(), one.copy()
        if np.any(inside):
            a11, a12, a21, a22 = _twist_jac_xy(x[inside], y[inside], self.angle, self.r_core)
            ab = self.a / self.b
            j11[inside] = a11
            j12[inside] = a12 * ab
            j21[inside] = a21 / ab
            j22[inside] = a22
        return j11, j12, j21, j22

    def min_feature(self) -> float:
        shell = 1.0 - self.r_core
        return min(self.a * shell, self.b * shell)

    def seams(self):
        return []

    def to_dict(self):
        return {"type": "twist", "lattice": self.lattice,
                "rho_c": self.rho_c.hex(), "theta_c": self.theta_c.hex(),
                "a": self.a.hex(), "b": self.b.hex(),
                "r_core": self.r_core.hex(), "angle": self.angle.hex()}


class LaneTwistLayer:
    """A family of disjoint elliptic twists, one per theta "lane", replicated on
    a 1/lattice grid.  Per-lane center/axes/angle come from arrays; lane index
    is resolved arithmetically, so evaluation cost is O(1) per point."""

    def __init__(self, lattice: int, theta0: float, pitch: float,
                 rho_c, theta_off, a, b, angle, r_core: float):
        self.lattice = int(lattice)
        self.theta0 = float(theta0)
        self.pitch = float(pitch)
        self.rho_c = np.asarray(rho_c, dtype=float)
        self.theta_off = np.asarray(theta_off, dtype=float)  # lane-relative center
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.angle = np.asarray(angle, dtype=float)
        self.r_core = float(r_core)
        n = len(self.rho_c)
        if not (len(self.a) == len(self.b) == len(self.angle) == len(self.theta_off) == n):
            raise ValueError("per-lane arrays must share a length")
        self.n_lanes = n
        if np.any(self.b > self.pitch * 0.5 + TAU_TOL):
            raise ValueError("lane twist wider than its lane")
        if np.any((self.rho_c - self.a <= 0) | (self.rho_c + self.a >= 1)):
            raise ValueError("lane twist must stay inside the open annulus")

    def _locate(self, rho, theta):
        cell = 1.0 / self.lattice
        d = np.mod(theta - self.theta0, cell)
        k = np.floor(d / self.pitch).astype(int)
        valid = (k >= 0) & (k < self.n_lanes)
        k = np.clip(k, 0, self.n_lanes - 1)
        dy = d - (k + 0.5) * self.pitch - self.theta_off[k]
        x = (rho - self.rho_c[k]) / self.a[k]
        y = dy / self.b[k]
        active = valid & (self.angle[k] != 0.0) & (x * x + y * y < 1.0)
        return k, x, y, active

    def _map(self, rho, theta, invert):
        rho = np.asarray(rho, float)
        theta = np.asarray(theta, float)
        k, x, y, act = self._locate(rho, theta)
        if not np.any(act):
            return rho, wrap01(theta)
        ka = k[act]
        ang = self.angle[ka]
        xi, yi = x[act], y[act]
        r = np.hypot(xi, yi)
        psi = ang * fall_profile(r, self.r_core)
        if invert:
            psi = -psi
        c, s = np.cos(psi), np.sin(psi)
        xo, yo = c * xi - s * yi, s * xi + c * yi
        rho2 = rho.copy()
        th2 = np.array(theta, dtype=float, copy=True)
        rho2[act] = self.rho_c[ka] + self.a[ka] * xo
        th2[act] = theta[act] + self.b[ka] * (yo - yi)
        return rho2, wrap01(th2)

    def forward(self, rho, theta):
        return self._map(rho, theta, False)

    def inverse(self, rho, theta):
        return self._map(rho, theta, True)

    def jacobian(self, rho, theta):
        rho = np.asarray(rho, float)
        theta = np.asarray(theta, float)
        k, x, y, act = self._locate(rho, theta)
        one = np.ones_like(rho)
        zero = np.zeros_like(rho)
        j11, j12, j21, j22 = one.copy(), zero.copy(), zero.copy(), one.copy()
        if np.any(act):
            ka = k[act]
            a11, a12, a21, a22 = _twist_jac_xy(x[act], y[act], self.angle[ka], self.r_core)
            ab = self.a[ka] / self.b[ka]
            j11[act] = a11
            j12[act] = a12 * ab
            j21[act] = a21 / ab
            j22[act] = a22
        return j11, j12, j21, j22

    def min_feature(self) -> float:
        shell = 1.0 - self.r_core
        live = self.angle != 0
        if not np.any(live):
            return 1.0
        return float(min(np.min(self.a[live]) * shell, np.min(self.b[live]) * shell))

    def seams(self):
        return []

    def to_dict(self):
        return {"type": "lane_twist", "lattice": self.lattice,
                "theta0": self.theta0.hex(), "pitch": self.pitch.hex(),
                "r_core": self.r_core.hex(),
                "rho_c": [v.hex() for v in self.rho_c],
                "theta_off": [v.hex() for v in self.theta_off],
                "a": [v.hex() for v in self.a],
                "b": [v.hex() for v in self.b],
                "angle": [v.hex() for v in self.angle]}


class PiecewiseShear:
    """Piecewise-linear theta shear; exists to exercise the seam error path."""

    def __init__(self, knots, values):
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float)

    def _u(self, rho):
        return np.interp(rho, self.knots, self.values)

    def forward(self, rho, theta):
        return rho, wrap01(theta + self._u(rho))

    def inverse(self, rho, theta):
        return rho, wrap01(theta - self._u(rho))

    def jacobian(self, rho, theta):
        rho = np.asarray(rho, float)
        near = np.min(np.abs(rho[:, None] - self.knots[None, :]), axis=1)
        if np.any(near < 1e-12):
            bad = int(np.argmin(near))
            raise SeamError(
                f"jacobian at piecewise shear knot (rho={rho[bad]!r}); "
                "layer PiecewiseShear is not differentiable there"
            )
        du = np.zeros_like(rho)
        for i in range(len(self.knots) - 1):
            sel = (rho > self.knots[i]) & (rho < self.knots[i + 1])
            du[sel] = (self.values[i + 1] - self.values[i]) / (self.knots[i + 1] - self.knots[i])
        one = np.ones_like(rho)
        zero = np.zeros_like(rho)
        return one, zero, du, one

    def min_feature(self) -> float:
        return float(np.min(np.diff(self.knots)))

    def seams(self):
        return list(self.knots)

    def to_dict(self):
        return {"type": "piecewise_shear",
                "knots": [v.hex() for v in self.knots],
                "values": [v.hex() for v in self.values]}


class InvertedLayer:
    """View of a layer with forward and inverse swapped."""

    def __init__(self, layer):
        self.layer = layer

    def forward(self, rho, theta):
        return self.layer.inverse(rho, theta)

    def inverse(self, rho, theta):
        return self.layer.forward(rho, theta)

    def jacobian(self, rho, theta):
        r2, t2 = self.layer.inverse(rho, theta)
        j11, j12, j21, j22 = self.layer.jacobian(r2, t2)
        # det == 1, so the inverse matrix is the adjugate
        return j22, -j12, -j21, j11

    def min_feature(self):
        return self.layer.min_feature()

    def seams(self):
        return self.layer.seams()

    def to_dict(self):
        return {"type": "inverted", "layer": self.layer.to_dict()}


_LAYER_TYPES = {}


def _from_dict(d: dict):
    t = d["type"]
    if t == "rotation":
        return Rotation(float.fromhex(d["t"]))
    if t == "theta_shear":
        return ThetaShear([BumpProfile.from_dict(b) for b in d["bumps"]])
    if t == "twist":
        return TwistLattice(d["lattice"], *(float.fromhex(d[k]) for k in
                            ("rho_c", "theta_c", "a", "b", "r_core", "angle")))
    if t == "lane_twist":
        return LaneTwistLayer(
            d["lattice"], float.fromhex(d["theta0"]), float.fromhex(d["pitch"]),
            [float.fromhex(v) for v in d["rho_c"]],
            [float.fromhex(v) for v in d["theta_off"]],
            [float.fromhex(v) for v in d["a"]],
            [float.fromhex(v) for v in d["b"]],
            [float.fromhex(v) for v in d["angle"]],
            float.fromhex(d["r_core"]))
    if t == "piecewise_shear":
        return PiecewiseShear([float.fromhex(v) for v in d["knots"]],
                              [float.fromhex(v) for v in d["values"]])
    if t == "inverted":
        return InvertedLayer(_from_dict(d["layer"]))
    raise ValueError(f"unknown layer type {t!r}")


# ---------------------------------------------------------------------------
# chains


@dataclass
class DiffeoChain:
    """Composition of layers, applied first-to-last."""

    layers: list = field(default_factory=list)

    def apply(self, rho, theta):
        rho = np.asarray(rho, dtype=float)
        theta = wrap01(theta)
        for lay in self.layers:
            rho, theta = lay.forward(rho, theta)
        return rho, theta

    def apply_inverse(self, rho, theta):
        rho = np.asarray(rho, dtype=float)
        theta = wrap01(theta)
        for lay in reversed(self.layers):
            rho, theta = lay.inverse(rho, theta)
        return rho, theta

    def apply_point(self, p: AnnulusPoint) -> AnnulusPoint:
        r, t = self.apply(*p.as_arrays())
        return AnnulusPoint(float(r[0]), float(t[0]))

    def jacobian(self, rho, theta):
        """Chain-rule product of layer Jacobians along the forward orbit."""
        rho = np.asarray(rho, dtype=float)
        theta = wrap01(theta)
        j11 = np.ones_like(rho)
        j12 = np.zeros_like(rho)
        j21 = np.zeros_like(rho)
        j22 = np.ones_like(rho)
        for lay in self.layers:
            a11, a12, a21, a22 = lay.jacobian(rho, theta)
            j11, j12, j21, j22 = (a11 * j11 + a12 * j21, a11 * j12 + a12 * j22,
                                  a21 * j11 + a22 * j21, a21 * j12 + a22 * j22)
            rho, theta = lay.forward(rho, theta)
        return j11, j12, j21, j22

    def jacobian_point(self, p: AnnulusPoint) -> np.ndarray:
        parts = self.jacobian(*p.as_arrays())
        return np.array([[parts[0][0], parts[1][0]], [parts[2][0], parts[3][0]]])

    def inverse_chain(self) -> "DiffeoChain":
        return DiffeoChain([InvertedLayer(l) for l in reversed(self.layers)])

    def min_feature(self) -> float:
        return min((l.min_feature() for l in self.layers), default=1.0)

    def seams(self):
        out = []
        for l in self.layers:
            out.extend(l.seams())
        return out

    def to_doc(self) -> str:
        return json.dumps({"format": "akc-chain", "version": 1,
                           "layers": [l.to_dict() for l in self.layers]},
                          sort_keys=True)

    @staticmethod
    def from_doc(doc: str) -> "DiffeoChain":
        d = json.loads(doc)
        if d.get("format") != "akc-chain" or d.get("version") != 1:
            raise ValueError("unsupported chain document")
        return DiffeoChain([_from_dict(ld) for ld in d["layers"]])


def identity_chain() -> DiffeoChain:
    return DiffeoChain([])


def compose(outer: DiffeoChain, inner: DiffeoChain) -> DiffeoChain:
    """compose(a, b) applies b first: apply(compose(a,b), p) == apply(a, apply(b, p))."""
    return DiffeoChain(list(inner.layers) + list(outer.layers))


@dataclass
class ConjugatedRotation:
    """f = H o S_alpha o H^{-1}; powers cost one chain evaluation for any m."""

    conjugacy: DiffeoChain
    alpha: Fraction

    @property
    def period(self) -> int:
        return self.alpha.denominator

    def apply_power(self, rho, theta, m: int):
        r, t = self.conjugacy.apply_inverse(rho, theta)
        shift = Fraction(m) * self.alpha
        t = wrap01(t + float(shift - (shift.numerator // shift.denominator)))
        return self.conjugacy.apply(r, t)

    def as_chain(self, m: int = 1) -> DiffeoChain:
        shift = Fraction(m) * self.alpha
        rot = Rotation(float(shift - (shift.numerator // shift.denominator)))
        inv = self.conjugacy.inverse_chain()
        return DiffeoChain(list(inv.layers) + [rot] + list(self.conjugacy.layers))


@dataclass
class FundamentalDomainMap:
    """A chain that commutes with S_{1/q}; q recorded for downstream checks."""

    q: int
    chain: DiffeoChain

    def apply(self, rho, theta):
        return self.chain.apply(rho, theta)

    def apply_inverse(self, rho, theta):
        return self.chain.apply_inverse(rho, theta)


class CollarViolation(ValueError):
    pass


def equivariant_extend(core: DiffeoChain, q: int, collar: float = 1e-3,
                       samples: int = 2000, tol: float = 1e-9) -> FundamentalDomainMap:
    """Extend a fundamental-domain chain to the annulus by the 1/q lattice.

    Shears and rotations are already equivariant; single-cell twists are
    re-latticed.  The core must be the identity on a collar of the domain
    boundary (sampled check)."""
    new_layers = []
    for lay in core.layers:
        if isinstance(lay, (Rotation, ThetaShear)):
            new_layers.append(lay)
        elif isinstance(lay, TwistLattice):
            if lay.lattice % q == 0:
                new_layers.append(lay)
            elif lay.lattice == 1:
                if not (0 <= lay.theta_c < 1.0 / q and lay.b < 0.5 / q):
                    raise ValueError("single-cell twist does not fit the fundamental domain")
                new_layers.append(TwistLattice(q, lay.rho_c, lay.theta_c,
                                               lay.a, lay.b, lay.r_core, lay.angle))
            else:
                raise ValueError(f"twist lattice {lay.lattice} incompatible with q={q}")
        elif isinstance(lay, LaneTwistLayer):
            if lay.lattice % q != 0:
                raise ValueError("lane layer lattice incompatible with q")
            new_layers.append(lay)
        else:
            raise ValueError(f"cannot extend layer {type(lay).__name__}")
    rng = np.random.default_rng(7)
    # collar of the domain boundary: near rho in {0,1} and theta in {0, 1/q}
    m = samples // 4
    pts = []
    pts.append((rng.uniform(0, collar, m), rng.uniform(0, 1 / q, m)))
    pts.append((rng.uniform(1 - collar, 1, m), rng.uniform(0, 1 / q, m)))
    pts.append((rng.uniform(0, 1, m), rng.uniform(0, collar / q, m)))
    pts.append((rng.uniform(0, 1, m), rng.uniform((1 - collar) / q, 1 / q, m)))
    rr = np.concatenate([p[0] for p in pts])
    tt = np.concatenate([p[1] for p in pts])
    r2, t2 = core.apply(rr, tt)
    viol = float(np.max(np.maximum(np.abs(r2 - rr), circle_dist(t2, tt))))
    if viol > tol:
        raise CollarViolation(
            f"core moves collar points by up to {viol:.3e} (tolerance {tol:.1e})"
        )
    return FundamentalDomainMap(q, DiffeoChain(new_layers))


def commutation_residual(chain: DiffeoChain, q: int, samples: int = 10000,
                         seed: int = 11) -> float:
    """Sampled sup of d(f(S_{1/q} p), S_{1/q} f(p))."""
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.001, 0.999, samples)
    theta = rng.uniform(0, 1, samples)
    s = 1.0 / q
    r1, t1 = chain.apply(rho, wrap01(theta + s))
    r2, t2 = chain.apply(rho, theta)
    t2 = wrap01(t2 + s)
    return float(np.max(np.maximum(np.abs(r1 - r2), circle_dist(t1, t2))))


# ---------------------------------------------------------------------------
# C^k norm estimation and C^1 distances

_FD_WEIGHTS = {
    0: np.array([0.0, 0.0, 1.0, 0.0, 0.0]),
    1: np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0,
    2: np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0,
    3: np.array([-1.0, 2.0, 0.0, -2.0, 1.0]) / 2.0,
    4: np.array([1.0, -4.0, 6.0, -4.0, 1.0]),
}


def _norm_sample_points(chain: DiffeoChain, grid: int, rng) -> tuple[np.ndarray, np.ndarray]:
    g = np.linspace(0.02, 0.98, grid)
    t = np.linspace(0.0, 1.0, grid, endpoint=False)
    R, T = np.meshgrid(g, t, indexing="ij")
    rho = R.ravel()
    theta = T.ravel()
    extra_r, extra_t = [rho], [theta]
    # refine around twist shells where derivatives peak
    for lay in chain.layers:
        if isinstance(lay, TwistLattice):
            n = 400
            ang = rng.uniform(0, 2 * np.pi, n)
            rr = rng.uniform(lay.r_core * 0.9, 1.0, n)
            extra_r.append(np.clip(lay.rho_c + lay.a * rr * np.cos(ang), 1e-4, 1 - 1e-4))
            extra_t.append(wrap01(lay.theta_c + lay.b * rr * np.sin(ang)))
        if isinstance(lay, LaneTwistLayer):
            live = np.flatnonzero(lay.angle != 0)
            if len(live) == 0:
                continue
            take = live[rng.integers(0, len(live), 400)]
            ang = rng.uniform(0, 2 * np.pi, 400)
            rr = rng.uniform(lay.r_core * 0.9, 1.0, 400)
            cen_t = lay.theta0 + (take + 0.5) * lay.pitch + lay.theta_off[take]
            extra_r.append(np.clip(lay.rho_c[take] + lay.a[take] * rr * np.cos(ang), 1e-4, 1 - 1e-4))
            extra_t.append(wrap01(cen_t + lay.b[take] * rr * np.sin(ang)))
    return np.concatenate(extra_r), np.concatenate(extra_t)


def _max_partials(apply_fn, rho, theta, k: int, h: float) -> float:
    """Max |partial^(i,j)| over 1 <= i+j <= k at the sample points, by 5-point FD."""
    offs = np.arange(-2, 3)
    n = len(rho)
    RR = rho[:, None, None] + offs[None, :, None] * h
    TT = theta[:, None, None] + offs[None, None, :] * h
    RR = np.clip(RR, 0.0, 1.0)
    fr, ft = apply_fn(np.broadcast_to(RR, (n, 5, 5)).ravel(),
                      np.broadcast_to(TT, (n, 5, 5)).ravel())
    fr = fr.reshape(n, 5, 5)
    ft = ft.reshape(n, 5, 5)
    # unwrap theta outputs around the stencil center
    ctr = ft[:, 2:3, 2:3]
    ft = ctr + (np.mod(ft - ctr + 0.5, 1.0) - 0.5)
    best = 0.0
    for i in range(0, k + 1):
        for j in range(0, k + 1 - i):
            if i + j == 0 or i + j > k:
                continue
            wi = _FD_WEIGHTS[i] / h**i
            wj = _FD_WEIGHTS[j] / h**j
            for F in (fr, ft):
                d = np.einsum("nab,a,b->n", F, wi, wj)
                best = max(best, float(np.max(np.abs(d))))
    return best


def ck_norm_estimate(chain: DiffeoChain, k: int, grid: int = 64, seed: int = 5) -> float:
    """Upper estimate of the C^k size of the chain and its inverse.

    Sampled finite differences of all partials of order <= k, times a safety
    factor 2; never below 1 (the order-0 scale).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if grid < 64:
        raise ValueError("grid must be >= 64 per axis")
    if k > 4:
        raise ValueError("finite-difference stencils support k <= 4")
    rng = np.random.default_rng(seed)
    feat = chain.min_feature()
    h_floor = {1: 1e-7, 2: 3e-6, 3: 1e-4}.get(k, 3e-4)
    h = float(min(max(feat / 8.0, h_floor), 2e-3))
    rho, theta = _norm_sample_points(chain, grid, rng)
    inv = chain.inverse_chain()
    best = 1.0
    for fn in (chain.apply, inv.apply):
        best = max(best, _max_partials(fn, rho, theta, k, h))
    return 2.0 * best


def sup_distance(f: DiffeoChain, g: DiffeoChain, samples: int = 2000,
                 seed: int = 3) -> float:
    """C^1 proxy distance: max point distance plus max Jacobian entry gap."""
    if samples < 1000:
        raise ValueError("samples must be >= 1000")
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.01, 0.99, samples)
    theta = rng.uniform(0, 1, samples)
    fr, ftt = f.apply(rho, theta)
    gr, gt = g.apply(rho, theta)
    dpt = float(np.max(np.maximum(np.abs(fr - gr), circle_dist(ftt, gt))))
    jf = f.jacobian(rho, theta)
    jg = g.jacobian(rho, theta)
    djac = max(float(np.max(np.abs(a - b))) for a, b in zip(jf, jg))
    return dpt + djac
