"""Smooth cutoff profiles built from exp(-1/x) transitions.

Every profile is C-infinity; value and first derivative have closed forms.
Vectorized over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _f(x):
    """exp(-1/x) for x > 0, else 0; the standard smooth step ingredient."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def _fp(x):
    """Derivative of _f."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 1e-12
    xi = x[pos]
    out[pos] = np.exp(-1.0 / xi) / xi**2
    return out


def smoothstep(x):
    """C-infinity monotone step: 0 for x <= 0, 1 for x >= 1."""
    x = np.asarray(x, dtype=float)
    a = _f(x)
    b = _f(1.0 - x)
    return a / (a + b + 1e-300)


def smoothstep_d(x):
    """Derivative of smoothstep."""
    x = np.asarray(x, dtype=float)
    a, b = _f(x), _f(1.0 - x)
    ap, bp = _fp(x), -_fp(1.0 - x)
    s = a + b + 1e-300
    return (ap * s - a * (ap + bp)) / s**2


@dataclass(frozen=True)
class BumpProfile:
    """Smooth plateau bump: 0 outside [a, b], amplitude on [c, d], C-inf in between."""

    a: float
    b: float
    c: float
    d: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not (self.a < self.c <= self.d < self.b):
            raise ValueError(f"need a < c <= d < b, got {(self.a, self.c, self.d, self.b)}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        up = smoothstep((x - self.a) / (self.c - self.a))
        dn = smoothstep((self.b - x) / (self.b - self.d))
        return self.amplitude * up * dn

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        up = smoothstep((x - self.a) / (self.c - self.a))
        dn = smoothstep((self.b - x) / (self.b - self.d))
        dup = smoothstep_d((x - self.a) / (self.c - self.a)) / (self.c - self.a)
        ddn = -smoothstep_d((self.b - x) / (self.b - self.d)) / (self.b - self.d)
        return self.amplitude * (dup * dn + up * ddn)

    def min_feature(self) -> float:
        return min(self.c - self.a, self.b - self.d)

    def to_dict(self) -> dict:
        return {
            "a": self.a.hex(), "b": self.b.hex(),
            "c": self.c.hex(), "d": self.d.hex(),
            "amplitude": self.amplitude.hex(),
        }

    @staticmethod
    def from_dict(d: dict) -> "BumpProfile":
        return BumpProfile(*(float.fromhex(d[k]) for k in ("a", "b", "c", "d", "amplitude")))


def fall_profile(r, r_core: float):
    """1 on [0, r_core], smooth descent to 0 at 1; used as twist angle damping."""
    r = np.asarray(r, dtype=float)
    return smoothstep((1.0 - r) / (1.0 - r_core))


def fall_profile_d(r, r_core: float):
    r = np.asarray(r, dtype=float)
    return -smoothstep_d((1.0 - r) / (1.0 - r_core)) / (1.0 - r_core)
