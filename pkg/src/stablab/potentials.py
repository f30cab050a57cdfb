"""Smooth compactly supported potential profiles built from config dicts."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError


def _smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f0 = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        f1 = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return f0 / (f0 + f1)


def bump(center, radius, amplitude=1.0):
    c = np.asarray(center, dtype=float)
    r0 = float(radius)

    def f(x, y, z):
        rho2 = ((x - c[0]) ** 2 + (y - c[1]) ** 2 + (z - c[2]) ** 2) / r0 ** 2
        inside = rho2 < 1
        with np.errstate(divide="ignore", over="ignore"):
            val = np.exp(1.0 - 1.0 / np.where(inside, 1.0 - rho2, 1.0))
        return amplitude * np.where(inside, val, 0.0)

    return f


def plateau(center, half_width, ramp, amplitude=1.0):
    """Product of 1D plateaus: flat on ``|x_i - c_i| <= half_width``, zero beyond ``half_width + ramp``."""
    c = np.asarray(center, dtype=float)
    hw = np.broadcast_to(np.asarray(half_width, dtype=float), (3,))
    rp = float(ramp)

    def f(x, y, z):
        out = amplitude
        for xi, ci, wi in zip((x, y, z), c, hw):
            out = out * (1.0 - _smooth_step((np.abs(xi - ci) - wi) / rp))
        return out

    return f


def profile_support_radius(spec: dict) -> float:
    """Chebyshev half-width of the support of a profile about its centre."""
    t = spec["type"]
    if t == "bump":
        return float(spec["radius"])
    if t == "plateau":
        return float(np.max(spec["half_width"])) + float(spec["ramp"])
    if t == "sum":
        return max(profile_support_radius(s) + 0.0 for s in spec["terms"])
    if t == "zero":
        return 0.0
    raise ConfigError(f"unknown profile type {t!r}")


_KEYS = {
    "bump": {"type", "center", "radius", "amplitude"},
    "plateau": {"type", "center", "half_width", "ramp", "amplitude"},
    "sum": {"type", "terms"},
    "zero": {"type"},
}


def make_profile(spec: dict):
    """Callable ``f(x, y, z)`` from ``{"type": "bump" | "plateau" | "sum" | "zero", ...}``."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"potential description needs a 'type': {spec!r}")
    t = spec["type"]
    if t not in _KEYS:
        raise ConfigError(f"unknown potential type {t!r}")
    extra = set(spec) - _KEYS[t]
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)} for potential type {t!r}")
    if t == "bump":
        return bump(spec["center"], spec["radius"], spec.get("amplitude", 1.0))
    if t == "plateau":
        return plateau(spec["center"], spec["half_width"], spec["ramp"], spec.get("amplitude", 1.0))
    if t == "zero":
        return lambda x, y, z: 0.0 * x
    terms = [make_profile(s) for s in spec["terms"]]
    return lambda x, y, z: sum(f(x, y, z) for f in terms)
