"""Named analytic profiles used to build initial data and forcings from configs.

A scalar spec is a dict ``{"profile": name, **params}``; a vector spec is a
list with one scalar spec per component.  Only registered names are
accepted, no expression parsing.
"""

from __future__ import annotations

import math

import numpy as np

from .field import PeriodicGrid

__all__ = ["PROFILES", "evaluate", "evaluate_vector", "check_spec", "ProfileError"]


class ProfileError(ValueError):
    pass


def _zero(grid, X, rng):
    return np.zeros(grid.shape)


def _const(grid, X, rng, value=0.0):
    return np.full(grid.shape, float(value))


def _sine(grid, X, rng, amp=1.0, k=1, axis=0, phase=0.0, offset=0.0):
    kk = 2 * math.pi / grid.length * k
    return offset + amp * np.sin(kk * X[axis] + phase)


def _cosine(grid, X, rng, amp=1.0, k=1, axis=0, phase=0.0, offset=0.0):
    return _sine(grid, X, rng, amp, k, axis, phase + math.pi / 2, offset)


def _sine_bump(grid, X, rng, amp=1.0, width=3.0, center=math.pi, offset=0.0):
    # smooth periodic bump exp(-width (1 - cos(x - c))) in every axis
    s = 2 * math.pi / grid.length
    b = np.ones(grid.shape)
    for x in X:
        b = b * np.exp(-width * (1 - np.cos(s * (x - center))))
    return offset + amp * b


def _two_mode(grid, X, rng, a1=1.0, k1=1, a2=0.5, k2=2, axis=0, offset=0.0):
    s = 2 * math.pi / grid.length
    return offset + a1 * np.sin(k1 * s * X[axis]) + a2 * np.cos(k2 * s * X[axis])


def _random_modes(grid, X, rng, amp=1.0, kmax=3, nmodes=4, offset=0.0):
    s = 2 * math.pi / grid.length
    out = np.full(grid.shape, float(offset))
    for _ in range(int(nmodes)):
        k = rng.integers(-int(kmax), int(kmax) + 1, size=grid.dim)
        ph = rng.uniform(0, 2 * math.pi)
        c = rng.normal()
        out = out + amp * c * np.cos(s * sum(int(k[j]) * X[j] for j in range(grid.dim)) + ph)
    return out


PROFILES = {
    "zero": (_zero, set()),
    "const": (_const, {"value"}),
    "sine": (_sine, {"amp", "k", "axis", "phase", "offset"}),
    "cosine": (_cosine, {"amp", "k", "axis", "phase", "offset"}),
    "sine_bump": (_sine_bump, {"amp", "width", "center", "offset"}),
    "two_mode": (_two_mode, {"a1", "k1", "a2", "k2", "axis", "offset"}),
    "random_modes": (_random_modes, {"amp", "kmax", "nmodes", "offset"}),
}

_INTEGER = ("k", "axis", "k1", "k2", "kmax", "nmodes")


def check_spec(spec, vector: bool, dim: int, where: str = "") -> None:
    """Raise :class:`ProfileError` unless ``spec`` is a valid (vector) spec."""
    if vector:
        if not isinstance(spec, list) or len(spec) != dim:
            raise ProfileError(f"{where}: vector spec must be a list of {dim} scalar specs")
        for i, s in enumerate(spec):
            check_spec(s, False, dim, f"{where}[{i}]")
        return
    if not isinstance(spec, dict) or "profile" not in spec:
        raise ProfileError(f"{where}: scalar spec must be an object with a 'profile' key")
    name = spec["profile"]
    if name not in PROFILES:
        raise ProfileError(f"{where}: unknown profile {name!r} (known: {sorted(PROFILES)})")
    extra = set(spec) - {"profile"} - PROFILES[name][1]
    if extra:
        raise ProfileError(f"{where}: unexpected parameters {sorted(extra)} for profile {name!r}")
    for k, v in spec.items():
        if k == "profile":
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ProfileError(f"{where}.{k}: must be a finite number")
        if k in _INTEGER and int(v) != v:
            raise ProfileError(f"{where}.{k}: must be an integer")
    if "axis" in spec and not 0 <= int(spec["axis"]) < dim:
        raise ProfileError(f"{where}.axis: out of range for dim {dim}")


def evaluate(spec: dict, grid: PeriodicGrid, rng: np.random.Generator | None = None) -> np.ndarray:
    check_spec(spec, False, grid.dim)
    fn, _ = PROFILES[spec["profile"]]
    kw = {k: v for k, v in spec.items() if k != "profile"}
    for key in _INTEGER:
        if key in kw:
            kw[key] = int(kw[key])
    rng = rng if rng is not None else np.random.default_rng(0)
    return fn(grid, grid.coords(), rng, **kw)


def evaluate_vector(spec: list, grid: PeriodicGrid, rng: np.random.Generator | None = None) -> np.ndarray:
    check_spec(spec, True, grid.dim)
    rng = rng if rng is not None else np.random.default_rng(0)
    return np.stack([evaluate(s, grid, rng) for s in spec])
