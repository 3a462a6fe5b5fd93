"""Uniform periodic grids, spectral calculus and norms.

Arrays handled by :class:`PeriodicGrid` carry the grid axes last; any
leading axes are components (vector index, tensor indices).  First
derivatives multiply by ``i k`` with the Nyquist mode removed, so the
discrete derivative is exactly skew-adjoint and summation by parts holds
to round-off.  Higher derivatives are compositions of first derivatives.
"""

from __future__ import annotations

import functools
import io
import itertools
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch

__all__ = [
    "PeriodicGrid",
    "PeriodicField",
    "RANKS",
    "derivative",
    "lp_norm",
    "sobolev_norm",
    "mean_zero_project",
    "write_csv",
    "read_csv",
    "write_binary",
    "read_binary",
]

RANKS = ("scalar", "vector", "symtensor")
_MAGIC = b"VPLF"


@dataclass(frozen=True)
class PeriodicGrid:
    """``n**dim`` nodes ``x_j = j h`` on the torus ``[0, length)**dim``."""

    dim: int
    n: int
    length: float = 2 * math.pi

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ValueError(f"n must be an even integer >= 8, got {self.n}")
        if not (math.isfinite(self.length) and self.length > 0):
            raise ValueError("length must be positive and finite")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "length", float(self.length))

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    @functools.cached_property
    def x1d(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def coords(self) -> list:
        """Coordinate arrays, one per axis, each of shape ``grid.shape``."""
        return list(np.meshgrid(*([self.x1d] * self.dim), indexing="ij"))

    # spectral machinery ------------------------------------------------

    @functools.cached_property
    def _k1d(self):
        full = np.fft.fftfreq(self.n, d=self.h) * 2 * np.pi
        half = np.fft.rfftfreq(self.n, d=self.h) * 2 * np.pi
        return full, half

    @functools.cached_property
    def wavenumbers(self) -> tuple:
        """Broadcastable wavenumber arrays matching ``rfftn`` output."""
        full, half = self._k1d
        ks = []
        for ax in range(self.dim):
            k = half if ax == self.dim - 1 else full
            shp = [1] * self.dim
            shp[ax] = k.size
            ks.append(k.reshape(shp))
        return tuple(ks)

    @functools.cached_property
    def _ik(self) -> tuple:
        out = []
        knyq = np.pi * self.n / self.length
        for k in self.wavenumbers:
            out.append(np.where(np.isclose(np.abs(k), knyq), 0.0, k) * 1j)
        return tuple(out)

    @functools.cached_property
    def k2(self) -> np.ndarray:
        """``|k|^2`` on the ``rfftn`` layout."""
        return sum(k**2 for k in self.wavenumbers)

    @functools.cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on modes touching a Nyquist frequency along any axis."""
        knyq = np.pi * self.n / self.length
        m = np.zeros(self.k2.shape, dtype=bool)
        for k in self.wavenumbers:
            m |= np.isclose(np.abs(k), knyq)
        return m

    def mode_index(self) -> tuple:
        """Integer mode numbers ``k L / 2 pi`` per axis on the ``rfftn`` layout."""
        return tuple(np.rint(k * self.length / (2 * np.pi)).astype(int) for k in self.wavenumbers)

    @functools.cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keeps modes with ``|k_i| <= n/3`` on every axis."""
        cut = self.n // 3
        m = np.ones(self.k2.shape, dtype=bool)
        for idx in self.mode_index():
            m &= np.abs(idx) <= cut
        return m

    def _axes(self, a):
        return tuple(range(a.ndim - self.dim, a.ndim))

    def fft(self, a):
        return np.fft.rfftn(a, axes=self._axes(a))

    def ifft(self, ah):
        return np.fft.irfftn(ah, s=self.shape, axes=self._axes(ah))

    def diff(self, a, axis: int, order: int = 1):
        ah = self.fft(np.asarray(a, dtype=float))
        ah = ah * self._ik[axis] ** order
        return self.ifft(ah)

    def grad(self, a):
        """Gradient with the derivative index last among component axes.

        For a vector ``u`` of shape ``(d, *grid)`` this returns
        ``G[i, j] = d_j u_i``.
        """
        a = np.asarray(a, dtype=float)
        ah = self.fft(a)
        nlead = a.ndim - self.dim
        parts = [self.ifft(ah * self._ik[j]) for j in range(self.dim)]
        return np.stack(parts, axis=nlead)

    def div(self, a):
        """Contract the last component axis with the derivative index."""
        a = np.asarray(a, dtype=float)
        nlead = a.ndim - self.dim
        if nlead < 1 or a.shape[nlead - 1] != self.dim:
            raise ValueError("divergence needs a trailing component axis of length dim")
        ah = self.fft(a)
        acc = 0
        for j in range(self.dim):
            acc = acc + ah[(Ellipsis, j) + (slice(None),) * self.dim] * self._ik[j]
        return self.ifft(acc)

    def laplacian(self, a):
        ah = self.fft(np.asarray(a, dtype=float))
        return self.ifft(ah * sum(ik * ik for ik in self._ik))

    def dealias(self, a):
        return self.ifft(self.fft(np.asarray(a, dtype=float)) * self.dealias_mask)

    def project_nyquist_free(self, a):
        """Remove Nyquist modes, the part invisible to spectral derivatives."""
        return self.ifft(self.fft(np.asarray(a, dtype=float)) * ~self.nyquist_mask)

    def integrate(self, a):
        a = np.asarray(a)
        return np.sum(a, axis=self._axes(a)) * self.cell_volume

    def mean(self, a):
        a = np.asarray(a)
        return np.mean(a, axis=self._axes(a))

    def inner(self, a, b):
        """Discrete L2 product, summed over all component axes."""
        return float(np.sum(np.asarray(a) * np.asarray(b)) * self.cell_volume)

    def norm2(self, a):
        return math.sqrt(max(self.inner(a, a), 0.0))


def _ncomp(rank: str, dim: int) -> int:
    return {"scalar": 1, "vector": dim, "symtensor": dim * dim}[rank]


def _lead_shape(rank: str, dim: int) -> tuple:
    return {"scalar": (), "vector": (dim,), "symtensor": (dim, dim)}[rank]


class PeriodicField:
    """Immutable sample values of a scalar, vector or symmetric tensor field."""

    __slots__ = ("grid", "rank", "values")

    def __init__(self, grid: PeriodicGrid, values, rank: str = "scalar"):
        if rank not in RANKS:
            raise ValueError(f"rank must be one of {RANKS}")
        v = np.array(values, dtype=float, copy=True)
        want = _lead_shape(rank, grid.dim) + grid.shape
        if v.shape != want:
            if v.size == int(np.prod(want)):
                v = v.reshape(want)
            else:
                raise ValueError(f"values shape {v.shape} incompatible with {rank} field {want}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field samples must be finite")
        if rank == "symtensor" and not np.allclose(v, np.swapaxes(v, 0, 1), rtol=1e-12, atol=1e-12):
            raise ValueError("symtensor field is not symmetric")
        v.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "rank", rank)
        object.__setattr__(self, "values", v)

    def __setattr__(self, name, value):
        raise AttributeError("PeriodicField is immutable")

    def __repr__(self):
        return f"PeriodicField({self.rank}, dim={self.grid.dim}, n={self.grid.n})"

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn, rank: str = "scalar"):
        return cls(grid, fn(*grid.coords()), rank)

    @classmethod
    def zeros(cls, grid: PeriodicGrid, rank: str = "scalar"):
        return cls(grid, np.zeros(_lead_shape(rank, grid.dim) + grid.shape), rank)

    @property
    def ncomp(self) -> int:
        return _ncomp(self.rank, self.grid.dim)

    def _like(self, values):
        return PeriodicField(self.grid, values, self.rank)

    def _check(self, other):
        if isinstance(other, PeriodicField):
            if other.grid != self.grid or other.rank != self.rank:
                raise GridMismatch(f"{self!r} vs {other!r}")
            return other.values
        return other

    def __add__(self, other):
        return self._like(self.values + self._check(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._like(self.values - self._check(other))

    def __rsub__(self, other):
        return self._like(self._check(other) - self.values)

    def __mul__(self, c):
        if isinstance(c, PeriodicField):
            if c.grid != self.grid or c.rank != "scalar":
                raise GridMismatch("can only multiply by a scalar field on the same grid")
            return self._like(self.values * c.values)
        return self._like(self.values * c)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self._like(self.values / c)

    def __neg__(self):
        return self._like(-self.values)

    def modulus(self) -> np.ndarray:
        """Pointwise Euclidean/Frobenius modulus."""
        if self.rank == "scalar":
            return np.abs(self.values)
        lead = tuple(range(self.values.ndim - self.grid.dim))
        return np.sqrt(np.sum(self.values**2, axis=lead))

    def mean(self):
        return self.grid.mean(self.values)

    def integral(self):
        return self.grid.integrate(self.values)

    def component(self, i) -> "PeriodicField":
        return PeriodicField(self.grid, self.values[i], "scalar")


def derivative(f: PeriodicField, axis: int) -> PeriodicField:
    """Spectral partial derivative along ``axis``, applied componentwise."""
    if not 0 <= axis < f.grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {f.grid.dim}")
    return f._like(f.grid.diff(f.values, axis))


def _lp(grid: PeriodicGrid, mod, p) -> float:
    if p == math.inf:
        return float(np.max(mod))
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(grid.integrate(mod**p)) ** (1.0 / p)


def lp_norm(f: PeriodicField, p: float = 2) -> float:
    """Rectangle-rule ``L^p`` norm of the pointwise modulus; ``p = inf`` gives the max."""
    return _lp(f.grid, f.modulus(), p)


def sobolev_norm(f: PeriodicField, k: int, p: float = 2) -> float:
    """``(sum_{|alpha| <= k} ||d^alpha f||_p^p)^(1/p)``; for ``p = inf`` the max over alpha."""
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    grid = f.grid
    terms = [lp_norm(f, p)]
    for order in range(1, k + 1):
        for alpha in itertools.combinations_with_replacement(range(grid.dim), order):
            v = f.values
            for ax in alpha:
                v = grid.diff(v, ax)
            terms.append(lp_norm(f._like(v), p))
    if p == math.inf:
        return max(terms)
    return float(sum(t**p for t in terms)) ** (1.0 / p)


def mean_zero_project(f: PeriodicField) -> PeriodicField:
    """Subtract the grid mean of every component."""
    m = f.mean()
    m = np.reshape(m, np.shape(m) + (1,) * f.grid.dim)
    return f._like(f.values - m)


# serialization -------------------------------------------------------------

def _fmt_rows(rows) -> str:
    buf = io.StringIO()
    np.savetxt(buf, rows, delimiter=",", fmt="%.17g")
    return buf.getvalue()


def write_csv(f: PeriodicField, path) -> None:
    """One row per node: ``x0[,x1[,x2]],c0,c1,...`` with a header row."""
    d = f.grid.dim
    xs = [c.ravel() for c in f.grid.coords()]
    comps = f.values.reshape((f.ncomp, -1)) if f.rank != "scalar" else f.values.reshape(1, -1)
    header = [f"x{i}" for i in range(d)] if d > 1 else ["x"]
    if f.rank == "scalar":
        header.append("value")
    elif f.rank == "vector":
        header += [f"u{i}" for i in range(d)]
    else:
        header += [f"s{i}{j}" for i in range(d) for j in range(d)]
    rows = np.column_stack(xs + list(comps))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        fh.write(_fmt_rows(rows))
    # rank and length are implied by the header and first column spacing


def read_csv(path, length: float | None = None) -> PeriodicField:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ncoord = sum(1 for h in header if h.startswith("x"))
    d = ncoord
    npts = data.shape[0]
    n = round(npts ** (1.0 / d))
    if n**d != npts:
        raise ValueError(f"{path}: {npts} rows is not a perfect power of dim {d}")
    if length is None:
        length = (data[1, 0] - data[0, 0]) * n if d == 1 else data[n ** (d - 1), 0] * n
    grid = PeriodicGrid(d, n, float(length))
    first = header[ncoord]
    rank = "scalar" if first == "value" else "vector" if first.startswith("u") else "symtensor"
    if data.shape[1] - ncoord != _ncomp(rank, d):
        raise ValueError(f"{path}: column count does not match a {rank} field")
    vals = data[:, ncoord:].T.reshape(_lead_shape(rank, d) + grid.shape)
    return PeriodicField(grid, vals, rank)


def write_binary(f: PeriodicField, path) -> None:
    """Little-endian: ``VPLF``, int32 dim, n, ncomp, rank code, float64 length, then values."""
    hdr = _MAGIC + struct.pack("<iiiid", f.grid.dim, f.grid.n, f.ncomp, RANKS.index(f.rank), f.grid.length)
    with open(path, "wb") as fh:
        fh.write(hdr)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_binary(path) -> PeriodicField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a field file")
    dim, n, ncomp, rcode, length = struct.unpack("<iiiid", raw[4:28])
    grid = PeriodicGrid(dim, n, length)
    rank = RANKS[rcode]
    if ncomp != _ncomp(rank, dim):
        raise ValueError(f"{path}: inconsistent component count")
    vals = np.frombuffer(raw[28:], dtype="<f8")
    return PeriodicField(grid, vals.reshape(_lead_shape(rank, dim) + grid.shape), rank)
