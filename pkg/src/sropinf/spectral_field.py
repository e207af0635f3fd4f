"""Real periodic scalar fields stored as truncated Fourier series.

A :class:`Field` holds the complex coefficients of wavenumbers
``k = 0 .. n_modes - 1``; negative wavenumbers are implied by conjugate
symmetry. Coefficients are normalized so that

    u(x) = sum_k c_k exp(2 pi i k x / L),   c_{-k} = conj(c_k),

which makes ``c_k = rfft(u)[k] / N`` for ``N`` grid samples. Any number of
leading batch axes is allowed, so a time series of snapshots is a single
``Field`` with ``coeffs.shape == (n_times, n_modes)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError

__all__ = [
    "Grid",
    "Field",
    "inner_product",
    "norm",
    "shift",
    "derivative",
    "quad_product",
    "stack",
    "write_snapshot_csv",
    "read_snapshot_csv",
]


@dataclass(frozen=True)
class Grid:
    """Periodic domain ``[0, L)`` with its spectral truncation.

    Parameters
    ----------
    L : float
        Domain length.
    n_modes : int
        Number of retained complex Fourier modes (``k = 0 .. n_modes - 1``).
    n_grid : int
        Number of equispaced sample points used for grid views and export.
        Must be at least ``2 * n_modes`` so every retained mode is resolved.
    """

    L: float = 2.0 * np.pi
    n_modes: int = 20
    n_grid: int = 40

    def __post_init__(self):
        if not np.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"domain length must be positive, got {self.L}")
        if int(self.n_modes) != self.n_modes or self.n_modes < 1:
            raise ValueError(f"n_modes must be a positive integer, got {self.n_modes}")
        if int(self.n_grid) != self.n_grid or self.n_grid < 2 * self.n_modes:
            raise ValueError(
                f"n_grid={self.n_grid} cannot resolve {self.n_modes} modes "
                f"(need n_grid >= {2 * self.n_modes})"
            )

    @property
    def k(self) -> np.ndarray:
        """Integer wavenumbers ``0 .. n_modes - 1``."""
        return np.arange(self.n_modes)

    @property
    def wavenumbers(self) -> np.ndarray:
        """Physical wavenumbers ``2 pi k / L``."""
        return 2.0 * np.pi * self.k / self.L

    @property
    def weights(self) -> np.ndarray:
        """Parseval weights: 1 for the mean, 2 for every other retained mode."""
        w = np.full(self.n_modes, 2.0)
        w[0] = 1.0
        return w

    @property
    def n_pad(self) -> int:
        """Size of the zero-padded grid used for alias-free products."""
        # products reach |k| <= 2(K-1); aliases miss the retained band iff M >= 3K-2
        m = 3 * self.n_modes
        return m + (m % 2)

    def x(self, n: int | None = None) -> np.ndarray:
        """Equispaced sample locations (``n_grid`` of them by default)."""
        n = self.n_grid if n is None else n
        return self.L * np.arange(n) / n


class Field:
    """A real periodic field (or a batch of them) on a :class:`Grid`.

    The coefficient array is copied, made read-only and forced to represent a
    real function (the imaginary part of the mean coefficient is dropped).
    """

    __slots__ = ("grid", "coeffs")

    def __init__(self, grid: Grid, coeffs):
        c = np.array(coeffs, dtype=complex)
        if c.ndim == 0 or c.shape[-1] != grid.n_modes:
            raise DimensionError(
                f"coefficient array of shape {c.shape} does not match n_modes={grid.n_modes}"
            )
        c[..., 0] = c[..., 0].real
        c.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "coeffs", c)

    def __setattr__(self, name, value):
        raise AttributeError("Field is immutable")

    # -- constructors -------------------------------------------------------
    @classmethod
    def zeros(cls, grid: Grid, batch: tuple = ()) -> "Field":
        return cls(grid, np.zeros(tuple(batch) + (grid.n_modes,), dtype=complex))

    @classmethod
    def from_grid(cls, grid: Grid, values) -> "Field":
        """Build from equispaced samples (last axis = space, any ``N >= 2*n_modes``)."""
        v = np.asarray(values, dtype=float)
        n = v.shape[-1]
        if n < 2 * grid.n_modes:
            raise DimensionError(f"{n} samples cannot resolve {grid.n_modes} modes")
        c = np.fft.rfft(v, axis=-1)[..., : grid.n_modes] / n
        return cls(grid, c)

    @classmethod
    def from_function(cls, grid: Grid, func, n_samples: int | None = None) -> "Field":
        """Sample ``func(x)`` on a fine grid and keep the retained modes."""
        n = n_samples or 4 * grid.n_modes
        return cls.from_grid(grid, func(grid.x(n)))

    @classmethod
    def from_modes(cls, grid: Grid, terms: Iterable[tuple]) -> "Field":
        """Build from ``(k, "sin" | "cos", amplitude)`` terms.

        ``(0, "cos", a)`` is the constant ``a``. Wavenumbers are integers and
        refer to ``exp(2 pi i k x / L)``.
        """
        c = np.zeros(grid.n_modes, dtype=complex)
        for k, kind, amp in terms:
            k = int(k)
            if k < 0 or k >= grid.n_modes:
                raise DimensionError(f"wavenumber {k} outside retained range 0..{grid.n_modes - 1}")
            kind = str(kind).lower()
            if kind == "cos":
                c[k] += amp if k == 0 else 0.5 * amp
            elif kind == "sin":
                if k == 0:
                    continue
                c[k] += -0.5j * amp
            else:
                raise ValueError(f"term kind must be 'sin' or 'cos', got {kind!r}")
        return cls(grid, c)

    # -- views ----------------------------------------------------------------
    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-1]

    def values(self, n: int | None = None) -> np.ndarray:
        """Grid samples at ``n`` (default ``n_grid``) equispaced points."""
        n = self.grid.n_grid if n is None else n
        if n < 2 * self.grid.n_modes:
            raise DimensionError(f"{n} points cannot resolve {self.grid.n_modes} modes")
        full = np.zeros(self.batch_shape + (n // 2 + 1,), dtype=complex)
        full[..., : self.grid.n_modes] = self.coeffs * n
        return np.fft.irfft(full, n=n, axis=-1)

    def __len__(self):
        if not self.batch_shape:
            raise TypeError("single Field has no length")
        return self.batch_shape[0]

    def __getitem__(self, idx) -> "Field":
        if not self.batch_shape:
            raise TypeError("single Field is not indexable")
        return Field(self.grid, self.coeffs[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self):
        return f"Field(batch={self.batch_shape}, n_modes={self.grid.n_modes}, L={self.grid.L:.6g})"

    # -- arithmetic -----------------------------------------------------------
    def _other(self, other):
        if isinstance(other, Field):
            _check_grid(self, other)
            return other.coeffs
        return None

    def __add__(self, other):
        oc = self._other(other)
        if oc is None:
            c = self.coeffs.copy()
            c[..., 0] += other
            return Field(self.grid, c)
        return Field(self.grid, self.coeffs + oc)

    __radd__ = __add__

    def __neg__(self):
        return Field(self.grid, -self.coeffs)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        if isinstance(scalar, Field):
            raise TypeError("use quad_product for products of fields")
        s = np.asarray(scalar)
        if s.ndim:
            s = s[..., None]
        return Field(self.grid, self.coeffs * s)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / np.asarray(scalar, dtype=float))

    def allclose(self, other: "Field", atol: float = 1e-12, rtol: float = 0.0) -> bool:
        _check_grid(self, other)
        return bool(np.allclose(self.coeffs, other.coeffs, atol=atol, rtol=rtol))


def _check_grid(v: Field, w: Field):
    if v.grid != w.grid:
        raise DimensionError(f"fields live on different grids: {v.grid} vs {w.grid}")


def stack(fields: Sequence[Field]) -> Field:
    """Stack single fields (or batches) along a new leading axis."""
    fields = list(fields)
    if not fields:
        raise ValueError("cannot stack an empty sequence of fields")
    g = fields[0].grid
    for f in fields[1:]:
        _check_grid(fields[0], f)
    return Field(g, np.stack([f.coeffs for f in fields]))


# ---------------------------------------------------------------------------
# coefficient-level kernels, shared with the time steppers
# ---------------------------------------------------------------------------

def _inner(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.real(a * np.conj(b)) @ grid.weights


def _product(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = grid.n_pad
    k = grid.n_modes
    shp = np.broadcast_shapes(a.shape, b.shape)[:-1] + (m // 2 + 1,)
    pa = np.zeros(shp, dtype=complex)
    pb = np.zeros(shp, dtype=complex)
    pa[..., :k] = a * m
    pb[..., :k] = b * m
    prod = np.fft.irfft(pa, n=m, axis=-1) * np.fft.irfft(pb, n=m, axis=-1)
    return np.fft.rfft(prod, axis=-1)[..., :k] / m


def _shift_phase(grid: Grid, theta) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    return np.exp(-1j * th[..., None] * grid.wavenumbers)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def inner_product(v: Field, w: Field):
    """``(1/L) * integral of v w`` over the period, exact via Parseval.

    Batched fields broadcast; a scalar ``float`` is returned for single fields.
    """
    _check_grid(v, w)
    out = _inner(v.grid, v.coeffs, w.coeffs)
    return float(out) if np.ndim(out) == 0 else out


def norm(v: Field):
    """L2 norm induced by :func:`inner_product`."""
    return np.sqrt(inner_product(v, v))


def shift(v: Field, theta) -> Field:
    """Translate: ``S_theta[v](x) = v(x - theta)``. ``theta`` broadcasts over batches."""
    return Field(v.grid, v.coeffs * _shift_phase(v.grid, theta))


def derivative(v: Field, order: int = 1) -> Field:
    """Spectral derivative of integer ``order >= 0``."""
    if int(order) != order or order < 0:
        raise ValueError(f"derivative order must be a non-negative integer, got {order}")
    return Field(v.grid, v.coeffs * (1j * v.grid.wavenumbers) ** int(order))


def quad_product(v: Field, w: Field) -> Field:
    """Pointwise product ``v w`` computed alias-free and truncated to the retained modes."""
    _check_grid(v, w)
    return Field(v.grid, _product(v.grid, v.coeffs, w.coeffs))


# ---------------------------------------------------------------------------
# CSV snapshot matrices
# ---------------------------------------------------------------------------

def write_snapshot_csv(path, fields: Field, n: int | None = None) -> Path:
    """Write a batch of fields as a CSV matrix.

    The header row holds the x-coordinates; each further row holds one field
    sampled at ``n`` (default ``n_grid``) equispaced points.
    """
    path = Path(path)
    vals = np.atleast_2d(fields.values(n))
    x = fields.grid.x(vals.shape[-1])
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([repr(float(xi)) for xi in x])
        for row in vals:
            wr.writerow([repr(float(v)) for v in row])
    return path


def read_snapshot_csv(path, grid: Grid) -> Field:
    """Inverse of :func:`write_snapshot_csv`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"snapshot file not found: {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Field.from_grid(grid, data)
