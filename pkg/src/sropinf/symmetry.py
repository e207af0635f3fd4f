"""Symmetry reduction by template fitting (method of slices).

A snapshot ``u`` is aligned by the shift ``c`` that maximizes its correlation
with a fixed template ``u0``; the aligned profile ``S_{-c} u`` then satisfies
the slice condition ``<u_hat, u0_x> = 0``. Differentiating that condition in
time gives the reconstruction equation for the drift speed,

    c_dot = -<f(u_hat), u0_x> / <u_hat_x, u0_x>.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, NoUniqueShiftError, SliceSingularityError
from .models import QuadraticPde, evaluate_f
from .spectral_field import Field, derivative, inner_product, norm, shift

__all__ = [
    "Template",
    "ShiftRecord",
    "fit_shift",
    "slice_align",
    "align_trajectory",
    "aligned_velocity",
    "reconstruction_speed",
    "moving_frame_rhs",
    "write_shift_log",
    "read_shift_log",
]

SINGULARITY_FLOOR = 1e-12
_DEGENERACY_TOL = 1e-14
_NEWTON_TOL = 1e-12


class Template:
    """Reference profile ``u0`` used to fix the shift of every snapshot.

    Raises
    ------
    ValueError
        If ``u0`` is constant (zero derivative), which makes every shift optimal.
    """

    __slots__ = ("u0", "du0")

    def __init__(self, u0: Field):
        if u0.batch_shape:
            raise ValueError("template must be a single field")
        du0 = derivative(u0, 1)
        if not norm(du0) > 0:
            raise ValueError("template must vary in x (its derivative has zero norm)")
        object.__setattr__(self, "u0", u0)
        object.__setattr__(self, "du0", du0)

    def __setattr__(self, name, value):
        raise AttributeError("Template is immutable")

    @property
    def grid(self):
        return self.u0.grid

    @classmethod
    def cosine(cls, grid) -> "Template":
        """The first-Fourier-mode template ``cos(2 pi x / L)``."""
        return cls(Field.from_modes(grid, [(1, "cos", 1.0)]))


@dataclass(frozen=True)
class ShiftRecord:
    """Shift amount ``c`` and speed ``c_dot`` at one time."""

    c: float
    c_dot: float


def _wrap(c, L):
    # representative in [-L/2, L/2)
    return (np.asarray(c) + 0.5 * L) % L - 0.5 * L


def _nearest_branch(c, c_prev, L):
    return c + L * np.round((np.asarray(c_prev) - c) / L)


def fit_shift(u: Field, tpl: Template, c_prev=None):
    """Shift ``c`` maximizing ``<u, S_c u0>``.

    The correlation is sampled on ``max(8 n_modes, 64)`` equispaced shifts,
    the global maximum is picked and then refined by Newton iteration on the
    stationarity condition until the update is below ``1e-12``.

    Parameters
    ----------
    u : Field
        Single field or batch.
    tpl : Template
    c_prev : float or array, optional
        If given, the result is the branch (mod L) closest to ``c_prev``.
        Otherwise the representative in ``[-L/2, L/2)`` is returned.

    Returns
    -------
    float or ndarray
        One shift per field.

    Raises
    ------
    NoUniqueShiftError
        If the sampled correlation is flat (peak-to-peak below 1e-14 times
        the correlation scale).
    """
    g = u.grid
    if g != tpl.grid:
        raise DimensionError("field and template live on different grids")
    kap = g.wavenumbers
    z = g.weights * u.coeffs * np.conj(tpl.u0.coeffs)  # corr(c) = Re sum z e^{i kap c}
    single = z.ndim == 1
    z = np.atleast_2d(z)

    n_c = max(8 * g.n_modes, 64)
    cs = g.L * np.arange(n_c) / n_c
    corr = np.real(z @ np.exp(1j * np.outer(kap, cs)))
    scale = np.maximum(1.0, np.asarray(norm(u)).reshape(-1) * norm(tpl.u0))
    flat = np.ptp(corr, axis=1) <= _DEGENERACY_TOL * scale
    if np.any(flat):
        raise NoUniqueShiftError(
            "template correlation is flat; the field has no component along the template"
        )
    c = cs[np.argmax(corr, axis=1)]
    h = g.L / n_c
    for _ in range(100):
        e = np.exp(1j * np.outer(c, kap))
        d1 = np.real(np.sum(1j * kap * z * e, axis=1))
        d2 = -np.real(np.sum(kap**2 * z * e, axis=1))
        dc = np.where(d2 < 0, -d1 / np.where(d2 < 0, d2, -1.0), 0.0)
        dc = np.clip(dc, -h, h)
        c = c + dc
        if np.all(np.abs(dc) < _NEWTON_TOL):
            break
    c = _wrap(c, g.L)
    if c_prev is not None:
        c = _nearest_branch(c, c_prev, g.L)
    return float(c[0]) if single else c


def slice_align(u: Field, tpl: Template, c_prev=None):
    """Return ``(S_{-c} u, c)`` with ``c`` from :func:`fit_shift`."""
    c = fit_shift(u, tpl, c_prev)
    return shift(u, -np.asarray(c)), c


def align_trajectory(snapshots: Field, tpl: Template, c_start=None):
    """Align a time-ordered batch with continuous (unwrapped) shifts.

    The first shift is the representative in ``[-L/2, L/2)`` (or the branch
    nearest ``c_start``); each later one takes the branch nearest its
    predecessor.

    Returns
    -------
    aligned : Field
    c : ndarray
    """
    base = np.atleast_1d(fit_shift(snapshots, tpl))
    L = snapshots.grid.L
    c = np.empty_like(base)
    prev = c_start
    for m, b in enumerate(base):
        c[m] = b if prev is None else _nearest_branch(b, prev, L)
        prev = c[m]
    return shift(snapshots, -c), c


def aligned_velocity(f_u: Field, c) -> Field:
    """Velocity of the aligned profile from the lab-frame one, ``f(u_hat) = S_{-c} f(u)``."""
    return shift(f_u, -np.asarray(c))


def reconstruction_speed(u_hat: Field, f_u_hat: Field, tpl: Template):
    """Drift speed ``c_dot = -<f(u_hat), u0_x> / <u_hat_x, u0_x>`` (batched).

    Raises
    ------
    SliceSingularityError
        If ``|<u_hat_x, u0_x>| < 1e-12 * ||u_hat_x|| * ||u0_x||``.
    """
    dx = derivative(u_hat, 1)
    den = np.asarray(inner_product(dx, tpl.du0))
    floor = SINGULARITY_FLOOR * np.asarray(norm(dx)) * norm(tpl.du0)
    bad = ~(np.abs(den) >= floor) | (floor == 0)
    if np.any(bad):
        raise SliceSingularityError(
            "reconstruction-speed denominator vanishes: the state left the slice chart"
        )
    out = -np.asarray(inner_product(f_u_hat, tpl.du0)) / den
    return float(out) if out.ndim == 0 else out


def moving_frame_rhs(pde: QuadraticPde, u_hat: Field, tpl: Template) -> Field:
    """Aligned-frame velocity ``f(u_hat) + c_dot * u_hat_x``."""
    f = evaluate_f(pde, u_hat)
    cdot = np.asarray(reconstruction_speed(u_hat, f, tpl))
    return f + derivative(u_hat, 1) * cdot


def write_shift_log(path, t, c, c_dot) -> Path:
    """CSV with columns ``t, c, c_dot``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "c", "c_dot"])
        for row in zip(np.ravel(t), np.ravel(c), np.ravel(c_dot)):
            wr.writerow([repr(float(v)) for v in row])
    return path


def read_shift_log(path):
    """Return ``(t, c, c_dot)`` arrays from :func:`write_shift_log` output."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]
