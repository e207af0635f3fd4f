"""Mean subtraction and proper orthogonal decomposition by the method of snapshots."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, RankError
from .spectral_field import Field, Grid

__all__ = [
    "ReducedBasis",
    "mean_field",
    "compute_pod",
    "project",
    "reconstruct",
    "write_basis_csv",
    "read_basis_csv",
]

RANK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    """Affine reduced space ``u_bar + span{phi_1..phi_n}``.

    Attributes
    ----------
    mean : Field
        Mean profile ``u_bar``.
    modes : Field
        Batch of ``n`` orthonormal modes, ``modes.coeffs.shape == (n, n_modes)``.
    singular_values : ndarray
        Full descending singular-value spectrum of the centered ensemble
        (empty when the basis was not built from data).
    """

    mean: Field
    modes: Field
    singular_values: np.ndarray = np.zeros(0)

    def __post_init__(self):
        if self.mean.batch_shape:
            raise DimensionError("basis mean must be a single field")
        if self.modes.coeffs.ndim != 2:
            raise DimensionError("basis modes must be a 1-D batch of fields")
        if self.mean.grid != self.modes.grid:
            raise DimensionError("mean and modes live on different grids")

    @property
    def n(self) -> int:
        return self.modes.coeffs.shape[0]

    @property
    def grid(self) -> Grid:
        return self.mean.grid

    def truncate(self, n: int) -> "ReducedBasis":
        if not 1 <= n <= self.n:
            raise DimensionError(f"cannot truncate a {self.n}-mode basis to {n} modes")
        return ReducedBasis(self.mean, self.modes[:n], self.singular_values)


def mean_field(snapshots: Field) -> Field:
    """Arithmetic mean over the leading batch axis."""
    if not snapshots.batch_shape or snapshots.batch_shape[0] == 0:
        raise ValueError("mean of an empty snapshot set is undefined")
    return Field(snapshots.grid, snapshots.coeffs.mean(axis=0))


def _gram(grid: Grid, x: np.ndarray) -> np.ndarray:
    xw = x * grid.weights
    return np.real(xw @ np.conj(x).T)


def _fix_sign(c: np.ndarray) -> np.ndarray:
    # largest real degree of freedom (Re or Im of some coefficient) made positive
    dof = np.concatenate([c.real, c.imag])
    i = int(np.argmax(np.abs(dof)))
    return -c if dof[i] < 0 else c


def compute_pod(snapshots: Field, n: int, center: bool = True) -> ReducedBasis:
    """POD basis of ``n`` modes from a batch of (aligned) snapshots.

    The modes are the leading eigenvectors of the snapshot Gram matrix
    ``G_ml = <u_m - u_bar, u_l - u_bar>`` mapped back to field space, then
    re-orthonormalized symmetrically (Loewdin) to remove round-off from the
    squared conditioning of the Gram form. Each mode is signed so that its
    largest real degree of freedom (real or imaginary part of a Fourier
    coefficient) is positive.

    Parameters
    ----------
    snapshots : Field
        Batch with shape ``(n_snapshots, n_modes)``.
    n : int
        Number of modes.
    center : bool
        Subtract the mean first (default). With ``center=False`` the mean is
        the zero field.

    Raises
    ------
    RankError
        If ``sigma_n < 1e-12 sigma_1`` or ``n`` exceeds the snapshot count.
    """
    if snapshots.coeffs.ndim != 2 or snapshots.coeffs.shape[0] == 0:
        raise DimensionError("compute_pod expects a non-empty 1-D batch of fields")
    g = snapshots.grid
    ubar = mean_field(snapshots) if center else Field.zeros(g)
    x = snapshots.coeffs - ubar.coeffs
    m = x.shape[0]
    if n < 1:
        raise ValueError(f"number of modes must be positive, got {n}")
    if n > m:
        raise RankError(f"requested {n} modes from only {m} snapshots")
    lam, v = np.linalg.eigh(_gram(g, x))
    order = np.argsort(lam)[::-1]
    lam, v = np.clip(lam[order], 0.0, None), v[:, order]
    sig = np.sqrt(lam)
    if not sig[0] > 0 or sig[n - 1] < RANK_TOL * sig[0]:
        raise RankError(
            f"requested {n} modes but the centered ensemble has numerical rank "
            f"{int(np.sum(sig > RANK_TOL * sig[0])) if sig[0] > 0 else 0}"
        )
    phi = (v[:, :n].T @ x) / sig[:n, None]
    # Loewdin: phi <- S^{-1/2} phi
    s = _gram(g, phi)
    ev, ew = np.linalg.eigh(s)
    phi = (ew @ np.diag(ev**-0.5) @ ew.T) @ phi
    phi = np.array([_fix_sign(p) for p in phi])
    return ReducedBasis(ubar, Field(g, phi), sig)


def project(basis: ReducedBasis, u: Field) -> np.ndarray:
    """Reduced coordinates ``a_i = <u - u_bar, phi_i>`` (batched over ``u``)."""
    if u.grid != basis.grid:
        raise DimensionError("field and basis live on different grids")
    x = u.coeffs - basis.mean.coeffs
    return np.real((x * basis.grid.weights) @ np.conj(basis.modes.coeffs).T)


def reconstruct(basis: ReducedBasis, a) -> Field:
    """``u_bar + sum_i a_i phi_i`` (batched over leading axes of ``a``)."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != basis.n:
        raise DimensionError(f"reduced vector of length {a.shape[-1]} for an {basis.n}-mode basis")
    return Field(basis.grid, basis.mean.coeffs + a @ basis.modes.coeffs)


def write_basis_csv(path, basis: ReducedBasis) -> Path:
    """Basis file: columns ``x, mean, phi_1 .. phi_n`` on the output grid.

    The singular values go to a sidecar ``<stem>_singular_values.csv``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    x = basis.grid.x()
    cols = [basis.mean.values()] + list(basis.modes.values())
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["x", "mean"] + [f"phi_{i + 1}" for i in range(basis.n)])
        for j in range(len(x)):
            wr.writerow([repr(float(x[j]))] + [repr(float(c[j])) for c in cols])
    sv = path.with_name(path.stem + "_singular_values.csv")
    np.savetxt(sv, basis.singular_values, fmt="%.17g", header="sigma", comments="")
    return path


def read_basis_csv(path, grid: Grid) -> ReducedBasis:
    """Inverse of :func:`write_basis_csv`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"basis file not found: {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    mean = Field.from_grid(grid, data[:, 1])
    modes = Field.from_grid(grid, data[:, 2:].T)
    sv_path = path.with_name(path.stem + "_singular_values.csv")
    sv = np.atleast_1d(np.loadtxt(sv_path, skiprows=1)) if sv_path.exists() else np.zeros(0)
    return ReducedBasis(mean, modes, sv)
