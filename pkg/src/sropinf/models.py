"""Full-order models written as ``f(u) = d + A u + B(u, u)`` and their time stepping.

Two concrete models are provided: the Kuramoto-Sivashinsky equation on
``[0, 2 pi)`` with hyperviscosity ``nu``,

    u_t = -u_xx - nu u_xxxx - u u_x,      A <-> k^2 - nu k^4,  B(u,v) = -1/2 (uv)_x,

and linear advection-diffusion ``u_t + a u_x = kappa u_xx``.

Both linear operators are diagonal in Fourier space, so implicit solves are
per-wavenumber divisions. Two semi-implicit Runge-Kutta schemes are offered:

``"ars343"`` (default)
    The L-stable, third-order IMEX Runge-Kutta scheme ARS(3,4,3) of Ascher,
    Ruuth & Spiteri (1997): three implicit stages on the linear term, four
    explicit evaluations of the nonlinear term.
``"cnrk3"``
    The classical low-storage three-stage scheme with Crank-Nicolson on the
    linear term in each substage (explicit weights 8/15, 5/12, 3/4). Third
    order for the nonlinear part but only second order overall, because the
    per-stage Crank-Nicolson splitting is second-order accurate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import BlowUpError
from .spectral_field import Field, Grid, _product, read_snapshot_csv, write_snapshot_csv

__all__ = [
    "QuadraticPde",
    "FomConfig",
    "SimulationResult",
    "kse",
    "advection_diffusion",
    "evaluate_f",
    "step",
    "simulate",
    "write_simulation",
    "read_simulation",
    "SCHEMES",
]


@dataclass(frozen=True, eq=False)
class QuadraticPde:
    """A quadratic shift-equivariant PDE ``u_t = d + A u + B(u, u)``.

    Parameters
    ----------
    grid : Grid
    constant : ndarray
        Coefficients of the constant forcing ``d`` (shape ``(n_modes,)``).
    linear_symbol : ndarray
        Complex Fourier multiplier of ``A`` (shape ``(n_modes,)``).
    bilinear_kernel : callable or None
        ``(coeffs_u, coeffs_v) -> coeffs`` implementing the symmetric ``B``
        on coefficient arrays (batched). ``None`` means ``B = 0``.
    name : str
    params : dict
        Model constants, recorded in manifests.
    """

    grid: Grid
    constant: np.ndarray
    linear_symbol: np.ndarray
    bilinear_kernel: Callable | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def is_linear(self) -> bool:
        return self.bilinear_kernel is None

    def linear(self, u: Field) -> Field:
        return Field(self.grid, u.coeffs * self.linear_symbol)

    def bilinear(self, u: Field, v: Field) -> Field:
        if self.bilinear_kernel is None:
            shp = np.broadcast_shapes(u.coeffs.shape, v.coeffs.shape)
            return Field(self.grid, np.zeros(shp, dtype=complex))
        return Field(self.grid, self.bilinear_kernel(u.coeffs, v.coeffs))

    def constant_field(self) -> Field:
        return Field(self.grid, self.constant)

    # coefficient-level pieces used by the steppers
    def _explicit(self, c: np.ndarray) -> np.ndarray:
        if self.bilinear_kernel is None:
            return np.broadcast_to(self.constant, c.shape)
        return self.constant + self.bilinear_kernel(c, c)

    def _rhs(self, c: np.ndarray) -> np.ndarray:
        return self._explicit(c) + self.linear_symbol * c


def kse(nu: float = 4.0 / 87.0, grid: Grid | None = None) -> QuadraticPde:
    """Kuramoto-Sivashinsky equation ``u_t = -u_xx - nu u_xxxx - u u_x``."""
    if not nu > 0:
        raise ValueError(f"nu must be positive, got {nu}")
    grid = grid or Grid()
    kk = grid.wavenumbers
    ik = 1j * kk

    def bilinear(a, b):
        return -0.5 * ik * _product(grid, a, b)

    return QuadraticPde(
        grid=grid,
        constant=np.zeros(grid.n_modes, dtype=complex),
        linear_symbol=(kk**2 - nu * kk**4).astype(complex),
        bilinear_kernel=bilinear,
        name="kse",
        params={"nu": float(nu)},
    )


def advection_diffusion(a: float, kappa: float, grid: Grid | None = None) -> QuadraticPde:
    """Linear advection-diffusion ``u_t + a u_x = kappa u_xx``."""
    if kappa < 0:
        raise ValueError(f"diffusivity must be non-negative, got {kappa}")
    grid = grid or Grid()
    kk = grid.wavenumbers
    return QuadraticPde(
        grid=grid,
        constant=np.zeros(grid.n_modes, dtype=complex),
        linear_symbol=-1j * a * kk - kappa * kk**2,
        bilinear_kernel=None,
        name="advection_diffusion",
        params={"a": float(a), "kappa": float(kappa)},
    )


def evaluate_f(pde: QuadraticPde, u: Field) -> Field:
    """Right-hand side ``d + A u + B(u, u)`` (batched)."""
    return Field(pde.grid, pde._rhs(u.coeffs))


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------

def _ars343_tableau():
    # Ascher, Ruuth & Spiteri (1997), scheme (3,4,3)
    g = 0.4358665215
    b1 = -1.5 * g**2 + 4 * g - 0.25
    b2 = 1.5 * g**2 - 5 * g + 1.25
    a42 = a43 = 0.5529291479
    a31 = ((1 - 4.5 * g + 1.5 * g**2) * a42 + (2.75 - 10.5 * g + 3.75 * g**2) * a43
           - 3.5 + 13 * g - 4.5 * g**2)
    a32 = ((-1 + 4.5 * g - 1.5 * g**2) * a42 + (-2.75 + 10.5 * g - 3.75 * g**2) * a43
           + 4 - 12.5 * g + 4.5 * g**2)
    a41 = 1 - a42 - a43
    ae = np.array([[0, 0, 0, 0], [g, 0, 0, 0], [a31, a32, 0, 0], [a41, a42, a43, 0]], float)
    ai = np.array([[0, 0, 0, 0], [0, g, 0, 0], [0, (1 - g) / 2, g, 0], [0, b1, b2, g]], float)
    b = np.array([0, b1, b2, g], float)
    return ae, ai, b


_ARS_AE, _ARS_AI, _ARS_B = _ars343_tableau()

# low-storage CN/RK3: u' = u + dt[g N(u) + z N(u_prev) + al L u + be L u']
_CN_GAMMA = (8 / 15, 5 / 12, 3 / 4)
_CN_ZETA = (0.0, -17 / 60, -5 / 12)
_CN_ALPHA = tuple((g + z) / 2 for g, z in zip(_CN_GAMMA, _CN_ZETA))


def _step_ars343(pde: QuadraticPde, c: np.ndarray, dt: float) -> np.ndarray:
    lam = pde.linear_symbol
    n_exp, l_imp = [], []
    for i in range(4):
        rhs = c.copy()
        for j in range(i):
            if _ARS_AE[i, j]:
                rhs = rhs + dt * _ARS_AE[i, j] * n_exp[j]
            if _ARS_AI[i, j]:
                rhs = rhs + dt * _ARS_AI[i, j] * l_imp[j]
        ui = rhs / (1.0 - dt * _ARS_AI[i, i] * lam)
        n_exp.append(pde._explicit(ui))
        l_imp.append(lam * ui)
    out = c
    for j in range(4):
        if _ARS_B[j]:
            out = out + dt * _ARS_B[j] * (n_exp[j] + l_imp[j])
    return out


def _step_cnrk3(pde: QuadraticPde, c: np.ndarray, dt: float) -> np.ndarray:
    lam = pde.linear_symbol
    u = c
    n_prev = None
    for g, z, al in zip(_CN_GAMMA, _CN_ZETA, _CN_ALPHA):
        n_cur = pde._explicit(u)
        rhs = u + dt * (g * n_cur + al * lam * u)
        if z:
            rhs = rhs + dt * z * n_prev
        u = rhs / (1.0 - dt * al * lam)
        n_prev = n_cur
    return u


SCHEMES = {"ars343": _step_ars343, "cnrk3": _step_cnrk3}


def _get_scheme(scheme: str):
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown time stepper {scheme!r}; choose from {sorted(SCHEMES)}") from None


def step(pde: QuadraticPde, u: Field, dt: float, scheme: str = "ars343") -> Field:
    """Advance ``u`` by one step of size ``dt``.

    Raises
    ------
    BlowUpError
        If the new state has non-finite coefficients.
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    out = _get_scheme(scheme)(pde, u.coeffs, dt)
    if not np.all(np.isfinite(out)):
        raise BlowUpError("non-finite state after one step", step_index=0)
    return Field(pde.grid, out)


@dataclass(frozen=True)
class FomConfig:
    """Full-order integration settings.

    Parameters
    ----------
    dt : float
        Time step.
    t_final : float
        Simulation horizon (starting at ``t = 0``).
    record_interval : float
        Spacing of recorded snapshots; an integer multiple of ``dt``.
    scheme : str
        Time stepper name, see :data:`SCHEMES`.
    """

    dt: float = 1e-3
    t_final: float = 130.0
    record_interval: float = 0.01
    scheme: str = "ars343"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_final < 0:
            raise ValueError(f"t_final must be non-negative, got {self.t_final}")
        r = self.record_interval / self.dt
        if self.record_interval <= 0 or abs(r - round(r)) > 1e-9 * max(1.0, r):
            raise ValueError(
                f"record_interval={self.record_interval} is not an integer multiple of dt={self.dt}"
            )
        q = self.t_final / self.record_interval
        if abs(q - round(q)) > 1e-9 * max(1.0, q):
            raise ValueError(
                f"t_final={self.t_final} is not a multiple of record_interval={self.record_interval}"
            )
        _get_scheme(self.scheme)

    @property
    def steps_per_record(self) -> int:
        return int(round(self.record_interval / self.dt))

    @property
    def n_records(self) -> int:
        return int(round(self.t_final / self.record_interval))


@dataclass(frozen=True)
class SimulationResult:
    """Recorded full-order trajectory.

    ``snapshots`` and ``velocities`` are batched :class:`Field` objects with
    one entry per time in ``times``. ``velocities`` is ``None`` if not requested.
    """

    times: np.ndarray
    snapshots: Field
    velocities: Field | None = None
    meta: dict = field(default_factory=dict)

    def window(self, t_start: float, t_end: float) -> "SimulationResult":
        """Records with ``t_start <= t <= t_end`` (inclusive, up to rounding)."""
        tol = 1e-9 * max(1.0, abs(t_end))
        idx = np.flatnonzero((self.times >= t_start - tol) & (self.times <= t_end + tol))
        if idx.size == 0:
            raise ValueError(f"no records in window [{t_start}, {t_end}]")
        vel = None if self.velocities is None else self.velocities[idx]
        return SimulationResult(self.times[idx], self.snapshots[idx], vel, dict(self.meta))


def simulate(
    pde: QuadraticPde,
    u0: Field,
    cfg: FomConfig,
    velocities: str | None = "exact",
) -> SimulationResult:
    """Integrate from ``t = 0`` to ``cfg.t_final`` and record every ``cfg.record_interval``.

    Parameters
    ----------
    velocities : {"exact", "finite-difference", None}
        How to record ``f(u(t_m))``: evaluate the operator, use a forward
        difference over one record interval, or skip.

    Raises
    ------
    BlowUpError
        If the state becomes non-finite; ``step_index`` and ``time`` locate it.
    """
    if velocities not in ("exact", "finite-difference", None):
        raise ValueError(f"unknown velocity mode {velocities!r}")
    stepper = _get_scheme(cfg.scheme)
    spr = cfg.steps_per_record
    n_rec = cfg.n_records
    extra = 1 if velocities == "finite-difference" else 0
    out = np.empty((n_rec + 1 + extra, pde.grid.n_modes), dtype=complex)
    c = np.array(u0.coeffs, dtype=complex)
    out[0] = c
    k = 0
    for m in range(1, n_rec + 1 + extra):
        for _ in range(spr):
            c = stepper(pde, c, cfg.dt)
            k += 1
            if not np.isfinite(c).all():
                raise BlowUpError(
                    f"full-order model blew up at step {k} (t={k * cfg.dt:.6g})",
                    step_index=k, time=k * cfg.dt,
                )
        out[m] = c
    times = np.arange(n_rec + 1) * (spr * cfg.dt)
    snaps = Field(pde.grid, out[: n_rec + 1])
    vel = None
    if velocities == "exact":
        vel = evaluate_f(pde, snaps)
    elif velocities == "finite-difference":
        vel = Field(pde.grid, (out[1:] - out[:-1]) / cfg.record_interval)
    meta = {
        "model": pde.name,
        "params": dict(pde.params),
        "dt": cfg.dt,
        "t_final": cfg.t_final,
        "record_interval": cfg.record_interval,
        "scheme": cfg.scheme,
        "velocities": velocities,
        "L": pde.grid.L,
        "n_modes": pde.grid.n_modes,
        "n_grid": pde.grid.n_grid,
    }
    return SimulationResult(times, snaps, vel, meta)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def write_simulation(result: SimulationResult, directory, extra_meta: dict | None = None) -> Path:
    """Write ``snapshots.csv``, ``velocities.csv``, ``times.csv`` and ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_snapshot_csv(d / "snapshots.csv", result.snapshots)
    if result.velocities is not None:
        write_snapshot_csv(d / "velocities.csv", result.velocities)
    np.savetxt(d / "times.csv", result.times, fmt="%.17g", header="t", comments="")
    meta = dict(result.meta)
    meta.update(extra_meta or {})
    meta["n_records"] = int(len(result.times))
    (d / "manifest.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return d


def read_simulation(directory, grid: Grid) -> SimulationResult:
    """Load a directory written by :func:`write_simulation`."""
    d = Path(directory)
    for name in ("snapshots.csv", "times.csv"):
        if not (d / name).exists():
            raise FileNotFoundError(f"missing simulation file: {d / name}")
    times = np.atleast_1d(np.loadtxt(d / "times.csv", skiprows=1))
    snaps = read_snapshot_csv(d / "snapshots.csv", grid)
    vel = read_snapshot_csv(d / "velocities.csv", grid) if (d / "velocities.csv").exists() else None
    meta = json.loads((d / "manifest.json").read_text()) if (d / "manifest.json").exists() else {}
    return SimulationResult(times, snaps, vel, meta)
