"""Reduced operators, their intrusive assembly, and reduced time integration.

In the aligned frame the reduced state ``a`` and the drift ``c`` obey

    a_dot_i = d_i + A_ij a_j + B_ijk a_j a_k + c_dot(a) (b_i + C_ij a_j),
    c_dot(a) = -(e + p_j a_j + Q_jk a_j a_k) / (w + s_j a_j),

where the geometry ``(b, C, w, s)`` is fixed by the basis and template and the
dynamics ``(d, A, B, e, p, Q)`` are either projected from a known PDE or
learned from data.

Quadratic terms are stored packed: for ``j <= k`` the feature
``q_jk(a) = (2 - delta_jk) a_j a_k`` multiplies the single stored value
``B_ijk = B_ikj`` (and likewise ``Q_jk``), so index symmetry holds by layout.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DimensionError, SliceSingularityError
from .models import QuadraticPde
from .pod import ReducedBasis, project, reconstruct
from .spectral_field import Field, _inner, derivative, shift
from .symmetry import Template, slice_align

__all__ = [
    "GeometryCoefficients",
    "DynamicsCoefficients",
    "SrRomOperators",
    "RomTrajectory",
    "IntegratorConfig",
    "quadratic_features",
    "pair_indices",
    "assemble_geometry",
    "assemble_standard_galerkin",
    "assemble_sr_galerkin",
    "shifting_speed",
    "naive_shifting_speed",
    "sr_rom_rhs",
    "initial_state",
    "rkf45",
    "integrate_rom",
    "reconstruct_solution",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

SPEED_FLOOR = 1e-12


def pair_indices(n: int):
    """Index pairs ``(j, k)`` with ``j <= k`` in packed (row-major upper-triangle) order."""
    return np.triu_indices(n)


def quadratic_features(a) -> np.ndarray:
    """Packed quadratic features ``(2 - delta_jk) a_j a_k`` for ``j <= k`` (batched)."""
    a = np.asarray(a, dtype=float)
    j, k = pair_indices(a.shape[-1])
    return a[..., j] * a[..., k] * np.where(j == k, 1.0, 2.0)


def _pack_sym(m: np.ndarray) -> np.ndarray:
    n = m.shape[-1]
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    j, k = pair_indices(n)
    return m[..., j, k]


def _unpack_sym(packed: np.ndarray, n: int) -> np.ndarray:
    j, k = pair_indices(n)
    out = np.zeros(packed.shape[:-1] + (n, n))
    out[..., j, k] = packed
    out[..., k, j] = packed
    return out


@dataclass(frozen=True, eq=False)
class GeometryCoefficients:
    """Known coefficients ``b_i = <u_bar_x, phi_i>``, ``C_ij = <phi_j_x, phi_i>``,
    ``w = <u_bar_x, u0_x>``, ``s_j = <phi_j_x, u0_x>``."""

    b: np.ndarray
    C: np.ndarray
    w: float
    s: np.ndarray

    @property
    def n(self) -> int:
        return len(self.b)

    def denominator(self, a) -> np.ndarray:
        return self.w + np.asarray(a) @ self.s


@dataclass(frozen=True, eq=False)
class DynamicsCoefficients:
    """Reduced dynamics and (optionally) shifting-speed numerator coefficients.

    Attributes
    ----------
    d : (n,) ndarray
    A : (n, n) ndarray
    B_packed : (n, n(n+1)/2) ndarray
        ``B_packed[i, p] = B_ijk`` for the ``p``-th pair ``j <= k``.
    e : float or None
    p : (n,) ndarray or None
    Q_packed : (n(n+1)/2,) ndarray or None
        Absent for standard (non symmetry-reduced) models.
    """

    d: np.ndarray
    A: np.ndarray
    B_packed: np.ndarray
    e: float | None = None
    p: np.ndarray | None = None
    Q_packed: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.d)
        npair = n * (n + 1) // 2
        if self.A.shape != (n, n) or self.B_packed.shape != (n, npair):
            raise DimensionError(
                f"inconsistent dynamics shapes: d {self.d.shape}, A {self.A.shape}, "
                f"B_packed {self.B_packed.shape}"
            )
        if self.has_speed and (self.p.shape != (n,) or self.Q_packed.shape != (npair,)):
            raise DimensionError("inconsistent speed-numerator shapes")

    @classmethod
    def from_full(cls, d, A, B, e=None, p=None, Q=None) -> "DynamicsCoefficients":
        """Build from dense ``B[i, j, k]`` and ``Q[j, k]`` (symmetrized on input)."""
        d = np.asarray(d, float)
        Qp = None if Q is None else _pack_sym(np.asarray(Q, float))
        return cls(
            d,
            np.asarray(A, float),
            _pack_sym(np.asarray(B, float)),
            None if e is None else float(e),
            None if p is None else np.asarray(p, float),
            Qp,
        )

    @property
    def n(self) -> int:
        return len(self.d)

    @property
    def has_speed(self) -> bool:
        return self.e is not None

    @property
    def B(self) -> np.ndarray:
        """Dense ``B[i, j, k]``."""
        return _unpack_sym(self.B_packed, self.n)

    @property
    def Q(self) -> np.ndarray | None:
        return None if self.Q_packed is None else _unpack_sym(self.Q_packed, self.n)

    def without_speed(self) -> "DynamicsCoefficients":
        return DynamicsCoefficients(self.d, self.A, self.B_packed)

    def reduced_velocity(self, a) -> np.ndarray:
        """``f_i(a) = d_i + A_ij a_j + B_ijk a_j a_k`` (batched)."""
        a = np.asarray(a, float)
        return self.d + a @ self.A.T + quadratic_features(a) @ self.B_packed.T

    def speed_numerator(self, a) -> np.ndarray:
        a = np.asarray(a, float)
        return self.e + a @ self.p + quadratic_features(a) @ self.Q_packed


@dataclass(frozen=True, eq=False)
class SrRomOperators:
    """Everything needed to evolve and reconstruct a symmetry-reduced ROM.

    ``speed_model`` selects the shifting-speed closure: ``"learned"`` uses the
    rational model with ``(e, p, Q)``; ``"naive"`` reconstructs ``f`` from the
    reduced dynamics in the span of the modes.
    """

    geometry: GeometryCoefficients
    dynamics: DynamicsCoefficients
    basis: ReducedBasis
    template: Template
    speed_model: str = "learned"

    def __post_init__(self):
        n = self.basis.n
        if self.geometry.n != n or self.dynamics.n != n:
            raise DimensionError(
                f"dimension mismatch: basis {n}, geometry {self.geometry.n}, dynamics {self.dynamics.n}"
            )
        if self.speed_model not in ("learned", "naive"):
            raise ValueError(f"unknown speed model {self.speed_model!r}")
        if self.speed_model == "learned" and not self.dynamics.has_speed:
            raise ValueError("learned speed model requires (e, p, Q) coefficients")

    @property
    def n(self) -> int:
        return self.basis.n


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def assemble_geometry(basis: ReducedBasis, tpl: Template) -> GeometryCoefficients:
    """Inner products of the basis derivatives with the modes and ``u0_x``.

    Warns if ``w`` and every ``s_j`` vanish, in which case the slice is
    degenerate for this basis and no shifting speed can be formed.
    """
    g = basis.grid
    phi = basis.modes.coeffs
    dphi = derivative(basis.modes, 1).coeffs
    dmean = derivative(basis.mean, 1).coeffs
    du0 = tpl.du0.coeffs
    b = _inner(g, dmean[None, :], phi)
    C = _inner(g, dphi[None, :, :], phi[:, None, :])  # C[i, j] = <phi_j_x, phi_i>
    w = float(_inner(g, dmean, du0))
    s = _inner(g, dphi, du0[None, :])
    scale = np.sqrt(float(_inner(g, du0, du0)))
    if abs(w) <= 1e-12 * scale and np.all(np.abs(s) <= 1e-12 * scale):
        warnings.warn(
            "degenerate slice geometry: w and all s_j vanish, the shifting speed is undefined",
            RuntimeWarning,
            stacklevel=2,
        )
    return GeometryCoefficients(b, C, w, s)


def _galerkin_pieces(pde: QuadraticPde, basis: ReducedBasis):
    g = basis.grid
    ubar = basis.mean.coeffs
    phi = basis.modes.coeffs
    n = basis.n
    f_mean = pde._rhs(ubar)
    lin = pde.linear_symbol * phi
    j, k = pair_indices(n)
    if pde.bilinear_kernel is None:
        quad = np.zeros((len(j), g.n_modes), dtype=complex)
    else:
        lin = lin + 2.0 * pde.bilinear_kernel(ubar[None, :], phi)
        quad = pde.bilinear_kernel(phi[j], phi[k])
    return f_mean, lin, quad


def assemble_standard_galerkin(pde: QuadraticPde, basis: ReducedBasis) -> DynamicsCoefficients:
    """Project ``f`` onto the affine reduced space: ``(d, A, B)`` only."""
    g = basis.grid
    phi = basis.modes.coeffs
    f_mean, lin, quad = _galerkin_pieces(pde, basis)
    d = _inner(g, f_mean[None, :], phi)
    A = _inner(g, lin[None, :, :], phi[:, None, :])  # A[i, j] = <A phi_j + 2B(u_bar, phi_j), phi_i>
    Bp = _inner(g, quad[None, :, :], phi[:, None, :])
    return DynamicsCoefficients(d, A, Bp)


def assemble_sr_galerkin(pde: QuadraticPde, basis: ReducedBasis, tpl: Template) -> SrRomOperators:
    """Symmetry-reduced Galerkin model: dynamics projected on the modes and on ``u0_x``."""
    g = basis.grid
    du0 = tpl.du0.coeffs
    dyn = assemble_standard_galerkin(pde, basis)
    f_mean, lin, quad = _galerkin_pieces(pde, basis)
    e = float(_inner(g, f_mean, du0))
    p = _inner(g, lin, du0[None, :])
    Qp = _inner(g, quad, du0[None, :])
    full = DynamicsCoefficients(dyn.d, dyn.A, dyn.B_packed, e, p, Qp)
    return SrRomOperators(assemble_geometry(basis, tpl), full, basis, tpl)


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------

def _check_den(den):
    den = np.asarray(den)
    if np.any(~(np.abs(den) >= SPEED_FLOOR)):
        raise SliceSingularityError(
            f"shifting-speed denominator {np.min(np.abs(den)):.3e} below floor {SPEED_FLOOR:g}"
        )


def shifting_speed(ops: SrRomOperators, a):
    """``c_dot(a)`` from the configured speed model (batched over ``a``).

    Raises
    ------
    SliceSingularityError
        If ``|w + s.a| < 1e-12``.
    """
    if ops.speed_model == "naive":
        return naive_shifting_speed(ops.dynamics, ops.basis, ops.template, a, ops.geometry)
    a = np.asarray(a, float)
    den = ops.geometry.denominator(a)
    _check_den(den)
    out = -ops.dynamics.speed_numerator(a) / den
    return float(out) if out.ndim == 0 else out


def naive_shifting_speed(dyn: DynamicsCoefficients, basis: ReducedBasis, tpl: Template, a,
                         geometry: GeometryCoefficients | None = None):
    """Shifting speed from fields rebuilt in the span of the modes.

    ``f~(a) = sum_i f_i(a) phi_i`` and ``u~(a) = u_bar + sum_i a_i phi_i`` are
    inserted into the reconstruction equation. Because ``f~`` is confined to
    the modes' span, any part of the true velocity outside it is invisible.
    """
    a = np.asarray(a, float)
    geometry = geometry or assemble_geometry(basis, tpl)
    g = basis.grid
    proj_u0 = _inner(g, basis.modes.coeffs, tpl.du0.coeffs[None, :])  # <phi_i, u0_x>
    den = geometry.denominator(a)
    _check_den(den)
    out = -(dyn.reduced_velocity(a) @ proj_u0) / den
    return float(out) if out.ndim == 0 else out


def sr_rom_rhs(ops: SrRomOperators, a):
    """Return ``(a_dot, c_dot)`` of the symmetry-reduced model (batched)."""
    a = np.asarray(a, float)
    cdot = np.asarray(shifting_speed(ops, a))
    geo = ops.geometry
    adot = ops.dynamics.reduced_velocity(a) + cdot[..., None] * (geo.b + a @ geo.C.T)
    return adot, (float(cdot) if cdot.ndim == 0 else cdot)


def initial_state(ops: SrRomOperators, u: Field, c_prev=None):
    """Align and project a full-order snapshot: returns ``(a0, c0)``."""
    u_hat, c = slice_align(u, ops.template, c_prev)
    return project(ops.basis, u_hat), c


# ---------------------------------------------------------------------------
# adaptive integration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IntegratorConfig:
    """Embedded Runge-Kutta-Fehlberg 4(5) settings.

    Parameters
    ----------
    h0 : float
        Initial step.
    tol : float
        Local error tolerance; a step is accepted if the error estimate is below it.
    h_min : float
        The run stops with ``status="blow-up"`` when the controller asks for a smaller step.
    h_max : float or None
        Optional cap on step growth.
    error_norm : {"l2", "max"}
        Norm of the difference between the 4th and 5th order solutions.
    shift_accumulation : {"step", "sample"}
        Forward-Euler accumulation of ``c`` per accepted step or per output sample.
    land_on_samples : bool
        Shorten steps so that they end on every output time. Off by default:
        outputs are then linearly interpolated between free-running steps.
    """

    h0: float = 1e-3
    tol: float = 1e-6
    h_min: float = 1e-5
    h_max: float | None = None
    error_norm: str = "l2"
    shift_accumulation: str = "step"
    land_on_samples: bool = False

    def __post_init__(self):
        if not (self.h0 > 0 and self.tol > 0 and self.h_min > 0):
            raise ValueError("h0, tol and h_min must be positive")
        if self.h_max is not None and self.h_max < self.h0:
            raise ValueError("h_max must be at least h0")
        if self.error_norm not in ("l2", "max"):
            raise ValueError(f"unknown error norm {self.error_norm!r}")
        if self.shift_accumulation not in ("step", "sample"):
            raise ValueError(f"unknown shift accumulation {self.shift_accumulation!r}")


# classical Fehlberg tableau
_RKF_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_RKF_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_RKF_B4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])
_RKF_B5 = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])


@dataclass(frozen=True)
class OdeSolution:
    """Accepted steps of :func:`rkf45` plus termination info."""

    t: np.ndarray
    y: np.ndarray
    status: str
    t_stop: float
    n_accepted: int
    n_rejected: int

    def sample(self, t_eval) -> tuple[np.ndarray, np.ndarray]:
        """Linear interpolation at the requested times that were reached."""
        t_eval = np.asarray(t_eval, float)
        keep = t_eval <= self.t[-1] + 1e-12 * max(1.0, abs(self.t[-1]))
        te = t_eval[keep]
        ys = np.column_stack([np.interp(te, self.t, self.y[:, i]) for i in range(self.y.shape[1])])
        return te, ys


def rkf45(rhs: Callable, y0, t_span, cfg: IntegratorConfig = IntegratorConfig(), t=None) -> OdeSolution:
    """Integrate ``y' = rhs(t, y)`` with Fehlberg 4(5) and a halving/doubling controller.

    The 4th-order solution is propagated. With ``err = ||y5 - y4||`` the step
    is accepted when ``err < tol``; the factor ``s = 0.84 (tol h / err)^(1/4)``
    halves the step when ``s < 0.75`` (or whenever the step was rejected) and
    doubles it when ``s > 1.5``. Steps are shortened so that they land on every
    time in ``t`` (output times), without changing the nominal step. If the
    step drops below ``h_min`` or the state becomes non-finite the run stops
    with ``status="blow-up"``; a :class:`SliceSingularityError` raised by
    ``rhs`` stops it with ``status="slice-singularity"``. Neither raises.
    """
    t0, t1 = map(float, t_span)
    y = np.array(y0, dtype=float)
    ts, ys = [t0], [y.copy()]
    h = cfg.h0
    tc = t0
    n_acc = n_rej = 0
    status = "completed"
    span_tol = 1e-12 * max(1.0, abs(t1))
    nrm = np.linalg.norm if cfg.error_norm == "l2" else (lambda v: np.max(np.abs(v)))
    stops = np.array([t1]) if t is None else np.append(np.asarray(t, float), t1)
    stops = np.unique(stops[(stops > t0) & (stops <= t1)])
    i_stop = 0
    while tc < t1 - span_tol:
        while stops[i_stop] <= tc + span_tol:
            i_stop += 1
        target = stops[i_stop]
        h_step = min(h, target - tc)
        try:
            k = []
            for i in range(6):
                yi = y
                for j, aij in enumerate(_RKF_A[i]):
                    yi = yi + h_step * aij * k[j]
                k.append(np.asarray(rhs(tc + _RKF_C[i] * h_step, yi), float))
        except SliceSingularityError:
            status = "slice-singularity"
            break
        kk = np.array(k)
        y4 = y + h_step * (_RKF_B4 @ kk)
        y5 = y + h_step * (_RKF_B5 @ kk)
        err = float(nrm(y5 - y4))
        if not (np.isfinite(err) and np.all(np.isfinite(y4))):
            status = "blow-up"
            break
        accepted = err < cfg.tol
        if accepted:
            tc = target if h_step == target - tc else tc + h_step
            y = y4
            ts.append(tc)
            ys.append(y.copy())
            n_acc += 1
        else:
            n_rej += 1
        s = 0.84 * (cfg.tol * h_step / err) ** 0.25 if err > 0 else np.inf
        if s < 0.75 or not accepted:
            h = h_step / 2.0
        elif s > 1.5 and (cfg.h_max is None or 2.0 * h <= cfg.h_max):
            h = 2.0 * h
        if h < cfg.h_min:
            status = "blow-up"
            break
    return OdeSolution(np.array(ts), np.array(ys), status, tc, n_acc, n_rej)


@dataclass(frozen=True, eq=False)
class RomTrajectory:
    """Sampled reduced trajectory.

    ``status`` is ``"completed"``, ``"blow-up"`` or ``"slice-singularity"``;
    for the latter two ``t_stop`` is the last accepted time and only samples
    up to it are present.
    """

    times: np.ndarray
    a: np.ndarray
    c: np.ndarray
    c_dot: np.ndarray
    status: str = "completed"
    t_stop: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def completed(self) -> bool:
        return self.status == "completed"


def integrate_rom(ops: SrRomOperators, a0, c0: float, t_span, t_eval=None,
                  cfg: IntegratorConfig = IntegratorConfig()) -> RomTrajectory:
    """Forecast ``(a, c)`` from ``(a0, c0)`` over ``t_span``.

    ``a`` is integrated adaptively (:func:`rkf45`); ``c`` is advanced by
    forward Euler with ``c_dot`` evaluated at the start of each accepted step
    (or of each output interval with ``shift_accumulation="sample"``). Outputs
    are sampled at ``t_eval`` (default: the two ends of ``t_span``) by linear
    interpolation between accepted steps.
    """
    t0, t1 = map(float, t_span)
    t_eval = np.array([t0, t1]) if t_eval is None else np.asarray(t_eval, float)
    if np.any(np.diff(t_eval) <= 0):
        raise ValueError("t_eval must be strictly increasing")
    a0 = np.asarray(a0, float)
    if a0.shape != (ops.n,):
        raise DimensionError(f"initial state of shape {a0.shape} for an {ops.n}-mode model")

    sol = rkf45(lambda _t, a: sr_rom_rhs(ops, a)[0], a0, (t0, t1), cfg,
                t_eval if cfg.land_on_samples else None)
    te, a_s = sol.sample(t_eval)
    cdot_steps = np.asarray(shifting_speed(ops, sol.y[:-1])) if len(sol.t) > 1 else np.zeros(0)
    if cfg.shift_accumulation == "step":
        c_acc = c0 + np.concatenate([[0.0], np.cumsum(cdot_steps * np.diff(sol.t))])
        c_s = np.interp(te, sol.t, c_acc)
    else:
        cd_s = np.asarray(shifting_speed(ops, a_s)) if len(te) else np.zeros(0)
        c_s = c0 + np.concatenate([[0.0], np.cumsum(cd_s[:-1] * np.diff(te))]) if len(te) else te
    try:
        cdot_s = np.atleast_1d(shifting_speed(ops, a_s)) if len(te) else np.zeros(0)
    except SliceSingularityError:
        cdot_s = np.full(len(te), np.nan)
    t_stop = None if sol.status == "completed" else float(sol.t_stop)
    info = {"n_accepted": sol.n_accepted, "n_rejected": sol.n_rejected}
    return RomTrajectory(te, a_s, np.asarray(c_s, float), cdot_s, sol.status, t_stop, info)


def reconstruct_solution(ops: SrRomOperators, traj: RomTrajectory) -> Field:
    """Lab-frame fields ``S_{c(t)}(u_bar + sum_i a_i(t) phi_i)``."""
    return shift(reconstruct(ops.basis, traj.a), traj.c)


def write_trajectory_csv(path, traj: RomTrajectory) -> Path:
    """CSV with columns ``t, a_1 .. a_n, c, c_dot``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = traj.a.shape[1] if traj.a.ndim == 2 else 0
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + [f"a_{i + 1}" for i in range(n)] + ["c", "c_dot"])
        for m in range(len(traj.times)):
            row = [traj.times[m], *traj.a[m], traj.c[m], traj.c_dot[m]]
            wr.writerow([repr(float(v)) for v in row])
    return path


def read_trajectory_csv(path) -> RomTrajectory:
    """Read the sampled columns back (status information lives in the manifest)."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return RomTrajectory(data[:, 0], data[:, 1:-2], data[:, -2], data[:, -1])
