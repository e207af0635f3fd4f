"""Learning reduced dynamics and the shifting-speed model from snapshot data.

Parameters are kept in one packed vector, in this order::

    d        (n)
    A        (n*n, row-major: A[0,0], A[0,1], ...)
    B        (n * n(n+1)/2; for each i, pairs j <= k in upper-triangle order)
    e        (1)
    p        (n)
    Q        (n(n+1)/2, pairs j <= k)

With features ``x(a) = [1, a, q(a)]`` (``q`` as in
:func:`sropinf.rom_core.quadratic_features`) both residual blocks are linear
in the parameters:

    R1[m, i] = x(a_m) . O[:, i] - f_i(t_m)
    R2[m, i] = -(x(a_m) . theta) / (w + s . a_m) * (b + C a_m)_i - c_dot(t_m) r_i(t_m)

where ``O`` collects ``(d, A, B)`` and ``theta = (e, p, Q)``. The objective
``sum R1^2 + lam sum R2^2 + mu |params|^2`` is a convex quadratic, minimized
here by conjugate gradients on the least-squares normal equations (CGLS),
applied matrix-free. Each block is right-preconditioned by whitening its small
dense feature matrix (``X`` for ``O``, ``(X / den) (x) g`` for ``theta``); the
quadratic features are nearly dependent for ``n >= 5`` and plain CGLS stalls.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import BlowUpError, DimensionError, SingularRowError
from .models import SCHEMES, QuadraticPde
from .pod import ReducedBasis, project
from .rom_core import (
    SPEED_FLOOR,
    DynamicsCoefficients,
    GeometryCoefficients,
    SrRomOperators,
    quadratic_features,
)
from .spectral_field import Field, Grid, _inner, derivative
from .symmetry import Template, fit_shift, reconstruction_speed

__all__ = [
    "TrainingTuple",
    "TrainingData",
    "TrainingConfig",
    "TrainingResult",
    "n_params",
    "pack",
    "unpack",
    "build_training_data",
    "generate_reprojected_dataset",
    "loss",
    "loss_gradient",
    "train",
    "train_standard_opinf",
    "write_operators",
    "read_operators",
    "write_training_log",
]

# singular values below this fraction of the largest are treated as null directions
PRECOND_RTOL = 1e-13


class TrainingTuple(NamedTuple):
    t: float
    a: np.ndarray
    f_r: np.ndarray
    r: np.ndarray
    c_dot: float


@dataclass(frozen=True, eq=False)
class TrainingData:
    """Projected training set, stored column-wise.

    Attributes
    ----------
    t : (M,) times
    a : (M, n) reduced states ``<u_hat - u_bar, phi_i>``
    f_r : (M, n) reduced velocities ``<f(u_hat), phi_i>``
    r : (M, n) reduced derivatives ``<u_hat_x, phi_i>`` (``None`` for standard OpInf)
    c_dot : (M,) shifting speeds (``None`` for standard OpInf)
    """

    t: np.ndarray
    a: np.ndarray
    f_r: np.ndarray
    r: np.ndarray | None = None
    c_dot: np.ndarray | None = None

    def __post_init__(self):
        m, n = self.a.shape
        if self.f_r.shape != (m, n) or self.t.shape != (m,):
            raise DimensionError("training arrays have inconsistent lengths")
        if (self.r is None) != (self.c_dot is None):
            raise DimensionError("r and c_dot must be given together")
        if self.r is not None and (self.r.shape != (m, n) or self.c_dot.shape != (m,)):
            raise DimensionError("training arrays have inconsistent lengths")
        for arr in (self.a, self.f_r, self.r, self.c_dot):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValueError("training data contains non-finite values")

    def __len__(self):
        return len(self.t)

    def __getitem__(self, m) -> TrainingTuple:
        r = None if self.r is None else self.r[m]
        cd = None if self.c_dot is None else float(self.c_dot[m])
        return TrainingTuple(float(self.t[m]), self.a[m], self.f_r[m], r, cd)

    @property
    def n(self) -> int:
        return self.a.shape[1]

    @property
    def has_speed(self) -> bool:
        return self.r is not None

    def subset(self, idx) -> "TrainingData":
        pick = lambda x: None if x is None else x[idx]
        return TrainingData(self.t[idx], self.a[idx], self.f_r[idx], pick(self.r), pick(self.c_dot))


@dataclass(frozen=True)
class TrainingConfig:
    """Objective and solver settings.

    Parameters
    ----------
    lam : float
        Weight of the shifting-speed residual block.
    regularizer : {"none", "tikhonov"}
    reg_weight : float
        ``mu`` in ``mu * |params|^2`` when ``regularizer == "tikhonov"``.
    cg_max_iters : int
    cg_rel_residual : float
        Stop when the preconditioned normal-equation residual has dropped by
        this factor.
    cg_preconditioner : {"svd", "none"}
        ``"svd"`` applies a right preconditioner that whitens the feature
        matrix of each block (the objective and its minimizer are unchanged);
        ``"none"`` runs plain CGLS, which stalls for ``n >= 5`` on KSE data.
    """

    lam: float = 1.0
    regularizer: str = "none"
    reg_weight: float = 0.0
    cg_max_iters: int = 500
    cg_rel_residual: float = 1e-13
    cg_preconditioner: str = "svd"

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.regularizer not in ("none", "tikhonov"):
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.reg_weight < 0:
            raise ValueError("regularization weight must be non-negative")
        if self.cg_max_iters < 1 or not self.cg_rel_residual > 0:
            raise ValueError("invalid CG settings")
        if self.cg_preconditioner not in ("svd", "none"):
            raise ValueError(f"unknown preconditioner {self.cg_preconditioner!r}")

    @property
    def mu(self) -> float:
        return self.reg_weight if self.regularizer == "tikhonov" else 0.0


# ---------------------------------------------------------------------------
# packing
# ---------------------------------------------------------------------------

def _npair(n):
    return n * (n + 1) // 2


def n_params(n: int, speed: bool = True) -> int:
    nf = 1 + n + _npair(n)
    return nf * n + (nf if speed else 0)


def pack(dyn: DynamicsCoefficients) -> np.ndarray:
    """Packed parameter vector (speed block included if present)."""
    parts = [dyn.d, dyn.A.ravel(), dyn.B_packed.ravel()]
    if dyn.has_speed:
        parts += [[dyn.e], dyn.p, dyn.Q_packed]
    return np.concatenate([np.asarray(p, float).ravel() for p in parts])


def unpack(params, n: int) -> DynamicsCoefficients:
    """Inverse of :func:`pack`; the speed block is optional."""
    x = np.asarray(params, float)
    P = _npair(n)
    if x.size not in (n_params(n, True), n_params(n, False)):
        raise DimensionError(f"parameter vector of length {x.size} does not fit n={n}")
    d = x[:n]
    A = x[n:n + n * n].reshape(n, n)
    o = n + n * n
    B = x[o:o + n * P].reshape(n, P)
    o += n * P
    if x.size == o:
        return DynamicsCoefficients(d.copy(), A.copy(), B.copy())
    return DynamicsCoefficients(d.copy(), A.copy(), B.copy(), float(x[o]),
                                x[o + 1:o + 1 + n].copy(), x[o + 1 + n:].copy())


def _to_blocks(x, n):
    # packed vector -> (O, theta); O[p, i] multiplies feature p in row i
    nf = 1 + n + _npair(n)
    dyn, th = x[: nf * n], x[nf * n:]
    d = dyn[:n]
    A = dyn[n:n + n * n].reshape(n, n)
    B = dyn[n + n * n:].reshape(n, -1)
    O = np.vstack([d[None, :], A.T, B.T])
    return O, th


def _from_blocks(O, th, n):
    d = O[0]
    A = O[1:n + 1].T
    B = O[n + 1:].T
    return np.concatenate([d, A.ravel(), B.ravel(), th])


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def build_training_data(aligned: Field, aligned_velocities: Field, c_dot, basis: ReducedBasis,
                        times=None) -> TrainingData:
    """Project aligned snapshots and their velocities.

    Parameters
    ----------
    aligned : Field
        Batch of aligned profiles ``u_hat(t_m)``.
    aligned_velocities : Field
        ``f(u_hat(t_m))``; from lab-frame velocities use
        :func:`sropinf.symmetry.aligned_velocity`.
    c_dot : array or None
        Shifting speeds ``c_dot(t_m)``; ``None`` builds a standard OpInf set.
    times : array, optional
        Defaults to ``0, 1, 2, ...``.
    """
    m = aligned.batch_shape[0] if aligned.batch_shape else 0
    if aligned_velocities.batch_shape != aligned.batch_shape:
        raise DimensionError(
            f"{m} snapshots but velocities of batch shape {aligned_velocities.batch_shape}"
        )
    t = np.arange(m, dtype=float) if times is None else np.asarray(times, float)
    if t.shape != (m,):
        raise DimensionError(f"{m} snapshots but {t.size} times")
    a = project(basis, aligned)
    f_r = _inner(basis.grid, aligned_velocities.coeffs[:, None, :], basis.modes.coeffs[None])
    if c_dot is None:
        return TrainingData(t, a, f_r)
    c_dot = np.asarray(c_dot, float)
    if c_dot.shape != (m,):
        raise DimensionError(f"{m} snapshots but {c_dot.size} shifting speeds")
    r = _inner(basis.grid, derivative(aligned, 1).coeffs[:, None, :], basis.modes.coeffs[None])
    return TrainingData(t, a, f_r, r, c_dot)


def generate_reprojected_dataset(pde: QuadraticPde, basis: ReducedBasis, tpl: Template,
                                 u_init: Field, n_steps: int, dt: float, sample_every: int = 1,
                                 scheme: str = "ars343", t0: float = 0.0,
                                 velocities: str = "exact") -> TrainingData:
    """Training data whose states are kept in the aligned affine subspace.

    Starting from ``u = u_init``, for ``p = 0 .. n_steps - 1``: align ``u`` to
    the template, replace it by its affine projection ``u_RP``, record
    ``u_RP``, ``f(u_RP)`` and the reconstruction-equation speed of ``u_RP``
    when ``p`` is a multiple of ``sample_every``, then advance the full-order
    model one step from ``u_RP``.

    Parameters
    ----------
    velocities : {"exact", "finite-difference"}
        ``f(u_RP)`` from the operator, or ``(step(u_RP) - u_RP) / dt``.

    Raises
    ------
    BlowUpError
        If the full-order step produces non-finite values (``step_index`` set).
    """
    if velocities not in ("exact", "finite-difference"):
        raise ValueError(f"unknown velocity mode {velocities!r}")
    if n_steps < 1 or sample_every < 1:
        raise ValueError("n_steps and sample_every must be positive")
    stepper = SCHEMES[scheme]
    g = basis.grid
    kap = g.wavenumbers
    w = g.weights
    ubar = basis.mean.coeffs
    phi = basis.modes.coeffs
    c = np.array(u_init.coeffs, dtype=complex)
    states, vels, ts = [], [], []
    for p in range(n_steps):
        shift_c = fit_shift(Field(g, c), tpl)
        u_hat = c * np.exp(1j * kap * shift_c)
        a = np.real((u_hat - ubar) * w @ np.conj(phi).T)
        u_rp = ubar + a @ phi
        nxt = stepper(pde, u_rp, dt)
        if not np.isfinite(nxt).all():
            raise BlowUpError(f"full-order step {p} blew up during re-projection", step_index=p)
        if p % sample_every == 0:
            states.append(u_rp)
            vels.append(pde._rhs(u_rp) if velocities == "exact" else (nxt - u_rp) / dt)
            ts.append(t0 + p * dt)
        c = nxt
    u_rp = Field(g, np.array(states))
    f_rp = Field(g, np.array(vels))
    cdot = np.atleast_1d(reconstruction_speed(u_rp, f_rp, tpl))
    return build_training_data(u_rp, f_rp, cdot, basis, np.array(ts))


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

class _LeastSquares:
    """Matrix-free stacked operator ``J`` and target ``y`` of the training objective."""

    def __init__(self, data: TrainingData, geometry: GeometryCoefficients | None, cfg: TrainingConfig,
                 speed: bool):
        self.n = data.n
        self.X = np.hstack([np.ones((len(data), 1)), data.a, quadratic_features(data.a)])
        self.nf = self.X.shape[1]
        self.y1 = data.f_r
        self.speed = speed
        self.sl = np.sqrt(cfg.lam)
        self.sm = np.sqrt(cfg.mu)
        if speed:
            den = geometry.denominator(data.a)
            bad = np.flatnonzero(~(np.abs(den) >= SPEED_FLOOR))
            if bad.size:
                m = int(bad[0])
                raise SingularRowError(
                    f"shifting-speed denominator vanishes for the tuple at t={data.t[m]:.6g}",
                    time=float(data.t[m]),
                )
            self.den = den
            self.gmat = geometry.b + data.a @ geometry.C.T  # (M, n)
            self.y2 = data.c_dot[:, None] * data.r
        self.size = self.nf * self.n + (self.nf if speed else 0)

    def apply(self, x):
        O, th = _to_blocks(x, self.n) if self.speed else (_to_blocks(x, self.n)[0], None)
        out = [self.X @ O]
        if self.speed:
            out.append(self.sl * (-(self.X @ th) / self.den)[:, None] * self.gmat)
        if self.sm:
            out.append(self.sm * x)
        return out

    def apply_t(self, parts):
        O = self.X.T @ parts[0]
        th = np.zeros(self.nf)
        if self.speed:
            th = self.sl * (self.X.T @ (-np.sum(parts[1] * self.gmat, axis=1) / self.den))
        x = _from_blocks(O, th if self.speed else np.zeros(0), self.n)
        if self.sm:
            x = x + self.sm * parts[-1]
        return x

    def target(self):
        out = [self.y1]
        if self.speed:
            out.append(self.sl * self.y2)
        if self.sm:
            out.append(np.zeros(self.size))
        return out


def _sub(a, b):
    return [x - y for x, y in zip(a, b)]


def _sq(parts):
    return float(sum(np.sum(p * p) for p in parts))


def _setup(params, data, geometry, cfg):
    x = np.asarray(params, float)
    speed = x.size == n_params(data.n, True)
    if speed and not data.has_speed:
        raise DimensionError("speed parameters given but the data carry no speed terms")
    if x.size not in (n_params(data.n, True), n_params(data.n, False)):
        raise DimensionError(f"parameter vector of length {x.size} does not fit n={data.n}")
    return x, _LeastSquares(data, geometry, cfg, speed)


def loss(params, data: TrainingData, geometry: GeometryCoefficients | None,
         cfg: TrainingConfig = TrainingConfig()) -> float:
    """Training objective ``sum R1^2 + lam sum R2^2 + mu |params|^2``.

    Raises
    ------
    SingularRowError
        If ``|w + s . a(t_m)| < 1e-12`` for some tuple.
    """
    x, ls = _setup(params, data, geometry, cfg)
    return _sq(_sub(ls.apply(x), ls.target()))


def loss_gradient(params, data: TrainingData, geometry: GeometryCoefficients | None,
                  cfg: TrainingConfig = TrainingConfig()) -> np.ndarray:
    """Exact gradient ``2 J^T (J x - y)`` of :func:`loss`."""
    x, ls = _setup(params, data, geometry, cfg)
    return 2.0 * ls.apply_t(_sub(ls.apply(x), ls.target()))


@dataclass(frozen=True, eq=False)
class TrainingResult:
    """Learned coefficients plus solver diagnostics."""

    dynamics: DynamicsCoefficients
    params: np.ndarray
    loss_history: np.ndarray
    iterations: int
    converged: bool
    meta: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return float(self.loss_history[-1])


def _whitener(M, ref: float = 0.0) -> np.ndarray:
    # V diag(1/sigma) on the numerical range of M, V on its null space; singular
    # values are judged against max(sigma_1, ref) so a round-off block stays null
    _, sv, vt = np.linalg.svd(M, full_matrices=False)
    top = max(sv[0] if sv.size else 0.0, ref)
    keep = sv > PRECOND_RTOL * top if top > 0 else np.zeros(sv.size, bool)
    scale = np.where(keep, 1.0 / np.where(keep, sv, 1.0), 1.0)
    return vt.T * scale


class _Preconditioner:
    """Block-diagonal right preconditioner ``x = P z`` for :class:`_LeastSquares`."""

    def __init__(self, ls: _LeastSquares):
        self.n = ls.n
        self.speed = ls.speed
        self.Px = _whitener(ls.X)
        if ls.speed:
            Xd = ls.X / ls.den[:, None]
            S = -Xd[:, None, :] * ls.gmat[:, :, None]
            # g = b + C a scales like the states; measure the block against that size
            size = max(np.max(np.abs(ls.X[:, 1:ls.n + 1]), initial=0.0), np.max(np.abs(ls.gmat), initial=0.0))
            self.Ps = _whitener(ls.sl * S.reshape(-1, ls.nf), ls.sl * np.linalg.norm(Xd, 2) * size)

    def _map(self, z, transpose):
        O, th = _to_blocks(z, self.n)
        Px = self.Px.T if transpose else self.Px
        if self.speed:
            th = (self.Ps.T if transpose else self.Ps) @ th
        return _from_blocks(Px @ O, th, self.n)

    def apply(self, z):
        return self._map(z, False)

    def apply_t(self, g):
        return self._map(g, True)


class _Identity:
    def apply(self, z):
        return z

    apply_t = apply


def _cgls(ls: _LeastSquares, max_iters: int, rel_tol: float, pre=_Identity()):
    # CGLS on the right-preconditioned operator J P, from zero; returns x = P z
    z_it = np.zeros(ls.size)
    res = ls.target()
    z = pre.apply_t(ls.apply_t(res))
    z0 = np.linalg.norm(z)
    hist = [_sq(res)]
    if z0 == 0:
        return z_it, np.array(hist), 0, True
    p = z.copy()
    zz = z @ z
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        q = ls.apply(pre.apply(p))
        alpha = zz / _sq(q)
        z_it = z_it + alpha * p
        res = [r - alpha * qq for r, qq in zip(res, q)]
        z = pre.apply_t(ls.apply_t(res))
        hist.append(_sq(res))
        zn = z @ z
        if np.sqrt(zn) <= rel_tol * z0:
            converged = True
            break
        p = z + (zn / zz) * p
        zz = zn
    return pre.apply(z_it), np.array(hist), it, converged


def _solve(ls: _LeastSquares, cfg: TrainingConfig):
    pre = _Preconditioner(ls) if cfg.cg_preconditioner == "svd" else _Identity()
    return _cgls(ls, cfg.cg_max_iters, cfg.cg_rel_residual, pre)


def train(data: TrainingData, geometry: GeometryCoefficients,
          cfg: TrainingConfig = TrainingConfig()) -> TrainingResult:
    """Fit ``(d, A, B, e, p, Q)`` by (preconditioned) CGLS from the zero vector.

    Not reaching ``cfg.cg_rel_residual`` within ``cfg.cg_max_iters`` is
    reported through ``converged=False``, not raised.
    """
    if not data.has_speed:
        raise DimensionError("training the speed model needs r and c_dot in the data")
    if geometry.n != data.n:
        raise DimensionError(f"geometry for n={geometry.n} but data for n={data.n}")
    ls = _LeastSquares(data, geometry, cfg, speed=True)
    x, hist, it, ok = _solve(ls, cfg)
    return TrainingResult(unpack(x, data.n), x, hist, it, ok,
                          {"lam": cfg.lam, "regularizer": cfg.regularizer, "reg_weight": cfg.reg_weight,
                           "preconditioner": cfg.cg_preconditioner})


def train_standard_opinf(data: TrainingData, cfg: TrainingConfig = TrainingConfig()) -> TrainingResult:
    """Fit ``(d, A, B)`` only, ignoring any speed terms in the data."""
    ls = _LeastSquares(data, None, cfg, speed=False)
    x, hist, it, ok = _solve(ls, cfg)
    return TrainingResult(unpack(x, data.n), x, hist, it, ok,
                          {"regularizer": cfg.regularizer, "reg_weight": cfg.reg_weight,
                           "preconditioner": cfg.cg_preconditioner})


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

_PARAM_ORDER = ("d[i]; A[i,j] row-major; B[i,(j,k)] for each i over pairs j<=k in upper-triangle "
                "order; e; p[j]; Q[(j,k)] over pairs j<=k")


def _cplx(c):
    return {"re": np.real(c).tolist(), "im": np.imag(c).tolist()}


def _uncplx(d):
    return np.asarray(d["re"], float) + 1j * np.asarray(d["im"], float)


def write_operators(path, ops: SrRomOperators, meta: dict | None = None) -> Path:
    """JSON operator file with packed parameters, geometry, basis and template.

    Floats are written with ``repr`` precision so a round trip is exact.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    g = ops.basis.grid
    doc = {
        "format": "sropinf-operators/1",
        "n": ops.n,
        "parameter_order": _PARAM_ORDER,
        "has_speed_model": ops.dynamics.has_speed,
        "speed_model": ops.speed_model,
        "parameters": pack(ops.dynamics).tolist(),
        "geometry": {"b": ops.geometry.b.tolist(), "C": ops.geometry.C.tolist(),
                     "w": ops.geometry.w, "s": ops.geometry.s.tolist()},
        "grid": {"L": g.L, "n_modes": g.n_modes, "n_grid": g.n_grid},
        "basis": {"mean": _cplx(ops.basis.mean.coeffs), "modes": _cplx(ops.basis.modes.coeffs),
                  "singular_values": ops.basis.singular_values.tolist()},
        "template": _cplx(ops.template.u0.coeffs),
        "meta": meta or {},
    }
    path.write_text(json.dumps(doc, indent=1))
    return path


def read_operators(path) -> tuple[SrRomOperators, dict]:
    """Inverse of :func:`write_operators`; returns ``(operators, meta)``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"operator file not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != "sropinf-operators/1":
        raise ValueError(f"{path} is not a sropinf operator file")
    g = Grid(**doc["grid"])
    n = int(doc["n"])
    basis = ReducedBasis(Field(g, _uncplx(doc["basis"]["mean"])),
                         Field(g, _uncplx(doc["basis"]["modes"]).reshape(n, g.n_modes)),
                         np.asarray(doc["basis"]["singular_values"], float))
    geo = doc["geometry"]
    geometry = GeometryCoefficients(np.asarray(geo["b"], float), np.asarray(geo["C"], float),
                                    float(geo["w"]), np.asarray(geo["s"], float))
    tpl = Template(Field(g, _uncplx(doc["template"])))
    ops = SrRomOperators(geometry, unpack(doc["parameters"], n), basis, tpl, doc["speed_model"])
    return ops, doc.get("meta", {})


def write_training_log(path, result: TrainingResult) -> Path:
    """CSV with columns ``iteration, loss``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "loss"])
        for i, v in enumerate(result.loss_history):
            wr.writerow([i, repr(float(v))])
    return path
