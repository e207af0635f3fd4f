"""End-to-end steps shared by the command line and the experiment scripts.

The functions here only compose the lower-level modules:

1. :func:`prepare_window` aligns a recorded full-order window and derives the
   aligned velocities and reconstruction-equation speeds;
2. :func:`learn_operators` builds the POD basis, the known geometry and the
   learned (or projected) dynamics, optionally on a re-projected data set;
3. :func:`forecast` integrates the reduced model from a lab-frame snapshot and
   maps the result back to the lab frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import QuadraticPde, SimulationResult
from .pod import ReducedBasis, compute_pod
from .rom_core import (
    IntegratorConfig,
    RomTrajectory,
    SrRomOperators,
    assemble_geometry,
    assemble_sr_galerkin,
    initial_state,
    integrate_rom,
    reconstruct_solution,
)
from .opinf_train import (
    TrainingConfig,
    TrainingData,
    TrainingResult,
    build_training_data,
    generate_reprojected_dataset,
    train,
    train_standard_opinf,
)
from .spectral_field import Field
from .symmetry import Template, align_trajectory, aligned_velocity, reconstruction_speed

__all__ = [
    "KSE_INITIAL_CONDITION",
    "AlignedWindow",
    "prepare_window",
    "LearnedModel",
    "learn_operators",
    "forecast",
]

# -sin x + 2 cos 2x + 3 cos 3x - 4 sin 4x
KSE_INITIAL_CONDITION = ((1, "sin", -1.0), (2, "cos", 2.0), (3, "cos", 3.0), (4, "sin", -4.0))


@dataclass(frozen=True, eq=False)
class AlignedWindow:
    """A full-order window together with its symmetry-reduced view."""

    times: np.ndarray
    snapshots: Field
    aligned: Field
    c: np.ndarray
    aligned_velocities: Field
    c_dot: np.ndarray


def prepare_window(window: SimulationResult, tpl: Template) -> AlignedWindow:
    """Align every snapshot with continuous shifts and compute ``c_dot`` from the
    reconstruction equation, using the velocities recorded with the window."""
    if window.velocities is None:
        raise ValueError("the window carries no velocities; simulate with velocities enabled")
    aligned, c = align_trajectory(window.snapshots, tpl)
    f_hat = aligned_velocity(window.velocities, c)
    cdot = np.atleast_1d(reconstruction_speed(aligned, f_hat, tpl))
    return AlignedWindow(window.times, window.snapshots, aligned, c, f_hat, cdot)


@dataclass(frozen=True, eq=False)
class LearnedModel:
    """Operators plus the data and diagnostics they came from."""

    operators: SrRomOperators
    data: TrainingData
    result: TrainingResult | None
    meta: dict = field(default_factory=dict)


def learn_operators(
    pde: QuadraticPde | None,
    win: AlignedWindow,
    n: int,
    tpl: Template,
    method: str = "opinf",
    reproject: bool = False,
    train_cfg: TrainingConfig = TrainingConfig(),
    dt: float = 1e-3,
    scheme: str = "ars343",
    basis: ReducedBasis | None = None,
    naive_speed: bool = False,
    velocities: str = "exact",
) -> LearnedModel:
    """Build a symmetry-reduced ROM of dimension ``n`` from an aligned window.

    Parameters
    ----------
    pde : QuadraticPde or None
        Needed for ``method="galerkin"`` and for re-projection (which advances
        the full-order stepper); plain operator inference does not use it.
    method : {"opinf", "galerkin"}
        Learn the coefficients from data, or project the known operators.
    reproject : bool
        Replace the raw window by a re-projected data set started from the
        first raw snapshot, with the same length and record spacing.
    naive_speed : bool
        Learn only ``(d, A, B)`` (standard operator inference) and close the
        shifting speed with the naive reconstruction from the modes' span.
    """
    basis = basis or compute_pod(win.aligned, n)
    geometry = assemble_geometry(basis, tpl)
    if reproject:
        if pde is None:
            raise ValueError("re-projection needs the full-order model")
        t_rec = float(win.times[1] - win.times[0]) if len(win.times) > 1 else dt
        every = int(round(t_rec / dt))
        n_steps = (len(win.times) - 1) * every + 1
        data = generate_reprojected_dataset(
            pde, basis, tpl, win.snapshots[0], n_steps, dt, every, scheme,
            t0=float(win.times[0]), velocities=velocities,
        )
    else:
        data = build_training_data(win.aligned, win.aligned_velocities, win.c_dot, basis, win.times)

    meta = {"n": n, "method": method, "reproject": bool(reproject), "naive_speed": bool(naive_speed)}
    if method == "galerkin":
        if pde is None:
            raise ValueError("Galerkin projection needs the full-order model")
        ops = assemble_sr_galerkin(pde, basis, tpl)
        if naive_speed:
            ops = SrRomOperators(ops.geometry, ops.dynamics, basis, tpl, "naive")
        return LearnedModel(ops, data, None, meta)
    if method != "opinf":
        raise ValueError(f"unknown method {method!r}")
    if naive_speed:
        res = train_standard_opinf(data, train_cfg)
        ops = SrRomOperators(geometry, res.dynamics, basis, tpl, "naive")
    else:
        res = train(data, geometry, train_cfg)
        ops = SrRomOperators(geometry, res.dynamics, basis, tpl)
    meta.update(final_loss=res.final_loss, iterations=res.iterations, converged=res.converged)
    return LearnedModel(ops, data, res, meta)


def forecast(ops: SrRomOperators, u_init: Field, times, cfg: IntegratorConfig = IntegratorConfig(),
             c_prev=None) -> tuple[RomTrajectory, Field]:
    """Forecast from a lab-frame snapshot and reconstruct lab-frame fields.

    The initial shift is the representative in ``[-L/2, L/2)`` unless
    ``c_prev`` selects another branch.
    """
    times = np.asarray(times, float)
    a0, c0 = initial_state(ops, u_init, c_prev)
    traj = integrate_rom(ops, a0, float(c0), (times[0], times[-1]), times, cfg)
    return traj, reconstruct_solution(ops, traj)
