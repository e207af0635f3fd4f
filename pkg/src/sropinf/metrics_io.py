"""Error metrics, dimension sweeps and per-figure CSV emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .models import QuadraticPde
from .opinf_train import TrainingConfig
from .pod import project, reconstruct
from .rom_core import IntegratorConfig, RomTrajectory
from .spectral_field import Field, norm
from .symmetry import Template

__all__ = [
    "relative_error",
    "per_time_errors",
    "ErrorReport",
    "error_report",
    "SweepEntry",
    "dimension_sweep",
    "FigureArtifact",
    "emit_figure_data",
    "loss_curve_artifact",
    "contour_artifact",
    "error_vs_n_artifact",
    "amplitude_artifact",
    "shift_artifact",
    "write_summary",
]


def _check_pair(rom: Field, fom: Field):
    if rom.grid != fom.grid or rom.coeffs.shape != fom.coeffs.shape:
        raise ValueError(
            f"sequences do not match: {rom.coeffs.shape} vs {fom.coeffs.shape}"
        )


def relative_error(rom: Field, fom: Field) -> float:
    """``sqrt(sum_m ||u_rom - u||^2 / sum_m ||u||^2)`` over matching batches.

    Raises
    ------
    ValueError
        On length mismatch or an all-zero reference.
    """
    _check_pair(rom, fom)
    den = float(np.sum(np.asarray(norm(fom)) ** 2))
    if den == 0.0:
        raise ValueError("reference sequence is identically zero")
    return float(np.sqrt(np.sum(np.asarray(norm(rom - fom)) ** 2) / den))


def per_time_errors(rom: Field, fom: Field) -> np.ndarray:
    """Pointwise-in-time ratios ``||u_rom - u|| / ||u||``."""
    _check_pair(rom, fom)
    return np.atleast_1d(np.asarray(norm(rom - fom)) / np.asarray(norm(fom)))


@dataclass(frozen=True)
class ErrorReport:
    """Relative error of one forecast.

    ``relative_error`` is ``inf`` when the run stopped before covering the
    window; ``prefix_error`` is then the error over the samples it did cover.
    """

    relative_error: float
    per_time: np.ndarray
    status: str
    n: int | None = None
    t_stop: float | None = None
    prefix_error: float | None = None
    label: str = ""

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("per_time")
        return d


def error_report(rom: Field, traj: RomTrajectory, fom: Field, n: int | None = None,
                 label: str = "") -> ErrorReport:
    """Score a (possibly truncated) forecast against the full-order window."""
    m = rom.batch_shape[0] if rom.batch_shape else 0
    total = fom.batch_shape[0]
    if m == 0:
        return ErrorReport(math.inf, np.zeros(0), traj.status, n, traj.t_stop, None, label)
    part = fom[:m]
    pt = per_time_errors(rom, part)
    prefix = relative_error(rom, part)
    if traj.completed and m == total:
        return ErrorReport(prefix, pt, traj.status, n, None, prefix, label)
    return ErrorReport(math.inf, pt, traj.status, n, traj.t_stop, prefix, label)


@dataclass
class SweepEntry:
    """Errors for one reduced dimension."""

    n: int
    projection_error: float = math.nan
    galerkin: ErrorReport | None = None
    opinf: ErrorReport | None = None
    final_loss: float = math.nan
    error: str | None = None

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "projection_error": self.projection_error,
            "galerkin_error": None if self.galerkin is None else self.galerkin.relative_error,
            "opinf_error": None if self.opinf is None else self.opinf.relative_error,
            "galerkin_status": None if self.galerkin is None else self.galerkin.status,
            "opinf_status": None if self.opinf is None else self.opinf.status,
            "final_loss": self.final_loss,
            "error": self.error,
        }


def dimension_sweep(pde: QuadraticPde, window, tpl: Template, dims: Sequence[int],
                    train_cfg: TrainingConfig = TrainingConfig(),
                    integ_cfg: IntegratorConfig = IntegratorConfig(),
                    reproject: bool = True, dt: float = 1e-3, scheme: str = "ars343",
                    include_galerkin: bool = True) -> list[SweepEntry]:
    """Projection, SR-Galerkin and SR-OpInf errors for each ``n`` in ``dims``.

    ``window`` is an :class:`~sropinf.pipeline.AlignedWindow`. A failure for
    one ``n`` is recorded in its entry and the sweep moves on.
    """
    from .pipeline import forecast, learn_operators

    out = []
    for n in dims:
        entry = SweepEntry(int(n))
        try:
            model = learn_operators(pde, window, n, tpl, reproject=reproject, train_cfg=train_cfg,
                                    dt=dt, scheme=scheme)
            basis = model.operators.basis
            entry.projection_error = relative_error(
                reconstruct(basis, project(basis, window.aligned)), window.aligned
            )
            entry.final_loss = model.result.final_loss
            traj, rec = forecast(model.operators, window.snapshots[0], window.times, integ_cfg)
            entry.opinf = error_report(rec, traj, window.snapshots, n, "sr-opinf")
            if include_galerkin:
                gal = learn_operators(pde, window, n, tpl, method="galerkin", basis=basis)
                traj, rec = forecast(gal.operators, window.snapshots[0], window.times, integ_cfg)
                entry.galerkin = error_report(rec, traj, window.snapshots, n, "sr-galerkin")
        except Exception as exc:  # recorded, sweep continues
            entry.error = f"{type(exc).__name__}: {exc}"
        out.append(entry)
    return out


# ---------------------------------------------------------------------------
# figure data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FigureArtifact:
    """One CSV table: ``columns`` maps header -> 1-D array (equal lengths)."""

    name: str
    columns: dict = field(default_factory=dict)


def emit_figure_data(artifacts: Sequence[FigureArtifact], directory) -> list[Path]:
    """Write each artifact to ``<directory>/<name>.csv``; returns the paths written."""
    paths = []
    if not artifacts:
        return paths
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for art in artifacts:
        cols = {k: np.ravel(np.asarray(v, dtype=float)) for k, v in art.columns.items()}
        lengths = {len(v) for v in cols.values()}
        if len(lengths) > 1:
            raise ValueError(f"columns of {art.name!r} have different lengths {sorted(lengths)}")
        p = d / f"{art.name}.csv"
        with p.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(list(cols))
            for row in zip(*cols.values()):
                wr.writerow([repr(float(v)) for v in row])
        paths.append(p)
    return paths


def loss_curve_artifact(histories: dict, name: str = "training_loss") -> FigureArtifact:
    """Loss against CG iteration, one column per labelled run (shorter runs padded with NaN)."""
    m = max(len(h) for h in histories.values())
    cols = {"iteration": np.arange(m)}
    for label, h in histories.items():
        col = np.full(m, np.nan)
        col[: len(h)] = h
        cols[label] = col
    return FigureArtifact(name, cols)


def contour_artifact(times, fields: Field, name: str) -> FigureArtifact:
    """Space-time matrix in long form: columns ``t, x, u`` on the output grid."""
    vals = np.atleast_2d(fields.values())
    x = fields.grid.x()
    tt, xx = np.meshgrid(np.asarray(times)[: len(vals)], x, indexing="ij")
    return FigureArtifact(name, {"t": tt, "x": xx, "u": vals})


def error_vs_n_artifact(entries: Sequence[SweepEntry], name: str = "error_vs_n") -> FigureArtifact:
    rows = [e.as_dict() for e in entries]
    num = lambda v: np.nan if v is None else v
    return FigureArtifact(name, {
        "n": [r["n"] for r in rows],
        "projection": [num(r["projection_error"]) for r in rows],
        "sr_galerkin": [num(r["galerkin_error"]) for r in rows],
        "sr_opinf": [num(r["opinf_error"]) for r in rows],
    })


def amplitude_artifact(times, a_fom, a_rom, modes=(0, 2), name: str = "amplitudes") -> FigureArtifact:
    """Reduced coordinates of FOM and ROM (0-based mode indices; default ``a_1, a_3``)."""
    m = min(len(a_fom), len(a_rom))
    cols = {"t": np.asarray(times)[:m]}
    for i in modes:
        cols[f"a{i + 1}_fom"] = np.asarray(a_fom)[:m, i]
        cols[f"a{i + 1}_rom"] = np.asarray(a_rom)[:m, i]
    return FigureArtifact(name, cols)


def shift_artifact(times, c_fom, c_rom, cdot_fom, cdot_rom, name: str = "shift") -> FigureArtifact:
    m = min(len(c_fom), len(c_rom))
    return FigureArtifact(name, {
        "t": np.asarray(times)[:m],
        "c_fom": np.asarray(c_fom)[:m], "c_rom": np.asarray(c_rom)[:m],
        "c_dot_fom": np.asarray(cdot_fom)[:m], "c_dot_rom": np.asarray(cdot_rom)[:m],
    })


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_summary(path, summary: dict) -> Path:
    """JSON manifest of scalar results; non-finite floats are written as strings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True))
    return path
