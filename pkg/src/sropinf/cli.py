"""Command-line interface.

Subcommands::

    sropinf init-config PATH
    sropinf simulate CONFIG
    sropinf train CONFIG [--reproject] [--naive-cdot] [--method opinf|galerkin] [--n N]
    sropinf forecast CONFIG --operators FILE [--window NAME] [--shift THETA]
    sropinf evaluate CONFIG --rom FILE --fom FILE
    sropinf sweep CONFIG [--dims 4 5 6 7 8] [--raw]
    sropinf demo-advection [--a A] [--kappa K] [--n N]

Outputs go under ``paths.output`` of the configuration (``--out`` overrides).
A reduced model blowing up is a result, reported in the manifest with exit
code 0; configuration and file problems exit with 2, a full-order blow-up
during ``simulate`` with 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import DEFAULT_CONFIG, RunConfig, load_config
from .errors import BlowUpError, ConfigError
from .metrics_io import (
    FigureArtifact,
    amplitude_artifact,
    contour_artifact,
    dimension_sweep,
    emit_figure_data,
    error_report,
    error_vs_n_artifact,
    loss_curve_artifact,
    per_time_errors,
    relative_error,
    shift_artifact,
    write_summary,
)
from .models import FomConfig, advection_diffusion, read_simulation, simulate, write_simulation
from .opinf_train import read_operators, write_operators, write_training_log
from .pipeline import forecast, learn_operators, prepare_window
from .pod import project, write_basis_csv
from .rom_core import shifting_speed, write_trajectory_csv
from .spectral_field import Field, Grid, read_snapshot_csv, shift, write_snapshot_csv
from .symmetry import (
    Template,
    align_trajectory,
    aligned_velocity,
    reconstruction_speed,
    write_shift_log,
)

log = logging.getLogger("sropinf")


def _out(cfg: RunConfig, args) -> Path:
    return Path(args.out) if getattr(args, "out", None) else cfg.output


def _load_window(cfg: RunConfig, args, name: str):
    d = _out(cfg, args) / "fom" / name
    if not (d / "snapshots.csv").exists():
        raise FileNotFoundError(
            f"no simulated window '{name}' at {d}; run 'sropinf simulate' first"
        )
    return read_simulation(d, cfg.grid)


def _common_meta(cfg: RunConfig, args) -> dict:
    return {"config": cfg.raw, "seed": args.seed, "version": __version__}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_init_config(args) -> int:
    p = Path(args.path)
    if p.exists() and not args.force:
        raise FileExistsError(f"{p} exists (use --force to overwrite)")
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(yaml.safe_dump(DEFAULT_CONFIG, sort_keys=False))
    print(f"wrote {p}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = _out(cfg, args) / "fom"
    pde, fom = cfg.pde, cfg.fom
    log.info("simulating %s to t=%g with dt=%g", pde.name, fom.t_final, fom.dt)
    try:
        res = simulate(pde, cfg.initial_condition, fom, velocities=cfg.velocities)
    except BlowUpError as exc:
        print(f"error: full-order simulation blew up: {exc}", file=sys.stderr)
        return 1
    ic = cfg.raw["fom"]["initial_condition"]
    for name, (a, b) in cfg.windows.items():
        write_simulation(res.window(a, b), out / name, {"window": [a, b], "initial_condition": ic})
    write_summary(out / "manifest.json", {
        **_common_meta(cfg, args), **res.meta,
        "initial_condition": ic, "windows": cfg.windows,
    })
    print(f"wrote windows {sorted(cfg.windows)} to {out}")
    return 0


def _train_tag(n, method, reproject, naive):
    if method == "galerkin":
        return f"n{n}_galerkin" + ("_naive" if naive else "")
    return f"n{n}_{'reproj' if reproject else 'raw'}" + ("_naive" if naive else "")


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    n = args.n or cfg.n
    tpl = cfg.template
    win = prepare_window(_load_window(cfg, args, args.window), tpl)
    model = learn_operators(
        cfg.pde, win, n, tpl, method=args.method, reproject=args.reproject,
        train_cfg=cfg.training, dt=cfg.fom.dt, scheme=cfg.fom.scheme,
        naive_speed=args.naive_cdot, velocities=cfg.velocities,
    )
    tag = args.tag or _train_tag(n, args.method, args.reproject, args.naive_cdot)
    d = _out(cfg, args) / "train" / tag
    write_operators(d / "operators.json", model.operators, {**model.meta, "seed": args.seed})
    write_basis_csv(d / "basis.csv", model.operators.basis)
    write_shift_log(d / "shift_log.csv", win.times, win.c, win.c_dot)
    summary = {**_common_meta(cfg, args), **model.meta, "window": args.window, "tag": tag}
    if model.result is not None:
        write_training_log(d / "training_log.csv", model.result)
        emit_figure_data([loss_curve_artifact({tag: model.result.loss_history})], d / "figures")
        print(f"final loss {model.result.final_loss:.6e} after {model.result.iterations} CG "
              f"iterations (converged={model.result.converged})")
    if args.naive_cdot:
        pred = np.atleast_1d(shifting_speed(model.operators, model.data.a))
        truth = model.data.c_dot
        summary.update(naive_cdot_max_abs=float(np.max(np.abs(pred))),
                       true_cdot_mean=float(np.mean(truth)))
        print(f"naive c_dot on training states: max |c_dot| = {np.max(np.abs(pred)):.3e}; "
              f"reconstruction-equation c_dot mean = {np.mean(truth):.6g}")
    write_summary(d / "manifest.json", summary)
    print(f"wrote operators to {d / 'operators.json'}")
    return 0


def cmd_forecast(args) -> int:
    cfg = load_config(args.config)
    ops, op_meta = read_operators(args.operators)
    if ops.basis.grid != cfg.grid:
        raise ConfigError("operator file grid does not match the configuration grid")
    sim = _load_window(cfg, args, args.window)
    fom = shift(sim.snapshots, args.shift) if args.shift else sim.snapshots
    traj, rec = forecast(ops, fom[0], sim.times, cfg.integrator)
    rep = error_report(rec, traj, fom, ops.n, "forecast")
    tpl = ops.template
    fom_aligned, c_fom = align_trajectory(fom, tpl)
    tag = args.tag or f"{Path(args.operators).parent.name}_{args.window}"
    d = _out(cfg, args) / "forecast" / tag
    write_trajectory_csv(d / "trajectory.csv", traj)
    write_snapshot_csv(d / "reconstruction.csv", rec)
    a_fom = project(ops.basis, fom_aligned)
    arts = [
        contour_artifact(sim.times, fom, "fom_field"),
        contour_artifact(sim.times, fom_aligned, "fom_aligned_field"),
        contour_artifact(traj.times, rec, "rom_field"),
        amplitude_artifact(sim.times, a_fom, traj.a),
    ]
    if sim.velocities is not None:
        fv = shift(sim.velocities, args.shift) if args.shift else sim.velocities
        cd_fom = np.atleast_1d(reconstruction_speed(fom_aligned, aligned_velocity(fv, c_fom), tpl))
        arts.append(shift_artifact(sim.times, c_fom, traj.c, cd_fom, traj.c_dot))
    if len(traj.times):
        arts.append(FigureArtifact("per_time_error", {"t": traj.times, "error": rep.per_time}))
    emit_figure_data(arts, d / "figures")
    summary = {
        **_common_meta(cfg, args), "operators": str(args.operators), "operator_meta": op_meta,
        "window": args.window, "shift": args.shift, "status": traj.status, "t_stop": traj.t_stop,
        "relative_error": rep.relative_error, "prefix_error": rep.prefix_error,
        "c_fom": [float(c_fom[0]), float(c_fom[-1])],
        "c_rom": [float(traj.c[0]), float(traj.c[-1])] if len(traj.c) else None,
        "n": ops.n, "integrator": traj.info,
    }
    write_summary(d / "manifest.json", summary)
    if traj.completed:
        print(f"forecast completed; relative error {100 * rep.relative_error:.3f}%")
    else:
        print(f"forecast stopped ({traj.status}) at t={traj.t_stop:.4f}; relative error = inf "
              f"(covered-prefix error {100 * (rep.prefix_error or np.nan):.3f}%)")
    print(f"wrote {d}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    for p in (args.rom, args.fom):
        if not Path(p).exists():
            raise FileNotFoundError(f"input file not found: {p}")
    rom = read_snapshot_csv(args.rom, cfg.grid)
    fom = read_snapshot_csv(args.fom, cfg.grid)
    m = rom.batch_shape[0]
    if m > fom.batch_shape[0]:
        raise ValueError(f"ROM has {m} snapshots but the reference only {fom.batch_shape[0]}")
    full = m == fom.batch_shape[0]
    err = relative_error(rom, fom[:m])
    summary = {"relative_error": err if full else float("inf"), "covered_error": err,
               "n_rom": m, "n_fom": fom.batch_shape[0], "rom": str(args.rom), "fom": str(args.fom)}
    if args.output:
        write_summary(args.output, summary)
        emit_figure_data([FigureArtifact("per_time_error", {
            "index": np.arange(m), "error": per_time_errors(rom, fom[:m])})],
            Path(args.output).parent)
    print(json.dumps({k: (v if np.isfinite(v) else "inf") if isinstance(v, float) else v
                      for k, v in summary.items()}))
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    tpl = cfg.template
    win = prepare_window(_load_window(cfg, args, args.window), tpl)
    dims = args.dims or cfg.sweep_dims
    entries = dimension_sweep(cfg.pde, win, tpl, dims, cfg.training, cfg.integrator,
                              reproject=not args.raw, dt=cfg.fom.dt, scheme=cfg.fom.scheme)
    d = _out(cfg, args) / "sweep"
    emit_figure_data([error_vs_n_artifact(entries)], d)
    write_summary(d / "manifest.json", {**_common_meta(cfg, args),
                                        "entries": [e.as_dict() for e in entries]})
    for e in entries:
        row = e.as_dict()
        fmt = lambda v: "n/a" if v is None else ("inf" if not np.isfinite(v) else f"{100 * v:.3f}%")
        print(f"n={e.n}: projection {fmt(row['projection_error'])}, SR-Galerkin "
              f"{fmt(row['galerkin_error'])}, SR-OpInf {fmt(row['opinf_error'])}"
              + (f"  [{e.error}]" if e.error else ""))
    return 0


def cmd_demo_advection(args) -> int:
    grid = Grid()
    pde = advection_diffusion(args.a, args.kappa, grid)
    # even initial profile and even template
    u0 = Field.from_modes(grid, [(0, "cos", 0.5), (1, "cos", 1.0), (2, "cos", 0.6), (3, "cos", 0.3)])
    tpl = Template.cosine(grid)
    sim = simulate(pde, u0, FomConfig(dt=1e-3, t_final=args.t_final, record_interval=0.01))
    win = prepare_window(sim, tpl)
    naive = learn_operators(pde, win, args.n, tpl, naive_speed=True)
    full = learn_operators(pde, win, args.n, tpl)
    a = naive.data.a
    c_naive = np.atleast_1d(shifting_speed(naive.operators, a))
    c_learned = np.atleast_1d(shifting_speed(full.operators, a))
    print(f"advection-diffusion a={args.a}, kappa={args.kappa}, n={args.n}, {len(a)} snapshots")
    print(f"  full-order c_dot (reconstruction equation): mean {np.mean(win.c_dot):.10f}, "
          f"max |c_dot - a| = {np.max(np.abs(win.c_dot - args.a)):.3e}")
    print(f"  naive c_dot from the modes' span:            max |c_dot| = {np.max(np.abs(c_naive)):.3e}")
    print(f"  learned rational c_dot model:                mean {np.mean(c_learned):.10f}, "
          f"max |c_dot - a| = {np.max(np.abs(c_learned - args.a)):.3e}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sropinf", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", help="YAML configuration file")
            sp.add_argument("--out", help="output directory (overrides paths.output)")
        sp.add_argument("--seed", type=int, default=0, help="recorded in manifests; runs are deterministic")

    sp = sub.add_parser("init-config", help="write the default configuration")
    sp.add_argument("path")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_init_config, seed=0)

    sp = sub.add_parser("simulate", help="run the full-order model and write the windows")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="learn reduced operators from a simulated window")
    common(sp)
    sp.add_argument("--reproject", action="store_true", help="train on a re-projected data set")
    sp.add_argument("--naive-cdot", action="store_true",
                    help="learn only the dynamics and close c_dot from the modes' span")
    sp.add_argument("--method", choices=("opinf", "galerkin"), default="opinf")
    sp.add_argument("--n", type=int, help="reduced dimension (overrides rom.n)")
    sp.add_argument("--window", default="train")
    sp.add_argument("--tag", help="output sub-directory name")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("forecast", help="integrate a reduced model over a window")
    common(sp)
    sp.add_argument("--operators", required=True, help="operators.json from 'train'")
    sp.add_argument("--window", default="train")
    sp.add_argument("--shift", type=float, default=0.0,
                    help="translate the initial snapshot (and the reference) by this amount")
    sp.add_argument("--tag")
    sp.set_defaults(func=cmd_forecast)

    sp = sub.add_parser("evaluate", help="relative error between two snapshot CSV files")
    common(sp)
    sp.add_argument("--rom", required=True)
    sp.add_argument("--fom", required=True)
    sp.add_argument("--output", help="write a JSON summary (and per-time errors) here")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep", help="errors against reduced dimension")
    common(sp)
    sp.add_argument("--dims", type=int, nargs="+")
    sp.add_argument("--raw", action="store_true", help="train on raw instead of re-projected data")
    sp.add_argument("--window", default="train")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("demo-advection", help="naive vs learned c_dot on advection-diffusion")
    common(sp, config=False)
    sp.add_argument("--a", type=float, default=1.0)
    sp.add_argument("--kappa", type=float, default=0.1)
    sp.add_argument("--n", type=int, default=3)
    sp.add_argument("--t-final", type=float, default=2.0)
    sp.set_defaults(func=cmd_demo_advection)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, FileExistsError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
