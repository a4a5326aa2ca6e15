"""Command-line front end.

Subcommands mirror the pipeline stages: ``solve-field`` rasterizes and
solves a device layout, ``levels`` prints the four-level structure,
``calibrate`` measures pulse durations for one transition, and
``run`` / ``ensemble`` execute a full configured experiment. All failures
exit nonzero with a stage-tagged message on stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .electrostatics import export_field_table, grid_from_layout, solve_poisson
from .spin_system import default_si_p_params, level_structure
from .workflow import (CalibrationError, PipelineError, calibrate_rabi,
                       run_pipeline)


def _device_params(args):
    p = default_si_p_params()
    updates = {}
    if getattr(args, "a_iso", None) is not None:
        updates["a_iso"] = args.a_iso
    if getattr(args, "b0", None) is not None:
        updates["b0"] = args.b0
    if getattr(args, "b_ac", None) is not None:
        updates["b_ac"] = args.b_ac
    return p.with_(**updates) if updates else p


def _cmd_solve_field(args) -> int:
    layout_path = Path(args.layout)
    with open(layout_path, encoding="utf-8") as fh:
        layout = json.load(fh)
    grid = grid_from_layout(layout)
    field = solve_poisson(grid, tol=args.tol, max_iters=args.max_iters)
    out = Path(args.out) if args.out else layout_path.with_suffix("").with_name(
        layout_path.stem + "_field.csv")
    export_field_table(field, out)
    nx, ny, nz = field.shape
    print(f"solved {nx}x{ny}x{nz} grid (spacing {field.spacing:g} m)")
    print(f"potential range [{field.potential.min():.6g}, "
          f"{field.potential.max():.6g}] V")
    print(f"field table written to {out}")
    return 0


def _cmd_levels(args) -> int:
    p = _device_params(args)
    ls = level_structure(p)
    print(f"B0 = {p.b0:g} T, A_iso = {p.a_iso / 1e6:.6g} MHz")
    print("levels (MHz):")
    for i, (e, lab) in enumerate(zip(ls.energies_hz, ls.labels)):
        print(f"  {i}: {lab:>9s}  {e / 1e6:+.6f}")
    print("transitions:")
    for name, tr in sorted(ls.transitions.items()):
        omega = 2.0 * math.pi * tr.frequency_hz
        print(f"  {name:>10s}: {tr.frequency_hz / 1e6:12.6f} MHz "
              f"(first order {tr.first_order_hz / 1e6:12.6f} MHz, "
              f"omega {omega / 1e6:10.4f} Mrad/s)")
    return 0


def _cmd_calibrate(args) -> int:
    p = _device_params(args)
    if p.b_ac <= 0.0:
        p = p.with_(b_ac=1e-4)
    cal = calibrate_rabi(p, args.transition, args.t_max)
    print(f"transition {cal.transition}: drive omega = {cal.omega / 1e6:.4f} Mrad/s")
    print(f"  t_pi      = {cal.t_pi:.6e} s")
    print(f"  t_pi_half = {cal.t_pi_half:.6e} s")
    print(f"  Rabi freq = {cal.rabi_frequency:.4f} Hz")
    print(f"  leakage   = {cal.leakage:.3e}")
    return 0


def _cmd_run(args, require_ensemble: bool) -> int:
    cfg_path = Path(args.config)
    with open(cfg_path, encoding="utf-8") as fh:
        config = json.load(fh)
    if require_ensemble and not config.get("ensemble"):
        raise PipelineError("ensemble",
                            ValueError("config has no 'ensemble' section"))
    report = run_pipeline(config, base_dir=cfg_path.parent)
    result = report["result"]
    if result["mode"] == "ensemble":
        print(f"ensemble mean fidelity = {result['mean_fidelity']:.6f} "
              f"+/- {result['std_error']:.2e} "
              f"({len(result['samples'])} samples)")
    else:
        print(f"final fidelity = {result['final_fidelity']:.6f}")
    out = config.get("output", {})
    for key in ("trace_csv", "report_json"):
        if key in out:
            print(f"{key} written to {out[key]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="donorlab",
        description="design/verification workbench for single-donor spin qubits",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sf = sub.add_parser("solve-field", help="solve a device layout's potential")
    sf.add_argument("layout", help="layout JSON file")
    sf.add_argument("--out", help="output field-table CSV path")
    sf.add_argument("--tol", type=float, default=1e-8)
    sf.add_argument("--max-iters", type=int, default=100_000)

    lv = sub.add_parser("levels", help="print the four-level structure")
    lv.add_argument("--a-iso", type=float, help="hyperfine coupling, Hz")
    lv.add_argument("--b0", type=float, help="static field, T")

    cal = sub.add_parser("calibrate", help="measure pulse durations")
    cal.add_argument("transition",
                     choices=["nmr_e_down", "nmr_e_up", "esr_n_up", "esr_n_down"])
    cal.add_argument("--t-max", type=float, default=2e-4,
                     help="calibration window, s")
    cal.add_argument("--a-iso", type=float)
    cal.add_argument("--b0", type=float)
    cal.add_argument("--b-ac", type=float)

    run = sub.add_parser("run", help="run a configured experiment")
    run.add_argument("config", help="config JSON file")

    ens = sub.add_parser("ensemble", help="run a configured ensemble")
    ens.add_argument("config", help="config JSON file")

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve-field":
            return _cmd_solve_field(args)
        if args.command == "levels":
            return _cmd_levels(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        if args.command == "run":
            return _cmd_run(args, require_ensemble=False)
        if args.command == "ensemble":
            return _cmd_run(args, require_ensemble=True)
        raise ValueError(f"unknown command {args.command!r}")
    except PipelineError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 2
    except CalibrationError as exc:
        print(f"error [calibrate] {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
