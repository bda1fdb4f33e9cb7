"""Command-line entry point: solve, synth, fit, validate, export-stamps.

stdout carries key=value summaries only; diagnostics go to stderr.
Exit codes: 0 success, 1 input error, 2 numerical failure.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

import data_io
from devices import (
    ExpLoad,
    IMParams,
    PQLoad,
    ZIPLoad,
    exp_currents,
    im_sweep_model,
    pq_sweep_model,
    zip_currents,
)
from errors import GridGlassError, InputError
from glass_fitting import FitConfig, GlassFitter, SweepSpec, holdout_split, synthesize, validate
from glass_model import GlassKind
from power_flow import PowerFlowSolver, SolverOptions
from settings import Settings, configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2


def emit(**values):
    """One machine-readable line on stdout."""
    parts = []
    for key, value in values.items():
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = repr(float(value))
        parts.append(f"{key}={value}")
    print(" ".join(parts))


def _read_json(path, what):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as err:
        raise InputError(f"cannot read {what} {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise InputError(f"{what} {path}: invalid JSON at line {err.lineno}: {err.msg}") from None


def model_from_spec(spec, base_dir=Path(".")):
    """Measurement model callable(v, tag) -> current from a JSON model block.

    {"model": "im", "r_s": .., "x_s": .., "x_m": .., "r_r": .., "poles": 4, "omega_s": 377}
    {"model": "pq", "p": .., "q": ..}, {"model": "zip", ...}, {"model": "exp", ...},
    {"model": "glass", "template": "file.json"}
    """
    kind = spec.get("model")
    try:
        if kind == "im":
            params = IMParams(R_s=spec["r_s"], X_s=spec["x_s"], X_m=spec["x_m"], R_r=spec["r_r"],
                              p=int(spec.get("poles", 4)), omega_s=spec.get("omega_s", 2 * math.pi * 60))
            motor = im_sweep_model(params)

            def model(v, tag):
                if tag is None:
                    raise InputError("induction-motor sweeps need torque values as tags")
                return motor(v, tag)
            return model
        if kind == "pq":
            return pq_sweep_model(PQLoad(spec["p"], spec.get("q", 0.0)))
        if kind == "zip":
            fields = {k: spec[k] for k in ("a_p", "b_p", "c_p", "a_q", "b_q", "c_q", "v_nom") if k in spec}
            load = ZIPLoad(spec["p0"], spec.get("q0", 0.0), **fields)
            return lambda v, tag: zip_currents(load, v)
        if kind == "exp":
            load = ExpLoad(spec["p0"], spec.get("q0", 0.0), spec["p_v"], spec["q_v"], spec.get("v_nom", 1.0))
            return lambda v, tag: exp_currents(load, v)
        if kind == "glass":
            template = data_io.load_template(base_dir / spec["template"])
            if template.kind is not GlassKind.VOLTAGE_DEPENDENT:
                raise InputError("only voltage-dependent templates can drive a voltage sweep")
            return lambda v, tag: template.evaluate(v)
    except KeyError as err:
        raise InputError(f"model spec is missing field {err}") from None
    except (TypeError, ValueError) as err:
        raise InputError(f"invalid model spec: {err}") from None
    raise InputError(f"unknown model {kind!r}, expected im, pq, zip, exp or glass")


# Commands

def cmd_solve(args, settings):
    case = data_io.load_case(args.case)
    options = SolverOptions.from_settings(settings, tol_v=args.tol, tol_kcl=args.tol,
                                          max_iter=args.max_iter, damping=args.damping)
    result = PowerFlowSolver(case, options).solve()
    for k, (dv, kcl) in enumerate(result.residual_history, start=1):
        emit(iteration=k, dv_inf=dv, kcl_inf=kcl)
    for bus, v in zip(case.buses, result.state):
        emit(bus=bus.id, v_re=v.re, v_im=v.im, v_mag=v.magnitude(), v_angle_deg=v.angle())
    emit(converged=result.converged, iterations=result.iterations)
    if args.out:
        paths = data_io.save_solution(result, case, args.out)
        logger.info("wrote %s and %s", *paths)
    return EXIT_OK if result.converged else EXIT_NUMERICAL


def cmd_synth(args, settings):
    model_path = Path(args.model)
    model = model_from_spec(_read_json(model_path, "model spec"), model_path.parent)
    sweep_data = _read_json(args.sweep, "sweep spec")
    if not isinstance(sweep_data, dict):
        raise InputError("sweep spec must be a JSON object")
    if args.noise is not None:
        sweep_data["noise_std"] = args.noise
    sweep_data["seed"] = args.seed if args.seed is not None else sweep_data.get("seed", settings.seed)
    try:
        sweep = SweepSpec.from_dict(sweep_data)
    except (TypeError, ValueError, KeyError) as err:
        raise InputError(f"invalid sweep spec: {err}") from None

    result = synthesize(model, sweep)
    minimum = args.min_fraction if args.min_fraction is not None else settings.min_synth_fraction
    if result.skipped:
        print(f"skipped {len(result.skipped)} of {result.attempted} sweep points", file=sys.stderr)
    if result.records:
        data_io.save_measurements(result.records, args.out)
    emit(records=len(result.records), skipped=len(result.skipped),
         success_fraction=result.success_fraction)
    if not result.records or result.success_fraction < minimum:
        print(f"only {result.success_fraction:.1%} of the sweep succeeded, need {minimum:.1%}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_fit(args, settings):
    records = data_io.load_measurements(args.measurements)
    if args.tag is not None:
        records = [r for r in records if r.tag is not None and r.tag == args.tag]
    try:
        config = FitConfig(kind=GlassKind(args.kind), order=args.order, ridge=args.ridge,
                           center_policy=args.center, units=args.units)
    except ValueError as err:
        raise InputError(str(err)) from None

    held_out = []
    if args.holdout:
        records, held_out = holdout_split(records, args.holdout,
                                          args.seed if args.seed is not None else settings.seed)
    report = GlassFitter(config).fit(records)
    data_io.save_template(report.template, args.out)
    emit(**report.summary())
    for label, _, g_r, g_i in report.template.coefficient_table():
        emit(term=label, real=g_r, imag=g_i)
    if held_out:
        check = validate(report.template, held_out)
        emit(holdout_records=check.n_records, holdout_rmse_r=check.rmse_r, holdout_rmse_i=check.rmse_i)
    return EXIT_OK


def cmd_validate(args, settings):
    template = data_io.load_template(args.template)
    if args.units and args.units != template.units:
        raise InputError(f"template is in {template.units} units, measurements declared {args.units}")
    records = data_io.load_measurements(args.measurements)
    report = validate(template, records)
    if args.out:
        data_io.save_report(report, args.out)
    emit(**report.summary())
    return EXIT_OK


def cmd_export_stamps(args, settings):
    case = data_io.load_case(args.case)
    options = SolverOptions.from_settings(settings, max_iter=args.iterations)
    written = []

    def dump(iteration, system):
        data_io.save_system(system, args.out_dir, iteration)
        written.append(iteration)

    result = PowerFlowSolver(case, options, on_iteration=dump).solve()
    emit(exported=len(written), out_dir=args.out_dir, converged=result.converged)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gridglass",
        description="Split-circuit power flow with fitted polynomial (GLASS) load models.",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging on stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="run a power flow on a case file")
    solve.add_argument("case", help="JSON case file")
    solve.add_argument("--tol", type=float, help="voltage and current tolerance (per-unit)")
    solve.add_argument("--max-iter", type=int)
    solve.add_argument("--damping", type=float)
    solve.add_argument("--out", help="results CSV (history goes to <stem>_history.csv)")
    solve.set_defaults(handler=cmd_solve)

    synth = commands.add_parser("synth", help="synthesize measurements from a physics model")
    synth.add_argument("model", help="JSON model spec")
    synth.add_argument("sweep", help="JSON sweep spec")
    synth.add_argument("--noise", type=float, help="current noise standard deviation")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--min-fraction", type=float, help="required share of feasible sweep points")
    synth.add_argument("--out", required=True, help="measurement CSV")
    synth.set_defaults(handler=cmd_synth)

    fit = commands.add_parser("fit", help="fit a template to measurements")
    fit.add_argument("measurements", help="measurement CSV")
    fit.add_argument("--order", type=int, default=3)
    fit.add_argument("--kind", choices=[k.value for k in GlassKind], default=GlassKind.VOLTAGE_DEPENDENT.value)
    fit.add_argument("--ridge", type=float, default=0.0)
    fit.add_argument("--center", choices=["data-mean", "zero"], default="data-mean")
    fit.add_argument("--units", choices=["per-unit", "si"], default="per-unit")
    fit.add_argument("--tag", type=float, help="fit only records with this tag")
    fit.add_argument("--holdout", type=float, help="fraction of records held out for checking")
    fit.add_argument("--seed", type=int)
    fit.add_argument("--out", required=True, help="template JSON")
    fit.set_defaults(handler=cmd_fit)

    check = commands.add_parser("validate", help="compare a template against measurements")
    check.add_argument("template", help="template JSON")
    check.add_argument("measurements", help="measurement CSV")
    check.add_argument("--units", choices=["per-unit", "si"], help="units of the measurements")
    check.add_argument("--out", help="comparison CSV")
    check.set_defaults(handler=cmd_validate)

    export = commands.add_parser("export-stamps", help="dump assembled matrices per iteration")
    export.add_argument("case", help="JSON case file")
    export.add_argument("--iterations", type=int, default=1)
    export.add_argument("--out-dir", required=True)
    export.set_defaults(handler=cmd_export_stamps)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        settings = Settings.from_env()
        configure_logging("DEBUG" if args.verbose else settings.log_level)
        return args.handler(args, settings)
    except GridGlassError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except np.linalg.LinAlgError as err:
        print(f"error: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
