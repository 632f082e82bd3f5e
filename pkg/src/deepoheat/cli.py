"""Command-line interface.

Every subcommand prints one JSON line on success. On failure it prints
``{"status": "error", "type": ..., "message": ...}`` to stderr and exits with
status 1 (2 for usage errors).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import ChipConfig, load_config, read_matrix, write_matrix
from .experiments import EXPERIMENTS, SCALES, run_experiment, setup
from .evaluation import benchmark, evaluate, export_slice, predict_field
from .fdm import export_csv, field_from_csv, solve, assemble
from .grf import GrfSampler, GrfSpec, rescale_to_power
from .operator import init_model, load_checkpoint
from .training import HtcFamily, PowerMapFamily, ScalingMap, TrainSpec, train

AXES = {"x": 0, "y": 1, "z": 2}


class CliError(Exception):
    pass


def _emit(payload: dict) -> None:
    print(json.dumps({"status": "ok", **payload}, default=float))


def _family(name: str, config: ChipConfig, meta: dict | None = None):
    meta = meta or {}
    if name == "powermap2d":
        return PowerMapFamily(config, length_scale=meta.get("length_scale", 0.3), p_max=meta.get("p_max", 2.0),
                              surface=meta.get("surface", "zmax"))
    if name == "htc-dual":
        lo, hi = meta.get("htc_range", (333.33, 1000.0))
        return HtcFamily(config, lo, hi, htc_scale=meta.get("htc_scale", 1000.0))
    raise CliError(f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}")


# --------------------------------------------------------------------------
# subcommands


def cmd_solve_fdm(args) -> dict:
    config = load_config(args.config)
    field = solve(assemble(config), tol=args.tol)
    export_csv(field, args.out)
    return {"out": args.out, "n_nodes": config.mesh.n_nodes, "t_min": float(field.values.min()),
            "t_max": float(field.values.max())}


def cmd_sample_grf(args) -> dict:
    sampler = GrfSampler(GrfSpec(args.m, args.length_scale, args.jitter), seed=args.seed)
    samples = sampler.sample(args.n)
    if not args.raw:
        samples = rescale_to_power(samples, args.p_max)
    os.makedirs(args.out, exist_ok=True)
    paths = []
    for i, s in enumerate(samples):
        path = os.path.join(args.out, f"grf_{i:04d}.txt")
        write_matrix(path, s)
        paths.append(path)
    return {"out": args.out, "n": len(paths)}


def cmd_train(args) -> dict:
    if args.experiment not in EXPERIMENTS:
        raise CliError(f"unknown experiment {args.experiment!r}; valid names: {', '.join(EXPERIMENTS)}")
    st = setup(args.experiment, args.scale, args.seed)
    config = load_config(args.config) if args.config else st.config
    family = _family(args.experiment, config)
    overrides = {k: v for k, v in dict(iterations=args.iterations, functions_per_iter=args.functions_per_iter,
                                       lr=args.lr, lr_decay=args.lr_decay, lr_decay_every=args.lr_decay_every,
                                       checkpoint_every=args.checkpoint_every, t_scale=args.t_scale).items()
                 if v is not None}
    spec = TrainSpec(**{**st.train.__dict__, **overrides, "seed": args.seed})
    model_spec = st.model
    branch_in = tuple(family.branch_in)
    if model_spec.branch_in != branch_in:
        model_spec = type(model_spec)(**{**model_spec.__dict__, "branch_in": branch_in})
    if args.no_head_bias:
        model_spec = type(model_spec)(**{**model_spec.__dict__, "head_bias": False})
    model = init_model(model_spec, seed=args.seed)
    result = train(model, config, family, spec, out_dir=args.out)
    h = result.history
    return {"out": args.out, "iterations": spec.iterations,
            "loss_first": h[0].total if h else None, "loss_last": h[-1].total if h else None}


def _load_case(args):
    model, meta = load_checkpoint(args.model)
    config = load_config(args.config)
    name = meta.get("experiment", "powermap2d")
    if name == "powermap2d":
        if args.powermap:
            config = config.with_surface_power(meta.get("surface", "zmax"), read_matrix(args.powermap))
        if args.htc_top is not None or args.htc_bottom is not None:
            raise CliError("--htc-top/--htc-bottom apply to htc-dual models only")
    else:
        family = _family(name, config, meta)
        top = args.htc_top if args.htc_top is not None else float(np.mean(config.bcs["zmax"].htc))
        bottom = args.htc_bottom if args.htc_bottom is not None else float(np.mean(config.bcs["zmin"].htc))
        config = family.config_for(top, bottom)
    family = _family(name, config, meta)
    scaling = ScalingMap.for_config(config, meta.get("t_scale", 20.0))
    return model, config, family, scaling


def cmd_predict(args) -> dict:
    model, config, family, scaling = _load_case(args)
    field = predict_field(model, config, family.encode(config), scaling)
    export_csv(field, args.out)
    return {"out": args.out, "n_nodes": config.mesh.n_nodes, "t_min": float(field.values.min()),
            "t_max": float(field.values.max())}


def cmd_evaluate(args) -> dict:
    if args.model:
        if not args.config:
            raise CliError("--model needs --config")
        model, config, family, scaling = _load_case(args)
        enc = family.encode(config)
        ref = solve(assemble(config))
        rep = evaluate(predict_field(model, config, enc, scaling), ref)
        bench = benchmark(model, config, enc, scaling, runs=args.runs)
        rep.pred_time_s, rep.oracle_time_s, rep.speedup = bench.pred_time_s, bench.oracle_time_s, bench.speedup
    elif args.pred and args.ref:
        rep = evaluate(field_from_csv(args.pred), field_from_csv(args.ref))
    else:
        raise CliError("give either --pred and --ref field CSVs, or --model and --config")
    out = rep.as_dict()
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=2, default=float)
    return out


def cmd_export_slice(args) -> dict:
    field = field_from_csv(args.field)
    axis = AXES[args.axis] if args.axis in AXES else int(args.axis)
    pgm, csv_path = export_slice(field, axis, args.index, args.out)
    return {"pgm": pgm, "csv": csv_path}


def cmd_run_experiment(args) -> dict:
    summary = run_experiment(args.name, args.scale, args.seed, args.out, iterations=args.iterations)
    return {"out": args.out, "reports": summary["reports"], "speedup": summary["benchmark"]["speedup"]}


# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"status": "error", "type": "UsageError", "message": message}), file=sys.stderr)
        self.exit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deepoheat", description="Chip thermal operator learning and finite-difference reference solver.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve-fdm", help="solve a config with the finite-difference oracle")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="field CSV")
    s.add_argument("--tol", type=float, default=1e-10)
    s.set_defaults(func=cmd_solve_fdm)

    s = sub.add_parser("sample-grf", help="write GRF power maps as matrix files")
    s.add_argument("--m", type=int, default=21)
    s.add_argument("--length-scale", type=float, default=0.3)
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--p-max", type=float, default=2.0, help="rescale each sample to [0, p-max]")
    s.add_argument("--raw", action="store_true", help="write raw samples without rescaling")
    s.add_argument("--jitter", type=float, default=1e-8)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample_grf)

    s = sub.add_parser("train", help="physics-informed training")
    s.add_argument("--config", help="config document (defaults to the experiment's reference chip)")
    s.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    s.add_argument("--scale", choices=SCALES, default="desk", help="default network and training settings")
    s.add_argument("--iterations", type=int)
    s.add_argument("--functions-per-iter", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--lr-decay", type=float)
    s.add_argument("--lr-decay-every", type=int)
    s.add_argument("--t-scale", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--no-head-bias", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    for name, func, helptext in (("predict", cmd_predict, "predict a temperature field"),
                                 ("evaluate", cmd_evaluate, "MAPE/PAPE and timing against the oracle")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--model", required=name == "predict", help="checkpoint (.npz)")
        s.add_argument("--config", required=name == "predict")
        s.add_argument("--powermap", help="matrix file replacing the surface power map")
        s.add_argument("--htc-top", type=float)
        s.add_argument("--htc-bottom", type=float)
        if name == "predict":
            s.add_argument("--out", required=True, help="field CSV")
        else:
            s.add_argument("--pred", help="predicted field CSV")
            s.add_argument("--ref", help="reference field CSV")
            s.add_argument("--runs", type=int, default=5, help="timing repetitions (min 5)")
            s.add_argument("--out", help="write the report as JSON")
        s.set_defaults(func=func)

    s = sub.add_parser("export-slice", help="PGM image and CSV of one mesh slice")
    s.add_argument("--field", required=True, help="field CSV")
    s.add_argument("--axis", default="z", help="x, y, z or 0, 1, 2")
    s.add_argument("--index", type=int, required=True)
    s.add_argument("--out", required=True, help="output path stem")
    s.set_defaults(func=cmd_export_slice)

    s = sub.add_parser("run-experiment", help="train, evaluate and export a full experiment")
    s.add_argument("--name", required=True)
    s.add_argument("--scale", choices=SCALES, default="desk")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--iterations", type=int, help="override the iteration count")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_run_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _emit(args.func(args))
    except Exception as exc:  # noqa: BLE001 - report every failure as one line
        print(json.dumps({"status": "error", "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
