"""Command-line entry point ``gfmsim``.

Exit codes: 0 ok, 2 configuration error, 3 numerical divergence,
4 acceptance-gate failure (``pipeline --check`` and ``gradcheck``).
"""
from __future__ import annotations

import argparse
import logging
import sys

from gfmsim.config import VARIANTS, RunConfig, resolve_seed
from gfmsim.dynamics.scenarios import SCENARIOS, make_scenario
from gfmsim.errors import ConfigurationError, CorruptFileError, DivergenceError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_GATE = 0, 2, 3, 4

log = logging.getLogger("gfmsim")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfmsim", description="Generalised-force sim-to-sim pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides RUN_SEED and the config)")
    common.add_argument("--out", help="output root directory")
    common.add_argument("--scenario", choices=SCENARIOS, help="override the configured scenario")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.add_parser("scenario-list", parents=[common], help="list scenarios and their dimensions")
    sub.add_parser("collect", parents=[common], help="record trajectories on the real model")
    sub.add_parser("sysid", parents=[common], help="fit actuator parameters by least squares")
    sub.add_parser("train-gfm", parents=[common], help="train one GFM per dataset chunk")
    tp = sub.add_parser("train-policy", parents=[common], help="train a task policy")
    tp.add_argument("--variant", choices=VARIANTS, default="default")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a task policy on the real model")
    ev.add_argument("--variant", choices=VARIANTS, default="default")
    pl = sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    pl.add_argument("--check", action="store_true", help="exit 4 when a self-check gate fails")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    gc.add_argument("--nets", type=int, default=20)
    sub.add_parser("report", parents=[common], help="regenerate CSV plot data from artifacts")
    return p


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.scenario:
        import dataclasses

        cfg = dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, scenario=args.scenario))
    cfg = cfg.with_seed(resolve_seed(args.seed, cfg))
    if args.out:
        cfg = cfg.with_out(args.out)
    return cfg


def _scenario_list() -> None:
    print("name,joint_dim,q_dim,v_dim,free_bodies")
    for name in SCENARIOS:
        spec = make_scenario(name, 0).spec
        print(f"{name},{spec.joint_dim},{spec.q_dim},{spec.v_dim},{'+'.join(spec.free_bodies) or '-'}")


def _gradcheck(nets: int, seed: int) -> int:
    from gfmsim.approximator import gradient_check

    err = gradient_check(nets, seed)
    print(f"max relative error {err:.3e} over {nets} networks")
    return EXIT_OK if err < 1e-4 else EXIT_GATE


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "scenario-list":
            _scenario_list()
            return EXIT_OK
        cfg = _load_config(args)
        if args.command == "gradcheck":
            return _gradcheck(args.nets, cfg.seed)
        from gfmsim import pipeline as P

        if args.command == "pipeline":
            run = P.run_pipeline(cfg)
            print(run.directory)
            if args.check:
                failed = False
                for name, ok, detail in P.gates(run):
                    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
                    failed |= not ok
                return EXIT_GATE if failed else EXIT_OK
            return EXIT_OK
        run = P.Run.create(cfg)
        if args.command == "collect":
            ds = P.stage_collect(run)
            print(f"{len(ds)} trajectories ({ds.dropped} dropped) -> {run.path('dataset.gfmt')}")
        elif args.command == "sysid":
            params = P.stage_sysid(run)
            print(", ".join(f"{k}={v:.6g}" for k, v in params.items()))
        elif args.command == "train-gfm":
            hybrid = P.stage_train_gfm(run)
            print(f"ensemble of {len(hybrid)} GFMs -> {run.directory}")
        elif args.command == "train-policy":
            P.stage_train_policy(run, args.variant)
            print(run.path(f"policy_{args.variant}.ckpt"))
        elif args.command == "eval":
            rep = P.stage_eval(run, args.variant)
            print(rep.summary())
        elif args.command == "report":
            for path in P.emit_plot_data(run):
                print(path)
        return EXIT_OK
    except (ConfigurationError, CorruptFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


cli_dispatch = main

if __name__ == "__main__":
    sys.exit(main())
