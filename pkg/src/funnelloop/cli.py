"""Command line entry points: run a scenario, calibrate a funnel library,
or plot a recorded run log."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from funnelloop.dynamics import BicycleModel, TrackingController
from funnelloop.funnels import FunnelConfig, FunnelLibrary, build_library
from funnelloop.orchestrator import PlannerConfig
from funnelloop.plots import emit_plots
from funnelloop.simulator import RunLog, Scenario, run


def _load_model_config(path):
    cfg = json.loads(Path(path).read_text()) if path else {}
    model = BicycleModel(
        dt=cfg.get("dt", 0.01),
        u_min=np.asarray(cfg.get("u_min", [0.0, -1.1])),
        u_max=np.asarray(cfg.get("u_max", [1.0, 1.1])),
    )
    controller = TrackingController(
        model,
        kp=np.asarray(cfg.get("kp", [[1.2, 0, 0], [0, 6.5, 0.4]])),
        kd=np.asarray(cfg.get("kd", [[0.15, 0, 0], [0, 3.0, 0]])),
    )
    funnel_kwargs = {k: v for k, v in cfg.get("funnels", {}).items()}
    return model, controller, FunnelConfig(**funnel_kwargs)


def cmd_calibrate(args):
    model, controller, funnel_cfg = _load_model_config(args.model)
    library = build_library(model, controller, funnel_cfg, seed=args.seed)
    library.save(args.out)
    print(f"calibrated {len(library)} funnels (clearance {library.clearance:.3f} m) "
          f"-> {args.out}")


def cmd_run(args):
    scenario = Scenario.from_json(args.scenario)
    if args.seed is not None:
        scenario.seed = args.seed
    if args.library:
        library = FunnelLibrary.load(args.library)
    else:
        model = BicycleModel()
        library = build_library(model, TrackingController(model), FunnelConfig(),
                                seed=0)
    cfg = PlannerConfig()
    if args.plan_hz:
        cfg.plan_period = 1.0 / args.plan_hz

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.serve:
        from funnelloop.server import serve

        log = serve(scenario, library, cfg, port=args.serve, speed=args.speed)
    else:
        log = run(scenario, library, cfg, progress=not args.headless)
    log_path = out / "run.ndjson"
    log.write(log_path)
    print(f"log -> {log_path} (collision epochs: {log.meta['collision_epochs']})")
    if not args.headless:
        files = emit_plots(log, out, world_map=scenario.world_map)
        for f in files:
            print(f"plot -> {f}")


def cmd_plot(args):
    log = RunLog.load(args.log)
    files = emit_plots(log, args.out, world_map=args.map)
    for f in files:
        print(f"plot -> {f}")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="funnelloop")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a scenario")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--headless", action="store_true")
    p_run.add_argument("--serve", type=int, metavar="PORT",
                       help="stream frames over WebSocket and accept commands")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--plan-hz", type=float, default=None)
    p_run.add_argument("--library", default=None,
                       help="funnel library JSON (default: calibrate in-process)")
    p_run.add_argument("--speed", type=float, default=1.0,
                       help="real-time factor when serving")
    p_run.set_defaults(func=cmd_run)

    p_cal = sub.add_parser("calibrate", help="build a funnel library")
    p_cal.add_argument("--model", default=None, help="model config JSON")
    p_cal.add_argument("--out", required=True)
    p_cal.add_argument("--seed", type=int, default=0)
    p_cal.set_defaults(func=cmd_calibrate)

    p_plot = sub.add_parser("plot", help="render figures from a run log")
    p_plot.add_argument("--log", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--map", default=None)
    p_plot.set_defaults(func=cmd_plot)

    args = parser.parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
