"""Command-line interface: training, evaluation, sweeps, calibration.

Every command is non-interactive and writes its resolved configuration as
JSON next to its outputs, so any run can be reproduced from its artifacts
alone. Exit codes: 0 success, 1 configuration error, 2 runtime divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import config as config_io
from . import gapeval, ppo, randomize, sensing
from .dynamics import SUBSTEP
from .errors import ConfigError, SimulationDivergedError, TrainingDivergedError

OUTPUT_ROOT_VAR = "QUADLOCO_OUTPUT_ROOT"


class _Parser(argparse.ArgumentParser):
    """Argument errors map to exit code 1, like every other config error."""

    def error(self, message):
        raise ConfigError(message)


def _output_root() -> str:
    return os.environ.get(OUTPUT_ROOT_VAR, os.path.join(os.getcwd(), "runs"))


def _resolve_output(args, default_name: str) -> str:
    out = args.output or os.path.join(_output_root(), default_name)
    os.makedirs(out, exist_ok=True)
    return out


def _parse_assignment(text: str, flag: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"{flag} expects name=value, got {text!r}")
    name, value = text.split("=", 1)
    return name.strip(), value.strip()


def _coerce(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    return value


# ---------------------------------------------------------------------------
# train


def _build_train_config(args) -> ppo.TrainConfig:
    if args.config:
        cfg = ppo.train_config_from_dict(config_io.load_json(args.config))
    elif args.task == "trot":
        cfg = ppo.trot_train_config()
    else:
        cfg = ppo.gallop_train_config()

    env = cfg.env
    if args.obs:
        env = replace(env, observation_space=args.obs)
    env = replace(env, randomize=args.randomize,
                  perturbation=replace(env.perturbation, enabled=args.perturb))
    if args.baseline_actuator:
        env = replace(env, actuator_model="constraint")
    if args.no_latency_model:
        env = replace(env, latency_enabled=False)
    for item in args.set_param or ():
        name, value = _parse_assignment(item, "--set-param")
        overrides = dict(env.param_overrides)
        overrides[name] = _coerce(value)
        env = replace(env, param_overrides=overrides)
    for item in args.set_range or ():
        name, value = _parse_assignment(item, "--set-range")
        parts = value.split(",")
        if len(parts) != 2:
            raise ConfigError(f"--set-range expects name=lo,hi, got {item!r}")
        overrides = dict(env.range_overrides)
        overrides[name] = (float(parts[0]), float(parts[1]))
        env = replace(env, range_overrides=overrides)

    cfg = replace(cfg, env=env, run_seed=args.seed, total_steps=args.steps,
                  num_workers=args.workers, parallel=not args.serial)
    for item in args.set_hyper or ():
        name, value = _parse_assignment(item, "--set-hyper")
        if not hasattr(cfg, name) or name == "env":
            raise ConfigError(f"unknown training hyperparameter {name!r}")
        cfg = replace(cfg, **{name: _coerce(value)})
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    cfg = _build_train_config(args)
    name = (f"train-{args.task}-{cfg.env.observation_space}"
            f"-seed{cfg.run_seed}")
    out = _resolve_output(args, name)
    config_io.save_json(os.path.join(out, "config.json"),
                        ppo.train_config_to_dict(cfg))

    def report(row):
        print(f"iter {row['iteration']:4d}  steps {row['env_steps']:8d}  "
              f"return {row['mean_return']:8.3f}  len {row['mean_length']:6.1f}  "
              f"lr {row['lr']:.2e}", flush=True)

    result = ppo.train(cfg, output_dir=out, on_iteration=report,
                       resume_from=args.resume)
    print(f"done: {result.env_steps} steps in {result.iterations} iterations")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"curve: {result.curve_path}")
    return 0


# ---------------------------------------------------------------------------
# evaluation family


def _load_checkpoint(path: str):
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    return ppo.load_checkpoint(path)


def cmd_eval(args) -> int:
    agent, train_cfg, _ = _load_checkpoint(args.checkpoint)
    env_cfg = gapeval.deployment_config(train_cfg.env)
    if args.pseudo_real:
        env_cfg = gapeval.PseudoRealConfig().apply(env_cfg)
    result = gapeval.evaluate_policy(agent, env_cfg, args.episodes, args.seed)
    metrics = [gapeval.gait_metrics(t) for t in result.traces]
    out = _resolve_output(args, "eval")
    payload = result.to_dict()
    payload["gait_metrics"] = metrics
    payload["pseudo_real"] = bool(args.pseudo_real)
    config_io.save_json(os.path.join(out, "eval.json"), payload)
    config_io.save_json(os.path.join(out, "eval_config.json"), {
        "checkpoint": os.path.abspath(args.checkpoint),
        "episodes": args.episodes, "seed": args.seed,
        "pseudo_real": bool(args.pseudo_real),
        "env": config_io.env_config_to_dict(env_cfg),
    })
    best = max(range(len(metrics)), key=lambda i: metrics[i]["distance"])
    _write_trace_csv(os.path.join(out, "best_episode.csv"),
                     result.traces[best])
    print(f"return {result.mean:.3f} +/- {result.stderr:.3f} "
          f"(success rate {result.success_rate:.2f})")
    print(f"best episode: {metrics[best]['distance']:.2f} m at "
          f"{metrics[best]['speed']:.2f} m/s")
    return 0


def _write_trace_csv(path: str, trace) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in trace.csv_rows():
            writer.writerow(row)


def cmd_gap(args) -> int:
    agent, train_cfg, _ = _load_checkpoint(args.checkpoint)
    sim_cfg = gapeval.deployment_config(train_cfg.env)
    pseudo = gapeval.PseudoRealConfig()
    report = gapeval.reality_gap(agent, sim_cfg, pseudo,
                                 n_episodes=args.episodes, seed=args.seed)
    out = _resolve_output(args, "gap")
    config_io.save_json(os.path.join(out, "gap.json"), report.to_dict())
    config_io.save_json(os.path.join(out, "gap_config.json"), {
        "checkpoint": os.path.abspath(args.checkpoint),
        "episodes": args.episodes, "seed": args.seed,
        "pseudo_real": pseudo.to_dict(),
        "sim_env": config_io.env_config_to_dict(sim_cfg),
    })
    print(f"sim return    {report.sim_mean:8.3f} +/- {report.sim_stderr:.3f}")
    print(f"pseudo-real   {report.pseudo_real_mean:8.3f} +/- "
          f"{report.pseudo_real_stderr:.3f}")
    print(f"gap           {report.gap:8.3f}")
    return 0


def cmd_sweep(args) -> int:
    agent, train_cfg, _ = _load_checkpoint(args.checkpoint)
    env_cfg = gapeval.deployment_config(train_cfg.env)
    sweep = gapeval.parameter_sweep(agent, env_cfg, args.param,
                                    n_values=args.values,
                                    n_episodes=args.episodes, seed=args.seed)
    out = _resolve_output(args, f"sweep-{args.param}")
    sweep.write_csv(os.path.join(out, f"sweep_{args.param}.csv"))
    config_io.save_json(os.path.join(out, "sweep_config.json"), {
        "checkpoint": os.path.abspath(args.checkpoint),
        "parameter": args.param, "values": args.values,
        "episodes": args.episodes, "seed": args.seed,
        "env": config_io.env_config_to_dict(env_cfg),
    })
    for row in sweep.rows:
        print(f"{args.param} = {row.value:8.4f}  return {row.mean:8.3f} "
              f"+/- {row.std:.3f}")
    return 0


def cmd_robustness(args) -> int:
    agent, train_cfg, _ = _load_checkpoint(args.checkpoint)
    env_cfg = gapeval.deployment_config(train_cfg.env)
    report = gapeval.robustness_report(agent, env_cfg, n_values=args.values,
                                       n_episodes=args.episodes,
                                       seed=args.seed)
    out = _resolve_output(args, "robustness")
    config_io.save_json(os.path.join(out, "robustness.json"), report.to_dict())
    for name, sweep in report.sweeps.items():
        sweep.write_csv(os.path.join(out, f"sweep_{name}.csv"))
    config_io.save_json(os.path.join(out, "robustness_config.json"), {
        "checkpoint": os.path.abspath(args.checkpoint),
        "values": args.values, "episodes": args.episodes, "seed": args.seed,
        "env": config_io.env_config_to_dict(env_cfg),
    })
    print(f"mean return across {len(report.sweeps) * args.values} test "
          f"environments: {report.mean:.3f} (std {report.std:.3f})")
    return 0


def cmd_calibrate_latency(args) -> int:
    policy_injected = (args.injected if args.injected is not None else 15.0) / 1e3
    control_step = args.control_step / 1e3
    policy_plant = sensing.CalibrationPlant(latency=policy_injected,
                                            control_step=control_step)
    policy_measured = sensing.measure_latency(policy_plant)
    inner_injected = 0.003
    inner_plant = sensing.CalibrationPlant(latency=inner_injected,
                                           control_step=0.003)
    inner_measured = sensing.measure_latency(inner_plant)
    report = {
        "policy_loop": {"injected_ms": policy_injected * 1e3,
                        "measured_ms": policy_measured * 1e3,
                        "control_step_ms": control_step * 1e3},
        "inner_loop": {"injected_ms": inner_injected * 1e3,
                       "measured_ms": inner_measured * 1e3,
                       "control_step_ms": 3.0},
        "substep_ms": SUBSTEP * 1e3,
    }
    out = _resolve_output(args, "calibration")
    config_io.save_json(os.path.join(out, "latency_calibration.json"), report)
    print(f"policy loop: injected {policy_injected * 1e3:.1f} ms, "
          f"measured {policy_measured * 1e3:.1f} ms")
    print(f"inner loop:  injected {inner_injected * 1e3:.1f} ms, "
          f"measured {inner_measured * 1e3:.1f} ms")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> _Parser:
    parser = _Parser(prog="quadloco",
                     description="Quadruped locomotion training and "
                                 "sim-to-real evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a policy", parents=[])
    train.add_argument("--task", choices=("gallop", "trot"), default="gallop")
    train.add_argument("--obs", choices=("small", "large"), default=None,
                       help="override the task's observation space")
    train.add_argument("--steps", type=int, default=500_000)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--workers", type=int, default=25)
    train.add_argument("--config", help="training config JSON to start from")
    train.add_argument("--resume", help="checkpoint to resume from")
    train.add_argument("--output", help="output directory")
    train.add_argument("--serial", action="store_true",
                       help="disable the rollout process pool")
    randomize_group = train.add_mutually_exclusive_group()
    randomize_group.add_argument("--randomize", dest="randomize",
                                 action="store_true", default=True)
    randomize_group.add_argument("--no-randomize", dest="randomize",
                                 action="store_false")
    perturb_group = train.add_mutually_exclusive_group()
    perturb_group.add_argument("--perturb", dest="perturb",
                               action="store_true", default=False)
    perturb_group.add_argument("--no-perturb", dest="perturb",
                               action="store_false")
    train.add_argument("--baseline-actuator", action="store_true",
                       help="train on the constraint-style actuator")
    train.add_argument("--no-latency-model", action="store_true",
                       help="train without observation/servo latency")
    train.add_argument("--set-param", action="append", metavar="NAME=VALUE",
                       help="override a nominal dynamics parameter")
    train.add_argument("--set-range", action="append", metavar="NAME=LO,HI",
                       help="override a randomization range")
    train.add_argument("--set-hyper", action="append", metavar="NAME=VALUE",
                       help="override a training hyperparameter")
    train.set_defaults(func=cmd_train)

    def eval_like(name, help_text):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--checkpoint", required=True)
        cmd.add_argument("--episodes", type=int, default=gapeval.EVAL_EPISODES)
        cmd.add_argument("--seed", type=int, default=0)
        cmd.add_argument("--output", help="output directory")
        return cmd

    ev = eval_like("eval", "evaluate a checkpoint with the mean policy")
    ev.add_argument("--pseudo-real", action="store_true",
                    help="evaluate on the held-out pseudo-real plant")
    ev.set_defaults(func=cmd_eval)

    gap = eval_like("gap", "reality-gap report for a checkpoint")
    gap.set_defaults(func=cmd_gap)

    sweep = eval_like("sweep", "single-parameter robustness sweep")
    sweep.add_argument("--param", required=True,
                       choices=randomize.PARAMETER_NAMES)
    sweep.add_argument("--values", type=int, default=10)
    sweep.set_defaults(func=cmd_sweep, episodes=3)

    robust = eval_like("robustness", "all-parameter robustness aggregate")
    robust.add_argument("--values", type=int, default=10)
    robust.set_defaults(func=cmd_robustness, episodes=3)

    cal = sub.add_parser("calibrate-latency",
                         help="measure latency with a PWM spike")
    cal.add_argument("--injected", type=float, default=None, metavar="MS",
                     help="injected policy-loop latency in ms (default 15)")
    cal.add_argument("--control-step", type=float, default=6.0, metavar="MS")
    cal.add_argument("--output", help="output directory")
    cal.set_defaults(func=cmd_calibrate_latency)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SimulationDivergedError, TrainingDivergedError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
