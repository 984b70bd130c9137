"""Command-line entry points: gen-priors, fit-jet, train, eval, ablate, plot.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. Relative
output paths are placed under ``$AMPLOCO_OUTPUT_ROOT`` when it is set.
"""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np
import yaml

from . import jetdyn, priors
from .config import OUTPUT_ROOT_ENV, AblationPlan, RunConfig, VARIANTS
from .dynamics import RobotModel, load_model
from .errors import AmpLocoError, ConfigError, RankDeficient
from .plot import line_plot

log = logging.getLogger("amploco")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _out(path):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- gen-priors ---------------------------------------------------------------

def cmd_gen_priors(args):
    model = load_model(args.robot) if args.robot else RobotModel()
    walk, fly = priors.default_priors(model, args.walk, args.fly, args.seed)
    out = _out(args.out)
    os.makedirs(out, exist_ok=True)
    manifest = {"seed": args.seed, "feature_dim": priors.FEATURE_DIM, "rate_hz": priors.CONTROL_HZ}
    for name, ds in (("walk", walk), ("fly", fly)):
        path = os.path.join(out, f"{name}.prior")
        if len(ds) == 0:
            if os.path.exists(path):
                os.remove(path)
            manifest[name] = {"file": None, "note": "no clips requested"}
            print(f"{name}: 0 clips (dataset not written)")
            continue
        priors.save_dataset(ds, path)
        frames = ds.frames()
        manifest[name] = {"file": os.path.basename(path), "clips": len(ds), "frames": int(frames.shape[0]),
                          "pairs": int(ds.n_pairs)}
        print(f"{name}: {len(ds)} clips, {frames.shape[0]} frames, {ds.n_pairs} pairs -> {path}")
        print(f"  feature mean: {np.array2string(frames.mean(0), precision=3, max_line_width=200)}")
        print(f"  feature std:  {np.array2string(frames.std(0), precision=3, max_line_width=200)}")
    _write_json(os.path.join(out, "manifest.json"), manifest)
    return EXIT_OK


# -- fit-jet ------------------------------------------------------------------

def _synthetic_logs(params, n_logs, samples, dt, noise, rng):
    logs = []
    for _ in range(n_logs):
        u = jetdyn.random_throttle_profile(samples, dt, rng)
        logs.append(jetdyn.simulate_log(params, u, dt, noise, rng if noise > 0 else None))
    return logs


def cmd_fit_jet(args):
    rng = np.random.default_rng(args.seed)
    report = {}
    if args.logs:
        logs = jetdyn.load_logs(args.logs)
        valid = []
    else:
        truth = jetdyn.calibrate_default()
        logs = _synthetic_logs(truth, args.n_logs, args.samples, args.dt, args.noise, rng)
        valid = _synthetic_logs(truth, max(1, args.n_logs // 2), args.samples, args.dt, args.noise, rng)
        report["true_coefficients"] = truth.coefficients.tolist()
        report["noise_n"] = args.noise
        if args.save_logs:
            d = _out(args.save_logs)
            os.makedirs(d, exist_ok=True)
            for i, lg in enumerate(logs):
                jetdyn.save_log(lg, os.path.join(d, f"train_{i:02d}.txt"))
            for i, lg in enumerate(valid):
                jetdyn.save_log(lg, os.path.join(d, f"valid_{i:02d}.txt"))
    params, fit_report = jetdyn.fit(logs, order=args.order)
    report["train_mae_n"] = fit_report["mae_n"]
    report["train_rmse_n"] = fit_report["rmse_n"]
    report["coefficients"] = fit_report["coefficients"]
    scores = jetdyn.validate(params, valid) if valid else fit_report
    report["mae_n"] = scores["mae_n"]
    report["rmse_n"] = scores["rmse_n"]
    report["evaluated_on"] = "held-out logs" if valid else "fitting logs"
    out = _out(args.out)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w") as fh:
        yaml.safe_dump(params.to_dict(), fh, sort_keys=True)
    report_path = _out(args.report) if args.report else os.path.splitext(out)[0] + "_report.json"
    _write_json(report_path, report)
    print(f"MAE {report['mae_n']:.4f} N, RMSE {report['rmse_n']:.4f} N ({report['evaluated_on']})")
    print(f"parameters -> {out}; report -> {report_path}")
    return EXIT_OK


# -- train / eval -------------------------------------------------------------

def _print_row(row):
    log.info("iter %d steps %d task %.4f style %.4f episodes %d ep_task_return %s kl %s",
             row["iteration"], row["env_steps"], row["mean_task"], row["mean_style"], row["episodes"],
             row["ep_task_return"], row["kl"])


def run_training(cfg: RunConfig, out_dir, iterations=None):
    from .ppo import train
    os.makedirs(out_dir, exist_ok=True)
    cfg.dump(os.path.join(out_dir, "resolved_config.yaml"))
    t = cfg.tree
    trainer, rows = train(cfg.env_config(), cfg.ppo_config(), cfg.amp_config(), cfg.load_priors(),
                          iterations=t["iterations"] if iterations is None else iterations,
                          seed=t["seed"], out_dir=out_dir, checkpoint_every=t["checkpoint_every"],
                          workers=t["workers"], log=_print_row)
    return trainer, rows


def cmd_train(args):
    cfg = RunConfig.load(args.config, args.override)
    out = _out(args.out) if args.out else cfg.output_dir()
    _, rows = run_training(cfg, out)
    print(f"{len(rows)} iterations -> {out}")
    return EXIT_OK


def cmd_eval(args):
    from .ppo import evaluate_checkpoint
    cfg = RunConfig.load(args.config, args.override)
    out = _out(args.out) if args.out else os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)),
                                                       "eval_report.json")
    traj_dir = os.path.join(os.path.dirname(os.path.abspath(out)), "trajectories") if args.trajectories else None
    report = evaluate_checkpoint(args.checkpoint, cfg.env_config(), args.episodes,
                                 deterministic=not args.stochastic, seed=args.seed,
                                 trajectory_dir=traj_dir)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    _write_json(out, report)
    print(f"duration fraction {report['mean_duration_fraction']:.3f}, task return "
          f"{report['mean_task_return']:.3f}, thrust usage {report['mean_thrust_usage']:.3f}, "
          f"waypoints {report['mean_waypoints']:.2f} -> {out}")
    return EXIT_OK


# -- ablate -------------------------------------------------------------------

ABLATION_FIELDS = ("variant", "duration_fraction", "reward_fraction", "thrust_usage", "mean_task_return",
                   "mean_waypoints", "seeds")


def run_ablation(base: RunConfig, plan: AblationPlan, walk_path, fly_path, out_dir, iterations=None):
    from .ppo import evaluate_checkpoint
    os.makedirs(out_dir, exist_ok=True)
    results, errors = {}, {}
    for variant in plan.variants:
        paths = plan.priors_for(variant, walk_path, fly_path)
        per_seed = []
        try:
            for seed in plan.seeds:
                cfg = RunConfig.from_dict(base.resolved(), base_dir=base.base_dir,
                                          overrides=[("amp.priors", paths), ("seed", seed)])
                run_dir = os.path.join(out_dir, variant, f"seed_{seed}")
                run_training(cfg, run_dir, iterations)
                rep = evaluate_checkpoint(os.path.join(run_dir, "checkpoint_final.npz"), cfg.env_config(),
                                          plan.episodes, deterministic=True, seed=seed)
                _write_json(os.path.join(run_dir, "eval_report.json"), rep)
                per_seed.append(rep)
        except Exception as exc:  # one failing variant must not abort the others
            log.error("variant %s failed: %s", variant, exc)
            errors[variant] = f"{type(exc).__name__}: {exc}"
            continue
        results[variant] = {k: float(np.mean([r[f"mean_{k}"] for r in per_seed]))
                            for k in ("duration_fraction", "task_return", "thrust_usage", "waypoints")}
    r_bar = max((r["task_return"] for r in results.values()), default=float("nan"))
    rows = []
    for variant in plan.variants:
        if variant not in results:
            continue
        r = results[variant]
        rows.append({"variant": variant, "duration_fraction": r["duration_fraction"],
                     "reward_fraction": r["task_return"] / r_bar if r_bar else float("nan"),
                     "thrust_usage": r["thrust_usage"], "mean_task_return": r["task_return"],
                     "mean_waypoints": r["waypoints"], "seeds": list(plan.seeds)})
    report = {"r_bar": r_bar, "rows": rows, "errors": errors, "seeds": list(plan.seeds),
              "episodes": plan.episodes}
    _write_json(os.path.join(out_dir, "ablation_report.json"), report)
    with open(os.path.join(out_dir, "ablation_table.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ABLATION_FIELDS[:-1], extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
    return report


def cmd_ablate(args):
    base = RunConfig.load(args.config, args.override)
    plan = AblationPlan(tuple(args.variants.split(",")), tuple(int(s) for s in args.seeds.split(",")),
                        args.episodes)
    for variant in plan.variants:
        needed = plan.priors_for(variant, args.walk_priors, args.fly_priors)
        for p in needed:
            if p is None or not os.path.isfile(p):
                raise ConfigError(f"variant {variant} needs a prior dataset, not found: {p}", "priors")
    out = _out(args.out) if args.out else os.path.join(base.output_dir(), "ablation")
    report = run_ablation(base, plan, args.walk_priors and os.path.abspath(args.walk_priors),
                          args.fly_priors and os.path.abspath(args.fly_priors), out, args.iterations)
    for row in report["rows"]:
        print(f"{row['variant']:>10}: duration {row['duration_fraction']:.3f} reward "
              f"{row['reward_fraction']:.3f} thrust usage {row['thrust_usage']:.3f}")
    return EXIT_OK if not report["errors"] else EXIT_RUNTIME


# -- plot ---------------------------------------------------------------------

def _read_metrics(path):
    rows = []
    with open(path) as fh:
        for k, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{k}: not a JSON record") from exc
    if not rows:
        raise ValueError(f"{path}: no metrics rows")
    return rows


def _num(v):
    return float("nan") if v is None else float(v)


def plot_file(path, out_dir):
    stem = os.path.splitext(os.path.basename(path))[0]
    outputs = {}
    if path.endswith(".jsonl"):
        rows = _read_metrics(path)
        x = [_num(r["env_steps"]) for r in rows]
        outputs[f"{stem}_reward.svg"] = line_plot(
            [("mean task reward", x, [_num(r["mean_task"]) for r in rows]),
             ("mean total reward", x, [_num(r["mean_total"]) for r in rows])],
            "Reward per step", "environment steps", "reward")
        lengths = [_num(r.get("ep_length")) for r in rows]
        if any(np.isfinite(lengths)):
            outputs[f"{stem}_episode_length.svg"] = line_plot(
                [("episode length", x, lengths)], "Episode length", "environment steps", "steps")
    else:
        with open(path) as fh:
            header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing column header")
        cols = header[1:].split()
        data = np.loadtxt(path, ndmin=2)
        if data.size == 0 or data.shape[1] != len(cols):
            raise ValueError(f"{path}: malformed trajectory file")
        c = {name: data[:, i] for i, name in enumerate(cols)}
        t = c["time"].tolist()
        outputs[f"{stem}_thrust.svg"] = line_plot(
            [("jet 0", t, c["thrust0"].tolist()), ("jet 1", t, c["thrust1"].tolist())],
            "Thrust", "time [s]", "thrust [N]")
        outputs[f"{stem}_height.svg"] = line_plot([("base z", t, c["z"].tolist())], "Base height",
                                                  "time [s]", "z [m]")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, svg in outputs.items():
        p = os.path.join(out_dir, name)
        with open(p, "w") as fh:
            fh.write(svg)
        written.append(p)
    return written


def cmd_plot(args):
    out = _out(args.out)
    rendered = []
    for path in args.files:
        rendered += plot_file(path, out)
    for p in rendered:
        print(p)
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="amploco", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-priors", help="generate walk and fly motion-prior datasets")
    g.add_argument("--out", default="priors")
    g.add_argument("--walk", type=int, default=20)
    g.add_argument("--fly", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--robot", help="robot model YAML")
    g.set_defaults(func=cmd_gen_priors)

    f = sub.add_parser("fit-jet", help="identify the jet lag model from throttle logs")
    src = f.add_mutually_exclusive_group()
    src.add_argument("--logs", help="glob of text logs (time throttle thrust)")
    src.add_argument("--synthetic", action="store_true", help="simulate logs from the default engine")
    f.add_argument("--noise", type=float, default=0.0, help="thrust noise std (N), synthetic mode")
    f.add_argument("--n-logs", type=int, default=4)
    f.add_argument("--samples", type=int, default=3000)
    f.add_argument("--dt", type=float, default=0.01)
    f.add_argument("--order", type=int, default=3)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--save-logs", help="directory for the synthetic logs")
    f.add_argument("--out", default="jet_params.yaml")
    f.add_argument("--report")
    f.set_defaults(func=cmd_fit_jet)

    t = sub.add_parser("train", help="train a policy")
    t.add_argument("config")
    t.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--config", required=True)
    e.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    e.add_argument("--episodes", type=int, default=5)
    e.add_argument("--stochastic", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--trajectories", action="store_true", help="export one trajectory file per episode")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and compare prior-dataset variants")
    a.add_argument("config")
    a.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    a.add_argument("--walk-priors")
    a.add_argument("--fly-priors")
    a.add_argument("--variants", default=",".join(VARIANTS))
    a.add_argument("--seeds", default="0")
    a.add_argument("--episodes", type=int, default=3)
    a.add_argument("--iterations", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("plot", help="render metrics or trajectory files as SVG")
    pl.add_argument("files", nargs="+")
    pl.add_argument("--out", default="plots")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AmpLocoError, OSError, ValueError, FloatingPointError) as exc:
        msg = str(exc)
        if isinstance(exc, RankDeficient):
            msg += " (widen the throttle profile: hold several distinct levels across [u_min, 1])"
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
