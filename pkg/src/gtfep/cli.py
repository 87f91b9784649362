"""``gtfep`` command line: one subcommand per experiment.

Every run writes ``manifest.json`` into the output directory before any
result file, then CSV outputs, then prints a one-line summary.  Options can
also come from a flat ``key = value`` file passed with ``--config``;
command-line flags win over the file.

Exit codes: 0 ok, 1 a check failed, 2 usage, 3 missing or unusable data,
4 config error, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .apc import ApcConfig, SingularFitError, with_bounds
from .seeds import derive_seed

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DATA, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3, 4, 5
OUT_ENV = "GTFEP_OUT"
DEFAULT_OUT = "gtfep_out"


class ConfigError(ValueError):
    def __init__(self, path, line: int, key: str, message: str):
        super().__init__(f"{path}:{line}: field {key!r}: {message}")


class CheckFailed(RuntimeError):
    pass


# -- argument parsing ------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if not parts:
        raise argparse.ArgumentTypeError("expected at least one number")
    return tuple(float(p) for p in parts)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--dataset", default=None, help="roundabout CSV (track_id,type,lon,lat,time)")
    p.add_argument("--synthetic", action="store_true", help="use the built-in synthetic task")
    p.add_argument("--config", default=None, help="flat key = value file; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gtfep", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"gtfep {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("sweep", help="credit versus precision on the prediction task")
    _common(p)
    p.add_argument("--betas", type=_floats, default=(0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0))
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--perms", type=int, default=20)
    p.add_argument("--agents", type=int, default=10, help="tracks used as agents with --dataset")

    p = sub.add_parser("apc-run", help="adaptive precision during supervised training")
    _common(p)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--strategy", choices=("apc", "fixed", "random"), default="apc")
    p.add_argument("--beta0", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=None, help="APC step (default tuned for the task)")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--agents", type=int, default=10)

    p = sub.add_parser("vicsek-sweep", help="flock polarisation versus precision")
    _common(p)
    p.add_argument("--betas", type=_floats, default=None)
    p.add_argument("--nu", type=float, default=0.1)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--n-agents", type=int, default=100)

    p = sub.add_parser("vicsek-apc", help="adaptive precision in the flock under rising noise")
    _common(p)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--nu-start", type=float, default=0.1)
    p.add_argument("--nu-end", type=float, default=0.5)
    p.add_argument("--beta0", type=float, default=7.6)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--beta-max", type=float, default=None)
    p.add_argument("--fixed-betas", type=_floats, default=None)

    p = sub.add_parser("marl", help="independent Q-learning with fixed, random and adaptive precision")
    _common(p)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--strategies", type=lambda s: tuple(s.replace(",", " ").split()), default=None)

    p = sub.add_parser("nash-check", help="unilateral deviation gain against the Gibbs policy")
    _common(p)
    p.add_argument("--players", type=int, default=3)
    p.add_argument("--actions", type=int, default=3)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--games", type=int, default=100)

    p = sub.add_parser("credit-bench", help="credit rules on a coalition table measured up to order 3")
    _common(p)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--episodes", type=int, default=5, help="episodes per coalition")
    p.add_argument("--max-order", type=int, default=3)

    p = sub.add_parser("selftest", help="fast internal invariant checks")
    _common(p)
    return parser


def read_config(path) -> dict[str, tuple[int, str, str]]:
    """``key = value`` lines; ``#`` starts a comment.  Returns key -> (line, raw key, value)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(path, 0, "--config", f"cannot read file ({exc.strerror})") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(path, lineno, key or line, "expected 'key = value'")
        dest = key.lstrip("-").replace("-", "_")
        if dest in out:
            raise ConfigError(path, lineno, key, f"duplicate key (first set on line {out[dest][0]})")
        out[dest] = (lineno, key, value.strip())
    return out


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def apply_config(sub: argparse.ArgumentParser, path) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for dest, (lineno, key, value) in read_config(path).items():
        if dest not in actions:
            raise ConfigError(path, lineno, key, f"unknown option for {sub.prog!r}")
        action = actions[dest]
        try:
            if isinstance(action, argparse._StoreTrueAction):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError("expected true or false")
                converted = value.lower() in ("true", "1", "yes")
            else:
                converted = action.type(value) if action.type else value
                if action.choices is not None and converted not in action.choices:
                    raise ValueError(f"expected one of {list(action.choices)}")
        except (ValueError, TypeError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(path, lineno, key, f"bad value {value!r}: {exc}") from None
        defaults[dest] = converted
    sub.set_defaults(**defaults)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        apply_config(_subparser(parser, args.command), args.config)
        args = parser.parse_args(argv)
    if args.dataset and args.synthetic:
        parser.error("--dataset and --synthetic are mutually exclusive")
    return args


# -- run plumbing ------------------------------------------------------------------

class Run:
    """Output directory, manifest and seed bookkeeping for one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        self.seeds: dict[str, int] = {}
        self.outputs: list[str] = []
        self.extra: dict = {}
        self.started = time.time()

    def seed(self, tag: str, cell: int = 0) -> int:
        s = derive_seed(self.args.seed, f"{self.args.command}/{tag}", cell)
        self.seeds[f"{tag}:{cell}"] = s
        return s

    def manifest(self, outputs: Sequence[str], **extra) -> None:
        self.extra.update(extra)
        config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(self.args).items())}
        doc = {
            "command": self.args.command,
            "config": config,
            "derived_seeds": self.seeds,
            "build": {"gtfep": __version__, "python": platform.python_version(), "numpy": np.__version__},
            "started_unix": round(self.started, 3),
            "outputs": list(outputs),
            **self.extra,
        }
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.outputs = list(outputs)

    def finish(self) -> None:
        self.manifest(self.outputs, wall_clock_s=round(time.time() - self.started, 3))

    def path(self, name: str) -> Path:
        return self.out / name


def _traj_task(args, run: Run):
    from .traj import TrajTask, load_tracks, make_samples, synthetic_task
    if args.dataset:
        table = load_tracks(args.dataset).head(args.agents)
        return TrajTask.from_samples(make_samples(table)), "dataset"
    return synthetic_task(seed=run.seed("task")), "synthetic"


# -- subcommands -------------------------------------------------------------------

def cmd_sweep(args, run: Run) -> str:
    from .traj import run_inverted_u_sweep
    task, source = _traj_task(args, run)
    run.manifest(["sweep.csv"], source=source)
    res = run_inverted_u_sweep(task, args.betas, args.runs, run.seed("noise"), args.perms)
    res.write_csv(run.path("sweep.csv"))
    f = res.fit
    peak = f"{f.peak:.3f}" if f.a < 0 else "none (a >= 0)"
    return f"sweep[{source}]: peak beta {peak}, a={f.a:.4g}, R2={f.r_squared:.3f} over {len(args.betas)} betas"


def cmd_apc_run(args, run: Run) -> str:
    from .traj import TRAJ_APC_CONFIG, TRAJ_REPLICATES, run_apc_training, write_apc_csv
    task, source = _traj_task(args, run)
    cfg = TRAJ_APC_CONFIG if args.eta is None else ApcConfig(eta=args.eta)
    reps = TRAJ_REPLICATES if args.replicates is None else args.replicates
    run.manifest(["apc.csv"], source=source)
    rows = run_apc_training(task, cfg, args.epochs, run.seed("train"), args.beta0,
                            strategy=args.strategy, replicates=reps)
    write_apc_csv(run.path("apc.csv"), rows)
    tail = rows[-50:]
    return (f"apc-run[{source}/{args.strategy}]: final beta {rows[-1][1]:.3f}, "
            f"last-{len(tail)} mean credit {np.mean([r[2] for r in tail]):.4f}, "
            f"mae {np.mean([r[3] for r in tail]):.4f}")


def cmd_vicsek_sweep(args, run: Run) -> str:
    from .apc import fit_quadratic
    from .vicsek import VICSEK_SWEEP_BETAS, FlockConfig, run_beta_sweep, write_sweep_csv
    betas = args.betas or VICSEK_SWEEP_BETAS
    cfg = FlockConfig(n_agents=args.n_agents)
    run.manifest(["vicsek_sweep.csv"])
    rows = run_beta_sweep(cfg, betas, args.nu, args.episodes, run.seed("episodes"))
    write_sweep_csv(run.path("vicsek_sweep.csv"), rows)
    f = fit_quadratic([(b, m) for b, m, _ in rows])
    best = max(rows, key=lambda r: r[1])
    return f"vicsek-sweep: max phi {best[1]:.4f} at beta {best[0]:g}, fit a={f.a:.4g}, vertex {f.peak:.3f}"


def cmd_vicsek_apc(args, run: Run) -> str:
    from .vicsek import (VICSEK_APC_CONFIG, VICSEK_FIXED_BETAS, FlockConfig, NoiseSchedule, run_apc_flock,
                         write_apc_csv)
    cfg = VICSEK_APC_CONFIG
    if args.eta is not None:
        cfg = ApcConfig(eta=args.eta, beta_max=cfg.beta_max)
    if args.beta_max is not None:
        cfg = with_bounds(cfg, cfg.beta_min, args.beta_max)
    fixed = args.fixed_betas if args.fixed_betas is not None else VICSEK_FIXED_BETAS
    sched = NoiseSchedule(args.nu_start, args.nu_end, args.episodes)
    names = ["vicsek_apc.csv"] + [f"vicsek_fixed_{b:g}.csv" for b in fixed]
    run.manifest(names)
    seed = run.seed("flock")
    wide = with_bounds(cfg, min(cfg.beta_min, *fixed), max(cfg.beta_max, *fixed))
    rows = run_apc_flock(FlockConfig(), sched, cfg, args.episodes, seed, beta0=args.beta0)
    write_apc_csv(run.path(names[0]), rows)
    parts = [f"apc {np.mean([r[3] for r in rows[-20:]]):.4f} (final beta {rows[-1][2]:.2f})"]
    for b, name in zip(fixed, names[1:]):
        base = run_apc_flock(FlockConfig(), sched, wide, args.episodes, seed, beta0=b, adapt=False)
        write_apc_csv(run.path(name), base)
        parts.append(f"beta={b:g} {np.mean([r[3] for r in base[-20:]]):.4f}")
    return "vicsek-apc: last-20 mean phi " + ", ".join(parts)


def cmd_marl(args, run: Run) -> str:
    from .marl import STRATEGIES, MarlConfig, MarlEnv, MarlExperiment, final_mean_reward, run_strategy, write_marl_csv
    from .traj import MARL_TRACK_CONFIG, load_tracks, synthetic_tracks
    if args.dataset:
        tracks, source = load_tracks(args.dataset).head(10), "dataset"
    else:
        tracks, source = synthetic_tracks(MARL_TRACK_CONFIG, run.seed("tracks")), "synthetic"
    strategies = args.strategies or STRATEGIES
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise ValueError(f"unknown strategies {bad}; expected a subset of {list(STRATEGIES)}")
    env = MarlEnv.from_tracks(MarlConfig(), tracks)
    seeds = tuple(run.seed("run", k) % 2**32 for k in range(args.runs))
    exp = MarlExperiment(episodes=args.episodes, seeds=seeds)
    run.manifest(["marl.csv"], source=source)
    rows = []
    for s in seeds:
        for strategy in strategies:
            rows.extend(run_strategy(env, strategy, exp, s))
    write_marl_csv(run.path("marl.csv"), rows)
    last = min(50, args.episodes)
    means = ", ".join(f"{s} {final_mean_reward(rows, s, last):.1f}" for s in strategies)
    return f"marl[{source}]: last-{last} mean reward per agent: {means}"


def cmd_nash_check(args, run: Run) -> str:
    from .coalition import NormalFormGame, verify_eps_nash
    if args.games < 1:
        raise ValueError("--games must be >= 1")
    run.manifest(["nash.csv"])
    rng = np.random.Generator(np.random.Philox(run.seed("games")))
    reports = [verify_eps_nash(NormalFormGame.random(rng, [args.actions] * args.players), args.beta)
               for _ in range(args.games)]
    with open(run.path("nash.csv"), "w") as fh:
        fh.write("game,max_gain,bound\n")
        for k, r in enumerate(reports):
            fh.write(f"{k},{r.max_deviation_gain!r},{r.bound!r}\n")
    worst = max(r.max_deviation_gain for r in reports)
    bound = reports[0].bound
    bad = sum(not r.holds for r in reports)
    msg = (f"nash-check: max gain {worst:.4f}, bound N*ln2/beta = {bound:.4f}, "
           f"{bad}/{len(reports)} games exceed it")
    if bad:
        raise CheckFailed(msg)
    return msg


def cmd_credit_bench(args, run: Run) -> str:
    from .credit_bench import (METHODS, credit_weighted_training, estimate_coalition_values, noise_agent_task,
                               synergy_report, traj_sampler, write_curves_csv)
    if args.dataset:
        task, source = _traj_task(args, run)
        if task.n_agents > 10:
            raise ValueError("credit-bench supports at most 10 agents")
    else:
        task, source = noise_agent_task(run.seed("task")), "synthetic"
    run.manifest(["curves.csv", "synergy.csv"], source=source)
    seed = run.seed("bench")
    curves = [credit_weighted_training(task, m, args.epochs, args.beta, args.max_order, args.episodes, seed)
              for m in METHODS]
    write_curves_csv(run.path("curves.csv"), curves)
    game = estimate_coalition_values(traj_sampler(task, args.beta), task.n_agents, args.max_order,
                                     max(args.episodes, 2), [seed, 9])
    synergy_report(game).write_csv(run.path("synergy.csv"))
    return "credit-bench[" + source + "]: final val MAE " + ", ".join(
        f"{c.method} {c.val_mae[-1]:.4f}" for c in curves)


def cmd_selftest(args, run: Run) -> str:
    from .selftest import run_selftest
    run.manifest(["selftest.txt"])
    results = run_selftest(run.seed("selftest"))
    with open(run.path("selftest.txt"), "w") as fh:
        for name, ok, detail in results:
            fh.write(f"{'PASS' if ok else 'FAIL'} {name}: {detail}\n")
    failed = [name for name, ok, _ in results if not ok]
    msg = f"selftest: {len(results) - len(failed)}/{len(results)} checks passed"
    if failed:
        raise CheckFailed(msg + "; failed: " + ", ".join(failed))
    return msg


COMMANDS = {
    "sweep": cmd_sweep, "apc-run": cmd_apc_run, "vicsek-sweep": cmd_vicsek_sweep, "vicsek-apc": cmd_vicsek_apc,
    "marl": cmd_marl, "nash-check": cmd_nash_check, "credit-bench": cmd_credit_bench, "selftest": cmd_selftest,
}


def main(argv: Sequence[str] | None = None) -> int:
    from .traj import DatasetNotFoundError, DataError, EmptyDataError, InsufficientDataError, SchemaError
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    except ConfigError as exc:
        print(f"gtfep: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(args)
    try:
        summary = COMMANDS[args.command](args, run)
        run.finish()
    except CheckFailed as exc:
        run.finish()
        print(str(exc))
        return EXIT_CHECK
    except DatasetNotFoundError as exc:
        print(f"gtfep: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SchemaError, DataError, EmptyDataError, InsufficientDataError) as exc:
        print(f"gtfep: unusable data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SingularFitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gtfep: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"gtfep: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
