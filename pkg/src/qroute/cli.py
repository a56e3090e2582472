"""Command-line harness: dataset generation, training, evaluation, comparison and the QUBO baseline.

Every command writes ``manifest.json`` into its ``--out`` directory before
anything else and only writes inside that directory. Config precedence is
defaults < ``--config`` file < explicit flags; the resolved values are stored
in the manifest, and ``qroute replay MANIFEST --out DIR`` reruns a command
from them.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import os
import subprocess
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .environment import MaskConfig, RewardParams, dataset_instances, load_instance, read_dataset, write_dataset
from .errors import CapacityError, QRouteError
from .hamiltonian.qubo import PenaltyWeights, build_qubo, decode_assignment, qubo_energy, to_ising
from .hamiltonian.variational import OptimizerConfig, variational_solve
from .pqc import CircuitConfig, PQCNetwork
from .quantum import MAX_UNITARY_QUBITS
from .rl.dqn import TrainerConfig, dataset_env_factory, train_dqn
from .rl.evaluate import GreedyQPolicy, OraclePolicy, RandomFeasiblePolicy, evaluate
from .rl.mlp import MlpQNetwork
from .rl.ppo import PpoAgent, PpoConfig, train_ppo

EXIT_OK, EXIT_USAGE, EXIT_CAPACITY, EXIT_IO = 0, 2, 3, 4
ALGOS = ("qdqn", "ddqn-mlp", "ppo")
CURVE_HEADER = ["episode", "cost", "loss", "epsilon", "grad_norm"]
EVAL_HEADER = ["instance_id", "cost", "gap", "feasible"]

# built-in defaults per command; flags and config files override these keys
DEFAULTS = {
    "gen": {"seed": 0, "n_requests": 2, "count": 10},
    "train": {
        "seed": 0, "algo": "qdqn", "dataset": None, "episodes": 300, "layers": 1, "reupload": True,
        "encode_flags": False, "hidden": 256, "learning_rate": None, "optimizer": "sgd", "gamma": 0.99, "tau": 0.01,
        "batch_size": 32, "buffer_capacity": 10_000, "double_q": True, "relaxed": False,
    },
    "eval": {"seed": 0, "checkpoint": None, "policy": None, "dataset": None},
    "compare": {"runs": []},
    "qsvt": {
        "seed": 0, "instance": None, "steps": None, "depth": 2, "restarts": 3, "max_evaluations": 500,
        "penalty_scale": 1.0, "include_depot": False,
    },
}


class UsageError(QRouteError):
    pass


# ---------------------------------------------------------------------------
# helpers


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(path: Path, header, rows) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
            n += 1
    return n


class Run:
    """Output directory plus its manifest."""

    def __init__(self, command: str, config: dict, out: str, threads: int | None):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "config": config,
            "seed": config.get("seed"),
            "threads": threads,
            "version": __version__,
            "git_describe": git_describe(),
            "started_at": _now(),
            "finished_at": None,
            "outputs": [],
        }
        self.save()

    def path(self, name: str) -> Path:
        self.manifest["outputs"].append(name)
        return self.dir / name

    def save(self) -> None:
        with open(self.dir / "manifest.json", "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)

    def finish(self, **extra) -> None:
        self.manifest.update(extra)
        self.manifest["finished_at"] = _now()
        self.save()


def _limit_threads(threads: int | None) -> None:
    if not threads:
        return
    threadpool_limits(threads)


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc.strerror}") from exc
        # a manifest can serve as a config file
        loaded = loaded.get("config", loaded) if "command" in loaded else loaded
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_gen(cfg: dict, run: Run) -> dict:
    if cfg["count"] < 0:
        raise UsageError("count must be >= 0")
    instances = dataset_instances(cfg["seed"], cfg["n_requests"], cfg["count"])
    n = write_dataset(instances, run.path("dataset.jsonl"))
    return {"instances": n}


def _network_for(cfg: dict, num_nodes: int):
    rng = np.random.default_rng(cfg["seed"])
    if cfg["algo"] == "qdqn":
        return PQCNetwork(num_nodes - 1, CircuitConfig(cfg["layers"], cfg["reupload"], encode_flags=cfg["encode_flags"]), rng)
    return MlpQNetwork(num_nodes, cfg["hidden"], rng=rng)


def cmd_train(cfg: dict, run: Run) -> dict:
    if cfg["algo"] not in ALGOS:
        raise UsageError(f"unknown algo {cfg['algo']!r}; choose from {ALGOS}")
    if not cfg["dataset"]:
        raise UsageError("train needs --dataset")
    instances = read_dataset(cfg["dataset"])
    if not instances:
        raise UsageError("training dataset is empty")
    sizes = {inst.num_nodes for inst in instances}
    if len(sizes) != 1:
        raise UsageError(f"dataset mixes instance sizes {sorted(sizes)}")
    num_nodes = sizes.pop()
    if cfg["relaxed"]:
        wmax = max(float(inst.travel.max()) for inst in instances)
        rp = RewardParams(violation_penalty=2 * RewardParams().alpha1 * wmax)
        masks = MaskConfig.relaxed()
    else:
        rp, masks = RewardParams(), MaskConfig()
    factory = dataset_env_factory(instances, rp, masks)

    if cfg["algo"] == "ppo":
        pc = PpoConfig(
            episodes=cfg["episodes"], gamma=cfg["gamma"], seed=cfg["seed"],
            learning_rate=cfg["learning_rate"] or PpoConfig.learning_rate, hidden=cfg["hidden"],
        )
        model, curve = train_ppo(factory, num_nodes, pc)
        resolved = asdict(pc)
    else:
        tc = TrainerConfig(
            episodes=cfg["episodes"], learning_rate=cfg["learning_rate"] or TrainerConfig.learning_rate,
            gamma=cfg["gamma"], batch_size=cfg["batch_size"], tau=cfg["tau"],
            buffer_capacity=cfg["buffer_capacity"], double_q=cfg["double_q"], seed=cfg["seed"],
            optimizer=cfg["optimizer"],
        )
        model, curve = train_dqn(factory, _network_for(cfg, num_nodes), tc)
        resolved = asdict(tc)
    write_csv(run.path("curve.csv"), CURVE_HEADER, curve.rows())
    write_csv(run.path("timing.csv"), ["episode", "wall_ms"], enumerate(curve.wall_ms))
    model.save(run.path("checkpoint.json"))
    extra = {"trainer": resolved, "instance_size": num_nodes}
    if cfg["algo"] != "qdqn":
        extra["hidden"] = cfg["hidden"]
    return extra


def load_checkpoint(path):
    with open(path) as fh:
        d = json.load(fh)
    algo = d.get("algo")
    if algo == "qdqn":
        return PQCNetwork.from_dict(d), algo
    if algo == "ddqn-mlp":
        return MlpQNetwork.from_dict(d), algo
    if algo == "ppo":
        return PpoAgent.from_dict(d), algo
    raise UsageError(f"checkpoint {path} has unknown algo {algo!r}")


def cmd_eval(cfg: dict, run: Run) -> dict:
    if not cfg["dataset"]:
        raise UsageError("eval needs --dataset")
    instances = read_dataset(cfg["dataset"])
    if cfg["checkpoint"]:
        model, method = load_checkpoint(cfg["checkpoint"])
        for inst in instances:
            if inst.num_nodes != model.num_actions:
                raise UsageError(
                    f"checkpoint expects {model.num_actions} nodes, dataset has {inst.num_nodes}"
                )
        policy = GreedyQPolicy(model)
    elif cfg["policy"] == "random":
        policy, method = RandomFeasiblePolicy(cfg["seed"]), "random"
    elif cfg["policy"] == "oracle":
        policy, method = OraclePolicy(), "oracle"
    else:
        raise UsageError("eval needs --checkpoint or --policy {random,oracle}")
    res = evaluate(policy, instances)
    rows = [(i, c, g, f) for i, (c, g, f) in enumerate(zip(res.costs, res.gaps, res.feasible))]
    write_csv(run.path("eval.csv"), EVAL_HEADER, rows)
    with open(run.path("summary.json"), "w") as fh:
        json.dump({"method": method, **res.stats}, fh, indent=2, sort_keys=True)
    return {"method": method}


def cmd_compare(cfg: dict, run: Run) -> dict:
    missing, rows = [], []
    for d in cfg["runs"]:
        d = Path(d)
        eval_csv, summary = d / "eval.csv", d / "summary.json"
        absent = [p.name for p in (eval_csv, summary) if not p.exists()]
        if absent:
            missing.append(f"{d}: missing {', '.join(absent)}")
            continue
        with open(summary) as fh:
            method = json.load(fh).get("method", d.name)
        with open(eval_csv) as fh:
            for r in csv.DictReader(fh):
                rows.append([method, d.name, r["instance_id"], r["cost"], r["gap"], r["feasible"]])
    if missing:
        raise OSError("; ".join(missing))
    n = write_csv(run.path("combined.csv"), ["method", "run", *EVAL_HEADER], rows)
    return {"rows": n}


def cmd_qsvt(cfg: dict, run: Run) -> dict:
    if not cfg["instance"]:
        raise UsageError("qsvt needs --instance")
    inst = load_instance(cfg["instance"])
    N = inst.num_nodes - 1
    T = cfg["steps"] or N
    width = (N + int(cfg["include_depot"])) * T
    if width > MAX_UNITARY_QUBITS:
        raise CapacityError(f"QUBO needs {width} qubits, limit is {MAX_UNITARY_QUBITS}")
    base = PenaltyWeights.calibrated(inst, T)
    s = float(cfg["penalty_scale"])
    lam = PenaltyWeights(base.lambda_visit * s, base.lambda_capacity * s, base.lambda_window * s,
                         base.lambda_precedence * s)
    model = build_qubo(inst, T, 1, lam, include_depot=cfg["include_depot"])
    with open(run.path("qubo.json"), "w") as fh:
        fh.write(model.to_json())
    res = variational_solve(
        to_ising(model), cfg["depth"],
        OptimizerConfig(max_evaluations=cfg["max_evaluations"], restarts=cfg["restarts"], seed=cfg["seed"]),
    )
    dec = decode_assignment(model, res.bitstring)
    out = {
        "bitstring": [int(b) for b in res.bitstring],
        "routes": dec.routes,
        "feasible": dec.feasible,
        "violations": dec.violations,
        "energy": res.energy,
        "initial_energy": res.initial_energy,
        "bitstring_energy": qubo_energy(model, res.bitstring),
        "converged": res.converged,
        "evaluations": res.evaluations,
        "gamma": list(res.params.gamma),
        "beta": list(res.params.beta),
    }
    with open(run.path("result.json"), "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
    write_csv(run.path("trace.csv"), ["evaluation", "incumbent_energy"], enumerate(res.trace))
    return {"num_qubits": model.num_vars}


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare, "qsvt": cmd_qsvt}


# ---------------------------------------------------------------------------
# argument parsing


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", type=int, default=os.cpu_count())
    common.add_argument("--config", help="JSON file of option overrides (a manifest works too)")

    p = argparse.ArgumentParser(prog="qroute", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write a JSON-lines instance dataset")
    g.add_argument("--n-requests", dest="n_requests", type=int)
    g.add_argument("--count", type=int)

    t = sub.add_parser("train", parents=[common], help="train a policy on a dataset")
    t.add_argument("--algo", choices=ALGOS)
    t.add_argument("--dataset")
    t.add_argument("--episodes", type=int)
    t.add_argument("--layers", type=int, help="PQC layers p")
    t.add_argument("--reupload", type=_bool)
    t.add_argument("--flags", dest="encode_flags", type=_bool, help="encode visited/at-depot flags in the PQC")
    t.add_argument("--hidden", type=int)
    t.add_argument("--lr", dest="learning_rate", type=float)
    t.add_argument("--optimizer", choices=("sgd", "adam"))
    t.add_argument("--gamma", type=float)
    t.add_argument("--tau", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--buffer", dest="buffer_capacity", type=int)
    t.add_argument("--double-q", dest="double_q", type=_bool)
    t.add_argument("--relaxed", type=_bool, help="penalise capacity/precedence breaches instead of masking")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint or baseline policy")
    e.add_argument("--checkpoint")
    e.add_argument("--policy", choices=("random", "oracle"))
    e.add_argument("--dataset")

    c = sub.add_parser("compare", parents=[common], help="merge evaluation outputs into one table")
    c.add_argument("runs", nargs="*", default=None)

    q = sub.add_parser("qsvt", parents=[common], help="QUBO export and variational solve for one instance")
    q.add_argument("--instance")
    q.add_argument("--steps", type=int, help="route positions T")
    q.add_argument("--depth", type=int)
    q.add_argument("--restarts", type=int)
    q.add_argument("--max-evaluations", dest="max_evaluations", type=int)
    q.add_argument("--penalty-scale", dest="penalty_scale", type=float)
    q.add_argument("--include-depot", dest="include_depot", type=_bool)

    r = sub.add_parser("replay", help="rerun a command from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", required=True)
    r.add_argument("--threads", type=int, default=os.cpu_count())
    return p


def run_command(command: str, cfg: dict, out: str, threads: int | None) -> Path:
    _limit_threads(threads)
    run = Run(command, cfg, out, threads)
    extra = COMMANDS[command](cfg, run)
    run.finish(**(extra or {}))
    return run.dir


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            with open(args.manifest) as fh:
                m = json.load(fh)
            run_command(m["command"], m["config"], args.out, args.threads)
        else:
            cfg = resolve_config(args.command, args)
            if args.command == "compare" and not cfg["runs"]:
                raise UsageError("compare needs at least one run directory")
            run_command(args.command, cfg, args.out, args.threads)
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except QRouteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
