"""Command-line front end: ``perishvi solve|simopt|evaluate|preset``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import (
    CapacityError, CheckpointError, CheckpointFormatError, ConfigError, ContractViolation,
    FingerprintMismatch, NumericDivergenceError, ParameterError,
)
from .experiments import get_preset, preset_names
from .simopt import SearchSpace, fit_heuristic, write_search_log
from .simulate import evaluate_policy, heuristic_policy, table_policy, write_evaluation_csv
from .vi import atomic_write_bytes, run_value_iteration, set_threads

log = logging.getLogger("perishvi")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CAPACITY = 3
EXIT_DIVERGENCE = 4
EXIT_IO = 5
EXIT_CONTRACT = 6

POLICY_FILE = "policy.csv"
PARAMS_FILE = "best_params.json"


# -- files -----------------------------------------------------------------

def write_text(path, text: str) -> None:
    atomic_write_bytes(path, [text.encode()])


def write_json(path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2) + "\n")


def _header_info(model) -> dict:
    return {"scenario": model.name, "fingerprint": model.fingerprint.hex(),
            "n_states": int(model.n_states)}


def write_policy_csv(path, model, action_indices) -> None:
    """One row per state in index order: state components then action components."""
    path = Path(path)
    states = model.enumerate_states()
    actions = model.actions()[np.asarray(action_indices)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    n_s, n_a = states.shape[1], actions.shape[1]
    w.writerow([f"s{i}" for i in range(n_s)] + [f"a{i}" for i in range(n_a)])
    np.savetxt(buf, np.hstack([states, actions]), fmt="%d", delimiter=",", newline="\r\n")
    write_text(path, buf.getvalue())
    write_json(path.with_suffix(".json"), _header_info(model))


def read_policy_csv(path, model) -> np.ndarray:
    """Action index per state; checks the file belongs to ``model``."""
    path = Path(path)
    meta_path = path.with_suffix(".json")
    try:
        meta = json.loads(meta_path.read_text())
        found = meta["fingerprint"]
    except FileNotFoundError:
        raise CheckpointFormatError(f"{path}: missing companion file {meta_path.name}")
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{meta_path}: malformed policy metadata ({exc})")
    except OSError as exc:
        raise CheckpointError(f"cannot read {meta_path}: {exc}") from exc
    if found != model.fingerprint.hex():
        raise FingerprintMismatch(model.fingerprint.hex(), found)
    n_s, n_a = model.state_radices.size, model.action_radices.size
    try:
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
            data = np.loadtxt(fh, delimiter=",", dtype=np.int64, ndmin=2)
    except StopIteration:
        raise CheckpointFormatError(f"{path}: empty policy file")
    except ValueError as exc:
        raise CheckpointFormatError(f"{path}: malformed policy row ({exc})")
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(header) != n_s + n_a or data.shape != (model.n_states, n_s + n_a):
        raise CheckpointFormatError(
            f"{path}: expected {model.n_states} rows of {n_s + n_a} columns, "
            f"found {data.shape[0]} rows of {data.shape[1]}"
        )
    if not np.array_equal(model.state_index(data[:, :n_s]), np.arange(model.n_states)):
        raise CheckpointFormatError(f"{path}: states are not in index order")
    acts = data[:, n_s:]
    if np.any(acts < 0) or np.any(acts >= model.action_radices):
        raise CheckpointFormatError(f"{path}: action outside the action set")
    return model.action_index(acts)


def read_params_file(path, model) -> np.ndarray:
    try:
        meta = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise CheckpointFormatError(f"{path}: not valid JSON ({exc})")
    if meta.get("fingerprint") != model.fingerprint.hex():
        raise FingerprintMismatch(model.fingerprint.hex(), str(meta.get("fingerprint")))
    names = model.heuristic_names()
    try:
        return np.array([meta["params"][n] for n in names], dtype=np.int64)
    except (KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: missing heuristic parameter {exc}")


# -- commands --------------------------------------------------------------

def _output_dir(cfg: ExperimentConfig, override) -> Path:
    if override:
        out = Path(override)
    elif cfg.output:
        out = Path(cfg.output)
    else:
        out = Path("runs") / (cfg.name or f"scenario-{cfg.scenario}").replace("/", "-")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_solve(cfg: ExperimentConfig, output, resume=False) -> dict:
    t0 = time.perf_counter()
    model = cfg.build_model()
    model.check_capacity()
    out = _output_dir(cfg, output)
    vi_cfg = cfg.vi_config()
    if "checkpoint_every" not in cfg.vi:
        vi_cfg.checkpoint_every = model.checkpoint_every

    def progress(it, delta, converged):
        log.info("sweep %d change [%.6g, %.6g]", it, delta[1], delta[0])

    result = run_value_iteration(model, vi_cfg, checkpoint_dir=out / "checkpoints",
                                 resume=resume, callback=progress)
    write_policy_csv(out / POLICY_FILE, model, result.policy)
    report = {
        "experiment": cfg.name, **_header_info(model),
        "n_actions": int(model.n_actions), "n_outcomes": int(model.n_outcomes),
        "iterations": result.iterations, "converged": result.converged,
        "precision": vi_cfg.precision, "vi_seconds": result.wall_seconds,
        "wall_seconds": time.perf_counter() - t0,
    }
    write_json(out / "solve_report.json", report)
    return report


def cmd_simopt(cfg: ExperimentConfig, output) -> dict:
    t0 = time.perf_counter()
    model = cfg.build_model()
    out = _output_dir(cfg, output)
    space = SearchSpace.for_model(model)
    result = fit_heuristic(model, cfg.search_rollout_config(), cfg.ga_config(),
                           cfg.simopt.get("method", "auto"))
    write_search_log(out / "search_log.csv", result.history, space)
    report = {
        "experiment": cfg.name, **_header_info(model),
        "params": result.named(space), "mean": result.best_mean, "sd": result.best_sd,
        "evaluations": result.evaluations, "generations": result.generations,
        "wall_seconds": time.perf_counter() - t0,
    }
    write_json(out / PARAMS_FILE, report)
    return report


def optimality_gap(vi_mean: float, heuristic_mean: float) -> float:
    """Percent shortfall of the heuristic relative to value iteration."""
    return 100.0 * (vi_mean - heuristic_mean) / abs(vi_mean)


def cmd_evaluate(cfg: ExperimentConfig, output, policy_path=None, params_path=None) -> list:
    if policy_path is None and params_path is None:
        raise ConfigError("evaluate needs --policy and/or --params")
    model = cfg.build_model()
    out = _output_dir(cfg, output)
    rollout_cfg = cfg.rollout_config()
    results = []
    if policy_path is not None:
        table = read_policy_csv(policy_path, model)
        results.append(evaluate_policy(model, table_policy(model, table), rollout_cfg))
    if params_path is not None:
        params = read_params_file(params_path, model)
        results.append(evaluate_policy(model, heuristic_policy(model, params), rollout_cfg))
    write_evaluation_csv(out / "kpis.csv", results)
    rows = [r.summary() for r in results]
    if len(results) == 2:
        gap = optimality_gap(results[0].mean_return, results[1].mean_return)
        for row in rows:
            row["gap_pct"] = gap
        _rewrite_with_gap(out / "kpis.csv", rows)
    return rows


def _rewrite_with_gap(path, rows) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\r\n")
    w.writeheader()
    w.writerows(rows)
    write_text(path, buf.getvalue())


# -- argument handling -----------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", metavar="PATH", help="experiment config file")
    src.add_argument("--preset", metavar="NAME", help="named experiment, e.g. a/m2/exp1")
    p.add_argument("--output", metavar="DIR", help="output directory")
    p.add_argument("--threads", type=int, metavar="N", help="cap on worker threads")
    p.add_argument("--seed", type=int, metavar="N",
                   help="base seed for rollouts and the search")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perishvi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run value iteration and write the policy")
    _add_common(solve)
    solve.add_argument("--resume", action="store_true", help="continue from the last checkpoint")
    solve.add_argument("--precision", choices=("f32", "f64"))
    solve.add_argument("--max-batch-size", type=int, metavar="N")

    simopt = sub.add_parser("simopt", help="fit heuristic parameters by simulation")
    _add_common(simopt)

    evaluate = sub.add_parser("evaluate", help="simulate policies and write KPIs")
    _add_common(evaluate)
    evaluate.add_argument("--policy", metavar="CSV", help="policy CSV from solve")
    evaluate.add_argument("--params", metavar="JSON", help="parameter file from simopt")

    preset = sub.add_parser("preset", help="list or print bundled experiment presets")
    preset.add_argument("action", choices=("list", "dump"))
    preset.add_argument("name", nargs="?")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = get_preset(args.preset) if args.preset else load_config(args.config)
    if getattr(args, "precision", None):
        cfg.vi["precision"] = args.precision
    if getattr(args, "max_batch_size", None):
        cfg.vi["max_batch_size"] = args.max_batch_size
    if args.seed is not None:
        cfg.evaluation["base_seed"] = args.seed
        cfg.simopt["base_seed"] = args.seed
        cfg.simopt["seed"] = args.seed
    return cfg


def _run(args) -> int:
    if args.command == "preset":
        if args.action == "list":
            print("\n".join(preset_names()))
        else:
            if not args.name:
                raise ConfigError("preset dump needs a preset name")
            sys.stdout.write(get_preset(args.name).to_text())
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        set_threads(args.threads)
    cfg = _load(args)
    if args.command == "solve":
        report = cmd_solve(cfg, args.output, resume=args.resume)
        print(f"{report['scenario']}: {report['iterations']} sweeps, "
              f"converged={report['converged']}, {report['wall_seconds']:.1f} s")
    elif args.command == "simopt":
        report = cmd_simopt(cfg, args.output)
        print(f"best {report['params']} mean {report['mean']:.2f} sd {report['sd']:.2f}")
    else:
        for row in cmd_evaluate(cfg, args.output, args.policy, args.params):
            gap = f" gap {row['gap_pct']:.2f}%" if "gap_pct" in row else ""
            print(f"{row['policy']}: return {row['return_mean']:.1f} "
                  f"+/- {row['return_sd']:.1f}{gap}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except NumericDivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
