"""Command-line driver.

Exit codes: 0 success, 1 invalid input or learner failure, 2 a verification
or table check failed, 3 filesystem error.

Files written under ``--out``::

    env.txt               environment used for collection (text MDP format)
    data/agent<i>.jsonl   per-agent dataset
    q/agent<i>.csv        state,action,q for in-support pairs
    q/agent<i>.log.csv    step,residual (VI sweep residual or mean |TD error| per block)
    results.csv           run_id,metric,value
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import verify
from .analysis import EvalReport, consensus_states, evaluate_joint, extrapolation_error, value_consensus
from .config import RunConfig, load_config
from .dataset import collect, collect_quota, read_jsonl, write_jsonl
from .empirical import build_model
from .env import load_env, save_env
from .errors import OdmarlError, ValidationError
from .learner import modified_value_iteration, rescale_rewards, weighted_td_learning
from .qtable import QTable, greedy_policy, read_qtable_csv, write_qtable_csv
from .tables import format_tables, reproduce_tables
from .transforms import TransformSpec, backup_values, modified_transitions

EXIT_OK, EXIT_INVALID, EXIT_FAILED, EXIT_IO = 0, 1, 2, 3


def _env_for(cfg: RunConfig):
    path = cfg.out / "env.txt"
    return load_env(path) if path.is_file() else cfg.build_env()


def cmd_collect(cfg: RunConfig) -> list[Path]:
    env = cfg.build_env()
    behavior = cfg.build_behavior(env)
    if cfg.sampling == "quota":
        datasets = collect_quota(env, behavior, cfg.n_episodes)
    else:
        datasets = collect(env, behavior, cfg.n_episodes, cfg.seed)
    cfg.data_dir.mkdir(parents=True, exist_ok=True)
    save_env(env, cfg.out / "env.txt")
    paths = []
    for d in datasets:
        path = cfg.dataset_path(d.meta.agent_id)
        write_jsonl(d, path)
        paths.append(path)
    return paths


def _load_models(cfg: RunConfig, env):
    datasets, models = [], []
    for i in range(env.n_agents):
        path = cfg.dataset_path(i)
        if not path.is_file():
            raise FileNotFoundError(f"dataset not found: {path} (run collect first)")
        d = read_jsonl(path)
        m = build_model(d, env.n_states, env.actions_per_agent[i], reward_tol=cfg.reward_tol)
        if cfg.rescale is not None:
            d, m = rescale_rewards(d, *cfg.rescale), rescale_rewards(m, *cfg.rescale)
        datasets.append(d)
        models.append(m)
    return datasets, models


def cmd_train(cfg: RunConfig) -> list[Path]:
    env = _env_for(cfg)
    datasets, models = _load_models(cfg, env)
    cfg.q_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, (d, m) in enumerate(zip(datasets, models)):
        if cfg.algorithm == "vi":
            q = modified_value_iteration(m, cfg.learn, cfg.init)
            steps = range(1, len(q.residuals) + 1)
        else:
            q = weighted_td_learning(d, m, cfg.learn, cfg.init)
            steps = range(1000, 1000 * (len(q.residuals) + 1), 1000)
        write_qtable_csv(q, cfg.qtable_path(i))
        with open(cfg.q_dir / f"agent{i}.log.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "residual"])
            w.writerows([k, repr(r)] for k, r in zip(steps, q.residuals))
        paths.append(cfg.qtable_path(i))
    return paths


def _read_qtables(cfg: RunConfig, env) -> list[QTable]:
    out = []
    for i in range(env.n_agents):
        path = cfg.qtable_path(i)
        if not path.is_file():
            raise FileNotFoundError(f"Q table not found: {path} (run train first)")
        out.append(read_qtable_csv(path, env.n_states, env.actions_per_agent[i], env.terminals))
    return out


def write_results(path: Path, run_id: str, rows) -> None:
    """Replace this run's rows in the results file, keeping other runs."""
    kept = []
    if path.is_file():
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            kept = [r for r in reader if r and r[0] != run_id]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "metric", "value"])
        w.writerows(kept)
        w.writerows([rid, metric, repr(float(v))] for rid, metric, v in rows)


def cmd_eval(cfg: RunConfig) -> EvalReport:
    env = _env_for(cfg)
    qtables = _read_qtables(cfg, env)
    policies = [greedy_policy(q) for q in qtables]
    report = evaluate_joint(env, policies, cfg.eval_episodes, cfg.eval_seed)
    if env.n_agents > 1:
        if all(cfg.dataset_path(i).is_file() for i in range(env.n_agents)):
            states = consensus_states(_load_models(cfg, env)[1], cfg.consensus_states, cfg.seed)
        else:
            states = np.flatnonzero(np.any([q.mask.any(axis=1) for q in qtables], axis=0))
        report.metrics["value_consensus"] = value_consensus(qtables, states)
    if cfg.rescale is None:
        # Q and the Monte Carlo return are only comparable on the original reward scale
        report.metrics["extrapolation_error"] = extrapolation_error(
            env, policies, qtables, cfg.eval_episodes, cfg.eval_seed, cfg.learn.gamma
        )
    write_results(cfg.results, cfg.run_id, report.rows(cfg.run_id))
    return report


def weighted_support_table(cfg: RunConfig, agent: int, state: int, action: int) -> str:
    """Successor-by-successor view of one pair's reweighting, from the run's dataset and Q table."""
    env = _env_for(cfg)
    if not 0 <= agent < env.n_agents:
        raise ValidationError(f"agent {agent} out of range")
    model = _load_models(cfg, env)[1][agent]
    q_path = cfg.qtable_path(agent)
    if q_path.is_file():
        q = read_qtable_csv(q_path, env.n_states, env.actions_per_agent[agent], env.terminals)
        q = QTable(q.values, model.visited, model.terminal)
    else:
        q = modified_value_iteration(model, cfg.learn, cfg.init)
    spec = cfg.learn.transform
    ws = modified_transitions(model, q, state, action, cfg.learn.gamma, spec)
    u = backup_values(model, q, cfg.learn.gamma)
    lines = [f"agent {agent + 1}, state {state}, action a{action + 1}, mode {spec.mode}",
             f"{'next':<8}{'p_B':>8}{'lam_tn':>9}{'lam_vd':>9}{'p_hat':>8}{'U':>9}"]
    for e in ws.entries:
        label = env.labels[e.next_state] if env.labels else str(e.next_state)
        lines.append(f"{label:<8}{model.probs[state, action, e.next_state]:>8.2f}{e.lambda_tn:>9.4f}"
                     f"{e.lambda_vd:>9.4f}{e.prob:>8.2f}{u[e.next_state]:>9.4f}")
    ret = sum(e.prob * u[e.next_state] for e in ws.entries)
    lines.append(f"expected return {ret:.2f}")
    return "\n".join(lines)


def cmd_inspect(path: Path | None, cfg: RunConfig | None) -> dict:
    if path is None:
        if cfg is None:
            raise ValidationError("inspect needs a PATH or --config")
        env = cfg.build_env()
        return {"env": env.name, "states": env.n_states, "agents": env.n_agents,
                "actions": list(env.actions_per_agent), "horizon": env.horizon,
                "seed": cfg.seed, "mode": cfg.learn.transform.mode, "algorithm": cfg.algorithm,
                "out": str(cfg.out)}
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if path.suffix == ".jsonl":
        d = read_jsonl(path)
        m = build_model(d)
        return {"kind": "dataset", **d.meta.__dict__, "records": len(d),
                "visited_pairs": int(m.visited.sum()), "reward_min": float(d.rewards.min()),
                "reward_max": float(d.rewards.max())}
    if path.suffix == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        return {"kind": "csv", "header": rows[0] if rows else [], "rows": max(len(rows) - 1, 0)}
    env = load_env(path)
    return {"kind": "env", "name": env.name, "states": env.n_states, "agents": env.n_agents,
            "actions": list(env.actions_per_agent), "horizon": env.horizon,
            "terminals": int(env.terminals.sum())}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI run configuration")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--out", type=Path, help="overrides [run] out")

    p = argparse.ArgumentParser(prog="odmarl", description="Offline decentralized MARL lab")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="roll out the behavior policy and write datasets")
    sub.add_parser("train", parents=[common], help="learn per-agent Q tables from the datasets")
    sub.add_parser("eval", parents=[common], help="run the joint greedy policy and append metrics")
    rt = sub.add_parser("reproduce-tables", parents=[common], help="matrix-game transition/return tables")
    rt.add_argument("--inject-clip", type=float, metavar="EPS",
                    help="negative control: clip value deviation at EPS in the vd table")
    v = sub.add_parser("verify", parents=[common], help="run a property suite")
    v.add_argument("suite", choices=verify.SUITES)
    v.add_argument("--cases", type=int, help="number of cases/seeds (suite default otherwise)")
    v.add_argument("--gamma", type=float, help="contraction only: fixed gamma (informational outside the bound)")
    v.add_argument("--verbose", action="store_true", help="include every case in the output")
    i = sub.add_parser("inspect", parents=[common], help="summarize a dataset, Q table, env file or config")
    i.add_argument("path", nargs="?", type=Path)
    i.add_argument("--pair", type=int, nargs=3, metavar=("AGENT", "STATE", "ACTION"),
                   help="with --config: print the reweighted successors of one pair (0-based ids)")
    return p


def _jsonable(obj):
    return obj.item() if isinstance(obj, np.generic) else str(obj)


def _suite_kwargs(args) -> dict:
    kw = {"seed": args.seed if args.seed is not None else 0}
    if args.cases is not None:
        key = {"td-equivalence": "n_mdps", "dg-improvement": "n_seeds"}.get(args.suite, "n_cases")
        kw[key] = args.cases
    if args.gamma is not None:
        if args.suite != "contraction":
            raise ValidationError("--gamma only applies to the contraction suite")
        kw["gamma"] = args.gamma
    return kw


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; 2 is reserved for failed checks here
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    try:
        def cfg(required=True):
            if args.config is None:
                if required:
                    raise ValidationError(f"{args.command} needs --config")
                return None
            return load_config(args.config, seed=args.seed, out=args.out)

        if args.command == "collect":
            for path in cmd_collect(cfg()):
                print(path)
        elif args.command == "train":
            for path in cmd_train(cfg()):
                print(path)
        elif args.command == "eval":
            c = cfg()
            report = cmd_eval(c)
            for run_id, metric, value in report.rows(c.run_id):
                print(f"{metric}\t{value!r}")
        elif args.command == "reproduce-tables":
            overrides = {}
            if args.inject_clip is not None:
                overrides["vd"] = TransformSpec(mode="vd", clip_enabled=True, epsilon=args.inject_clip)
            cells = reproduce_tables(overrides)
            print(format_tables(cells))
            return EXIT_OK if all(c.passed for c in cells) else EXIT_FAILED
        elif args.command == "verify":
            result = verify.run_suite(args.suite, **_suite_kwargs(args))
            out = result.to_dict()
            if args.verbose:
                out["cases"] = result.cases
            print(json.dumps(out, indent=2, sort_keys=True, default=_jsonable))
            return EXIT_OK if result.passed else EXIT_FAILED
        elif args.command == "inspect" and args.pair is not None:
            print(weighted_support_table(cfg(), *args.pair))
        elif args.command == "inspect":
            print(json.dumps(cmd_inspect(args.path, cfg(required=False)), indent=2, default=str))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OdmarlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
