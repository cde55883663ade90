"""Run configuration: one INI file with a section per module.

Every tunable default lives here so a run is fully described by
(config file, seed). See ``DEFAULTS`` for the complete schema.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

from .env import EnvSpec, discretized_dg, layered_mdp, load_env, matrix_game, random_mdp, stationary_policy, uniform_policy
from .errors import ValidationError
from .learner import LearnConfig
from .transforms import TransformSpec

ENV_NAMES = ("matrix_game", "dg", "random", "layered", "file")

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"id": "run", "out": "out"},
    "env": {
        "pos_bins": "21", "act_bins": "5", "horizon": "25",
        "n_states": "3", "n_actions": "2", "n_agents": "2",
        "n_layers": "4", "width": "3",
        "r_min": "1.0", "r_max": "5.0", "env_seed": "0", "path": "",
    },
    "behavior": {"kind": "uniform", "probs": ""},
    "dataset": {"sampling": "random", "n_episodes": "1000", "reward_tol": "1e-9"},
    "transform": {
        "mode": "vd_tn", "epsilon": "0.5", "clip": "false",
        "value_floor": "1e-8", "deviation_on": "backup",
    },
    "learn": {
        "algorithm": "vi", "gamma": "0.9", "tol": "1e-10", "max_sweeps": "100000",
        "lr": "0.01", "steps": "100000", "polish_fraction": "0.0", "average_polish": "true",
        "refresh_every": "1", "divergence_factor": "10.0", "init": "0.0",
        "rescale_min": "", "rescale_max": "",
    },
    "eval": {
        "n_episodes": "1000", "seed_offset": "1000", "consensus_states": "100",
        "results": "results.csv",
    },
}


@dataclass(frozen=True)
class RunConfig:
    seed: int
    run_id: str
    out: Path
    env_name: str
    env_params: dict
    behavior_kind: str
    behavior_probs: tuple | None
    sampling: str
    n_episodes: int
    reward_tol: float
    learn: LearnConfig
    algorithm: str
    init: float
    rescale: tuple[float, float] | None
    eval_episodes: int
    eval_seed: int
    consensus_states: int
    results: Path
    source: Path | None = None

    @property
    def data_dir(self) -> Path:
        return self.out / "data"

    @property
    def q_dir(self) -> Path:
        return self.out / "q"

    def dataset_path(self, agent: int) -> Path:
        return self.data_dir / f"agent{agent}.jsonl"

    def qtable_path(self, agent: int) -> Path:
        return self.q_dir / f"agent{agent}.csv"

    def build_env(self) -> EnvSpec:
        p = self.env_params
        if self.env_name == "matrix_game":
            return matrix_game()
        if self.env_name == "dg":
            return discretized_dg(p["pos_bins"], p["act_bins"], p["horizon"])
        if self.env_name == "random":
            return random_mdp(p["n_states"], p["n_actions"], p["n_agents"], p["r_min"], p["r_max"],
                              p["env_seed"], horizon=p["horizon"])
        if self.env_name == "layered":
            return layered_mdp(p["n_layers"], p["width"], p["n_actions"], p["n_agents"],
                               p["r_min"], p["r_max"], p["env_seed"])
        return load_env(p["path"])

    def build_behavior(self, env: EnvSpec):
        if self.behavior_kind == "uniform":
            return uniform_policy(env)
        return stationary_policy(env, self.behavior_probs)


def _parse_probs(text: str) -> tuple:
    """``"0.8,0.2; 0.4,0.6"`` -> one state-independent distribution per agent."""
    try:
        return tuple(tuple(float(x) for x in part.split(",")) for part in text.split(";") if part.strip())
    except ValueError:
        raise ValidationError(f"behavior.probs: cannot parse {text!r}") from None


def load_config(path=None, seed: int | None = None, out=None, text: str | None = None) -> RunConfig:
    """Read and validate a config; ``seed`` and ``out`` override the file."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_dict(DEFAULTS)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
        base = path.resolve().parent
    elif text is not None:
        cp.read_string(text)
    for section in cp.sections():
        if section not in DEFAULTS:
            raise ValidationError(f"unknown config section [{section}]")
        unknown = set(cp[section]) - set(DEFAULTS[section])
        if section == "run":
            unknown -= {"seed"}
        if section == "env":
            unknown -= {"name"}
        if unknown:
            raise ValidationError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")

    def get(section, key, conv=str):
        raw = cp.get(section, key, fallback=None)
        if raw is None or raw.strip() == "":
            raise ValidationError(f"{section}.{key}: missing")
        try:
            if conv is bool:
                return cp.getboolean(section, key)
            return conv(raw.strip())
        except ValueError:
            raise ValidationError(f"{section}.{key}: invalid value {raw!r}") from None

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (base / p).resolve()

    if seed is None:
        seed = get("run", "seed", int)
    out_dir = Path(out) if out is not None else resolve(get("run", "out"))

    env_name = get("env", "name")
    if env_name not in ENV_NAMES:
        raise ValidationError(f"env.name: must be one of {ENV_NAMES}, got {env_name!r}")
    ints = ("pos_bins", "act_bins", "n_states", "n_actions", "n_agents", "n_layers", "width", "env_seed")
    params = {k: get("env", k, int) for k in ints}
    params.update(r_min=get("env", "r_min", float), r_max=get("env", "r_max", float))
    h = cp.get("env", "horizon").strip()
    params["horizon"] = None if h.lower() in ("", "none") else get("env", "horizon", int)
    if env_name == "file":
        env_path = resolve(get("env", "path"))
        if not env_path.is_file():
            raise ValidationError(f"env.path: file not found: {env_path}")
        params["path"] = env_path

    kind = get("behavior", "kind")
    if kind not in ("uniform", "stationary"):
        raise ValidationError("behavior.kind: must be 'uniform' or 'stationary'")
    probs = _parse_probs(get("behavior", "probs")) if kind == "stationary" else None

    sampling = get("dataset", "sampling")
    if sampling not in ("random", "quota"):
        raise ValidationError("dataset.sampling: must be 'random' or 'quota'")
    n_episodes = get("dataset", "n_episodes", int)
    if n_episodes < 1:
        raise ValidationError("dataset.n_episodes: must be at least 1")

    spec = TransformSpec(
        mode=get("transform", "mode"),
        epsilon=get("transform", "epsilon", float),
        clip_enabled=get("transform", "clip", bool),
        value_floor=get("transform", "value_floor", float),
        deviation_on=get("transform", "deviation_on"),
    )
    learn = LearnConfig(
        gamma=get("learn", "gamma", float),
        tol=get("learn", "tol", float),
        max_sweeps=get("learn", "max_sweeps", int),
        lr=get("learn", "lr", float),
        steps=get("learn", "steps", int),
        seed=seed,
        transform=spec,
        polish_fraction=get("learn", "polish_fraction", float),
        average_polish=get("learn", "average_polish", bool),
        refresh_every=get("learn", "refresh_every", int),
        divergence_factor=get("learn", "divergence_factor", float),
    )
    algorithm = get("learn", "algorithm")
    if algorithm not in ("vi", "td"):
        raise ValidationError("learn.algorithm: must be 'vi' or 'td'")
    lo, hi = cp.get("learn", "rescale_min").strip(), cp.get("learn", "rescale_max").strip()
    if bool(lo) != bool(hi):
        raise ValidationError("learn.rescale_min and learn.rescale_max must be set together")
    rescale = (get("learn", "rescale_min", float), get("learn", "rescale_max", float)) if lo else None

    eval_episodes = get("eval", "n_episodes", int)
    if eval_episodes < 1:
        raise ValidationError("eval.n_episodes: must be at least 1")
    results = Path(get("eval", "results"))
    return RunConfig(
        seed=seed,
        run_id=get("run", "id"),
        out=out_dir,
        env_name=env_name,
        env_params=params,
        behavior_kind=kind,
        behavior_probs=probs,
        sampling=sampling,
        n_episodes=n_episodes,
        reward_tol=get("dataset", "reward_tol", float),
        learn=learn,
        algorithm=algorithm,
        init=get("learn", "init", float),
        rescale=rescale,
        eval_episodes=eval_episodes,
        eval_seed=seed + get("eval", "seed_offset", int),
        consensus_states=get("eval", "consensus_states", int),
        results=results if results.is_absolute() else out_dir / results,
        source=path,
    )


def with_mode(config: RunConfig, mode: str) -> RunConfig:
    return replace(config, learn=config.learn.with_mode(mode))
