"""Experiment configuration, the training loop, evaluation and metrics files.

Every run derives six independent random streams from its seed, always in the
same order: environment resets, behaviour noise (warmup actions and
exploration), replay sampling, network initialization, TD3 target smoothing,
and evaluation resets. Changing the replay strategy therefore only changes
which batches are drawn, never the environment or initial weights.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agents import DDPG_HIDDEN, TD3_HIDDEN, DdpgAgent, Td3Agent, save_agent
from .envs import ENVIRONMENTS, make_env
from .errors import ConfigError, DivergenceError
from .gauss import KlTarget
from .replay import (
    PrioritizedReplayBuffer,
    ReplayBuffer,
    Transition,
    batch_kappa,
    klper_select,
    per_sample,
    per_update_priorities,
    sample_uniform,
)

log = logging.getLogger(__name__)

ALGORITHMS = ("ddpg", "td3")
STRATEGIES = ("vanilla", "per", "klper")
STREAMS = ("env", "noise", "replay", "init", "smoothing", "eval")

ALGO_DEFAULTS = {
    "ddpg": dict(warmup=10_000, batch_size=64, n_candidates=4, kl_sigma=0.1,
                 actor_lr=1e-4, critic_lr=3e-4, policy_delay=1, hidden=DDPG_HIDDEN),
    "td3": dict(warmup=25_000, batch_size=256, n_candidates=8, kl_sigma=0.2,
                actor_lr=1e-3, critic_lr=1e-3, policy_delay=2, hidden=TD3_HIDDEN),
}

METRIC_COLUMNS = (
    "step",
    "eval_return_mean",
    "eval_return_std",
    "critic_loss",
    "actor_loss",
    "kappa_selected",
    "kappa_candidates_mean",
    "wallclock_s",
)


@dataclass
class RunConfig:
    """Full description of one training run. ``None`` means "algorithm default"."""

    algo: str = "ddpg"
    replay: str = "vanilla"
    env: str = "pendulum"
    seed: int = 0
    total_steps: int = 50_000
    warmup: int | None = None
    batch_size: int | None = None
    n_candidates: int | None = None
    kl_sigma: float | None = None
    per_alpha: float = 0.6
    per_beta: float = 0.4
    per_eps: float = 1e-6
    per_is_weights: bool = True
    actor_lr: float | None = None
    critic_lr: float | None = None
    tau: float = 0.005
    gamma: float = 0.99
    expl_noise: float = 0.1
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int | None = None
    hidden: tuple[int, ...] | None = None
    buffer_capacity: int | None = None
    eval_interval: int = 2500
    eval_episodes: int = 5
    out_dir: str = "runs/run"
    log_wallclock: bool = False
    save_checkpoint: bool = True
    save_buffer: bool = False

    def resolved(self) -> "RunConfig":
        if self.algo not in ALGO_DEFAULTS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; choose from {ALGORITHMS}")
        fills = {k: v for k, v in ALGO_DEFAULTS[self.algo].items() if getattr(self, k) is None}
        cfg = dataclasses.replace(self, **fills)
        if cfg.buffer_capacity is None:
            cfg.buffer_capacity = max(1, min(cfg.total_steps, 1_000_000))
        cfg.hidden = tuple(int(h) for h in cfg.hidden)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        need(self.algo in ALGORITHMS, f"algo must be one of {ALGORITHMS}")
        need(self.replay in STRATEGIES, f"replay must be one of {STRATEGIES}")
        need(self.env in ENVIRONMENTS, f"env must be one of {sorted(ENVIRONMENTS)}")
        need(self.total_steps >= 0, "total_steps must be >= 0")
        need(self.warmup is not None and 0 <= self.warmup <= self.total_steps, "need 0 <= warmup <= total_steps")
        need(self.batch_size is not None and self.batch_size >= 2, "batch_size must be >= 2")
        need(self.warmup >= self.batch_size or self.warmup == self.total_steps,
             "warmup must hold at least one batch")
        need(self.n_candidates is not None and self.n_candidates >= 1, "n_candidates must be >= 1")
        need(self.kl_sigma is not None and self.kl_sigma > 0, "kl_sigma must be > 0")
        need(self.eval_interval > 0, "eval_interval must be > 0")
        need(self.eval_episodes >= 1, "eval_episodes must be >= 1")
        need(0.0 <= self.gamma < 1.0, "gamma must lie in [0, 1)")
        need(0.0 < self.tau <= 1.0, "tau must lie in (0, 1]")
        need(self.per_alpha >= 0 and self.per_beta >= 0 and self.per_eps > 0, "bad PER parameters")
        need(self.buffer_capacity is None or self.buffer_capacity >= 1, "buffer_capacity must be >= 1")
        need(self.policy_delay is None or self.policy_delay >= 1, "policy_delay must be >= 1")

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"


_BOOL_KEYS = {"per_is_weights", "log_wallclock", "save_checkpoint", "save_buffer"}
_INT_KEYS = {"seed", "total_steps", "warmup", "batch_size", "n_candidates", "policy_delay",
             "buffer_capacity", "eval_interval", "eval_episodes"}
_STR_KEYS = {"algo", "replay", "env", "out_dir"}
CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def coerce_value(key: str, text: str):
    """Parse one config value from text according to the key's type."""
    if key not in CONFIG_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    text = text.strip()
    try:
        if key in _STR_KEYS:
            return text
        if key in _BOOL_KEYS:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if key in _INT_KEYS:
            return int(text)
        if key == "hidden":
            return tuple(int(h) for h in text.split(",") if h.strip())
        return float(text)
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for {key}") from None


def parse_config_text(text: str) -> dict:
    """Flat ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = coerce_value(key.strip(), value)
    return out


def load_config_file(path: str | Path) -> dict:
    try:
        return parse_config_text(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc


@dataclass
class MetricsRow:
    step: int
    eval_return_mean: float
    eval_return_std: float
    critic_loss: float = math.nan
    actor_loss: float = math.nan
    kappa_selected: float = math.nan
    kappa_candidates_mean: float = math.nan
    wallclock_s: float = math.nan

    def values(self) -> tuple:
        return tuple(getattr(self, c) for c in METRIC_COLUMNS)


def emit_metrics(rows: Sequence[MetricsRow], path: str | Path) -> Path:
    """Write rows as CSV with shortest round-trip float formatting."""
    if not rows:
        raise ValueError("no metrics rows to write")
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRIC_COLUMNS)
            for row in rows:
                writer.writerow([str(row.step)] + [repr(float(v)) for v in row.values()[1:]])
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc
    return path


def read_metrics(path: str | Path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRIC_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        return [MetricsRow(int(r[0]), *(float(v) for v in r[1:])) for r in reader]


def evaluate(agent, env, episodes: int, rng: np.random.Generator) -> tuple[float, np.ndarray]:
    """Run the noiseless policy for ``episodes`` episodes; return (mean, per-episode returns)."""
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    returns = np.zeros(episodes)
    for ep in range(episodes):
        state = env.reset(rng)
        total, done = 0.0, False
        while not done:
            res = env.step(agent.act(state, explore=False))
            total += res.reward
            state, done = res.state, res.done
        returns[ep] = total
    return float(returns.mean()), returns


def return_std(returns: np.ndarray) -> float:
    """Population std, shifted by the first value so identical episodes give exactly 0."""
    returns = np.asarray(returns, dtype=np.float64)
    return float(np.std(returns - returns[0]))


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


def build_agent(cfg: RunConfig, spec, streams: dict[str, np.random.Generator]):
    common = dict(
        state_dim=spec.state_dim, action_dim=spec.action_dim, action_bound=spec.action_bound,
        hidden=cfg.hidden, actor_lr=cfg.actor_lr, critic_lr=cfg.critic_lr,
        tau=cfg.tau, gamma=cfg.gamma, expl_noise=cfg.expl_noise, rng=streams["init"],
    )
    if cfg.algo == "ddpg":
        return DdpgAgent(**common)
    return Td3Agent(policy_noise=cfg.policy_noise, noise_clip=cfg.noise_clip,
                    policy_delay=cfg.policy_delay, smoothing_rng=streams["smoothing"], **common)


class _Window:
    """Running sums of per-update diagnostics between two metric rows."""

    def __init__(self):
        self.critic = []
        self.actor = []
        self.kappa_sel = []
        self.kappa_cand = []

    def add(self, info: dict, kappa_sel: float, kappa_cand: float) -> None:
        self.critic.append(info["critic_loss"])
        if not math.isnan(info["actor_loss"]):
            self.actor.append(info["actor_loss"])
        self.kappa_sel.append(kappa_sel)
        self.kappa_cand.append(kappa_cand)

    @staticmethod
    def _mean(xs) -> float:
        return float(np.mean(xs)) if xs else math.nan

    def flush(self) -> dict:
        out = dict(critic_loss=self._mean(self.critic), actor_loss=self._mean(self.actor),
                   kappa_selected=self._mean(self.kappa_sel),
                   kappa_candidates_mean=self._mean(self.kappa_cand))
        self.__init__()
        return out


@dataclass
class RunResult:
    config: RunConfig
    rows: list[MetricsRow]
    metrics_path: Path
    env_steps: int
    updates: int
    first_update_buffer_size: int | None = None
    checkpoint: Path | None = None
    diverged: bool = False
    extras: dict = field(default_factory=dict)


class Trainer:
    """Holds the state of one run; :meth:`run` executes the whole schedule."""

    def __init__(self, config: RunConfig):
        self.cfg = cfg = config.resolved()
        self.out = Path(cfg.out_dir)
        self.streams = make_streams(cfg.seed)
        self.env = make_env(cfg.env)
        self.eval_env = make_env(cfg.env)
        self.spec = spec = self.env.spec
        self.agent = build_agent(cfg, spec, self.streams)
        if cfg.replay == "per":
            self.buffer = PrioritizedReplayBuffer(cfg.buffer_capacity, spec.state_dim, spec.action_dim,
                                                  alpha=cfg.per_alpha, beta=cfg.per_beta, eps=cfg.per_eps)
        else:
            self.buffer = ReplayBuffer(cfg.buffer_capacity, spec.state_dim, spec.action_dim)
        self.kl_target = KlTarget(cfg.kl_sigma, spec.action_dim)
        self.rows: list[MetricsRow] = []
        self.window = _Window()
        self.env_steps = 0
        self.updates = 0
        self.first_update_buffer_size: int | None = None
        self._t0 = time.perf_counter()

    def _wallclock(self) -> float:
        # off by default so that metrics files are reproducible byte for byte
        return time.perf_counter() - self._t0 if self.cfg.log_wallclock else math.nan

    def _eval_row(self, step: int) -> MetricsRow:
        mean, returns = evaluate(self.agent, self.eval_env, self.cfg.eval_episodes, self.streams["eval"])
        row = MetricsRow(step, mean, return_std(returns), **self.window.flush(), wallclock_s=self._wallclock())
        log.info("step %d  return %.2f  critic %.4g  kappa %.4g", step, mean, row.critic_loss, row.kappa_selected)
        return row

    def select_batch(self):
        """Draw the training batch for this step; returns (batch, kappa_selected, kappa_candidates_mean)."""
        cfg, rng = self.cfg, self.streams["replay"]
        if cfg.replay == "klper":
            batch, kappas = klper_select(self.buffer, cfg.n_candidates, cfg.batch_size,
                                         self.agent.policy, self.kl_target, rng)
            low = float(kappas.min())
            # written as min + mean(excess) so rounding can never put the mean below the min
            return batch, low, low + float(np.mean(kappas - low))
        if cfg.replay == "per":
            batch = per_sample(self.buffer, cfg.batch_size, rng)
            if not cfg.per_is_weights:
                batch.weights = None
        else:
            batch = sample_uniform(self.buffer, cfg.batch_size, rng)
        kappa = batch_kappa(batch, self.agent.policy, self.kl_target)
        return batch, kappa, kappa

    def learn(self) -> None:
        if self.first_update_buffer_size is None:
            self.first_update_buffer_size = len(self.buffer)
        batch, k_sel, k_cand = self.select_batch()
        self.updates += 1
        info = self.agent.update(batch, self.updates)
        if self.cfg.replay == "per":
            per_update_priorities(self.buffer, batch.indices, info["td_abs"])
        self.window.add(info, k_sel, k_cand)

    def run(self) -> RunResult:
        cfg = self.cfg
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.txt").write_text(cfg.to_text())
        noise_rng, env_rng = self.streams["noise"], self.streams["env"]
        bound, l = self.spec.action_bound, self.spec.action_dim

        diverged = None
        self.rows.append(self._eval_row(0))
        state = self.env.reset(env_rng)
        try:
            for t in range(1, cfg.total_steps + 1):
                if t <= cfg.warmup:
                    action = noise_rng.uniform(-bound, bound, size=l)
                else:
                    action = self.agent.act(state, explore=True, rng=noise_rng)
                res = self.env.step(action)
                self.buffer.push(Transition(state, action, res.reward, res.state, res.terminal))
                self.env_steps += 1
                state = self.env.reset(env_rng) if res.done else res.state
                if t > cfg.warmup:
                    self.learn()
                if t % cfg.eval_interval == 0:
                    self.rows.append(self._eval_row(t))
        except DivergenceError as exc:
            log.error("run diverged at step %d: %s", self.env_steps, exc)
            diverged = exc

        metrics_path = emit_metrics(self.rows, self.out / "metrics.csv")
        result = RunResult(cfg, self.rows, metrics_path, self.env_steps, self.updates,
                           self.first_update_buffer_size, diverged=diverged is not None)
        if diverged is not None:
            raise DivergenceError(f"{diverged} (partial metrics in {metrics_path})") from diverged
        if cfg.save_checkpoint:
            result.checkpoint = save_agent(self.agent, self.out / "checkpoint", step=self.env_steps)
        if cfg.save_buffer:
            self.buffer.save(self.out / "buffer.bin")
        return result


def train(config: RunConfig) -> RunResult:
    return Trainer(config).run()


def parse_seeds(text: str) -> list[int]:
    """``"0..4"`` (inclusive range) or a comma list such as ``"0,3,7"``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse seed list {text!r}") from None
    if not seeds:
        raise ConfigError(f"empty seed list {text!r}")
    return seeds


def _run_cell(cfg: RunConfig) -> Path:
    return train(cfg).metrics_path


def compare(
    base: RunConfig,
    seeds: Iterable[int],
    strategies: Sequence[str] = STRATEGIES,
    jobs: int = 1,
) -> list[Path]:
    """Train every (strategy, seed) cell and write one metrics file per cell.

    Cells go to ``<out_dir>/<strategy>/seed<k>/metrics.csv``; a long-format
    ``compare.csv`` with every cell's rows is written next to them.
    """
    root = Path(base.out_dir)
    cells = []
    for strategy in strategies:
        for seed in seeds:
            cells.append(dataclasses.replace(base, replay=strategy, seed=seed,
                                             out_dir=str(root / strategy / f"seed{seed}")))
    for cfg in cells:
        cfg.resolved()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            paths = list(pool.map(_run_cell, cells))
    else:
        paths = [_run_cell(cfg) for cfg in cells]

    root.mkdir(parents=True, exist_ok=True)
    with open(root / "compare.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("replay", "seed") + METRIC_COLUMNS)
        for cfg, path in zip(cells, paths):
            for row in read_metrics(path):
                writer.writerow([cfg.replay, cfg.seed, row.step] + [repr(v) for v in row.values()[1:]])
    return paths
