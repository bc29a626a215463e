"""DDPG and TD3 actor-critic agents built on :mod:`klper.numcore`.

Critics take the state and action concatenated at the input layer. The actor
is a tanh network whose output is scaled by the action bound.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, ShapeError, SnapshotError
from .numcore import AdamState, Mlp, adam_step, all_finite, load_mlp, save_mlp, soft_update
from .replay import CandidateBatch

DDPG_HIDDEN = (400, 300)
TD3_HIDDEN = (256, 256)


def clipped_double_q_target(r, gamma, q1_next, q2_next, done):
    """Bootstrap target ``r + gamma * min(q1', q2') * (1 - done)``."""
    return r + gamma * np.minimum(q1_next, q2_next) * (1.0 - np.asarray(done, dtype=np.float64))


def _check_finite(value: float, what: str, nets: Sequence[Mlp] = ()) -> None:
    if not np.isfinite(value):
        raise DivergenceError(f"{what} became non-finite ({value})")
    for net in nets:
        if not all_finite(net.params):
            raise DivergenceError(f"non-finite parameters after {what} step")


class _ActorCritic:
    algo = ""

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        action_bound: float,
        hidden: Sequence[int],
        actor_lr: float,
        critic_lr: float,
        tau: float,
        gamma: float,
        expl_noise: float,
        rng: np.random.Generator | None,
    ):
        if not 0.0 <= gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {gamma}")
        if not 0.0 < tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {tau}")
        if not action_bound > 0:
            raise ConfigError("action bound must be positive")
        rng = np.random.default_rng() if rng is None else rng
        self.state_dim, self.action_dim = int(state_dim), int(action_dim)
        self.action_bound = float(action_bound)
        self.hidden = tuple(int(h) for h in hidden)
        self.actor_lr, self.critic_lr = float(actor_lr), float(critic_lr)
        self.tau, self.gamma = float(tau), float(gamma)
        self.expl_noise = float(expl_noise)

        self.actor = Mlp([state_dim, *self.hidden, action_dim], "tanh", rng)
        self.actor_target = self.actor.copy()
        self.actor_opt = AdamState.for_params(self.actor.params, actor_lr)
        self.updates = 0

    def _new_critic(self, rng) -> Mlp:
        return Mlp([self.state_dim + self.action_dim, *self.hidden, 1], "identity", rng)

    def policy(self, states: np.ndarray) -> np.ndarray:
        return self.action_bound * self.actor.forward(states)

    def target_policy(self, states: np.ndarray) -> np.ndarray:
        return self.action_bound * self.actor_target.forward(states)

    @staticmethod
    def q_value(critic: Mlp, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return critic.forward(np.concatenate([states, actions], axis=1))[:, 0]

    def act(self, state, explore: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        s = np.asarray(state, dtype=np.float64).reshape(1, -1)
        if s.shape[1] != self.state_dim:
            raise ShapeError(f"state has {s.shape[1]} components, expected {self.state_dim}")
        a = self.policy(s)[0]
        if explore and self.expl_noise > 0:
            if rng is None:
                raise ConfigError("exploration requires an rng")
            a = a + rng.normal(0.0, self.expl_noise, size=self.action_dim)
        return np.clip(a, -self.action_bound, self.action_bound)

    def _critic_step(self, critic: Mlp, opt: AdamState, batch: CandidateBatch, y: np.ndarray):
        b = len(batch)
        q = self.q_value(critic, batch.states, batch.actions)
        diff = q - y
        w = np.ones(b) if batch.weights is None else batch.weights
        loss = float(np.mean(w * diff * diff))
        _check_finite(loss, "critic loss")
        grads, _ = critic.backward((2.0 / b) * (w * diff)[:, None])
        adam_step(critic.params, grads, opt)
        _check_finite(loss, "critic", [critic])
        return loss, diff

    def _actor_step(self, critic: Mlp, states: np.ndarray) -> float:
        b = states.shape[0]
        actions = self.policy(states)
        q = self.q_value(critic, states, actions)
        loss = float(-q.mean())
        _check_finite(loss, "actor loss")
        _, g_in = critic.backward(np.full((b, 1), -1.0 / b), need_param_grads=False)
        grads, _ = self.actor.backward(self.action_bound * g_in[:, self.state_dim:])
        adam_step(self.actor.params, grads, self.actor_opt)
        _check_finite(loss, "actor", [self.actor])
        return loss

    def networks(self) -> dict[str, Mlp]:
        raise NotImplementedError

    def hyperparams(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "action_bound": self.action_bound,
            "hidden": list(self.hidden),
            "actor_lr": self.actor_lr,
            "critic_lr": self.critic_lr,
            "tau": self.tau,
            "gamma": self.gamma,
            "expl_noise": self.expl_noise,
        }


class DdpgAgent(_ActorCritic):
    algo = "ddpg"
    policy_delay = 1

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        action_bound: float = 1.0,
        hidden: Sequence[int] = DDPG_HIDDEN,
        actor_lr: float = 1e-4,
        critic_lr: float = 3e-4,
        tau: float = 0.005,
        gamma: float = 0.99,
        expl_noise: float = 0.1,
        rng: np.random.Generator | None = None,
    ):
        rng = np.random.default_rng() if rng is None else rng
        super().__init__(state_dim, action_dim, action_bound, hidden, actor_lr, critic_lr,
                         tau, gamma, expl_noise, rng)
        self.critic = self._new_critic(rng)
        self.critic_target = self.critic.copy()
        self.critic_opt = AdamState.for_params(self.critic.params, critic_lr)

    def critic_targets(self, batch: CandidateBatch) -> np.ndarray:
        q_next = self.q_value(self.critic_target, batch.next_states, self.target_policy(batch.next_states))
        return clipped_double_q_target(batch.rewards, self.gamma, q_next, q_next, batch.dones)

    def update(self, batch: CandidateBatch, step_index: int | None = None) -> dict:
        """One critic step, one actor step, then Polyak-average both targets."""
        if len(batch) == 0:
            raise ShapeError("empty batch")
        y = self.critic_targets(batch)
        critic_loss, diff = self._critic_step(self.critic, self.critic_opt, batch, y)
        actor_loss = self._actor_step(self.critic, batch.states)
        soft_update(self.actor_target.params, self.actor.params, self.tau)
        soft_update(self.critic_target.params, self.critic.params, self.tau)
        self.updates += 1
        return {"critic_loss": critic_loss, "actor_loss": actor_loss, "td_abs": np.abs(diff), "target": y}

    def networks(self) -> dict[str, Mlp]:
        return {
            "actor": self.actor,
            "actor_target": self.actor_target,
            "critic": self.critic,
            "critic_target": self.critic_target,
        }


class Td3Agent(_ActorCritic):
    algo = "td3"

    def __init__(
        self,
        state_dim: int,
        action_dim: int,
        action_bound: float = 1.0,
        hidden: Sequence[int] = TD3_HIDDEN,
        actor_lr: float = 1e-3,
        critic_lr: float = 1e-3,
        tau: float = 0.005,
        gamma: float = 0.99,
        expl_noise: float = 0.1,
        policy_noise: float = 0.2,
        noise_clip: float = 0.5,
        policy_delay: int = 2,
        rng: np.random.Generator | None = None,
        smoothing_rng: np.random.Generator | None = None,
    ):
        rng = np.random.default_rng() if rng is None else rng
        super().__init__(state_dim, action_dim, action_bound, hidden, actor_lr, critic_lr,
                         tau, gamma, expl_noise, rng)
        if policy_delay < 1:
            raise ConfigError(f"policy delay must be >= 1, got {policy_delay}")
        if policy_noise < 0 or noise_clip < 0:
            raise ConfigError("smoothing noise std and clip must be non-negative")
        self.policy_noise = float(policy_noise)
        self.noise_clip = float(noise_clip)
        self.policy_delay = int(policy_delay)
        self.smoothing_rng = np.random.default_rng() if smoothing_rng is None else smoothing_rng
        self.critic1 = self._new_critic(rng)
        self.critic2 = self._new_critic(rng)
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.critic1_opt = AdamState.for_params(self.critic1.params, critic_lr)
        self.critic2_opt = AdamState.for_params(self.critic2.params, critic_lr)

    def smoothed_target_actions(self, next_states: np.ndarray) -> np.ndarray:
        a = self.target_policy(next_states)
        if self.policy_noise > 0:
            noise = self.smoothing_rng.normal(0.0, self.policy_noise, size=a.shape)
            a = a + np.clip(noise, -self.noise_clip, self.noise_clip)
        return np.clip(a, -self.action_bound, self.action_bound)

    def critic_targets(self, batch: CandidateBatch) -> np.ndarray:
        a_next = self.smoothed_target_actions(batch.next_states)
        q1 = self.q_value(self.critic1_target, batch.next_states, a_next)
        q2 = self.q_value(self.critic2_target, batch.next_states, a_next)
        return clipped_double_q_target(batch.rewards, self.gamma, q1, q2, batch.dones)

    def update(self, batch: CandidateBatch, step_index: int) -> dict:
        """Regress both critics; on every ``policy_delay``-th step also move actor and targets."""
        if len(batch) == 0:
            raise ShapeError("empty batch")
        y = self.critic_targets(batch)
        loss1, diff1 = self._critic_step(self.critic1, self.critic1_opt, batch, y)
        loss2, _ = self._critic_step(self.critic2, self.critic2_opt, batch, y)
        actor_loss = float("nan")
        if step_index % self.policy_delay == 0:
            actor_loss = self._actor_step(self.critic1, batch.states)
            soft_update(self.actor_target.params, self.actor.params, self.tau)
            soft_update(self.critic1_target.params, self.critic1.params, self.tau)
            soft_update(self.critic2_target.params, self.critic2.params, self.tau)
        self.updates += 1
        return {"critic_loss": loss1 + loss2, "actor_loss": actor_loss, "td_abs": np.abs(diff1), "target": y}

    def hyperparams(self) -> dict:
        hp = super().hyperparams()
        hp.update(policy_noise=self.policy_noise, noise_clip=self.noise_clip, policy_delay=self.policy_delay)
        return hp

    def networks(self) -> dict[str, Mlp]:
        return {
            "actor": self.actor,
            "actor_target": self.actor_target,
            "critic1": self.critic1,
            "critic1_target": self.critic1_target,
            "critic2": self.critic2,
            "critic2_target": self.critic2_target,
        }


AGENTS = {"ddpg": DdpgAgent, "td3": Td3Agent}


def save_agent(agent: _ActorCritic, directory: str | Path, step: int = 0) -> Path:
    """Write every network snapshot plus ``manifest.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, net in agent.networks().items():
        save_mlp(net, directory / f"{name}.mlp")
    manifest = {"algo": agent.algo, "step": int(step), "updates": agent.updates,
                "hyperparams": agent.hyperparams()}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_agent(directory: str | Path) -> tuple[_ActorCritic, dict]:
    """Rebuild an agent from :func:`save_agent` output; returns ``(agent, manifest)``.

    Optimizer moments are not stored, so training resumes with fresh Adam state.
    """
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
        cls = AGENTS[manifest["algo"]]
    except (OSError, KeyError, ValueError) as exc:
        raise SnapshotError(f"{directory}: unreadable agent manifest") from exc
    agent = cls(rng=np.random.default_rng(0), **manifest["hyperparams"])
    for name, net in agent.networks().items():
        net.load_params(load_mlp(directory / f"{name}.mlp").params)
    agent.updates = manifest.get("updates", 0)
    return agent, manifest
