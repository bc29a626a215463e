"""Two small deterministic continuous-control tasks with a shared reset/step interface.

``pendulum``
    Torque-limited swing-up. Internal state is (theta, theta_dot) with theta = 0
    upright; observations are (cos theta, sin theta, theta_dot). Initial state:
    theta = pi + U(-pi, pi) wrapped to (-pi, pi], theta_dot = U(-1, 1), so the
    midpoint of the distribution is hanging straight down at rest.

``reacher2d``
    Unit point mass pushed by a bounded 2-D force towards a target. Observation
    is (x, y, vx, vy, tx, ty). Initial position U(-0.1, 0.1)^2 at rest; target at
    radius U(0.3, 0.9) and angle U(-pi, pi), i.e. (0.6, 0) at the midpoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    action_bound: float
    max_steps: int


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    done: bool
    step: int
    # true environment termination, as opposed to hitting the time limit
    terminal: bool = False
    info: dict = field(default_factory=dict)


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    w = math.remainder(theta, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def _check_action(action, spec: EnvSpec) -> tuple[np.ndarray, bool]:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.size != spec.action_dim:
        raise DomainError(f"action has {a.size} components, expected {spec.action_dim}")
    if not np.isfinite(a).all():
        raise DomainError("action contains non-finite values")
    clipped = np.clip(a, -spec.action_bound, spec.action_bound)
    return clipped, bool((clipped != a).any())


class Pendulum:
    G = 10.0
    MASS = 1.0
    LENGTH = 1.0
    DT = 0.05
    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0

    spec = EnvSpec("pendulum", state_dim=3, action_dim=1, action_bound=MAX_TORQUE, max_steps=200)

    # worst-case per-step reward
    MIN_REWARD = -(math.pi**2 + 0.1 * MAX_SPEED**2 + 0.001 * MAX_TORQUE**2)

    def __init__(self):
        self.theta = math.pi
        self.theta_dot = 0.0
        self.t = 0

    def observe(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def set_state(self, theta: float, theta_dot: float) -> np.ndarray:
        self.theta = wrap_angle(float(theta))
        self.theta_dot = float(np.clip(theta_dot, -self.MAX_SPEED, self.MAX_SPEED))
        self.t = 0
        return self.observe()

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        offset = float(rng.uniform(-math.pi, math.pi))
        speed = float(rng.uniform(-1.0, 1.0))
        return self.set_state(math.pi + offset, speed)

    def step(self, action) -> StepResult:
        a, clipped = _check_action(action, self.spec)
        u = float(a[0])
        th, thdot = self.theta, self.theta_dot
        reward = -(wrap_angle(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2)
        g, m, length, dt = self.G, self.MASS, self.LENGTH, self.DT
        thdot = thdot + (3.0 * g / (2.0 * length) * math.sin(th) + 3.0 / (m * length**2) * u) * dt
        thdot = min(max(thdot, -self.MAX_SPEED), self.MAX_SPEED)
        self.theta = wrap_angle(th + thdot * dt)
        self.theta_dot = thdot
        self.t += 1
        done = self.t >= self.spec.max_steps
        return StepResult(self.observe(), reward, done, self.t, terminal=False, info={"clipped": clipped})


class Reacher2D:
    DT = 0.05
    MAX_FORCE = 1.0
    BOX = 2.0
    MAX_SPEED = 2.0
    GOAL_RADIUS = 0.05

    spec = EnvSpec("reacher2d", state_dim=6, action_dim=2, action_bound=MAX_FORCE, max_steps=150)

    def __init__(self):
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.target = np.array([0.6, 0.0])
        self.t = 0

    def observe(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel, self.target])

    def set_state(self, pos, vel, target) -> np.ndarray:
        self.pos = np.clip(np.asarray(pos, dtype=np.float64), -self.BOX, self.BOX)
        self.vel = np.clip(np.asarray(vel, dtype=np.float64), -self.MAX_SPEED, self.MAX_SPEED)
        self.target = np.asarray(target, dtype=np.float64).copy()
        self.t = 0
        return self.observe()

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        pos = rng.uniform(-0.1, 0.1, size=2)
        radius = float(rng.uniform(0.3, 0.9))
        angle = float(rng.uniform(-math.pi, math.pi))
        target = np.array([radius * math.cos(angle), radius * math.sin(angle)])
        return self.set_state(pos, np.zeros(2), target)

    def step(self, action) -> StepResult:
        force, clipped = _check_action(action, self.spec)
        vel = np.clip(self.vel + force * self.DT, -self.MAX_SPEED, self.MAX_SPEED)
        pos = self.pos + vel * self.DT
        hit_wall = np.abs(pos) > self.BOX
        pos = np.clip(pos, -self.BOX, self.BOX)
        vel = np.where(hit_wall, 0.0, vel)
        self.pos, self.vel = pos, vel
        self.t += 1
        dist = float(np.linalg.norm(self.pos - self.target))
        reached = dist < self.GOAL_RADIUS
        done = reached or self.t >= self.spec.max_steps
        return StepResult(self.observe(), -dist, done, self.t, terminal=reached, info={"clipped": clipped})


ENVIRONMENTS = {"pendulum": Pendulum, "reacher2d": Reacher2D}


def make_env(name: str):
    try:
        return ENVIRONMENTS[name]()
    except KeyError:
        raise ConfigError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
