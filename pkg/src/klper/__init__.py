"""Off-policy actor-critic training with uniform, prioritized and KL-scored batch replay."""
from .agents import DdpgAgent, Td3Agent, clipped_double_q_target, load_agent, save_agent
from .envs import Pendulum, Reacher2D, make_env
from .gauss import BatchPolicy, KlTarget, fit_batch_policy, kl_monte_carlo_oracle, kl_to_isotropic
from .harness import RunConfig, compare, evaluate, train
from .numcore import AdamState, Mlp, adam_step, soft_update
from .replay import (
    CandidateBatch,
    PrioritizedReplayBuffer,
    ReplayBuffer,
    SumTree,
    Transition,
    klper_select,
    per_sample,
    sample_uniform,
)

__version__ = "0.1.0"
