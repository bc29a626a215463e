"""
Proportional sampling with a sum tree
=====================================

Prioritized replay stores one priority per row and samples rows in
proportion to priority**alpha. A sum tree keeps the running totals so each
draw costs a logarithmic walk from the root.
"""
import numpy as np

from klper.replay import PrioritizedReplayBuffer, SumTree, Transition, per_sample

# %% A tiny tree, inspected by hand
tree = SumTree(4)
tree.set([0, 1, 2, 3], [1.0, 2.0, 3.0, 4.0])
print("root total:", tree.total)
# prefix sums are 1, 3, 6, 10; a value of 5.5 lands in the third leaf
print("leaf holding 5.5:", tree.find(np.array([5.5]))[0])

# %% Sampling frequencies match the proportional law
buf = PrioritizedReplayBuffer(3, state_dim=1, action_dim=1, alpha=0.6)
for k in range(3):
    buf.push(Transition(np.array([k]), np.zeros(1), 0.0, np.zeros(1), False))
buf.set_priorities([0, 1, 2], [1.0, 1.0, 2.0])

rng = np.random.default_rng(0)
counts = np.zeros(3)
for _ in range(50_000):
    counts += np.bincount(per_sample(buf, 3, rng).indices, minlength=3)
print("expected :", np.round(buf.probabilities(), 4))
print("empirical:", np.round(counts / counts.sum(), 4))

# %% Importance weights undo the bias
# Rows drawn more often get smaller weights; the largest weight is always 1.
batch = per_sample(buf, 3, rng)
print("indices", batch.indices, "weights", np.round(batch.weights, 4))
