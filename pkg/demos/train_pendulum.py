"""
Training DDPG on the pendulum with KL-scored replay
===================================================

A short run that shows the moving parts of the harness. Each learning step
draws four uniform candidate batches, scores them against the current actor,
and trains on the lowest-scoring one. The metrics rows record the selected
score next to the candidate average.

Full-length runs use 50k steps and a 10k-step warmup; this one is cut down so
it finishes in a minute or two.
"""
import tempfile

from klper.harness import RunConfig, train

out = tempfile.mkdtemp(prefix="klper-demo-")
cfg = RunConfig(algo="ddpg", replay="klper", env="pendulum", seed=0,
                total_steps=4000, warmup=1000, eval_interval=1000, eval_episodes=3,
                hidden=(64, 64), out_dir=out)
result = train(cfg)

# %% Learning curve and batch scores
print(f"{'step':>6} {'return':>10} {'kappa sel':>10} {'kappa cand':>10}")
for row in result.rows:
    print(f"{row.step:>6} {row.eval_return_mean:>10.1f} {row.kappa_selected:>10.3f} {row.kappa_candidates_mean:>10.3f}")
print("metrics written to", result.metrics_path)

# %% The same run from the command line
# klper train --algo ddpg --replay klper --env pendulum --seed 0 --steps 4000 \
#     --warmup 1000 --hidden 64,64 --eval-interval 1000 --eval-episodes 3 --out runs/demo
