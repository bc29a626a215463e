"""
Checking hand-written backprop against finite differences
=========================================================

The networks here are plain numpy with a manual backward pass, so it pays to
verify the gradients numerically. We nudge every parameter by +-h and compare
the slope of the loss with what ``backward`` reports.
"""
import numpy as np

from klper.numcore import Mlp

rng = np.random.default_rng(3)
net = Mlp([4, 16, 16, 2], output_activation="tanh", rng=rng, final_init=0.5)
x = rng.normal(size=(8, 4))
coeff = rng.normal(size=(8, 2))


def loss():
    return float(np.sum(coeff * net.forward(x)))


net.forward(x)
grads, _ = net.backward(coeff)

# %% Central differences, one parameter at a time
h = 1e-5
worst = 0.0
for p, g in zip(net.params, grads):
    flat, gflat = p.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss()
        flat[i] = old - h
        down = loss()
        flat[i] = old
        numeric = (up - down) / (2 * h)
        worst = max(worst, abs(numeric - gflat[i]) / max(abs(numeric), abs(gflat[i]), 1e-6))

print(f"{net.num_params()} parameters, worst relative error {worst:.2e}")
