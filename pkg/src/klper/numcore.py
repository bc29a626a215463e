"""Dense fully-connected networks with hand-written backprop, Adam and Polyak averaging.

Matrices are plain float64 numpy arrays, rows are batch elements. Weights are
stored as ``(fan_in, fan_out)`` so a layer computes ``x @ W + b``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError, SnapshotError, StateError

ACTIVATIONS = ("relu", "tanh", "identity")
FINAL_LAYER_INIT = 3e-3

_SNAPSHOT_MAGIC = b"KLPER-MLP 1\n"
_FLUSH_EVERY = 256
_FLUSH_BELOW = 1e-200


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


class Mlp:
    """Fully-connected network: ReLU hidden layers and a tanh or identity head.

    ``forward`` caches what ``backward`` needs, so a backward call refers to
    the most recent forward call on the same instance.
    """

    def __init__(
        self,
        sizes: Sequence[int],
        output_activation: str = "identity",
        rng: np.random.Generator | None = None,
        final_init: float = FINAL_LAYER_INIT,
    ):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ShapeError(f"need at least two positive layer sizes, got {sizes}")
        if output_activation not in ("tanh", "identity"):
            raise ConfigError(f"unsupported output activation {output_activation!r}")
        self.sizes = sizes
        self.activations = ["relu"] * (len(sizes) - 2) + [output_activation]
        rng = np.random.default_rng() if rng is None else rng

        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = final_init if k == len(sizes) - 2 else 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self._cache: list[tuple[np.ndarray, np.ndarray]] | None = None

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays in ``[W0, b0, W1, b1, ...]`` order (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        clone = object.__new__(Mlp)
        clone.sizes = list(self.sizes)
        clone.activations = list(self.activations)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        clone._cache = None
        return clone

    def load_params(self, params: Sequence[np.ndarray]) -> None:
        """Overwrite parameters in place from a ``params``-ordered sequence."""
        own = self.params
        if len(params) != len(own):
            raise ShapeError(f"expected {len(own)} parameter arrays, got {len(params)}")
        for dst, src in zip(own, params):
            if dst.shape != np.shape(src):
                raise ShapeError(f"parameter shape {np.shape(src)} != {dst.shape}")
            dst[...] = src

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeError(f"input shape {x.shape} incompatible with input size {self.in_dim}")
        cache = []
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = h @ w + b
            out = _activate(act, z)
            cache.append((h, out))
            h = out
        self._cache = cache
        return h

    def backward(
        self, upstream_grad: np.ndarray, need_param_grads: bool = True
    ) -> tuple[list[np.ndarray] | None, np.ndarray]:
        """Backpropagate ``upstream_grad`` (d loss / d output) through the last forward pass.

        Returns ``(param_grads, input_grad)`` where ``param_grads`` follows the
        ``params`` ordering, or is None when ``need_param_grads`` is False.
        """
        if self._cache is None:
            raise StateError("backward called before forward")
        g = np.asarray(upstream_grad, dtype=np.float64)
        batch = self._cache[0][0].shape[0]
        if g.shape != (batch, self.out_dim):
            raise ShapeError(f"upstream grad shape {g.shape} != {(batch, self.out_dim)}")

        grads: list[np.ndarray] = []
        for k in range(len(self.weights) - 1, -1, -1):
            h_in, out = self._cache[k]
            act = self.activations[k]
            if act == "relu":
                g = g * (out > 0.0)
            elif act == "tanh":
                g = g * (1.0 - out * out)
            if need_param_grads:
                grads.append(g.sum(axis=0))
                grads.append(h_in.T @ g)
            g = g @ self.weights[k].T
        if not need_param_grads:
            return None, g
        grads.reverse()
        return grads, g


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters for one parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    scratch: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float, **kwargs) -> "AdamState":
        if not lr > 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=float(lr),
            **kwargs,
        )


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state differ in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
    if not state.lr > 0:
        raise ConfigError(f"learning rate must be positive, got {state.lr}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    if state.scratch is None:
        state.scratch = [np.empty_like(p) for p in params]
    for p, g, m, v, tmp in zip(params, grads, state.m, state.v, state.scratch):
        m *= b1
        np.multiply(g, 1.0 - b1, out=tmp)
        m += tmp
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        # p -= lr * (m / corr1) / (sqrt(v / corr2) + eps)
        np.divide(v, corr2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= state.lr / corr1
        p -= tmp
    if state.step % _FLUSH_EVERY == 0:
        # moments of parameters whose gradient stays exactly zero (dead ReLUs)
        # decay into subnormal range, where float arithmetic is ~20x slower
        for acc in (*state.m, *state.v):
            acc[np.abs(acc) < _FLUSH_BELOW] = 0.0


def soft_update(target: Sequence[np.ndarray], online: Sequence[np.ndarray], tau: float) -> None:
    """Polyak-average ``online`` into ``target`` in place: t <- tau*o + (1-tau)*t."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    if len(target) != len(online):
        raise ShapeError("target and online parameter lists differ in length")
    for t, o in zip(target, online):
        if t.shape != o.shape:
            raise ShapeError(f"shape mismatch {t.shape} vs {o.shape}")
        if tau == 1.0:
            t[...] = o
        elif tau > 0.0:
            t -= o
            t *= 1.0 - tau
            t += o


def all_finite(arrays: Sequence[np.ndarray]) -> bool:
    return all(np.isfinite(a).all() for a in arrays)


# Snapshot layout: magic line, one JSON header line, then for every layer the
# weight block (fan_in x fan_out, row-major) followed by the bias block, all
# little-endian float64.
def save_mlp(net: Mlp, path: str | Path) -> None:
    header = {"sizes": net.sizes, "activations": net.activations, "dtype": "<f8"}
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_MAGIC)
        fh.write(json.dumps(header).encode("ascii") + b"\n")
        for p in net.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes(order="C"))


def load_mlp(path: str | Path) -> Mlp:
    with open(path, "rb") as fh:
        if fh.readline() != _SNAPSHOT_MAGIC:
            raise SnapshotError(f"{path}: not a network snapshot")
        header = json.loads(fh.readline().decode("ascii"))
        payload = fh.read()
    sizes, acts = header["sizes"], header["activations"]
    if any(a not in ACTIVATIONS for a in acts) or len(acts) != len(sizes) - 1:
        raise SnapshotError(f"{path}: bad activation tags {acts}")
    net = Mlp(sizes, output_activation=acts[-1], rng=np.random.default_rng(0))
    net.activations = list(acts)
    offset = 0
    for p in net.params:
        nbytes = p.size * 8
        if offset + nbytes > len(payload):
            raise SnapshotError(f"{path}: truncated parameter block")
        p[...] = np.frombuffer(payload, dtype="<f8", count=p.size, offset=offset).reshape(p.shape)
        offset += nbytes
    if offset != len(payload):
        raise SnapshotError(f"{path}: {len(payload) - offset} trailing bytes")
    return net
