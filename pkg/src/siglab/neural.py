"""Minimal feed-forward network stack on numpy: forward, backprop, Adam.

Hidden layers use leaky ReLU (slope 0.01), the output layer is linear.
The first hidden layer can be group-structured: input features are
partitioned into equal-role groups (one per road) that share a single dense
block, with every remaining feature routed through its own dense block and
the group outputs concatenated. Inputs are standardized by fixed per-feature
scale constants supplied at construction, never by running statistics.

Checkpoints are text: a one-line JSON header describing the architecture
followed by one weight value per line in parameter order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.01


def leaky_relu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def leaky_relu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


def _init_weight(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class DenseLayer:
    """Fully connected layer: z = x @ W + b."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.n_in = n_in
        self.n_out = n_out
        self.W = _init_weight(rng, n_in, (n_in, n_out))
        self.b = np.zeros(n_out)

    @property
    def params(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.W + self.b

    def backward(self, x: np.ndarray, dz: np.ndarray):
        dW = x.T @ dz
        db = dz.sum(axis=0)
        dx = dz @ self.W.T
        return [dW, db], dx

    def config(self) -> dict:
        return {"kind": "dense", "n_in": self.n_in, "n_out": self.n_out}


class GroupedDenseLayer:
    """Shared dense block applied to each feature group, plus a rest block.

    ``groups`` lists input-index tuples (one per road); shorter groups are
    zero-padded up to the widest, so one (width, units) weight block serves
    them all, the way a shared convolution kernel would. Features outside
    every group feed a separate dense block; outputs concatenate as
    [group_0, ..., group_{k-1}, rest].
    """

    def __init__(self, n_in: int, groups: list[tuple[int, ...]],
                 group_units: int, rest_units: int, rng: np.random.Generator):
        self.n_in = n_in
        self.groups = [tuple(g) for g in groups]
        self.group_units = group_units
        self.width = max(len(g) for g in self.groups)
        grouped = {i for g in self.groups for i in g}
        self.rest = tuple(i for i in range(n_in) if i not in grouped)
        self.rest_units = rest_units if self.rest else 0
        self.n_out = len(self.groups) * group_units + self.rest_units
        self.Wg = _init_weight(rng, self.width, (self.width, group_units))
        self.bg = np.zeros(group_units)
        if self.rest:
            self.Wr = _init_weight(rng, len(self.rest),
                                   (len(self.rest), rest_units))
            self.br = np.zeros(rest_units)

    @property
    def params(self) -> list[np.ndarray]:
        out = [self.Wg, self.bg]
        if self.rest:
            out.extend([self.Wr, self.br])
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        parts = []
        for g in self.groups:
            xg = x[:, g]
            parts.append(xg @ self.Wg[:len(g)] + self.bg)
        if self.rest:
            parts.append(x[:, self.rest] @ self.Wr + self.br)
        return np.concatenate(parts, axis=1)

    def backward(self, x: np.ndarray, dz: np.ndarray):
        dWg = np.zeros_like(self.Wg)
        dbg = np.zeros_like(self.bg)
        dx = np.zeros_like(x)
        u = self.group_units
        for k, g in enumerate(self.groups):
            dz_k = dz[:, k * u:(k + 1) * u]
            xg = x[:, g]
            dWg[:len(g)] += xg.T @ dz_k
            dbg += dz_k.sum(axis=0)
            dx[:, g] += dz_k @ self.Wg[:len(g)].T
        grads = [dWg, dbg]
        if self.rest:
            dz_r = dz[:, len(self.groups) * u:]
            grads.append(x[:, self.rest].T @ dz_r)
            grads.append(dz_r.sum(axis=0))
            dx[:, self.rest] += dz_r @ self.Wr.T
        return grads, dx

    def config(self) -> dict:
        return {
            "kind": "grouped",
            "n_in": self.n_in,
            "groups": [list(g) for g in self.groups],
            "group_units": self.group_units,
            "rest_units": self.rest_units or 0,
        }


class Mlp:
    """Feed-forward net: scaled inputs, leaky-ReLU hiddens, linear output.

    ``input_clip`` caps the standardized features (sensing saturates; states
    far outside the training range alias to the boundary instead of driving
    the network into unconstrained extrapolation).
    """

    def __init__(self, layers, input_scales: np.ndarray | None = None,
                 input_clip: float | None = None):
        self.layers = layers
        n_in = layers[0].n_in
        self.input_scales = (np.ones(n_in) if input_scales is None
                             else np.asarray(input_scales, dtype=float))
        self.input_clip = input_clip
        if self.input_scales.shape != (n_in,):
            raise ValueError("input scale vector length mismatch")

    @classmethod
    def build(
        cls,
        n_in: int,
        hidden: tuple[int, ...],
        n_out: int,
        rng: np.random.Generator,
        input_scales: np.ndarray | None = None,
        groups: list[tuple[int, ...]] | None = None,
        group_units: int = 16,
        rest_units: int = 16,
        input_clip: float | None = None,
    ) -> "Mlp":
        layers = []
        if groups:
            first = GroupedDenseLayer(n_in, groups, group_units, rest_units, rng)
            layers.append(first)
            prev = first.n_out
            remaining = hidden[1:]
        else:
            prev = n_in
            remaining = hidden
        for width in remaining:
            layers.append(DenseLayer(prev, width, rng))
            prev = width
        layers.append(DenseLayer(prev, n_out, rng))
        return cls(layers, input_scales, input_clip)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def set_params(self, values: list[np.ndarray]) -> None:
        own = self.params
        if len(own) != len(values):
            raise ValueError("parameter list length mismatch")
        for dst, src in zip(own, values):
            if dst.shape != src.shape:
                raise ValueError("parameter shape mismatch")
            dst[...] = src

    def copy_from(self, other: "Mlp") -> None:
        self.set_params([p.copy() for p in other.params])

    def forward(self, x: np.ndarray):
        """Returns (output, cache); accepts a single vector or a batch."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.layers[0].n_in:
            raise ValueError(
                f"input width {x.shape[1]} != expected {self.layers[0].n_in}")
        act = x / self.input_scales
        if self.input_clip is not None:
            act = np.clip(act, -self.input_clip, self.input_clip)
        cache = []
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            z = layer.forward(act)
            cache.append((act, z))
            act = leaky_relu(z) if i < n - 1 else z
        out = act[0] if squeeze else act
        return out, cache

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dout: np.ndarray) -> list[np.ndarray]:
        """Reverse-mode gradients for every parameter, in params order."""
        dout = np.asarray(dout, dtype=float)
        if dout.ndim == 1:
            dout = dout[None, :]
        grads_rev: list[np.ndarray] = []
        d = dout
        n = len(self.layers)
        for i in range(n - 1, -1, -1):
            x_in, z = cache[i]
            if i < n - 1:
                d = d * leaky_relu_grad(z)
            layer_grads, d = self.layers[i].backward(x_in, d)
            grads_rev.extend(reversed(layer_grads))
        return list(reversed(grads_rev))

    # -- checkpointing -------------------------------------------------------

    def save(self, path) -> None:
        header = {
            "layers": [layer.config() for layer in self.layers],
            "input_scales": self.input_scales.tolist(),
            "input_clip": self.input_clip,
        }
        with open(path, "w") as fh:
            fh.write(json.dumps(header) + "\n")
            for p in self.params:
                for v in p.ravel():
                    fh.write(f"{float(v)!r}\n")

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            header = json.loads(fh.readline())
            values = np.array([float(line) for line in fh if line.strip()])
        rng = np.random.default_rng(0)
        layers = []
        for cfg in header["layers"]:
            if cfg["kind"] == "dense":
                layers.append(DenseLayer(cfg["n_in"], cfg["n_out"], rng))
            else:
                layers.append(GroupedDenseLayer(
                    cfg["n_in"], [tuple(g) for g in cfg["groups"]],
                    cfg["group_units"], cfg["rest_units"] or 0, rng))
        net = cls(layers, np.asarray(header["input_scales"]),
                  header.get("input_clip"))
        pos = 0
        for p in net.params:
            p[...] = values[pos:pos + p.size].reshape(p.shape)
            pos += p.size
        if pos != values.size:
            raise ValueError("checkpoint length mismatch")
        return net


@dataclass
class AdamState:
    """Adam with bias correction over a list of parameter arrays."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[...] = b1 * m + (1 - b1) * g
            v[...] = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def huber(prediction: np.ndarray, target: np.ndarray):
    """Elementwise Huber loss and d(loss)/d(prediction); quadratic for |e|<=1."""
    prediction = np.asarray(prediction, dtype=float)
    target = np.asarray(target, dtype=float)
    e = prediction - target
    small = np.abs(e) <= 1.0
    loss = np.where(small, 0.5 * e * e, np.abs(e) - 0.5)
    dloss = np.where(small, e, np.sign(e))
    return loss, dloss


def softmax(v: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis."""
    v = np.asarray(v, dtype=float)
    shifted = v - v.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


PROB_FLOOR = 1e-12


def cross_entropy(target_dist: np.ndarray, predicted_dist: np.ndarray):
    """-sum(t * log(z)) with z floored at 1e-12; returns (loss, d/d z)."""
    t = np.asarray(target_dist, dtype=float)
    z = np.maximum(np.asarray(predicted_dist, dtype=float), PROB_FLOOR)
    loss = -(t * np.log(z)).sum(axis=-1)
    grad = -t / z
    return loss, grad


def softmax_cross_entropy_logit_grad(target_dist: np.ndarray,
                                     predicted_dist: np.ndarray) -> np.ndarray:
    """d CE(t, softmax(logits)) / d logits = softmax(logits) - t."""
    return np.asarray(predicted_dist, dtype=float) - np.asarray(target_dist,
                                                                dtype=float)
