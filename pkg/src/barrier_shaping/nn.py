"""Dense ReLU networks with hand-written backpropagation, Adam and Polyak averaging.

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer computes
``x @ W + b`` on row-major batches.  All arithmetic is float64.

Checkpoint layout
-----------------
A checkpoint file holds three parts:

1. the magic line ``BSCKPT1\\n``;
2. one line of UTF-8 JSON (the header) ending in ``\\n``.  It lists the
   networks in storage order with their layer sizes, output activation and
   output bounds, plus a free-form ``metadata`` object;
3. the raw parameters as little-endian float64.  For each network in header
   order and each layer in forward order: the weight matrix in row-major
   ``(fan_in, fan_out)`` order followed by the bias vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError, UsageError

MAGIC = b"BSCKPT1\n"
OUTPUT_ACTIVATIONS = ("identity", "tanh")


@dataclass
class ForwardCache:
    version: int
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    squeeze: bool


class Mlp:
    """Fully connected network with ReLU hidden layers.

    Args:
        sizes: layer widths from input to output, at least two entries.
        output: ``"identity"`` or ``"tanh"``.  A tanh output is rescaled to
            the box ``[output_low, output_high]``.
        rng: generator used for initialization; no init is done when None
            (all parameters start at zero).
        final_scale: multiplier applied to the initial last-layer parameters.
    """

    def __init__(self, sizes: Sequence[int], output: str = "identity", output_low=None, output_high=None,
                 rng: np.random.Generator | None = None, final_scale: float = 1.0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigurationError(f"invalid layer sizes {sizes}")
        if output not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"output activation must be one of {OUTPUT_ACTIVATIONS}, got {output!r}")
        self.sizes = sizes
        self.output = output
        if output == "tanh":
            low = np.broadcast_to(np.asarray(-1.0 if output_low is None else output_low, float), (sizes[-1],))
            high = np.broadcast_to(np.asarray(1.0 if output_high is None else output_high, float), (sizes[-1],))
            if not np.all(low < high):
                raise ConfigurationError("output_low must be below output_high")
            self.output_low, self.output_high = low.copy(), high.copy()
        else:
            self.output_low = self.output_high = None
        self.weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        self.biases = [np.zeros(b) for b in sizes[1:]]
        self.version = 0
        if rng is not None:
            self.init_uniform(rng, final_scale)

    def init_uniform(self, rng: np.random.Generator, final_scale: float = 1.0) -> None:
        """Uniform ``+-1/sqrt(fan_in)`` init for weights and biases."""
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            bound = 1.0 / np.sqrt(W.shape[0])
            scale = final_scale if i == last else 1.0
            W[...] = rng.uniform(-bound, bound, size=W.shape) * scale
            b[...] = rng.uniform(-bound, bound, size=b.shape) * scale
        self.touch()

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays in layer order ``[W0, b0, W1, b1, ...]`` (live references)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def touch(self) -> None:
        """Mark parameters as modified; invalidates outstanding forward caches."""
        self.version += 1

    def copy(self) -> "Mlp":
        net = Mlp(self.sizes, self.output, self.output_low, self.output_high)
        net.set_flat(self.get_flat())
        return net

    def same_architecture(self, other: "Mlp") -> bool:
        return (self.sizes == other.sizes and self.output == other.output
                and (self.output_low is None or np.array_equal(self.output_low, other.output_low))
                and (self.output_high is None or np.array_equal(self.output_high, other.output_high)))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_params,):
            raise ConfigurationError(f"expected {self.n_params} parameters, got shape {flat.shape}")
        pos = 0
        for p in self.params:
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size
        self.touch()

    def _head(self, z):
        if self.output == "identity":
            return z
        half = 0.5 * (self.output_high - self.output_low)
        return self.output_low + half * (np.tanh(z) + 1.0)

    def forward(self, x) -> tuple[np.ndarray, ForwardCache]:
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ConfigurationError(f"input of shape {x.shape} does not fit input size {self.sizes[0]}")
        inputs, preacts = [], []
        a = x
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ W + b
            preacts.append(z)
            a = z if i == last else np.maximum(z, 0.0)
        out = self._head(a)
        return (out[0] if squeeze else out), ForwardCache(self.version, inputs, preacts, squeeze)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, output_grad,
                 param_grads: bool = True) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(output * output_grad)``.

        Returns:
            Parameter gradients in :attr:`params` order (an empty list when
            ``param_grads`` is False), and the input gradient.
        """
        if cache.version != self.version:
            raise UsageError("forward cache is stale: parameters changed since the forward pass")
        g = np.asarray(output_grad, dtype=np.float64)
        if cache.squeeze:
            g = g[None, :]
        if g.shape != cache.preacts[-1].shape:
            raise ConfigurationError(f"output_grad shape {g.shape} does not match output {cache.preacts[-1].shape}")
        if self.output == "tanh":
            t = np.tanh(cache.preacts[-1])
            g = g * (0.5 * (self.output_high - self.output_low)) * (1.0 - t * t)
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * (cache.preacts[i] > 0.0)
            if param_grads:
                grads.append(g.sum(axis=0))
                grads.append(cache.inputs[i].T @ g)
            g = g @ self.weights[i].T
        grads.reverse()
        return grads, (g[0] if cache.squeeze else g)


class Adam:
    """Bias-corrected Adam over a fixed list of parameter shapes."""

    def __init__(self, params: Sequence[np.ndarray] | Mlp, lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if isinstance(params, Mlp):
            params = params.params
        if not lr > 0 or not 0 <= beta1 < 1 or not 0 <= beta2 < 1 or not eps > 0:
            raise ConfigurationError("invalid Adam hyperparameters")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray] | Mlp, grads: Sequence[np.ndarray]):
        """Apply one update in place and return the parameters."""
        net = params if isinstance(params, Mlp) else None
        plist = net.params if net is not None else list(params)
        if len(plist) != len(self.m) or len(grads) != len(self.m):
            raise ConfigurationError("parameter/gradient lists do not match the optimizer state")
        for p, g, m in zip(plist, grads, self.m):
            if p.shape != m.shape or np.shape(g) != m.shape:
                raise ConfigurationError(f"shape mismatch: param {p.shape}, grad {np.shape(g)}, state {m.shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        step_size = self.lr / c1
        inv_c2 = 1.0 / c2
        for p, g, m, v in zip(plist, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            denom = np.multiply(v, inv_c2)
            np.sqrt(denom, out=denom)
            denom += self.eps
            p -= step_size * m / denom
        if net is not None:
            net.touch()
        return params

    def state_arrays(self) -> list[np.ndarray]:
        return self.m + self.v


def polyak_update(target: Mlp, source: Mlp, tau: float) -> Mlp:
    """``target <- (1 - tau) * target + tau * source``, in place."""
    if not 0 < tau <= 1:
        raise ConfigurationError(f"tau must lie in (0, 1], got {tau}")
    if not target.same_architecture(source):
        raise ConfigurationError("polyak_update needs identical architectures")
    for t, s in zip(target.params, source.params):
        t *= 1.0 - tau
        t += tau * s
    target.touch()
    return target


def save_checkpoint(path, networks: dict[str, Mlp], metadata: dict | None = None) -> Path:
    path = Path(path)
    entries = []
    for name, net in networks.items():
        entries.append({
            "name": name,
            "sizes": net.sizes,
            "output": net.output,
            "output_low": None if net.output_low is None else net.output_low.tolist(),
            "output_high": None if net.output_high is None else net.output_high.tolist(),
            "n_params": net.n_params,
        })
    header = {"format": "barrier-shaping-checkpoint", "networks": entries, "metadata": metadata or {}}
    blob = b"".join(net.get_flat().astype("<f8").tobytes() for net in networks.values())
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(blob)
    return path


def load_checkpoint(path) -> tuple[dict[str, Mlp], dict]:
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        header = json.loads(fh.readline().decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    expected = sum(e["n_params"] for e in header["networks"])
    if data.size != expected:
        raise DataError(f"{path}: expected {expected} parameters, found {data.size}")
    nets, pos = {}, 0
    for e in header["networks"]:
        net = Mlp(e["sizes"], e["output"], e["output_low"], e["output_high"])
        net.set_flat(data[pos:pos + e["n_params"]].astype(np.float64))
        pos += e["n_params"]
        nets[e["name"]] = net
    return nets, header["metadata"]
