"""Dense network stack: layers, He-style init, Adam, JSON serialization.

Networks are plain lists of fully connected layers with relu or linear
activations. Forward passes come in two flavors: `forward` builds tape
nodes for training, `predict` is a numpy-only fast path for inference
(plant loops, packet fills) where no gradients are wanted.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Parameter, Tensor, affine, relu

ACTIVATIONS = ("relu", "linear")

SERIAL_FORMAT = "koopcontrol-network-v1"


def init_weights(d_out, d_in, rng):
    """Gaussian fan-in init, w ~ N(0, 2/d_in). Biases are zero elsewhere."""
    return rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in))


class DenseLayer:
    def __init__(self, weights, biases, activation):
        weights = np.asarray(weights, dtype=np.float64)
        biases = np.asarray(biases, dtype=np.float64)
        if weights.ndim != 2:
            raise ValueError("layer weights must be 2-D (d_out, d_in)")
        if biases.shape != (weights.shape[0],):
            raise ValueError(
                f"bias shape {biases.shape} does not match d_out {weights.shape[0]}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.w = weights if isinstance(weights, Parameter) else Parameter(weights)
        self.b = biases if isinstance(biases, Parameter) else Parameter(biases)
        self.activation = activation

    @property
    def d_in(self):
        return self.w.value.shape[1]

    @property
    def d_out(self):
        return self.w.value.shape[0]


class Network:
    """Ordered dense layers with audited shapes."""

    def __init__(self, layers):
        if not layers:
            raise ValueError("network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.d_in != prev.d_out:
                raise ValueError(
                    f"layer dims do not chain: {prev.d_out} -> {nxt.d_in}")
        self.layers = list(layers)

    @property
    def d_in(self):
        return self.layers[0].d_in

    @property
    def d_out(self):
        return self.layers[-1].d_out

    def parameters(self):
        params = []
        for layer in self.layers:
            params.append(layer.w)
            params.append(layer.b)
        return params

    def forward(self, x):
        """Tape forward for an (n, d_in) Tensor or array."""
        out = x if isinstance(x, Tensor) else Tensor(x)
        for layer in self.layers:
            out = affine(out, layer.w, layer.b)
            if layer.activation == "relu":
                out = relu(out)
        return out

    def predict(self, x):
        """Inference path, no graph. Accepts (n, d_in) or (d_in,)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = x[None, :] if single else x
        for layer in self.layers:
            out = out @ layer.w.value.T + layer.b.value
            if layer.activation == "relu":
                out = np.maximum(out, 0.0)
        return out[0] if single else out


def make_mlp(dims, rng, hidden_activation="relu", output_activation="linear"):
    """Build a network from a dim chain [d0, d1, ..., dk]: hidden layers get
    `hidden_activation`, the last layer `output_activation`."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    layers = []
    for i in range(len(dims) - 1):
        act = output_activation if i == len(dims) - 2 else hidden_activation
        layers.append(DenseLayer(
            init_weights(dims[i + 1], dims[i], rng),
            np.zeros(dims[i + 1]),
            act,
        ))
    return Network(layers)


class Adam:
    """Standard Adam with bias correction. One shared step counter; moments
    are kept per parameter slot and shape-audited against incoming grads."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, grads=None):
        """Apply one update. `grads` defaults to each param's accumulated
        .grad; a param with no gradient this round is left untouched."""
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ValueError("gradient count does not match parameter count")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g is None:
                continue
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.value.shape:
                raise ValueError(
                    f"grad shape {g.shape} does not match param {p.value.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# serialization: flat JSON, bitwise round-trip (json floats use repr, which
# is the shortest exact representation)
# ---------------------------------------------------------------------------

def network_to_dict(net):
    return {
        "format": SERIAL_FORMAT,
        "layers": [
            {
                "activation": layer.activation,
                "weights": layer.w.value.tolist(),
                "biases": layer.b.value.tolist(),
            }
            for layer in net.layers
        ],
    }


def network_from_dict(data):
    if data.get("format") != SERIAL_FORMAT:
        raise ValueError(f"unknown network format {data.get('format')!r}")
    layers = [
        DenseLayer(np.array(entry["weights"], dtype=np.float64),
                   np.array(entry["biases"], dtype=np.float64),
                   entry["activation"])
        for entry in data["layers"]
    ]
    return Network(layers)


def save_network(net, path):
    with open(path, "w") as fh:
        json.dump(network_to_dict(net), fh)


def load_network(path):
    with open(path) as fh:
        return network_from_dict(json.load(fh))
