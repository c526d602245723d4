"""Fully-connected regression networks with exact backpropagation.

Weights are stored per layer as ``(fan_in, fan_out)`` matrices so that a layer
computes ``h @ W + b``. The output layer is always linear.

Most of the arithmetic works on *stacks*: a leading axis indexes independent
models so that hundreds of small networks train in one vectorised pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidParameterError
from ..numerics import Dataset, SeededRng

ACTIVATIONS = ("relu", "linear")


@dataclass
class MlpModel:
    layer_dims: tuple
    weights: list
    biases: list
    hidden_activation: str = "relu"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1:
            raise InvalidParameterError(f"invalid layer_dims {self.layer_dims}")
        if self.hidden_activation not in ACTIVATIONS:
            raise InvalidParameterError(f"unknown activation {self.hidden_activation!r}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in self.biases]
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise InvalidParameterError("one weight matrix and bias vector per layer required")
        for k, (a, b) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            if self.weights[k].shape != (a, b) or self.biases[k].shape != (b,):
                raise InvalidParameterError(
                    f"layer {k}: expected weight {(a, b)} and bias {(b,)}, got "
                    f"{self.weights[k].shape} and {self.biases[k].shape}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel(self.layer_dims, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.hidden_activation)

    def __call__(self, x):
        return forward(self, x)


@dataclass
class Gradient:
    """Parameter-shaped gradient (same layout as :class:`MlpModel`)."""

    weights: list
    biases: list = field(default_factory=list)

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + [b.ravel() for b in self.biases])


# -- stacked primitives ---------------------------------------------------

def stack_models(models):
    """Stack equally shaped models into ``(weights, biases)`` with a leading model axis."""
    models = list(models)
    dims = models[0].layer_dims
    if any(m.layer_dims != dims for m in models):
        raise InvalidParameterError("cannot stack models of different shapes")
    ws = [np.stack([m.weights[k] for m in models]) for k in range(len(dims) - 1)]
    bs = [np.stack([m.biases[k] for m in models]) for k in range(len(dims) - 1)]
    return ws, bs


def unstack_models(ws, bs, layer_dims, activation):
    return [MlpModel(layer_dims, [w[i].copy() for w in ws], [b[i].copy() for b in bs], activation)
            for i in range(ws[0].shape[0])]


def stacked_forward(ws, bs, x, activation="relu"):
    """Forward pass for a stack. ``x`` is (M, n, d); returns the per-layer activations.

    ``acts[0]`` is the input and ``acts[-1]`` the network output (M, n, out).
    """
    acts = [x]
    h = x
    last = len(ws) - 1
    for k, (w, b) in enumerate(zip(ws, bs)):
        h = h @ w + b[:, None, :]
        if k < last and activation == "relu":
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def stacked_backward(ws, acts, dout, activation="relu"):
    """Backpropagate ``dout`` = dL/d(output), shape (M, n, out), through a stack."""
    gws = [None] * len(ws)
    gbs = [None] * len(ws)
    g = dout
    for k in range(len(ws) - 1, -1, -1):
        gws[k] = np.swapaxes(acts[k], 1, 2) @ g
        gbs[k] = g.sum(axis=1)
        if k > 0:
            g = g @ np.swapaxes(ws[k], 1, 2)
            if activation == "relu":
                g = g * (acts[k] > 0.0)
    return gws, gbs


# -- single-model operations ----------------------------------------------

def forward(model: MlpModel, x) -> np.ndarray:
    """Evaluate the network on one input vector (returns a vector) or a batch (n x d)."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr.reshape(1, -1) if single else arr
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise InvalidParameterError(
            f"input has {batch.shape[-1] if batch.ndim else 0} features, model expects {model.input_dim}")
    h = batch
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if k < model.n_layers - 1 and model.hidden_activation == "relu":
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def mse(model: MlpModel, data: Dataset) -> float:
    pred = forward(model, data.features)[:, 0]
    return float(np.mean((pred - data.labels) ** 2))


def gradient(model: MlpModel, batch: Dataset) -> Gradient:
    """Exact gradient of the batch mean squared error w.r.t. every weight and bias."""
    if batch.n == 0:
        raise InvalidParameterError("gradient of an empty batch is undefined")
    if batch.d != model.input_dim:
        raise InvalidParameterError(f"batch has {batch.d} features, model expects {model.input_dim}")
    if model.output_dim != 1:
        raise InvalidParameterError("mse gradient is defined for scalar-output models")
    ws, bs = stack_models([model])
    acts = stacked_forward(ws, bs, batch.features[None], model.hidden_activation)
    dout = (2.0 / batch.n) * (acts[-1] - batch.labels[None, :, None])
    gws, gbs = stacked_backward(ws, acts, dout, model.hidden_activation)
    return Gradient([g[0] for g in gws], [g[0] for g in gbs])


def random_init(layer_dims, weight_variance: float, rng: SeededRng, activation: str = "relu") -> MlpModel:
    """Network with every weight and bias drawn i.i.d. from N(0, weight_variance)."""
    if weight_variance < 0:
        raise InvalidParameterError(f"weight_variance must be non-negative, got {weight_variance}")
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or min(dims) < 1:
        raise InvalidParameterError(f"invalid layer_dims {dims}")
    gen = rng.generator
    sd = np.sqrt(weight_variance)
    ws = [gen.normal(0.0, sd, (a, b)) for a, b in zip(dims[:-1], dims[1:])]
    bs = [gen.normal(0.0, sd, b) for b in dims[1:]]
    return MlpModel(dims, ws, bs, activation)


# -- parameter vectors ----------------------------------------------------

def canonicalize(model: MlpModel) -> MlpModel:
    """Reorder hidden units so that permutation-equivalent networks coincide.

    Within each hidden layer, units are sorted descending by bias and then by
    their incoming weights (lexicographically, in input order). Outgoing
    weights follow their unit. Layers are processed front to back so that the
    incoming weights of a layer are already in canonical order when it is sorted.
    """
    out = model.copy()
    for k in range(out.n_layers - 1):
        w_in, b = out.weights[k], out.biases[k]
        # lexsort uses the last key as primary; negate for descending order
        keys = [-w_in[i] for i in range(w_in.shape[0] - 1, -1, -1)] + [-b]
        order = np.lexsort(keys)
        out.weights[k] = w_in[:, order]
        out.biases[k] = b[order]
        out.weights[k + 1] = out.weights[k + 1][order, :]
    return out


def flatten_params(model: MlpModel, canonicalize_units: bool = False) -> np.ndarray:
    """All weight matrices (layer order, row-major) followed by all bias vectors."""
    m = canonicalize(model) if canonicalize_units else model
    return np.concatenate([w.ravel() for w in m.weights] + [b.ravel() for b in m.biases])


def unflatten_params(vector, layer_dims, hidden_activation: str = "relu") -> MlpModel:
    """Inverse of :func:`flatten_params` (without canonicalisation)."""
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    dims = tuple(int(d) for d in layer_dims)
    shapes = list(zip(dims[:-1], dims[1:]))
    expected = sum(a * b for a, b in shapes) + sum(dims[1:])
    if v.size != expected:
        raise InvalidParameterError(f"expected {expected} parameters for {dims}, got {v.size}")
    ws, pos = [], 0
    for a, b in shapes:
        ws.append(v[pos:pos + a * b].reshape(a, b).copy())
        pos += a * b
    bs = []
    for b in dims[1:]:
        bs.append(v[pos:pos + b].copy())
        pos += b
    return MlpModel(dims, ws, bs, hidden_activation)


# -- text serialisation ---------------------------------------------------

def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.ravel(values))


def dumps(model: MlpModel) -> str:
    """``MLP <activation> <dims...>``, then one weight line and one bias line per layer."""
    lines = ["MLP " + model.hidden_activation + " " + " ".join(str(d) for d in model.layer_dims)]
    lines += [_fmt(w) for w in model.weights]
    lines += [_fmt(b) for b in model.biases]
    return "\n".join(lines) + "\n"


def loads(text: str) -> MlpModel:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) < 4 or head[0] != "MLP":
        raise InvalidParameterError(f"not an MLP header: {lines[0]!r}")
    act, dims = head[1], tuple(int(t) for t in head[2:])
    n_layers = len(dims) - 1
    if len(lines) != 1 + 2 * n_layers:
        raise InvalidParameterError(f"expected {1 + 2 * n_layers} lines, got {len(lines)}")
    ws = [np.array([float(t) for t in lines[1 + k].split()]).reshape(dims[k], dims[k + 1])
          for k in range(n_layers)]
    bs = [np.array([float(t) for t in lines[1 + n_layers + k].split()]) for k in range(n_layers)]
    return MlpModel(dims, ws, bs, act)
