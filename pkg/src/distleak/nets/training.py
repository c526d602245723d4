"""Mini-batch gradient descent for ERM and IRMv1 objectives.

Both objectives run through one vectorised engine, :func:`train_stack`, which
advances a stack of independent models in lock-step. Every model keeps its own
shuffling stream, so a model's trajectory does not depend on which other models
share its stack.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidParameterError
from ..numerics import Dataset, SeededRng
from .mlp import MlpModel, stack_models, stacked_backward, stacked_forward, unstack_models


# The IRMv1 penalty is quartic in the outputs; plain SGD steps on it overshoot
# from a poorly scaled start, so penalised steps are norm-clipped per model.
IRM_MAX_GRAD_NORM = 1.0


@dataclass
class TrainOptions:
    learning_rate: float = 0.01
    max_epochs: int = 100
    batch_size: int = 64
    target_train_mse: float | None = None
    seed: SeededRng | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidParameterError(f"learning_rate must be positive, got {self.learning_rate}")
        if int(self.max_epochs) < 1:
            raise InvalidParameterError(f"max_epochs must be at least 1, got {self.max_epochs}")
        if int(self.batch_size) < 1:
            raise InvalidParameterError(f"batch_size must be at least 1, got {self.batch_size}")
        self.max_epochs = int(self.max_epochs)
        self.batch_size = int(self.batch_size)


@dataclass
class IrmSpec:
    """IRMv1 problem: representation ``phi`` under a frozen scalar classifier ``w = 1``.

    The penalty weight is ``warmup_penalty`` for the first ``warmup_epochs``
    epochs and ``penalty_weight`` afterwards.
    """

    phi: MlpModel
    environments: list
    penalty_weight: float = 100.0
    warmup_epochs: int = 50
    warmup_penalty: float = 1.0
    classifier_w: float = field(default=1.0, init=False)

    def __post_init__(self):
        if self.phi.output_dim != 1:
            raise InvalidParameterError("IRM representation must have a one-dimensional output")
        if self.penalty_weight < 0 or self.warmup_penalty < 0:
            raise InvalidParameterError("penalty weights must be non-negative")

    def penalty_at(self, epoch: int) -> float:
        return self.warmup_penalty if epoch < self.warmup_epochs else self.penalty_weight


@dataclass
class EpochHistory:
    """Full-training-set MSE after each completed epoch."""

    mse: list
    converged: bool

    @property
    def epochs(self) -> int:
        return len(self.mse)


def _clip(gws, gbs, max_norm):
    """Rescale each model's gradient in place so its L2 norm is at most ``max_norm``."""
    sq = sum(np.sum(g * g, axis=tuple(range(1, g.ndim))) for g in gws + gbs)
    factor = np.minimum(1.0, max_norm / np.maximum(np.sqrt(sq), 1e-300))
    for g in gws + gbs:
        g *= factor.reshape((-1,) + (1,) * (g.ndim - 1))


def _penalty_grad(o, y, resid):
    """Gradient w.r.t. the outputs of the minibatch IRMv1 penalty of one environment.

    The penalty (dR/dw at w = 1)^2 is estimated without bias as the product of
    the two half-batch estimates of dR/dw; squaring a single noisy estimate
    adds its variance and pulls every model towards the constant-zero output.
    A batch of one row falls back to the plain square.
    """
    b = o.shape[1]
    if b < 2:
        g = 2.0 * np.sum(resid * o, axis=1, keepdims=True) / b
        return 2.0 * g * (2.0 / b) * (2.0 * o - y)
    h = b // 2
    g_a = 2.0 * np.sum(resid[:, :h] * o[:, :h], axis=1, keepdims=True) / h
    g_b = 2.0 * np.sum(resid[:, h:] * o[:, h:], axis=1, keepdims=True) / (b - h)
    inner = 2.0 * o - y
    return np.concatenate([g_b * (2.0 / h) * inner[:, :h], g_a * (2.0 / (b - h)) * inner[:, h:]], axis=1)


def train_stack(ws, bs, env_x, env_y, opts: TrainOptions, generators, activation="relu",
                penalty_at=None):
    """Train a stack of M models in place.

    Parameters
    ----------
    ws, bs : lists of arrays with a leading model axis (modified in place).
    env_x : list of arrays (M, n_e, d), one per environment. ERM uses one.
    env_y : list of arrays (M, n_e).
    opts : shared options; ``opts.seed`` is ignored here.
    generators : one ``numpy.random.Generator`` per model, used for shuffling.
    penalty_at : ``epoch -> lambda``; ``None`` means plain ERM.

    Returns
    -------
    history : (epochs_run, M) array of per-epoch training MSE, NaN once a model stopped.
    converged : (M,) bool, True where the target MSE was reached.
    """
    m_total = ws[0].shape[0]
    n_envs = len(env_x)
    sizes = [x.shape[1] for x in env_x]
    n_total = sum(sizes)
    if n_total == 0:
        raise InvalidParameterError("cannot train on an empty dataset")
    steps = max(1, math.ceil(n_total / opts.batch_size))
    bounds = []
    for n_e in sizes:
        edges = np.cumsum([0] + [len(c) for c in np.array_split(np.arange(n_e), steps)])
        bounds.append(edges)
    full_x = np.concatenate(env_x, axis=1) if n_envs > 1 else env_x[0]
    full_y = np.concatenate(env_y, axis=1) if n_envs > 1 else env_y[0]
    target = opts.target_train_mse
    lr = opts.learning_rate
    env_scale = 1.0 / n_envs

    active = np.arange(m_total)
    converged = np.zeros(m_total, dtype=bool)
    history = []
    for epoch in range(opts.max_epochs):
        lam = 0.0 if penalty_at is None else float(penalty_at(epoch))
        loss_scale = env_scale / lam if lam > 1.0 else env_scale
        wa = [w[active] for w in ws]
        ba = [b[active] for b in bs]
        xs, ys = [], []
        for x_e, y_e, n_e in zip(env_x, env_y, sizes):
            perm = np.stack([generators[i].permutation(n_e) for i in active])
            xs.append(np.take_along_axis(x_e[active], perm[:, :, None], axis=1))
            ys.append(np.take_along_axis(y_e[active], perm, axis=1))
        for s in range(steps):
            seg_x, seg_y, seg_len = [], [], []
            for e in range(n_envs):
                lo, hi = bounds[e][s], bounds[e][s + 1]
                if hi > lo:
                    seg_x.append(xs[e][:, lo:hi])
                    seg_y.append(ys[e][:, lo:hi])
                    seg_len.append(hi - lo)
            xb = seg_x[0] if len(seg_x) == 1 else np.concatenate(seg_x, axis=1)
            acts = stacked_forward(wa, ba, xb, activation)
            out = acts[-1][:, :, 0]
            douts = []
            pos = 0
            for y_seg, b_e in zip(seg_y, seg_len):
                o = out[:, pos:pos + b_e]
                resid = o - y_seg
                d = (2.0 / b_e) * resid
                if lam > 0.0:
                    d = d + lam * _penalty_grad(o, y_seg, resid)
                douts.append(d)
                pos += b_e
            dout = douts[0] if len(douts) == 1 else np.concatenate(douts, axis=1)
            dout = (loss_scale * dout)[:, :, None]
            gws, gbs = stacked_backward(wa, acts, dout, activation)
            if lam > 0.0:
                _clip(gws, gbs, IRM_MAX_GRAD_NORM)
            for k in range(len(wa)):
                wa[k] -= lr * gws[k]
                ba[k] -= lr * gbs[k]
        for k in range(len(ws)):
            ws[k][active] = wa[k]
            bs[k][active] = ba[k]
        pred = stacked_forward(wa, ba, full_x[active], activation)[-1][:, :, 0]
        epoch_mse = np.mean((pred - full_y[active]) ** 2, axis=1)
        row = np.full(m_total, np.nan)
        row[active] = epoch_mse
        history.append(row)
        if target is not None:
            done = epoch_mse < target
            converged[active[done]] = True
            active = active[~done]
            if active.size == 0:
                break
    return np.array(history), converged


def _check_envs(model: MlpModel, envs):
    for e in envs:
        if e.d != model.input_dim:
            raise InvalidParameterError(f"dataset has {e.d} features, model expects {model.input_dim}")


def train_models(inits, env_lists, opts: TrainOptions, shuffle_rngs, penalty_at=None):
    """Train many models, batching those with identical shapes together.

    ``env_lists[i]`` is the list of environments (datasets) for model ``i``.
    Returns ``(models, histories)`` in input order.
    """
    inits = list(inits)
    groups: dict = {}
    for i, (model, envs) in enumerate(zip(inits, env_lists)):
        _check_envs(model, envs)
        key = (model.layer_dims, model.hidden_activation, tuple(e.n for e in envs))
        groups.setdefault(key, []).append(i)
    models = [None] * len(inits)
    histories = [None] * len(inits)
    for (dims, act, _), idx in groups.items():
        ws, bs = stack_models([inits[i] for i in idx])
        n_env = len(env_lists[idx[0]])
        env_x = [np.stack([env_lists[i][e].features for i in idx]) for e in range(n_env)]
        env_y = [np.stack([env_lists[i][e].labels for i in idx]) for e in range(n_env)]
        gens = [shuffle_rngs[i].generator for i in idx]
        hist, conv = train_stack(ws, bs, env_x, env_y, opts, gens, act, penalty_at)
        trained = unstack_models(ws, bs, dims, act)
        for j, i in enumerate(idx):
            col = hist[:, j]
            models[i] = trained[j]
            histories[i] = EpochHistory([float(v) for v in col[~np.isnan(col)]], bool(conv[j]))
    return models, histories


def _shuffle_rng(opts: TrainOptions) -> SeededRng:
    return opts.seed if opts.seed is not None else SeededRng(0, 0)


def train_erm(model: MlpModel, data: Dataset, opts: TrainOptions):
    """Mini-batch gradient descent on the mean squared error.

    Returns ``(trained_model, history)``. With ``opts.target_train_mse`` set,
    training stops after the first epoch whose full-dataset MSE is below it;
    otherwise it runs ``opts.max_epochs`` epochs. The input model is untouched.
    """
    if data.n == 0:
        raise InvalidParameterError("cannot train on an empty dataset")
    models, hist = train_models([model], [[data]], opts, [_shuffle_rng(opts)])
    return models[0], hist[0]


def train_irm(spec: IrmSpec, opts: TrainOptions) -> MlpModel:
    """Gradient descent on the IRMv1 objective with the classifier frozen at 1.

    Minimises the mean over environments of ``R^e(phi) + lambda * (dR^e/dw at w=1)^2``.
    For lambda > 1 the whole objective is divided by lambda, which keeps the
    step size bounded once the penalty dominates.
    """
    if not spec.environments:
        raise InvalidParameterError("IRM needs at least one environment")
    if any(e.n == 0 for e in spec.environments):
        raise InvalidParameterError("IRM environments must be non-empty")
    models, _ = train_models([spec.phi], [list(spec.environments)], opts, [_shuffle_rng(opts)],
                             penalty_at=spec.penalty_at)
    return models[0]


def irm_penalty(phi: MlpModel, environments) -> float:
    """Sum over environments of the squared derivative of the risk w.r.t. the scalar classifier."""
    from .mlp import forward

    total = 0.0
    for env in environments:
        out = forward(phi, env.features)[:, 0]
        g = 2.0 * np.mean((out - env.labels) * out)
        total += g * g
    return float(total)
