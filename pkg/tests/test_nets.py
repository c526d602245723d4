from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distleak.errors import InvalidParameterError
from distleak.nets import (
    IrmSpec,
    MlpModel,
    TrainOptions,
    canonicalize,
    dumps,
    flatten_params,
    forward,
    gradient,
    irm_penalty,
    loads,
    mse,
    random_init,
    train_erm,
    train_irm,
    unflatten_params,
)
from distleak.numerics import Dataset, SeededRng


def finite_difference_check(model, batch, step=1e-6):
    """Largest relative error between the analytic and central-difference gradients."""
    analytic = gradient(model, batch).flat()
    theta = flatten_params(model)
    numeric = np.empty_like(theta)
    for j in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[j] += step
        down[j] -= step
        f_up = mse(unflatten_params(up, model.layer_dims, model.hidden_activation), batch)
        f_down = mse(unflatten_params(down, model.layer_dims, model.hidden_activation), batch)
        numeric[j] = (f_up - f_down) / (2 * step)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / scale))


def test_zero_network_outputs_zero():
    m = random_init((3, 5, 1), 0.0, SeededRng(0))
    assert np.all(forward(m, np.ones((4, 3))) == 0.0)


def test_single_linear_layer():
    m = MlpModel((1, 1), [[[2.0]]], [[1.0]])
    assert forward(m, [3.0])[0] == 7.0


def test_hand_computed_relu_net():
    # 1-2-1: hidden = relu([2x - 1, -x + 0.5]), out = 3 h0 - 2 h1 + 0.25
    m = MlpModel((1, 2, 1), [[[2.0, -1.0]], [[3.0], [-2.0]]], [[-1.0, 0.5], [0.25]])
    assert forward(m, [1.0])[0] == pytest.approx(3.25)
    assert forward(m, [-1.0])[0] == pytest.approx(-2 * 1.5 + 0.25)


def test_forward_dimension_mismatch():
    m = random_init((3, 2, 1), 1.0, SeededRng(0))
    with pytest.raises(InvalidParameterError):
        forward(m, np.ones(4))


def test_zero_residual_zero_gradient():
    m = random_init((2, 3, 1), 1.0, SeededRng(1))
    x = SeededRng(2).generator.normal(size=(10, 2))
    g = gradient(m, Dataset(x, forward(m, x)[:, 0])).flat()
    assert np.all(g == 0.0)


def test_scalar_linear_gradient():
    m = MlpModel((1, 1), [[[1.5]]], [[0.0]])
    g = gradient(m, Dataset([[2.0]], [1.0]))
    assert g.weights[0][0, 0] == pytest.approx(2 * (1.5 * 2 - 1) * 2)


def test_gradient_random_4_8_1():
    rng = SeededRng(5)
    m = random_init((4, 8, 1), 1.0, rng.spawn("init"))
    gen = rng.spawn("data").generator
    batch = Dataset(gen.normal(size=(16, 4)), gen.normal(size=16))
    assert finite_difference_check(m, batch) <= 1e-5


def test_train_erm_infinite_target_stops_after_one_epoch():
    rng = SeededRng(0)
    m = random_init((2, 4, 1), 0.25, rng)
    data = Dataset(rng.spawn("d").generator.normal(size=(100, 2)), np.zeros(100))
    _, hist = train_erm(m, data, TrainOptions(max_epochs=50, target_train_mse=np.inf))
    assert hist.epochs == 1 and hist.converged


def test_train_erm_linear_problem_converges():
    gen = SeededRng(3).generator
    x = gen.normal(size=(256, 3))
    y = x @ np.array([1.0, -0.5, 2.0]) + 0.3
    m = random_init((3, 1), 0.1, SeededRng(4), "linear")
    model, hist = train_erm(m, Dataset(x, y), TrainOptions(learning_rate=0.05, max_epochs=200))
    assert hist.mse[-1] <= 1e-3
    assert hist.mse[-1] <= hist.mse[0]


def test_train_erm_is_deterministic():
    gen = SeededRng(8).generator
    data = Dataset(gen.normal(size=(128, 2)), gen.normal(size=128))
    m = random_init((2, 6, 1), 0.25, SeededRng(1))
    opts = TrainOptions(max_epochs=5, seed=SeededRng(2))
    a, _ = train_erm(m, data, opts)
    b, _ = train_erm(m, data, TrainOptions(max_epochs=5, seed=SeededRng(2)))
    assert np.array_equal(flatten_params(a), flatten_params(b))


def test_train_options_validation():
    with pytest.raises(InvalidParameterError):
        TrainOptions(learning_rate=0.0)
    with pytest.raises(InvalidParameterError):
        TrainOptions(max_epochs=0)
    with pytest.raises(InvalidParameterError):
        TrainOptions(batch_size=0)


def test_irm_without_penalty_equals_erm():
    gen = SeededRng(6).generator
    data = Dataset(gen.normal(size=(96, 2)), gen.normal(size=96))
    m = random_init((2, 3, 1), 0.25, SeededRng(7))
    erm, _ = train_erm(m, data, TrainOptions(max_epochs=4, seed=SeededRng(9)))
    spec = IrmSpec(m, [data], penalty_weight=0.0, warmup_epochs=0, warmup_penalty=0.0)
    irm = train_irm(spec, TrainOptions(max_epochs=4, seed=SeededRng(9)))
    assert np.array_equal(flatten_params(erm), flatten_params(irm))


def test_irm_rejects_empty_environment_list():
    m = random_init((2, 2, 1), 0.25, SeededRng(0))
    with pytest.raises(InvalidParameterError):
        train_irm(IrmSpec(m, []), TrainOptions())


def test_irm_penalty_vanishes_for_invariant_representation():
    gen = SeededRng(10).generator
    envs = []
    for _ in range(2):
        x1 = gen.normal(size=200_000)
        envs.append(Dataset(x1[:, None], x1 + gen.normal(size=x1.size)))
    identity = MlpModel((1, 1), [[[1.0]]], [[0.0]], "linear")
    assert irm_penalty(identity, envs) <= 1e-3


def _x2_sensitivity(model, probe):
    h = 1e-4
    up, down = probe.copy(), probe.copy()
    up[:, 1] += h
    down[:, 1] -= h
    return float(np.mean(np.abs(forward(model, up) - forward(model, down)) / (2 * h)))


def test_irm_relies_less_on_spurious_feature():
    from distleak.datagen import PartySpec, sample_party

    rng = SeededRng(12)
    envs = [sample_party(PartySpec(i, 1024), rng.spawn("party", i)) for i in range(2)]
    init = random_init((2, 2, 1), 0.25, rng.spawn("init"))
    opts = TrainOptions(max_epochs=150, seed=rng.spawn("shuffle"))
    erm, _ = train_erm(init, Dataset.concat(envs), opts)
    irm = train_irm(IrmSpec(init, envs), TrainOptions(max_epochs=150, seed=rng.spawn("shuffle")))
    probe = rng.spawn("probe").generator.normal(size=(256, 2))
    assert _x2_sensitivity(irm, probe) < _x2_sensitivity(erm, probe)


def test_flatten_documented_order():
    m = MlpModel((1, 1, 1), [[[2.0]], [[3.0]]], [[1.0], [0.0]])
    assert flatten_params(m).tolist() == [2.0, 3.0, 1.0, 0.0]


def _permuted(model, rng):
    out = model.copy()
    for k in range(out.n_layers - 1):
        perm = rng.generator.permutation(out.layer_dims[k + 1])
        out.weights[k] = out.weights[k][:, perm]
        out.biases[k] = out.biases[k][perm]
        out.weights[k + 1] = out.weights[k + 1][perm, :]
    return out


def test_canonicalization_is_permutation_invariant_and_function_preserving():
    rng = SeededRng(13)
    m = random_init((4, 8, 6, 1), 1.0, rng.spawn("init"))
    p = _permuted(m, rng.spawn("perm"))
    assert np.array_equal(flatten_params(m, True), flatten_params(p, True))
    x = rng.spawn("x").generator.normal(size=(100, 4))
    assert np.allclose(forward(canonicalize(m), x), forward(m, x), rtol=0, atol=1e-12)
    assert np.allclose(forward(p, x), forward(m, x), rtol=0, atol=1e-12)


def test_random_init_examples():
    assert not flatten_params(random_init((3, 4, 1), 0.0, SeededRng(0))).any()
    a = random_init((3, 4, 1), 1.0, SeededRng(5))
    b = random_init((3, 4, 1), 1.0, SeededRng(5))
    assert np.array_equal(flatten_params(a), flatten_params(b))
    big = flatten_params(random_init((100, 100, 1), 0.5, SeededRng(1)))
    assert big.size >= 10_000
    assert abs(big.var() - 0.5) <= 0.05 * 0.5


def test_text_round_trip_is_bit_exact():
    m = random_init((4, 16, 1), 0.3, SeededRng(2))
    text = dumps(m)
    assert text.splitlines()[0] == "MLP relu 4 16 1"
    back = loads(text)
    assert np.array_equal(flatten_params(back), flatten_params(m))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=2, max_size=4), st.integers(0, 2**32 - 1))
def test_unflatten_inverts_flatten(dims, seed):
    v = SeededRng(seed).generator.normal(size=sum(a * b for a, b in zip(dims[:-1], dims[1:])) + sum(dims[1:]))
    assert np.array_equal(flatten_params(unflatten_params(v, dims)), v)
