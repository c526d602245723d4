"""Small fully-connected regressors, ERM and IRM training."""
from .mlp import (
    Gradient,
    MlpModel,
    canonicalize,
    dumps,
    flatten_params,
    forward,
    gradient,
    loads,
    mse,
    random_init,
    stack_models,
    stacked_backward,
    stacked_forward,
    unflatten_params,
    unstack_models,
)
from .training import (
    EpochHistory,
    IrmSpec,
    TrainOptions,
    irm_penalty,
    train_erm,
    train_irm,
    train_models,
    train_stack,
)
