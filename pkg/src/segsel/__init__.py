"""Selection of task-informative temporal segments via an actor-critic agent."""

from .autodiff import (
    OptimizerState,
    ParamStore,
    Tensor,
    backward,
    bce_loss,
    bce_value,
    conv1d_forward,
    dense_forward,
    elastic_net_penalty,
    rmsprop_step,
    xavier_init,
)

__all__ = [
    "OptimizerState",
    "ParamStore",
    "Tensor",
    "backward",
    "bce_loss",
    "bce_value",
    "conv1d_forward",
    "dense_forward",
    "elastic_net_penalty",
    "rmsprop_step",
    "xavier_init",
]

__version__ = "0.1.0"
