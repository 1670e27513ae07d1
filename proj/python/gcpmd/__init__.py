"""Generalized CP decomposition with stochastic mirror descent."""

from ._gcpmd import (
    ContractError,
    DivergenceError,
    StateError,
    decompose,
    full_gradient,
    loss_deriv,
    loss_value,
    mirror_prox_step,
    mse,
    objective,
    read_tns,
    reconstruct,
    synthesize,
    verify,
    write_tns,
)

__all__ = [
    "ContractError",
    "DivergenceError",
    "StateError",
    "decompose",
    "full_gradient",
    "loss_deriv",
    "loss_value",
    "mirror_prox_step",
    "mse",
    "objective",
    "read_tns",
    "reconstruct",
    "synthesize",
    "verify",
    "write_tns",
]
