"""Desk-scale training framework for ternary spiking neural networks."""

from .loss import TMPRConfig, avg_ce_loss, tmpr_grad, tmpr_loss, total_loss
from .network import Network, build_network, forward, predict
from .neuron import (
    CTSNParams,
    NeuronConfig,
    NeuronState,
    closed_form_potential,
    ctsn_step,
    effective_params,
    g_neuromorphic,
    g_static,
    surrogate,
    ternary_fire,
    ternary_step,
    ternary_step_soft,
)
from .trainer import TrainConfig, cosine_lr, evaluate, fit, sgd_step, train_epoch

__version__ = "0.1.0"

__all__ = [
    "CTSNParams",
    "Network",
    "NeuronConfig",
    "NeuronState",
    "TMPRConfig",
    "TrainConfig",
    "avg_ce_loss",
    "build_network",
    "closed_form_potential",
    "cosine_lr",
    "ctsn_step",
    "effective_params",
    "evaluate",
    "fit",
    "forward",
    "g_neuromorphic",
    "g_static",
    "predict",
    "sgd_step",
    "surrogate",
    "ternary_fire",
    "ternary_step",
    "ternary_step_soft",
    "tmpr_grad",
    "tmpr_loss",
    "total_loss",
    "train_epoch",
]
