"""Small numpy neural-network substrate with hand-written backward passes."""
from .checkpoint import Checkpoint, load_checkpoint, param_hash, save_checkpoint
from .layers import (GRU, Activation, CausalConv, Dense, Embedding, LayerSpec, Param, Sequential, mlp,
                     receptive_field, sigmoid, softmax, softmax_cross_entropy)
from .optim import Adam, adam_step, check_network, grad_check

__all__ = [
    "Activation", "Adam", "CausalConv", "Checkpoint", "Dense", "Embedding", "GRU", "LayerSpec", "Param",
    "Sequential", "adam_step", "check_network", "grad_check", "load_checkpoint", "mlp",
    "param_hash", "receptive_field", "save_checkpoint", "sigmoid", "softmax",
    "softmax_cross_entropy",
]
