"""Minimal float64 neural-network primitives with exact backward passes."""

from .checkpoint import load_tensors, save_tensors
from .gradcheck import grad_check, relative_error
from .layers import (
    AttentionBlock,
    Dense,
    DenseStack,
    EmbeddingTable,
    GruCell,
    Module,
    Param,
    attention_pool,
    dense_backward,
    dense_forward,
    embedding_lookup,
    flatten_params,
    gru_encode,
)
from .optim import SGD, Adam, make_optimizer, optimizer_step

__all__ = [
    "Adam",
    "AttentionBlock",
    "Dense",
    "DenseStack",
    "EmbeddingTable",
    "GruCell",
    "Module",
    "Param",
    "SGD",
    "attention_pool",
    "dense_backward",
    "dense_forward",
    "embedding_lookup",
    "flatten_params",
    "grad_check",
    "gru_encode",
    "load_tensors",
    "make_optimizer",
    "optimizer_step",
    "relative_error",
    "save_tensors",
]
