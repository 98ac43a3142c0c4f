"""Desk-scale laboratory for long-tailed token generation in seq2seq translation."""

from .corpus import ParallelCorpus, generate_zipf_task
from .decode import BeamConfig, beam_search, exhaustive_search, greedy_decode
from .losses import LossConfig, batch_loss, point_loss, relative_loss_ratio
from .model import ModelConfig, Seq2SeqTransformer, embedding_norms, init_params
from .tau_norm import TauNormConfig, apply_tau_norm

__version__ = "0.1.0"

__all__ = [
    "BeamConfig", "LossConfig", "ModelConfig", "ParallelCorpus", "Seq2SeqTransformer", "TauNormConfig",
    "apply_tau_norm", "batch_loss", "beam_search", "embedding_norms", "exhaustive_search",
    "generate_zipf_task", "greedy_decode", "init_params", "point_loss", "relative_loss_ratio",
]
