"""Post-training tau-normalization of output-projection rows: w_i / ||w_i||**tau."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .model import Seq2SeqTransformer, clone_model


@dataclass(frozen=True)
class TauNormConfig:
    tau: float = 0.2
    target: str = "output_projection"

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.target != "output_projection":
            raise ValueError("only the output projection can be tau-normalized")


@dataclass
class TauNormResult:
    model: Seq2SeqTransformer
    tau: float
    zero_rows: list[int] = field(default_factory=list)


def tau_normalize_rows(weights, tau: float) -> tuple[np.ndarray, list[int]]:
    """Rescale every row to norm ``||w_i|| ** (1 - tau)`` in float64.

    Zero rows are left unchanged and their indices returned.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    w = np.array(weights, dtype=np.float64)
    norms = np.linalg.norm(w, axis=1)
    zero = norms == 0
    if tau != 0:
        scale = np.ones_like(norms)
        scale[~zero] = norms[~zero] ** -tau
        w *= scale[:, None]
    return w, [int(i) for i in np.flatnonzero(zero)]


def apply_tau_norm(model: Seq2SeqTransformer, cfg: TauNormConfig | float) -> TauNormResult:
    """Return a copy of ``model`` whose logits use a tau-normalized output matrix.

    The shared embedding stays untouched for input lookups; the normalized
    matrix is a detached float64 copy used only for the output projection.
    ``tau = 0`` returns an unmodified copy.
    """
    tau = cfg.tau if isinstance(cfg, TauNormConfig) else float(cfg)
    TauNormConfig(tau)
    out = clone_model(model)
    if tau == 0:
        return TauNormResult(out, tau)
    w, zero = tau_normalize_rows(out.output_weight.detach().cpu().numpy(), tau)
    out.output_override = torch.from_numpy(w)
    return TauNormResult(out, tau, zero)
