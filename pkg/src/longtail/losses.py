"""Token-level losses for long-tailed generation with analytic logit gradients.

Families
--------
``ce``      cross-entropy, ``-log p``
``ls-ce``   label-smoothed cross-entropy, uniform smoothing over all V classes
``fl``      focal loss, ``-(1 - p)**gamma * log p``
``gfl``     generalized focal loss, ``-(1 + alpha*p)**gamma * log p``;
            ``alpha > 0`` is the anti-focal regime, ``alpha = 0`` is CE and
            ``alpha = -1`` is FL.

Here ``p`` is the softmax probability of the target class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

P_FLOOR = 1e-12
NLL_CEIL = -math.log(P_FLOOR)
FAMILIES = ("ce", "ls-ce", "fl", "gfl")


@dataclass(frozen=True)
class LossConfig:
    family: str = "ce"
    gamma: float = 1.0
    alpha: float = 1.0
    epsilon: float = 0.1

    def __post_init__(self):
        fam = self.family.lower()
        if fam not in FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("epsilon must lie in [0, 1)")

    @classmethod
    def cross_entropy(cls) -> LossConfig:
        return cls("ce")

    @classmethod
    def label_smoothed(cls, epsilon: float = 0.1) -> LossConfig:
        return cls("ls-ce", epsilon=epsilon)

    @classmethod
    def focal(cls, gamma: float = 1.0) -> LossConfig:
        return cls("fl", gamma=gamma)

    @classmethod
    def anti_focal(cls, alpha: float = 1.0, gamma: float = 1.0) -> LossConfig:
        return cls("gfl", gamma=gamma, alpha=alpha)

    def to_flat(self) -> dict[str, object]:
        return {
            "loss.family": self.family,
            "loss.gamma": self.gamma,
            "loss.alpha": self.alpha,
            "loss.epsilon": self.epsilon,
        }


@dataclass
class TokenLossInput:
    logits: np.ndarray
    target: int
    pad: bool = False


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite value in logits")


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits)
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(np.float64)
    _check_finite(z)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits)
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(np.float64)
    _check_finite(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _weight(p, cfg: LossConfig):
    """Modulating factor and its derivative with respect to ``p``."""
    if cfg.family == "ce":
        return np.ones_like(p), np.zeros_like(p)
    if cfg.family == "fl":
        base, slope = 1 - p, -1.0
    else:
        base, slope = 1 + cfg.alpha * p, cfg.alpha
    w = base ** cfg.gamma
    if cfg.gamma == 0:
        return w, np.zeros_like(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        dw = cfg.gamma * slope * base ** (cfg.gamma - 1)
    return w, dw


def point_loss(p, cfg: LossConfig):
    """Loss of a prediction that puts probability ``p`` on the target.

    Accepts scalars or arrays. ``p`` is floored at 1e-12 before the log.
    """
    if cfg.family == "ls-ce":
        raise ValueError("label-smoothed CE depends on the whole distribution; use sequence_loss")
    arr = np.asarray(p, dtype=np.float64)
    if np.any(~(arr >= 0)) or np.any(arr > 1):
        raise ValueError(f"probability outside (0, 1]: {p!r}")
    arr = np.maximum(arr, P_FLOOR)
    w, _ = _weight(arr, cfg)
    out = w * -np.log(arr)
    return float(out) if out.ndim == 0 else out


def relative_loss_ratio(p_low: float, p_high: float, cfg: LossConfig) -> float:
    """``point_loss(p_low) / point_loss(p_high)`` for ``0 < p_low < p_high < 1``."""
    if p_high >= 1:
        raise ZeroDivisionError("loss at p_high = 1 is zero")
    if not 0 < p_low < p_high:
        raise ValueError(f"need 0 < p_low < p_high, got {p_low}, {p_high}")
    return point_loss(p_low, cfg) / point_loss(p_high, cfg)


def token_losses(logits, targets, cfg: LossConfig, pad_mask=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-row loss and the exact gradient of each row's loss w.r.t. its logits.

    ``logits`` is (n, V), ``targets`` is (n,). Rows flagged in ``pad_mask``
    get zero loss and zero gradient. Computation keeps the dtype of
    ``logits``.
    """
    z = np.asarray(logits)
    if not np.issubdtype(z.dtype, np.floating):
        z = z.astype(np.float64)
    if z.ndim != 2:
        raise ValueError(f"logits must be 2-D (n, V), got shape {z.shape}")
    t = np.asarray(targets, dtype=np.int64)
    n, V = z.shape
    if t.shape != (n,):
        raise ValueError(f"targets shape {t.shape} does not match logits rows {n}")
    if np.any(t < 0) or np.any(t >= V):
        raise ValueError("target index out of range")
    pad = np.zeros(n, dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool)
    if pad.shape != (n,):
        raise ValueError(f"pad mask shape {pad.shape} does not match logits rows {n}")

    logp = log_softmax(z)
    p = np.exp(logp)
    rows = np.arange(n)
    onehot = np.zeros_like(p)
    onehot[rows, t] = 1
    nll_all = -logp
    nll_t = nll_all[rows, t]
    live_t = nll_t < NLL_CEIL  # clamped terms are constant, so carry no gradient
    nll_t = np.minimum(nll_t, NLL_CEIL)

    if cfg.family == "ls-ce":
        eps = cfg.epsilon
        live = nll_all < NLL_CEIL
        nll_all = np.minimum(nll_all, NLL_CEIL)
        loss = (1 - eps) * nll_t + (eps / V) * nll_all.sum(axis=1)
        grad = (1 - eps) * live_t[:, None] * (p - onehot)
        grad += (eps / V) * (live.sum(axis=1, keepdims=True) * p - live)
    else:
        pt = p[rows, t]
        w, dw = _weight(pt, cfg)
        loss = w * nll_t
        # d/dz of w(p_t) * nll(p_t) = w * (p - onehot) + dw * nll * p_t * (onehot - p)
        grad = (w * live_t)[:, None] * (p - onehot)
        with np.errstate(invalid="ignore"):
            chain = np.where(nll_t == 0, 0.0, dw * nll_t * pt)
        grad += chain[:, None] * (onehot - p)

    loss = np.where(pad, 0.0, loss).astype(z.dtype, copy=False)
    grad[pad] = 0
    return loss, grad.astype(z.dtype, copy=False)


def batch_loss(logits, targets, cfg: LossConfig, pad_mask=None, reduction: str = "sum"):
    """Summed (or per-token mean) loss over non-pad rows, with its gradient."""
    loss, grad = token_losses(logits, targets, cfg, pad_mask)
    total = float(loss.sum(dtype=np.float64))
    if reduction == "sum":
        return total, grad
    if reduction == "mean":
        n = loss.shape[0] if pad_mask is None else int((~np.asarray(pad_mask, dtype=bool)).sum())
        n = max(n, 1)
        return total / n, grad / n
    raise ValueError(f"unknown reduction {reduction!r}")


def sequence_loss(
    inputs: Sequence[TokenLossInput], cfg: LossConfig, reduction: str = "sum"
) -> tuple[float, np.ndarray]:
    if len(inputs) == 0:
        raise ValueError("sequence_loss needs at least one token")
    widths = {np.shape(x.logits) for x in inputs}
    if len(widths) != 1 or len(next(iter(widths))) != 1:
        raise ValueError(f"all logits must be vectors of equal length, got shapes {sorted(widths)}")
    logits = np.stack([np.asarray(x.logits) for x in inputs])
    targets = [x.target for x in inputs]
    pad = [x.pad for x in inputs]
    return batch_loss(logits, targets, cfg, pad, reduction)
