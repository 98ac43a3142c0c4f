"""Small pre-norm transformer encoder-decoder with tied embeddings."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import PAD_ID
from .losses import LossConfig, batch_loss


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    layers: int = 2
    d_model: int = 64
    d_ffn: int = 128
    heads: int = 2
    max_len: int = 64
    dropout: float = 0.1
    tie_embeddings: bool = True

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ModelConfigError("vocab_size must cover the 4 specials plus at least one token")
        if min(self.layers, self.d_model, self.d_ffn, self.heads, self.max_len) < 1:
            raise ModelConfigError("layers, d_model, d_ffn, heads and max_len must be positive")
        if self.d_model % self.heads:
            raise ModelConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def sinusoidal_positions(max_len: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64)[:, None]
    i = torch.arange(0, d_model, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d_model)
    table = torch.zeros(max_len, d_model, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : d_model // 2])
    return table.float()


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.d_head = d_model // heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, query, key_value, mask=None):
        # mask: bool, broadcastable to (B, 1, Tq, Tk); True blocks attention
        B, Tq, D = query.shape
        Tk = key_value.shape[1]
        q = self.q_proj(query).view(B, Tq, self.heads, self.d_head).transpose(1, 2)
        k = self.k_proj(key_value).view(B, Tk, self.heads, self.d_head).transpose(1, 2)
        v = self.v_proj(key_value).view(B, Tk, self.heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        if mask is not None:
            scores = scores.masked_fill(mask, float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(B, Tq, D)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ffn: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ffn)
        self.fc2 = nn.Linear(d_ffn, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.dropout(F.relu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, cfg.dropout)
        self.ln_attn = nn.LayerNorm(cfg.d_model)
        self.ln_ffn = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, pad_mask):
        h = self.ln_attn(x)
        x = x + self.dropout(self.self_attn(h, h, pad_mask))
        return x + self.dropout(self.ffn(self.ln_ffn(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, cfg.dropout)
        self.ln_self = nn.LayerNorm(cfg.d_model)
        self.ln_cross = nn.LayerNorm(cfg.d_model)
        self.ln_ffn = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, y, memory, causal_mask, src_pad_mask):
        h = self.ln_self(y)
        y = y + self.dropout(self.self_attn(h, h, causal_mask))
        y = y + self.dropout(self.cross_attn(self.ln_cross(y), memory, src_pad_mask))
        return y + self.dropout(self.ffn(self.ln_ffn(y)))


class Seq2SeqTransformer(nn.Module):
    """Encoder-decoder whose input embedding matrix doubles as the output projection.

    ``output_override`` holds an optional detached output matrix (used by
    tau-normalization); when set, logits come from it instead of the live
    embedding, while input lookups still use ``embed``.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Parameter(torch.empty(cfg.vocab_size, cfg.d_model))
        self.out_weight = None if cfg.tie_embeddings else nn.Parameter(torch.empty(cfg.vocab_size, cfg.d_model))
        self.encoder_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.decoder_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.layers))
        self.encoder_ln = nn.LayerNorm(cfg.d_model)
        self.decoder_ln = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)
        self.register_buffer("positions", sinusoidal_positions(cfg.max_len, cfg.d_model), persistent=False)
        self.register_buffer("output_override", None, persistent=False)

    @property
    def output_weight(self) -> torch.Tensor:
        if self.output_override is not None:
            return self.output_override
        return self.embed if self.out_weight is None else self.out_weight

    def _check_ids(self, ids: torch.Tensor) -> None:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.cfg.vocab_size):
            raise ValueError(f"token id out of range [0, {self.cfg.vocab_size})")
        if ids.shape[-1] > self.cfg.max_len:
            raise ValueError(f"sequence length {ids.shape[-1]} exceeds max_len {self.cfg.max_len}")

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        x = self.embed[ids] * math.sqrt(self.cfg.d_model)
        x = x + self.positions[: ids.shape[1]].to(x.dtype)
        return self.dropout(x)

    def encode(self, src: torch.Tensor):
        self._check_ids(src)
        pad_mask = (src == PAD_ID)[:, None, None, :]
        x = self._embed(src)
        for layer in self.encoder_layers:
            x = layer(x, pad_mask)
        return self.encoder_ln(x), pad_mask

    def decode(self, tgt_in: torch.Tensor, memory: torch.Tensor, src_pad_mask: torch.Tensor) -> torch.Tensor:
        self._check_ids(tgt_in)
        T = tgt_in.shape[1]
        causal = torch.triu(torch.ones(T, T, dtype=torch.bool, device=tgt_in.device), diagonal=1)
        y = self._embed(tgt_in)
        for layer in self.decoder_layers:
            y = layer(y, memory, causal, src_pad_mask)
        y = self.decoder_ln(y)
        w = self.output_weight
        return y.to(w.dtype) @ w.t()

    def forward(self, src: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        memory, pad_mask = self.encode(src)
        return self.decode(tgt_in, memory, pad_mask)


def init_params(cfg: ModelConfig, seed: int = 0, dtype=torch.float32) -> Seq2SeqTransformer:
    """Fresh model, deterministic per ``seed``.

    Embedding entries ~ N(0, 1/d_model) so rows start near unit norm; linear
    weights Xavier-uniform with zero biases; layer norms at gain 1, bias 0.
    """
    model = Seq2SeqTransformer(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name in ("embed", "out_weight"):
                p.normal_(0.0, cfg.d_model ** -0.5, generator=gen)
            elif p.dim() == 2:
                nn.init.xavier_uniform_(p, generator=gen)
            elif name.endswith("bias"):
                p.zero_()
            else:
                p.fill_(1.0)
    return model.to(dtype)


def forward(model: Seq2SeqTransformer, source, target_prefix) -> torch.Tensor:
    """Logits (len(target_prefix), V) for one unbatched sentence pair."""
    src = torch.as_tensor(source, dtype=torch.long)[None]
    tgt = torch.as_tensor(target_prefix, dtype=torch.long)[None]
    return model(src, tgt)[0]


class _TokenLoss(torch.autograd.Function):
    """Routes the loss value and the analytic logit gradient through ``losses``."""

    @staticmethod
    def forward(ctx, logits, targets, pad_mask, cfg):
        loss, grad = batch_loss(
            logits.detach().cpu().numpy(), targets.cpu().numpy(), cfg, pad_mask.cpu().numpy()
        )
        ctx.save_for_backward(torch.from_numpy(grad))
        return logits.new_tensor(loss)

    @staticmethod
    def backward(ctx, grad_output):
        (grad,) = ctx.saved_tensors
        return grad_output * grad, None, None, None


def token_loss(logits: torch.Tensor, targets: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Summed loss over non-pad positions; differentiable w.r.t. ``logits``."""
    V = logits.shape[-1]
    flat = logits.reshape(-1, V)
    t = targets.reshape(-1)
    return _TokenLoss.apply(flat, t, t == PAD_ID, cfg)


def embedding_norms(params) -> np.ndarray:
    """Euclidean norm of every embedding row, indexed by token id."""
    if isinstance(params, Seq2SeqTransformer):
        w = params.embed.detach().cpu().double().numpy()
    else:
        w = np.asarray(params, dtype=np.float64)
    return np.linalg.norm(w, axis=1)


def clone_model(model: Seq2SeqTransformer) -> Seq2SeqTransformer:
    return copy.deepcopy(model)
