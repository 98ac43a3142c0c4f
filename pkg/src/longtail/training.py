"""Adam + inverse-sqrt training on token-bucketed batches."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint
from .corpus import BOS_ID, EOS_ID, PAD_ID, ParallelCorpus
from .losses import LossConfig
from .model import ModelConfig, Seq2SeqTransformer, init_params, token_loss
from .vocab import Vocabulary

log = logging.getLogger(__name__)

EncodedPair = tuple[list[int], list[int]]


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    updates: int = 3000
    lr: float = 5e-4
    warmup: int = 400
    warmup_init_lr: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.98
    max_tokens: int = 512
    valid_every: int = 500
    seed: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


def inverse_sqrt_lr(step: int, base_lr: float, warmup: int, warmup_init_lr: float = 1e-7) -> float:
    """Linear warmup from ``warmup_init_lr`` to ``base_lr``, then ``base_lr * sqrt(warmup / step)``."""
    if step < 1:
        raise ValueError("learning-rate schedule starts at step 1")
    if warmup > 0 and step <= warmup:
        return warmup_init_lr + (base_lr - warmup_init_lr) * step / warmup
    return base_lr * math.sqrt(max(warmup, 1) / step)


class OptimizerState:
    def __init__(self, model: Seq2SeqTransformer, base_lr: float = 5e-4, warmup: int = 400,
                 warmup_init_lr: float = 1e-7, betas=(0.9, 0.98)):
        self.base_lr = base_lr
        self.warmup = warmup
        self.warmup_init_lr = warmup_init_lr
        self.step = 0
        self.adam = torch.optim.Adam(model.parameters(), lr=base_lr, betas=betas, eps=1e-8)

    def lr_at(self, step: int) -> float:
        if self.base_lr == 0:
            return 0.0
        return inverse_sqrt_lr(step, self.base_lr, self.warmup, self.warmup_init_lr)


@dataclass
class Batch:
    src: torch.Tensor
    tgt_in: torch.Tensor
    tgt_out: torch.Tensor

    @property
    def ntokens(self) -> int:
        return int((self.tgt_out != PAD_ID).sum())


def collate(pairs: Sequence[EncodedPair]) -> Batch:
    """Pad a list of (source ids, target ids); eos/bos are added here."""
    S = max(len(s) for s, _ in pairs) + 1
    T = max(len(t) for _, t in pairs) + 1
    src = torch.full((len(pairs), S), PAD_ID, dtype=torch.long)
    tin = torch.full((len(pairs), T), PAD_ID, dtype=torch.long)
    tout = torch.full((len(pairs), T), PAD_ID, dtype=torch.long)
    for i, (s, t) in enumerate(pairs):
        src[i, : len(s) + 1] = torch.tensor(list(s) + [EOS_ID])
        tin[i, : len(t) + 1] = torch.tensor([BOS_ID] + list(t))
        tout[i, : len(t) + 1] = torch.tensor(list(t) + [EOS_ID])
    return Batch(src, tin, tout)


def make_batches(pairs: Sequence[EncodedPair], max_tokens: int, rng: np.random.Generator) -> list[list[int]]:
    """Length-sorted buckets whose padded size stays within ``max_tokens``."""
    jitter = rng.random(len(pairs))
    order = sorted(range(len(pairs)), key=lambda i: (len(pairs[i][0]), len(pairs[i][1]), jitter[i]))
    batches, cur, width = [], [], 0
    for i in order:
        w = max(len(pairs[i][0]), len(pairs[i][1])) + 1
        if cur and max(width, w) * (len(cur) + 1) > max_tokens:
            batches.append(cur)
            cur, width = [], 0
        cur.append(i)
        width = max(width, w)
    if cur:
        batches.append(cur)
    return batches


def train_step(model: Seq2SeqTransformer, opt: OptimizerState, batch: Batch, loss_cfg: LossConfig,
               batch_id=None) -> float:
    """One Adam update in place; returns the pre-update loss per target token."""
    model.train()
    opt.step += 1
    lr = opt.lr_at(opt.step)
    for group in opt.adam.param_groups:
        group["lr"] = lr
    opt.adam.zero_grad(set_to_none=True)
    logits = model(batch.src, batch.tgt_in)
    loss = token_loss(logits, batch.tgt_out, loss_cfg)
    ntok = max(batch.ntokens, 1)
    value = float(loss.detach()) / ntok
    if not math.isfinite(value):
        raise TrainingDivergedError(f"non-finite loss at step {opt.step} (lr={lr:.3g}, batch={batch_id})")
    loss.backward()
    opt.adam.step()
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise TrainingDivergedError(f"non-finite parameter {name} after step {opt.step} (lr={lr:.3g}, batch={batch_id})")
    return value


@torch.no_grad()
def evaluate_loss(model: Seq2SeqTransformer, pairs: Sequence[EncodedPair], max_tokens: int = 2048,
                  loss_cfg: LossConfig | None = None) -> float:
    """Per-token loss (cross-entropy unless ``loss_cfg`` given), dropout off."""
    cfg = loss_cfg or LossConfig("ce")
    model.eval()
    total, ntok = 0.0, 0
    for idx in make_batches(pairs, max_tokens, np.random.default_rng(0)):
        b = collate([pairs[i] for i in idx])
        total += float(token_loss(model(b.src, b.tgt_in), b.tgt_out, cfg))
        ntok += b.ntokens
    return total / max(ntok, 1)


@dataclass
class TrainLogRow:
    step: int
    lr: float
    train_loss: float
    valid_loss: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[TrainLogRow] = field(default_factory=list)


def encode_pairs(corpus: ParallelCorpus, vocab: Vocabulary) -> list[EncodedPair]:
    return [(vocab.encode(s), vocab.encode(t)) for s, t in corpus]


def train_loop(
    train: Sequence[EncodedPair],
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    valid: Sequence[EncodedPair] = (),
    on_log: Callable[[TrainLogRow], None] | None = None,
) -> TrainResult:
    """Train from scratch for ``train_cfg.updates`` steps and return the final checkpoint."""
    limit = model_cfg.max_len - 1
    kept = [p for p in train if p[0] and len(p[0]) <= limit and len(p[1]) <= limit]
    if len(kept) < len(train):
        log.warning("dropped %d training pairs empty or longer than %d tokens", len(train) - len(kept), limit)
    if not kept:
        raise ValueError("no usable training pairs")
    valid = [p for p in valid if p[0] and len(p[0]) <= limit and len(p[1]) <= limit]

    torch.manual_seed(train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    model = init_params(model_cfg, seed=train_cfg.seed)
    opt = OptimizerState(model, train_cfg.lr, train_cfg.warmup, train_cfg.warmup_init_lr,
                         (train_cfg.beta1, train_cfg.beta2))
    batches = make_batches(kept, train_cfg.max_tokens, rng)
    rows: list[TrainLogRow] = []

    def record(step, lr, train_loss):
        vl = evaluate_loss(model, valid) if valid else float("nan")
        row = TrainLogRow(step, lr, train_loss, vl)
        rows.append(row)
        if on_log:
            on_log(row)
        log.info("step %d lr %.3g train %.4f valid %.4f", step, lr, train_loss, vl)

    if train_cfg.updates > 0:
        record(0, 0.0, float("nan"))
    running, n_running = 0.0, 0
    order: list[int] = []
    while opt.step < train_cfg.updates:
        if not order:
            order = list(rng.permutation(len(batches)))
        bid = int(order.pop())
        batch = collate([kept[i] for i in batches[bid]])
        running += train_step(model, opt, batch, loss_cfg, batch_id=bid)
        n_running += 1
        if opt.step % train_cfg.valid_every == 0 or opt.step == train_cfg.updates:
            record(opt.step, opt.lr_at(opt.step), running / n_running)
            running, n_running = 0.0, 0
    model.eval()
    return TrainResult(Checkpoint(model_cfg, model, vocab, opt.step), rows)
