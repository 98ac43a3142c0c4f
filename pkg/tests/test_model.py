from __future__ import annotations

import numpy as np
import pytest
import torch

from longtail.losses import LossConfig
from longtail.model import (
    ModelConfig,
    ModelConfigError,
    embedding_norms,
    forward,
    init_params,
    token_loss,
)

TINY = ModelConfig(11, layers=2, d_model=8, d_ffn=16, heads=2, max_len=16, dropout=0.0)


def _batch(seed=0):
    g = torch.Generator().manual_seed(seed)
    src = torch.randint(4, 11, (3, 6), generator=g)
    tin = torch.cat([torch.full((3, 1), 1), torch.randint(4, 11, (3, 5), generator=g)], 1)
    tout = torch.cat([tin[:, 1:], torch.full((3, 1), 2)], 1)
    return src, tin, tout


def test_same_seed_same_params():
    a, b = init_params(TINY, seed=3), init_params(TINY, seed=3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and torch.equal(pa, pb)
    c = init_params(TINY, seed=4)
    assert not torch.equal(a.embed, c.embed)


def test_init_norm_band_and_layer_norms():
    m = init_params(ModelConfig(500, d_model=64, d_ffn=128), seed=0)
    norms = embedding_norms(m)
    med = np.median(norms)
    assert np.all((norms >= 0.5 * med) & (norms <= 2 * med))
    for name, p in m.named_parameters():
        if "ln" in name or "norm" in name:
            expected = 0.0 if name.endswith("bias") else 1.0
            assert torch.all(p == expected), name


def test_softmax_rows_sum_to_one():
    m = init_params(TINY, seed=1).eval()
    src, tin, _ = _batch()
    p = torch.softmax(m(src, tin), dim=-1)
    assert torch.allclose(p.sum(-1), torch.ones(p.shape[:-1]), atol=1e-6)


def test_causality():
    m = init_params(TINY, seed=2).eval()
    src = [5, 6, 7, 2]
    prefix = [1, 4, 5, 6, 7, 8]
    base = forward(m, src, prefix)
    for t in range(1, len(prefix)):
        changed = list(prefix)
        changed[t] = 10 if prefix[t] != 10 else 9
        out = forward(m, src, changed)
        assert torch.equal(out[:t], base[:t])


def test_eval_is_deterministic():
    m = init_params(ModelConfig(11, d_model=8, d_ffn=16, dropout=0.5), seed=0).eval()
    src, tin, _ = _batch()
    assert torch.equal(m(src, tin), m(src, tin))


def test_tied_weights_identity():
    m = init_params(TINY, seed=0).eval()
    assert m.output_weight is m.embed
    assert [n for n, _ in m.named_parameters()].count("embed") == 1
    src, tin, _ = _batch()
    before = m(src, tin).detach().clone()
    with torch.no_grad():
        m.embed[7] += 1.0
    after = m(src, tin)
    assert not torch.equal(before[..., 7], after[..., 7])
    # input lookups of token 7 changed too
    mem_a, _ = m.encode(torch.tensor([[7, 2]]))
    with torch.no_grad():
        m.embed[7] -= 1.0
    mem_b, _ = m.encode(torch.tensor([[7, 2]]))
    assert not torch.equal(mem_a, mem_b)


def test_untied_has_separate_output():
    m = init_params(ModelConfig(11, d_model=8, d_ffn=16, tie_embeddings=False), seed=0)
    assert m.output_weight is not m.embed


def test_config_errors():
    with pytest.raises(ModelConfigError):
        ModelConfig(3)
    with pytest.raises(ModelConfigError):
        ModelConfig(20, d_model=10, heads=3)
    m = init_params(TINY)
    with pytest.raises(ValueError):
        m(torch.tensor([[11]]), torch.tensor([[1]]))
    with pytest.raises(ValueError):
        m(torch.tensor([[4] * 17]), torch.tensor([[1]]))


def test_embedding_norms_examples():
    w = np.zeros((3, 4))
    w[1, :2] = (3, 4)
    assert embedding_norms(w).tolist() == [0.0, 5.0, 0.0]


@pytest.mark.parametrize("family", ["ce", "ls-ce", "fl", "gfl"])
def test_full_model_gradient_64bit(family):
    cfg = LossConfig(family)
    m = init_params(TINY, seed=7, dtype=torch.float64).eval()
    src, tin, tout = _batch(1)
    token_loss(m(src, tin), tout, cfg).backward()
    g = torch.Generator().manual_seed(0)
    params = list(m.named_parameters())
    analytic, numeric = [], []
    for k in range(20):
        _, p = params[k % len(params)]
        i = int(torch.randint(p.numel(), (1,), generator=g))
        h = 1e-5
        with torch.no_grad():
            orig = p.view(-1)[i].item()
            p.view(-1)[i] = orig + h
            up = float(token_loss(m(src, tin), tout, cfg))
            p.view(-1)[i] = orig - h
            dn = float(token_loss(m(src, tin), tout, cfg))
            p.view(-1)[i] = orig
        numeric.append((up - dn) / (2 * h))
        analytic.append(float(p.grad.view(-1)[i]))
    a, n = np.array(analytic), np.array(numeric)
    assert np.max(np.abs(a - n)) / np.max(np.abs(n)) < 1e-6


def test_pad_targets_carry_no_gradient():
    m = init_params(TINY, seed=1).eval()
    src, tin, tout = _batch()
    tout = tout.clone()
    tout[:, -2:] = 0
    logits = m(src, tin).detach().requires_grad_(True)
    token_loss(logits, tout, LossConfig("gfl")).backward()
    assert torch.all(logits.grad[:, -2:] == 0)
