from __future__ import annotations

import re
import time
from dataclasses import dataclass

import pytest
import torch

from longtail.bpe import encode_corpus, learn_bpe
from longtail.config import RunConfig
from longtail.corpus import build_frequency_table, generate_zipf_task
from longtail.training import encode_pairs, train_loop

torch.set_num_threads(1)

_CRITERIA: dict[int, list[str]] = {}


@dataclass
class DeskRun:
    cfg: RunConfig
    train: object
    valid: object
    test: object
    codec: object
    checkpoint: object
    log: list
    seconds: float


@pytest.fixture(scope="session")
def desk_run() -> DeskRun:
    """Default-config CE model on the synthetic Zipf task, trained once per session."""
    cfg = RunConfig()
    syn = {k: cfg[f"synthetic.{k}"] for k in ("vocab_size", "num_train", "num_valid", "num_test")}
    start = time.perf_counter()
    full = generate_zipf_task(syn["vocab_size"], syn["num_train"] + syn["num_valid"] + syn["num_test"],
                              cfg["synthetic.exponent"], cfg["synthetic.max_len"], cfg["seed"])
    a, b = syn["num_train"], syn["num_train"] + syn["num_valid"]
    train, valid, test = full.subset(range(a)), full.subset(range(a, b)), full.subset(range(b, len(full)))
    codec = learn_bpe(train, cfg["bpe.merges"])
    vocab = codec.vocab
    result = train_loop(encode_pairs(encode_corpus(codec, train), vocab), vocab, cfg.model_config(vocab.size),
                        cfg.loss_config(), cfg.train_config(), encode_pairs(encode_corpus(codec, valid), vocab))
    return DeskRun(cfg, train, valid, test, codec, result.checkpoint, result.log, time.perf_counter() - start)


@pytest.fixture(scope="session")
def desk_tables(desk_run):
    enc = encode_corpus(desk_run.codec, desk_run.train)
    return {
        "word_src": build_frequency_table(desk_run.train, "source"),
        "word_tgt": build_frequency_table(desk_run.train, "target"),
        "bpe_src": build_frequency_table(enc, "source"),
        "bpe_tgt": build_frequency_table(enc, "target"),
    }


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        _CRITERIA.setdefault(n, []).append("xfail" if hasattr(report, "wasxfail") and report.skipped
                                           else report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        ok = all(o == "passed" for o in _CRITERIA[n])
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}")
