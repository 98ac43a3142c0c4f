"""``longtail`` command line: prepare, train, evaluate, analyze.

All subcommands share one working directory (``--out`` / ``out``) and one
flat config. Every run writes its fully resolved config next to its
artifacts as ``resolved_<command>.cfg``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import traceback
from collections import Counter
from pathlib import Path

import numpy as np

from . import bpe as bpe_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_overrides
from .corpus import (
    FrequencyTable,
    build_frequency_table,
    generate_zipf_task,
    load_parallel,
    save_parallel,
    split_by_frequency_score,
)
from .decode import Translator
from .losses import LossConfig, point_loss, relative_loss_ratio
from .metrics import (
    corpus_bleu,
    evaluate_splits,
    histogram,
    kde_pdf,
    mean_entropy,
    norm_frequency_correlation,
    token_accuracy,
    token_fmeasure_buckets,
)
from .tau_norm import apply_tau_norm
from .training import encode_pairs, train_loop
from .vocab import Vocabulary

log = logging.getLogger("longtail")

SPLITS = ("train", "valid", "test")


class Workdir:
    def __init__(self, root):
        self.root = Path(root)

    def raw(self, split, side):
        return self.root / "data" / f"{split}.{side}"

    def bpe(self, split, side):
        return self.root / "data" / f"{split}.bpe.{side}"

    def freq(self, granularity, side):
        return self.root / f"freq.{granularity}.{side}.txt"

    codes = property(lambda self: self.root / "bpe.codes")
    vocab = property(lambda self: self.root / "vocab.txt")
    checkpoint = property(lambda self: self.root / "checkpoint.bin")
    train_log = property(lambda self: self.root / "train_log.csv")
    reports = property(lambda self: self.root / "eval")

    def corpus(self, split, bpe=False):
        f = self.bpe if bpe else self.raw
        return load_parallel(f(split, "src"), f(split, "tgt"), name=split)

    def codec(self):
        return bpe_mod.load_codec(self.codes, Vocabulary.load(self.vocab))


def _echo_config(cfg: RunConfig, wd: Workdir, command: str) -> None:
    wd.root.mkdir(parents=True, exist_ok=True)
    cfg.save(wd.root / f"resolved_{command}.cfg")


def cmd_prepare(cfg: RunConfig) -> Workdir:
    wd = Workdir(cfg["out"])
    (wd.root / "data").mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, wd, "prepare")
    if cfg.synthetic:
        sizes = [cfg["synthetic.num_train"], cfg["synthetic.num_valid"], cfg["synthetic.num_test"]]
        full = generate_zipf_task(cfg["synthetic.vocab_size"], sum(sizes), cfg["synthetic.exponent"],
                                  cfg["synthetic.max_len"], cfg["seed"])
        start = 0
        corpora = {}
        for split, n in zip(SPLITS, sizes):
            corpora[split] = full.subset(range(start, start + n), name=split)
            start += n
    else:
        corpora = {}
        for split in SPLITS:
            src, tgt = cfg[f"data.{split}_src"], cfg[f"data.{split}_tgt"]
            if not src or not tgt:
                raise ValueError(f"data.{split}_src and data.{split}_tgt must both be set")
            corpora[split] = load_parallel(src, tgt, name=split)
    for split, c in corpora.items():
        save_parallel(c, wd.raw(split, "src"), wd.raw(split, "tgt"))

    codec = bpe_mod.learn_bpe(corpora["train"], cfg["bpe.merges"])
    bpe_mod.save_codec(codec, wd.codes)
    codec.vocab.save(wd.vocab)
    for split, c in corpora.items():
        enc = bpe_mod.encode_corpus(codec, c)
        save_parallel(enc, wd.bpe(split, "src"), wd.bpe(split, "tgt"))
        if split == "train":
            for side, short in (("source", "src"), ("target", "tgt")):
                build_frequency_table(c, side).save(wd.freq("word", short))
                build_frequency_table(enc, side).save(wd.freq("bpe", short))
    log.info("prepared %s: vocab %d, %d merges", wd.root, codec.vocab.size, codec.num_merges)
    return wd


def cmd_train(cfg: RunConfig) -> Workdir:
    wd = Workdir(cfg["out"])
    previous = wd.root / "resolved_train.cfg"
    if previous.exists():
        changed = RunConfig.from_file(previous).diff(cfg)
        for k, (old, new) in changed.items():
            log.info("config change since last train: %s: %r -> %r", k, old, new)
    _echo_config(cfg, wd, "train")
    vocab = Vocabulary.load(wd.vocab)
    train = encode_pairs(wd.corpus("train", bpe=True), vocab)
    valid = encode_pairs(wd.corpus("valid", bpe=True), vocab)
    with open(wd.train_log, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "lr", "train_loss", "valid_loss"])

        def on_log(row):
            writer.writerow([row.step, f"{row.lr:.6g}", f"{row.train_loss:.6f}", f"{row.valid_loss:.6f}"])
            f.flush()

        result = train_loop(train, vocab, cfg.model_config(vocab.size), cfg.loss_config(),
                            cfg.train_config(), valid, on_log)
    result.checkpoint.meta = {"loss": cfg.loss_config().to_flat(), "train": cfg.train_config().to_dict()}
    save_checkpoint(result.checkpoint, wd.checkpoint)
    log.info("saved %s after %d updates", wd.checkpoint, result.checkpoint.step)
    return wd


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


def cmd_evaluate(cfg: RunConfig) -> tuple[Workdir, dict]:
    """Decode test and validation data and write every report; failures are isolated per report."""
    wd = Workdir(cfg["out"])
    _echo_config(cfg, wd, "evaluate")
    out = wd.reports
    out.mkdir(parents=True, exist_ok=True)
    ck = load_checkpoint(wd.checkpoint)
    codec = wd.codec()
    model = ck.model
    tau = cfg["tau.value"]
    report: dict = {"meta": {"tau": tau, "beam": cfg["beam.size"], "lenpen": cfg["beam.lenpen"],
                             "max_len": cfg["beam.max_len"], "step": ck.step, "checkpoint_meta": ck.meta},
                    "errors": {}}
    if tau > 0:
        tn = apply_tau_norm(model, tau)
        model = tn.model
        report["meta"]["tau_zero_rows"] = tn.zero_rows
    translator = Translator(model, ck.vocab, codec)
    beam = cfg.beam_config()
    test = wd.corpus("test")
    word_tables = {s: FrequencyTable.load(wd.freq("word", s)) for s in ("src", "tgt")}
    bpe_tables = {s: FrequencyTable.load(wd.freq("bpe", s)) for s in ("src", "tgt")}

    def section(name, fn):
        try:
            fn()
        except Exception as e:  # one broken report must not take down the others
            log.error("report %s failed: %s", name, e)
            report["errors"][name] = f"{type(e).__name__}: {e}"

    state: dict = {}

    def translate():
        words, pieces, hyps = translator.translate_corpus(test, beam)
        state.update(words=words, pieces=pieces, hyps=hyps)
        (out / "translations.txt").write_text("".join(" ".join(w) + "\n" for w in words), encoding="utf-8")
        refs_bpe = [bpe_mod.apply_bpe(codec, t) for t in test.targets]
        state["refs_bpe"] = refs_bpe
        report["bleu"] = corpus_bleu(words, test.targets)
        report["token_accuracy"] = {"word": token_accuracy(words, test.targets),
                                    "bpe": token_accuracy(pieces, refs_bpe)}

    def buckets():
        edges = cfg.bucket_edges()
        rows = {}
        for gran, hyps, refs, table, fname in (
            ("word", state["words"], test.targets, word_tables["tgt"], "bucket_fmeasure.csv"),
            ("bpe", state["pieces"], state["refs_bpe"], bpe_tables["tgt"], "bucket_fmeasure.bpe.csv"),
        ):
            rep = token_fmeasure_buckets(hyps, refs, table, edges, gran)
            _write_csv(out / fname, ["bucket_low", "bucket_high", "P", "R", "F"],
                       [[_fmt(b.low), _fmt(b.high), _fmt(b.precision), _fmt(b.recall), _fmt(b.f_measure)]
                        for b in rep.buckets])
            rows[gran] = [{"bucket": b.label(), "matched": b.matched, "system": b.system,
                           "reference": b.reference, "precision": b.precision, "recall": b.recall,
                           "f_measure": b.f_measure} for b in rep.buckets]
        report["bucket_fmeasure"] = rows

    def positional():
        scores_per_sent = [h.positional_scores for h in state["hyps"]]
        with open(out / "positional_scores.txt", "w") as f:
            for s in scores_per_sent:
                f.write(" ".join(_fmt(x) for x in s) + "\n")
        _write_csv(out / "positional_scores.csv", ["sentence", "step", "p"],
                   [[i, j, _fmt(p)] for i, s in enumerate(scores_per_sent) for j, p in enumerate(s)])
        flat = [p for s in scores_per_sent for p in s]
        hist = histogram(flat, cfg["metrics.hist_bins"])
        _write_csv(out / "histogram.csv", ["bin_low", "bin_high", "count", "density"],
                   [[_fmt(hist.edges[i]), _fmt(hist.edges[i + 1]), int(hist.counts[i]), _fmt(hist.densities[i])]
                    for i in range(hist.bins)])
        grid = np.linspace(0.0, 1.0, cfg["metrics.kde_points"])
        pdf = kde_pdf(flat, grid) if hist.bandwidth else np.full_like(grid, np.nan)
        _write_csv(out / "kde.csv", ["x", "pdf"], [[_fmt(x), _fmt(y)] for x, y in zip(grid, pdf)])
        report["positional_scores"] = {"count": len(flat), "fraction_below_0.75": float(np.mean(np.array(flat) < 0.75)),
                                       "mean": float(np.mean(flat)), "kde_bandwidth": hist.bandwidth}

    def splits():
        gran = cfg["metrics.fs_granularity"]
        if gran not in ("word", "bpe"):
            raise ValueError(f"metrics.fs_granularity must be word or bpe, got {gran!r}")
        valid = wd.corpus("valid")
        table = (bpe_tables if gran == "bpe" else word_tables)["src"]
        tok = (lambda s: bpe_mod.apply_bpe(codec, s)) if gran == "bpe" else None
        parts = split_by_frequency_score(valid, table, cfg["metrics.splits"], tokenize=tok)
        ev = evaluate_splits(translator, parts, beam, table, tokenize=tok)
        _write_csv(out / "split_eval.csv", ["split", "size", "mean_fs", "bleu"],
                   [[r.index, r.size, _fmt(r.mean_fs), _fmt(r.bleu)] for r in ev.rows])
        report["split_eval"] = [vars(r) for r in ev.rows]

    def norms():
        joint = FrequencyTable(Counter(bpe_tables["src"]) + Counter(bpe_tables["tgt"]))
        nf = norm_frequency_correlation(ck.model, ck.vocab, joint)
        _write_csv(out / "embedding_norms.csv", ["token", "frequency", "norm"],
                   [[t, int(f), _fmt(n)] for t, f, n in nf.rows()])
        report["norm_frequency_spearman"] = nf.spearman

    def entropy():
        pairs = encode_pairs(wd.corpus("test", bpe=True), ck.vocab)
        report["mean_entropy"] = mean_entropy(model, pairs)

    section("translate", translate)
    if "words" in state:
        section("bucket_fmeasure", buckets)
        section("positional_scores", positional)
    section("split_eval", splits)
    section("norms", norms)
    section("entropy", entropy)
    with open(out / "report.json", "w") as f:
        json.dump(report, f, indent=2, sort_keys=True, default=float)
    return wd, report


def cmd_analyze(cfg: RunConfig) -> Workdir:
    """Loss curves and relative-loss ratios for the configured loss and its CE/FL references."""
    wd = Workdir(cfg["out"])
    _echo_config(cfg, wd, "analyze")
    families = {
        "ce": LossConfig("ce"),
        "fl": LossConfig("fl", gamma=cfg["loss.gamma"]),
        "gfl": LossConfig("gfl", gamma=cfg["loss.gamma"], alpha=cfg["loss.alpha"]),
    }
    p = np.linspace(0.01, 1.0, 100)
    _write_csv(wd.root / "loss_curves.csv", ["p"] + list(families),
               [[_fmt(pi)] + [_fmt(point_loss(pi, c)) for c in families.values()] for pi in p])
    ratios = {name: relative_loss_ratio(0.6, 0.9, c) for name, c in families.items()}
    (wd.root / "loss_ratios.json").write_text(json.dumps(ratios, indent=2, sort_keys=True))
    for name, r in ratios.items():
        print(f"{name}\tloss(0.6)/loss(0.9) = {r:.4f}")
    return wd


COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "evaluate": cmd_evaluate, "analyze": cmd_analyze}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longtail", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="working/output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="generate/load data, learn BPE, write vocab and frequency tables")
    sub.add_parser("train", parents=[common], help="train a model on prepared data")
    ev = sub.add_parser("evaluate", parents=[common], help="decode and write all reports")
    ev.add_argument("--beam", type=int)
    ev.add_argument("--tau", type=float)
    ev.add_argument("--lenpen", type=float)
    sub.add_parser("analyze", parents=[common], help="loss curves and relative-loss ratios")
    sub.add_parser("show-config", parents=[common], help="print the resolved config")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg.update(parse_overrides(args.set))
    flags = {"out": args.out, "seed": args.seed}
    for flag, key in (("beam", "beam.size"), ("tau", "tau.value"), ("lenpen", "beam.lenpen")):
        flags[key] = getattr(args, flag, None)
    cfg.update({k: v for k, v in flags.items() if v is not None})
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if args.command == "show-config":
            sys.stdout.write(cfg.to_text())
            return 0
        result = COMMANDS[args.command](cfg)
        if args.command == "evaluate" and result[1]["errors"]:
            failed = ",".join(sorted(result[1]["errors"]))
            print(json.dumps({"error": "ReportError", "message": f"reports failed: {failed}"}), file=sys.stderr)
            return 2
        return 0
    except Exception as e:
        if args.verbose:
            traceback.print_exc()
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
