"""Command-line entry point tying the pipeline together.

Exit codes: 0 success, 2 usage error (unknown command or flag), 3 invalid
configuration (each violated key listed), 1 any other failure, always with a
one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import config_digest, load_checkpoint, read_manifest, save_checkpoint
from .config import RunConfig
from .errors import ConfigError, WordlmError
from .evaluation import (
    BUCKET_NAMES,
    FrequencyBuckets,
    build_probe_set,
    cloze_accuracy,
    load_cloze_items,
    load_probe_examples,
    load_span_items,
    load_tagged_sequences,
    probe_topk,
    save_probe_examples,
    span_em_f1,
    tag_f1,
)
from .model import WordBertModel, parameter_counts
from .sampling import NeighborIndex
from .seeding import substream
from .training import pretrain_projection, train as run_training, write_metrics, ProjectionPair
from .vocab import WordVocab, build_vocabulary, count_corpus_file

_CLOZE_EXAMPLE = (
    'cloze JSONL example: {"passage_words": ["the", "dog", "[BLANK]", "loudly"], '
    '"options": ["barked", "sat", "blue", "seven"], "answer_index": 0}'
)
_PROBE_EXAMPLE = (
    'probe JSONL example: {"words": ["the", "cat", "sat"], "masked_positions": [1], '
    '"gold_words": ["cat"], "bucket": "Low"}'
)
_TAG_EXAMPLE = (
    'tagging JSONL example: {"words": ["rome", "fell"], "gold_labels": ["B-LOC", "O"]}; '
    "the --pred file uses the same fields with predicted labels in gold_labels"
)
_SPAN_EXAMPLE = (
    'span JSONL example: {"context_words": ["rome", "fell", "late"], '
    '"question_words": ["when"], "gold_spans": [[2, 2]]}; predictions are '
    '{"start": 3, "end": 3} per line in encoded positions (word i at i+1, '
    "[0, 0] for no-answer)"
)


def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _load_npz_array(path, key):
    with np.load(path) as z:
        if key not in z.files:
            raise WordlmError(f"{path} does not contain array {key!r} (has {z.files})")
        return z[key].astype(np.float32)


def _build_model(cfg: RunConfig, vocab: WordVocab, word_vectors_path=None, projection_path=None):
    model_cfg = cfg.model_config(vocab.size)
    kwargs = {}
    if model_cfg.variant == "projected":
        if word_vectors_path is None:
            raise WordlmError("projected variant needs --word-vectors (npz with array 'vectors')")
        kwargs["word_vectors"] = _load_npz_array(word_vectors_path, "vectors")
        if projection_path is not None:
            kwargs["projection"] = _load_npz_array(projection_path, "projection")
    return WordBertModel(model_cfg, seed=cfg["model.seed"], **kwargs)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_build_vocab(args) -> int:
    counts = count_corpus_file(args.corpus, lowercase=not args.no_lowercase)
    vocab = build_vocabulary(counts, k=args.k, lowercase=not args.no_lowercase)
    vocab.save(args.out)
    print(f"wrote {vocab.size} words ({args.k} requested + specials) to {args.out}")
    return 0


def cmd_pretrain_projection(args) -> int:
    v_in = _load_npz_array(args.pairs, "v_in")
    v_out = _load_npz_array(args.pairs, "v_out")
    if v_in.shape[0] != v_out.shape[0]:
        raise WordlmError(f"pair count mismatch: {v_in.shape[0]} vs {v_out.shape[0]}")
    pairs = [ProjectionPair(a, b) for a, b in zip(v_in, v_out)]
    w, losses = pretrain_projection(
        pairs, lr=args.lr, epochs=args.epochs, rng=substream(args.seed, "init")
    )
    np.savez(args.out, projection=w.data, final_loss=np.float32(losses[-1]))
    print(f"fitted {v_in.shape[1]}x{v_out.shape[1]} projection on {len(pairs)} pairs, "
          f"final mse {losses[-1]:.6g} -> {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    cfg = RunConfig.load(args.config, overrides=overrides)
    vocab = WordVocab.load(args.vocab)
    corpus = _read_lines(args.corpus)
    model = _build_model(cfg, vocab, args.word_vectors, args.projection)
    neighbor_index = None
    if cfg["train.use_neighbors"]:
        neighbor_index = NeighborIndex(model.params["embedding.word"].data)
    os.makedirs(args.out, exist_ok=True)
    cfg.echo_into(args.out)
    records, optimizer = run_training(
        corpus, vocab, model, cfg.train_config(),
        policy=cfg.masking_policy(), neighbor_index=neighbor_index,
        num_steps=args.steps,
    )
    write_metrics(records, os.path.join(args.out, "metrics.tsv"))
    final_step = records[-1].step + 1 if records else 0
    save_checkpoint(
        model, optimizer, step=final_step,
        path=os.path.join(args.out, "checkpoint.ckpt"),
        digest=config_digest(cfg.text()),
    )
    print(f"trained {len(records)} steps, final loss {records[-1].loss:.6g}, "
          f"artifacts in {args.out}")
    return 0


def cmd_probe(args) -> int:
    cfg = RunConfig.load(args.config, overrides=args.set)
    vocab = WordVocab.load(args.vocab)
    model = load_checkpoint(args.checkpoint).model
    if args.probes:
        probes = load_probe_examples(args.probes)
    else:
        if not args.corpus:
            raise WordlmError("probe needs either --probes or --corpus")
        ref_path = args.ref_corpus or args.corpus
        buckets = FrequencyBuckets(
            dict(count_corpus_file(ref_path, lowercase=vocab.lowercase)),
            high=cfg["eval.threshold_high"],
            medium=cfg["eval.threshold_medium"],
            low=cfg["eval.threshold_low"],
        )
        lines = _read_lines(args.corpus)
        probes = []
        for i, bucket in enumerate(BUCKET_NAMES):
            probes.extend(
                build_probe_set(
                    lines, buckets, bucket, p=cfg["eval.mask_probability"],
                    rng=substream(cfg["train.seed"], f"probe-{bucket}"),
                    lowercase=vocab.lowercase,
                )
            )
    ks = cfg.topk_list()
    report = probe_topk(model, vocab, probes, ks=ks, max_length=cfg["train.max_length"])
    header = "bucket\tmasked\toov" + "".join(f"\ttop-{k}" for k in ks)
    rows = [header]
    for bucket in BUCKET_NAMES:
        accs = "".join(f"\t{report['accuracy'][bucket][k]:.4f}" for k in ks)
        rows.append(f"{bucket}\t{report['total'][bucket]}\t{report['oov'][bucket]}{accs}")
    table = "\n".join(rows)
    print(table)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        cfg.echo_into(args.out)
        with open(os.path.join(args.out, "probe_report.tsv"), "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
        if not args.probes:
            save_probe_examples(probes, os.path.join(args.out, "probes.jsonl"))
    return 0


def cmd_eval_cloze(args) -> int:
    cfg = RunConfig.load(args.config, overrides=args.set)
    vocab = WordVocab.load(args.vocab)
    model = load_checkpoint(args.checkpoint).model
    items = load_cloze_items(args.items)
    acc = cloze_accuracy(model, vocab, items, max_length=cfg["train.max_length"])
    print(f"cloze accuracy {acc:.4f} over {len(items)} items")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        cfg.echo_into(args.out)
        with open(os.path.join(args.out, "cloze_report.tsv"), "w", encoding="utf-8") as fh:
            fh.write(f"items\t{len(items)}\naccuracy\t{acc!r}\n")
    return 0


def cmd_eval_tag(args) -> int:
    gold = load_tagged_sequences(args.gold)
    pred = load_tagged_sequences(args.pred)
    if len(gold) != len(pred):
        raise WordlmError(f"gold has {len(gold)} sequences, pred has {len(pred)}")
    p, r, f1 = tag_f1(
        [t.gold_labels for t in pred], [t.gold_labels for t in gold], mode=args.mode
    )
    print(f"precision {p:.4f}\trecall {r:.4f}\tf1 {f1:.4f} ({args.mode} mode, {len(gold)} sequences)")
    return 0


def cmd_eval_span(args) -> int:
    import json

    golds = load_span_items(args.gold)
    preds = []
    with open(args.pred, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                preds.append((obj["start"], obj["end"]))
    if len(golds) != len(preds):
        raise WordlmError(f"gold has {len(golds)} items, pred has {len(preds)}")
    ems, f1s = [], []
    for item, pred in zip(golds, preds):
        item.validate()
        # gold word spans shift +1 into encoded positions ([CLS] at 0)
        shifted = [(s + 1, e + 1) for s, e in item.gold_spans]
        em, f1 = span_em_f1(pred, shifted)
        ems.append(em)
        f1s.append(f1)
    print(f"em {np.mean(ems):.4f}\tf1 {np.mean(f1s):.4f} over {len(golds)} items")
    return 0


def cmd_inspect_checkpoint(args) -> int:
    info, payload = read_manifest(args.checkpoint)
    print(f"step {info['step']}")
    print(f"seed {info['seed']}")
    print(f"config_digest {info.get('digest', '-')}")
    for key, value in info["model_config"].items():
        print(f"model_config {key} {value}")
    total = 0
    for name in sorted(info["tensors"]):
        shape, _, length = info["tensors"][name]
        total += length
        print(f"tensor {name} f32 {'x'.join(map(str, shape))} {length} bytes")
    print(f"payload {total} bytes in {len(info['tensors'])} tensors")
    return 0


def cmd_param_count(args) -> int:
    cfg = RunConfig.load(args.config, overrides=args.set)
    counts = parameter_counts(cfg.model_config(args.vocab_size))
    for key in ("transformer", "embedding", "mlm_head", "total"):
        print(f"{key}\t{counts[key]}")
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch
# ---------------------------------------------------------------------------


def _add_config_args(sub):
    sub.add_argument("--config", help="key = value config file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wordlm",
        description="Word-level masked-language-model pretraining toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="count a corpus and write a top-K word vocabulary")
    p.add_argument("--corpus", required=True, help="UTF-8 text, one document per line")
    p.add_argument("--k", type=int, required=True, help="number of corpus words to keep")
    p.add_argument("--out", required=True, help="vocabulary file to write")
    p.add_argument("--no-lowercase", action="store_true")
    p.set_defaults(fn=cmd_build_vocab)

    p = sub.add_parser("pretrain-projection",
                       help="fit the source->hidden linear map on overlapping-word vector pairs")
    p.add_argument("--pairs", required=True, help="npz with arrays v_in [N,E] and v_out [N,H]")
    p.add_argument("--out", required=True, help="npz to write (array 'projection')")
    p.add_argument("--lr", type=float, default=100.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_pretrain_projection)

    p = sub.add_parser("pretrain", help="run MLM pretraining")
    _add_config_args(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--steps", type=int, help="run only this many steps")
    p.add_argument("--word-vectors", help="npz with array 'vectors' (projected variant)")
    p.add_argument("--projection", help="npz with array 'projection' (projected variant)")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("probe", help="frequency-stratified zero-shot masked-word probing",
                       epilog=_PROBE_EXAMPLE)
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--probes", help="prebuilt probe JSONL")
    p.add_argument("--corpus", help="build probes from this corpus instead")
    p.add_argument("--ref-corpus", help="reference corpus for frequencies (default: --corpus)")
    p.add_argument("--out", help="optional output directory")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("eval-cloze", help="score 4-option cloze items", epilog=_CLOZE_EXAMPLE)
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--items", required=True)
    p.add_argument("--out", help="optional output directory")
    p.set_defaults(fn=cmd_eval_cloze)

    p = sub.add_parser("eval-tag", help="sequence-labeling P/R/F1", epilog=_TAG_EXAMPLE)
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--mode", choices=("span", "token"), default="span")
    p.set_defaults(fn=cmd_eval_tag)

    p = sub.add_parser("eval-span", help="span-extraction EM/F1", epilog=_SPAN_EXAMPLE)
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.set_defaults(fn=cmd_eval_span)

    p = sub.add_parser("inspect-checkpoint", help="print a checkpoint manifest")
    p.add_argument("checkpoint")
    p.set_defaults(fn=cmd_inspect_checkpoint)

    p = sub.add_parser("param-count", help="analytic parameter accounting for a config")
    _add_config_args(p)
    p.add_argument("--vocab-size", type=int, required=True)
    p.set_defaults(fn=cmd_param_count)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        for violation in err.violations:
            print(f"wordlm: config error: {violation}", file=sys.stderr)
        return 3
    except WordlmError as err:
        print(f"wordlm: error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"wordlm: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
