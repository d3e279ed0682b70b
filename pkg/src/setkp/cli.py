"""Command-line pipeline: corpus synthesis, training, generation, portraits,
evaluation, and portrait-based classification reports."""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor

from . import analysis, inference, metrics
from .config import RunConfig, load_run_config
from .corpus import Vocabulary, load_jsonl, save_jsonl
from .model import Model, ModelConfig
from .params import load_checkpoint
from .synth import distinct_word_count, synth_corpus
from .training import tsmt_train


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--threads", type=int, help="document fan-out width (default 1)")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="setkp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="emit a synthetic corpus JSONL")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-docs", type=int, help="documents to synthesize")
    p.add_argument("--vocab-profile", choices=["default", "small"])

    p = sub.add_parser("train", help="run the staged training schedule")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--loss-csv", help="per-epoch loss report")
    p.add_argument("--epochs", type=int)
    p.add_argument("--e1", type=int)
    p.add_argument("--e2", type=int)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("generate", help="per-segment slot generation")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("portrait", help="multi-level document portraits")
    _common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-levels", type=int)

    p = sub.add_parser("eval", help="score generation output against a corpus")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="per-document + macro CSV")

    p = sub.add_parser("analyze", help="portrait-based classification report")
    _common(p)
    p.add_argument("--portraits", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[*analysis.MODES, "all"], default="all")
    p.add_argument("--levels", help="comma-separated level subset, e.g. 1,2")
    return ap


def _run_config(args) -> RunConfig:
    flags = {"seed": getattr(args, "seed", None), "threads": getattr(args, "threads", None)}
    for key in ("n_docs", "vocab_profile", "epochs", "e1", "e2", "batch_size"):
        if hasattr(args, key):
            flags[key] = getattr(args, key)
    return load_run_config(args.config, flags)


def _load_model(ckpt_path: str) -> tuple[Model, Vocabulary, dict]:
    store, meta = load_checkpoint(ckpt_path)
    cfg = ModelConfig.from_dict(meta["model_config"])
    vocab = Vocabulary(meta["vocab"])
    return Model(cfg, store), vocab, meta


def _parse_levels(raw: str | None) -> set[int] | None:
    if raw is None:
        return None
    try:
        return {int(s) for s in raw.split(",") if s.strip()}
    except ValueError:
        raise ValueError(f"bad --levels value {raw!r}; expected e.g. 1,2")


def _fan_out(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def cmd_gen_corpus(args) -> int:
    rc = _run_config(args)
    docs = synth_corpus(rc.seed, rc.n_docs, rc.vocab_profile)
    save_jsonl(args.out, docs)
    print(f"wrote {len(docs)} documents, {distinct_word_count(docs)} distinct words -> {args.out}")
    return 0


def cmd_train(args) -> int:
    rc = _run_config(args)
    docs = load_jsonl(args.corpus, rc.max_segment_tokens)
    vocab = Vocabulary.build(docs, rc.min_freq)
    model = Model.fresh(rc.model_config(len(vocab)), rc.seed)
    tcfg = rc.train_config()

    probe_fn = None
    if rc.probe_docs > 0:
        probe_segs = [d.segments[0].tokens for d in docs[: rc.probe_docs]]

        def probe_fn(m):
            outs = []
            for toks in probe_segs:
                slots, _ = inference.generate_for_tokens(m, vocab, toks)
                outs.append([(s.tokens, s.is_null) for s in slots])
            nulls = [metrics.null_ratio(o) for o in outs]
            dups = [metrics.duplication_ratio(o) for o in outs]
            return float(sum(nulls) / len(nulls)), float(sum(dups) / len(dups))

    report = tsmt_train(model, docs, tcfg, vocab, checkpoint_path=args.out_ckpt,
                        probe_fn=probe_fn)
    if args.loss_csv:
        report.write_csv(args.loss_csv)
    last = report.rows[-1]
    print(f"trained {last.epoch} epochs ({last.stage}); extraction loss "
          f"{last.loss_kwe:.4f} -> {args.out_ckpt}")
    return 0


def _generate_doc(model, vocab, doc) -> dict:
    segs = []
    for seg in doc.segments:
        slots, _ = inference.generate_for_tokens(model, vocab, seg.tokens)
        kept = inference.filter_predictions(slots)
        segs.append({
            "level": seg.level,
            "slots": [
                {"text": s.text, "null": s.is_null, "group": s.group,
                 "confidence": round(s.confidence, 6)}
                for s in slots
            ],
            "kept": [
                {"text": s.text, "group": s.group, "confidence": round(s.confidence, 6)}
                for s in kept
            ],
        })
    return {"id": doc.doc_id, "segments": segs}


def cmd_generate(args) -> int:
    rc = _run_config(args)
    model, vocab, _ = _load_model(args.ckpt)
    docs = load_jsonl(args.corpus, rc.max_segment_tokens)
    rows = _fan_out(lambda d: _generate_doc(model, vocab, d), docs, rc.threads)
    inference.save_predictions(args.out, rows)
    print(f"generated for {len(rows)} documents -> {args.out}")
    return 0


def cmd_portrait(args) -> int:
    rc = _run_config(args)
    model, vocab, _ = _load_model(args.ckpt)
    docs = load_jsonl(args.corpus, rc.max_segment_tokens)

    def one(d):
        pads = inference.padding_keyword_spans(d) or None
        return inference.document_portrait(model, vocab, d, max_levels=args.max_levels,
                                           padding_keywords=pads)

    portraits = _fan_out(one, docs, rc.threads)
    inference.save_portraits(args.out, portraits)
    n = sum(len(p.entries) for p in portraits)
    print(f"built {len(portraits)} portraits ({n} keyphrases) -> {args.out}")
    return 0


def _eval_record(doc, row) -> metrics.EvalRecord:
    slot_outputs = []
    merged: dict[tuple[str, ...], tuple[float, list[str]]] = {}
    for seg in row["segments"]:
        for s in seg["slots"]:
            slot_outputs.append((s["text"].split(), bool(s["null"])))
        for k in seg["kept"]:
            toks = k["text"].split()
            key = metrics.stem_tokens(toks)
            if key not in merged or k["confidence"] > merged[key][0]:
                merged[key] = (k["confidence"], toks)
    ranked = [toks for _, toks in sorted(merged.values(), key=lambda cv: -cv[0])]
    preds = metrics.drop_exact(ranked, inference.padding_keyword_spans(doc))
    present, absent = doc.keyphrase_tokens()
    return metrics.EvalRecord(
        doc_id=doc.doc_id,
        predictions=preds,
        present_targets=present,
        absent_targets=absent,
        source_tokens=doc.all_tokens(),
        slot_outputs=slot_outputs,
    )


def cmd_eval(args) -> int:
    rc = _run_config(args)
    docs = {d.doc_id: d for d in load_jsonl(args.corpus, rc.max_segment_tokens)}
    rows = inference.load_predictions(args.predictions)
    records = []
    for row in rows:
        doc = docs.get(row["id"])
        if doc is None:
            raise ValueError(f"predictions reference unknown document {row['id']!r}")
        records.append(_eval_record(doc, row))
    per_doc, macro = metrics.evaluate(records)
    metrics.write_eval_csv(args.out, per_doc, macro)
    print(metrics.format_eval_table(macro))
    print(f"scored {len(records)} documents -> {args.out}")
    return 0


def cmd_analyze(args) -> int:
    rc = _run_config(args)
    docs = load_jsonl(args.corpus, rc.max_segment_tokens)
    portraits = {p.doc_id: p for p in inference.load_portraits(args.portraits)}
    missing = [d.doc_id for d in docs if d.doc_id not in portraits]
    if missing:
        raise ValueError(f"portraits missing for {len(missing)} documents, e.g. {missing[0]!r}")
    modes = list(analysis.MODES) if args.mode == "all" else [args.mode]
    levels = _parse_levels(args.levels)
    results = analysis.run_experiment(docs, portraits, modes, levels, rc.seed)
    analysis.write_analysis_csv(args.out, results)
    print(analysis.format_analysis_table(results))
    print(f"report -> {args.out}")
    return 0


_COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "train": cmd_train,
    "generate": cmd_generate,
    "portrait": cmd_portrait,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:  # one-line diagnostic, non-zero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
