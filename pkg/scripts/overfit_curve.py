"""Train on the synthetic corpus and print the training-set F1 curve.

Usage: python scripts/overfit_curve.py [--n-docs 64] [--epochs 30] [--every 5]
The final block dumps one document's raw slot outputs per level for eyeballing.
"""

import argparse
import time

import numpy as np

from setkp import inference, metrics
from setkp.corpus import Vocabulary
from setkp.model import Model, ModelConfig
from setkp.synth import synth_corpus
from setkp.training import TsmtConfig, tsmt_train


def corpus_f1(model, vocab, docs):
    """Mean per-document (present F1@M, absent F1@M, null ratio, duplication)."""
    pres, abse, nulls, dups = [], [], [], []
    for d in docs:
        merged = {}
        outs = []
        for seg in d.segments:
            slots, _ = inference.generate_for_tokens(model, vocab, seg.tokens)
            outs.extend((s.tokens, s.is_null) for s in slots)
            for s in inference.filter_predictions(slots):
                key = metrics.stem_tokens(s.tokens)
                if key not in merged or s.confidence > merged[key][0]:
                    merged[key] = (s.confidence, s.tokens)
        ranked = [t for _, t in sorted(merged.values(), key=lambda cv: -cv[0])]
        preds = metrics.drop_exact(ranked, inference.padding_keyword_spans(d))
        present, absent = d.keyphrase_tokens()
        pp, pa = metrics.split_by_source(preds, d.all_tokens())
        pres.append(metrics.f1_at_m(pp, present)[2])
        abse.append(metrics.f1_at_m(pa, absent)[2])
        nulls.append(metrics.null_ratio(outs))
        dups.append(metrics.duplication_ratio(outs))
    return tuple(float(np.mean(v)) for v in (pres, abse, nulls, dups))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-docs", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=TsmtConfig().epochs)
    ap.add_argument("--e1", type=int, default=TsmtConfig().e1)
    ap.add_argument("--every", type=int, default=5, help="probe every k epochs")
    ap.add_argument("--corpus-seed", type=int, default=0)
    ap.add_argument("--model-seed", type=int, default=0)
    args = ap.parse_args()

    docs = synth_corpus(args.corpus_seed, args.n_docs)
    vocab = Vocabulary.build(docs)
    model = Model.fresh(ModelConfig(vocab_size=len(vocab)), seed=args.model_seed)
    print(f"{args.n_docs} docs, vocab {len(vocab)}, {args.epochs} epochs (e1={args.e1})")

    t0 = time.time()
    state = {"epoch": 0}

    def probe(m):
        state["epoch"] += 1
        ep = state["epoch"]
        if ep % args.every == 0 or ep == args.epochs:
            p, a, nl, dp = corpus_f1(m, vocab, docs)
            print(f"epoch {ep:3d}  t={time.time() - t0:6.1f}s  presentF1={p:.3f} "
                  f"absentF1={a:.3f}  null={nl:.2f} dup={dp:.2f}", flush=True)
        return 0.0, 0.0

    tcfg = TsmtConfig(epochs=args.epochs, e1=args.e1, probe_docs=0)
    tsmt_train(model, docs, tcfg, vocab, probe_fn=probe)
    p, a, nl, dp = corpus_f1(model, vocab, docs)
    print(f"final presentF1={p:.3f} absentF1={a:.3f} null={nl:.2f} dup={dp:.2f} "
          f"({time.time() - t0:.0f}s)")

    d = docs[0]
    present, absent = d.keyphrase_tokens()
    print(f"\n{d.doc_id}: present={present} absent={absent}")
    for seg in d.segments:
        slots, _ = inference.generate_for_tokens(model, vocab, seg.tokens)
        print(f"  L{seg.level}:", [s.text if not s.is_null else "-" for s in slots])


if __name__ == "__main__":
    main()
