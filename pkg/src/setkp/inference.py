"""Greedy slot decoding, prediction filtering, and multi-level portraits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor, no_grad
from .corpus import (
    KeywordSpan,
    MultiLevelDocument,
    Vocabulary,
    derive_keywords,
    tokenize,
)
from .metrics import stem_tokens
from .model import Model
from .training import control_ids_for

PROMPT_PREFIX = "keyphrases from higher-level: "
PROMPT_INFIX = " [sep] find keyphrases from: "


@dataclass(slots=True)
class SlotPrediction:
    """One decoded slot: surface tokens, null flag, slot group, mean token prob."""

    tokens: list[str]
    is_null: bool
    group: str  # "present" | "absent", by slot half
    confidence: float
    slot: int

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def generate_slots(
    model: Model,
    vocab: Vocabulary,
    enc_states: Tensor,
    control: Tensor,
    max_len: int | None = None,
) -> list[SlotPrediction]:
    """Decode every slot greedily from BOS until EOS or ``max_len`` steps.

    A slot is null iff its first emitted token is the null marker; confidence
    is the mean probability of its emitted tokens. Returns slot order.
    """
    cfg = model.cfg
    m = max_len if max_len is not None else cfg.max_kp_len
    n = cfg.n_slots
    half = n // 2

    with no_grad():
        prev = np.full((n, 1), vocab.bos_id, dtype=np.intp)
        done = np.zeros(n, dtype=bool)
        emitted: list[list[int]] = [[] for _ in range(n)]
        probs: list[list[float]] = [[] for _ in range(n)]
        for t in range(m):
            p = model.decode_probs(prev, control, enc_states).data
            step = p.reshape(n, t + 1, -1)[:, t, :]
            choice = step.argmax(axis=1)
            for i in range(n):
                if done[i]:
                    choice[i] = vocab.eos_id
                    continue
                tok = int(choice[i])
                if tok == vocab.eos_id:
                    done[i] = True
                else:
                    emitted[i].append(tok)
                    probs[i].append(float(step[i, tok]))
            if done.all():
                break
            prev = np.concatenate([prev, choice[:, None].astype(np.intp)], axis=1)

    out = []
    for i in range(n):
        toks = emitted[i]
        is_null = bool(toks) and toks[0] == vocab.null_id
        words = [vocab.tokens[t] for t in toks if t != vocab.null_id]
        conf = float(np.mean(probs[i])) if probs[i] else 0.0
        out.append(SlotPrediction(
            tokens=words,
            is_null=is_null,
            group="present" if i < half else "absent",
            confidence=conf,
            slot=i,
        ))
    return out


def filter_predictions(
    slots: list[SlotPrediction],
    padding_keywords: list[list[str]] | None = None,
) -> list[SlotPrediction]:
    """Null/empty removal, padding-keyword elimination, stem dedup.

    ``padding_keywords`` drops predictions token-identical to any listed
    span. Stem-level duplicates keep the highest-confidence instance;
    output is confidence-descending.
    """
    kept = [s for s in slots if not s.is_null and s.tokens]
    if padding_keywords:
        banned = {tuple(sp) for sp in padding_keywords}
        kept = [s for s in kept if tuple(s.tokens) not in banned]
    kept.sort(key=lambda s: (-s.confidence, s.slot))
    seen: set[tuple[str, ...]] = set()
    out = []
    for s in kept:
        key = tuple(stem_tokens(s.tokens))
        if key in seen:
            continue
        seen.add(key)
        out.append(s)
    return out


def padding_keyword_spans(doc: MultiLevelDocument) -> list[list[str]]:
    """Document-level padding-keyword pool for evaluation-time elimination:
    keyword spans shared with the present keyphrases, minus spans equal to a
    keyphrase itself (those are legitimate predictions)."""
    present, _ = doc.keyphrase_tokens()
    exact = {tuple(p) for p in present}
    spans = derive_keywords(doc.all_tokens(), present)
    return [sp.tokens for sp in spans if tuple(sp.tokens) not in exact]


def extract_keywords(model: Model, vocab: Vocabulary, tokens: list[str],
                     limit: int | None = None) -> list[KeywordSpan]:
    """Run the tag head over raw tokens and decode spans (confidence order)."""
    ids = vocab.encode(tokens)[: model.cfg.max_encode_len]
    toks = tokens[: model.cfg.max_encode_len]
    with no_grad():
        states = model.encode(ids)
        tag_probs = model.kwe_probs(states).data
    return model.predict_keywords(tag_probs, toks, limit)


def generate_for_tokens(
    model: Model,
    vocab: Vocabulary,
    tokens: list[str],
    keyword_spans: list[KeywordSpan] | None = None,
) -> tuple[list[SlotPrediction], list[KeywordSpan]]:
    """Single-input path: extract keywords, condition the slots, decode.

    ``keyword_spans`` overrides extraction (used when the conditioning
    keywords come from a different token stream than the encoder input).
    Returns (raw slot outputs, keyword spans); filtering is the caller's job.
    """
    cfg = model.cfg
    ids = vocab.encode(tokens)[: cfg.max_encode_len]
    spans = keyword_spans if keyword_spans is not None else extract_keywords(model, vocab, tokens)
    with no_grad():
        enc = model.encode(ids)
        control = model.control_rows(control_ids_for(spans, cfg, vocab))
        slots = generate_slots(model, vocab, enc, control)
    return slots, spans


# ---------------------------------------------------------------------------
# multi-level portraits


@dataclass(slots=True)
class PortraitEntry:
    """One kept keyphrase with the level and slot group it came from."""

    tokens: list[str]
    level: int
    group: str
    confidence: float

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(slots=True)
class LevelRecord:
    """Everything one level saw and produced, kept for inspection."""

    level: int
    prompt_text: str
    prompt_phrases: list[str]
    keyword_spans: list[list[str]]
    raw_predictions: list[SlotPrediction]
    kept: list[PortraitEntry]


@dataclass(slots=True)
class Portrait:
    doc_id: str
    entries: list[PortraitEntry]
    levels: list[LevelRecord] = field(default_factory=list)

    def tokens_for_levels(self, levels: set[int] | None = None) -> list[str]:
        """Flat token stream, ';' between entries, optionally restricted to
        entries that originated at the given levels."""
        out: list[str] = []
        for e in self.entries:
            if levels is not None and e.level not in levels:
                continue
            if out:
                out.append(";")
            out.extend(e.tokens)
        return out


def build_prompt(phrases: list[str], body: str) -> str:
    """Conditioning prefix + body; deeper levels pass the previous level's
    kept phrases, level 1 passes its own extracted keywords."""
    return PROMPT_PREFIX + ", ".join(phrases) + PROMPT_INFIX + body


def prompt_tokens(phrases: list[str], body_tokens: list[str],
                  max_len: int) -> tuple[list[str], str]:
    """Tokenized prompt, truncating the body (never the prefix) to fit."""
    text = build_prompt(phrases, " ".join(body_tokens))
    toks = tokenize(text)
    if len(toks) <= max_len:
        return toks, text
    head = tokenize(build_prompt(phrases, ""))
    kept_body = body_tokens[: max(max_len - len(head), 0)]
    text = build_prompt(phrases, " ".join(kept_body))
    return head + kept_body, text


def document_portrait(
    model: Model,
    vocab: Vocabulary,
    doc: MultiLevelDocument,
    max_levels: int | None = None,
    padding_keywords: list[list[str]] | None = None,
) -> Portrait:
    """Walk the document's levels top-down, prompting each level with the
    phrases kept at the one above, deduplicating across levels by stem
    (earliest level wins).

    Level 1's prompt seeds from its own extracted keyword spans (source
    order). The same spans condition the slots, since the prompt body is the
    level's text. Per-level prompts, spans, raw slots, and kept entries land
    in ``levels``.
    """
    cfg = model.cfg
    segments = doc.segments if max_levels is None else doc.segments[:max_levels]
    if not segments:
        raise ValueError(f"document {doc.doc_id} has no segments")

    seen_stems: set[tuple[str, ...]] = set()
    entries: list[PortraitEntry] = []
    records: list[LevelRecord] = []
    prev_phrases: list[str] = []

    for li, seg in enumerate(segments):
        body = seg.tokens
        spans = extract_keywords(model, vocab, body)
        if li == 0:
            in_order = sorted(spans, key=lambda s: s.start)
            phrases = list(dict.fromkeys(" ".join(sp.tokens) for sp in in_order))
        else:
            phrases = prev_phrases
        toks, text = prompt_tokens(phrases, body, cfg.max_encode_len)

        slots, _ = generate_for_tokens(model, vocab, toks, keyword_spans=spans)
        kept_preds = filter_predictions(slots, padding_keywords=padding_keywords)

        kept_here: list[PortraitEntry] = []
        for p in kept_preds:
            key = tuple(stem_tokens(p.tokens))
            if key in seen_stems:
                continue
            seen_stems.add(key)
            e = PortraitEntry(tokens=p.tokens, level=seg.level,
                              group=p.group, confidence=p.confidence)
            kept_here.append(e)
            entries.append(e)

        records.append(LevelRecord(
            level=seg.level,
            prompt_text=text,
            prompt_phrases=list(phrases),
            keyword_spans=[sp.tokens for sp in spans],
            raw_predictions=slots,
            kept=kept_here,
        ))
        prev_phrases = [e.text for e in kept_here]

    return Portrait(doc_id=doc.doc_id, entries=entries, levels=records)


# ---------------------------------------------------------------------------
# serialization


def portrait_to_dict(p: Portrait, inspect: bool = True) -> dict:
    d = {
        "id": p.doc_id,
        "keyphrases": [
            {"text": e.text, "level": e.level, "group": e.group,
             "confidence": round(e.confidence, 6)}
            for e in p.entries
        ],
    }
    if inspect and p.levels:
        d["levels"] = [
            {
                "level": r.level,
                "prompt_text": r.prompt_text,
                "prompt_phrases": r.prompt_phrases,
                "keyword_spans": r.keyword_spans,
                "kept": [e.text for e in r.kept],
            }
            for r in p.levels
        ]
    return d


def portrait_from_dict(d: dict) -> Portrait:
    entries = [
        PortraitEntry(tokens=e["text"].split(), level=int(e["level"]),
                      group=e.get("group", "present"),
                      confidence=float(e.get("confidence", 0.0)))
        for e in d["keyphrases"]
    ]
    levels = [
        LevelRecord(level=int(r["level"]), prompt_text=r["prompt_text"],
                    prompt_phrases=list(r["prompt_phrases"]),
                    keyword_spans=[list(s) for s in r["keyword_spans"]],
                    raw_predictions=[], kept=[])
        for r in d.get("levels", [])
    ]
    return Portrait(doc_id=d["id"], entries=entries, levels=levels)


def save_portraits(path, portraits: list[Portrait], inspect: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in portraits:
            fh.write(json.dumps(portrait_to_dict(p, inspect), sort_keys=True) + "\n")


def load_portraits(path) -> list[Portrait]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(portrait_from_dict(json.loads(line)))
    return out


def save_predictions(path, rows: list[dict]) -> None:
    """One JSON object per document (doc id, slot outputs, kept phrases)."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def load_predictions(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
