"""Slot-parallel encoder-decoder over the autograd substrate.

The encoder is a pre-layer-norm transformer with learned bucketed relative
position biases (no absolute positions). The decoder runs N parallel slots:
all slots share weights, attend causally within their own prefix only
(block-diagonal self-attention over the flattened slot-by-step layout),
and attend freely over the encoder states. Slot inputs add a slot-periodic
sinusoidal step embedding and a per-slot control row; a control row is the
slot's learned code plus the summed token embeddings of its guidance
keyword, which is what lets two slots with the same code specialize.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .params import Initializer, ParamStore
from .corpus import KeywordSpan, spans_from_bio

ENCODER_PREFIXES = ("enc.", "kwe.")
DECODER_PREFIXES = ("dec.", "kg.")


@dataclass(slots=True)
class ModelConfig:
    vocab_size: int = 0
    d: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_slots: int = 8  # N, half present group / half absent group
    assign_steps: int = 2  # free-running prefix length used for assignment
    n_control_keywords: int = 3  # keywords routed to leading slots of each group
    max_kp_len: int = 8  # decoding horizon per slot
    rpe_buckets: int = 32
    rpe_max_distance: int = 128
    ffn_width: int = 256
    max_encode_len: int = 256
    use_keyword_control: bool = True

    def __post_init__(self):
        if self.d % 2 or self.d % self.n_heads:
            raise ValueError("d must be even and divisible by n_heads")
        if self.n_slots % 2:
            raise ValueError("n_slots must be even")
        if self.n_control_keywords >= self.n_slots // 2:
            raise ValueError("n_control_keywords must be smaller than the group size")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ------------------------------------------------------------ positions


def ape_vector(t: int, d: int) -> np.ndarray:
    """Sinusoidal step embedding: even dims sin(t/10000^(2i/d)), odd cos."""
    i = np.arange(d // 2, dtype=np.float64)
    freq = np.power(10000.0, 2.0 * i / d)
    v = np.empty(d, dtype=np.float64)
    v[0::2] = np.sin(t / freq)
    v[1::2] = np.cos(t / freq)
    return v


@functools.lru_cache(maxsize=None)
def _ape_rows(T: int, d: int) -> np.ndarray:
    """Rows for steps 1..T (the step-t input carries position t)."""
    return np.stack([ape_vector(t, d) for t in range(1, T + 1)])


def dope_rpe_bucket(
    u: int, v: int, n_buckets: int = 32, max_distance: int = 128, bidirectional: bool = True
) -> int:
    """Bucket index for the offset v-u.

    Half the buckets cover exact small offsets, the rest grow
    logarithmically out to max_distance; everything farther shares the
    terminal bucket. Bidirectional splits the range by sign; the
    unidirectional variant buckets only non-positive offsets (a query
    looking back at its own prefix).
    """
    rel = v - u
    if bidirectional:
        num = n_buckets // 2
        base = num if rel > 0 else 0
        rel = abs(rel)
    else:
        num = n_buckets
        base = 0
        rel = max(-rel, 0)
    max_exact = num // 2
    if rel < max_exact:
        val = rel
    else:
        val = max_exact + int(
            math.log(rel / max_exact) / math.log(max_distance / max_exact) * (num - max_exact)
        )
        val = min(val, num - 1)
    return base + val


@functools.lru_cache(maxsize=None)
def _encoder_buckets(S: int, n_buckets: int, max_distance: int) -> np.ndarray:
    out = np.empty((S, S), dtype=np.intp)
    for i in range(S):
        for j in range(S):
            out[i, j] = dope_rpe_bucket(i, j, n_buckets, max_distance, bidirectional=True)
    return out


@functools.lru_cache(maxsize=None)
def _decoder_buckets(n_slots: int, T: int, n_buckets: int, max_distance: int) -> np.ndarray:
    """Flattened (N*T, N*T) bucket ids; cross-slot cells are masked anyway."""
    per_step = np.empty((T, T), dtype=np.intp)
    for t in range(T):
        for u in range(T):
            per_step[t, u] = dope_rpe_bucket(t, u, n_buckets, max_distance, bidirectional=False)
    out = np.zeros((n_slots * T, n_slots * T), dtype=np.intp)
    for n in range(n_slots):
        sl = slice(n * T, (n + 1) * T)
        out[sl, sl] = per_step
    return out


@functools.lru_cache(maxsize=None)
def _slot_causal_mask(n_slots: int, T: int) -> np.ndarray:
    """0 within a slot's causal prefix, -inf everywhere else."""
    mask = np.full((n_slots * T, n_slots * T), -np.inf)
    tri = np.triu(np.full((T, T), -np.inf), k=1)
    for n in range(n_slots):
        sl = slice(n * T, (n + 1) * T)
        mask[sl, sl] = tri
    return mask


# ---------------------------------------------------------------- the model


class Model:
    """Parameter container plus forward passes; no training state."""

    def __init__(self, cfg: ModelConfig, store: ParamStore):
        self.cfg = cfg
        self.store = store

    @classmethod
    def fresh(cls, cfg: ModelConfig, seed: int) -> "Model":
        store = ParamStore()
        init = Initializer(store, seed)
        d, V = cfg.d, cfg.vocab_size

        init.embedding("enc.emb", (V, d))
        for h in range(cfg.n_heads):
            init.embedding(f"enc.rpe.h{h}", (cfg.rpe_buckets,))
        for i in range(cfg.n_enc_layers):
            p = f"enc.L{i}."
            init.ones(p + "ln1.g", (d,)); init.zeros(p + "ln1.b", (d,))
            for w in ("wq", "wk", "wv", "wo"):
                init.projection(p + w, d, d)
            init.ones(p + "ln2.g", (d,)); init.zeros(p + "ln2.b", (d,))
            init.projection(p + "w1", d, cfg.ffn_width)
            init.zeros(p + "b1", (cfg.ffn_width,))
            init.projection(p + "w2", cfg.ffn_width, d)
            init.zeros(p + "b2", (d,))
        init.ones("enc.final.g", (d,)); init.zeros("enc.final.b", (d,))

        init.projection("kwe.w", d, 3)
        init.zeros("kwe.b", (3,))

        init.embedding("dec.emb", (V, d))
        init.embedding("dec.ctrl", (cfg.n_slots, d))
        for h in range(cfg.n_heads):
            init.embedding(f"dec.rpe.h{h}", (cfg.rpe_buckets,))
        for i in range(cfg.n_dec_layers):
            p = f"dec.L{i}."
            init.ones(p + "ln1.g", (d,)); init.zeros(p + "ln1.b", (d,))
            for w in ("wq", "wk", "wv", "wo"):
                init.projection(p + w, d, d)
            init.ones(p + "ln2.g", (d,)); init.zeros(p + "ln2.b", (d,))
            for w in ("cq", "ck", "cv", "co"):
                init.projection(p + w, d, d)
            init.ones(p + "ln3.g", (d,)); init.zeros(p + "ln3.b", (d,))
            init.projection(p + "w1", d, cfg.ffn_width)
            init.zeros(p + "b1", (cfg.ffn_width,))
            init.projection(p + "w2", cfg.ffn_width, d)
            init.zeros(p + "b2", (d,))
        init.ones("dec.final.g", (d,)); init.zeros("dec.final.b", (d,))

        init.projection("kg.w", d, V)
        init.zeros("kg.b", (V,))
        return cls(cfg, store)

    def encoder_params(self) -> dict[str, Tensor]:
        return self.store.subset(ENCODER_PREFIXES)

    def decoder_params(self) -> dict[str, Tensor]:
        return self.store.subset(DECODER_PREFIXES)

    # ------------------------------------------------------------- encoder

    def _ln(self, x: Tensor, prefix: str) -> Tensor:
        return ag.layer_norm(x, self.store[prefix + ".g"], self.store[prefix + ".b"])

    def _ffn(self, x: Tensor, p: str) -> Tensor:
        h = ag.add(ag.matmul(x, self.store[p + "w1"]), self.store[p + "b1"])
        return ag.add(ag.matmul(ag.relu(h), self.store[p + "w2"]), self.store[p + "b2"])

    def encode(self, token_ids: list[int], attn_sink: list | None = None) -> Tensor:
        """(S,) token ids -> (S, d) contextual states."""
        cfg = self.cfg
        S = len(token_ids)
        if S < 1:
            raise ValueError("cannot encode an empty sequence")
        if S > cfg.max_encode_len:
            raise ValueError(f"input of {S} tokens exceeds max_encode_len={cfg.max_encode_len}")
        ids = np.asarray(token_ids, dtype=np.intp)
        buckets = _encoder_buckets(S, cfg.rpe_buckets, cfg.rpe_max_distance)
        biases = [ag.gather(self.store[f"enc.rpe.h{h}"], buckets) for h in range(cfg.n_heads)]
        inv_scale = 1.0 / math.sqrt(cfg.d)

        x = ag.gather(self.store["enc.emb"], ids)
        for i in range(cfg.n_enc_layers):
            p = f"enc.L{i}."
            h = self._ln(x, p + "ln1")
            att = ag.multi_head_attention(
                ag.matmul(h, self.store[p + "wq"]),
                ag.matmul(h, self.store[p + "wk"]),
                ag.matmul(h, self.store[p + "wv"]),
                biases, cfg.n_heads, inv_scale,
                weights_out=attn_sink,
            )
            x = ag.add(x, ag.matmul(att, self.store[p + "wo"]))
            x = ag.add(x, self._ffn(self._ln(x, p + "ln2"), p))
        return self._ln(x, "enc.final")

    def kwe_probs(self, states: Tensor) -> Tensor:
        """(S,d) -> (S,3) tag distribution (O/B/I) per token."""
        logits = ag.add(ag.matmul(states, self.store["kwe.w"]), self.store["kwe.b"])
        return ag.softmax(logits, axis=-1)

    def predict_keywords(
        self, tag_probs: np.ndarray, segment: list[str], limit: int | None = None
    ) -> list[KeywordSpan]:
        """Greedy tag decode to spans; confidence is the mean winning-tag
        probability over the span. Ranked by confidence, earliest start
        breaking ties; `limit` keeps the top spans only."""
        labels = tag_probs.argmax(axis=1).tolist()
        spans = []
        for start, end in spans_from_bio(segment, labels):
            conf = float(np.mean([tag_probs[i, labels[i]] for i in range(start, end)]))
            spans.append(KeywordSpan(tokens=segment[start:end], start=start, confidence=conf))
        spans.sort(key=lambda s: (-s.confidence, s.start))
        if limit is not None:
            spans = spans[:limit]
        return spans

    # ------------------------------------------------------------- decoder

    def control_rows(self, keyword_ids: list[list[int] | None]) -> Tensor:
        """Per-slot control row: learned slot code + summed keyword token
        embeddings (skipped when keyword control is disabled)."""
        cfg = self.cfg
        assert len(keyword_ids) == cfg.n_slots
        parts = []
        for n in range(cfg.n_slots):
            vec = ag.gather(self.store["dec.ctrl"], n)
            ids = keyword_ids[n]
            if ids and cfg.use_keyword_control:
                kw = ag.sum_rows(ag.gather(self.store["dec.emb"], np.asarray(ids, dtype=np.intp)))
                vec = ag.add(vec, kw)
            parts.append(vec)
        return ag.stack_rows(parts)

    def decode_probs(
        self,
        prev_ids: np.ndarray,
        control: Tensor,
        enc_states: Tensor,
        attn_sink: list | None = None,
    ) -> Tensor:
        """Teacher-input decode: prev_ids (N, T) holds w^{t-1} per slot/step.

        Returns (N*T, vocab) next-token distributions; row n*T + t is slot
        n's distribution for step t+1.
        """
        cfg = self.cfg
        N, T = prev_ids.shape
        assert N == cfg.n_slots
        flat_prev = prev_ids.reshape(-1).astype(np.intp)
        slot_of_row = np.repeat(np.arange(N, dtype=np.intp), T)
        ape = Tensor(np.tile(_ape_rows(T, cfg.d), (N, 1)))

        x = ag.add(
            ag.add(ag.gather(self.store["dec.emb"], flat_prev), ape),
            ag.gather(control, slot_of_row),
        )

        mask = _slot_causal_mask(N, T)
        buckets = _decoder_buckets(N, T, cfg.rpe_buckets, cfg.rpe_max_distance)
        biases = [ag.gather(self.store[f"dec.rpe.h{h}"], buckets) for h in range(cfg.n_heads)]
        inv_scale = 1.0 / math.sqrt(cfg.d)

        for i in range(cfg.n_dec_layers):
            p = f"dec.L{i}."
            h = self._ln(x, p + "ln1")
            att = ag.multi_head_attention(
                ag.matmul(h, self.store[p + "wq"]),
                ag.matmul(h, self.store[p + "wk"]),
                ag.matmul(h, self.store[p + "wv"]),
                biases, cfg.n_heads, inv_scale, mask=mask,
                weights_out=attn_sink,
            )
            x = ag.add(x, ag.matmul(att, self.store[p + "wo"]))
            h = self._ln(x, p + "ln2")
            catt = ag.multi_head_attention(
                ag.matmul(h, self.store[p + "cq"]),
                ag.matmul(enc_states, self.store[p + "ck"]),
                ag.matmul(enc_states, self.store[p + "cv"]),
                None, cfg.n_heads, inv_scale,
            )
            x = ag.add(x, ag.matmul(catt, self.store[p + "co"]))
            x = ag.add(x, self._ffn(self._ln(x, p + "ln3"), p))
        x = self._ln(x, "dec.final")
        logits = ag.add(ag.matmul(x, self.store["kg.w"]), self.store["kg.b"])
        return ag.softmax(logits, axis=-1)
