"""Flat run configuration: defaults < config file < environment < flags."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .training import TsmtConfig

ENV_PREFIX = "SETKP_"


@dataclass
class RunConfig:
    # model
    d: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_slots: int = 8
    assign_steps: int = 2
    n_control_keywords: int = 3
    max_kp_len: int = 8
    rpe_buckets: int = 32
    rpe_max_distance: int = 128
    ffn_width: int = 256
    max_encode_len: int = 256
    use_keyword_control: bool = True
    # training
    epochs: int = 30
    e1: int = 10
    e2: int = 2
    lambda_null: float = 0.2
    lambda_kw: float = 0.7
    lambda_g: float = 1.0
    lr: float = 3e-4
    batch_size: int = 8
    weight_decay: float = 0.01
    use_keyword_padding: bool = True
    probe_docs: int = 4
    # pipeline
    seed: int = 0
    threads: int = 1
    n_docs: int = 64
    vocab_profile: str = "default"
    max_segment_tokens: int = 32  # one synthetic claim sentence per segment
    min_freq: int = 1

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            d=self.d,
            n_heads=self.n_heads,
            n_enc_layers=self.n_enc_layers,
            n_dec_layers=self.n_dec_layers,
            n_slots=self.n_slots,
            assign_steps=self.assign_steps,
            n_control_keywords=self.n_control_keywords,
            max_kp_len=self.max_kp_len,
            rpe_buckets=self.rpe_buckets,
            rpe_max_distance=self.rpe_max_distance,
            ffn_width=self.ffn_width,
            max_encode_len=self.max_encode_len,
            use_keyword_control=self.use_keyword_control,
        )

    def train_config(self) -> TsmtConfig:
        return TsmtConfig(
            epochs=self.epochs,
            e1=self.e1,
            e2=self.e2,
            lambda_null=self.lambda_null,
            lambda_kw=self.lambda_kw,
            lambda_g=self.lambda_g,
            lr=self.lr,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            seed=self.seed,
            use_keyword_padding=self.use_keyword_padding,
            probe_docs=self.probe_docs,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str):
    t = _FIELD_TYPES[key]
    if t in ("bool", bool):
        low = raw.strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ValueError(f"{key}: {raw!r} is not a boolean")
    if t in ("int", int):
        return int(raw)
    if t in ("float", float):
        return float(raw)
    return raw.strip()


def parse_config_file(path: str | Path) -> dict:
    """key = value lines; '#' comments; unknown keys are errors."""
    out = {}
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{ln}: unknown key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def env_overrides(environ=None) -> dict:
    env = os.environ if environ is None else environ
    out = {}
    for key in _FIELD_TYPES:
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            out[key] = _coerce(key, raw)
    return out


def load_run_config(config_path: str | Path | None = None,
                    flag_overrides: dict | None = None,
                    environ=None) -> RunConfig:
    """Merge the four layers in precedence order."""
    merged: dict = {}
    if config_path is not None:
        merged.update(parse_config_file(config_path))
    merged.update(env_overrides(environ))
    if flag_overrides:
        merged.update({k: v for k, v in flag_overrides.items() if v is not None})
    return RunConfig(**merged)
