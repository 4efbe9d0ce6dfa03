"""Flat key=value run configuration shared by all pipeline commands.

A config file is plain text: one `key = value` per line, `#` comments,
unknown keys rejected. Command-line flags override file values, and every
command dumps the merged configuration next to its outputs so a run can be
reproduced from the dump alone. Relative paths are resolved against the
config file's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .corpus import CorpusSpec

__all__ = ["RunConfig", "load_config", "dump_config", "corpus_spec_from"]


@dataclass(frozen=True)
class RunConfig:
    # global
    seed: int = 0
    out_dir: str = "runs"
    # corpus
    vocab_size: int = 20
    motif_count: int = 4
    motif_len_min: int = 4
    motif_len_max: int = 6
    length_min: int = 20
    length_max: int = 60
    malware_fraction: float = 0.7
    corpus_size: int = 2000
    label_noise: float = 0.0
    truncate_len: int = 200
    split_seed: int = 0
    # victims
    victims: str = "LSTM,BiLSTM,LSTM-Average,BiLSTM-Average,LSTM-Attention,BiLSTM-Attention"
    victim_hidden: int = 128
    attn_hidden: int = 128
    victim_lr: float = 0.001
    victim_epochs: int = 60
    victim_patience: int = 8
    victim_batch: int = 16
    # attack
    gen_hidden: int = 128
    sub_hidden: int = 128
    temp: float = 10.0
    gamma: float = 0.1
    insert_len: int = 1
    attack_lr_gen: float = 0.001
    attack_lr_sub: float = 0.001
    attack_epochs: int = 100
    attack_patience: int = 10
    attack_batch_malware: int = 16
    attack_batch_benign: int = 8

    def victim_names(self) -> list[str]:
        return [v.strip() for v in self.victims.split(",") if v.strip()]


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_config(path) -> RunConfig:
    """Parse a config file; unknown keys are hard errors."""
    values = {}
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, raw = text.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or not key:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            if key not in _FIELDS:
                raise ValueError(f"{path}: line {lineno}: unknown key {key!r}")
            try:
                values[key] = _coerce(key, raw)
            except ValueError as err:
                raise ValueError(f"{path}: line {lineno}: bad value for {key}: {err}") from err
    cfg = RunConfig(**values)
    if "out_dir" in values and not os.path.isabs(cfg.out_dir):
        base = os.path.dirname(os.path.abspath(path))
        cfg = replace(cfg, out_dir=os.path.join(base, cfg.out_dir))
    return cfg


def apply_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Flags win over file values; None means the flag was not given."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    unknown = set(updates) - set(_FIELDS)
    if unknown:
        raise ValueError(f"unknown config overrides: {sorted(unknown)}")
    return replace(cfg, **updates) if updates else cfg


def dump_config(cfg: RunConfig, path) -> None:
    """Write the effective configuration; re-running from it reproduces results."""
    with open(path, "w", encoding="ascii") as fh:
        for f in fields(RunConfig):
            value = getattr(cfg, f.name)
            if f.name == "out_dir":
                value = os.path.abspath(value)
            fh.write(f"{f.name} = {value}\n")


def corpus_spec_from(cfg: RunConfig) -> CorpusSpec:
    return CorpusSpec(
        vocab_size=cfg.vocab_size,
        motif_count=cfg.motif_count,
        motif_len_min=cfg.motif_len_min,
        motif_len_max=cfg.motif_len_max,
        length_min=cfg.length_min,
        length_max=cfg.length_max,
        malware_fraction=cfg.malware_fraction,
        size=cfg.corpus_size,
        label_noise=cfg.label_noise,
        seed=cfg.seed,
    )
