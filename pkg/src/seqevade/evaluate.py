"""Metrics and report files: AUC, detection rates, transferability.

Pure functions over plain arrays; the only model interaction is through a
`score_sequences` method, so test doubles slot in freely. CSV emitters write
deterministic bytes (fixed column order, repr-formatted floats) so reruns
from one seed compare byte-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "auc",
    "detection_rate",
    "transfer_matrix",
    "AttackReport",
    "emit_victim_auc_csv",
    "emit_attack_report_csv",
    "emit_transfer_csv",
]


def auc(labels, scores) -> float:
    """Rank-based (Mann-Whitney) area under the ROC curve; ties count 1/2."""
    y = np.asarray(labels, dtype=np.int64)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError(f"labels {y.shape} and scores {s.shape} must be equal-length vectors")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    pos = int((y == 1).sum())
    neg = int((y == 0).sum())
    if pos == 0 or neg == 0:
        raise ValueError("auc needs both classes present")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - pos * (pos + 1) / 2.0) / (pos * neg))


def detection_rate(examples: list, victim, threshold: float = 0.5) -> float:
    """Fraction of (malware) sequences the model scores at or above threshold."""
    if len(examples) == 0:
        raise ValueError("detection_rate: empty example set")
    scores = victim.score_sequences(examples)
    return float(np.mean(scores >= threshold))


def transfer_matrix(generate_fns: list, victims: list, malware_seqs: list,
                    threshold: float = 0.5) -> np.ndarray:
    """Cross-model detection rates.

    Entry (i, j) is the detection rate of victim j on adversarial sequences
    produced by the generator trained against victim i. `generate_fns[i]`
    maps a list of sequences to their adversarial versions.
    """
    if len(victims) < 2:
        raise ValueError("transfer_matrix needs at least two victims")
    out = np.zeros((len(generate_fns), len(victims)))
    for i, gen in enumerate(generate_fns):
        adversarial = gen(malware_seqs)
        for j, victim in enumerate(victims):
            out[i, j] = detection_rate(adversarial, victim, threshold)
    return out


@dataclass
class AttackReport:
    """Detection rates around one attack run, plus insertion bookkeeping."""

    config: str
    original_train: float
    adversarial_train: float
    original_test: float
    adversarial_test: float
    length_inflation: float  # mean adversarial length / original length
    null_fraction: float  # mean fraction of generated symbols that were null

    def __post_init__(self):
        for name in ("original_train", "adversarial_train", "original_test", "adversarial_test"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def _write_rows(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([x if isinstance(x, str) else repr(float(x)) for x in row])


def emit_victim_auc_csv(rows: list[tuple[str, float, float]], path) -> None:
    """One row per victim: config name, training-set AUC, test-set AUC."""
    _write_rows(path, ["config", "train_auc", "test_auc"], [list(r) for r in rows])


def emit_attack_report_csv(reports: list[AttackReport], path) -> None:
    names = [f.name for f in fields(AttackReport)]
    _write_rows(path, names, [[getattr(r, n) for n in names] for r in reports])


def emit_transfer_csv(matrix: np.ndarray, victim_names: list[str], path) -> None:
    header = ["generator_vs_victim"] + list(victim_names)
    rows = [[name] + list(matrix[i]) for i, name in enumerate(victim_names)]
    _write_rows(path, header, rows)
