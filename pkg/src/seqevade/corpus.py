"""Synthetic API-sequence corpus with planted motifs, plus the split protocol.

Benign sequences are i.i.d. background symbols, rejection-sampled so that no
motif occurs by chance. Malware sequences embed one contiguous motif into the
same background at a random position. A plain substring scanner therefore
separates the classes perfectly on noise-free corpora, which establishes the
task is learnable before any model training; inserting symbols inside a motif
breaks its contiguity, which is exactly the weakness an insertion attack can
exploit.

The split protocol partitions a corpus five ways (attacker train/validation,
detector train/validation, shared test) by stratified assignment, so the
attacker and the detector never train on the same example.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CorpusSpec",
    "LabeledExample",
    "SplitSpec",
    "Split",
    "SUBSET_NAMES",
    "derive_motifs",
    "generate_corpus",
    "split",
    "save_corpus",
    "load_corpus",
    "save_split",
    "load_split",
    "scan_for_motifs",
    "subset_examples",
]


@dataclass(frozen=True)
class CorpusSpec:
    """Knobs for the generator; defaults give the standard 2000-example corpus.

    The defaults are tuned so that every classifier variant, including the
    weakest (forward last-state), genuinely trains to high AUC at desk-scale
    hidden sizes; vocabulary, motif count, lengths, and noise are the
    difficulty dial.
    """

    vocab_size: int = 20
    motif_count: int = 4
    motif_len_min: int = 4
    motif_len_max: int = 6
    length_min: int = 20
    length_max: int = 60
    malware_fraction: float = 0.7
    size: int = 2000
    label_noise: float = 0.0
    seed: int = 0
    motifs: tuple[tuple[int, ...], ...] | None = None  # explicit override

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        if not 0.0 < self.malware_fraction < 1.0:
            raise ValueError(f"malware_fraction {self.malware_fraction} outside (0, 1)")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise outside [0, 1)")
        if self.length_min < 1 or self.length_max < self.length_min:
            raise ValueError("bad length range")
        if self.motif_len_max > self.length_min:
            raise ValueError(f"motif length {self.motif_len_max} exceeds minimum sequence length {self.length_min}")
        if self.motifs is not None:
            for m in self.motifs:
                if len(m) > self.length_min:
                    raise ValueError(f"motif of length {len(m)} exceeds minimum sequence length")
                if any(not 0 <= s < self.vocab_size for s in m):
                    raise ValueError("motif symbol outside vocabulary")


@dataclass
class LabeledExample:
    """One sequence with its label and how the generator built it."""

    id: int
    sequence: np.ndarray  # 1-D int64, symbols in [0, vocab_size)
    label: int  # 0 benign, 1 malware
    provenance: dict = field(default_factory=dict)


def _contains(seq: np.ndarray, motif: np.ndarray) -> bool:
    m = len(motif)
    if m > len(seq):
        return False
    windows = np.lib.stride_tricks.sliding_window_view(seq, m)
    return bool((windows == motif).all(axis=1).any())


def scan_for_motifs(seq: np.ndarray, motifs) -> int:
    """1 if any motif occurs contiguously, else 0; the trivial oracle detector."""
    return int(any(_contains(np.asarray(seq), np.asarray(m)) for m in motifs))


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def derive_motifs(spec: CorpusSpec) -> tuple[tuple[int, ...], ...]:
    """The motif set for a spec: explicit if given, else drawn from the seed.

    Drawn motifs are pairwise non-containing so membership of each motif is
    an independent signal.
    """
    if spec.motifs is not None:
        return spec.motifs
    rng = _stream(spec.seed, 0)
    motifs: list[np.ndarray] = []
    while len(motifs) < spec.motif_count:
        length = int(rng.integers(spec.motif_len_min, spec.motif_len_max + 1))
        cand = rng.integers(0, spec.vocab_size, length)
        if any(_contains(cand, m) or _contains(m, cand) for m in motifs):
            continue
        motifs.append(cand)
    return tuple(tuple(int(s) for s in m) for m in motifs)


def generate_corpus(spec: CorpusSpec) -> list[LabeledExample]:
    """Deterministic corpus: `round(size * malware_fraction)` malware, rest benign."""
    motifs = [np.asarray(m, dtype=np.int64) for m in derive_motifs(spec)]
    n_malware = round(spec.size * spec.malware_fraction)
    examples = []
    for i in range(spec.size):
        rng = _stream(spec.seed, 1, i)
        length = int(rng.integers(spec.length_min, spec.length_max + 1))
        is_malware = i < n_malware
        if is_malware:
            seq = rng.integers(0, spec.vocab_size, length)
            motif_id = int(rng.integers(0, len(motifs)))
            motif = motifs[motif_id]
            pos = int(rng.integers(0, length - len(motif) + 1))
            seq[pos : pos + len(motif)] = motif
            provenance = {"motif_id": motif_id, "position": pos}
        else:
            while True:
                seq = rng.integers(0, spec.vocab_size, length)
                if not any(_contains(seq, m) for m in motifs):
                    break
            provenance = {"motif_id": None, "position": None}
        label = int(is_malware)
        if spec.label_noise > 0.0 and rng.random() < spec.label_noise:
            label = 1 - label
            provenance["flipped"] = True
        examples.append(LabeledExample(i, seq, label, provenance))
    return examples


# ---------------------------------------------------------------------------
# splitting


SUBSET_NAMES = ("attacker_train", "attacker_val", "victim_train", "victim_val", "test")


@dataclass(frozen=True)
class SplitSpec:
    """Five-way partition fractions; must sum to one."""

    attacker_train: float = 0.3
    attacker_val: float = 0.1
    victim_train: float = 0.3
    victim_val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        fractions = [getattr(self, n) for n in SUBSET_NAMES]
        if any(f <= 0 for f in fractions):
            raise ValueError("all split fractions must be positive")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {sum(fractions)}, not 1")

    @property
    def fractions(self) -> list[float]:
        return [getattr(self, n) for n in SUBSET_NAMES]


@dataclass
class Split:
    """Example ids per subset."""

    attacker_train: list[int]
    attacker_val: list[int]
    victim_train: list[int]
    victim_val: list[int]
    test: list[int]

    def subset(self, name: str) -> list[int]:
        return getattr(self, name)

    def as_dict(self) -> dict[str, list[int]]:
        return {n: list(self.subset(n)) for n in SUBSET_NAMES}


def _apportion(n: int, fractions: list[float]) -> list[int]:
    """Cumulative rounding: sizes within one of n * f, summing exactly to n."""
    bounds = np.rint(np.cumsum(np.asarray(fractions) * n)).astype(int)
    bounds[-1] = n
    return np.diff(np.concatenate([[0], bounds])).tolist()


def split(corpus: list[LabeledExample], spec: SplitSpec, seed: int) -> Split:
    """Stratified disjoint partition; class ratio preserved within one example."""
    if len(corpus) < 10:
        raise ValueError(f"corpus of {len(corpus)} is too small to stratify")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(2,)))
    parts: dict[str, list[int]] = {name: [] for name in SUBSET_NAMES}
    for cls in (1, 0):
        ids = [ex.id for ex in corpus if ex.label == cls]
        if not ids:
            raise ValueError(f"corpus has no examples of class {cls}")
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        sizes = _apportion(len(ids), spec.fractions)
        lo = 0
        for name, k in zip(SUBSET_NAMES, sizes):
            parts[name].extend(shuffled[lo : lo + k])
            lo += k
    for name in SUBSET_NAMES:
        parts[name].sort()
    return Split(**parts)


# ---------------------------------------------------------------------------
# persistence


def save_corpus(corpus: list[LabeledExample], path) -> None:
    """One JSON object per line: {id, label, indices, provenance}."""
    with open(path, "w", encoding="ascii") as fh:
        for ex in corpus:
            fh.write(json.dumps({
                "id": ex.id,
                "label": ex.label,
                "indices": [int(s) for s in ex.sequence],
                "provenance": ex.provenance,
            }) + "\n")


def load_corpus(path, vocab_size: int | None = None) -> list[LabeledExample]:
    """Inverse of save_corpus; validates symbol range when vocab_size is given."""
    out = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ex = LabeledExample(
                    id=int(rec["id"]),
                    sequence=np.asarray(rec["indices"], dtype=np.int64),
                    label=int(rec["label"]),
                    provenance=rec.get("provenance", {}),
                )
            except (KeyError, ValueError, TypeError) as err:
                raise ValueError(f"{path}: malformed record on line {lineno}: {err}") from err
            if ex.label not in (0, 1):
                raise ValueError(f"{path}: line {lineno}: label {ex.label} not in {{0, 1}}")
            if vocab_size is not None and ex.sequence.size:
                bad = ex.sequence[(ex.sequence < 0) | (ex.sequence >= vocab_size)]
                if bad.size:
                    raise ValueError(
                        f"{path}: line {lineno}: symbol index {int(bad[0])} outside [0, {vocab_size})")
            out.append(ex)
    return out


def save_split(sp: Split, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(sp.as_dict(), fh, indent=0, sort_keys=True)
        fh.write("\n")


def load_split(path) -> Split:
    with open(path, encoding="ascii") as fh:
        data = json.load(fh)
    missing = [n for n in SUBSET_NAMES if n not in data]
    if missing:
        raise ValueError(f"{path}: split file missing subsets {missing}")
    return Split(**{n: [int(i) for i in data[n]] for n in SUBSET_NAMES})


def subset_examples(corpus: list[LabeledExample], sp: Split, name: str) -> list[LabeledExample]:
    """Resolve a subset's ids against the corpus."""
    by_id = {ex.id: ex for ex in corpus}
    return [by_id[i] for i in sp.subset(name)]
