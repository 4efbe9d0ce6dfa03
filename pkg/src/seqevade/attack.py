"""Insertion attack: generative decoder, Gumbel-Softmax relaxation, substitute.

The generator reads a sequence with a forward LSTM encoder and, after every
original symbol, decodes a short piece of candidate insertions over an
extended vocabulary that includes a reserved null symbol ("insert nothing").
Sampling uses the Gumbel-max trick; the same noise drives the Gumbel-Softmax
relaxation, so the hard sample and the soft row always share their argmax.

Two sequences leave the generator per input: the hard adversarial sequence
(nulls removed, fed to the black-box victim for a label) and the soft
sequence (null rows kept, fed to the substitute so gradients reach the
generator). The victim is only ever consulted through a hard-label callable;
nothing in this module can touch its parameters.

Training alternates: fit the substitute to the victim's labels by cross
entropy, then push the generator to lower the substitute's malware
probability while a null-probability bonus keeps insertions sparse.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import AdamState, ParameterStore, adam_step
from .seqnets import (LstmParams, SequenceClassifier, Vocabulary, VictimConfig,
                      _valid_mask, lstm_step, pad_index_batch, run_rnn)

__all__ = [
    "GumbelConfig",
    "GeneratorBundle",
    "AttackResult",
    "AttackTrainConfig",
    "sample_gumbel_noise",
    "gumbel_softmax",
    "sample_api",
    "encode",
    "decode_step",
    "generate",
    "generate_many",
    "make_generate_fn",
    "victim_label",
    "make_label_oracle",
    "make_substitute",
    "substitute_forward",
    "loss_substitute",
    "loss_generator",
    "train_attack",
    "save_attack_results",
    "load_attack_results",
]


@dataclass(frozen=True)
class GumbelConfig:
    """Relaxation temperature, insertions per step, null-bonus coefficient."""

    temp: float = 10.0
    insert_len: int = 1
    gamma: float = 0.1

    def __post_init__(self):
        if self.temp <= 0:
            raise ValueError(f"temperature must be positive, got {self.temp}")
        if self.insert_len < 1:
            raise ValueError("insert_len must be at least 1")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")


class GeneratorBundle:
    """Encoder, decoder, output map to M+1 symbols, and the feedback map."""

    def __init__(self, vocab: Vocabulary, hidden: int, gumbel: GumbelConfig, store: ParameterStore):
        self.vocab = vocab
        self.hidden = hidden
        self.gumbel = gumbel
        self.store = store
        self.enc = LstmParams.from_store(store, "enc")
        self.dec = LstmParams.from_store(store, "dec")
        self.W_s = store["out.W_s"]
        self.b_s = store["out.b_s"]
        self.W_g = store["in.W_g"]
        if self.W_g.data.shape != (vocab.size + 1, hidden):
            raise ValueError("feedback map must send M+1 symbols to the decoder input width")

    @classmethod
    def init(cls, vocab: Vocabulary, hidden: int, gumbel: GumbelConfig,
             rng: np.random.Generator, scale: float = 0.1) -> "GeneratorBundle":
        store = ParameterStore()
        LstmParams.create(store, "enc", vocab.size, hidden, rng, scale)
        LstmParams.create(store, "dec", hidden, hidden, rng, scale)
        store.add("out.W_s", rng.uniform(-scale, scale, (hidden, vocab.size + 1)))
        store.add("out.b_s", np.zeros(vocab.size + 1))
        store.add("in.W_g", rng.uniform(-scale, scale, (vocab.size + 1, hidden)))
        return cls(vocab, hidden, gumbel, store)

    def save(self, path) -> None:
        self.store.save(path)
        g = self.gumbel
        with open(str(path) + ".meta", "w", encoding="ascii") as fh:
            fh.write(f"vocab_size={self.vocab.size}\nhidden={self.hidden}\n"
                     f"temp={g.temp!r}\ninsert_len={g.insert_len}\ngamma={g.gamma!r}\n")

    @classmethod
    def load(cls, path) -> "GeneratorBundle":
        fields_ = {}
        with open(str(path) + ".meta", encoding="ascii") as fh:
            for line in fh:
                key, _, value = line.strip().partition("=")
                fields_[key] = value
        gumbel = GumbelConfig(temp=float(fields_["temp"]), insert_len=int(fields_["insert_len"]),
                              gamma=float(fields_["gamma"]))
        return cls(Vocabulary(int(fields_["vocab_size"])), int(fields_["hidden"]),
                   gumbel, ParameterStore.load(path))


# ---------------------------------------------------------------------------
# sampling primitives


def sample_gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """-log(-log(u)) with u uniform, clamped away from {0, 1} by 1e-12."""
    u = np.clip(rng.random(shape), 1e-12, 1.0 - 1e-12)
    return -np.log(-np.log(u))


def gumbel_softmax(pi: Tensor, z: np.ndarray, temp: float) -> Tensor:
    """Differentiable relaxation: softmax((log pi + z) / temp)."""
    if temp <= 0:
        raise ValueError(f"temperature must be positive, got {temp}")
    logits = ad.mul(ad.add(ad.log(ad.clip(pi, 1e-20, 1.0)), ad.constant(z)),
                    ad.constant(1.0 / temp))
    return ad.softmax(logits)


def sample_api(pi_values: np.ndarray, rng: np.random.Generator | None = None,
               z: np.ndarray | None = None) -> np.ndarray:
    """Categorical draw as argmax(log pi + z) over the last axis.

    Pass the same `z` that went into gumbel_softmax and the hard sample is
    the relaxation's argmax; pass `rng` to draw fresh noise.
    """
    if z is None:
        if rng is None:
            raise ValueError("sample_api needs either noise z or an rng")
        z = sample_gumbel_noise(pi_values.shape, rng)
    return np.argmax(np.log(np.maximum(pi_values, 1e-20)) + z, axis=-1)


# ---------------------------------------------------------------------------
# the generator


def encode(mat: np.ndarray, lengths: np.ndarray, bundle: GeneratorBundle) -> list[Tensor]:
    """Forward encoder states for padded index input (T, B); symbols < M."""
    bundle.vocab.check_indices(mat[_valid_mask(mat.shape[0], np.asarray(lengths))])
    return run_rnn(mat, lengths, bundle.enc)


def decode_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
                bundle: GeneratorBundle) -> tuple[Tensor, Tensor, Tensor]:
    """One decoder update; returns the next-symbol distribution over M+1.

    The first step of each piece feeds the encoder state over a zero decoder
    state; later steps feed the previous Gumbel output mapped through W_g.
    """
    h, c = lstm_step(x, h_prev, c_prev, bundle.dec)
    pi = ad.softmax(ad.add(ad.matmul(h, bundle.W_s), bundle.b_s))
    return pi, h, c


@dataclass
class GenerationBatch:
    """Graph-bearing products of one generator pass over a malware batch."""

    lengths: np.ndarray  # (B,) original lengths
    soft_rows: list[Tensor]  # (1+L)*T_max rows of (B, M+1), originals interleaved
    soft_lengths: np.ndarray  # (1+L) * lengths
    null_mean: Tensor  # (B, 1) mean null probability over each example's steps
    sampled: np.ndarray  # (T_max, L, B) sampled symbol ids, null included
    adversarial: list[np.ndarray]  # per example, nulls removed
    insertion_positions: list[list[int]]  # positions of insertions in adversarial


def batch_noise(lengths: np.ndarray, insert_len: int, vocab_size: int,
                streams: list[np.random.Generator]) -> np.ndarray:
    """Per-example Gumbel noise, (T_max, L, B, M+1); independent of batching."""
    T = int(np.max(lengths))
    z = np.zeros((T, insert_len, len(streams), vocab_size + 1))
    for b, stream in enumerate(streams):
        z[: lengths[b], :, b, :] = sample_gumbel_noise((int(lengths[b]), insert_len, vocab_size + 1), stream)
    return z


def run_generator(mat: np.ndarray, lengths: np.ndarray, bundle: GeneratorBundle,
                  noise: np.ndarray) -> GenerationBatch:
    """Encode, decode L candidates after every step, sample, and assemble."""
    lengths = np.asarray(lengths, dtype=np.int64)
    T, B = mat.shape
    L = bundle.gumbel.insert_len
    M = bundle.vocab.size
    enc_states = encode(mat, lengths, bundle)
    mask = _valid_mask(T, lengths)

    soft_rows: list[Tensor] = []
    null_cols: list[Tensor] = []
    sampled = np.zeros((T, L, B), dtype=np.int64)
    for t in range(T):
        onehot = np.zeros((B, M + 1))
        onehot[mask[t], mat[t][mask[t]]] = 1.0
        soft_rows.append(ad.constant(onehot))
        x = enc_states[t]
        h = ad.constant(np.zeros((B, bundle.hidden)))
        c = ad.constant(np.zeros((B, bundle.hidden)))
        for tau in range(L):
            pi, h, c = decode_step(x, h, c, bundle)
            z = noise[t, tau]
            g = gumbel_softmax(pi, z, bundle.gumbel.temp)
            sampled[t, tau] = sample_api(pi.data, z=z)
            soft_rows.append(g)
            null_cols.append(ad.narrow(pi, 1, M, 1))
            x = ad.matmul(g, bundle.W_g)

    zero_col = ad.constant(np.zeros((B, 1)))
    total = None
    for t in range(T):
        for tau in range(L):
            col = null_cols[t * L + tau]
            term = col if mask[t].all() else ad.where_mask(mask[t][:, None], col, zero_col)
            total = term if total is None else ad.add(total, term)
    null_mean = ad.mul(total, ad.constant(1.0 / (lengths * L)[:, None]))

    adversarial, positions = [], []
    for b in range(B):
        adv: list[int] = []
        ins: list[int] = []
        for t in range(int(lengths[b])):
            adv.append(int(mat[t, b]))
            for tau in range(L):
                a = int(sampled[t, tau, b])
                if a != M:
                    ins.append(len(adv))
                    adv.append(a)
        adversarial.append(np.array(adv, dtype=np.int64))
        positions.append(ins)

    return GenerationBatch(lengths, soft_rows, (1 + L) * lengths, null_mean,
                           sampled, adversarial, positions)


@dataclass
class AttackResult:
    """One adversarial sequence and the bookkeeping around it."""

    original: np.ndarray
    adversarial: np.ndarray
    insertion_positions: list[int]
    soft: np.ndarray  # ((1+L)*T, M+1) relaxed rows, nulls kept
    victim_label: int | None = None
    substitute_prob: float | None = None


def _materialize(batch: GenerationBatch, originals: list[np.ndarray]) -> list[AttackResult]:
    out = []
    for b, orig in enumerate(originals):
        n = int(batch.soft_lengths[b])
        soft = np.stack([batch.soft_rows[j].data[b] for j in range(n)])
        out.append(AttackResult(np.asarray(orig), batch.adversarial[b],
                                batch.insertion_positions[b], soft))
    return out


def generate(seq, bundle: GeneratorBundle, rng: np.random.Generator) -> AttackResult:
    """Adversarial version of one sequence; victim fields left for the caller."""
    seq = bundle.vocab.check_indices(seq)
    lengths = np.array([len(seq)])
    noise = batch_noise(lengths, bundle.gumbel.insert_len, bundle.vocab.size, [rng])
    batch = run_generator(seq[:, None], lengths, bundle, noise)
    return _materialize(batch, [seq])[0]


def _example_stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def generate_many(seqs: list, bundle: GeneratorBundle, seed: int,
                  batch_size: int = 32) -> list[AttackResult]:
    """Adversarial versions of many sequences.

    Each example uses its own noise stream keyed by (seed, position), so the
    output is independent of batch composition and safe to parallelize.
    """
    results: list[AttackResult] = []
    for lo in range(0, len(seqs), batch_size):
        chunk = [np.asarray(s) for s in seqs[lo : lo + batch_size]]
        mat, lengths = pad_index_batch(chunk)
        streams = [_example_stream(seed, 5, lo + k) for k in range(len(chunk))]
        noise = batch_noise(lengths, bundle.gumbel.insert_len, bundle.vocab.size, streams)
        results.extend(_materialize(run_generator(mat, lengths, bundle, noise), chunk))
    return results


def make_generate_fn(bundle: GeneratorBundle, seed: int):
    """Sequence-list to adversarial-list closure, for transfer evaluation."""

    def gen(seqs):
        return [r.adversarial for r in generate_many(seqs, bundle, seed)]

    return gen


# ---------------------------------------------------------------------------
# the black-box interface and the substitute


def victim_label(seqs: list, victim, threshold: float = 0.5) -> np.ndarray:
    """Hard labels from a victim model; 1 iff p_malware >= threshold."""
    return (victim.score_sequences(seqs) >= threshold).astype(np.int64)


def make_label_oracle(victim, threshold: float = 0.5, batch_size: int = 64):
    """The only victim interface attack training sees: sequences in, 0/1 out."""

    def oracle(seqs: list) -> np.ndarray:
        return (victim.score_sequences(seqs, batch_size=batch_size) >= threshold).astype(np.int64)

    return oracle


def make_substitute(vocab: Vocabulary, hidden: int, rng: np.random.Generator,
                    attn_hidden: int | None = None, scale: float = 0.1) -> SequenceClassifier:
    """Bidirectional attention classifier over M+1 symbols (null included)."""
    config = VictimConfig("bidirectional", "attention", vocab.size + 1,
                          hidden=hidden, attn_hidden=attn_hidden or hidden)
    return SequenceClassifier.init(config, rng, scale)


def substitute_forward(steps, lengths, substitute: SequenceClassifier) -> Tensor:
    """Malware probability column (B, 1) for soft rows or padded index input."""
    return substitute.malware_probability(steps, lengths)


# ---------------------------------------------------------------------------
# losses


def loss_substitute(p: Tensor, labels: np.ndarray) -> Tensor:
    """Per-example cross entropy against hard victim labels; p is (B, 1)."""
    v = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    p = ad.clip(p, 1e-12, 1.0 - 1e-12)
    hit = ad.mul(ad.log(p), ad.constant(v))
    miss = ad.mul(ad.log(ad.sub(ad.constant(np.ones_like(v)), p)), ad.constant(1.0 - v))
    return ad.neg(ad.add(hit, miss))


def loss_generator(p: Tensor, null_mean: Tensor, gamma: float) -> Tensor:
    """Per-example generator objective: log p_S - gamma * mean null probability."""
    logp = ad.log(ad.clip(p, 1e-12, 1.0 - 1e-12))
    if gamma == 0.0:
        return logp
    return ad.sub(logp, ad.mul(null_mean, ad.constant(gamma)))


# ---------------------------------------------------------------------------
# alternating training


@dataclass
class AttackTrainConfig:
    epochs: int = 100
    patience: int = 10
    batch_malware: int = 16
    batch_benign: int = 8
    lr_generator: float = 0.001
    lr_substitute: float = 0.001
    seed: int = 0


def _soft_onehot_batch(seqs: list[np.ndarray], width: int) -> tuple[list[Tensor], np.ndarray]:
    """Index sequences as constant one-hot soft rows of the given width."""
    mat, lengths = pad_index_batch(seqs)
    mask = _valid_mask(mat.shape[0], lengths)
    rows = []
    for t in range(mat.shape[0]):
        onehot = np.zeros((len(seqs), width))
        onehot[mask[t], mat[t][mask[t]]] = 1.0
        rows.append(ad.constant(onehot))
    return rows, lengths


def train_attack(bundle: GeneratorBundle, substitute: SequenceClassifier, label_fn,
                 malware_train: list, benign_train: list, malware_val: list,
                 cfg: AttackTrainConfig, verbose: bool = False) -> list[dict]:
    """Alternate substitute fitting and generator updates over minibatches.

    Per minibatch: run the generator on malware, query `label_fn` on the hard
    adversarial sequences and on raw benign sequences, evaluate the substitute
    on the soft malware rows and on benign one-hots, then take one Adam step
    on the substitute (cross entropy, both classes) and one on the generator
    (substitute evasion plus null bonus). Both gradients are taken at the
    same forward values. Early stopping tracks validation attack success
    (fraction of adversarial validation malware the victim labels benign)
    and the best parameters are restored before returning.
    """
    if not malware_train or not benign_train:
        raise ValueError("attack training needs both malware and benign examples")
    if substitute.config.input_dim != bundle.vocab.size + 1:
        raise ValueError(
            f"substitute input width {substitute.config.input_dim} != vocabulary {bundle.vocab.size} + null")
    malware_train = [bundle.vocab.check_indices(s) for s in malware_train]
    benign_train = [bundle.vocab.check_indices(s) for s in benign_train]
    malware_val = [bundle.vocab.check_indices(s) for s in malware_val]

    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(6,)))
    gen_state = AdamState(bundle.store, lr=cfg.lr_generator)
    sub_state = AdamState(substitute.store, lr=cfg.lr_substitute)
    L = bundle.gumbel.insert_len
    M = bundle.vocab.size

    def validation_success() -> float:
        labels = []
        for lo in range(0, len(malware_val), 64):
            chunk = malware_val[lo : lo + 64]
            mat, lengths = pad_index_batch(chunk)
            streams = [_example_stream(cfg.seed, 4, lo + k) for k in range(len(chunk))]
            noise = batch_noise(lengths, L, M, streams)
            batch = run_generator(mat, lengths, bundle, noise)
            labels.append(_query(label_fn, batch.adversarial, "validation"))
        return float(1.0 - np.concatenate(labels).mean())

    def _query(fn, seqs, stage):
        try:
            out = np.asarray(fn(list(seqs)))
        except Exception as err:
            raise RuntimeError(f"victim labeling failed during {stage}: {err}") from err
        if out.shape != (len(seqs),):
            raise RuntimeError(f"victim returned shape {out.shape} for {len(seqs)} sequences")
        return out

    history: list[dict] = []
    best = (-1.0, None, None, -1)
    since_best = 0
    for epoch in range(cfg.epochs):
        mal_order = rng.permutation(len(malware_train))
        ben_order = rng.permutation(len(benign_train))
        ls_values, lg_values = [], []
        ben_cursor = 0
        for lo in range(0, len(mal_order), cfg.batch_malware):
            mal_ids = mal_order[lo : lo + cfg.batch_malware]
            mal_seqs = [malware_train[i] for i in mal_ids]
            ben_ids = []
            while len(ben_ids) < cfg.batch_benign:
                if ben_cursor == len(ben_order):
                    ben_order = rng.permutation(len(benign_train))
                    ben_cursor = 0
                ben_ids.append(ben_order[ben_cursor])
                ben_cursor += 1
            ben_seqs = [benign_train[i] for i in ben_ids]

            mat, lengths = pad_index_batch(mal_seqs)
            streams = [_example_stream(cfg.seed, 3, epoch, int(i)) for i in mal_ids]
            noise = batch_noise(lengths, L, M, streams)
            gen_batch = run_generator(mat, lengths, bundle, noise)

            v_mal = _query(label_fn, gen_batch.adversarial, f"epoch {epoch}")
            v_ben = _query(label_fn, ben_seqs, f"epoch {epoch}")

            p_mal = substitute_forward(gen_batch.soft_rows, gen_batch.soft_lengths, substitute)
            ben_rows, ben_lengths = _soft_onehot_batch(ben_seqs, M + 1)
            p_ben = substitute_forward(ben_rows, ben_lengths, substitute)

            ls = ad.reduce_mean(ad.concat([loss_substitute(p_mal, v_mal),
                                           loss_substitute(p_ben, v_ben)], axis=0))
            lg = ad.reduce_mean(loss_generator(p_mal, gen_batch.null_mean, bundle.gumbel.gamma))

            substitute.store.zero_grads()
            bundle.store.zero_grads()
            ad.backward(ls)
            sub_grads = substitute.store.grads()
            ad.backward(lg)
            gen_grads = bundle.store.grads()
            adam_step(substitute.store, sub_grads, sub_state)
            adam_step(bundle.store, gen_grads, gen_state)
            ls_values.append(ls.item())
            lg_values.append(lg.item())

        success = validation_success()
        history.append({"epoch": epoch, "loss_substitute": float(np.mean(ls_values)),
                        "loss_generator": float(np.mean(lg_values)), "val_success": success})
        if verbose:
            print(f"epoch {epoch:3d}  L_S {history[-1]['loss_substitute']:.4f}  "
                  f"L_G {history[-1]['loss_generator']:.4f}  val success {success:.3f}")
        if success > best[0]:
            best = (success, bundle.store.state_copy(), substitute.store.state_copy(), epoch)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break
    if best[1] is not None:
        bundle.store.load_state(best[1])
        substitute.store.load_state(best[2])
    return history


# ---------------------------------------------------------------------------
# persistence of attack outputs


def save_attack_results(results: list[AttackResult], path) -> None:
    """JSON-lines: original and adversarial indices, positions, label, p_S."""
    with open(path, "w", encoding="ascii") as fh:
        for r in results:
            fh.write(json.dumps({
                "original": [int(s) for s in r.original],
                "adversarial": [int(s) for s in r.adversarial],
                "insertion_positions": [int(i) for i in r.insertion_positions],
                "victim_label": r.victim_label,
                "substitute_prob": r.substitute_prob,
            }) + "\n")


def load_attack_results(path) -> list[dict]:
    out = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except ValueError as err:
                raise ValueError(f"{path}: malformed record on line {lineno}: {err}") from err
    return out
