"""LSTM sequence classifiers: encoders, pooling heads, and the victim zoo.

Six classifier variants are spanned by direction (forward-only or
bidirectional) crossed with pooling head (last state, average, attention).
All of them run over batches of variable-length sequences: padded steps
carry the previous state through unchanged and are excluded from pooling,
so every per-example output is bit-identical to the batch-of-one result.

Inputs come in two forms. Index sequences (ints below the input dimension)
take the embedding-lookup path, which is exactly the one-hot matrix product.
Soft sequences (rows of probabilities, used by the substitute model) take
the dense product path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParameterStore
from .evaluate import auc

__all__ = [
    "Vocabulary",
    "LstmParams",
    "AttentionParams",
    "VictimConfig",
    "VICTIM_VARIANTS",
    "lstm_step",
    "run_rnn",
    "pool",
    "attention_weights",
    "classify",
    "SequenceClassifier",
    "victim_forward",
    "pad_index_batch",
    "train_classifier",
]

# score used to blank out padded steps before the attention softmax;
# exp(-1e30 - max) underflows to exactly 0.0
_MASK_SCORE = -1e30


@dataclass(frozen=True)
class Vocabulary:
    """Symbol inventory: real symbols 0..size-1 plus the reserved null slot."""

    size: int
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"vocabulary needs at least 2 symbols, got {self.size}")
        if self.names is not None and len(self.names) != self.size:
            raise ValueError("names length does not match vocabulary size")

    @property
    def null_index(self) -> int:
        return self.size

    def check_indices(self, indices, allow_null: bool = False) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        limit = self.size + 1 if allow_null else self.size
        if idx.size and (idx.min() < 0 or idx.max() >= limit):
            bad = idx[(idx < 0) | (idx >= limit)][0]
            raise ValueError(f"symbol index {bad} outside [0, {limit})")
        return idx


@dataclass
class LstmParams:
    """Gate weights for one LSTM direction; gate order is i, f, g, o."""

    W_x: Tensor  # (input_dim, 4H)
    W_h: Tensor  # (H, 4H)
    b: Tensor  # (4H,)
    input_dim: int
    hidden: int

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, input_dim: int, hidden: int,
               rng: np.random.Generator, scale: float = 0.1) -> "LstmParams":
        W_x = store.add(f"{prefix}.W_x", rng.uniform(-scale, scale, (input_dim, 4 * hidden)))
        W_h = store.add(f"{prefix}.W_h", rng.uniform(-scale, scale, (hidden, 4 * hidden)))
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0  # open forget gates at init
        return cls(W_x, W_h, store.add(f"{prefix}.b", b), input_dim, hidden)

    @classmethod
    def from_store(cls, store: ParameterStore, prefix: str) -> "LstmParams":
        W_x = store[f"{prefix}.W_x"]
        H = W_x.data.shape[1] // 4
        return cls(W_x, store[f"{prefix}.W_h"], store[f"{prefix}.b"], W_x.data.shape[0], H)


@dataclass
class AttentionParams:
    """One-hidden-layer scorer mapping a state vector to a scalar weight."""

    W1: Tensor  # (state_dim, attn_hidden)
    b1: Tensor  # (attn_hidden,)
    w2: Tensor  # (attn_hidden, 1)
    b2: Tensor  # (1,)

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, state_dim: int, attn_hidden: int,
               rng: np.random.Generator, scale: float = 0.1) -> "AttentionParams":
        return cls(
            store.add(f"{prefix}.W1", rng.uniform(-scale, scale, (state_dim, attn_hidden))),
            store.add(f"{prefix}.b1", np.zeros(attn_hidden)),
            store.add(f"{prefix}.w2", rng.uniform(-scale, scale, (attn_hidden, 1))),
            store.add(f"{prefix}.b2", np.zeros(1)),
        )

    @classmethod
    def from_store(cls, store: ParameterStore, prefix: str) -> "AttentionParams":
        return cls(store[f"{prefix}.W1"], store[f"{prefix}.b1"],
                   store[f"{prefix}.w2"], store[f"{prefix}.b2"])

    def score(self, state: Tensor) -> Tensor:
        hidden = ad.tanh(ad.add(ad.matmul(state, self.W1), self.b1))
        return ad.add(ad.matmul(hidden, self.w2), self.b2)


VICTIM_VARIANTS = {
    "LSTM": ("forward", "last"),
    "BiLSTM": ("bidirectional", "last"),
    "LSTM-Average": ("forward", "average"),
    "BiLSTM-Average": ("bidirectional", "average"),
    "LSTM-Attention": ("forward", "attention"),
    "BiLSTM-Attention": ("bidirectional", "attention"),
}


@dataclass(frozen=True)
class VictimConfig:
    """Architecture descriptor: direction x pooling head plus sizes."""

    direction: str
    head: str
    input_dim: int
    hidden: int = 128
    attn_hidden: int = 128

    def __post_init__(self):
        if self.direction not in ("forward", "bidirectional"):
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.head not in ("last", "average", "attention"):
            raise ValueError(f"unknown head {self.head!r}")

    @classmethod
    def from_name(cls, name: str, input_dim: int, hidden: int = 128,
                  attn_hidden: int = 128) -> "VictimConfig":
        if name not in VICTIM_VARIANTS:
            raise ValueError(f"unknown victim {name!r}; valid names: {', '.join(VICTIM_VARIANTS)}")
        direction, head = VICTIM_VARIANTS[name]
        return cls(direction, head, input_dim, hidden, attn_hidden)

    @property
    def state_dim(self) -> int:
        return self.hidden * (2 if self.direction == "bidirectional" else 1)


# ---------------------------------------------------------------------------
# recurrent runner


def lstm_step(x, h_prev: Tensor, c_prev: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One gated update. `x` is an index vector (B,) or a dense Tensor (B, D)."""
    if isinstance(x, Tensor):
        if x.data.shape[1] != p.input_dim:
            raise ValueError(f"lstm_step: input width {x.data.shape[1]} != expected {p.input_dim}")
        from_x = ad.matmul(x, p.W_x)
    else:
        from_x = ad.gather_rows(p.W_x, x)
    gates = ad.add(ad.add(from_x, ad.matmul(h_prev, p.W_h)), p.b)
    H = p.hidden
    i = ad.sigmoid(ad.narrow(gates, 1, 0, H))
    f = ad.sigmoid(ad.narrow(gates, 1, H, H))
    g = ad.tanh(ad.narrow(gates, 1, 2 * H, H))
    o = ad.sigmoid(ad.narrow(gates, 1, 3 * H, H))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def _valid_mask(T: int, lengths: np.ndarray) -> np.ndarray:
    return np.arange(T)[:, None] < lengths[None, :]  # (T, B)


def _as_step_list(steps):
    """Normalize input to a list of per-step items plus (soft?, batch size)."""
    if isinstance(steps, np.ndarray):
        if steps.ndim != 2:
            raise ValueError(f"index input must be (T, B), got {steps.shape}")
        return [steps[t] for t in range(steps.shape[0])], False, steps.shape[1]
    if not steps:
        raise ValueError("empty sequence")
    if not isinstance(steps[0], Tensor):
        raise ValueError("steps must be a (T, B) index array or a list of Tensors")
    return list(steps), True, steps[0].data.shape[0]


def _reverse_inputs(step_list, lengths, soft: bool):
    T = len(step_list)
    if soft:
        stacked = ad.stack_steps(step_list)
        rev = ad.reverse_steps(stacked, lengths)
        return [ad.step_slice(rev, t) for t in range(T)]
    idx = ad._reversal_index(T, lengths)
    cols = np.arange(len(lengths))[None, :]
    mat = np.stack(step_list)
    rev = mat[idx, cols]
    return [rev[t] for t in range(T)]


def _run_direction(step_list, lengths, p: LstmParams, B: int) -> list[Tensor]:
    T = len(step_list)
    mask = _valid_mask(T, lengths)
    h = ad.constant(np.zeros((B, p.hidden)))
    c = ad.constant(np.zeros((B, p.hidden)))
    states = []
    for t in range(T):
        h_new, c_new = lstm_step(step_list[t], h, c, p)
        if mask[t].all():
            h, c = h_new, c_new
        else:
            col = mask[t][:, None]
            h = ad.where_mask(col, h_new, h)
            c = ad.where_mask(col, c_new, c)
        states.append(h)
    return states


def run_rnn(steps, lengths, fw: LstmParams, bw: LstmParams | None = None) -> list[Tensor]:
    """Per-step states over a padded batch; width H, or 2H when bidirectional.

    The backward direction consumes each example's own reversal (its last
    valid step first); its states are re-aligned so entry t of the output
    pairs the forward state at t with the backward state at t.
    """
    step_list, soft, B = _as_step_list(steps)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (B,):
        raise ValueError(f"lengths shape {lengths.shape} does not match batch {B}")
    if lengths.min() < 1 or lengths.max() > len(step_list):
        raise ValueError(f"lengths must lie in [1, {len(step_list)}]")
    states = _run_direction(step_list, lengths, fw, B)
    if bw is None:
        return states
    rev_inputs = _reverse_inputs(step_list, lengths, soft)
    rev_states = _run_direction(rev_inputs, lengths, bw, B)
    aligned = ad.reverse_steps(ad.stack_steps(rev_states), lengths)
    return [ad.concat([states[t], ad.step_slice(aligned, t)], axis=1) for t in range(len(step_list))]


# ---------------------------------------------------------------------------
# pooling heads and the output layer


def _softmax_over_steps(scores: list[Tensor], lengths: np.ndarray) -> list[Tensor]:
    """Normalize per-step (B, 1) scores across valid steps only."""
    T = len(scores)
    mask = _valid_mask(T, lengths)
    blank = ad.constant(np.full((len(lengths), 1), _MASK_SCORE))
    masked = []
    for t in range(T):
        s = scores[t]
        masked.append(s if mask[t].all() else ad.where_mask(mask[t][:, None], s, blank))
    peak = ad.constant(np.maximum.reduce([s.data for s in masked]))
    exps = [ad.exp(ad.sub(s, peak)) for s in masked]
    total = exps[0]
    for e in exps[1:]:
        total = ad.add(total, e)
    inv = ad.reciprocal(total)
    return [ad.mul(e, inv) for e in exps]


def pool(states: list[Tensor], lengths, head: str, attn: AttentionParams | None = None,
         split: int | None = None) -> Tensor:
    """Collapse per-step states into one representation per example.

    For bidirectional states pass `split` = forward width so that last-state
    pooling pairs the forward state after the whole sequence with the backward
    state after the whole reversed sequence (found at step 0 of the aligned
    states).
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    T = len(states)
    if head == "last":
        # padded steps carried the last valid state forward
        if split is None:
            return states[-1]
        return ad.concat([ad.narrow(states[-1], 1, 0, split),
                          ad.narrow(states[0], 1, split, split)], axis=1)
    mask = _valid_mask(T, lengths)
    if head == "average":
        zero = ad.constant(np.zeros_like(states[0].data))
        total = None
        for t in range(T):
            term = states[t] if mask[t].all() else ad.where_mask(mask[t][:, None], states[t], zero)
            total = term if total is None else ad.add(total, term)
        return ad.mul(total, ad.constant(1.0 / lengths[:, None]))
    if head == "attention":
        if attn is None:
            raise ValueError("attention pooling needs scorer parameters")
        weights = _softmax_over_steps([attn.score(s) for s in states], lengths)
        total = None
        for t in range(T):
            term = ad.mul(states[t], weights[t])
            total = term if total is None else ad.add(total, term)
        return total
    raise ValueError(f"unknown head {head!r}")


def attention_weights(states: list[Tensor], lengths, attn: AttentionParams) -> np.ndarray:
    """Normalized attention weights as a (T, B) array, for inspection."""
    weights = _softmax_over_steps([attn.score(s) for s in states], np.asarray(lengths, dtype=np.int64))
    return np.stack([w.data[:, 0] for w in weights])


def classify(rep: Tensor, W_out: Tensor, b_out: Tensor) -> Tensor:
    """Affine map to two logits, softmax; column 1 is the malware probability."""
    return ad.softmax(ad.add(ad.matmul(rep, W_out), b_out))


# ---------------------------------------------------------------------------
# the classifier bundle


def pad_index_batch(seqs: list) -> tuple[np.ndarray, np.ndarray]:
    """Pad index sequences to (T, B) with zeros plus the true lengths."""
    if not seqs:
        raise ValueError("empty batch")
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    if lengths.min() < 1:
        raise ValueError("empty sequence in batch")
    mat = np.zeros((lengths.max(), len(seqs)), dtype=np.int64)
    for b, s in enumerate(seqs):
        mat[: len(s), b] = s
    return mat, lengths


class SequenceClassifier:
    """A victim (or substitute) model: run_rnn -> pool -> classify."""

    def __init__(self, config: VictimConfig, store: ParameterStore):
        self.config = config
        self.store = store
        self.fw = LstmParams.from_store(store, "lstm_fw")
        self.bw = LstmParams.from_store(store, "lstm_bw") if config.direction == "bidirectional" else None
        self.attn = AttentionParams.from_store(store, "attn") if config.head == "attention" else None
        self.W_out = store["out.W"]
        self.b_out = store["out.b"]

    @classmethod
    def init(cls, config: VictimConfig, rng: np.random.Generator, scale: float = 0.1) -> "SequenceClassifier":
        store = ParameterStore()
        LstmParams.create(store, "lstm_fw", config.input_dim, config.hidden, rng, scale)
        if config.direction == "bidirectional":
            LstmParams.create(store, "lstm_bw", config.input_dim, config.hidden, rng, scale)
        if config.head == "attention":
            AttentionParams.create(store, "attn", config.state_dim, config.attn_hidden, rng, scale)
        store.add("out.W", rng.uniform(-scale, scale, (config.state_dim, 2)))
        store.add("out.b", np.zeros(2))
        return cls(config, store)

    def forward(self, steps, lengths) -> Tensor:
        """Class probabilities (B, 2) for a padded batch."""
        states = run_rnn(steps, lengths, self.fw, self.bw)
        split = self.config.hidden if self.bw is not None else None
        rep = pool(states, lengths, self.config.head, self.attn, split=split)
        return classify(rep, self.W_out, self.b_out)

    def malware_probability(self, steps, lengths) -> Tensor:
        return ad.narrow(self.forward(steps, lengths), 1, 1, 1)

    def score_sequences(self, seqs: list, batch_size: int = 64) -> np.ndarray:
        """Malware probabilities for index sequences (values only, no graph kept)."""
        out = np.empty(len(seqs))
        for lo in range(0, len(seqs), batch_size):
            chunk = seqs[lo : lo + batch_size]
            mat, lengths = pad_index_batch(chunk)
            out[lo : lo + len(chunk)] = self.malware_probability(mat, lengths).data[:, 0]
        return out

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        self.store.save(path)
        cfg = self.config
        with open(str(path) + ".meta", "w", encoding="ascii") as fh:
            fh.write(f"direction={cfg.direction}\nhead={cfg.head}\n"
                     f"hidden={cfg.hidden}\nattn_hidden={cfg.attn_hidden}\n"
                     f"input_dim={cfg.input_dim}\n")

    @classmethod
    def load(cls, path) -> "SequenceClassifier":
        fields = {}
        with open(str(path) + ".meta", encoding="ascii") as fh:
            for line in fh:
                key, _, value = line.strip().partition("=")
                fields[key] = value
        config = VictimConfig(
            direction=fields["direction"],
            head=fields["head"],
            input_dim=int(fields["input_dim"]),
            hidden=int(fields["hidden"]),
            attn_hidden=int(fields["attn_hidden"]),
        )
        return cls(config, ParameterStore.load(path))


def victim_forward(model: SequenceClassifier, seqs: list, batch_size: int = 64) -> np.ndarray:
    """Convenience wrapper: malware probabilities for a list of index sequences."""
    return model.score_sequences(seqs, batch_size=batch_size)


# ---------------------------------------------------------------------------
# supervised training


def train_classifier(model: SequenceClassifier, train_seqs, train_labels, val_seqs, val_labels,
                     *, lr: float = 0.001, epochs: int = 60, batch_size: int = 32,
                     patience: int = 8, seed: int = 0, verbose: bool = False) -> list[dict]:
    """Cross-entropy training with early stopping on validation AUC.

    Restores the best-validation parameters before returning. Returns one
    record per completed epoch: mean train loss and validation AUC.
    """
    from .params import AdamState, adam_step

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    labels = np.asarray(train_labels, dtype=np.int64)
    state = AdamState(model.store, lr=lr)
    history = []
    best_auc, best_state, since_best = -1.0, model.store.state_copy(), 0
    for epoch in range(epochs):
        order = rng.permutation(len(train_seqs))
        losses = []
        for lo in range(0, len(order), batch_size):
            pick = order[lo : lo + batch_size]
            mat, lengths = pad_index_batch([train_seqs[i] for i in pick])
            probs = model.forward(mat, lengths)
            onehot = np.zeros((len(pick), 2))
            onehot[np.arange(len(pick)), labels[pick]] = 1.0
            picked = ad.reduce_sum(ad.mul(probs, ad.constant(onehot)), axis=1)
            loss = ad.neg(ad.reduce_mean(ad.log(ad.clip(picked, 1e-12, 1.0))))
            model.store.zero_grads()
            ad.backward(loss)
            adam_step(model.store, model.store.grads(), state)
            losses.append(loss.item())
        val_auc = auc(val_labels, model.score_sequences(val_seqs))
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_auc": val_auc})
        if verbose:
            print(f"epoch {epoch:3d}  loss {history[-1]['train_loss']:.4f}  val auc {val_auc:.4f}")
        if val_auc > best_auc:
            best_auc, best_state, since_best = val_auc, model.store.state_copy(), 0
        else:
            since_best += 1
            if since_best >= patience:
                break
    model.store.load_state(best_state)
    return history
