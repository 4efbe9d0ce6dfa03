"""Command-line front end: corpus, train-victim, train-attack, evaluate.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every command is
deterministic given the config's seed and dumps its effective configuration
into the output directory.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import attack as atk
from . import corpus as cp
from . import evaluate as ev
from . import seqnets as sn
from .autodiff import constant as ad_constant
from .config import RunConfig, apply_overrides, corpus_spec_from, dump_config, load_config

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="seqevade", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to a key=value config file")
        p.add_argument("--seed", type=int, help="global seed override")
        p.add_argument("--out", help="output directory override")

    p_corpus = sub.add_parser("corpus", help="generate the corpus and split files")
    common(p_corpus)

    p_victim = sub.add_parser("train-victim", help="train one victim variant")
    common(p_victim)
    p_victim.add_argument("--victim", required=True, choices=sorted(sn.VICTIM_VARIANTS),
                          help="which victim architecture to train")
    p_victim.add_argument("--epochs", type=int, help="max training epochs")
    p_victim.add_argument("--lr", type=float, help="victim learning rate")

    p_attack = sub.add_parser("train-attack", help="train the insertion attack against a victim")
    common(p_attack)
    p_attack.add_argument("--victim", required=True, choices=sorted(sn.VICTIM_VARIANTS),
                          help="victim checkpoint to attack")
    p_attack.add_argument("--epochs", type=int, help="max attack epochs")
    p_attack.add_argument("--lr", type=float, help="learning rate for generator and substitute")
    p_attack.add_argument("--temp", type=float, help="Gumbel-Softmax temperature")
    p_attack.add_argument("--gamma", type=float, help="null-bonus coefficient")
    p_attack.add_argument("--insert-len", type=int, dest="insert_len",
                          help="candidate insertions per original symbol")

    p_eval = sub.add_parser("evaluate", help="emit AUC, attack, and transfer reports")
    common(p_eval)
    return parser


def _load(args, **extra) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(cfg, seed=args.seed, out_dir=args.out, **extra)


def _prepare_out(cfg: RunConfig, command: str) -> str:
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    dump_config(cfg, os.path.join(out, f"{command}.config.txt"))
    return out


def _load_data(cfg: RunConfig, out: str):
    corpus_path = os.path.join(out, "corpus.jsonl")
    split_path = os.path.join(out, "splits.json")
    for path in (corpus_path, split_path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"{path} not found; run the corpus command first")
    corpus = cp.load_corpus(corpus_path, vocab_size=cfg.vocab_size)
    split = cp.load_split(split_path)
    return corpus, split


def _subset(cfg, corpus, split, name, label=None):
    examples = cp.subset_examples(corpus, split, name)
    if label is not None:
        examples = [ex for ex in examples if ex.label == label]
    return [ex.sequence[: cfg.truncate_len] for ex in examples], np.array([ex.label for ex in examples])


# ---------------------------------------------------------------------------
# commands


def cmd_corpus(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg, "corpus")
    corpus = cp.generate_corpus(corpus_spec_from(cfg))
    split = cp.split(corpus, cp.SplitSpec(), seed=cfg.split_seed)
    cp.save_corpus(corpus, os.path.join(out, "corpus.jsonl"))
    cp.save_split(split, os.path.join(out, "splits.json"))
    n_mal = sum(ex.label for ex in corpus)
    print(f"corpus: {len(corpus)} examples ({n_mal} malware, {len(corpus) - n_mal} benign)")
    for name in cp.SUBSET_NAMES:
        print(f"  {name}: {len(split.subset(name))}")
    return 0


def _victim_path(out: str, name: str) -> str:
    return os.path.join(out, f"victim-{name}.ckpt")


def cmd_train_victim(args) -> int:
    cfg = _load(args, victim_epochs=args.epochs, victim_lr=args.lr)
    out = _prepare_out(cfg, f"train-victim-{args.victim}")
    corpus, split = _load_data(cfg, out)
    train_s, train_l = _subset(cfg, corpus, split, "victim_train")
    val_s, val_l = _subset(cfg, corpus, split, "victim_val")
    test_s, test_l = _subset(cfg, corpus, split, "test")

    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(10, _victim_id(args.victim))))
    config = sn.VictimConfig.from_name(args.victim, input_dim=cfg.vocab_size,
                                       hidden=cfg.victim_hidden, attn_hidden=cfg.attn_hidden)
    model = sn.SequenceClassifier.init(config, rng, scale=0.2)
    history = sn.train_classifier(model, train_s, train_l, val_s, val_l,
                                  lr=cfg.victim_lr, epochs=cfg.victim_epochs,
                                  batch_size=cfg.victim_batch, patience=cfg.victim_patience,
                                  seed=cfg.seed, verbose=True)
    model.save(_victim_path(out, args.victim))
    aucs = (ev.auc(train_l, model.score_sequences(train_s)),
            ev.auc(val_l, model.score_sequences(val_s)),
            ev.auc(test_l, model.score_sequences(test_s)))
    with open(os.path.join(out, f"victim-{args.victim}.auc.csv"), "w") as fh:
        fh.write("config,train_auc,val_auc,test_auc\n")
        fh.write(f"{args.victim},{aucs[0]!r},{aucs[1]!r},{aucs[2]!r}\n")
    print(f"{args.victim}: {len(history)} epochs, train/val/test AUC = "
          f"{aucs[0]:.4f}/{aucs[1]:.4f}/{aucs[2]:.4f}")
    return 0


def _victim_id(name: str) -> int:
    return sorted(sn.VICTIM_VARIANTS).index(name)


def cmd_train_attack(args) -> int:
    cfg = _load(args, attack_epochs=args.epochs, temp=args.temp, gamma=args.gamma,
                insert_len=args.insert_len,
                attack_lr_gen=args.lr, attack_lr_sub=args.lr)
    out = _prepare_out(cfg, f"train-attack-{args.victim}")
    corpus, split = _load_data(cfg, out)
    victim_file = _victim_path(out, args.victim)
    if not os.path.exists(victim_file):
        raise FileNotFoundError(f"victim checkpoint {victim_file} not found; train the victim first")
    victim = sn.SequenceClassifier.load(victim_file)
    if victim.config.input_dim != cfg.vocab_size:
        raise ValueError(f"victim checkpoint expects vocabulary {victim.config.input_dim}, "
                         f"corpus has {cfg.vocab_size}")

    train_s, train_l = _subset(cfg, corpus, split, "attacker_train")
    val_mal, _ = _subset(cfg, corpus, split, "attacker_val", label=1)
    malware = [s for s, l in zip(train_s, train_l) if l == 1]
    benign = [s for s, l in zip(train_s, train_l) if l == 0]

    vocab = sn.Vocabulary(cfg.vocab_size)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(11, _victim_id(args.victim))))
    bundle = atk.GeneratorBundle.init(vocab, cfg.gen_hidden,
                                      atk.GumbelConfig(cfg.temp, cfg.insert_len, cfg.gamma), rng)
    substitute = atk.make_substitute(vocab, cfg.sub_hidden, rng)
    train_cfg = atk.AttackTrainConfig(
        epochs=cfg.attack_epochs, patience=cfg.attack_patience,
        batch_malware=cfg.attack_batch_malware, batch_benign=cfg.attack_batch_benign,
        lr_generator=cfg.attack_lr_gen, lr_substitute=cfg.attack_lr_sub, seed=cfg.seed)
    history = atk.train_attack(bundle, substitute, atk.make_label_oracle(victim),
                               malware, benign, val_mal, train_cfg, verbose=True)

    bundle.save(os.path.join(out, f"attack-{args.victim}.generator.ckpt"))
    substitute.save(os.path.join(out, f"attack-{args.victim}.substitute.ckpt"))
    with open(os.path.join(out, f"attack-{args.victim}.log.csv"), "w") as fh:
        fh.write("epoch,loss_substitute,loss_generator,val_success\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['loss_substitute']!r},"
                     f"{row['loss_generator']!r},{row['val_success']!r}\n")
    best = max(h["val_success"] for h in history)
    print(f"attack vs {args.victim}: {len(history)} epochs, best validation success {best:.3f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    out = _prepare_out(cfg, "evaluate")
    corpus, split = _load_data(cfg, out)
    train_s, train_l = _subset(cfg, corpus, split, "victim_train")
    atk_train_mal, _ = _subset(cfg, corpus, split, "attacker_train", label=1)
    test_s, test_l = _subset(cfg, corpus, split, "test")
    test_mal = [s for s, l in zip(test_s, test_l) if l == 1]

    auc_rows = []
    reports = []
    attacked = []
    for name in cfg.victim_names():
        victim_file = _victim_path(out, name)
        if not os.path.exists(victim_file):
            raise FileNotFoundError(f"victim checkpoint {victim_file} not found")
        victim = sn.SequenceClassifier.load(victim_file)
        auc_rows.append((name, ev.auc(train_l, victim.score_sequences(train_s)),
                         ev.auc(test_l, victim.score_sequences(test_s))))

        gen_file = os.path.join(out, f"attack-{name}.generator.ckpt")
        if not os.path.exists(gen_file):
            continue
        bundle = atk.GeneratorBundle.load(gen_file)
        substitute = sn.SequenceClassifier.load(os.path.join(out, f"attack-{name}.substitute.ckpt"))
        train_adv = atk.generate_many(atk_train_mal, bundle, seed=cfg.seed)
        test_adv = atk.generate_many(test_mal, bundle, seed=cfg.seed)
        for r in test_adv:
            r.victim_label = int(victim.score_sequences([r.adversarial])[0] >= 0.5)
            rows = [ad_constant(r.soft[j : j + 1]) for j in range(len(r.soft))]
            r.substitute_prob = float(
                atk.substitute_forward(rows, np.array([len(r.soft)]), substitute).data[0, 0])
        atk.save_attack_results(test_adv, os.path.join(out, f"attack-{name}.adversarial.jsonl"))
        L = bundle.gumbel.insert_len
        inflation = float(np.mean([len(r.adversarial) / len(r.original) for r in test_adv]))
        nulls = float(np.mean([1.0 - len(r.insertion_positions) / (len(r.original) * L)
                               for r in test_adv]))
        reports.append(ev.AttackReport(
            config=name,
            original_train=ev.detection_rate(atk_train_mal, victim),
            adversarial_train=ev.detection_rate([r.adversarial for r in train_adv], victim),
            original_test=ev.detection_rate(test_mal, victim),
            adversarial_test=ev.detection_rate([r.adversarial for r in test_adv], victim),
            length_inflation=inflation,
            null_fraction=nulls,
        ))
        attacked.append((name, bundle, victim))

    ev.emit_victim_auc_csv(auc_rows, os.path.join(out, "victim_auc.csv"))
    print(f"victim_auc.csv: {len(auc_rows)} victims")
    if reports:
        ev.emit_attack_report_csv(reports, os.path.join(out, "attack_report.csv"))
        print(f"attack_report.csv: {len(reports)} attacked victims")
        for rep in reports:
            print(f"  {rep.config}: original {rep.original_test:.3f} -> "
                  f"adversarial {rep.adversarial_test:.3f} (test)")
    if len(attacked) >= 2:
        fns = [atk.make_generate_fn(bundle, seed=cfg.seed) for _, bundle, _ in attacked]
        matrix = ev.transfer_matrix(fns, [v for _, _, v in attacked], test_mal)
        ev.emit_transfer_csv(matrix, [n for n, _, _ in attacked],
                             os.path.join(out, "transfer_matrix.csv"))
        print("transfer_matrix.csv written")
    return 0


_COMMANDS = {
    "corpus": cmd_corpus,
    "train-victim": cmd_train_victim,
    "train-attack": cmd_train_attack,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, ValueError, RuntimeError, OSError) as err:
        sys.stderr.write(f"seqevade {args.command}: {err}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
