"""Depth-ladder comparisons on noisy synthetic corpora.

Trains a residual deep model, a plain deep model, and a plain shallow model
on the *same* corpus with the *same* seed, then scores each on held-out
precision at fixed cutoffs. Pairing corpus and initialization per seed makes
the across-variant deltas a controlled comparison: only depth and shortcuts
differ.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import dataset as ds
from . import embeddings as em
from . import evaluation as ev
from . import model as md
from . import training as tr

RUNGS = (
    ("rescnn_9", "rescnn_x", 9),
    ("cnn_9", "cnn_x", 9),
    ("cnn_5", "cnn_x", 5),
)


@dataclass(frozen=True)
class LadderConfig:
    """Corpus, architecture, and optimization knobs for one ladder run."""

    noise_rate: float = 0.3
    num_relations: int = 7
    vocab_size: int = 300
    triggers_per_relation: int = 2
    min_len: int = 22
    max_len: int = 30
    na_fraction: float = 0.25
    num_train: int = 5000
    num_test: int = 1000
    sent_len: int = 30
    word_dim: int = 50
    pos_dim: int = 5
    min_distance: int = -30
    max_distance: int = 30
    window: int = 3
    filters: int = 32
    keep_prob: float = 0.5
    batch_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 9
    cutoffs: tuple = (10, 20, 50)

    def embedding(self):
        return em.EmbeddingConfig(
            word_dim=self.word_dim,
            pos_dim=self.pos_dim,
            min_distance=self.min_distance,
            max_distance=self.max_distance,
            sent_len=self.sent_len,
        )

    def synth(self, seed):
        return ds.SynthConfig(
            num_relations=self.num_relations,
            vocab_size=self.vocab_size,
            triggers_per_relation=self.triggers_per_relation,
            min_len=self.min_len,
            max_len=self.max_len,
            noise_rate=self.noise_rate,
            na_fraction=self.na_fraction,
            num_train=self.num_train,
            num_test=self.num_test,
            seed=seed,
        )


def run_rung(lcfg, variant, conv_layers, train_set, test_set, gold, schema, vocab, seed):
    """Train one variant and return its mean precision over the cutoffs."""
    num_classes = schema.num_relations
    config = md.ModelConfig(
        variant=variant,
        conv_layers=conv_layers,
        window=lcfg.window,
        filters=lcfg.filters,
        fc_widths=md.default_fc_widths(variant, lcfg.filters, num_classes),
        keep_prob=lcfg.keep_prob,
        num_relations=num_classes,
        embedding=lcfg.embedding(),
    )
    model = md.build_model(config, seed=seed, vocab=vocab, schema=schema)
    tr.train(
        model,
        train_set,
        tr.TrainConfig(
            batch_size=lcfg.batch_size,
            learning_rate=lcfg.learning_rate,
            epochs=lcfg.epochs,
            seed=seed,
        ),
    )
    report = ev.evaluate(model, test_set, gold, ns=lcfg.cutoffs)
    return report.p_at.mean


def run_ladder_seed(lcfg, seed):
    """All three rungs on one shared corpus; returns {rung name: mean P@N}."""
    scfg = lcfg.synth(seed)
    train_set, test_set, gold = ds.synth_generate(scfg)
    schema = ds.synth_schema(scfg)
    vocab = em.Vocabulary.from_corpus(train_set)
    return {
        name: run_rung(lcfg, variant, layers, train_set, test_set, gold, schema, vocab, seed)
        for name, variant, layers in RUNGS
    }


def run_ladder(lcfg, seeds):
    """Per-rung score lists across seeds: {rung name: [mean P@N per seed]}."""
    scores = {name: [] for name, _, _ in RUNGS}
    for seed in seeds:
        for name, value in run_ladder_seed(lcfg, seed).items():
            scores[name].append(value)
    return scores


def summarize(scores):
    """Mean score per rung, over however many seeds were run."""
    return {name: sum(vals) / len(vals) for name, vals in scores.items()}
