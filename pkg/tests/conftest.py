import pytest

from nullmlm.corpus import GrammarConfig, build_grammar, generate_corpus
from nullmlm.corruption import CorruptionConfig
from nullmlm.model import ModelConfig
from nullmlm.pipeline import ExperimentConfig, run_experiment
from nullmlm.trainer import TrainConfig, train
from nullmlm.vocab import build_vocab


@pytest.fixture(scope="session")
def toy_grammar_cfg():
    return GrammarConfig(vocab_size=30, successors_per_symbol=5, length_range=(6, 14), seed=11)


@pytest.fixture(scope="session")
def toy_grammar(toy_grammar_cfg):
    return build_grammar(toy_grammar_cfg)


@pytest.fixture(scope="session")
def toy_vocab(toy_grammar_cfg):
    return build_vocab(toy_grammar_cfg.vocab_size)


@pytest.fixture(scope="session")
def toy_corpus(toy_grammar_cfg):
    return generate_corpus(toy_grammar_cfg, 400)


@pytest.fixture(scope="session")
def toy_model_cfg(toy_vocab):
    return ModelConfig(vocab_size=toy_vocab.size, n_layers=1, n_heads=2,
                       d_model=32, d_ff=64, max_len=64, seed=5)


@pytest.fixture(scope="session")
def toy_model(toy_corpus, toy_vocab, toy_model_cfg):
    """A briefly trained plain masked LM: probabilities are meaningful
    but nothing here depends on detection quality."""
    cfg = TrainConfig(objective="mlm", total_steps=60, batch_size=16, base_lr=2e-3,
                      warmup_steps=10, seed=5, corruption=CorruptionConfig())
    return train(toy_corpus, toy_vocab, cfg, model_cfg=toy_model_cfg).state


@pytest.fixture(scope="session")
def experiment():
    """The full default experiment; shared by every acceptance check
    that needs trained models. Takes several minutes, runs at most once
    per session."""
    return run_experiment(ExperimentConfig())
