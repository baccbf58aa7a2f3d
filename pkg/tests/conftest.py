import pytest

from mtod.serialize import ContextSpec, serialize_corpus
from mtod.synth import SynthConfig, generate_synthetic
from mtod.vocab import build_vocab


@pytest.fixture(scope="session")
def corpus():
    """The default desk-scale corpus used across the suite."""
    return generate_synthetic(SynthConfig(), seed=1)


@pytest.fixture(scope="session")
def vocab(corpus):
    return build_vocab(corpus, 500)


@pytest.fixture(scope="session")
def context_spec():
    return ContextSpec()


@pytest.fixture(scope="session")
def sequences(corpus, vocab, context_spec):
    return serialize_corpus(corpus, context_spec, vocab)


@pytest.fixture(scope="session")
def tiny_corpus():
    """A small corpus for tests that train or serialize repeatedly."""
    return generate_synthetic(
        SynthConfig(scenes_count=4, dialogues_count=10, turns_per_dialogue=(1, 2)), seed=7)


@pytest.fixture(scope="session")
def tiny_vocab(tiny_corpus):
    return build_vocab(tiny_corpus, 40)
