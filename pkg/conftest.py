"""
Fixtures compartidos: corpus diminuto, vocabulario y modelo 'tiny'.
"""
import pytest

from dataset_builder import Example, generate_synthetic
from language_model import LanguageModel, ModelConfig
from split_manager import partition_by_entities
from vocabulary import Vocabulary

GENERIC = ('neutral', 'unknown', 'none')


def build_model(examples, seed=0, generic=GENERIC, context_length=32, preset='tiny'):
    vocab = Vocabulary.build([ex.text for ex in examples], sorted({ex.label for ex in examples}), generic)
    config = ModelConfig.from_preset(preset, len(vocab), context_length=context_length)
    return LanguageModel.initialize(config, vocab, seed)


@pytest.fixture
def corpus():
    train = generate_synthetic(48, n_entities=4, seed=3, id_prefix='tr')
    test = generate_synthetic(16, n_entities=4, seed=4, id_prefix='te')
    return train, test


@pytest.fixture
def tiny_model(corpus):
    train, test = corpus
    return build_model(list(train) + list(test))


@pytest.fixture
def frozen_model(tiny_model):
    tiny_model.params.freeze()
    return tiny_model


@pytest.fixture
def entity_split(corpus):
    train, test = corpus
    return partition_by_entities(train, test, ['marlowe', 'quentin'], GENERIC, require_forget=True)


@pytest.fixture
def handmade():
    return [
        Example('a', 'the movie was great', 'positive'),
        Example('b', 'marlowe made the film awful', 'negative', ('marlowe',)),
        Example('c', 'i found the plot dull', 'negative'),
        Example('d', 'quentin was brilliant', 'positive', ('quentin',)),
    ]
