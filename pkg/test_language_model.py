"""
Tests del vocabulario, el transformer y los checkpoints.
"""
import numpy as np
import pytest

from autodiff.tensor import Tensor, no_grad
from base_trainer import BaseTrainingConfig, batch_loss, label_targets, train_base
from checkpoints import load_model, load_prompt, save_model, save_prompt
from conftest import GENERIC, build_model
from core.errors import (ArtifactMissingError, ConfigError, ContextOverflowError, IntegrityError,
                         ShapeError, VocabIndexError)
from dataset_builder import Example
from language_model import LanguageModel, ModelConfig
from prompt_unlearner import PromptBank
from vocabulary import BOS, PAD, UNK, Vocabulary, label_token, segment


class TestVocabulary:
    def setup_method(self):
        self.texts = ['the movie was great', 'the plot was dull !', 'Great cast']
        self.vocab = Vocabulary.build(self.texts, ('negative', 'positive'), GENERIC)

    def test_segment_lowercases_and_splits_punctuation(self):
        assert segment('Great cast, really!') == ['great', 'cast', ',', 'really', '!']

    def test_reserved_tokens_come_first(self):
        assert self.vocab.tokens[:3] == [PAD, BOS, UNK]
        for label in ('negative', 'positive') + GENERIC:
            assert label_token(label) in self.vocab.index

    def test_build_is_deterministic(self):
        again = Vocabulary.build(list(reversed(self.texts)), ('negative', 'positive'), GENERIC)
        assert again.tokens == self.vocab.tokens

    def test_unknown_word_maps_to_unk(self):
        ids = self.vocab.tokenize('the zebra')
        assert ids[1] == self.vocab.unk_id

    def test_encode_prepends_bos(self):
        assert self.vocab.encode('great')[0] == self.vocab.bos_id

    def test_detokenize_out_of_range(self):
        with pytest.raises(VocabIndexError):
            self.vocab.detokenize([len(self.vocab)])

    def test_generic_labels_must_be_disjoint(self):
        with pytest.raises(IntegrityError):
            Vocabulary.build(self.texts, ('positive', 'neutral'), GENERIC)

    def test_max_size_keeps_most_frequent(self):
        small = Vocabulary.build(self.texts, ('negative', 'positive'), GENERIC, max_size=11)
        assert len(small) == 11
        assert 'the' in small.index and 'was' in small.index

    def test_label_ids_sorted(self):
        ids = self.vocab.label_ids
        assert ids == sorted(ids)
        assert len(ids) == 5
        assert self.vocab.label_name(ids[self.vocab.label_position('positive')]) == 'positive'

    def test_unknown_label(self):
        with pytest.raises(VocabIndexError):
            self.vocab.label_id('maybe')

    def test_dict_roundtrip(self):
        assert Vocabulary.from_dict(self.vocab.to_dict()).tokens == self.vocab.tokens


class TestModelConfig:
    def test_presets(self):
        config = ModelConfig.from_preset('tiny', 50)
        assert (config.d_model, config.n_layers, config.n_heads) == (16, 1, 2)

    def test_override_ignores_zero(self):
        config = ModelConfig.from_preset('small', 50, d_model=0, n_layers=3)
        assert config.d_model == 32 and config.n_layers == 3

    def test_heads_must_divide_width(self):
        with pytest.raises(ConfigError):
            ModelConfig(vocab_size=10, d_model=10, n_heads=3)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_preset('huge', 10)


class TestLanguageModel:
    def setup_method(self):
        self.examples = [
            Example('a', 'the movie was great', 'positive'),
            Example('b', 'the plot was dull', 'negative'),
            Example('c', 'i found the cast charming and great', 'positive'),
        ]
        self.model = build_model(self.examples)
        self.model.params.freeze()

    def test_same_seed_same_weights(self):
        other = build_model(self.examples, seed=0)
        assert other.params.fingerprint() == self.model.params.fingerprint()
        assert build_model(self.examples, seed=1).params.fingerprint() != self.model.params.fingerprint()

    def test_causal_mask(self):
        ids = np.asarray([self.model.vocab.encode('i found the cast charming and great')])
        changed = ids.copy()
        changed[0, 4] = self.model.vocab.index['dull']
        with no_grad():
            a = self.model.forward_hidden(self.model.embed(ids)).data
            b = self.model.forward_hidden(self.model.embed(changed)).data
        assert np.allclose(a[0, :4], b[0, :4], atol=1e-12)
        assert not np.allclose(a[0, 4:], b[0, 4:])

    def test_padding_does_not_change_prediction(self):
        short = self.model.vocab.encode('the movie was great')
        long = self.model.vocab.encode('i found the cast charming and great')
        _, alone = self.model.predict_batch([short])
        _, batched = self.model.predict_batch([short, long])
        assert np.allclose(alone[0], batched[0], atol=1e-12)

    def test_zero_head_gives_uniform_distribution(self):
        self.model.params['head'].data[:] = 0.0
        pred, probs = self.model.predict_label(self.model.vocab.encode('the movie was great'))
        n_labels = len(self.model.label_ids)
        assert np.allclose(probs, 1.0 / n_labels)
        # empate: gana el id de token menor
        assert pred == self.model.label_ids[0]

    def test_label_logits_shape(self):
        sequences = self.model.encode_texts([ex.text for ex in self.examples])
        with no_grad():
            logits = self.model.label_logits(sequences)
        assert logits.shape == (3, 5)

    def test_empty_prompt_is_neutral(self):
        bank = PromptBank(Tensor(np.zeros((0, self.model.config.d_model))))
        sequences = self.model.encode_texts([ex.text for ex in self.examples])
        with no_grad():
            plain = self.model.label_logits(sequences).data
            prompted = self.model.label_logits(sequences, bank).data
        assert np.array_equal(plain, prompted)

    def test_context_overflow(self):
        too_long = [self.model.vocab.bos_id] + [self.model.vocab.unk_id] * self.model.config.context_length
        with pytest.raises(ContextOverflowError):
            self.model.predict_batch([too_long])

    def test_empty_sequence_rejected(self):
        with pytest.raises(ShapeError):
            self.model.pad_batch([[]])

    def test_pooled_states_shape(self):
        states = self.model.pooled_states(self.model.encode_texts([ex.text for ex in self.examples]))
        assert states.shape == (3, self.model.config.d_model)

    def test_vocab_size_mismatch(self):
        config = ModelConfig.from_preset('tiny', len(self.model.vocab) + 1)
        with pytest.raises(ShapeError):
            LanguageModel(config, self.model.vocab, self.model.params)


class TestBaseTraining:
    def setup_method(self):
        self.examples = [Example('a', 'the movie was great', 'positive')]
        self.model = build_model(self.examples + [Example('b', 'the plot was dull', 'negative')])

    def test_overfits_single_example(self):
        _, log = train_base(self.model, self.examples, BaseTrainingConfig(epochs=80, lr=0.01, batch_size=1))
        pred, _ = self.model.predict_label(self.model.vocab.encode('the movie was great'))
        assert self.model.vocab.label_name(pred) == 'positive'
        assert log.epochs[-1].mean_loss < 1e-3
        with no_grad():
            final = batch_loss(self.model, [self.model.vocab.encode('the movie was great')],
                               label_targets(self.model, self.examples)).item()
        assert final < 1e-3
        assert len(log.epoch_seconds) == 80

    def test_loss_non_increasing_over_first_epochs(self, tiny_model, corpus):
        train, _ = corpus
        # un batch por época: la pérdida de cada época es la del modelo antes del paso
        _, log = train_base(tiny_model, train, BaseTrainingConfig(epochs=3, lr=0.001, batch_size=64))
        losses = [e.mean_loss for e in log.epochs]
        assert len(losses) == 3
        assert losses[0] >= losses[1] >= losses[2]

    def test_zero_epochs_keeps_initial_model(self):
        before = self.model.params.fingerprint()
        _, log = train_base(self.model, self.examples, BaseTrainingConfig(epochs=0))
        assert self.model.params.fingerprint() == before
        assert log.epochs == []

    def test_frozen_model_rejected(self):
        self.model.params.freeze()
        with pytest.raises(ConfigError):
            train_base(self.model, self.examples, BaseTrainingConfig(epochs=1))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ConfigError):
            train_base(self.model, [], BaseTrainingConfig(epochs=1))


class TestCheckpoints:
    def setup_method(self):
        self.model = build_model([Example('a', 'the movie was great', 'positive'),
                                  Example('b', 'the plot was dull', 'negative')])
        self.model.params.freeze()

    def test_model_roundtrip(self, tmp_path):
        path = tmp_path / 'base.ckpt'
        save_model(path, self.model, 'abc123', 7)
        loaded, header = load_model(path)
        assert loaded.params.fingerprint() == self.model.params.fingerprint()
        assert loaded.params.frozen
        assert header['config_digest'] == 'abc123' and header['seed'] == 7
        seq = self.model.vocab.encode('the movie was great')
        assert np.array_equal(loaded.predict_label(seq)[1], self.model.predict_label(seq)[1])

    def test_identical_bytes_for_identical_models(self, tmp_path):
        save_model(tmp_path / 'a.ckpt', self.model, 'x', 0)
        save_model(tmp_path / 'b.ckpt', self.model.clone(frozen=True), 'x', 0)
        assert (tmp_path / 'a.ckpt').read_bytes() == (tmp_path / 'b.ckpt').read_bytes()

    def test_corrupted_blob(self, tmp_path):
        path = tmp_path / 'base.ckpt'
        save_model(path, self.model, 'x', 0)
        raw = bytearray(path.read_bytes())
        raw[-3] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(IntegrityError):
            load_model(path)

    @pytest.mark.parametrize('keep', [-10, 20, 40])
    def test_truncated_file(self, tmp_path, keep):
        path = tmp_path / 'base.ckpt'
        save_model(path, self.model, 'x', 0)
        raw = path.read_bytes()
        path.write_bytes(raw[:keep])
        with pytest.raises(IntegrityError):
            load_model(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / 'bad.ckpt'
        path.write_bytes(b'NOTSPUL!' + bytes(16))
        with pytest.raises(IntegrityError):
            load_model(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactMissingError):
            load_model(tmp_path / 'nope.ckpt')

    def test_prompt_roundtrip(self, tmp_path):
        phi = np.random.default_rng(0).normal(size=(3, self.model.config.d_model))
        bank = PromptBank(Tensor(phi), seed=5, init='gaussian')
        save_prompt(tmp_path / 'p.ckpt', bank, 'digest')
        loaded, header = load_prompt(tmp_path / 'p.ckpt')
        assert np.array_equal(loaded.phi.data, phi)
        assert loaded.phi.requires_grad
        assert (loaded.seed, loaded.init, header['p']) == (5, 'gaussian', 3)

    def test_prompt_file_is_not_a_model(self, tmp_path):
        bank = PromptBank(Tensor(np.zeros((2, self.model.config.d_model))))
        save_prompt(tmp_path / 'p.ckpt', bank, 'digest')
        with pytest.raises(IntegrityError):
            load_model(tmp_path / 'p.ckpt')
