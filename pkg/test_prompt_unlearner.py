"""
Tests del desaprendizaje por soft prompts: inicialización, prepend, pérdidas
y bucle de entrenamiento.
"""
import math

import numpy as np
import pytest

from autodiff.gradcheck import check_gradients
from autodiff.tensor import Tensor, current_tape, no_grad
from base_trainer import batch_loss, label_targets
from core.errors import ConfigError, ContextOverflowError, DivergenceError, IntegrityError, ShapeError
from prompt_unlearner import (GenericAssignment, PromptBank, UnlearnConfig, count_trainable, forget_loss,
                              init_prompt, kl_loss, prepend, retain_loss, total_loss, unlearn_train)
from split_manager import UnlearnSplit

GENERIC = ('neutral', 'unknown', 'none')


class TestPromptInit:
    def test_vocab_init_copies_embedding_rows(self, frozen_model):
        bank = init_prompt(UnlearnConfig(p=5, seed=2), frozen_model)
        table = frozen_model.params['tok_emb'].data
        assert bank.phi.shape == (5, frozen_model.config.d_model)
        for row in bank.phi.data:
            assert np.any(np.all(np.isclose(table, row), axis=1))
        assert bank.phi.requires_grad

    def test_gaussian_init(self, frozen_model):
        bank = init_prompt(UnlearnConfig(p=20, seed=0, init='gaussian', init_std=0.02), frozen_model)
        assert abs(bank.phi.data.std() - 0.02) < 0.005

    def test_same_seed_same_prompt(self, frozen_model):
        a = init_prompt(UnlearnConfig(p=4, seed=9), frozen_model)
        b = init_prompt(UnlearnConfig(p=4, seed=9), frozen_model)
        assert np.array_equal(a.phi.data, b.phi.data)

    def test_prompt_must_fit_context(self, frozen_model):
        with pytest.raises(ConfigError):
            init_prompt(UnlearnConfig(p=frozen_model.config.context_length), frozen_model)

    def test_init_does_not_alias_embedding_table(self, frozen_model):
        bank = init_prompt(UnlearnConfig(p=3), frozen_model)
        before = frozen_model.params.fingerprint()
        bank.phi.data += 1.0
        assert frozen_model.params.fingerprint() == before

    def test_trainable_count(self, frozen_model):
        bank = init_prompt(UnlearnConfig(p=30), frozen_model)
        assert count_trainable(bank) == 30 * 16


class TestPrepend:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.bank = PromptBank(Tensor(rng.normal(size=(3, 4))))
        self.x = Tensor(rng.normal(size=(5, 4)))

    def test_single_sequence(self):
        out = prepend(self.bank, self.x)
        assert out.shape == (8, 4)
        assert np.array_equal(out.data[:3], self.bank.phi.data)
        assert np.array_equal(out.data[3:], self.x.data)

    def test_batch_shares_prompt(self):
        batch = Tensor(np.random.default_rng(1).normal(size=(2, 5, 4)))
        out = prepend(self.bank, batch)
        assert out.shape == (2, 8, 4)
        assert np.array_equal(out.data[0, :3], out.data[1, :3])

    def test_empty_prompt_is_identity(self):
        bank = PromptBank(Tensor(np.zeros((0, 4))))
        assert prepend(bank, self.x) is self.x

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            prepend(self.bank, Tensor(np.zeros((5, 6))))

    def test_context_overflow(self):
        with pytest.raises(ContextOverflowError):
            prepend(self.bank, self.x, context_length=7)

    def test_gradient_reaches_phi_only(self):
        x = Tensor(self.x.data, requires_grad=False)
        prepend(self.bank, x).sum().backward()
        assert np.array_equal(self.bank.phi.grad, np.ones((3, 4)))
        assert x.grad is None


class TestGenericAssignment:
    def test_deterministic_and_within_generic(self, entity_split):
        a = GenericAssignment.draw(entity_split.train_forget, GENERIC, seed=1)
        b = GenericAssignment.draw(entity_split.train_forget, GENERIC, seed=1)
        assert a.targets == b.targets
        assert set(a.targets.values()) <= set(GENERIC)
        assert sum(a.counts().values()) == len(entity_split.train_forget)

    def test_empty_generic_set(self, entity_split):
        with pytest.raises(IntegrityError):
            GenericAssignment.draw(entity_split.train_forget, (), seed=0)

    def test_unassigned_example(self, entity_split):
        assignment = GenericAssignment.draw(entity_split.train_forget, GENERIC, seed=0)
        with pytest.raises(IntegrityError):
            assignment.label_for('missing-id')


class TestLosses:
    def test_forget_loss_with_zero_head(self, frozen_model, entity_split):
        frozen_model.params['head'].data[:] = 0.0
        bank = init_prompt(UnlearnConfig(p=2), frozen_model)
        assignment = GenericAssignment.draw(entity_split.train_forget, GENERIC, seed=0)
        loss = forget_loss(frozen_model, bank, entity_split.train_forget, assignment)
        assert loss.item() == pytest.approx(math.log(5), abs=1e-9)

    def test_empty_batches_contribute_zero(self, frozen_model):
        bank = init_prompt(UnlearnConfig(p=2), frozen_model)
        assert retain_loss(frozen_model, bank, []).item() == 0.0
        assert kl_loss(frozen_model, bank, []).item() == 0.0

    def test_kl_is_zero_without_prompt(self, frozen_model, entity_split):
        bank = init_prompt(UnlearnConfig(p=0), frozen_model)
        assert kl_loss(frozen_model, bank, entity_split.train_retain[:8]).item() == pytest.approx(0.0, abs=1e-12)

    def test_retain_loss_without_prompt_is_base_loss(self, frozen_model, entity_split):
        bank = init_prompt(UnlearnConfig(p=0), frozen_model)
        retain = entity_split.train_retain[:8]
        with no_grad():
            prompted = retain_loss(frozen_model, bank, retain).item()
            base = batch_loss(frozen_model, frozen_model.encode_texts([ex.text for ex in retain]),
                              label_targets(frozen_model, retain)).item()
        assert prompted == base

    def test_total_is_weighted_sum(self, frozen_model, entity_split):
        bank = init_prompt(UnlearnConfig(p=3), frozen_model)
        forget, retain = entity_split.train_forget[:4], entity_split.train_retain[:6]
        assignment = GenericAssignment.draw(entity_split.train_forget, GENERIC, seed=0)
        total, parts = total_loss(frozen_model, bank, forget, retain, assignment, alpha=0.7, beta=0.3)
        assert parts.total == pytest.approx(parts.forget + 0.7 * parts.retain + 0.3 * parts.kl, rel=1e-12)
        assert total.item() == parts.total
        with no_grad():
            assert parts.retain == pytest.approx(retain_loss(frozen_model, bank, retain).item(), rel=1e-12)
            assert parts.kl == pytest.approx(kl_loss(frozen_model, bank, retain).item(), rel=1e-12)
        current_tape().clear()

    def test_gradient_only_into_phi(self, frozen_model, entity_split):
        bank = init_prompt(UnlearnConfig(p=3), frozen_model)
        assignment = GenericAssignment.draw(entity_split.train_forget, GENERIC, seed=0)
        total, _ = total_loss(frozen_model, bank, entity_split.train_forget[:4], entity_split.train_retain[:4],
                              assignment, alpha=1.0, beta=0.5)
        total.backward()
        assert bank.phi.grad is not None and np.any(bank.phi.grad != 0)
        assert all(t.grad is None for t in frozen_model.params.parameters())
        assert len(current_tape()) == 0

    def test_phi_gradient_matches_finite_differences(self, frozen_model, entity_split):
        bank = init_prompt(UnlearnConfig(p=2), frozen_model)
        forget, retain = entity_split.train_forget[:3], entity_split.train_retain[:3]
        assignment = GenericAssignment.draw(entity_split.train_forget, GENERIC, seed=0)

        def objective(phi):
            return total_loss(frozen_model, PromptBank(phi), forget, retain, assignment, 1.0, 0.5)[0]

        errors = check_gradients(objective, [bank.phi])
        assert errors[0] < 1e-4


class TestUnlearnTrain:
    def test_base_model_untouched(self, frozen_model, entity_split):
        before = frozen_model.params.fingerprint()
        bank, log = unlearn_train(frozen_model, entity_split, UnlearnConfig(p=4, epochs=2, lr=0.01, batch_size=8))
        assert frozen_model.params.fingerprint() == before
        assert log.trainable_params == 4 * 16
        assert log.total_params == frozen_model.params.num_parameters()
        assert len(log.epochs) == 2
        assert set(log.epochs[0].components) == {'forget', 'retain', 'kl'}

    def test_deterministic(self, frozen_model, entity_split):
        config = UnlearnConfig(p=3, epochs=2, lr=0.01, batch_size=8, seed=5)
        a, log_a = unlearn_train(frozen_model, entity_split, config)
        b, log_b = unlearn_train(frozen_model, entity_split, config)
        assert np.array_equal(a.phi.data, b.phi.data)
        assert [s.total for s in log_a.steps] == [s.total for s in log_b.steps]

    def test_forget_loss_decreases(self, frozen_model, entity_split):
        config = UnlearnConfig(p=4, epochs=20, lr=0.003, batch_size=64, alpha=0.0, beta=0.0)
        _, log = unlearn_train(frozen_model, entity_split, config)
        assert log.epochs[-1].components['forget'] < log.epochs[0].components['forget']

    def test_requires_frozen_model(self, tiny_model, entity_split):
        with pytest.raises(ConfigError):
            unlearn_train(tiny_model, entity_split, UnlearnConfig(p=2, epochs=1))

    def test_empty_forget_set(self, frozen_model, entity_split):
        split = UnlearnSplit([], entity_split.train_retain, [], entity_split.test_retain, GENERIC)
        with pytest.raises(IntegrityError):
            unlearn_train(frozen_model, split, UnlearnConfig(p=2, epochs=1))

    def test_divergence_keeps_last_finite_prompt(self, frozen_model, entity_split):
        frozen_model.params['head'].data[:, frozen_model.label_ids[0]] = np.nan
        with pytest.raises(DivergenceError) as exc:
            unlearn_train(frozen_model, entity_split, UnlearnConfig(p=2, epochs=1))
        assert exc.value.step == 0
        assert np.all(np.isfinite(exc.value.last_good.phi.data))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            UnlearnConfig(alpha=-1.0)
        with pytest.raises(ConfigError):
            UnlearnConfig(lr=0.0)
        with pytest.raises(ConfigError):
            UnlearnConfig(init='zeros')
