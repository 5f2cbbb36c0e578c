"""
Tests del corpus sintético, la validación JSONL, las particiones y el
k-means coseno.
"""
import json

import numpy as np
import pytest

from clustering import ClusterModel, kmeans_cosine, normalize_rows
from core.errors import ConfigError, DatasetValidationError, IntegrityError
from core.seeding import STREAMS, substream
from dataset_builder import (Example, SyntheticConfig, entity_bank, generate_synthetic, generate_train_test,
                             interleaved_batches, iter_batches, load_jsonl, save_jsonl, task_labels)
from split_manager import (UnlearnSplit, choose_clusters, choose_entities, load_manifest, mentions_any,
                           partition_by_clusters, partition_by_entities, partition_by_topic, save_manifest,
                           subsample_forget)

GENERIC = ('neutral', 'unknown', 'none')


class TestSeeding:
    def test_streams_are_independent(self):
        a = substream(0, 'data').random(4)
        b = substream(0, 'init').random(4)
        assert not np.array_equal(a, b)
        assert np.array_equal(a, substream(0, 'data').random(4))

    def test_unknown_stream(self):
        with pytest.raises(ValueError):
            substream(0, 'weather')
        assert 'subsample' in STREAMS


class TestSyntheticCorpus:
    def test_balance(self):
        examples = generate_synthetic(100, label_balance=0.3, seed=1)
        assert sum(ex.label == 'positive' for ex in examples) == 30

    def test_deterministic(self):
        a = generate_synthetic(20, seed=7)
        b = generate_synthetic(20, seed=7)
        assert a == b
        assert a != generate_synthetic(20, seed=8)

    def test_entities_appear_in_text(self):
        for ex in generate_synthetic(60, n_entities=3, entity_rate=1.0, seed=2):
            assert len(ex.entities) == 1
            assert ex.entities[0] in ex.text.split()

    def test_no_entities(self):
        assert all(not ex.entities for ex in generate_synthetic(20, entity_rate=0.0))

    def test_entity_bank_extends_past_names(self):
        bank = entity_bank(25)
        assert len(bank) == len(set(bank)) == 25
        assert bank[-1] == 'entity24'

    def test_mcqa(self):
        examples = generate_synthetic(40, task='mcqa', seed=0)
        assert task_labels(examples) == ('A', 'B', 'C', 'D')
        assert {ex.topic for ex in examples} == {'hazard', 'science'}
        for ex in examples:
            assert ex.text.startswith('question :')

    def test_train_and_test_do_not_share_ids(self):
        train, test, entities = generate_train_test(SyntheticConfig(n_train=30, n_test=10, n_entities=4))
        assert not {ex.id for ex in train} & {ex.id for ex in test}
        assert len(entities) == 4

    def test_unknown_task(self):
        with pytest.raises(ConfigError):
            generate_synthetic(5, task='translation')


class TestJsonl:
    def test_roundtrip(self, tmp_path):
        examples = generate_synthetic(10, seed=0)
        save_jsonl(tmp_path / 'd.jsonl', examples)
        assert load_jsonl(tmp_path / 'd.jsonl') == examples

    @pytest.mark.parametrize('line,fragment', [
        ('{"id": "a", "text": "hi"}', "falta el campo 'label'"),
        ('{"id": "a", "text": 3, "label": "x"}', "debe ser texto"),
        ('{"id": "a", "text": "hi", "label": "x", "extra": 1}', 'campos desconocidos'),
        ('{"id": "a", "text": "hi", "label": "x", "entities": "marlowe"}', "'entities'"),
        ('{"id": "a", "text": "hi", "label": "x", "cluster_id": "2"}', "'cluster_id'"),
        ('[1, 2]', 'objeto JSON'),
        ('{not json', 'JSON inválido'),
    ])
    def test_invalid_records_name_the_line(self, tmp_path, line, fragment):
        path = tmp_path / 'bad.jsonl'
        path.write_text('{"id": "ok", "text": "fine", "label": "positive"}\n' + line + '\n', encoding='utf-8')
        with pytest.raises(DatasetValidationError) as exc:
            load_jsonl(path)
        assert exc.value.line_number == 2
        assert fragment in str(exc.value)

    def test_duplicate_ids(self, tmp_path):
        path = tmp_path / 'dup.jsonl'
        record = json.dumps({'id': 'a', 'text': 'x', 'label': 'positive'})
        path.write_text(record + '\n\n' + record + '\n', encoding='utf-8')
        with pytest.raises(DatasetValidationError) as exc:
            load_jsonl(path)
        assert exc.value.line_number == 3


class TestBatching:
    def test_iter_batches_covers_all(self):
        batches = list(iter_batches(10, 4, np.random.default_rng(0)))
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(np.concatenate(batches).tolist()) == list(range(10))

    def test_interleaved_steps_follow_forget(self):
        pairs = list(interleaved_batches(5, 12, 2, np.random.default_rng(0)))
        assert len(pairs) == 3
        assert sorted(np.concatenate([f for f, _ in pairs]).tolist()) == list(range(5))
        assert all(len(r) == 2 for _, r in pairs)

    def test_small_retain_cycles(self):
        pairs = list(interleaved_batches(6, 3, 4, np.random.default_rng(0)))
        assert all(sorted(r.tolist()) == [0, 1, 2] for _, r in pairs)

    def test_no_forget_walks_retain(self):
        pairs = list(interleaved_batches(0, 7, 3, np.random.default_rng(0)))
        assert len(pairs) == 3
        assert all(len(f) == 0 for f, _ in pairs)


class TestEntityPartition:
    def test_forget_is_exactly_the_mentions(self, corpus):
        train, test = corpus
        split = partition_by_entities(train, test, ['Marlowe'], GENERIC)
        assert all('marlowe' in ex.text.split() for ex in split.train_forget + split.test_forget)
        assert all('marlowe' not in ex.text.split() for ex in split.train_retain + split.test_retain)
        split.validate(train, test)
        assert split.provenance['lexicon'] == ['marlowe']

    def test_token_match_is_exact(self):
        ex = Example('x', 'the marlowes were great', 'positive')
        assert not mentions_any(ex, ['marlowe'])
        assert mentions_any(Example('y', 'Marlowe , great', 'positive'), ['marlowe'])

    def test_empty_forget_warns_or_raises(self, corpus):
        train, test = corpus
        split = partition_by_entities(train, test, ['nobody'], GENERIC)
        assert split.train_forget == []
        with pytest.raises(IntegrityError):
            partition_by_entities(train, test, ['nobody'], GENERIC, require_forget=True)

    def test_choose_entities_is_seeded(self):
        lexicon = entity_bank(10)
        assert choose_entities(lexicon, 3, 0) == choose_entities(lexicon, 3, 0)
        assert len(choose_entities(lexicon, 3, 0)) == 3
        with pytest.raises(ConfigError):
            choose_entities(lexicon, 11, 0)


class TestTopicPartition:
    def test_by_topic(self):
        train = generate_synthetic(30, task='mcqa', seed=0, id_prefix='tr')
        test = generate_synthetic(10, task='mcqa', seed=1, id_prefix='te')
        split = partition_by_topic(train, test, ['hazard'], ('E',))
        assert {ex.topic for ex in split.train_forget} == {'hazard'}
        assert {ex.topic for ex in split.train_retain} == {'science'}
        assert len(split.train_forget) + len(split.train_retain) == 30


class TestSplitValidation:
    def test_overlap_detected(self, entity_split):
        broken = UnlearnSplit(entity_split.train_forget, entity_split.train_retain + entity_split.train_forget[:1],
                              entity_split.test_forget, entity_split.test_retain)
        with pytest.raises(IntegrityError):
            broken.validate()

    def test_test_leak_detected(self, entity_split):
        broken = UnlearnSplit(entity_split.train_forget, entity_split.train_retain,
                              entity_split.test_forget, entity_split.test_retain + entity_split.train_retain[:1])
        with pytest.raises(IntegrityError):
            broken.validate()

    def test_coverage(self, corpus, entity_split):
        train, test = corpus
        with pytest.raises(IntegrityError):
            entity_split.validate(train[:-1], test)

    def test_manifest_roundtrip(self, tmp_path, corpus, entity_split):
        train, test = corpus
        save_manifest(tmp_path / 'split.json', entity_split, 'digest', 0)
        loaded, manifest = load_manifest(tmp_path / 'split.json', train, test)
        assert manifest['config_digest'] == 'digest'
        assert loaded.subsets() == entity_split.subsets()
        assert loaded.generic_labels == GENERIC

    def test_manifest_with_unknown_id(self, tmp_path, corpus, entity_split):
        train, test = corpus
        manifest = entity_split.to_manifest()
        manifest['members']['train_forget'].append('ghost')
        (tmp_path / 'split.json').write_text(json.dumps(manifest), encoding='utf-8')
        with pytest.raises(IntegrityError):
            load_manifest(tmp_path / 'split.json', train, test)


class TestSubsample:
    def test_keeps_floor_in_order(self, entity_split):
        n = len(entity_split.train_forget)
        out = subsample_forget(entity_split, 0.5, seed=0)
        assert len(out.train_forget) == n // 2
        order = [entity_split.train_forget.index(ex) for ex in out.train_forget]
        assert order == sorted(order)
        assert out.train_retain == entity_split.train_retain
        assert out.test_forget == entity_split.test_forget
        assert out.provenance['tau'] == 0.5

    def test_tau_one_is_identity(self, entity_split):
        assert subsample_forget(entity_split, 1.0) is entity_split

    @pytest.mark.parametrize('tau', [0.0, 1.5, -0.1])
    def test_out_of_range(self, entity_split, tau):
        with pytest.raises(ConfigError):
            subsample_forget(entity_split, tau)


class TestKMeansCosine:
    def test_recovers_antipodal_clusters(self):
        rng = np.random.default_rng(0)
        a = np.array([1.0, 0.0, 0.0]) + 0.05 * rng.normal(size=(20, 3))
        b = np.array([-1.0, 0.0, 0.0]) + 0.05 * rng.normal(size=(20, 3))
        model = kmeans_cosine(np.vstack([a, b]), 2, seed=0)
        labels = model.assign(np.vstack([a, b]))
        assert len(set(labels[:20])) == 1 and len(set(labels[20:])) == 1
        assert labels[0] != labels[20]
        assert model.converged

    def test_objective_never_decreases(self):
        data = np.random.default_rng(1).normal(size=(60, 5))
        model = kmeans_cosine(data, 4, seed=3)
        assert all(b >= a - 1e-9 for a, b in zip(model.history, model.history[1:]))

    def test_centers_are_unit(self):
        model = kmeans_cosine(np.random.default_rng(2).normal(size=(30, 4)), 3)
        assert np.allclose(np.linalg.norm(model.centers, axis=1), 1.0)

    def test_invalid_k(self):
        with pytest.raises(ConfigError):
            kmeans_cosine(np.ones((3, 2)), 4)

    def test_tie_goes_to_lower_index(self):
        model = ClusterModel(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert model.assign(np.array([[1.0, 1.0]]))[0] == 0

    def test_normalize_keeps_zero_rows(self):
        assert np.array_equal(normalize_rows(np.zeros((1, 3))), np.zeros((1, 3)))

    def test_cluster_partition(self, corpus):
        train, test = corpus
        rng = np.random.default_rng(0)
        train_emb, test_emb = rng.normal(size=(len(train), 4)), rng.normal(size=(len(test), 4))
        clusters = kmeans_cosine(train_emb, 3, seed=0)
        chosen = choose_clusters(3, 1, seed=0)
        split = partition_by_clusters(train, test, clusters, train_emb, test_emb, chosen, GENERIC)
        assigned = clusters.assign(train_emb)
        assert {ex.id for ex in split.train_forget} == {ex.id for ex, c in zip(train, assigned) if c in chosen}
        assert all(ex.cluster_id in chosen for ex in split.test_forget)
        split.validate(train, test)

    def test_chosen_out_of_range(self, corpus):
        train, test = corpus
        emb = np.random.default_rng(0).normal(size=(len(train), 4))
        clusters = kmeans_cosine(emb, 2)
        with pytest.raises(ConfigError):
            partition_by_clusters(train, test, clusters, emb, np.zeros((len(test), 4)), [5], GENERIC)
