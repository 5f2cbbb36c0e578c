"""
Clase principal UnlearnPipeline: orquesta las etapas del pipeline sobre un
directorio de salida.

    data/train.jsonl, data/test.jsonl, data/entities.txt, data/meta.json
    splits/split.json
    models/base.ckpt
    prompts/<tag>.ckpt
    baselines/<method>.ckpt
    reports/<tag>.metrics.json | .metrics.txt | .efficiency.json | .embeddings.csv
    runs.db
"""
import json
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Optional, Sequence

import pandas as pd

from core.config import Config, RunConfig, parse_list
from core.errors import ArtifactMissingError, DivergenceError
from core.logger import get_logger


def _write_json(path: Path, payload: Dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + '\n', encoding='utf-8')


class UnlearnPipeline:
    def __init__(self, config: RunConfig, output_dir: Optional[str] = None, record: bool = True):
        self.logger = get_logger('UnlearnPipeline')
        self.config = config
        self.output = Path(output_dir or config.output_dir)
        self.record = record
        self.db = None

    @property
    def digest(self) -> str:
        return self.config.digest()

    @property
    def seed(self) -> int:
        return self.config.seed

    def initialize(self) -> None:
        self.logger.info(f"Inicializando pipeline en {self.output} (digest={self.digest}, seed={self.seed})")
        self.output.mkdir(parents=True, exist_ok=True)
        if self.record and self.db is None:
            from run_database import RunDatabase
            self.db = RunDatabase(str(self.output / Config.DB_NAME))

    # --- rutas ------------------------------------------------------------

    def path(self, *parts: str) -> Path:
        return self.output.joinpath(*parts)

    @property
    def split_path(self) -> Path:
        return self.path('splits', 'split.json')

    @property
    def base_path(self) -> Path:
        return self.path('models', 'base.ckpt')

    def prompt_path(self, tag: str = 'spul') -> Path:
        return self.path('prompts', f'{tag}.ckpt')

    def baseline_path(self, method: str) -> Path:
        return self.path('baselines', f'{method}.ckpt')

    def report_path(self, tag: str, kind: str) -> Path:
        return self.path('reports', f'{tag}.{kind}')

    @staticmethod
    def _require(path: Path, hint: str) -> Path:
        if not path.exists():
            raise ArtifactMissingError(str(path), hint)
        return path

    @contextmanager
    def _ledger(self, command: str, method: Optional[str] = None):
        self.initialize()
        run_id = self.db.start_run(command, method, self.digest, self.seed) if self.db else None
        try:
            yield run_id
        except Exception as exc:
            if self.db:
                self.db.finish_run(run_id, 'failed', f"{type(exc).__name__}: {exc}")
            raise
        if self.db:
            self.db.finish_run(run_id, 'ok')

    # --- carga de artefactos -----------------------------------------------

    def load_data(self):
        from dataset_builder import load_jsonl
        hint = "Ejecuta primero el subcomando gen-data."
        train = load_jsonl(self._require(self.path('data', 'train.jsonl'), hint))
        test = load_jsonl(self._require(self.path('data', 'test.jsonl'), hint))
        return train, test

    def load_base(self):
        from checkpoints import load_model
        model, _ = load_model(self._require(self.base_path, "Ejecuta primero el subcomando train-base."))
        return model

    def load_split(self, path: Optional[Path] = None, tau: Optional[float] = None):
        """Partición del manifiesto con el submuestreo τ de la configuración aplicado."""
        from split_manager import load_manifest, subsample_forget
        train, test = self.load_data()
        path = self._require(Path(path) if path else self.split_path, "Ejecuta primero el subcomando partition.")
        split, _ = load_manifest(path, train, test)
        return subsample_forget(split, self.config.tau if tau is None else tau, self.seed)

    # --- etapas -------------------------------------------------------------

    def gen_data(self):
        from dataset_builder import generate_train_test, save_jsonl, save_lexicon
        with self._ledger('gen-data'):
            train, test, entities = generate_train_test(self.config.synthetic_config())
            save_jsonl(self.path('data', 'train.jsonl'), train)
            save_jsonl(self.path('data', 'test.jsonl'), test)
            save_lexicon(self.path('data', 'entities.txt'), entities)
            _write_json(self.path('data', 'meta.json'), {
                'config_digest': self.digest, 'seed': self.seed, 'task': self.config.task,
                'n_train': len(train), 'n_test': len(test), 'entities': entities,
            })
        return train, test, entities

    def train_base(self):
        from base_trainer import train_base
        from checkpoints import save_model
        from dataset_builder import task_labels
        from language_model import LanguageModel
        from vocabulary import Vocabulary

        with self._ledger('train-base', 'base') as run_id:
            train, test = self.load_data()
            vocab = Vocabulary.build([ex.text for ex in train], task_labels(list(train) + list(test)),
                                     self.config.generic_label_list, max_size=self.config.max_vocab)
            model = LanguageModel.initialize(self.config.model_config(len(vocab)), vocab, self.seed)
            _, log = train_base(model, train, self.config.base_training_config())
            model.params.freeze()
            save_model(self.base_path, model, self.digest, self.seed, method='base',
                       epochs=self.config.base_epochs, lr=self.config.base_lr)
            self._save_efficiency('base', log)
            if self.db:
                self.db.log_epochs(run_id, log)
        return model

    def partition(self):
        from dataset_builder import load_lexicon
        from split_manager import (choose_clusters, choose_entities, partition_by_clusters,
                                   partition_by_entities, partition_by_topic, save_manifest)

        protocol = self.config.protocol
        with self._ledger('partition', protocol):
            train, test = self.load_data()
            generic = self.config.generic_label_list
            if protocol == 'entities':
                if self.config.entity_lexicon:
                    # léxico explícito: se olvidan todas sus entidades
                    chosen = load_lexicon(self._require(Path(self.config.entity_lexicon), "Revisa entity_lexicon."))
                else:
                    lexicon = load_lexicon(self._require(self.path('data', 'entities.txt'), "Ejecuta gen-data."))
                    chosen = choose_entities(lexicon, min(self.config.forget_entities, len(lexicon)), self.seed)
                split = partition_by_entities(train, test, chosen, generic, seed=self.seed)
            elif protocol == 'clusters':
                from clustering import kmeans_cosine
                model = self.load_base()
                train_emb = model.pooled_states(model.encode_texts([ex.text for ex in train]))
                test_emb = model.pooled_states(model.encode_texts([ex.text for ex in test]))
                clusters = kmeans_cosine(train_emb, min(self.config.n_clusters, len(train)), seed=self.seed)
                chosen = choose_clusters(clusters.k, self.config.forget_clusters, self.seed)
                split = partition_by_clusters(train, test, clusters, train_emb, test_emb, chosen, generic,
                                              seed=self.seed)
            else:
                split = partition_by_topic(train, test, parse_list(self.config.forget_topics), generic,
                                           seed=self.seed)
            split.validate(train, test)
            save_manifest(self.split_path, split, self.digest, self.seed)
        return split

    def unlearn(self, tag: str = 'spul'):
        from checkpoints import save_prompt
        from evaluator import evaluate_matrix
        from prompt_unlearner import count_trainable, unlearn_train

        cfg = self.config.unlearn_config()
        with self._ledger('unlearn', 'spul') as run_id:
            model = self.load_base()
            split = self.load_split()
            try:
                bank, log = unlearn_train(model, split, cfg)
            except DivergenceError as exc:
                if exc.last_good is not None:
                    path = self.prompt_path(f'{tag}.last_good')
                    save_prompt(path, exc.last_good, self.digest, status='diverged', step=exc.step)
                    self.logger.error(f"[SPUL] Divergencia: último φ finito guardado en {path}")
                raise
            save_prompt(self.prompt_path(tag), bank, self.digest, alpha=cfg.alpha, beta=cfg.beta,
                        lr=cfg.lr, epochs=cfg.epochs, unlearn_digest=cfg.digest())
            report = evaluate_matrix(model, bank, split, 'spul', self.digest, self.seed,
                                     self.config.eval_batch_size, count_trainable(bank))
            self._save_report(tag, report, log, run_id)
            if self.config.export_embeddings:
                # referencia sin prompt sobre la misma partición, con el tag de la corrida
                self.export(model, None, split, f'{tag}.base')
                self.export(model, bank, split, tag)
        return bank, report

    def baseline(self, method: Optional[str] = None, lr_grid: Optional[Sequence[float]] = None,
                 tag: Optional[str] = None):
        from baseline_unlearner import search_learning_rate
        from checkpoints import save_model
        from evaluator import evaluate_matrix

        cfg = self.config.baseline_config(method)
        grid = list(lr_grid) if lr_grid else [float(v) for v in parse_list(self.config.baseline_lr_grid)]
        grid = grid or [cfg.lr]
        tag = tag or cfg.method
        with self._ledger('baseline', cfg.method) as run_id:
            base = self.load_base()
            split = self.load_split()
            result = search_learning_rate(base, split, cfg, grid, self.config.eval_batch_size)
            rows = pd.DataFrame(result.rows)
            rows['config_digest'], rows['seed'] = self.digest, self.seed
            path = self.report_path(tag, 'lr_search.csv')
            path.parent.mkdir(parents=True, exist_ok=True)
            rows.to_csv(path, index=False)
            save_model(self.baseline_path(tag), result.model, self.digest, self.seed, method=cfg.method,
                       lr=result.best_lr, epochs=cfg.epochs)
            report = evaluate_matrix(result.model, None, split, cfg.method, self.digest, self.seed,
                                     self.config.eval_batch_size, result.model.params.num_parameters())
            self._save_report(tag, report, result.log, run_id)
        return result.model, report

    def evaluate(self, model_path: Optional[str] = None, prompt_path: Optional[str] = None,
                 split_path: Optional[str] = None, tag: Optional[str] = None):
        from checkpoints import load_model, load_prompt
        from evaluator import evaluate_matrix

        with self._ledger('eval') as run_id:
            path = self._require(Path(model_path) if model_path else self.base_path,
                                 "Ejecuta train-base o pasa --model.")
            model, header = load_model(path)
            bank = None
            if prompt_path:
                bank, _ = load_prompt(self._require(Path(prompt_path), "Ejecuta unlearn o revisa --prompt."))
            split = self.load_split(split_path)
            method = 'spul' if bank is not None else header.get('method', 'base')
            report = evaluate_matrix(model, bank, split, method, self.digest, self.seed,
                                     self.config.eval_batch_size)
            self._save_report(tag or f'eval-{method}', report, None, run_id)
        return report

    def export(self, model, bank, split, tag: str) -> Dict:
        """Exporta embeddings de train (olvido y retención) a reports/<tag>.embeddings.csv."""
        from evaluator import export_embeddings, tagged_examples
        examples, tags = tagged_examples(split, 'train')
        summary = export_embeddings(model, bank, examples, self.report_path(tag, 'embeddings.csv'), tags,
                                    pca=self.config.export_pca, batch_size=self.config.eval_batch_size)
        summary = dict(summary, config_digest=self.digest, seed=self.seed, path=str(Path(summary['path']).name))
        _write_json(self.report_path(tag, 'embeddings.json'), summary)
        return summary

    # --- reportes -----------------------------------------------------------

    def _save_efficiency(self, tag: str, log) -> Dict:
        from evaluator import efficiency_report
        payload = dict(efficiency_report(log), config_digest=self.digest, seed=self.seed)
        _write_json(self.report_path(tag, 'efficiency.json'), payload)
        return payload

    def _save_report(self, tag: str, report, log, run_id) -> None:
        if log is not None:
            report.epoch_seconds = log.epoch_seconds
            self._save_efficiency(tag, log)
        report.save(self.report_path(tag, 'metrics.json'), self.report_path(tag, 'metrics.txt'))
        if self.db:
            self.db.log_metrics(run_id, report)
            if log is not None:
                self.db.log_epochs(run_id, log)
        self.logger.info(f"[EVAL] Reporte '{tag}' guardado en {self.report_path(tag, 'metrics.json')}")

    def stop(self) -> None:
        self.logger.info('Cerrando pipeline...')
        if self.db:
            self.db.export_csv(str(self.path('ledger')))
