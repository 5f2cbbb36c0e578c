"""
Main Module - SPUL desk
Línea de comandos del pipeline de desaprendizaje por soft prompts.

    python main.py gen-data
    python main.py train-base
    python main.py partition --protocol entities
    python main.py unlearn --alpha 1.0 --beta 0.5 --p 30
    python main.py baseline --method ga-gd --lr-grid 1e-5,5e-5,1e-4
    python main.py eval --prompt runs/prompts/spul.ckpt
    python main.py sweep --grid alpha=0.1,0.5,1.0 beta=0,0.1,0.5,1.0

Códigos de salida: 0 éxito, 1 falló una etapa o celda, 2 uso incorrecto o
artefactos faltantes.
"""
import argparse
import sys
from typing import Dict, List, Optional

from baseline_unlearner import BASELINE_METHODS
from core.config import DEFAULTS, RunConfig
from core.errors import ArtifactMissingError, ConfigError, SpulError
from core.logger import get_logger
from core.pipeline import UnlearnPipeline
from language_model import MODEL_PRESETS

logger = get_logger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='archivo key=value con la configuración de la corrida')
    common.add_argument('--output', dest='output_dir', help='directorio de artefactos')
    common.add_argument('--seed', type=int, help='semilla raíz')
    common.add_argument('--set', dest='assignments', action='append', default=[], metavar='KEY=VALUE',
                        help='override de cualquier clave de configuración (repetible)')
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog='spul', description='Desaprendizaje por soft prompts a escala de escritorio')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-data', parents=[common], help='genera train/test sintéticos y el léxico de entidades')
    p.add_argument('--task', choices=('sentiment', 'mcqa'))
    p.add_argument('--n-train', dest='n_train', type=int)
    p.add_argument('--n-test', dest='n_test', type=int)
    p.add_argument('--n-entities', dest='n_entities', type=int)
    p.add_argument('--entity-rate', dest='entity_rate', type=float)
    p.add_argument('--label-balance', dest='label_balance', type=float)

    p = sub.add_parser('partition', parents=[common], help='particiona en olvido/retención y escribe el manifiesto')
    p.add_argument('--protocol', choices=('entities', 'clusters', 'topic'))
    p.add_argument('--forget-entities', dest='forget_entities', type=int)
    p.add_argument('--entity-lexicon', dest='entity_lexicon')
    p.add_argument('--n-clusters', dest='n_clusters', type=int)
    p.add_argument('--forget-clusters', dest='forget_clusters', type=int)
    p.add_argument('--forget-topics', dest='forget_topics')
    p.add_argument('--generic-labels', dest='generic_labels')

    p = sub.add_parser('train-base', parents=[common], help='entrena el modelo base sobre todo train')
    p.add_argument('--preset', dest='model_preset', choices=tuple(MODEL_PRESETS))
    p.add_argument('--epochs', dest='base_epochs', type=int)
    p.add_argument('--lr', dest='base_lr', type=float)
    p.add_argument('--batch-size', dest='base_batch_size', type=int)

    p = sub.add_parser('unlearn', parents=[common], help='entrena el soft prompt SPUL')
    p.add_argument('--alpha', type=float)
    p.add_argument('--beta', type=float)
    p.add_argument('--p', type=int)
    p.add_argument('--lr', type=float)
    p.add_argument('--epochs', type=int)
    p.add_argument('--tau', type=float)
    p.add_argument('--batch-size', dest='batch_size', type=int)
    p.add_argument('--prompt-init', dest='prompt_init', choices=('vocab', 'gaussian'))
    p.add_argument('--tag', default='spul', help='nombre de los artefactos de salida')

    p = sub.add_parser('baseline', parents=[common], help='corre un baseline de ajuste completo')
    p.add_argument('--method', dest='baseline_method', choices=BASELINE_METHODS)
    p.add_argument('--lr-grid', dest='baseline_lr_grid')
    p.add_argument('--epochs', dest='baseline_epochs', type=int)
    p.add_argument('--tau', type=float)
    p.add_argument('--tag')

    p = sub.add_parser('eval', parents=[common], help='evalúa un modelo (y opcionalmente un prompt)')
    p.add_argument('--model', help='checkpoint de modelo (por defecto models/base.ckpt)')
    p.add_argument('--prompt', help='checkpoint de prompt')
    p.add_argument('--split', help='manifiesto de partición (por defecto splits/split.json)')
    p.add_argument('--tag')

    p = sub.add_parser('sweep', parents=[common], help='barrido de hiperparámetros')
    p.add_argument('--grid', nargs='+', required=True, metavar='AXIS=VALUES')
    p.add_argument('--workers', type=int)
    return parser


def collect_overrides(args: argparse.Namespace) -> Dict[str, object]:
    """Flags con valor explícito más los --set KEY=VALUE."""
    overrides = {key: value for key, value in vars(args).items() if key in DEFAULTS and value is not None}
    for item in args.assignments:
        key, sep, value = item.partition('=')
        if not sep:
            raise ConfigError(f"--set espera KEY=VALUE, se recibió {item!r}")
        overrides[key.strip()] = value.strip()
    return overrides


def dispatch(args: argparse.Namespace, config: RunConfig) -> int:
    pipeline = UnlearnPipeline(config)
    try:
        if args.command == 'gen-data':
            pipeline.gen_data()
        elif args.command == 'partition':
            split = pipeline.partition()
            print(split.summary())
        elif args.command == 'train-base':
            pipeline.train_base()
        elif args.command == 'unlearn':
            _, report = pipeline.unlearn(tag=args.tag)
            print(report.table())
        elif args.command == 'baseline':
            _, report = pipeline.baseline(tag=args.tag)
            print(report.table())
        elif args.command == 'eval':
            report = pipeline.evaluate(args.model, args.prompt, args.split, args.tag)
            print(report.table())
        elif args.command == 'sweep':
            from sweep_runner import run_sweep
            pipeline.initialize()
            table, failures = run_sweep(config, str(pipeline.output), args.grid, args.workers)
            print(table.to_string(index=False))
            return EXIT_FAILED if failures else EXIT_OK
        return EXIT_OK
    finally:
        pipeline.stop()


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logger.info(f"Iniciando comando {args.command}...")
    try:
        config = RunConfig.load(args.config, collect_overrides(args))
        return dispatch(args, config)
    except (ConfigError, ArtifactMissingError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except SpulError as e:
        logger.error(f"{args.command} falló: {e}")
        return EXIT_FAILED
    finally:
        logger.info(f"Comando {args.command} finalizado")


if __name__ == "__main__":
    sys.exit(main())
