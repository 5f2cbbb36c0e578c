import logging
import os

from dotenv import load_dotenv

load_dotenv()

LOG_DIR = os.getenv('SPUL_LOG_DIR', os.path.join(os.path.dirname(os.path.dirname(__file__)), 'logs'))
LOG_LEVEL = os.getenv('SPUL_LOG_LEVEL', 'INFO').upper()
LOG_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'

_configured = False


def _configure() -> None:
    global _configured
    if _configured:
        return
    os.makedirs(LOG_DIR, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL, logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(os.path.join(LOG_DIR, 'spul.log'), encoding='utf-8'),
            logging.StreamHandler()
        ]
    )
    _configured = True


def get_logger(name: str) -> logging.Logger:
    _configure()
    return logging.getLogger(name)
