"""
➡️ But : Logs en JSON ligne par ligne (un objet par événement) pour auditer les pipelines.

Usage dans un service :

LOGGER = logging.getLogger(__name__)
log_event(LOGGER, "cholesky_jitter", jitter=1e-8, n=614)

🔹 Avantages :

Lisible par une machine (jq, pandas.read_json(lines=True)).

Un seul point de configuration, appelé par app/main.py.
"""

import json
import logging
import sys
from datetime import datetime, timezone
from typing import Any, Optional, TextIO

from app.core.config import settings

# Attributs standards d'un LogRecord : tout le reste vient de `extra`
_RESERVED = set(vars(logging.makeLogRecord({}))) | {"message", "asctime"}


class JsonLinesFormatter(logging.Formatter):
    """Formate chaque record en une ligne JSON : ts, level, logger, event + champs extra."""

    def format(self, record: logging.LogRecord) -> str:
        payload: dict[str, Any] = {
            "ts": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "event": record.getMessage(),
        }
        for key, value in record.__dict__.items():
            if key not in _RESERVED and not key.startswith("_"):
                payload[key] = value
        if record.exc_info:
            payload["exc"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=_json_default, sort_keys=False)


def _json_default(value: Any) -> Any:
    # numpy scalaires / tableaux sans importer numpy ici
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


def configure_logging(level: Optional[str] = None, stream: Optional[TextIO] = None) -> None:
    """Installe le formatter JSON sur le logger racine (idempotent)."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_wind_adjust", False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLinesFormatter())
    handler._wind_adjust = True  # type: ignore[attr-defined]
    root.addHandler(handler)
    root.setLevel((level or settings.LOG_LEVEL).upper())


def log_event(logger: logging.Logger, event: str, *, level: int = logging.INFO, **fields: Any):
    """Émet un événement structuré ; les champs deviennent des clés JSON."""
    logger.log(level, event, extra=fields)
