import hashlib
import json
import logging
import os
import sys

import numpy as np
from dotenv import load_dotenv

from .constants import DEFAULT_LOG_LEVEL, DIGEST_LENGTH, LOG_ENV_VAR, LOG_FORMAT, LOG_LEVELS
from .errors import InstanceFormatError

logger = logging.getLogger(__name__)


def setup_logging(level_name=None):
    """Configures stderr logging from MDTREE_LOG (a local .env file may set it)."""
    load_dotenv()
    requested = (level_name or os.environ.get(LOG_ENV_VAR) or DEFAULT_LOG_LEVEL).strip().lower()
    unknown = requested not in LOG_LEVELS
    level = LOG_LEVELS.get(requested, LOG_LEVELS[DEFAULT_LOG_LEVEL])
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    if unknown:
        logger.warning(
            "Unknown %s value '%s'; using '%s'.", LOG_ENV_VAR, requested, DEFAULT_LOG_LEVEL
        )
    return level


def logging_status_callback(message, is_error=False, tag=None):
    """Default pipeline status callback: forwards messages to the mdtree logger."""
    if is_error:
        logger.error(message)
    elif tag == "warning":
        logger.warning(message)
    else:
        logger.info(message)


def load_json(path):
    """Reads a JSON document, raising InstanceFormatError on I/O or syntax errors."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise InstanceFormatError(f"File not found: {path}") from e
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InstanceFormatError(f"Could not parse JSON from {path}: {e}") from e
    except OSError as e:
        raise InstanceFormatError(f"Could not read {path}: {e}") from e


def matrix_to_list(a):
    return np.asarray(a, dtype=np.float64).tolist()


def node_key(node):
    return f"{node[0]},{node[1]}"


def matrix_map(mats):
    """{(k, i): matrix} -> {"k,i": nested list}, in node order."""
    return {node_key(node): matrix_to_list(a) for node, a in sorted(mats.items())}


def digest(a):
    """Short sha256 of a matrix' float64 bytes (shape included)."""
    arr = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    h = hashlib.sha256()
    h.update(str(arr.shape).encode("ascii"))
    h.update(arr.tobytes())
    return h.hexdigest()[:DIGEST_LENGTH]


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dumps(payload):
    """Deterministic JSON text for reports; numpy arrays and scalars become lists and numbers."""
    return json.dumps(payload, indent=2, sort_keys=False, allow_nan=True, default=_jsonable)
