"""
Artifact writer module: atomic CSV/JSON file and directory output

Files are written to a temporary sibling first and renamed into place, so a
failing command never leaves partial outputs behind.
"""
import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pandas as pd

logger = logging.getLogger('ntn_forecast.writer')

CSV_FLOAT_FORMAT = '%.10g'


@contextmanager
def atomic_path(path, suffix=''):
    """
    Yield a temporary path next to `path`; rename it over `path` on success

    Args:
        path: Final destination
        suffix: Suffix for the temporary file name
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=suffix, dir=path.parent)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


@contextmanager
def atomic_directory(path):
    """
    Yield a temporary directory next to `path`; move it to `path` on success

    An existing directory at `path` is replaced only after the new one is complete.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{path.name}.", dir=path.parent))
    try:
        yield tmp
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
        logger.info(f"Wrote output directory: {path}")
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def write_csv(frame: pd.DataFrame, path) -> Path:
    """Write a DataFrame as CSV with fixed float formatting"""
    path = Path(path)
    with atomic_path(path, suffix='.csv') as tmp:
        frame.to_csv(tmp, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
    logger.info(f"Wrote {len(frame)} rows: {path}")
    return path


def to_jsonable(value):
    """Convert numpy containers and scalars into plain JSON types"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def write_json(data, path) -> Path:
    """Write JSON with sorted keys so identical data gives identical bytes"""
    path = Path(path)
    with atomic_path(path, suffix='.json') as tmp:
        with open(tmp, 'w') as f:
            json.dump(to_jsonable(data), f, indent=2, sort_keys=True)
            f.write('\n')
    logger.info(f"Wrote JSON: {path}")
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, 'r') as f:
        return json.load(f)
