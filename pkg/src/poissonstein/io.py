"""File formats: kernel and expansion documents (JSON), reports, CSV tables."""
from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .chaos import ChaosExpansion
from .errors import ValidationError
from .space import Kernel, kernel_from_document, kernel_to_document


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, os.PathLike):
        return os.fspath(obj)
    return obj


def dumps(doc) -> str:
    # float repr is the shortest string that round-trips, so values are bit-exact
    return json.dumps(_plain(doc), indent=1, sort_keys=True, allow_nan=False) + "\n"


def _write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, doc):
    _write_text(path, dumps(doc))


def read_json(path) -> dict:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None


def save_kernel(path, f: Kernel):
    write_json(path, kernel_to_document(f))


def load_kernel(path, space=None, require_symmetric: bool = True) -> Kernel:
    doc = read_json(path)
    try:
        f = kernel_from_document(doc, space)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if require_symmetric and not f.is_symmetric():
        raise ValidationError(f"{path}: kernel of order {f.order} is not symmetric")
    return f


def load_expansion(path) -> ChaosExpansion:
    """Read {"mean": x, "kernels": [...]} where each entry is a kernel document
    or a path (relative to the expansion file) to one."""
    path = Path(path)
    doc = read_json(path)
    if "kernels" not in doc:
        raise ValidationError(f"{path}: expansion document is missing field 'kernels'")
    kernels = []
    space = None
    for item in doc["kernels"]:
        if isinstance(item, str):
            f = load_kernel(path.parent / item, space)
        else:
            f = kernel_from_document(item, space)
            if not f.is_symmetric():
                raise ValidationError(f"{path}: kernel of order {f.order} is not symmetric")
        space = f.space
        kernels.append(f)
    if space is None:
        raise ValidationError(f"{path}: expansion needs at least one kernel")
    slots = [None] * max(f.order for f in kernels)
    for f in kernels:
        if f.order == 0:
            raise ValidationError(f"{path}: use 'mean' for the constant term")
        if slots[f.order - 1] is not None:
            raise ValidationError(f"{path}: two kernels of order {f.order}")
        slots[f.order - 1] = f
    return ChaosExpansion(space, float(doc.get("mean", 0.0)), slots)


def expansion_to_document(F: ChaosExpansion) -> dict:
    return {"mean": F.mean, "kernels": [kernel_to_document(f) for _, f in F.terms()]}


def format_number(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_number(v) for v in row])
    os.replace(tmp, path)


def read_csv(path) -> tuple[list, list]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
