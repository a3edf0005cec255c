"""Select the sampling backend at import time.

The compiled core is preferred; setting ``POISSONSTEIN_PURE_PYTHON=1`` forces
the numpy fallback (used by the benchmark and the backend-equality tests).
"""
import os

from . import _pycore
from .errors import ValidationError

try:
    from . import _ccore
except ImportError:  # extension not built
    _ccore = None

BACKENDS = {"python": _pycore}
if _ccore is not None:
    BACKENDS["compiled"] = _ccore

if os.environ.get("POISSONSTEIN_PURE_PYTHON", "") not in ("", "0") or _ccore is None:
    DEFAULT_BACKEND = "python"
else:
    DEFAULT_BACKEND = "compiled"


def get_backend(name=None):
    name = name or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValidationError(f"unknown or unavailable backend {name!r}; have {sorted(BACKENDS)}") from None
