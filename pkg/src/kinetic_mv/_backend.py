"""Pick the numerical core at import time.

Set ``KINETIC_MV_BACKEND=python`` to force the numpy fallback. Both cores
produce bit-identical results; the compiled one is only faster.
"""

import logging
import os

from . import _pycore

log = logging.getLogger(__name__)


def _load():
    wanted = os.environ.get("KINETIC_MV_BACKEND", "auto").lower()
    if wanted == "python":
        return _pycore
    try:
        from . import _core
    except ImportError as exc:
        if wanted == "compiled":
            raise
        log.debug("compiled core unavailable (%s); using numpy fallback", exc)
        return _pycore
    return _core


core = _load()
BACKEND = core.BACKEND


def available():
    """Names of the cores importable in this installation."""
    names = ["python"]
    try:
        from . import _core  # noqa: F401
    except ImportError:
        pass
    else:
        names.insert(0, "compiled")
    return names


def get(name=None):
    if name is None:
        return core
    if name == "python":
        return _pycore
    if name == "compiled":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
