"""Selects the RNN kernel at import time.

The compiled ``_rnn`` extension is used when it was built; setting
``DKTGEN_PURE_PYTHON=1`` forces the numpy implementation.
"""

import os

from . import _rnn_py

BACKEND = "python"
rnn = _rnn_py

if os.environ.get("DKTGEN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _rnn  # type: ignore[attr-defined]
    except ImportError:
        pass
    else:
        rnn = _rnn
        BACKEND = "compiled"


def available_backends() -> dict:
    """Every importable kernel module by name, regardless of the active selection."""
    found = {"python": _rnn_py}
    try:
        from . import _rnn  # type: ignore[attr-defined]
    except ImportError:
        return found
    found["compiled"] = _rnn
    return found
