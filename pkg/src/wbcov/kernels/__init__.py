"""Hot inner loops, with a numba backend and a pure-numpy fallback.

The numba backend is used when numba imports cleanly, unless the environment
variable ``WBCOV_DISABLE_NUMBA`` is set to a non-empty value other than
``0``. Both backends expose the same functions with the same semantics; the
test-suite checks them against each other.
"""

import os

from . import _numpy

_disabled = os.environ.get("WBCOV_DISABLE_NUMBA", "") not in ("", "0")

if _disabled:
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _impl = _numpy
        BACKEND = "numpy"

lag_counts = _impl.lag_counts
perfect_diffset_search = _impl.perfect_diffset_search
lag_average = _impl.lag_average
raised_cosine = _impl.raised_cosine
delay_objective = _impl.delay_objective

__all__ = [
    "BACKEND",
    "lag_counts",
    "perfect_diffset_search",
    "lag_average",
    "raised_cosine",
    "delay_objective",
]
