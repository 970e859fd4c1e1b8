"""Hot-kernel backend selection.

Imports the compiled extension when present, otherwise the numpy fallback.
Set RHYTHMSIM_PURE_PYTHON=1 to force the fallback (used by tests and the
kernel benchmark). Both backends produce bit-identical outputs.
"""

import os

from . import _fallback

if os.environ.get("RHYTHMSIM_PURE_PYTHON") == "1":
    _impl = _fallback
else:
    try:
        from . import _native as _impl
    except ImportError:
        _impl = _fallback

BACKEND = _impl.BACKEND
unit_disk_pairs = _impl.unit_disk_pairs
linear_interp = _impl.linear_interp
weighted_pick = _impl.weighted_pick


def available_backends():
    """All importable backend modules, keyed by name."""
    backends = {"fallback": _fallback}
    try:
        from . import _native
        backends["native"] = _native
    except ImportError:
        pass
    return backends
