"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
always available. `SPLATPM_KERNEL=python|compiled` forces a backend (the
benchmark and the cross-backend tests use this).
"""

import os

from . import python as _py

BACKENDS = {"python": (_py.forward, _py.backward)}

try:
    from . import _splat_cy as _cy

    BACKENDS["compiled"] = (_cy.forward, _cy.backward)
except ImportError:
    _cy = None

_requested = os.environ.get("SPLATPM_KERNEL", "").strip().lower()
if _requested:
    if _requested not in BACKENDS:
        available = ", ".join(sorted(BACKENDS))
        raise ImportError(f"SPLATPM_KERNEL={_requested!r} not available (have: {available})")
    BACKEND = _requested
else:
    BACKEND = "compiled" if "compiled" in BACKENDS else "python"

forward, backward = BACKENDS[BACKEND]
