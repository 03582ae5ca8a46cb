"""Backend selection for the retrieval scoring kernel.

The compiled extension is used when it was built; otherwise the numpy
fallback. ``CRAFT_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback.score_topk}
if _compiled is not None:
    BACKENDS["cython"] = _compiled.score_topk

if os.environ.get("CRAFT_BACKEND", "").lower() == "python" or _compiled is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

score_topk = BACKENDS[BACKEND]
