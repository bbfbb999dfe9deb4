"""Backend selection for the coordinate-descent kernel.

The compiled extension is used when it imports; set ``COENET_PURE_PYTHON=1``
to force the fallback.
"""

import os

from . import _cd_py

BACKEND = "python"
cd_solve = _cd_py.cd_solve

if os.environ.get("COENET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _cd_ext
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        cd_solve = _cd_ext.cd_solve
        BACKEND = "cython"


def get_kernel(name: str | None = None):
    """Return the ``cd_solve`` for ``"cython"``, ``"python"`` or the default."""
    if name is None:
        return cd_solve
    if name == "python":
        return _cd_py.cd_solve
    if name == "cython":
        from . import _cd_ext

        return _cd_ext.cd_solve
    raise ValueError(f"unknown backend {name!r}")
