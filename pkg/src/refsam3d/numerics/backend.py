"""Kernel backend selection.

The compiled Cython kernels are used when the extension was built; otherwise
the numpy fallback is used. Setting ``REFSAM3D_PURE_PYTHON=1`` forces the
fallback at import time, and :func:`use_backend` switches at run time.
"""

import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _fallback}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_active = "compiled" if _compiled is not None and not os.environ.get("REFSAM3D_PURE_PYTHON") else "python"


def available() -> list[str]:
    return sorted(_BACKENDS)


def current() -> str:
    return _active


def use_backend(name: str) -> None:
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available()}")
    _active = name


def vol2col(x, kd, kh, kw, sd, sh, sw, od, oh, ow):
    return _BACKENDS[_active].vol2col(x, kd, kh, kw, sd, sh, sw, od, oh, ow)


def col2vol(cols, C, dp, hp, wp, kd, kh, kw, sd, sh, sw, od, oh, ow):
    return _BACKENDS[_active].col2vol(cols, C, dp, hp, wp, kd, kh, kw, sd, sh, sw, od, oh, ow)
