"""Kernel backend selection.

The hot numerical paths (tape evaluation, bordered Newton solves, the
RK4 drivers) exist twice: a Cython extension (`_core`) and a pure-Python
mirror (`_pure`).  The compiled one is preferred when importable; set
``VAKDIRAC_KERNELS=python`` to force the fallback.  Both expose the same
status-code based API, and ``benchmarks/compare_backends.py`` measures
the gap between them.
"""

import os

from . import ops  # noqa: F401  (re-exported for callers)
from . import _pure

if os.environ.get("VAKDIRAC_KERNELS", "").lower() == "python":
    _impl = _pure
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _pure

BACKEND = _impl.BACKEND_NAME

tape_value = _impl.tape_value
tape_grad = _impl.tape_grad
tape_hess = _impl.tape_hess
solve_bordered = _impl.solve_bordered
integrate_vak_rk4 = _impl.integrate_vak_rk4
integrate_nonh_rk4 = _impl.integrate_nonh_rk4
nonh_rhs = _impl.nonh_rhs
