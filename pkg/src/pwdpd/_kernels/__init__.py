"""Backend selection for the hot polynomial-bank kernel.

The dual-input polynomial bank evaluation dominates simulation time (it runs
inside every crosstalk fixed-point iteration and every chain simulation).
A compiled Cython core is used when the built extension imports; otherwise a
pure-NumPy fallback with identical semantics takes over. Set the environment
variable ``PWDPD_BACKEND`` to ``compiled`` or ``numpy`` to force one.
"""

from __future__ import annotations

import os

import numpy as np

from . import _numpy as _numpy_impl

try:  # pragma: no cover - exercised only when the extension is built
    from . import _core as _compiled_impl
except ImportError:  # pragma: no cover
    _compiled_impl = None

_BACKENDS = {"numpy": _numpy_impl}
if _compiled_impl is not None:
    _BACKENDS["compiled"] = _compiled_impl

_active_name = None
_active = None


def available_backends() -> tuple:
    return tuple(sorted(_BACKENDS))


def select_backend(name: str = None) -> str:
    """Activate a kernel backend and return its name.

    ``None`` resolves from ``PWDPD_BACKEND`` (default ``auto``: compiled when
    built, else numpy).
    """
    global _active_name, _active
    if name is None:
        name = os.environ.get("PWDPD_BACKEND", "auto")
    if name == "auto":
        name = "compiled" if "compiled" in _BACKENDS else "numpy"
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        )
    _active_name = name
    _active = _BACKENDS[name]
    return name


def backend_name() -> str:
    return _active_name


def get_backend(name: str = None):
    """Return a backend module (the active one by default)."""
    if name is None:
        return _active
    if name == "compiled" and name not in _BACKENDS:
        raise ValueError("compiled kernel extension is not built")
    return _BACKENDS[name]


def bank_eval(terms_p, terms_v, coeffs, u, c, backend: str = None) -> np.ndarray:
    """Evaluate a bank of dual-input polynomials.

    Row ``m`` of the output is ``sum_i coeffs[m, i] * psi_{p_i}^{v_i}(u[m])
    * (1, c[m], conj(c[m]))[v_i]`` evaluated per sample.
    """
    impl = _active if backend is None else get_backend(backend)
    terms_p = np.ascontiguousarray(terms_p, dtype=np.int32)
    terms_v = np.ascontiguousarray(terms_v, dtype=np.int32)
    coeffs = np.ascontiguousarray(coeffs, dtype=np.complex128)
    u = np.ascontiguousarray(u, dtype=np.complex128)
    c = np.ascontiguousarray(c, dtype=np.complex128)
    return impl.bank_eval(terms_p, terms_v, coeffs, u, c)


select_backend()
