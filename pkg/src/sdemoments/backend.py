"""Stepping backend selection.

The package ships a compiled extension for the per-path stepping loops and a
numpy fallback with identical arithmetic. Selection happens once at import:

* ``SDEMOMENTS_BACKEND=auto`` (default) prefers the extension, quietly
  falling back to numpy when it is not built;
* ``SDEMOMENTS_BACKEND=compiled`` requires the extension;
* ``SDEMOMENTS_BACKEND=python`` forces the numpy fallback.

Results are bitwise identical either way; the choice only affects speed.
"""

import os

ENV_VAR = "SDEMOMENTS_BACKEND"
CHOICES = ("auto", "compiled", "python")


def load_backend(choice="auto"):
    """Return (kernel module, backend name) for an explicit choice."""
    if choice not in CHOICES:
        raise ValueError(f"backend must be one of {CHOICES}, got {choice!r}")
    if choice in ("auto", "compiled"):
        try:
            from . import _kernels

            return _kernels, "compiled"
        except ImportError:
            if choice == "compiled":
                raise ImportError(
                    f"{ENV_VAR}=compiled but the extension is not built; "
                    "reinstall the package or select the python backend"
                ) from None
    from . import _kernels_py

    return _kernels_py, "python"


kernels, BACKEND = load_backend(os.environ.get(ENV_VAR, "auto").lower())
