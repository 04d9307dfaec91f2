"""Backend selection for the fused rollout kernel.

The compiled extension is used when importable; ``ELBSDE_BACKEND=python``
forces the numpy implementation.
"""

import os

from . import _kernel_py

BACKEND = "python"
_impl = _kernel_py

if os.environ.get("ELBSDE_BACKEND", "").lower() not in ("python", "py", "numpy"):
    try:
        from . import _kernel as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernel_py


def loss_and_grad(params, inputs, need_grad=True, backend=None):
    """Terminal MSE of the rollout and its parameter gradients.

    Returns ``(loss, grads, phi_T)``; ``grads`` is ``None`` when
    ``need_grad`` is false.
    """
    impl = _impl
    if backend == "python":
        impl = _kernel_py
    elif backend == "cython":
        from . import _kernel as impl
    return impl.loss_and_grad(params, inputs, need_grad)
