"""Cost kernel backend selection.

The compiled extension is used when it built; otherwise, or when
``PVPUMP_PURE_PYTHON`` is set in the environment, the NumPy implementation
takes over.  Both expose the same ``expected_cost_grad``; ``BACKEND`` names
the one in effect.
"""

import os

from . import cost_numpy

BACKEND = "numpy"
expected_cost_grad = cost_numpy.expected_cost_grad

if not os.environ.get("PVPUMP_PURE_PYTHON"):
    try:
        from . import cost_kernel

        BACKEND = "cython"
        expected_cost_grad = cost_kernel.expected_cost_grad
    except ImportError:
        pass

__all__ = ["BACKEND", "expected_cost_grad", "cost_numpy"]
