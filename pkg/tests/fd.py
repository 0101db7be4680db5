"""Central finite differences, the oracle for every analytic gradient in the suite."""
import numpy as np


def central_difference(f, x, h=1e-6):
    """Gradient of scalar ``f`` at ``x`` (any shape), float64 throughout."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad
