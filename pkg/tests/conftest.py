import numpy as np


def central_difference(f, params: dict[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """Numeric gradient of scalar f(params) by central differences.

    Independent of the tape: f is re-evaluated with each entry nudged by
    +-h, one entry at a time. Used as the oracle for every analytic
    gradient in the suite.
    """
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(params)
            flat[i] = orig - h
            down = f(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def assert_grads_close(analytic: dict, numeric: dict, rtol: float = 1e-3, atol: float = 1e-8):
    for name in numeric:
        a = analytic.get(name)
        n = numeric[name]
        assert a is not None, f"no analytic gradient for {name}"
        err = np.abs(a - n)
        bound = rtol * np.maximum(np.abs(a), np.abs(n)) + atol
        worst = np.max(err - bound)
        assert worst <= 0, f"{name}: gradient mismatch, max excess {worst:.3e}\n analytic={a}\n numeric={n}"
