"""Shared test utilities: finite-difference oracles and tiny model configs."""
import numpy as np

from glyphforge.tensor import Grid


def finite_diff_grad(f, x, h=1e-4):
    """Central-difference gradient of scalar f at array x (double precision)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def rel_err(analytic, numeric):
    denom = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
    return np.abs(analytic - numeric).max() / denom


def check_grad(build_loss, x0, h=1e-4, tol=1e-4):
    """Assert analytic gradient of build_loss(Grid)->loss matches finite differences.

    build_loss must construct a fresh graph from the provided leaf each call.
    """
    leaf = Grid(np.asarray(x0, dtype=np.float64), requires_grad=True)
    loss = build_loss(leaf)
    loss.backward()
    analytic = leaf.grad.copy()

    def f(arr):
        return build_loss(Grid(arr)).item()

    numeric = finite_diff_grad(f, np.asarray(x0, dtype=np.float64), h=h)
    err = rel_err(analytic, numeric)
    assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol}"
    return err
