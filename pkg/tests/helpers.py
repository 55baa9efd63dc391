import numpy as np

from npsa.tensor import Tensor


def numeric_grad(f, x, h=1e-6):
    """Central differences of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), floor))


def check_grad(fn, *arrays, tol=1e-6, h=1e-6):
    """Compare autodiff of ``sum(w * fn(*tensors))`` with central differences."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    w = np.random.default_rng(0).normal(size=out.shape)
    from npsa import tensor as T
    T.sum(T.mul(out, w)).backward()
    for t in tensors:
        def f():
            return float(np.sum(fn(*[Tensor(s.data) for s in tensors]).data * w))
        num = numeric_grad(f, t.data, h)
        err = rel_err(t.grad, num)
        assert err < tol, f"gradient mismatch {err:.2e}"
