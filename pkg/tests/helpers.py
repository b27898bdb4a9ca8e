"""Shared test oracles: finite differences and naive convolution loops.

These stay deliberately independent of the library's fast paths; the naive
conv is a direct transcription of the definition and the gradient oracle is
plain central differences.
"""

import numpy as np

from polyrestore.autodiff import TensorNode


def naive_conv2d(x, w, bias=None, stride=1, padding=0):
    """Direct sextuple-loop cross-correlation (reference oracle)."""
    n, ci, h, wd = x.shape
    co, ci_w, kh, kw = w.shape
    assert ci == ci_w
    xp = np.zeros((n, ci, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, co, oh, ow), dtype=np.float64)
    for b in range(n):
        for o in range(co):
            for y in range(oh):
                for z in range(ow):
                    acc = 0.0
                    for c in range(ci):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[b, c, y * stride + i, z * stride + j] * w[o, c, i, j]
                    out[b, o, y, z] = acc + (bias[o] if bias is not None else 0.0)
    return out


def finite_difference_grads(make_loss, params, h=1e-4):
    """Central-difference gradients of a scalar-valued builder w.r.t. each
    parameter tensor (mutates and restores values in place)."""
    grads = []
    for p in params:
        num = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(make_loss().values)
            flat[i] = orig - h
            fm = float(make_loss().values)
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        grads.append(num)
    return grads


def max_relative_error(analytic, numeric):
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(make_loss, params, tol=1e-4, h=1e-4):
    """Backprop vs central differences; returns the worst relative error."""
    for p in params:
        p.grad = None
    loss = make_loss()
    loss.backward()
    numeric = finite_difference_grads(make_loss, params, h=h)
    worst = 0.0
    for p, num in zip(params, numeric):
        assert p.grad is not None, "parameter received no gradient"
        worst = max(worst, max_relative_error(p.grad, num))
    assert worst < tol, f"gradient check failed: relative error {worst:.3e} >= {tol}"
    return worst


def rand_node(rng, shape, scale=1.0, requires_grad=True):
    return TensorNode(rng.standard_normal(shape) * scale, requires_grad=requires_grad,
                      dtype=np.float64)
