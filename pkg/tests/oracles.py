"""Reference implementations used only by the tests.

Written as plain loops so they share nothing with the vectorised kernels.
"""
import numpy as np


def rel_err(a, b) -> float:
    """max |a - b| relative to the larger max-magnitude of the two."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    diff = np.abs(a - b).max(initial=0.0)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def naive_conv2d(x, w, b, stride=1, pad=0):
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, k, ho, wo))
    for i in range(n):
        for o in range(k):
            for r in range(ho):
                for s in range(wo):
                    acc = b[o]
                    for ch in range(c):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[i, ch, r * stride + u, s * stride + v] * w[o, ch, u, v]
                    out[i, o, r, s] = acc
    return out


def naive_maxpool(x, window, stride):
    n, c, h, w = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    out = np.zeros((n, c, ho, wo))
    arg = np.zeros((n, c, ho, wo, 2), dtype=int)
    for i in range(n):
        for ch in range(c):
            for r in range(ho):
                for s in range(wo):
                    best = None
                    for u in range(window):
                        for v in range(window):
                            val = x[i, ch, r * stride + u, s * stride + v]
                            if best is None or val > best:
                                best = val
                                arg[i, ch, r, s] = (r * stride + u, s * stride + v)
                    out[i, ch, r, s] = best
    return out, arg


def xent_reference(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    total = 0.0
    for row, y in zip(logits, labels):
        m = max(row)
        total += -(row[y] - m - np.log(sum(np.exp(v - m) for v in row)))
    return total / len(labels)


def numeric_grad(f, x, h=1e-4):
    """Central differences of the scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g
