"""Plain-numpy reference implementations used as test oracles.

Nothing here imports torch or the package's loss code: every quantity is
recomputed from scratch with explicit loops or elementary numpy.
"""
import math

import numpy as np


def unpack_mlp(weights, in_dim, hidden, num_classes):
    """Split a flat vector into [(W, b), ...] using torch Linear order (W is out x in)."""
    layers, pos, width = [], 0, in_dim
    for out in list(hidden) + [num_classes]:
        W = np.asarray(weights[pos:pos + out * width]).reshape(out, width)
        pos += out * width
        b = np.asarray(weights[pos:pos + out])
        pos += out
        layers.append((W, b))
        width = out
    assert pos == len(weights)
    return layers


def mlp_logits(weights, in_dim, hidden, num_classes, X):
    h = np.asarray(X, dtype=np.float64)
    layers = unpack_mlp(weights, in_dim, hidden, num_classes)
    for i, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def softmax_rows(Z):
    out = []
    for z in Z:
        m = max(z)
        e = [math.exp(v - m) for v in z]
        s = sum(e)
        out.append([v / s for v in e])
    return np.array(out)


def cross_entropy(Z, y):
    total = 0.0
    for z, label in zip(Z, y):
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        total += lse - z[label]
    return total / len(y)


def kl(p, q, floor=1e-12):
    total = 0.0
    for pi, qi in zip(p, q):
        if pi > 0:
            total += pi * (math.log(pi) - math.log(max(qi, floor)))
    return total


def mean_kl(P, Q):
    return sum(kl(p, q) for p, q in zip(P, Q)) / len(P)


def error_rate(y, pred):
    wrong = 0
    for a, b in zip(y, pred):
        wrong += int(a != b)
    return wrong / len(y)


def argmax_lowest(z):
    best = 0
    for j in range(1, len(z)):
        if z[j] > z[best]:
            best = j
    return best


def ic_err(y, pred, a, b):
    num = den = 0
    for t, p in zip(y, pred):
        if t in (a, b):
            den += 1
            num += int(p != t)
    return num / den


def fgt_err(y, pred, a, b):
    return sum(1 for t, p in zip(y, pred) if (t == a and p == b) or (t == b and p == a))


def rewind_brute(errors, reference, final):
    """Index to rewind to (None = keep final): nearest to reference, latest on ties."""
    if final <= reference:
        return None
    gaps = [abs(e - reference) for e in errors]
    best = min(gaps)
    return max(i for i, g in enumerate(gaps) if g == best)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def central_diff(f, w, h=1e-6):
    w = np.array(w, dtype=np.float64)
    g = np.zeros_like(w)
    for i in range(w.size):
        up, dn = w.copy(), w.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g
