"""Independent reference implementations used as test oracles.

Everything here is written as plainly as possible (explicit loops, Python
floats, mpmath) and shares no code with the package.
"""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np

mpmath.mp.dps = 50


def matmul_loop(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def softmax_mp(row):
    xs = [mpmath.mpf(float(v)) for v in row]
    top = max(xs)
    es = [mpmath.exp(x - top) for x in xs]
    total = mpmath.fsum(es)
    return np.array([float(e / total) for e in es])


def gelu_mp(x):
    x = mpmath.mpf(float(x))
    return float(x * (1 + mpmath.erf(x / mpmath.sqrt(2))) / 2)


def batch_norm_two_pass(x, gamma, beta, eps=1e-5):
    x = np.asarray(x, float)
    out = np.empty_like(x)
    n, f = x.shape
    for j in range(f):
        col = [float(v) for v in x[:, j]]
        mean = math.fsum(col) / n
        var = math.fsum((v - mean) ** 2 for v in col) / n
        for i in range(n):
            out[i, j] = gamma[j] * (col[i] - mean) / math.sqrt(var + eps) + beta[j]
    return out


def layer_norm_loop(x, gamma, beta, eps=1e-5):
    x = np.asarray(x, float)
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape[:-1]):
        row = [float(v) for v in x[idx]]
        mean = math.fsum(row) / len(row)
        var = math.fsum((v - mean) ** 2 for v in row) / len(row)
        out[idx] = [(v - mean) / math.sqrt(var + eps) * g + b for v, g, b in zip(row, gamma, beta)]
    return out


def attention_loop(x, wq, bq, wk, bk, wv, bv, wo, bo, n_heads, head_dim):
    """Multi-head self-attention for one (T, d) sequence, one scalar at a time.

    Weights follow the ``y = x @ W + b`` convention.
    """
    t_len = x.shape[0]
    q = matmul_loop(x, wq) + bq
    k = matmul_loop(x, wk) + bk
    v = matmul_loop(x, wv) + bv
    heads = np.zeros((t_len, n_heads * head_dim))
    weights = np.zeros((n_heads, t_len, t_len))
    for h in range(n_heads):
        sl = slice(h * head_dim, (h + 1) * head_dim)
        for i in range(t_len):
            scores = []
            for j in range(t_len):
                s = 0.0
                for d in range(head_dim):
                    s += q[i, sl][d] * k[j, sl][d]
                scores.append(s / math.sqrt(head_dim))
            top = max(scores)
            es = [math.exp(s - top) for s in scores]
            tot = math.fsum(es)
            for j in range(t_len):
                weights[h, i, j] = es[j] / tot
            for d in range(head_dim):
                heads[i, h * head_dim + d] = math.fsum(weights[h, i, j] * v[j, sl][d] for j in range(t_len))
    return matmul_loop(heads, wo) + bo, weights


def adam_scripted(w0, grad, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar Adam trajectory, one Python float at a time."""
    w, m, v = float(w0), 0.0, 0.0
    path = []
    for t in range(1, steps + 1):
        g = grad(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w = w - lr * mhat / (math.sqrt(vhat) + eps)
        path.append(w)
    return path


# -- imputation baselines -----------------------------------------------------------


def nearest_brute(x, obs):
    out = list(x)
    idx = [i for i, o in enumerate(obs) if o]
    for i, o in enumerate(obs):
        if o:
            continue
        best = None
        for j in idx:  # ascending, so a strict < keeps the earlier one on ties
            if best is None or abs(i - j) < abs(i - best):
                best = j
        out[i] = x[best]
    return np.array(out)


def median_brute(x, obs):
    vals = sorted(float(v) for v, o in zip(x, obs) if o)
    n = len(vals)
    med = vals[n // 2] if n % 2 else (vals[n // 2 - 1] + vals[n // 2]) / 2
    return np.array([v if o else med for v, o in zip(x, obs)])


def mode_brute(x, obs, decimals=6):
    counts: dict[float, int] = {}
    for v, o in zip(x, obs):
        if o:
            r = round(float(v), decimals)
            counts[r] = counts.get(r, 0) + 1
    top = max(counts.values())
    key = min(k for k, c in counts.items() if c == top)
    mode = min(float(v) for v, o in zip(x, obs) if o and round(float(v), decimals) == key)
    return np.array([v if o else mode for v, o in zip(x, obs)])


# -- metrics ----------------------------------------------------------------------------


def mae_loop(p, t):
    return math.fsum(abs(a - b) for a, b in zip(p, t)) / len(p)


def rmse_loop(p, t):
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(p, t)) / len(p))


def rank_by_permutations(values):
    """Average ranks from enumerating every sort order consistent with the data.

    Each element's rank is averaged over all permutations that sort the
    values ascending; for tied elements this is the mean of their positions.
    """
    n = len(values)
    totals = [0.0] * n
    count = 0
    for perm in itertools.permutations(range(n)):
        if all(values[perm[i]] <= values[perm[i + 1]] for i in range(n - 1)):
            count += 1
            for pos, i in enumerate(perm):
                totals[i] += pos + 1
    return [tot / count for tot in totals]


def pearson_loop(a, b):
    n = len(a)
    ma, mb = math.fsum(a) / n, math.fsum(b) / n
    num = math.fsum((x - ma) * (y - mb) for x, y in zip(a, b))
    den = math.sqrt(math.fsum((x - ma) ** 2 for x in a) * math.fsum((y - mb) ** 2 for y in b))
    return num / den


# -- windows ---------------------------------------------------------------------------


def homogeneous_windows_brute(labels, window_len, stride, valid):
    """Try every start in turn: advance by one until the window is homogeneous
    and valid, then by ``stride`` after emitting it."""
    out = []
    start = 0
    while start + window_len <= len(labels):
        window = labels[start : start + window_len]
        if window[0] in valid and all(lab == window[0] for lab in window):
            out.append(start)
            start += stride
        else:
            start += 1
    return out


# -- gradients --------------------------------------------------------------------------


def central_diff(fn, arr, h=1e-5):
    """d fn() / d arr by perturbing ``arr`` in place; ``fn`` returns a float."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def rel_err(a, b, floor=1e-8):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))
