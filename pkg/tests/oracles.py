"""Scalar-loop reference implementations.

Everything here is written with plain Python loops and ``math`` so that it
shares no code path with the vectorised package.  Inputs are nested lists
or numpy arrays indexed element by element.
"""

import math

import numpy as np


def sigmoid(v):
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def swish(v):
    return v * sigmoid(v)


def softplus(v):
    return max(v, 0.0) + math.log1p(math.exp(-abs(v)))


def matmul(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += a[i][p] * b[p][j]
            out[i, j] = acc
    return out


def squeeze(x, w_sq):
    T, H, L = x.shape
    out = np.zeros(L)
    for l in range(L):
        acc = 0.0
        for h in range(H):
            mean = 0.0
            for t in range(T):
                mean += x[t, h, l]
            acc += (mean / T) * w_sq[h, 0]
        out[l] = swish(acc)
    return out


def excite(x_sq, w1, w2):
    L = len(x_sq)
    s = w1.shape[1]
    hidden = np.zeros(s)
    for j in range(s):
        acc = 0.0
        for l in range(L):
            acc += x_sq[l] * w1[l, j]
        hidden[j] = swish(acc)
    out = np.zeros(L)
    for l in range(L):
        acc = 0.0
        for j in range(s):
            acc += hidden[j] * w2[j, l]
        out[l] = sigmoid(acc)
    return out


def reweight(x, w):
    T, H, L = x.shape
    out = np.zeros_like(x)
    for t in range(T):
        for h in range(H):
            for l in range(L):
                out[t, h, l] = x[t, h, l] * w[l]
    return out


def merge_projection(x_att, w1, w2, w3):
    T, H, L = x_att.shape
    out = np.zeros((T, H))
    for t in range(T):
        flat = [0.0] * (H * L)
        for l in range(L):
            for h in range(H):
                flat[h + H * l] = x_att[t, h, l]
        a = matmul([flat], w1)
        b = matmul(a, w2)
        c = matmul(b, w3)
        out[t] = c[0]
    return out


def linm_merge(x, theta):
    T, H, L = x.shape
    w = [softplus(v) for v in theta]
    out = np.zeros((T, H))
    for t in range(T):
        for h in range(H):
            acc = 0.0
            for l in range(L):
                acc += w[l] * x[t, h, l]
            out[t, h] = acc
    return out


def lstm_logits(x, w_x, w_h, b, w_out, b_out, readout="final"):
    T, H = x.shape
    r = w_h.shape[0]
    h = [0.0] * r
    c = [0.0] * r
    hs = []
    for t in range(T):
        z = [0.0] * (4 * r)
        for j in range(4 * r):
            acc = b[j]
            for k in range(H):
                acc += x[t, k] * w_x[k, j]
            for k in range(r):
                acc += h[k] * w_h[k, j]
            z[j] = acc
        new_h = [0.0] * r
        for k in range(r):
            i = sigmoid(z[k])
            f = sigmoid(z[r + k])
            g = math.tanh(z[2 * r + k])
            o = sigmoid(z[3 * r + k])
            c[k] = f * c[k] + i * g
            new_h[k] = o * math.tanh(c[k])
        h = new_h
        hs.append(h)
    if readout == "mean":
        h = [sum(hs[t][k] for t in range(T)) / T for k in range(r)]
    return [b_out[j] + sum(h[k] * w_out[k, j] for k in range(r)) for j in range(2)]


def pooling_logits(x, w_frame, b_frame, w_att, b_att, w_out, b_out, eps=1e-8):
    T, H = x.shape
    p = w_frame.shape[1]
    frames = []
    for t in range(T):
        frames.append([swish(b_frame[j] + sum(x[t, k] * w_frame[k, j] for k in range(H))) for j in range(p)])
    energies = [b_att[0] + sum(frames[t][j] * w_att[j, 0] for j in range(p)) for t in range(T)]
    top = max(energies)
    exps = [math.exp(e - top) for e in energies]
    z = sum(exps)
    alpha = [e / z for e in exps]
    mean = [sum(alpha[t] * frames[t][j] for t in range(T)) for j in range(p)]
    std = []
    for j in range(p):
        var = sum(alpha[t] * (frames[t][j] - mean[j]) ** 2 for t in range(T))
        std.append(math.sqrt(var + eps) - math.sqrt(eps))
    stats = mean + std
    return [b_out[o] + sum(stats[j] * w_out[j, o] for j in range(2 * p)) for o in range(2)]


def brute_force_eer(bona, spoof):
    """Enumerate every threshold; EER where FAR - FRR changes sign.

    Same conventions as the package: a spoof is accepted when its score is
    >= t, a bona fide trial is rejected when its score is < t, thresholds are
    the distinct scores plus a reject-all point, and the crossing is linearly
    interpolated between neighbouring thresholds.
    """
    thresholds = sorted(set(list(bona) + list(spoof))) + [math.inf]
    far, frr = [], []
    for t in thresholds:
        far.append(sum(1 for s in spoof if s >= t) / len(spoof))
        frr.append(sum(1 for s in bona if s < t) / len(bona))
    prev = far[0] - frr[0]
    if prev <= 0:
        return far[0]
    for k in range(1, len(thresholds)):
        d = far[k] - frr[k]
        if d == 0:
            return far[k]
        if d < 0:
            a = prev / (prev - d)
            return far[k - 1] + a * (far[k] - far[k - 1])
        prev = d
    raise AssertionError("no crossing")
