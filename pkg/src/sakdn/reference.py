"""Straight-line loop implementations used as oracles by the verify suite.

Nothing here shares code with the vectorized modules: every product, norm and
sum is spelled out element by element, so agreement to ~1e-10 is evidence
that the fast paths compute the intended formulas.
"""

from __future__ import annotations

import math

import numpy as np


def _relu(v: float) -> float:
    return v if v > 0.0 else 0.0


def similarity(a: np.ndarray) -> np.ndarray:
    """Row-normalized Gram matrix of the flattened (b, ...) activations."""
    b = a.shape[0]
    r = a.reshape(b, -1)
    gram = np.zeros((b, b))
    for i in range(b):
        for j in range(b):
            s = 0.0
            for t in range(r.shape[1]):
                s += r[i, t] * r[j, t]
            gram[i, j] = s
    out = np.zeros((b, b))
    for i in range(b):
        norm = math.sqrt(sum(gram[i, j] ** 2 for j in range(b)))
        for j in range(b):
            out[i, j] = gram[i, j] / norm if norm > 0 else 0.0
    return out


def squeeze(a: np.ndarray) -> np.ndarray:
    b, c, h, w = a.shape
    s = np.zeros((b, c))
    for i in range(b):
        for k in range(c):
            total = 0.0
            for y in range(h):
                for x in range(w):
                    total += a[i, k, y, x]
            s[i, k] = total / (h * w)
    return s


def _dense(w: np.ndarray, bias: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.zeros(w.shape[0])
    for o in range(w.shape[0]):
        s = bias[o]
        for i in range(w.shape[1]):
            s += w[o, i] * v[i]
        out[o] = s
    return out


def _matvec_rows(g: np.ndarray, s: np.ndarray) -> np.ndarray:
    b, c = s.shape
    out = np.zeros((b, c))
    for i in range(b):
        for k in range(c):
            out[i, k] = sum(g[i, j] * s[j, k] for j in range(b))
    return out


def fuse(acts: list[np.ndarray], p: dict[str, np.ndarray]) -> list[np.ndarray]:
    """Similarity-weighted joint representations, shared excitation gate, channel recalibration."""
    weighted = [_matvec_rows(similarity(a), squeeze(a)) for a in acts]
    b, c = weighted[0].shape
    out = [np.zeros_like(a) for a in acts]
    for i in range(b):
        con = [weighted[k][i, ch] for k in range(len(acts)) for ch in range(c)]
        tot = [sum(weighted[k][i, ch] for k in range(len(acts))) for ch in range(c)]
        had = []
        for ch in range(c):
            v = 1.0
            for k in range(len(acts)):
                v *= weighted[k][i, ch]
            had.append(v)
        z_con = _dense(p["W_con1"], p["b_con1"], np.array(con))
        z_sum = _dense(p["W_sum1"], p["b_sum1"], np.array(tot))
        z_had = _dense(p["W_had1"], p["b_had1"], np.array(had))
        e_con = _dense(p["W_con2"], p["b_con2"], z_con)
        e_sum = _dense(p["W_sum2"], p["b_sum2"], z_sum)
        e_had = _dense(p["W_had2"], p["b_had2"], z_had)
        for ch in range(c):
            gate = _relu(e_con[ch]) + _relu(e_sum[ch]) + _relu(e_had[ch])
            for k, a in enumerate(acts):
                out[k][i, ch] = gate * a[i, ch]
    return out


def graph_q(f: np.ndarray, mode: str = "paper") -> np.ndarray:
    b = f.shape[0]
    w = np.zeros((b, b))
    for i in range(b):
        for j in range(b):
            d2 = sum((f[i, t] - f[j, t]) ** 2 for t in range(f.shape[1]))
            w[i, j] = math.exp(-d2 / 2.0)
    deg = [sum(w[i, j] for j in range(b)) for i in range(b)]
    q = np.zeros((b, b))
    for i in range(b):
        for j in range(b):
            if mode == "paper":
                q[i, j] = math.sqrt(deg[i]) * w[i, j] / math.sqrt(deg[j])
            else:
                q[i, j] = w[i, j] / (math.sqrt(deg[i]) * math.sqrt(deg[j]))
    return q


def slope(q: np.ndarray, f: np.ndarray, q_a: np.ndarray, f_a: np.ndarray, eps: float) -> np.ndarray:
    b, d = f.shape
    out = np.zeros((b, d))
    for i in range(b):
        for t in range(d):
            qf = sum(q[i, j] * f[j, t] for j in range(b))
            qf_a = sum(q_a[i, j] * f_a[j, t] for j in range(b))
            den = qf
            if abs(den) < eps:
                den = -eps if den < 0 else eps
            out[i, t] = (qf - qf_a) / den
    return out


def saliency(omega: np.ndarray, a: np.ndarray) -> np.ndarray:
    b, c, h, w = a.shape
    out = np.zeros((b, h, w))
    for i in range(b):
        wb = sum(omega[i]) / omega.shape[1]
        for y in range(h):
            for x in range(w):
                out[i, y, x] = _relu(wb * sum(a[i, k, y, x] for k in range(c)))
    return out


def gaf(x: np.ndarray) -> np.ndarray:
    """cos(phi_i + phi_j) via the angle-sum identity, from raw (unnormalized) x."""
    lo, hi = min(x), max(x)
    xn = [((v - hi) + (v - lo)) / (hi - lo) for v in x]
    n = len(xn)
    g = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            si = math.sqrt(max(0.0, 1.0 - xn[i] ** 2))
            sj = math.sqrt(max(0.0, 1.0 - xn[j] ** 2))
            g[i, j] = xn[i] * xn[j] - si * sj
    return g
