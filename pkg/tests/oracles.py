"""Independent reference implementations used as test oracles.

Nothing here imports the decoder or bound code under test; these are plain
loops over the parity-check matrix written from the textbook definitions.
"""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np


def checks_of(H):
    return [list(np.flatnonzero(row)) for row in H]


def vars_of(H):
    return [list(np.flatnonzero(col)) for col in np.asarray(H).T]


def _variable_messages(C, V, llr, c2v):
    v2c = {}
    for l, nbrs in enumerate(V):
        for m in nbrs:
            s = 0.0
            for m2 in nbrs:
                if m2 != m:
                    s = s + c2v[m2][l]
            v2c[(l, m)] = llr[l] + s
    return v2c


def _outputs(V, llr, c2v):
    out = []
    for l, nbrs in enumerate(V):
        s = 0.0
        for m in nbrs:
            s = s + c2v[m][l]
        out.append(llr[l] + s)
    return np.array(out)


def minsum_bp(H, llr, T):
    """Classical flooding min-sum; returns the final output LLRs per bit."""
    H = np.asarray(H)
    C, V = checks_of(H), vars_of(H)
    c2v = [{l: 0.0 for l in row} for row in C]
    for _ in range(T):
        v2c = _variable_messages(C, V, llr, c2v)
        for m, row in enumerate(C):
            vals = [v2c[(l, m)] for l in row]
            mags = [abs(x) for x in vals]
            for i, l in enumerate(row):
                if len(row) == 1:
                    c2v[m][l] = 0.0
                    continue
                sign, mag = 1.0, math.inf
                for j, x in enumerate(vals):
                    if j != i:
                        if x < 0:
                            sign = -sign
                        mag = min(mag, mags[j])
                c2v[m][l] = sign * mag
    return _outputs(V, llr, c2v)


def sum_product_bp(H, llr, T):
    """Flooding sum-product in the probability domain (``1 - 2 Pr(bit = 1)`` products)."""
    H = np.asarray(H)
    C, V = checks_of(H), vars_of(H)
    c2v = [{l: 0.0 for l in row} for row in C]
    for _ in range(T):
        v2c = _variable_messages(C, V, llr, c2v)
        for m, row in enumerate(C):
            d = [1.0 - 2.0 / (1.0 + math.exp(v2c[(l, m)])) for l in row]
            for i, l in enumerate(row):
                if len(row) == 1:
                    c2v[m][l] = 0.0
                    continue
                delta = 1.0
                for j, x in enumerate(d):
                    if j != i:
                        delta *= x
                c2v[m][l] = math.log((1.0 + delta) / (1.0 - delta))
    return _outputs(V, llr, c2v)


def brute_girth(H) -> float:
    """Shortest cycle length by checking every cycle length 4, 6, ... exhaustively (small codes only)."""
    H = np.asarray(H)
    C, V = checks_of(H), vars_of(H)
    best = math.inf
    # BFS from every node in the bipartite graph, tracking the first revisit
    nodes = [("v", i) for i in range(H.shape[1])] + [("c", j) for j in range(H.shape[0])]

    def nbrs(node):
        kind, i = node
        return [("c", m) for m in V[i]] if kind == "v" else [("v", l) for l in C[i]]

    for src in nodes:
        dist = {src: 0}
        par = {src: None}
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for w in nbrs(u):
                    if w not in dist:
                        dist[w] = dist[u] + 1
                        par[w] = u
                        nxt.append(w)
                    elif par[u] != w:
                        best = min(best, dist[u] + dist[w] + 1)
            frontier = nxt
    return best


def gf2_rank_dense(H) -> int:
    """Rank over GF(2) by row reduction of a numpy copy."""
    A = (np.asarray(H) % 2).astype(np.uint8).copy()
    rows, cols = A.shape
    r = 0
    for c in range(cols):
        piv = next((i for i in range(r, rows) if A[i, c]), None)
        if piv is None:
            continue
        A[[r, piv]] = A[[piv, r]]
        for i in range(rows):
            if i != r and A[i, c]:
                A[i] ^= A[r]
        r += 1
        if r == rows:
            break
    return r


def codewords(H):
    """All codewords of a small code by enumeration."""
    H = np.asarray(H)
    n = H.shape[1]
    for bits in itertools.product((0, 1), repeat=n):
        x = np.array(bits)
        if not (H @ x % 2).any():
            yield x


# --- high-precision bound formulas ------------------------------------------------

mpmath.mp.dps = 50


def mp_theorem1(n, d_v, T, m, w, b, delta):
    n, d_v, T, m, w, b, delta = map(mpmath.mpf, (n, d_v, T, m, w, b, delta))
    comp = 12 * mpmath.sqrt((n * d_v**2 * T + 1) * (T + 1) / m * mpmath.log(8 * mpmath.sqrt(m * n) * w * d_v * b))
    return comp + 4 / m + mpmath.sqrt(mpmath.log(1 / delta) / (2 * m))


def mp_rho_w3(n, d_v, T, w, b):
    """Lipschitz coefficient of the output weights, straight from the closed form."""
    n, d_v, w, b = map(mpmath.mpf, (n, d_v, w, b))
    B1 = w * mpmath.sqrt(d_v)
    B2 = w * (d_v - 1)
    geo = (B2 ** (T - 1) - 1) / (B2 - 1)
    return mpmath.sqrt(n) * B1 * b * (geo + B2 ** (T - 1))


def mp_rho_W2(n, d_v, T, w, b):
    n, d_v, w, b = map(mpmath.mpf, (n, d_v, w, b))
    B1 = B3 = w * mpmath.sqrt(d_v)
    B2 = w * (d_v - 1)
    r = mpmath.sqrt(n) * B2
    s = mpmath.sqrt(n)
    return (n * T * b * B1 * B3 * (r ** (T - 1) - 1) / (r - 1)
            + n * b * B1 * B3 * B2 ** (T - 2) * (s ** (T - 1) - 1) / (s - 1))


def mp_prob_unbounded(n, beta, b):
    beta, b = mpmath.mpf(beta), mpmath.mpf(b)
    Q = lambda x: mpmath.erfc(x / mpmath.sqrt(2)) / 2
    a = (beta**2 * b + 2) / (2 * beta)
    c = (beta**2 * b - 2) / (2 * beta)
    return 1 - (1 - Q(a) - Q(c)) ** n
