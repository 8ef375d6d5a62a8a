"""Compiled message-passing loops.

All arrays are edge-major ``(rows, B)``.  Every sum and product runs in a
fixed sequential order (edge id order), so results do not depend on the
batch size or on how a dataset is chunked.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def variable(llr, p_prev, w1_t, w2_tab, var_of_edge, others, out):
    E, B = out.shape
    W = others.shape[1]
    acc = np.empty(B)
    for e in range(E):
        acc[:] = 0.0
        for k in range(W):
            s = others[e, k]
            if s < E:
                w = w2_tab[e, k]
                for b in range(B):
                    acc[b] += w * p_prev[s, b]
        l = var_of_edge[e]
        we = w1_t[e]
        for b in range(B):
            out[e, b] = we * llr[l, b] + acc[b]


@njit(cache=True)
def output(llr, p_T, w3, w4, var_edges, E, out):
    n, B = out.shape
    D = var_edges.shape[1]
    for l in range(n):
        for b in range(B):
            acc = 0.0
            for k in range(D):
                e = var_edges[l, k]
                if e < E:
                    acc += p_T[e, b] * w3[e]
            out[l, b] = w4[l] * llr[l, b] + acc


@njit(cache=True)
def minsum(v, check_edges, check_deg, p, sel, sgn):
    """Exclusive sign-product times exclusive minimum magnitude.

    ``sel`` receives the edge supplying the magnitude (lowest edge id on
    ties, ``E`` when the exclusion set is empty) and ``sgn`` the product of
    the other edges' signs (a zero message counts as positive).
    """
    E, B = v.shape
    M = check_edges.shape[0]
    m1 = np.empty(B)
    m2 = np.empty(B)
    i1 = np.empty(B, dtype=np.int64)
    i2 = np.empty(B, dtype=np.int64)
    parity = np.empty(B, dtype=np.bool_)
    for m in range(M):
        d = check_deg[m]
        m1[:] = np.inf
        m2[:] = np.inf
        i1[:] = E
        i2[:] = E
        parity[:] = False
        for j in range(d):
            e = check_edges[m, j]
            for b in range(B):
                x = v[e, b]
                a = abs(x)
                parity[b] = parity[b] != (x < 0)
                lt1 = a < m1[b]
                lt2 = a < m2[b]
                i2[b] = i1[b] if lt1 else (e if lt2 else i2[b])
                i1[b] = e if lt1 else i1[b]
                m2[b] = min(m2[b], max(m1[b], a))
                m1[b] = min(m1[b], a)
        for j in range(d):
            e = check_edges[m, j]
            for b in range(B):
                s = -1.0 if parity[b] != (v[e, b] < 0) else 1.0
                first = e == i1[b]
                mag = m2[b] if first else m1[b]
                src = i2[b] if first else i1[b]
                p[e, b] = s * mag if src != E else s * 0.0
                sel[e, b] = src
                sgn[e, b] = s


@njit(cache=True)
def tanh_check(v, check_edges, check_deg, clamp, p, clamped):
    """``2 atanh`` of the left-to-right product of the other edges' ``tanh(v/2)``."""
    E, B = v.shape
    M = check_edges.shape[0]
    D = check_edges.shape[1]
    tv = np.empty(D)
    for m in range(M):
        d = check_deg[m]
        for b in range(B):
            for j in range(d):
                tv[j] = np.tanh(v[check_edges[m, j], b] / 2.0)
            for k in range(d):
                e = check_edges[m, k]
                if d <= 1:
                    p[e, b] = 0.0
                    clamped[e, b] = False
                    continue
                prod = 1.0
                for j in range(d):
                    if j != k:
                        prod = prod * tv[j]
                hit = abs(prod) >= clamp
                if prod > clamp:
                    prod = clamp
                elif prod < -clamp:
                    prod = -clamp
                p[e, b] = 2.0 * np.arctanh(prod)
                clamped[e, b] = hit


@njit(cache=True)
def tanh_check_backward(v, g_p, check_edges, check_deg, clamp, g_v):
    E, B = v.shape
    M = check_edges.shape[0]
    D = check_edges.shape[1]
    tv = np.empty(D)
    dm = np.empty(D)
    for m in range(M):
        d = check_deg[m]
        if d <= 1:
            for j in range(d):
                for b in range(B):
                    g_v[check_edges[m, j], b] = 0.0
            continue
        for b in range(B):
            for j in range(d):
                tv[j] = np.tanh(v[check_edges[m, j], b] / 2.0)
            for k in range(d):
                prod = 1.0
                for j in range(d):
                    if j != k:
                        prod = prod * tv[j]
                if abs(prod) >= clamp:
                    dm[k] = 0.0
                else:
                    dm[k] = g_p[check_edges[m, k], b] * 2.0 / (1.0 - prod * prod)
            for j in range(d):
                acc = 0.0
                for k in range(d):
                    if k == j:
                        continue
                    part = dm[k]
                    for i in range(d):
                        if i != k and i != j:
                            part = part * tv[i]
                    acc += part
                g_v[check_edges[m, j], b] = acc * (1.0 - tv[j] * tv[j]) / 2.0


@njit(cache=True)
def minsum_backward(v, g_p, sel, sgn, factor, g_v):
    """Route ``g_p * sign * sign(v[sel]) * factor`` to the selected edges."""
    E, B = v.shape
    for e in range(E):
        for b in range(B):
            src = sel[e, b]
            if src == E:
                continue
            c = g_p[e, b] * sgn[e, b] * factor[e, b]
            if v[src, b] < 0:
                c = -c
            g_v[src, b] += c


@njit(cache=True)
def variable_backward(g_v, p_prev, llr, var_of_edge, others, rev_slot, w2_flat, g_w1, g_w2_tab, g_p_prev):
    E, B = g_v.shape
    W = others.shape[1]
    for e in range(E):
        l = var_of_edge[e]
        acc = 0.0
        for b in range(B):
            acc += g_v[e, b] * llr[l, b]
        g_w1[e] = acc
        for k in range(W):
            s = others[e, k]
            if s < E:
                acc = 0.0
                for b in range(B):
                    acc += g_v[e, b] * p_prev[s, b]
                g_w2_tab[e, k] = acc
    for e in range(E):
        g_p_prev[e, :] = 0.0
        for k in range(W):
            s = others[e, k]
            if s < E:
                w = w2_flat[rev_slot[e, k]]
                for b in range(B):
                    g_p_prev[e, b] += w * g_v[s, b]
