"""Neural belief propagation: BP unrolled over ``T`` iterations with edge weights.

Messages are flat arrays indexed by edge id (canonical ``(variable, check)``
order of :class:`~nbpgap.code_graph.CodeGraph`), batched along a leading
axis.  Weight storage:

``w1``  ``(T, E)``   multiplies the channel LLR on each edge
``w2``  ``(T, P)``   one weight per ordered pair of distinct edges sharing a
                     variable, ordered by target edge id then by the rank of
                     the source edge among the target's siblings
``w3``  ``(E,)``     output weights, ordered by variable then neighbour rank
``w4``  ``(n,)``     diagonal output weights on the LLR

With every weight equal to one the decoder is plain BP (sum-product in
``tanh`` mode, min-sum in ``minsum`` mode).  The output ``o = sigmoid(u)`` is
the belief that the bit equals 0.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import _kernels as _k
from .code_graph import EDGE_ORDER_VERSION, CodeGraph

MODES = ("tanh", "minsum", "scaled_minsum", "offset_minsum")
TANH_CLAMP = 1.0 - 1e-12
CHECKPOINT_FORMAT = "nbpgap-weights"
CHECKPOINT_VERSION = 1
# largest double below 1; keeps the sigmoid strictly inside (0, 1)
_O_MAX = 1.0 - 2.0**-53
_O_MIN = np.finfo(np.float64).tiny


class DecoderError(ValueError):
    pass


class CheckpointMismatch(DecoderError):
    """Checkpoint does not belong to the code it is being used with."""


# --- graph layout -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Layout:
    """Index tables derived once per code.

    Rows shorter than the table width are padded with the dummy edge id ``E``.
    """

    n: int
    E: int
    P: int
    var_of_edge: np.ndarray  # (E,)
    var_edges: np.ndarray  # (n, dv_max) edge ids, pad E
    others: np.ndarray  # (E, dv_max-1) sibling edge ids, pad E
    pair_slot: np.ndarray  # (P,) flat slot in the (E, dv_max-1) table
    rev_others_slot: np.ndarray  # (E, dv_max-1) flat slot of the reverse pair
    check_edges: np.ndarray  # (M, dc_max) edge ids, pad E
    check_deg: np.ndarray  # (M,)
    edge_check_pos: np.ndarray  # (E, 2) (check, position) of each edge

    @property
    def width(self) -> int:
        return self.others.shape[1]


@lru_cache(maxsize=32)
def layout_for(g: CodeGraph) -> Layout:
    E, n, M = g.num_edges, g.n, g.num_checks
    var, chk = g.var_idx, g.chk_idx
    vdeg = g.var_degrees
    dv_max = int(vdeg.max()) if n else 0
    var_ptr = np.concatenate([[0], np.cumsum(vdeg)])

    var_edges = np.full((n, max(dv_max, 1)), E, dtype=np.int64)
    width = max(dv_max - 1, 1)
    others = np.full((E, width), E, dtype=np.int64)
    pair_slot = []
    for l in range(n):
        es = np.arange(var_ptr[l], var_ptr[l + 1])
        var_edges[l, : es.size] = es
        for e in es:
            sib = es[es != e]
            others[e, : sib.size] = sib
            pair_slot.extend(e * width + np.arange(sib.size))
    pair_slot = np.asarray(pair_slot, dtype=np.int64)

    # reverse lookup: for target e and sibling slot k (source e' = others[e,k])
    # the slot of the pair whose target is e' and source is e
    rev = np.full((E, width), -1, dtype=np.int64)
    for e in range(E):
        for k in range(width):
            s = others[e, k]
            if s == E:
                continue
            kk = int(np.flatnonzero(others[s] == e)[0])
            rev[e, k] = s * width + kk

    cdeg = g.check_degrees
    dc_max = int(cdeg.max()) if M else 0
    check_edges = np.full((M, max(dc_max, 1)), E, dtype=np.int64)
    order = np.lexsort((np.arange(E), chk))
    ptr = np.concatenate([[0], np.cumsum(cdeg)])
    pos = np.empty((E, 2), dtype=np.int64)
    for m in range(M):
        es = order[ptr[m] : ptr[m + 1]]
        check_edges[m, : es.size] = es
        pos[es, 0] = m
        pos[es, 1] = np.arange(es.size)

    return Layout(
        n=n, E=E, P=int(pair_slot.size), var_of_edge=var.copy(), var_edges=var_edges,
        others=others, pair_slot=pair_slot, rev_others_slot=rev, check_edges=check_edges,
        check_deg=cdeg.copy(), edge_check_pos=pos,
    )


# --- weights ------------------------------------------------------------------


@dataclass
class NbpWeights:
    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    mode: str = "minsum"
    w_bound: float | None = None
    beta_t: np.ndarray | None = None

    PARAMS = ("w1", "w2", "w3", "w4")

    def __post_init__(self):
        if self.mode not in MODES:
            raise DecoderError(f"unknown check-layer mode {self.mode!r}; expected one of {MODES}")
        needs_beta = self.mode in ("scaled_minsum", "offset_minsum")
        if needs_beta and self.beta_t is None:
            raise DecoderError(f"mode {self.mode} needs beta_t")
        if not needs_beta and self.beta_t is not None:
            raise DecoderError(f"beta_t is only used by scaled/offset min-sum, not {self.mode}")
        if self.w1.ndim != 2 or self.w2.ndim != 2 or self.w1.shape[0] != self.w2.shape[0]:
            raise DecoderError("w1 and w2 must be (T, .) arrays with equal T")
        if self.beta_t is not None and self.beta_t.shape != self.w1.shape:
            raise DecoderError("beta_t must have the shape of w1")

    @property
    def T(self) -> int:
        return int(self.w1.shape[0])

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.PARAMS}

    def replace(self, **arrays) -> "NbpWeights":
        kw = {k: getattr(self, k) for k in self.PARAMS}
        kw.update(arrays)
        return NbpWeights(**kw, mode=self.mode, w_bound=self.w_bound, beta_t=self.beta_t)

    def copy(self) -> "NbpWeights":
        out = self.replace(**{k: v.copy() for k, v in self.params().items()})
        if self.beta_t is not None:
            out.beta_t = self.beta_t.copy()
        return out

    def max_abs(self) -> float:
        return max(float(np.abs(a).max(initial=0.0)) for a in self.params().values())

    def check_graph(self, g: CodeGraph) -> None:
        lay = layout_for(g)
        want = {"w1": (self.T, lay.E), "w2": (self.T, lay.P), "w3": (lay.E,), "w4": (g.n,)}
        for k, shape in want.items():
            if getattr(self, k).shape != shape:
                raise DecoderError(f"{k} has shape {getattr(self, k).shape}, code needs {shape}")


def project(weights: NbpWeights, w_bound: float | None = None) -> NbpWeights:
    """Clamp every weight to ``[-w_bound, w_bound]`` in place."""
    b = weights.w_bound if w_bound is None else w_bound
    if b is None:
        return weights
    for a in weights.params().values():
        np.clip(a, -b, b, out=a)
    return weights


def init_weights(
    g: CodeGraph,
    T: int,
    mode: str = "minsum",
    init: str = "all_one",
    w_bound: float | None = None,
    seed: int = 0,
    eps: float = 0.1,
    beta_t=None,
) -> NbpWeights:
    """Fresh weights with the sparsity of ``g``.

    ``init="all_one"`` gives classical BP.  ``init="uniform"`` draws each
    weight from ``1 + U(-eps, eps)``.  If ``w_bound`` is set the result is
    projected onto the bound.
    """
    if T < 1:
        raise DecoderError("T must be at least 1")
    lay = layout_for(g)
    shapes = {"w1": (T, lay.E), "w2": (T, lay.P), "w3": (lay.E,), "w4": (g.n,)}
    if init == "all_one":
        arrays = {k: np.ones(s) for k, s in shapes.items()}
    elif init == "uniform":
        rng = np.random.default_rng(seed)
        arrays = {k: 1.0 + rng.uniform(-eps, eps, size=s) for k, s in shapes.items()}
    else:
        raise DecoderError(f"unknown init {init!r}")
    if beta_t is not None:
        beta_t = np.broadcast_to(np.asarray(beta_t, dtype=np.float64), (T, lay.E)).copy()
    elif mode == "scaled_minsum":
        beta_t = np.ones((T, lay.E))
    elif mode == "offset_minsum":
        beta_t = np.zeros((T, lay.E))
    w = NbpWeights(**arrays, mode=mode, w_bound=w_bound, beta_t=beta_t)
    return project(w)


def _w2_table(lay: Layout, w2_t: np.ndarray) -> np.ndarray:
    tab = np.zeros(lay.E * lay.width)
    tab[lay.pair_slot] = w2_t
    return tab.reshape(lay.E, lay.width)


# --- layers -------------------------------------------------------------------
#
# Internally every message array is edge-major, shape (E, B), so gathers along
# the graph pull contiguous rows.  Public helpers accept the natural (B, E) or
# (E,) layout and transpose at the boundary.


def _as_batch(a, length: int, what: str) -> tuple[np.ndarray, bool]:
    """Return an edge-major ``(length, B)`` copy plus a single-vector flag."""
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != length:
        raise DecoderError(f"{what} must have length {length}, got shape {a.shape}")
    return np.ascontiguousarray(a.T), single


def _out(a: np.ndarray, single: bool) -> np.ndarray:
    return a[:, 0].copy() if single else np.ascontiguousarray(a.T)


def variable_layer(llr, p_prev, weights: NbpWeights, t: int, g: CodeGraph) -> np.ndarray:
    """``v[e] = w1[t,e] llr[l] + sum_k w2[t,e,k] p_prev[sibling_k(e)]`` (``t`` 0-based)."""
    lay = layout_for(g)
    llr, single = _as_batch(llr, g.n, "llr")
    p_prev, _ = _as_batch(p_prev, lay.E, "p_prev")
    if p_prev.shape[1] != llr.shape[1]:
        raise DecoderError("llr and p_prev batch sizes differ")
    v = _variable(lay, llr, p_prev, weights.w1[t], _w2_table(lay, weights.w2[t]))
    return _out(v, single)


def _variable(lay, llr, p_prev, w1_t, w2_tab):
    out = np.empty_like(p_prev)
    _k.variable(llr, p_prev, w1_t, w2_tab, lay.var_of_edge, lay.others, out)
    return out


@dataclass
class CheckAux:
    """Per-iteration bookkeeping needed to differentiate the check layer."""

    sel: np.ndarray | None = None  # min-sum: edge supplying the magnitude (E: none)
    sign: np.ndarray | None = None  # min-sum: product of sibling signs
    active: np.ndarray | None = None  # offset min-sum: magnitude above offset
    clamped: np.ndarray | None = None  # tanh: product hit the clamp


def check_layer(v, mode: str, g: CodeGraph, beta_t=None) -> np.ndarray:
    """Check-node update for one iteration.

    ``tanh``: ``2 atanh(prod tanh(v/2))`` over the other edges of the check.
    ``minsum``: product of their signs times their smallest magnitude.
    ``scaled_minsum`` multiplies the min-sum message by ``beta_t[e]``;
    ``offset_minsum`` subtracts ``beta_t[e]`` from its magnitude (floored at 0).
    """
    lay = layout_for(g)
    v, single = _as_batch(v, lay.E, "v")
    if mode in ("scaled_minsum", "offset_minsum") and beta_t is None:
        raise DecoderError(f"mode {mode} needs beta_t")
    beta = None if beta_t is None else np.asarray(beta_t, dtype=np.float64)
    p, _ = _check(lay, v, mode, beta)
    return _out(p, single)


def _check(lay: Layout, v: np.ndarray, mode: str, beta_t, want_aux: bool = True):
    if mode == "tanh":
        return _check_tanh(lay, v)
    if mode not in MODES:
        raise DecoderError(f"unknown check-layer mode {mode!r}")
    if mode == "offset_minsum" and np.any(beta_t < 0):
        raise DecoderError("min-sum offsets must be non-negative")
    return _check_minsum(lay, v, mode, beta_t, want_aux)


def _check_minsum(lay, v, mode, beta_t, want_aux=True):
    p = np.empty_like(v)
    sel = np.empty(v.shape, dtype=np.int64)
    sgn = np.empty_like(v)
    _k.minsum(v, lay.check_edges, lay.check_deg, p, sel, sgn)
    aux = CheckAux(sel=sel, sign=sgn) if want_aux else CheckAux()
    if mode == "scaled_minsum":
        p = beta_t[:, None] * p
    elif mode == "offset_minsum":
        b = beta_t[:, None]
        if want_aux:
            aux.active = np.abs(p) > b
        p = p - np.clip(p, -b, b)
    return p, aux


def _check_tanh(lay, v):
    p = np.empty_like(v)
    clamped = np.empty(v.shape, dtype=bool)
    _k.tanh_check(v, lay.check_edges, lay.check_deg, TANH_CLAMP, p, clamped)
    return p, CheckAux(clamped=clamped)


def output_layer(llr, p_T, weights: NbpWeights, g: CodeGraph) -> tuple[np.ndarray, np.ndarray]:
    """``u[l] = w4[l] llr[l] + sum_{e at l} w3[e] p_T[e]``; ``o = sigmoid(u)``."""
    lay = layout_for(g)
    llr, single = _as_batch(llr, g.n, "llr")
    p_T, _ = _as_batch(p_T, lay.E, "p_T")
    u = _output(lay, llr, p_T, weights.w3, weights.w4)
    return _out(u, single), _out(sigmoid(u), single)


def _output(lay, llr, p_T, w3, w4):
    out = np.empty_like(llr)
    _k.output(llr, p_T, w3, w4, lay.var_edges, lay.E, out)
    return out


def sigmoid(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    e = np.exp(-np.abs(u))
    o = np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(o, _O_MIN, _O_MAX)


# --- full pass ----------------------------------------------------------------


@dataclass
class ForwardTrace:
    """Everything ``forward`` computed.

    Arrays are edge-major: ``v[t]`` and ``p[t]`` (iteration ``t+1``) have
    shape ``(E, B)`` and ``llr``, ``u``, ``o`` have shape ``(n, B)``.  Use
    :meth:`messages` and :attr:`outputs` for the caller's layout.
    """

    llr: np.ndarray
    v: list = field(default_factory=list)
    p: list = field(default_factory=list)
    aux: list = field(default_factory=list)
    u: np.ndarray | None = None
    o: np.ndarray | None = None
    single: bool = False

    @property
    def T(self) -> int:
        return len(self.v)

    def p_prev(self, t: int) -> np.ndarray:
        return np.zeros_like(self.v[0]) if t == 0 else self.p[t - 1]

    def messages(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """``(v, p)`` of iteration ``t`` (0-based) shaped like the input."""
        return _out(self.v[t], self.single), _out(self.p[t], self.single)

    @property
    def outputs(self) -> tuple[np.ndarray, np.ndarray]:
        """``(u, o)`` shaped like the input."""
        return _out(self.u, self.single), _out(self.o, self.single)


def forward(llr, weights: NbpWeights, g: CodeGraph, keep_trace: bool = True) -> ForwardTrace:
    """Run ``T`` variable/check iterations and the output layer.

    ``llr`` may be a single vector of length ``n`` or a ``(B, n)`` batch.
    With ``keep_trace=False`` only the final outputs are retained.
    """
    lay = layout_for(g)
    weights.check_graph(g)
    llr, single = _as_batch(llr, g.n, "llr")
    tr = ForwardTrace(llr=llr, single=single)
    p = np.zeros((lay.E, llr.shape[1]))
    for t in range(weights.T):
        v = _variable(lay, llr, p, weights.w1[t], _w2_table(lay, weights.w2[t]))
        beta = None if weights.beta_t is None else weights.beta_t[t]
        p, aux = _check(lay, v, weights.mode, beta, keep_trace)
        if keep_trace:
            tr.v.append(v)
            tr.p.append(p)
            tr.aux.append(aux)
    tr.u = _output(lay, llr, p, weights.w3, weights.w4)
    tr.o = sigmoid(tr.u)
    return tr


def decode(llr, weights: NbpWeights, g: CodeGraph) -> np.ndarray:
    """Soft outputs ``o`` in the caller's layout."""
    return forward(llr, weights, g, keep_trace=False).outputs[1]


def hard_decision(o) -> np.ndarray:
    """Bit 0 where ``o >= 0.5``, else bit 1."""
    return (np.asarray(o) < 0.5).astype(np.uint8)


def ber_loss(x_hat, x) -> float:
    """Hamming distance over ``n``; for a batch, the mean over words."""
    x_hat, x = np.asarray(x_hat), np.asarray(x)
    if x_hat.shape != x.shape:
        raise DecoderError(f"length mismatch: {x_hat.shape} vs {x.shape}")
    if x.size == 0:
        raise DecoderError("empty words")
    return float(np.mean(x_hat != x))


# --- checkpoints --------------------------------------------------------------


def checkpoint_header(weights: NbpWeights, g: CodeGraph, extra: dict | None = None) -> dict:
    lay = layout_for(g)
    head = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "code_hash": g.fingerprint,
        "n": g.n,
        "T": weights.T,
        "mode": weights.mode,
        "w_bound": weights.w_bound,
        "edge_order_version": EDGE_ORDER_VERSION,
        "num_edges": lay.E,
        "num_pairs": lay.P,
        "has_beta_t": weights.beta_t is not None,
        "order": ["w1[t][e]", "w2[t][e][k]", "w3[e]", "w4[l]", "beta_t[t][e]"],
    }
    if extra:
        head["extra"] = extra
    return head


def snap_float32(weights: NbpWeights) -> NbpWeights:
    """Round every stored weight to float32 precision in place."""
    for a in weights.params().values():
        a[...] = a.astype(np.float32)
    if weights.beta_t is not None:
        weights.beta_t[...] = weights.beta_t.astype(np.float32)
    return weights


def save_checkpoint(weights: NbpWeights, g: CodeGraph, path, extra: dict | None = None) -> None:
    head = json.dumps(checkpoint_header(weights, g, extra), sort_keys=True).encode()
    parts = [weights.w1.ravel(), weights.w2.ravel(), weights.w3, weights.w4]
    if weights.beta_t is not None:
        parts.append(weights.beta_t.ravel())
    body = np.concatenate(parts).astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(body)


def load_checkpoint(path, g: CodeGraph) -> tuple[NbpWeights, dict]:
    """Read weights for code ``g``; raises :class:`CheckpointMismatch` on a foreign code."""
    from .channel import read_container

    head, body = read_container(path)
    if head.get("format") != CHECKPOINT_FORMAT:
        raise DecoderError(f"{path}: not a weight checkpoint")
    if head.get("code_hash") != g.fingerprint:
        raise CheckpointMismatch(f"{path}: checkpoint was trained on a different code")
    if head.get("edge_order_version") != EDGE_ORDER_VERSION:
        raise CheckpointMismatch(f"{path}: edge order version {head.get('edge_order_version')} not supported")
    lay = layout_for(g)
    T = int(head["T"])
    flat = np.frombuffer(body, dtype="<f4").astype(np.float64)
    sizes = [T * lay.E, T * lay.P, lay.E, g.n] + ([T * lay.E] if head["has_beta_t"] else [])
    if flat.size != sum(sizes):
        raise DecoderError(f"{path}: expected {sum(sizes)} floats, found {flat.size}")
    chunks = np.split(flat, np.cumsum(sizes)[:-1])
    w = NbpWeights(
        w1=chunks[0].reshape(T, lay.E), w2=chunks[1].reshape(T, lay.P), w3=chunks[2], w4=chunks[3],
        mode=head["mode"], w_bound=head["w_bound"],
        beta_t=chunks[4].reshape(T, lay.E) if head["has_beta_t"] else None,
    )
    return w, head
