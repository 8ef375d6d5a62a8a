"""Parity-check matrices as Tanner graphs.

A :class:`CodeGraph` stores the edge list of a binary parity-check matrix in
canonical order: edges sorted by ``(variable, check)``.  The position of an
edge in that order is its *edge id*, and every message vector in the decoder
is indexed by it.
"""

from __future__ import annotations

import hashlib
import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

EDGE_ORDER_VERSION = 1


class AlistError(ValueError):
    """Malformed alist input; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class CodeConstructionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CodeGraph:
    """Immutable Tanner graph of a binary linear code.

    ``var_idx[e]`` and ``chk_idx[e]`` give the endpoints of edge ``e``.
    ``notes`` holds non-fatal construction warnings (e.g. checks left
    without neighbours after column masking).
    """

    n: int
    num_checks: int
    var_idx: np.ndarray
    chk_idx: np.ndarray
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        var = np.asarray(self.var_idx, dtype=np.int64)
        chk = np.asarray(self.chk_idx, dtype=np.int64)
        if var.shape != chk.shape or var.ndim != 1:
            raise CodeConstructionError("edge endpoint arrays must be 1-D and equal length")
        if self.n < 0 or self.num_checks < 0:
            raise CodeConstructionError("negative dimensions")
        if var.size and (var.min() < 0 or var.max() >= self.n):
            raise CodeConstructionError("variable index out of range")
        if chk.size and (chk.min() < 0 or chk.max() >= self.num_checks):
            raise CodeConstructionError("check index out of range")
        order = np.lexsort((chk, var))
        var, chk = var[order], chk[order]
        if var.size > 1:
            dup = (np.diff(var) == 0) & (np.diff(chk) == 0)
            if dup.any():
                raise CodeConstructionError("duplicate edge")
        var.setflags(write=False)
        chk.setflags(write=False)
        object.__setattr__(self, "var_idx", var)
        object.__setattr__(self, "chk_idx", chk)

    @classmethod
    def from_edges(cls, n: int, num_checks: int, edges: Iterable[tuple[int, int]], notes=()) -> "CodeGraph":
        edges = list(edges)
        var = np.array([e[0] for e in edges], dtype=np.int64)
        chk = np.array([e[1] for e in edges], dtype=np.int64)
        return cls(n, num_checks, var, chk, tuple(notes))

    @classmethod
    def from_matrix(cls, H) -> "CodeGraph":
        H = np.asarray(H)
        if H.ndim != 2:
            raise CodeConstructionError("parity-check matrix must be 2-D")
        rows, cols = np.nonzero(H % 2)
        return cls(H.shape[1], H.shape[0], cols, rows)

    # --- derived quantities -------------------------------------------------

    @property
    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.var_idx.tolist(), self.chk_idx.tolist()))

    @property
    def num_edges(self) -> int:
        return int(self.var_idx.size)

    @property
    def theta(self) -> int:
        """Total edge count, i.e. the sum of variable degrees."""
        return self.num_edges

    @cached_property
    def var_degrees(self) -> np.ndarray:
        d = np.bincount(self.var_idx, minlength=self.n)
        d.setflags(write=False)
        return d

    @cached_property
    def check_degrees(self) -> np.ndarray:
        d = np.bincount(self.chk_idx, minlength=self.num_checks)
        d.setflags(write=False)
        return d

    @property
    def regular(self) -> bool:
        if self.n == 0 or self.num_checks == 0:
            return False
        vd, cd = self.var_degrees, self.check_degrees
        return bool((vd == vd[0]).all() and (cd == cd[0]).all())

    @property
    def k_design(self) -> int:
        return self.n - self.num_checks

    @cached_property
    def rank(self) -> int:
        return gf2_rank(self)

    @property
    def k_true(self) -> int:
        return self.n - self.rank

    @property
    def rate(self) -> float:
        return self.k_true / self.n

    def to_matrix(self) -> np.ndarray:
        H = np.zeros((self.num_checks, self.n), dtype=np.uint8)
        H[self.chk_idx, self.var_idx] = 1
        return H

    def var_neighbors(self, l: int) -> list[int]:
        return self.chk_idx[self.var_idx == l].tolist()

    def check_neighbors(self, m: int) -> list[int]:
        return self.var_idx[self.chk_idx == m].tolist()

    @cached_property
    def fingerprint(self) -> str:
        """SHA-256 of the canonical alist serialization."""
        return hashlib.sha256(serialize_alist(self).encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, CodeGraph):
            return NotImplemented
        return (
            self.n == other.n
            and self.num_checks == other.num_checks
            and np.array_equal(self.var_idx, other.var_idx)
            and np.array_equal(self.chk_idx, other.chk_idx)
        )

    def __hash__(self):
        return hash((self.n, self.num_checks, self.var_idx.tobytes(), self.chk_idx.tobytes()))

    def __repr__(self):
        return f"CodeGraph(n={self.n}, num_checks={self.num_checks}, edges={self.num_edges})"


# --- alist ------------------------------------------------------------------


def _int_row(tokens: list[str], line: int) -> list[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise AlistError(f"non-integer token in {' '.join(tokens)!r}", line) from None


def parse_alist(text: str) -> CodeGraph:
    """Parse MacKay's alist format.

    Neighbour lines may be zero-padded to the maximum degree or not.  The
    variable-side and check-side lists must describe the same edge set.
    """
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(no, toks) for no, toks in lines if toks]
    pos = 0

    def take(what: str) -> tuple[int, list[int]]:
        nonlocal pos
        if pos >= len(lines):
            raise AlistError(f"unexpected end of input while reading {what}", len(text.splitlines()) or None)
        no, toks = lines[pos]
        pos += 1
        return no, _int_row(toks, no)

    no, header = take("header")
    if len(header) != 2 or header[0] < 1 or header[1] < 0:
        raise AlistError("header must be 'n num_checks' with n >= 1", no)
    n, num_checks = header
    no, maxes = take("max degrees")
    if len(maxes) != 2 or min(maxes) < 0:
        raise AlistError("second line must hold two non-negative max degrees", no)
    max_v, max_c = maxes
    no, vdeg = take("variable degrees")
    if len(vdeg) != n:
        raise AlistError(f"expected {n} variable degrees, got {len(vdeg)}", no)
    if any(d < 0 or d > max_v for d in vdeg):
        raise AlistError("variable degree outside [0, max_var_deg]", no)
    no, cdeg = take("check degrees")
    if len(cdeg) != num_checks:
        raise AlistError(f"expected {num_checks} check degrees, got {len(cdeg)}", no)
    if any(d < 0 or d > max_c for d in cdeg):
        raise AlistError("check degree outside [0, max_check_deg]", no)
    if sum(vdeg) != sum(cdeg):
        raise AlistError(f"variable degrees sum to {sum(vdeg)} but check degrees sum to {sum(cdeg)}", no)

    def neighbours(deg: int, upper: int, kind: str) -> list[int]:
        no, row = take(f"{kind} neighbour list")
        nz = [x for x in row if x != 0]
        if len(nz) != deg:
            raise AlistError(f"{kind} lists {len(nz)} neighbours but its degree is {deg}", no)
        if any(z != 0 for z in row[deg:]) or len(row) > max(deg, upper_pad[kind]):
            raise AlistError(f"malformed {kind} neighbour padding", no)
        if any(x < 1 or x > upper for x in nz):
            raise AlistError(f"{kind} neighbour index out of range 1..{upper}", no)
        if len(set(nz)) != len(nz):
            raise AlistError(f"duplicate neighbour in {kind} list", no)
        return [x - 1 for x in nz]

    upper_pad = {"variable": max_v, "check": max_c}
    # with a maximum degree of 0 the neighbour lines are empty and carry no tokens
    col_edges = set()
    for l in range(n if max_v else 0):
        for m in neighbours(vdeg[l], num_checks, "variable"):
            col_edges.add((l, m))
    row_edges = set()
    for m in range(num_checks if max_c else 0):
        for l in neighbours(cdeg[m], n, "check"):
            row_edges.add((l, m))
    if col_edges != row_edges:
        raise AlistError("variable-side and check-side neighbour lists disagree", lines[pos - 1][0])
    if pos != len(lines):
        raise AlistError("trailing content after check lists", lines[pos][0])
    return CodeGraph.from_edges(n, num_checks, sorted(col_edges))


def serialize_alist(g: CodeGraph) -> str:
    """Canonical alist text: zero-padded neighbour lists, LF endings."""
    if g.n == 0:
        raise CodeConstructionError("cannot serialize an empty code (n = 0)")
    vd, cd = g.var_degrees, g.check_degrees
    max_v = int(vd.max()) if vd.size else 0
    max_c = int(cd.max()) if cd.size else 0
    out = [f"{g.n} {g.num_checks}", f"{max_v} {max_c}", " ".join(map(str, vd.tolist())), " ".join(map(str, cd.tolist()))]
    for l in range(g.n):
        nb = [m + 1 for m in g.var_neighbors(l)]
        out.append(" ".join(map(str, nb + [0] * (max_v - len(nb)))))
    by_check: list[list[int]] = [[] for _ in range(g.num_checks)]
    for l, m in zip(g.var_idx.tolist(), g.chk_idx.tolist()):
        by_check[m].append(l + 1)
    for nb in by_check:
        out.append(" ".join(map(str, nb + [0] * (max_c - len(nb)))))
    return "\n".join(out) + "\n"


def read_alist(path) -> CodeGraph:
    return parse_alist(Path(path).read_text())


def write_alist(g: CodeGraph, path) -> None:
    Path(path).write_text(serialize_alist(g))


# --- constructions ------------------------------------------------------------


def peg_construct(n: int, num_checks: int, d_v: int, seed: int = 0) -> CodeGraph:
    """Progressive edge-growth construction with constant variable degree.

    Each new edge of variable ``j`` goes to the check farthest from ``j`` in
    the current graph (unreachable counts as farthest), which is the usual
    PEG rule of connecting to the last level of the breadth-first expansion.
    Among equally far checks the lowest current degree wins; remaining ties
    go to the check ranked first in a permutation drawn from ``seed``.

    Greedy growth leaves check degrees spread by a few units, so a second
    pass moves single edges from the fullest checks to the emptiest ones.
    A move is accepted only if it creates no 4-cycle, and the move landing
    farthest from the variable is preferred.  The pass stops once check
    degrees differ by at most one or no admissible move remains.
    """
    if n < 1 or num_checks < 1 or d_v < 1:
        raise CodeConstructionError("PEG needs n >= 1, num_checks >= 1, d_v >= 1")
    if d_v > num_checks:
        raise CodeConstructionError(f"d_v={d_v} exceeds the number of checks ({num_checks})")
    rank = np.empty(num_checks, dtype=np.int64)
    rank[np.random.default_rng(seed).permutation(num_checks)] = np.arange(num_checks)

    var_adj: list[list[int]] = [[] for _ in range(n)]
    chk_adj: list[list[int]] = [[] for _ in range(num_checks)]
    chk_deg = np.zeros(num_checks, dtype=np.int64)

    for j in range(n):
        for _ in range(d_v):
            dist = _check_distances(j, var_adj, chk_adj, num_checks)
            dist[var_adj[j]] = -1.0
            cands = np.flatnonzero(dist == dist.max())
            d = chk_deg[cands]
            cands = cands[d == d.min()]
            c = int(cands[np.argmin(rank[cands])])
            var_adj[j].append(c)
            chk_adj[c].append(j)
            chk_deg[c] += 1
    _rebalance(var_adj, chk_adj, chk_deg, rank)
    edges = [(j, c) for j in range(n) for c in var_adj[j]]
    return CodeGraph.from_edges(n, num_checks, edges)


def _rebalance(var_adj, chk_adj, chk_deg, rank) -> None:
    """Shift edges from heavy to light checks without creating 4-cycles."""
    num_checks = len(chk_adj)
    while chk_deg.max() - chk_deg.min() > 1:
        hi_order = np.lexsort((rank, -chk_deg))
        lo_order = np.lexsort((rank, chk_deg))
        move = None
        for hi in hi_order:
            if chk_deg[hi] <= chk_deg.min() + 1:
                break
            best = (1.0, -1, -1)
            for v in sorted(chk_adj[hi]):
                var_adj[v].remove(hi)
                chk_adj[hi].remove(v)
                dist = _check_distances(v, var_adj, chk_adj, num_checks)
                var_adj[v].append(hi)
                chk_adj[hi].append(v)
                for lo in lo_order:
                    if chk_deg[lo] >= chk_deg[hi] - 1:
                        break
                    if lo in var_adj[v]:
                        continue
                    if dist[lo] > best[0]:
                        best = (dist[lo], v, int(lo))
            if best[1] >= 0:
                move = (int(hi),) + best[1:]
                break
        if move is None:
            return
        hi, v, lo = move
        var_adj[v][var_adj[v].index(hi)] = lo
        chk_adj[hi].remove(v)
        chk_adj[lo].append(v)
        chk_deg[hi] -= 1
        chk_deg[lo] += 1


def _check_distances(j, var_adj, chk_adj, num_checks) -> np.ndarray:
    """BFS depth (in check levels) of every check from variable ``j``."""
    dist = np.full(num_checks, np.inf)
    frontier = list(var_adj[j])
    dist[frontier] = 0
    seen_vars = {j}
    level = 0
    while frontier:
        level += 1
        nxt = []
        for c in frontier:
            for v in chk_adj[c]:
                if v in seen_vars:
                    continue
                seen_vars.add(v)
                for c2 in var_adj[v]:
                    if dist[c2] == np.inf:
                        dist[c2] = level
                        nxt.append(c2)
        frontier = nxt
    return dist


def mask_columns(g: CodeGraph, keep: Sequence[int]) -> CodeGraph:
    """Descendant code keeping the listed columns (in the given order).

    Checks left with no neighbours stay in the graph; a note is recorded and
    a :class:`UserWarning` is emitted.
    """
    keep = [int(k) for k in keep]
    if not keep:
        raise CodeConstructionError("keep list is empty")
    if len(set(keep)) != len(keep):
        raise CodeConstructionError("keep list has duplicates")
    if min(keep) < 0 or max(keep) >= g.n:
        raise CodeConstructionError("keep index out of range")
    new_pos = np.full(g.n, -1, dtype=np.int64)
    new_pos[np.array(keep)] = np.arange(len(keep))
    sel = new_pos[g.var_idx] >= 0
    var = new_pos[g.var_idx[sel]]
    chk = g.chk_idx[sel]
    notes = list(g.notes)
    empty = np.flatnonzero(np.bincount(chk, minlength=g.num_checks) == 0)
    if empty.size:
        msg = f"{empty.size} check(s) have no neighbours after masking"
        notes.append(msg)
        warnings.warn(msg, stacklevel=2)
    return CodeGraph(len(keep), g.num_checks, var, chk, tuple(notes))


# --- GF(2) ----------------------------------------------------------------------


def _rows_as_ints(g: CodeGraph) -> list[int]:
    rows = [0] * g.num_checks
    for l, m in zip(g.var_idx.tolist(), g.chk_idx.tolist()):
        rows[m] |= 1 << l
    return rows


def gf2_rank(g: CodeGraph) -> int:
    """Rank of H over GF(2), rows packed into Python ints."""
    rows = [r for r in _rows_as_ints(g) if r]
    rank = 0
    while rows:
        pivot = rows.pop()
        rank += 1
        low = pivot & -pivot
        rows = [r ^ pivot if r & low else r for r in rows]
        rows = [r for r in rows if r]
    return rank


def syndrome_ok(g: CodeGraph, bits) -> bool:
    bits = np.asarray(bits)
    if bits.shape != (g.n,):
        raise ValueError(f"expected {g.n} bits, got shape {bits.shape}")
    syn = np.bincount(g.chk_idx, weights=(bits[g.var_idx] & 1), minlength=g.num_checks)
    return bool(np.all(syn.astype(np.int64) % 2 == 0))


def girth(g: CodeGraph) -> float:
    """Length of the shortest cycle in the Tanner graph (``inf`` if acyclic)."""
    # bipartite graph: variables 0..n-1, checks n..n+num_checks-1
    adj: list[list[int]] = [[] for _ in range(g.n + g.num_checks)]
    for l, m in zip(g.var_idx.tolist(), g.chk_idx.tolist()):
        adj[l].append(g.n + m)
        adj[g.n + m].append(l)
    best = float("inf")
    for src in range(g.n):
        dist = {src: 0}
        parent = {src: -1}
        q = deque([src])
        while q:
            u = q.popleft()
            if 2 * dist[u] + 1 >= best:
                break
            for w in adj[u]:
                if w not in dist:
                    dist[w] = dist[u] + 1
                    parent[w] = u
                    q.append(w)
                elif parent[u] != w:
                    best = min(best, dist[u] + dist[w] + 1)
    return best


# --- bundled codes ------------------------------------------------------------


def spc(n: int) -> CodeGraph:
    """Single parity-check code of length ``n``."""
    return CodeGraph.from_edges(n, 1, [(l, 0) for l in range(n)])


def hamming_7_4() -> CodeGraph:
    # column j (1-based) is the binary expansion of j
    H = np.array([[(j >> b) & 1 for j in range(1, 8)] for b in range(3)], dtype=np.uint8)
    return CodeGraph.from_matrix(H)


def tanner_155() -> CodeGraph:
    """Tanner's (155, 64) code: 3x5 array of 31x31 circulant permutations.

    Block (r, c) is the identity shifted by ``2**c * 5**r mod 31``.
    """
    p = 31
    H = np.zeros((3 * p, 5 * p), dtype=np.uint8)
    for r in range(3):
        for c in range(5):
            s = (pow(2, c, p) * pow(5, r, p)) % p
            for i in range(p):
                H[r * p + i, c * p + (i + s) % p] = 1
    return CodeGraph.from_matrix(H)


BUILTIN_CODES = {
    "tanner155": tanner_155,
    "hamming74": hamming_7_4,
    "spc3": lambda: spc(3),
}


def load_code(spec: str) -> CodeGraph:
    """Load a code from an alist path or a builtin name (``tanner155`` ...)."""
    path = Path(spec)
    if path.exists():
        return read_alist(path)
    name = path.name.removesuffix(".alist")
    if name in BUILTIN_CODES:
        data = resources.files("nbpgap") / "data" / f"{name}.alist"
        if data.is_file():
            return parse_alist(data.read_text())
        return BUILTIN_CODES[name]()
    raise FileNotFoundError(f"no alist file or builtin code named {spec!r}")
