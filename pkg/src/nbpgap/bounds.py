"""Closed-form generalization bounds for NBP decoders and a Rademacher estimator.

Every quantity that contains a power of the form ``(sqrt(n) B_W2)**T`` is
computed in natural-log space; the bounds themselves are moderate numbers
but their ingredients overflow float64 at realistic ``(n, T)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtr

from .code_graph import CodeGraph

DEFAULT_DELTA = 0.05
DEFAULT_W = 1.0
DEFAULT_B_LAMBDA = 10.0
FIG2_ANCHOR = dict(n=100, d_v=10, T=10, m=10**6, w=DEFAULT_W, b_lambda=DEFAULT_B_LAMBDA, delta=DEFAULT_DELTA)
FIG3_BETAS = (0.5, 0.75, 1.0, 1.5, 2.0)
RATE_RELATION_RTOL = 1e-9


class BoundsError(ValueError):
    """Invalid inputs to a bound computation."""


class PreconditionError(BoundsError):
    """Inputs are well formed but outside the domain where the bound is defined."""


def default_b_lambda_grid() -> np.ndarray:
    return np.logspace(-1, 3, 64)


# --- inputs and reports ---------------------------------------------------------


@dataclass(frozen=True)
class BoundInputs:
    """Scalars feeding the bounds.

    ``profile`` (per-variable degrees) replaces ``d_v`` for irregular codes;
    ``d_c`` and ``kappa`` are only needed by the high-rate form and ``beta``
    only by the unbounded-LLR bound.
    """

    n: int
    d_v: float
    T: int
    m: float
    w: float = DEFAULT_W
    b_lambda: float = DEFAULT_B_LAMBDA
    delta: float = DEFAULT_DELTA
    d_c: float | None = None
    kappa: float | None = None
    beta: float | None = None
    profile: tuple | None = None

    def __post_init__(self):
        if self.n < 1 or self.T < 1 or self.m <= 0:
            raise BoundsError("n, T and m must be positive")
        if self.d_v < 1:
            raise BoundsError("d_v must be at least 1")
        if self.w < 0 or self.b_lambda < 0:
            raise BoundsError("w and b_lambda must be non-negative")
        if not 0 < self.delta < 1:
            raise BoundsError(f"delta must lie in (0, 1), got {self.delta}")
        if self.beta is not None and self.beta <= 0:
            raise BoundsError("beta must be positive")
        if self.profile is not None:
            if len(self.profile) == 0:
                raise BoundsError("degree profile is empty")
            if min(self.profile) < 1:
                raise BoundsError("degrees in a profile must be at least 1")

    def replace(self, **kw) -> "BoundInputs":
        return BoundInputs(**{**asdict(self), **kw})

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["profile"] is not None:
            d["profile"] = list(d["profile"])
        return d

    @classmethod
    def from_graph(cls, g: CodeGraph, T: int, m: float, **kw) -> "BoundInputs":
        prof = tuple(int(d) for d in g.var_degrees)
        return cls(n=g.n, d_v=max(prof), T=T, m=m, profile=None if g.regular else prof, **kw)


@dataclass
class BoundReport:
    kind: str
    inputs: dict
    terms: dict
    total: float
    flags: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "inputs": self.inputs,
            "terms": self.terms,
            "total": self.total,
            "flags": list(self.flags),
            **self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --- log-domain helpers ---------------------------------------------------------


def _log(x: float) -> float:
    return -math.inf if x == 0 else math.log(x)


def log_geometric_sum(log_r: float, k: int) -> tuple[float, bool]:
    """``log(sum_{i<k} r**i)`` given ``log r``; second value flags the ``r == 1`` limit."""
    if k <= 0:
        return -math.inf, False
    if log_r == -math.inf:
        return 0.0, False
    if log_r == 0.0:
        return math.log(k), True
    x = k * log_r
    if log_r > 0:
        # log(r**k - 1) - log(r - 1)
        num = x + math.log(-math.expm1(-x))
        den = log_r + math.log(-math.expm1(-log_r))
    else:
        num = math.log(-math.expm1(x))
        den = math.log(-math.expm1(log_r))
    return num - den, False


def _logsum(*terms: float) -> float:
    return float(np.logaddexp.reduce(np.array(terms, dtype=float)))


# --- spectral norms, Lipschitz constants, covering numbers ------------------------


def spectral_bounds(w: float, d_v=None, profile=None) -> tuple[float, float, float, float]:
    """Norm bounds ``(B_W1, B_W2, B_w3, B_w4)`` for weights bounded by ``w``.

    For an irregular code pass ``profile``; the maximum degree stands in for
    ``d_v``.
    """
    if profile is not None:
        d_v = max(profile)
    if d_v is None or d_v < 1:
        raise BoundsError("need d_v >= 1 or a degree profile")
    if w < 0:
        raise BoundsError("w must be non-negative")
    r = math.sqrt(d_v)
    return w * r, w * (d_v - 1), w * r, float(w)


@dataclass(frozen=True)
class LipschitzConstants:
    """Norm bounds and Lipschitz coefficients; every ``log_*`` field is a natural log.

    ``log_rho_W1[i - 1]`` belongs to iteration ``i = 1..T``; the single
    ``log_rho_W2`` value applies to every iteration ``i = 2..T`` and is
    ``None`` when ``T == 1``.
    """

    B_W1: float
    B_W2: float
    B_w3: float
    B_w4: float
    log_rho_W1: tuple
    log_rho_W2: float | None
    log_rho_w3: float
    log_rho_w4: float
    flags: tuple = ()

    @property
    def rho_w4(self) -> float:
        return math.exp(self.log_rho_w4)


def lipschitz_constants(inputs: BoundInputs) -> LipschitzConstants:
    n, T, b = inputs.n, inputs.T, inputs.b_lambda
    B1, B2, B3, B4 = spectral_bounds(inputs.w, inputs.d_v, inputs.profile)
    lb, l1, l2, l3 = _log(b), _log(B1), _log(B2), _log(B3)
    lsn = 0.5 * math.log(n)
    flags = []
    if T <= 2:
        flags.append("small_T")

    rho1 = tuple(math.log(n) + lb + l3 + (T - i) * (lsn + l2) if T > i else math.log(n) + lb + l3 for i in range(1, T + 1))

    rho2 = None
    if T >= 2:
        g_a, lim_a = log_geometric_sum(lsn + l2, T - 1)
        g_b, lim_b = log_geometric_sum(lsn, T - 1)
        if lim_a:
            flags.append("limit_sqrt_n_B_W2")
        if lim_b:
            flags.append("limit_sqrt_n")
        pow_b2 = 0.0 if T == 2 else (T - 2) * l2
        rho2 = _logsum(
            math.log(n) + math.log(T) + lb + l1 + l3 + g_a,
            math.log(n) + lb + l1 + l3 + pow_b2 + g_b,
        )

    g_c, lim_c = log_geometric_sum(l2, T - 1)
    if lim_c:
        flags.append("limit_B_W2")
    pow_c = 0.0 if T == 1 else (T - 1) * l2
    rho3 = lsn + l1 + lb + _logsum(g_c, pow_c)
    return LipschitzConstants(B1, B2, B3, B4, rho1, rho2, rho3, lb, tuple(flags))


def log_covering_sparse(q: float, r: float, c: float, B_W: float, epsilon: float) -> float:
    """Log covering number of ``r x c`` matrices with ``q`` non-zeros per row and norm at most ``B_W``."""
    if epsilon <= 0:
        raise BoundsError("epsilon must be positive")
    return q * r * math.log1p(2.0 * min(math.sqrt(r), math.sqrt(c)) * B_W / epsilon)


def log_covering_decoder(inputs: BoundInputs, epsilon: float) -> float:
    """Log covering number of the bit-``j`` decoder class at scale ``epsilon``.

    Product of the per-matrix covers, each at resolution
    ``epsilon / ((2T + 1) rho)``.
    """
    if epsilon <= 0:
        raise BoundsError("epsilon must be positive")
    n, T = inputs.n, inputs.T
    lip = lipschitz_constants(inputs)
    if inputs.profile is not None:
        prof = np.asarray(inputs.profile, dtype=float)
        e1, e2, e3, dmax = prof.sum(), ((prof - 1) * prof).sum(), prof.max(), prof.max()
    else:
        dv = inputs.d_v
        e1, e2, e3, dmax = n * dv, (dv - 1) * n * dv, dv, dv
    c = math.log(4 * T + 2) - math.log(epsilon)

    def term(expo, log_scale):
        return expo * float(np.logaddexp(0.0, c + log_scale))

    total = sum(term(e1, 0.5 * math.log(n) + _log(lip.B_W1) + r) for r in lip.log_rho_W1)
    if lip.log_rho_W2 is not None:
        total += (T - 1) * term(e2, 0.5 * math.log(n * dmax) + _log(lip.B_W2) + lip.log_rho_W2)
    total += term(e3, _log(lip.B_w3) + lip.log_rho_w3)
    total += term(1.0, _log(lip.B_w4) + lip.log_rho_w4)
    return total


# --- Theorems 1 and 2 -------------------------------------------------------------


def sample_term(m: float) -> float:
    return 4.0 / m


def confidence_term(m: float, delta: float) -> float:
    return math.sqrt(math.log(1.0 / delta) / (2.0 * m))


def _log_argument(n, m, w, d, b_lambda) -> float:
    return 8.0 * math.sqrt(m * n) * w * d * b_lambda


def _check_log_argument(n, m, w, d, b_lambda):
    arg = _log_argument(n, m, w, d, b_lambda)
    if not arg > 1.0:
        raise PreconditionError(
            f"log argument 8*sqrt(m*n)*w*d_v*b_lambda = {arg:.6g} must exceed 1 "
            f"(n={n}, m={m}, w={w}, d_v={d}, b_lambda={b_lambda})"
        )
    return arg


def dominant_term(n, d_v, T, m, w=DEFAULT_W, b_lambda=DEFAULT_B_LAMBDA) -> float:
    """The complexity term ``12 sqrt((n d_v^2 T + 1)(T + 1) / m * log(8 sqrt(mn) w d_v b_lambda))``."""
    arg = _check_log_argument(n, m, w, d_v, b_lambda)
    return 12.0 * math.sqrt((n * d_v**2 * T + 1.0) * (T + 1.0) / m * math.log(arg))


def _assemble(kind, inputs, complexity, extra_flags=(), **terms) -> BoundReport:
    s, c = sample_term(inputs.m), confidence_term(inputs.m, inputs.delta)
    parts = {"complexity": complexity, "sample": s, "confidence": c, **terms}
    total = float(sum(parts.values()))
    flags = list(extra_flags)
    if total >= 1.0:
        flags.append("vacuous")
    return BoundReport(kind, inputs.to_dict(), parts, total, flags)


def theorem1_rhs(inputs: BoundInputs) -> BoundReport:
    """Generalization-gap bound for a regular code with bounded LLRs."""
    D = dominant_term(inputs.n, inputs.d_v, inputs.T, inputs.m, inputs.w, inputs.b_lambda)
    return _assemble("theorem1", inputs, D)


def check_rate_relation(n, d_v, d_c, kappa, rtol=RATE_RELATION_RTOL):
    """Raise unless ``n d_v == n (1 - kappa) d_c`` (edges counted from both sides)."""
    lhs, rhs = n * d_v, n * (1.0 - kappa) * d_c
    if not math.isclose(lhs, rhs, rel_tol=rtol):
        raise BoundsError(
            f"degree/rate mismatch: n*d_v = {lhs:.9g} but n*(1-kappa)*d_c = {rhs:.9g}"
        )


def theorem1_rate_form(inputs: BoundInputs) -> BoundReport:
    """Regular-code bound with ``n d_v^2`` rewritten as ``n d_c^2 (1 - kappa)^2``."""
    if inputs.d_c is None or inputs.kappa is None:
        raise BoundsError("rate form needs d_c and kappa")
    if not 0 <= inputs.kappa < 1:
        raise BoundsError("kappa must lie in [0, 1)")
    check_rate_relation(inputs.n, inputs.d_v, inputs.d_c, inputs.kappa)
    n, T, m = inputs.n, inputs.T, inputs.m
    arg = _check_log_argument(n, m, inputs.w, inputs.d_v, inputs.b_lambda)
    eff = n * inputs.d_c**2 * (1.0 - inputs.kappa) ** 2
    D = 12.0 * math.sqrt((eff * T + 1.0) * (T + 1.0) / m * math.log(arg))
    return _assemble("rate_form", inputs, D)


def theorem2_rhs(profile, inputs: BoundInputs) -> BoundReport:
    """Bound for an irregular code with per-variable degrees ``profile``."""
    prof = np.asarray(list(profile), dtype=float)
    if prof.size == 0:
        raise BoundsError("degree profile is empty")
    if prof.size != inputs.n:
        raise BoundsError(f"profile has {prof.size} entries, expected n={inputs.n}")
    if prof.min() < 1:
        raise BoundsError("degrees must be at least 1")
    T, m = inputs.T, inputs.m
    arg = _check_log_argument(inputs.n, m, inputs.w, prof.max(), inputs.b_lambda)
    sq = float((prof**2).sum())
    D = 12.0 * math.sqrt(sq * (T + 1.0) ** 2 / m * math.log(arg))
    rep = _assemble("theorem2", inputs.replace(profile=tuple(prof.tolist())), D)
    rep.extra["sum_sq_degrees"] = sq
    rep.extra["max_degree"] = float(prof.max())
    return rep


# --- unbounded LLRs --------------------------------------------------------------


def q_function(x):
    """Standard normal upper tail ``Q(x) = erfc(x / sqrt 2) / 2``."""
    return ndtr(-np.asarray(x, dtype=float)) if np.ndim(x) else float(ndtr(-float(x)))


def prob_llr_unbounded(n: int, beta: float, b_lambda: float) -> float:
    """Probability that some ``|lambda[i]|`` exceeds ``b_lambda`` over ``n`` BPSK/AWGN bits.

    ``1 - (1 - Q(a) - Q(b))**n`` with ``a = (beta^2 b + 2) / (2 beta)`` and
    ``b = (beta^2 b - 2) / (2 beta)``.
    """
    if beta <= 0:
        raise BoundsError("beta must be positive")
    if n < 1 or b_lambda < 0:
        raise BoundsError("need n >= 1 and b_lambda >= 0")
    a = (beta**2 * b_lambda + 2.0) / (2.0 * beta)
    b = (beta**2 * b_lambda - 2.0) / (2.0 * beta)
    if b < 0:
        # inside probability Phi(b) - Q(a) = Q(-b) - Q(a); exactly 0 at b_lambda = 0
        inside = q_function(-b) - q_function(a)
        if inside <= 0:
            return 1.0
        return float(-math.expm1(n * math.log(inside)))
    s = q_function(a) + q_function(b)
    if s >= 1.0:
        return 1.0
    return float(min(1.0, max(0.0, -math.expm1(n * math.log1p(-s)))))


def theorem3_rhs(inputs: BoundInputs, b_lambda_grid=None) -> BoundReport:
    """Unbounded-LLR bound: minimum over ``b_lambda`` of dominant term plus exceedance probability."""
    if inputs.beta is None:
        raise BoundsError("the unbounded-LLR bound needs the channel noise std beta")
    grid = default_b_lambda_grid() if b_lambda_grid is None else np.asarray(b_lambda_grid, dtype=float)
    if grid.size == 0:
        raise BoundsError("b_lambda grid is empty")
    curve = []
    for b in grid.tolist():
        if _log_argument(inputs.n, inputs.m, inputs.w, inputs.d_v, b) <= 1.0:
            continue
        D = dominant_term(inputs.n, inputs.d_v, inputs.T, inputs.m, inputs.w, b)
        P = prob_llr_unbounded(inputs.n, inputs.beta, b)
        curve.append({"b_lambda": b, "complexity": D, "probability": P, "phi": D + P})
    if not curve:
        raise PreconditionError("no b_lambda grid point satisfies the log-argument precondition")
    best = min(range(len(curve)), key=lambda i: curve[i]["phi"])
    opt = curve[best]
    rep = _assemble(
        "theorem3", inputs.replace(b_lambda=opt["b_lambda"]), opt["complexity"],
        probability=opt["probability"],
    )
    if best == 0:
        rep.flags.append("argmin_at_grid_start")
    elif best == len(curve) - 1:
        rep.flags.append("argmin_at_grid_end")
    rep.extra["b_lambda_star"] = opt["b_lambda"]
    rep.extra["curve"] = curve
    return rep


# --- Rademacher bound and estimator ---------------------------------------------------


def proposition1_rhs(estimates, n: int, m: float, delta: float, half: bool = False) -> float:
    """``(1/n) sum_j R_m[j] + sqrt(log(1/delta) / 2m)``; ``half`` uses ``1/(2n)``.

    A scalar ``estimates`` is a pooled estimate reused for all ``n`` bits.
    """
    if not 0 < delta <= 1:
        raise BoundsError(f"delta must lie in (0, 1], got {delta}")
    est = np.asarray(estimates, dtype=float)
    if est.ndim == 0:
        est = np.full(n, float(est))
    if est.shape != (n,):
        raise BoundsError(f"expected {n} bit-wise estimates, got shape {est.shape}")
    coef = 1.0 / (2 * n) if half else 1.0 / n
    return float(coef * est.sum() + confidence_term(m, delta))


RADEMACHER_CHUNK = 256


def rademacher_from_outputs(outputs, sigma_draws: int, seed: int = 0) -> float:
    """Monte-Carlo ``E_sigma max_k (1/m) sum_i sigma_i f_k(i)`` for a finite class.

    ``outputs`` has shape ``(K, m)`` with entries in ``{-1, +1}``.  Draws come
    in fixed chunks, chunk ``c`` from ``default_rng([seed, c])``.
    """
    F = np.atleast_2d(np.asarray(outputs, dtype=float))
    K, m = F.shape
    if m == 0:
        raise BoundsError("empty dataset")
    if K < 1 or sigma_draws < 1:
        raise BoundsError("need at least one function and one sigma draw")
    total = 0.0
    for c, lo in enumerate(range(0, sigma_draws, RADEMACHER_CHUNK)):
        rows = min(RADEMACHER_CHUNK, sigma_draws - lo)
        rng = np.random.default_rng([int(seed), c])
        sigma = rng.integers(0, 2, size=(rows, m)) * 2.0 - 1.0
        corr = sigma @ F.T / m
        total += float(corr.max(axis=1).sum())
    return total / sigma_draws


def sample_weights(g: CodeGraph, T: int, w: float, K: int, mode: str = "minsum", seed: int = 0):
    """``K`` decoders with every weight uniform in ``[-w, w]``."""
    from .nbp_decoder import NbpWeights, init_weights

    if K < 1:
        raise BoundsError("K must be at least 1")
    out = []
    for k in range(K):
        base = init_weights(g, T, mode, seed=0)
        rng = np.random.default_rng([int(seed), k])
        params = {name: rng.uniform(-w, w, size=np.shape(a)) for name, a in base.params().items()}
        out.append(NbpWeights(**params, mode=base.mode, w_bound=w, beta_t=base.beta_t))
    return out


def estimate_bitwise_rademacher(g: CodeGraph, weight_samples, dataset, j: int, sigma_draws: int, seed: int = 0) -> float:
    """Lower estimate of the bit-``j`` Rademacher complexity over a sampled decoder subclass.

    Hard decisions are mapped ``0 -> +1`` and ``1 -> -1``.
    """
    from .nbp_decoder import decode, hard_decision

    llr = dataset.llr if hasattr(dataset, "llr") else np.asarray(dataset)
    if llr.shape[0] == 0:
        raise BoundsError("empty dataset")
    if not 0 <= j < g.n:
        raise BoundsError(f"bit index {j} out of range")
    if len(weight_samples) == 0:
        raise BoundsError("need at least one weight sample")
    outs = np.empty((len(weight_samples), llr.shape[0]))
    for k, wts in enumerate(weight_samples):
        bits = hard_decision(decode(llr, wts, g))
        outs[k] = 1.0 - 2.0 * bits[:, j]
    return rademacher_from_outputs(outs, sigma_draws, seed)


# --- figure data ------------------------------------------------------------------


FIG2_GRIDS = {
    "m": [int(v) for v in np.unique(np.round(np.logspace(4, 8, 17)))],
    "T": list(range(1, 51)),
    "n": [int(v) for v in np.unique(np.round(np.logspace(2, 4, 17)))],
    "d_v": list(range(2, 21)),
}


def fig2_curves(anchor=None, grids=None) -> dict:
    """Regular-code bound swept over each of ``m``, ``T``, ``n``, ``d_v`` around ``anchor``."""
    anchor = {**FIG2_ANCHOR, **(anchor or {})}
    grids = {**FIG2_GRIDS, **(grids or {})}
    curves = {}
    for name in ("m", "T", "n", "d_v"):
        rows = []
        for value in grids[name]:
            inp = BoundInputs(**{**anchor, name: value})
            rep = theorem1_rhs(inp)
            rows.append({**{k: getattr(inp, k) for k in ("n", "d_v", "T", "m", "w", "b_lambda", "delta")}, **rep.terms, "total": rep.total})
        curves[name] = rows
    return curves


def fig3_curves(betas=FIG3_BETAS, grid=None, anchor=None) -> tuple[list, list]:
    """Per-``(beta, b_lambda)`` decomposition of phi and the per-``beta`` optimum."""
    anchor = {**FIG2_ANCHOR, **(anchor or {})}
    points, optima = [], []
    for beta in betas:
        rep = theorem3_rhs(BoundInputs(**{**anchor, "beta": float(beta)}), grid)
        for row in rep.extra["curve"]:
            points.append({"beta": float(beta), **row})
        optima.append({
            "beta": float(beta),
            "b_lambda_star": rep.extra["b_lambda_star"],
            "complexity": rep.terms["complexity"],
            "probability": rep.terms["probability"],
            "total": rep.total,
        })
    return points, optima


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return "" if v is None else str(v)


def write_rows(rows: list, path) -> None:
    if not rows:
        raise BoundsError("no rows to write")
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([fmt(r[c]) for c in cols])
