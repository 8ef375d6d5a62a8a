"""Training NBP weights: cross-entropy, reverse-mode gradients, Adam, gap trials.

The training loss is the per-word cross-entropy between the all-zero target
and the soft outputs ``o`` (belief that each bit is 0), averaged over the
batch.  Generalization is measured in bit error rate.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import _kernels as _k
from . import nbp_decoder as nbp
from .channel import Dataset, generate_dataset, heldout_seed, snr_db_to_beta
from .code_graph import CodeGraph
from .nbp_decoder import NbpWeights, layout_for

GAP_COLUMNS = ("trial", "m", "T", "beta", "train_ber", "test_ber", "gap", "normalized_gap", "epochs", "final_loss")


class TrainingError(ValueError):
    pass


# --- loss ---------------------------------------------------------------------


def _targets(x, shape) -> np.ndarray:
    if x is None:
        return np.zeros(shape)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and len(shape) == 2:
        x = np.broadcast_to(x[:, None], shape)
    elif x.shape == shape[::-1]:
        x = x.T
    if x.shape != shape:
        raise TrainingError(f"targets of shape {x.shape} do not match outputs {shape}")
    return x


def cross_entropy(o, x) -> float:
    """``-(1/n) sum[(1-x) log o + x log(1-o)]``; averaged over words for a batch."""
    o = np.asarray(o, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if o.shape != x.shape:
        raise TrainingError(f"shape mismatch {o.shape} vs {x.shape}")
    per_bit = -((1.0 - x) * np.log(o) + x * np.log1p(-o))
    return float(per_bit.mean())


def cross_entropy_logits(u: np.ndarray, x: np.ndarray) -> float:
    """Cross-entropy written in the logits ``u`` (edge-major ``(n, B)``).

    ``log o = -softplus(-u)`` and ``log(1-o) = -softplus(u)``; this form has
    no rounding floor near ``o = 1``.
    """
    soft = np.log1p(np.exp(-np.abs(u)))
    return float(((1.0 - x) * (np.maximum(-u, 0.0) + soft) + x * (np.maximum(u, 0.0) + soft)).mean())


def batch_loss(weights: NbpWeights, g: CodeGraph, llr, x=None) -> float:
    tr = nbp.forward(llr, weights, g, keep_trace=False)
    return cross_entropy_logits(tr.u, _targets(x, tr.u.shape))


# --- gradients ----------------------------------------------------------------


def backward(trace: nbp.ForwardTrace, weights: NbpWeights, g: CodeGraph, x=None) -> dict[str, np.ndarray]:
    """Exact gradients of the batch-mean cross-entropy.

    Min-sum is differentiated with the sign factors held fixed and the
    magnitude gradient sent to the recorded minimizing edge.  In tanh mode a
    clamped product passes no gradient.  ``beta_t`` is not trained.
    """
    lay = layout_for(g)
    weights.check_graph(g)
    if trace.T != weights.T or trace.u is None:
        raise TrainingError("trace does not come from these weights (run forward with keep_trace=True)")
    n, B = trace.u.shape
    xt = _targets(x, trace.u.shape)
    o = 1.0 / (1.0 + np.exp(-trace.u))
    g_u = (o - (1.0 - xt)) / (n * B)

    grads = {k: np.zeros_like(a) for k, a in weights.params().items()}
    llr = trace.llr
    grads["w4"] = (g_u * llr).sum(axis=1)
    g_u_e = g_u[lay.var_of_edge]
    grads["w3"] = (g_u_e * trace.p[-1]).sum(axis=1)
    g_p = g_u_e * weights.w3[:, None]

    for t in range(weights.T - 1, -1, -1):
        beta = None if weights.beta_t is None else weights.beta_t[t]
        g_v = _check_backward(lay, trace, t, g_p, weights.mode, beta)
        g_w2_tab = np.zeros((lay.E, lay.width))
        g_p = np.empty_like(g_v)
        w2_flat = nbp._w2_table(lay, weights.w2[t]).ravel()
        _k.variable_backward(
            g_v, trace.p_prev(t), llr, lay.var_of_edge, lay.others, lay.rev_others_slot,
            w2_flat, grads["w1"][t], g_w2_tab, g_p,
        )
        # p_0 = 0, so the first iteration's w2 correctly gets a zero gradient
        grads["w2"][t] = g_w2_tab.ravel()[lay.pair_slot]
    return grads


def _check_backward(lay, trace, t, g_p, mode, beta):
    v = trace.v[t]
    aux = trace.aux[t]
    g_v = np.zeros_like(v)
    if mode == "tanh":
        _k.tanh_check_backward(v, g_p, lay.check_edges, lay.check_deg, nbp.TANH_CLAMP, g_v)
        return g_v
    if mode == "scaled_minsum":
        factor = np.broadcast_to(beta[:, None], v.shape)
    elif mode == "offset_minsum":
        factor = aux.active.astype(np.float64)
    else:
        factor = np.ones_like(v)
    _k.minsum_backward(v, g_p, aux.sel, aux.sign, np.ascontiguousarray(factor), g_v)
    return g_v


def central_difference(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at array ``x``."""
    if h <= 0:
        raise TrainingError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        x0 = x[i]
        x[i] = x0 + h
        fp = f(x)
        x[i] = x0 - h
        fm = f(x)
        x[i] = x0
        out[i] = (fp - fm) / (2 * h)
    return out


def _bookkeeping(weights, g, llr):
    tr = nbp.forward(llr, weights, g)
    keys = []
    for a in tr.aux:
        for arr in (a.sel, a.sign, a.active, a.clamped):
            if arr is not None:
                keys.append(arr)
    return keys


def finite_diff_grad(weights: NbpWeights, g: CodeGraph, llr, x=None, h: float = 1e-4):
    """Central differences of the batch loss over every stored weight.

    Returns ``(grads, smooth)``: ``smooth[k]`` is False where a ``+-h`` step
    changes the min-sum argmin/sign bookkeeping, the offset activity or the
    tanh clamp, i.e. where the loss is not differentiable within the stencil.
    """
    if h <= 0:
        raise TrainingError("step h must be positive")
    base = _bookkeeping(weights, g, llr)
    grads, smooth = {}, {}
    for name, arr in weights.params().items():
        gr = np.zeros_like(arr)
        ok = np.ones(arr.shape, dtype=bool)
        for i in np.ndindex(arr.shape):
            x0 = arr[i]
            vals = []
            for step in (h, -h):
                arr[i] = x0 + step
                vals.append(batch_loss(weights, g, llr, x))
                if ok[i]:
                    now = _bookkeeping(weights, g, llr)
                    ok[i] = all(np.array_equal(a, b) for a, b in zip(base, now))
            arr[i] = x0
            gr[i] = (vals[0] - vals[1]) / (2 * h)
        grads[name], smooth[name] = gr, ok
    return grads, smooth


def gradient_check(weights, g, llr, x=None, h=1e-4, floor=1e-7) -> tuple[float, int]:
    """Max relative error between :func:`backward` and finite differences.

    Relative error is ``|a-b| / max(|a|, |b|, floor)``.  Returns the error
    and the number of weights skipped as non-smooth.
    """
    tr = nbp.forward(llr, weights, g)
    an = backward(tr, weights, g, x)
    fd, smooth = finite_diff_grad(weights, g, llr, x, h)
    worst, skipped = 0.0, 0
    for k in an:
        a, b, ok = an[k], fd[k], smooth[k]
        skipped += int((~ok).sum())
        if ok.any():
            rel = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
            worst = max(worst, float(rel[ok].max()))
    return worst, skipped


# --- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(
    weights: NbpWeights,
    grads: dict,
    state: AdamState,
    learning_rate: float = 0.01,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    project: bool = False,
) -> tuple[NbpWeights, AdamState]:
    """One bias-corrected Adam update, in place; optional projection onto ``w_bound``."""
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for k, w in weights.params().items():
        gk = grads[k]
        if gk.shape != w.shape:
            raise TrainingError(f"gradient {k} has shape {gk.shape}, weight has {w.shape}")
        m = state.m.setdefault(k, np.zeros_like(w))
        v = state.v.setdefault(k, np.zeros_like(w))
        m *= beta1
        m += (1.0 - beta1) * gk
        v *= beta2
        v += (1.0 - beta2) * gk * gk
        w -= learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
    if project:
        nbp.project(weights)
    return weights, state


# --- training loop --------------------------------------------------------------


@dataclass
class TrainConfig:
    T: int = 3
    mode: str = "minsum"
    learning_rate: float = 0.01
    max_epochs: int = 200
    batch_size: int = 128
    patience: int = 10
    tol: float = 1e-4
    seed: int = 0
    project: bool = False
    w_bound: float | None = None
    init: str = "all_one"
    snr_db: float | None = 2.0
    beta: float | None = None
    m: int = 1000
    test_size: int = 100_000
    trials: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise TrainingError("learning_rate must be positive")
        if self.trials < 1:
            raise TrainingError("trials must be at least 1")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise TrainingError("batch_size and patience must be positive, max_epochs non-negative")
        if self.project and self.w_bound is None:
            raise TrainingError("projection needs w_bound")

    def noise_beta(self, g: CodeGraph) -> float:
        if self.beta is not None:
            return float(self.beta)
        if self.snr_db is None:
            raise TrainingError("set beta or snr_db")
        return snr_db_to_beta(self.snr_db, g.rate)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise TrainingError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    epoch_loss: list = field(default_factory=list)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    epochs: int = 0
    converged: bool = False


def dataset_loss(weights: NbpWeights, g: CodeGraph, ds: Dataset, chunk: int = 8192) -> float:
    total = 0.0
    for a in range(0, ds.m, chunk):
        rows = ds.llr[a : a + chunk]
        total += batch_loss(weights, g, rows) * rows.shape[0]
    return total / ds.m


def train(g: CodeGraph, dataset: Dataset, config: TrainConfig, weights: NbpWeights | None = None):
    """Mini-batch Adam on the cross-entropy until the epoch-mean loss stalls.

    Stops after ``patience`` epochs without an improvement larger than
    ``tol`` or after ``max_epochs``.  Final weights are rounded to float32 so
    that a saved checkpoint reproduces them exactly.
    """
    if dataset.m == 0:
        raise TrainingError("empty dataset")
    if dataset.n != g.n:
        raise TrainingError(f"dataset blocklength {dataset.n} does not match code n={g.n}")
    if weights is None:
        weights = nbp.init_weights(
            g, config.T, config.mode, config.init, config.w_bound, seed=int(config.seed)
        )
    else:
        weights = weights.copy()
    shuffle_rng = np.random.default_rng([int(config.seed), 2])
    state = AdamState()
    hist = TrainHistory(initial_loss=dataset_loss(weights, g, dataset))
    best, wait = math.inf, 0
    bs = config.batch_size
    for epoch in range(config.max_epochs):
        order = shuffle_rng.permutation(dataset.m)
        total = 0.0
        for a in range(0, dataset.m, bs):
            llr = dataset.llr[order[a : a + bs]]
            tr = nbp.forward(llr, weights, g)
            total += cross_entropy_logits(tr.u, np.zeros(tr.u.shape)) * llr.shape[0]
            grads = backward(tr, weights, g)
            adam_step(
                weights, grads, state, config.learning_rate, config.adam_beta1,
                config.adam_beta2, config.adam_eps, config.project,
            )
        loss = total / dataset.m
        hist.epoch_loss.append(loss)
        hist.epochs = epoch + 1
        if best - loss > config.tol:
            best, wait = loss, 0
        else:
            wait += 1
            if wait >= config.patience:
                hist.converged = True
                break
    nbp.snap_float32(weights)
    if config.project:
        nbp.project(weights)
    hist.final_loss = dataset_loss(weights, g, dataset)
    return weights, hist


def bit_errors(weights: NbpWeights, g: CodeGraph, llr, x=None) -> int:
    o = nbp.forward(llr, weights, g, keep_trace=False).o
    xt = _targets(x, o.shape)
    return int(np.count_nonzero(nbp.hard_decision(o) != xt))


def evaluate(weights: NbpWeights, g: CodeGraph, dataset: Dataset, chunk: int = 8192) -> float:
    """Empirical BER: mean over words of (bit errors / n)."""
    if dataset.n != g.n:
        raise TrainingError(f"dataset blocklength {dataset.n} does not match code n={g.n}")
    errors = 0
    for a in range(0, dataset.m, chunk):
        errors += bit_errors(weights, g, dataset.llr[a : a + chunk])
    return errors / (dataset.m * dataset.n)


# --- gap trials ---------------------------------------------------------------


@dataclass
class TrialResult:
    trial: int
    m: int
    T: int
    beta: float
    train_ber: float
    test_ber: float
    gap: float
    normalized_gap: float
    epochs: int
    final_loss: float
    loss_history: list = field(default_factory=list)

    @property
    def normalized_defined(self) -> bool:
        return self.train_ber > 0


@dataclass
class GapReport:
    rows: list
    config: dict = field(default_factory=dict)
    code_hash: str = ""

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def quartiles(self, name: str = "gap") -> tuple[float, float, float]:
        vals = self.column(name)
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            return (math.nan,) * 3
        q = np.percentile(vals, [25, 50, 75])
        return float(q[0]), float(q[1]), float(q[2])

    def median(self, name: str = "gap") -> float:
        return self.quartiles(name)[1]

    def csv_rows(self) -> list[list[str]]:
        out = []
        for r in self.rows:
            out.append([fmt(getattr(r, c)) for c in GAP_COLUMNS])
        return out

    def to_csv(self, path) -> None:
        write_csv(path, GAP_COLUMNS, self.csv_rows())


def fmt(x) -> str:
    """Integers verbatim, floats with 9 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return f"{float(x):.9g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def make_test_set(g: CodeGraph, config: TrainConfig) -> Dataset:
    return generate_dataset(g, config.test_size, beta=config.noise_beta(g), seed=heldout_seed(config.seed))


def run_trial(g: CodeGraph, config: TrainConfig, trial: int, test_set: Dataset | None = None) -> TrialResult:
    """Fresh training set (seed + trial), train, and score on the shared test set."""
    beta = config.noise_beta(g)
    seed = int(config.seed) + trial
    train_set = generate_dataset(g, config.m, beta=beta, seed=seed)
    cfg = TrainConfig.from_dict({**config.to_dict(), "seed": seed})
    weights, hist = train(g, train_set, cfg)
    if test_set is None:
        test_set = make_test_set(g, config)
    train_ber = evaluate(weights, g, train_set)
    test_ber = evaluate(weights, g, test_set)
    gap = test_ber - train_ber
    norm = gap / train_ber if train_ber > 0 else math.nan
    return TrialResult(
        trial, config.m, config.T, beta, train_ber, test_ber, gap, norm, hist.epochs,
        hist.final_loss, hist.epoch_loss,
    )


def _trial_job(args):
    g, config, trial = args
    return run_trial(g, config, trial)


def run_gap_trials(g: CodeGraph, config: TrainConfig, workers: int = 1) -> GapReport:
    """``config.trials`` independent train/test cycles.

    With ``workers > 1`` trials run in a process pool; rows still come back
    in trial order and each one is identical to its sequential counterpart.
    """
    if workers > 1 and config.trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_trial_job, [(g, config, i) for i in range(config.trials)]))
    else:
        test_set = make_test_set(g, config)
        rows = [run_trial(g, config, i, test_set) for i in range(config.trials)]
    return GapReport(rows, config.to_dict(), g.fingerprint)
