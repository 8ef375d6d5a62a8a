"""Command-line front end: codes, datasets, training, sweeps and bounds.

Every command writes its outputs plus a ``manifest-<command>.json`` into the
output directory (``--out``, else ``$NBPGAP_OUTPUT_DIR``, else
``./nbpgap_out``).  ``nbpgap replay MANIFEST`` re-runs a command from its
manifest alone.

Exit codes: 0 success, 2 usage, 3 validation or safety failure, 4 numeric
precondition failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from . import bounds as bd
from . import code_graph as cg
from . import nbp_decoder as nbp
from . import training as tr
from .channel import ChannelError, export_csv, generate_dataset, load_dataset, save_dataset

ENV_OUTPUT_DIR = "NBPGAP_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "nbpgap_out"
MANIFEST_FORMAT = "nbpgap-manifest"
MANIFEST_VERSION = 1
SWEEP_COLUMNS = ("param", "value", "n") + tr.GAP_COLUMNS
SUMMARY_COLUMNS = ("param", "value", "n", "trials", "gap_q1", "gap_median", "gap_q3",
                   "train_ber_median", "test_ber_median", "normalized_gap_median")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_PRECONDITION = 0, 2, 3, 4


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


# --- argument plumbing ------------------------------------------------------------


def _floatlist(text: str) -> list[float]:
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _intlist(text: str) -> list[int]:
    return [int(float(t)) for t in text.replace(" ", "").split(",") if t]


def _num(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise argparse.ArgumentTypeError(f"expected an integer, got {text}")
    return int(v)


class _Builder:
    """Adds arguments either with real defaults or with ``SUPPRESS``.

    The suppressed variant reveals which flags were given explicitly, so that
    flags can override values from a ``--config`` file.
    """

    def __init__(self, suppress: bool):
        self.suppress = suppress

    def __call__(self, p, *flags, default=None, **kw):
        if self.suppress:
            kw["default"] = argparse.SUPPRESS
        else:
            kw["default"] = default
        p.add_argument(*flags, **kw)


def _train_args(add, p, T_default=3):
    add(p, "--code", default="tanner155", help="alist path or builtin code name")
    add(p, "--T", type=_int, default=T_default, help="decoding iterations")
    add(p, "--mode", choices=nbp.MODES, default="minsum")
    add(p, "--lr", type=_num, default=0.01, dest="learning_rate")
    add(p, "--max-epochs", type=_int, default=200)
    add(p, "--batch-size", type=_int, default=128)
    add(p, "--patience", type=_int, default=10)
    add(p, "--tol", type=_num, default=1e-4)
    add(p, "--seed", type=_int, default=0)
    add(p, "--m", type=_int, default=1000, help="training set size")
    add(p, "--beta", type=_num, default=None, help="noise std (overrides --snr-db)")
    add(p, "--snr-db", type=_num, default=2.0, help="Eb/N0 in dB at rate k_true/n")
    add(p, "--w-bound", type=_num, default=None)
    add(p, "--project", action="store_true", default=False)
    add(p, "--init", choices=("all_one", "uniform"), default="all_one")
    add(p, "--test-size", type=_int, default=100_000)
    add(p, "--trials", type=_int, default=10)


def _bound_args(add, p, need=("n", "d_v", "T", "m")):
    add(p, "--n", type=_int, default=None)
    add(p, "--dv", type=_num, default=None, dest="d_v")
    add(p, "--dc", type=_num, default=None, dest="d_c")
    add(p, "--kappa", type=_num, default=None)
    add(p, "--T", type=_int, default=None)
    add(p, "--m", type=_num, default=None)
    add(p, "--w", type=_num, default=bd.DEFAULT_W)
    add(p, "--b-lambda", type=_num, default=bd.DEFAULT_B_LAMBDA)
    add(p, "--delta", type=_num, default=bd.DEFAULT_DELTA)
    add(p, "--beta", type=_num, default=None)
    p.set_defaults(_required=need)


def build_parser(suppress: bool = False) -> argparse.ArgumentParser:
    add = _Builder(suppress)
    parser = argparse.ArgumentParser(prog="nbpgap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nbpgap {__version__}")
    add(parser, "--out", default=None, help=f"output directory (default ${ENV_OUTPUT_DIR} or ./{DEFAULT_OUTPUT_DIR})")
    add(parser, "--config", default=None, help="JSON file of option values; explicit flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    # code
    p_code = sub.add_parser("code", help="inspect and construct codes")
    csub = p_code.add_subparsers(dest="sub", required=True)
    p = csub.add_parser("info", help="print code parameters")
    p.add_argument("code")
    p = csub.add_parser("peg", help="progressive edge-growth construction")
    add(p, "--n", type=_int, default=None)
    add(p, "--checks", type=_int, default=None)
    add(p, "--dv", type=_int, default=None, dest="d_v")
    add(p, "--seed", type=_int, default=0)
    add(p, "--output", default=None)
    p.set_defaults(_required=("n", "checks", "d_v"))
    p = csub.add_parser("mask", help="keep a subset of columns of a parent code")
    p.add_argument("code")
    add(p, "--keep", type=_int, default=None, help="keep the first K columns")
    add(p, "--keep-list", type=_intlist, default=None, help="comma-separated column indices")
    add(p, "--output", default=None)

    # dataset
    p_ds = sub.add_parser("dataset", help="generate datasets")
    dsub = p_ds.add_subparsers(dest="sub", required=True)
    p = dsub.add_parser("gen", help="simulate all-zero codewords over BPSK/AWGN")
    add(p, "--code", default="tanner155")
    add(p, "--m", type=_int, default=1000)
    add(p, "--beta", type=_num, default=None)
    add(p, "--snr-db", type=_num, default=2.0)
    add(p, "--seed", type=_int, default=0)
    add(p, "--b-lambda", type=_num, default=None)
    add(p, "--output", default="dataset.bin")
    add(p, "--csv", action="store_true", default=False, help="also write a CSV export")

    # train / eval / gradcheck
    p = sub.add_parser("train", help="train one decoder")
    _train_args(add, p)
    add(p, "--dataset", default=None, help="training set file (default: generate from --m/--seed)")
    add(p, "--output", default="weights.bin")
    p = sub.add_parser("eval", help="BER of a checkpoint")
    add(p, "--code", default="tanner155")
    add(p, "--checkpoint", default=None)
    add(p, "--dataset", default=None)
    add(p, "--m", type=_int, default=100_000)
    add(p, "--beta", type=_num, default=None)
    add(p, "--snr-db", type=_num, default=2.0)
    add(p, "--seed", type=_int, default=0)
    p.set_defaults(_required=("checkpoint",))
    p = sub.add_parser("gradcheck", help="compare backprop with finite differences")
    add(p, "--code", default="hamming74")
    add(p, "--T", type=_int, default=2)
    add(p, "--mode", choices=nbp.MODES, default="minsum")
    add(p, "--seed", type=_int, default=0)
    add(p, "--batch", type=_int, default=4)
    add(p, "--h", type=_num, default=1e-4)
    add(p, "--tolerance", type=_num, default=1e-4)

    # sweeps
    p = sub.add_parser("gap-sweep", help="train/test gap across a parameter grid")
    _train_args(add, p)
    add(p, "--param", choices=("m", "T", "beta", "n"), default=None)
    add(p, "--grid", type=_floatlist, default=None, help="comma-separated grid values")
    add(p, "--parent", default=None, help="parent code for --param n")
    add(p, "--workers", type=_int, default=1)
    p.set_defaults(_required=("param",))

    # bounds
    p_b = sub.add_parser("bound", help="closed-form generalization bounds")
    bsub = p_b.add_subparsers(dest="sub", required=True)
    _bound_args(add, bsub.add_parser("theorem1"))
    _bound_args(add, bsub.add_parser("rate-form"), ("n", "d_v", "d_c", "kappa", "T", "m"))
    p = bsub.add_parser("theorem2")
    _bound_args(add, p, ("T", "m"))
    add(p, "--code", default=None, help="take the degree profile from a code")
    add(p, "--profile", type=_floatlist, default=None)
    p = bsub.add_parser("theorem3")
    _bound_args(add, p, ("n", "d_v", "T", "m", "beta"))
    add(p, "--grid", type=_floatlist, default=None, help="b_lambda grid (default logspace(-1, 3, 64))")
    p = bsub.add_parser("prop1")
    add(p, "--estimates", type=_floatlist, default=None)
    add(p, "--n", type=_int, default=None)
    add(p, "--m", type=_num, default=None)
    add(p, "--delta", type=_num, default=bd.DEFAULT_DELTA)
    add(p, "--half", action="store_true", default=False, help="use the 1/(2n) coefficient")
    p.set_defaults(_required=("estimates", "n", "m"))
    p = bsub.add_parser("fig2")
    for k, flag in (("n", "--n"), ("d_v", "--dv"), ("T", "--T"), ("m", "--m"), ("w", "--w"),
                    ("b_lambda", "--b-lambda"), ("delta", "--delta")):
        add(p, flag, type=_num, default=bd.FIG2_ANCHOR[k], dest=k)
    p = bsub.add_parser("fig3")
    for k, flag in (("n", "--n"), ("d_v", "--dv"), ("T", "--T"), ("m", "--m"), ("w", "--w"),
                    ("delta", "--delta")):
        add(p, flag, type=_num, default=bd.FIG2_ANCHOR[k], dest=k)
    add(p, "--betas", type=_floatlist, default=list(bd.FIG3_BETAS))
    add(p, "--grid", type=_floatlist, default=None)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    # never shadow a global --out given before the subcommand
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory for the re-run")
    return parser


def resolve(argv: list[str]) -> dict:
    """Parse ``argv``; values come from defaults, then ``--config``, then explicit flags."""
    full = vars(build_parser().parse_args(argv))
    explicit = vars(build_parser(suppress=True).parse_args(argv))
    cfg = {}
    path = explicit.get("config")
    if path:
        try:
            cfg = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(cfg) - set(full)
        if unknown:
            raise UsageError(f"unknown config keys for this command: {sorted(unknown)}")
    opts = {**full, **cfg, **explicit}
    for k in opts.get("_required", ()):
        if opts.get(k) is None:
            raise UsageError(f"missing required option --{k.replace('_', '-')}")
    return opts


# --- manifest -------------------------------------------------------------------


class Run:
    """Collects outputs of one command and writes its manifest."""

    def __init__(self, opts: dict):
        self.opts = opts
        self.outputs: list[str] = []
        self.code: dict = {}
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()
        out = opts.get("out") or os.environ.get(ENV_OUTPUT_DIR) or DEFAULT_OUTPUT_DIR
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)

    @property
    def name(self) -> str:
        sub = self.opts.get("sub")
        return self.opts["command"] + (f"-{sub}" if sub else "")

    def path(self, name: str) -> Path:
        p = Path(name)
        if not p.is_absolute():
            p = self.dir / p
        self.outputs.append(str(p.relative_to(self.dir)) if p.is_relative_to(self.dir) else str(p))
        return p

    def note_code(self, spec: str, g: cg.CodeGraph, **extra) -> None:
        self.code = {"spec": spec, "fingerprint": g.fingerprint, "n": g.n, "num_checks": g.num_checks, **extra}

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True, default=bd._json_default) + "\n")
        return p

    def finish(self) -> Path:
        config = {k: v for k, v in self.opts.items() if k not in ("out", "config")}
        manifest = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "command": self.name,
            "config": config,
            "code": self.code,
            "seed": self.opts.get("seed"),
            "tool_version": __version__,
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "outputs": self.outputs,
        }
        p = self.dir / f"manifest-{self.name}.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=bd._json_default) + "\n")
        return p


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=bd._json_default))


def _load_code(spec: str) -> cg.CodeGraph:
    try:
        return cg.load_code(spec)
    except FileNotFoundError as exc:
        raise ValidationError(str(exc)) from None


# --- commands ---------------------------------------------------------------------


def code_info(g: cg.CodeGraph) -> dict:
    vd, cd = g.var_degrees, g.check_degrees
    return {
        "n": g.n,
        "num_checks": g.num_checks,
        "k_design": g.k_design,
        "k_true": g.k_true,
        "rank": g.rank,
        "num_edges": g.num_edges,
        "var_degrees": {str(d): int(c) for d, c in zip(*np.unique(vd, return_counts=True))},
        "check_degrees": {str(d): int(c) for d, c in zip(*np.unique(cd, return_counts=True))},
        "d_v": int(vd.max()),
        "d_c": int(cd.max()) if cd.size else 0,
        "regular": g.regular,
        "girth": g_girth if math.isfinite(g_girth := cg.girth(g)) else None,
        "fingerprint": g.fingerprint,
    }


def cmd_code(run: Run) -> None:
    o = run.opts
    if o["sub"] == "info":
        g = _load_code(o["code"])
        run.note_code(o["code"], g)
        info = code_info(g)
        run.write_json("code_info.json", info)
        _emit(info)
        return
    if o["sub"] == "peg":
        g = cg.peg_construct(o["n"], o["checks"], o["d_v"], o["seed"])
        name = o["output"] or f"peg_{o['n']}_{o['checks']}_{o['d_v']}_s{o['seed']}.alist"
        run.note_code("peg", g, construction={k: o[k] for k in ("n", "checks", "d_v", "seed")})
    else:
        parent = _load_code(o["code"])
        if (o["keep"] is None) == (o["keep_list"] is None):
            raise UsageError("give exactly one of --keep and --keep-list")
        keep = list(range(o["keep"])) if o["keep"] is not None else o["keep_list"]
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            g = cg.mask_columns(parent, keep)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        name = o["output"] or f"masked_{g.n}.alist"
        run.note_code(o["code"], parent, keep=len(keep))
    path = run.path(name)
    cg.write_alist(g, path)
    _emit({"output": str(path), "n": g.n, "num_checks": g.num_checks, "num_edges": g.num_edges})


def cmd_dataset(run: Run) -> None:
    o = run.opts
    g = _load_code(o["code"])
    run.note_code(o["code"], g)
    if o["beta"] is not None:
        ds = generate_dataset(g, o["m"], beta=o["beta"], seed=o["seed"], b_lambda=o["b_lambda"])
    else:
        ds = generate_dataset(g, o["m"], snr_db=o["snr_db"], seed=o["seed"], b_lambda=o["b_lambda"])
    save_dataset(ds, run.path(o["output"]))
    if o["csv"]:
        export_csv(ds, run.path(Path(o["output"]).with_suffix(".csv").name))
    _emit(ds.header())


def _config_from(o: dict, **over) -> tr.TrainConfig:
    keys = {f for f in tr.TrainConfig.__dataclass_fields__}
    d = {k: o[k] for k in keys if k in o}
    if d.get("beta") is not None:
        d["snr_db"] = None
    d.update(over)
    return tr.TrainConfig(**d)


def cmd_train(run: Run) -> None:
    o = run.opts
    g = _load_code(o["code"])
    run.note_code(o["code"], g)
    cfg = _config_from(o)
    ds = load_dataset(o["dataset"]) if o["dataset"] else generate_dataset(g, cfg.m, beta=cfg.noise_beta(g), seed=cfg.seed)
    weights, hist = tr.train(g, ds, cfg)
    train_ber = tr.evaluate(weights, g, ds)
    ck = run.path(o["output"])
    nbp.save_checkpoint(weights, g, ck, extra={"train_ber": train_ber, "seed": cfg.seed})
    summary = {
        "checkpoint": str(ck),
        "beta": ds.beta,
        "m": ds.m,
        "train_ber": train_ber,
        "initial_loss": hist.initial_loss,
        "final_loss": hist.final_loss,
        "epochs": hist.epochs,
        "converged": hist.converged,
    }
    run.write_json("train.json", {**summary, "epoch_loss": hist.epoch_loss})
    tr.write_csv(run.path("train_history.csv"), ("epoch", "loss"),
                 [[str(i + 1), tr.fmt(v)] for i, v in enumerate(hist.epoch_loss)])
    _emit(summary)


def cmd_eval(run: Run) -> None:
    o = run.opts
    g = _load_code(o["code"])
    run.note_code(o["code"], g)
    weights, head = nbp.load_checkpoint(o["checkpoint"], g)
    if o["dataset"]:
        ds = load_dataset(o["dataset"])
    elif o["beta"] is not None:
        ds = generate_dataset(g, o["m"], beta=o["beta"], seed=o["seed"])
    else:
        ds = generate_dataset(g, o["m"], snr_db=o["snr_db"], seed=o["seed"])
    ber = tr.evaluate(weights, g, ds)
    res = {"ber": ber, "m": ds.m, "beta": ds.beta, "seed": ds.seed, "T": weights.T, "mode": weights.mode}
    run.write_json("eval.json", res)
    _emit(res)


def cmd_gradcheck(run: Run) -> int:
    o = run.opts
    g = _load_code(o["code"])
    run.note_code(o["code"], g)
    rng = np.random.default_rng([o["seed"], 1])
    w = nbp.init_weights(g, o["T"], o["mode"], init="uniform", seed=o["seed"], eps=0.5)
    llr = rng.normal(2.0, 2.0, size=(o["batch"], g.n))
    worst, skipped = tr.gradient_check(w, g, llr, h=o["h"])
    ok = worst < o["tolerance"]
    res = {"max_rel_error": worst, "skipped": skipped, "tolerance": o["tolerance"], "pass": ok}
    run.write_json("gradcheck.json", res)
    _emit(res)
    return EXIT_OK if ok else EXIT_VALIDATION


# --- sweeps -----------------------------------------------------------------------


def _sweep_point(args):
    g, cfg, trial, test_set = args
    return tr.run_trial(g, cfg, trial, test_set)


def sweep_points(o: dict) -> list[tuple[float, cg.CodeGraph, tr.TrainConfig]]:
    """Grid points of a gap sweep as ``(value, code, config)``."""
    param, grid = o["param"], o["grid"]
    if param == "n":
        parent = _load_code(o["parent"] or o["code"])
        grid = grid or [parent.n]
        pts = []
        for k in grid:
            k = int(k)
            if not 1 <= k <= parent.n:
                raise ValidationError(f"keep count {k} outside 1..{parent.n}")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                pts.append((k, cg.mask_columns(parent, range(k)), _config_from(o)))
        return pts
    g = _load_code(o["code"])
    defaults = {"m": [1000, 4000, 10000], "T": [2, 3, 4, 5, 6], "beta": [0.5, 0.75, 1.0, 1.5, 2.0]}
    grid = grid or defaults[param]
    if param == "m":
        return [(int(v), g, _config_from(o, m=int(v))) for v in grid]
    if param == "T":
        return [(int(v), g, _config_from(o, T=int(v))) for v in grid]
    return [(float(v), g, _config_from(o, beta=float(v), snr_db=None)) for v in grid]


def run_sweep(points, workers: int = 1) -> list[tr.GapReport]:
    """All (point, trial) jobs; rows come back in (point, trial) order."""
    jobs = []
    for _, g, cfg in points:
        for t in range(cfg.trials):
            jobs.append((g, cfg, t))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_point, [(g, c, t, None) for g, c, t in jobs]))
    else:
        rows, cache = [], {}
        for g, cfg, t in jobs:
            key = (g.fingerprint, cfg.noise_beta(g), cfg.test_size, cfg.seed)
            if key not in cache:
                cache.clear()
                cache[key] = tr.make_test_set(g, cfg)
            rows.append(tr.run_trial(g, cfg, t, cache[key]))
    reports, i = [], 0
    for _, g, cfg in points:
        reports.append(tr.GapReport(rows[i : i + cfg.trials], cfg.to_dict(), g.fingerprint))
        i += cfg.trials
    return reports


def cmd_gap_sweep(run: Run) -> None:
    o = run.opts
    param = o["param"]
    points = sweep_points(o)
    run.code = {"spec": o["parent"] or o["code"], "fingerprint": _load_code(o["parent"] or o["code"]).fingerprint}
    reports = run_sweep(points, o["workers"])
    rows, summary = [], []
    for (value, g, cfg), rep in zip(points, reports):
        for r in rep.rows:
            rows.append([param, tr.fmt(value), str(g.n)] + [tr.fmt(getattr(r, c)) for c in tr.GAP_COLUMNS])
        q1, med, q3 = rep.quartiles("gap")
        summary.append([param, tr.fmt(value), str(g.n), str(len(rep.rows)), tr.fmt(q1), tr.fmt(med), tr.fmt(q3),
                        tr.fmt(rep.median("train_ber")), tr.fmt(rep.median("test_ber")),
                        tr.fmt(rep.median("normalized_gap"))])
    tr.write_csv(run.path(f"gap_{param}.csv"), SWEEP_COLUMNS, rows)
    tr.write_csv(run.path(f"gap_{param}_summary.csv"), SUMMARY_COLUMNS, summary)
    medians = [rep.median("gap") for rep in reports]
    values = [p[0] for p in points]
    stats = {"param": param, "values": values, "median_gap": medians}
    if param == "T" and len(values) > 1:
        rho = spearmanr(values, medians).statistic
        stats["spearman_median_gap_vs_T"] = None if math.isnan(rho) else float(rho)
    if param == "beta":
        stats["peak_beta"] = values[int(np.nanargmax(medians))]
    if param == "n":
        curve = []
        for (value, g, cfg), rep in zip(points, reports):
            train_med = rep.median("train_ber")
            D = bd.dominant_term(g.n, float(g.var_degrees.max()), cfg.T, cfg.m)
            curve.append([str(g.n), tr.fmt(rep.median("normalized_gap")), tr.fmt(D),
                          tr.fmt(D / train_med if train_med > 0 else math.nan)])
        tr.write_csv(run.path("gap_n_normalized.csv"),
                     ("n", "normalized_gap_median", "theorem1_dominant", "theorem1_dominant_normalized"), curve)
    run.write_json(f"gap_{param}_stats.json", stats)
    _emit(stats)


# --- bounds -----------------------------------------------------------------------

_BOUND_KEYS = ("n", "d_v", "T", "m", "w", "b_lambda", "delta", "d_c", "kappa", "beta")


def _bound_inputs(o: dict, **over) -> bd.BoundInputs:
    d = {k: o.get(k) for k in _BOUND_KEYS}
    d.update(over)
    d = {k: v for k, v in d.items() if v is not None}
    d.setdefault("d_v", 1)
    d.setdefault("n", 1)
    return bd.BoundInputs(**d)


def cmd_bound(run: Run) -> None:
    o = run.opts
    kind = o["sub"]
    if kind == "theorem1":
        rep = bd.theorem1_rhs(_bound_inputs(o))
    elif kind == "rate-form":
        rep = bd.theorem1_rate_form(_bound_inputs(o))
    elif kind == "theorem2":
        if (o["code"] is None) == (o["profile"] is None):
            raise UsageError("give exactly one of --code and --profile")
        if o["code"]:
            g = _load_code(o["code"])
            run.note_code(o["code"], g)
            prof = g.var_degrees.tolist()
        else:
            prof = o["profile"]
        rep = bd.theorem2_rhs(prof, _bound_inputs(o, n=len(prof), d_v=max(prof)))
    elif kind == "theorem3":
        rep = bd.theorem3_rhs(_bound_inputs(o), o["grid"])
        bd.write_rows(rep.extra["curve"], run.path("theorem3_curve.csv"))
    elif kind == "prop1":
        val = bd.proposition1_rhs(o["estimates"] if len(o["estimates"]) > 1 else o["estimates"][0],
                                  o["n"], o["m"], o["delta"], o["half"])
        res = {"kind": "prop1", "total": val, "coefficient": "1/(2n)" if o["half"] else "1/n"}
        run.write_json("bound_prop1.json", res)
        _emit(res)
        return
    elif kind == "fig2":
        anchor = {k: o[k] for k in ("n", "d_v", "T", "m", "w", "b_lambda", "delta")}
        anchor["n"], anchor["T"] = int(anchor["n"]), int(anchor["T"])
        curves = bd.fig2_curves(anchor)
        for name, rows in curves.items():
            bd.write_rows(rows, run.path(f"fig2_{name}.csv"))
        _emit({"curves": sorted(curves), "anchor": anchor})
        return
    elif kind == "fig3":
        anchor = {k: o[k] for k in ("n", "d_v", "T", "m", "w", "delta")}
        anchor["n"], anchor["T"] = int(anchor["n"]), int(anchor["T"])
        pts, optima = bd.fig3_curves(o["betas"], o["grid"], anchor)
        bd.write_rows(pts, run.path("fig3_phi.csv"))
        bd.write_rows(optima, run.path("fig3_b_lambda_star.csv"))
        _emit({"optima": optima})
        return
    else:  # pragma: no cover - argparse restricts the choices
        raise UsageError(kind)
    out = rep.to_dict()
    if kind == "theorem3":
        out = {k: v for k, v in out.items() if k != "curve"}
    run.write_json(f"bound_{kind}.json", out)
    _emit(out)


# --- replay and dispatch ------------------------------------------------------------

COMMANDS = {
    "code": cmd_code,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "gap-sweep": cmd_gap_sweep,
    "bound": cmd_bound,
}


def execute(opts: dict) -> int:
    run = Run(opts)
    status = COMMANDS[opts["command"]](run) or EXIT_OK
    run.finish()
    return status


def replay(path, out=None) -> int:
    """Re-run the command recorded in a manifest, writing into ``out``."""
    try:
        manifest = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from None
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValidationError(f"{path}: not a run manifest")
    opts = dict(manifest["config"])
    opts["out"] = out
    code = manifest.get("code") or {}
    if code.get("spec") and code.get("spec") != "peg" and code.get("fingerprint"):
        g = _load_code(code["spec"])
        if g.fingerprint != code["fingerprint"]:
            raise ValidationError(f"code {code['spec']} no longer matches the manifest fingerprint")
    return execute(opts)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        opts = resolve(argv)
        if opts["command"] == "replay":
            return replay(opts["manifest"], opts.get("out"))
        return execute(opts)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"nbpgap: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except bd.PreconditionError as exc:
        print(f"nbpgap: numeric precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (ValidationError, cg.AlistError, cg.CodeConstructionError, ChannelError, nbp.DecoderError,
            tr.TrainingError, bd.BoundsError, OSError) as exc:
        print(f"nbpgap: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
