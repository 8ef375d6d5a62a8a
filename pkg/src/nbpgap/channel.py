"""BPSK over AWGN: symbols, noise, channel LLRs and (LLR, codeword) datasets.

LLR sign convention: ``llr > 0`` means bit 0 is the more likely value.  Only
the all-zero codeword is ever transmitted, so every dataset target is the
zero vector and is not stored explicitly.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .code_graph import CodeGraph

DATASET_FORMAT = "nbpgap-dataset"
DATASET_VERSION = 1
CHUNK_ROWS = 4096
TEST_SEED_SALT = 0x5EED7E57


class ChannelError(ValueError):
    pass


def modulate_bpsk(x) -> np.ndarray:
    """Map bit 0 to +1 and bit 1 to -1."""
    x = np.asarray(x)
    if x.size and not np.isin(x, (0, 1)).all():
        raise ChannelError("bits must be 0 or 1")
    return 1.0 - 2.0 * x.astype(np.float64)


def _check_beta(beta: float) -> float:
    beta = float(beta)
    if not np.isfinite(beta) or beta <= 0:
        raise ChannelError(f"noise standard deviation must be positive, got {beta}")
    return beta


def add_awgn(symbols, beta: float, rng: np.random.Generator) -> np.ndarray:
    beta = _check_beta(beta)
    symbols = np.asarray(symbols, dtype=np.float64)
    return symbols + beta * rng.standard_normal(symbols.shape)


def compute_llr(y, beta: float, b_lambda: float | None = None) -> np.ndarray:
    """Channel LLR ``2 y / beta**2``, optionally clipped to ``[-b_lambda, b_lambda]``."""
    beta = _check_beta(beta)
    llr = 2.0 * np.asarray(y, dtype=np.float64) / beta**2
    if b_lambda is not None:
        if b_lambda < 0:
            raise ChannelError("b_lambda must be non-negative")
        np.clip(llr, -b_lambda, b_lambda, out=llr)
    return llr


def snr_db_to_beta(snr_db: float, rate: float) -> float:
    """Noise std for an Eb/N0 of ``snr_db`` at code rate ``rate``.

    ``beta**2 = 1 / (2 * rate * 10**(snr_db / 10))`` with unit-energy symbols.
    """
    if not 0 < rate <= 1:
        raise ChannelError(f"code rate must lie in (0, 1], got {rate}")
    return float(np.sqrt(1.0 / (2.0 * rate * 10.0 ** (snr_db / 10.0))))


def heldout_seed(seed: int) -> int:
    """Seed of the held-out test set paired with training seed ``seed``."""
    return int(seed) ^ TEST_SEED_SALT


@dataclass(frozen=True)
class Dataset:
    """``m`` channel LLR vectors for the all-zero codeword.

    ``llr`` has shape ``(m, n)`` and holds float32 values, the same precision
    the container file uses, so a save/load cycle is lossless.
    """

    llr: np.ndarray
    beta: float
    seed: int
    b_lambda: float | None = None
    snr_db: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return int(self.llr.shape[0])

    @property
    def n(self) -> int:
        return int(self.llr.shape[1])

    @property
    def x(self) -> np.ndarray:
        return np.zeros((self.m, self.n), dtype=np.uint8)

    @property
    def pairs(self):
        zero = np.zeros(self.n, dtype=np.uint8)
        return [(row, zero) for row in self.llr]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.llr[idx], self.beta, self.seed, self.b_lambda, self.snr_db, dict(self.meta))

    def header(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "n": self.n,
            "m": self.m,
            "beta": self.beta,
            "b_lambda": self.b_lambda,
            "snr_db": self.snr_db,
            "seed": self.seed,
            "all_zero": True,
            **({"meta": self.meta} if self.meta else {}),
        }


def llr_rows(n: int, start: int, stop: int, beta: float, seed: int, b_lambda=None) -> np.ndarray:
    """Rows ``start:stop`` of the LLR stream defined by ``(n, beta, seed)``.

    Rows are drawn in fixed chunks of :data:`CHUNK_ROWS`, chunk ``c`` from
    ``default_rng([seed, c])``, so any shard of rows can be produced on its
    own and shards concatenate to the single-pass result.
    """
    beta = _check_beta(beta)
    if not 0 <= start <= stop:
        raise ChannelError("row range must satisfy 0 <= start <= stop")
    out = np.empty((stop - start, n), dtype=np.float32)
    c0, c1 = start // CHUNK_ROWS, -(-stop // CHUNK_ROWS)
    for c in range(c0, c1):
        rng = np.random.default_rng([int(seed), c])
        lo = c * CHUNK_ROWS
        hi = min(lo + CHUNK_ROWS, stop)
        y = add_awgn(np.ones((hi - lo, n)), beta, rng)
        llr = compute_llr(y, beta, b_lambda)
        a, b = max(start, lo), hi
        out[a - start : b - start] = llr[a - lo : b - lo]
    if b_lambda is not None:
        # float32 rounding must not push a clipped value past the bound
        bf = np.float32(b_lambda)
        if bf > b_lambda:
            bf = np.nextafter(bf, np.float32(0))
        np.clip(out, -bf, bf, out=out)
    return out


def generate_dataset(
    g: CodeGraph | int,
    m: int,
    beta: float | None = None,
    seed: int = 0,
    b_lambda: float | None = None,
    snr_db: float | None = None,
) -> Dataset:
    """Simulate ``m`` all-zero codewords through BPSK/AWGN.

    Exactly one of ``beta`` and ``snr_db`` must be given; ``snr_db`` is read
    as Eb/N0 at the rate ``k_true / n`` of ``g``.
    """
    if m < 1:
        raise ChannelError("m must be at least 1")
    if (beta is None) == (snr_db is None):
        raise ChannelError("give exactly one of beta and snr_db")
    if isinstance(g, CodeGraph):
        n = g.n
    else:
        n = int(g)
    if snr_db is not None:
        if not isinstance(g, CodeGraph):
            raise ChannelError("snr_db needs a code graph to fix the rate")
        beta = snr_db_to_beta(snr_db, g.rate)
    beta = _check_beta(beta)
    llr = llr_rows(n, 0, m, beta, seed, b_lambda)
    return Dataset(llr, beta, int(seed), b_lambda, snr_db)


# --- persistence --------------------------------------------------------------


def save_dataset(ds: Dataset, path) -> None:
    """Write the binary container: u32 header length, JSON header, f32 rows."""
    head = json.dumps(ds.header(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(np.ascontiguousarray(ds.llr, dtype="<f4").tobytes())


def read_container(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ChannelError(f"{path}: truncated container")
    (hlen,) = struct.unpack("<I", raw[:4])
    try:
        header = json.loads(raw[4 : 4 + hlen])
    except json.JSONDecodeError as exc:
        raise ChannelError(f"{path}: bad JSON header ({exc})") from None
    return header, raw[4 + hlen :]


def load_dataset(path) -> Dataset:
    header, body = read_container(path)
    if header.get("format") != DATASET_FORMAT:
        raise ChannelError(f"{path}: not a dataset file")
    if header.get("version") != DATASET_VERSION:
        raise ChannelError(f"{path}: unsupported dataset version {header.get('version')}")
    n, m = int(header["n"]), int(header["m"])
    llr = np.frombuffer(body, dtype="<f4")
    if llr.size != n * m:
        raise ChannelError(f"{path}: expected {n * m} floats, found {llr.size}")
    llr = llr.reshape(m, n).astype(np.float32)
    return Dataset(
        llr, float(header["beta"]), int(header["seed"]), header.get("b_lambda"),
        header.get("snr_db"), header.get("meta", {}),
    )


def export_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"llr_{i}" for i in range(ds.n)])
        for row in ds.llr:
            w.writerow([f"{v:.9g}" for v in row.tolist()])
