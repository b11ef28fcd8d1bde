"""Per-day weighted directed stock graphs from indicator windows.

Edge weights combine two signal measures computed on each node's feature
vector: the edge from node i to node j is

    A[i, j] = (E_i / E_j) * (exp(S_i + S_j - S_ij) - 1)

where E is signal energy (sum of squared samples), S is the Shannon entropy
of the equal-width-binned sample distribution, and S_ij is the joint entropy
of the pair histogram. The exponent is the empirical mutual information
between the two windows, so independent signals give weight 0 and identical
signals give the largest weight for their entropy.

Histograms use each vector's own min-max equal-width bin edges; a constant
vector occupies a single bin. That makes the degenerate identities exact:
S(x, x) == S(x) and S(const, y) == S(y).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError

log = logging.getLogger(__name__)

# exp() overflows just above 709; anything near this means broken inputs,
# since binned entropies are bounded by ln(bins^2).
EXPONENT_CLAMP = 700.0


@dataclass
class EntropyConfig:
    """Histogram estimator settings for edge generation."""

    bins: int = 64
    self_loops: bool = False

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError(f"bins must be >= 2, got {self.bins}")


def signal_energy(x: np.ndarray) -> float:
    """Sum of squared samples."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum(np.abs(x) ** 2))


def entropy(x: np.ndarray, cfg: EntropyConfig | None = None) -> float:
    """Shannon entropy (nats) of the binned value distribution of ``x``."""
    cfg = cfg or EntropyConfig()
    codes = kernels.bin_codes(np.asarray(x, dtype=np.float64)[None, :], cfg.bins)
    return float(kernels.marginal_entropies(codes, cfg.bins)[0])


def joint_entropy(x: np.ndarray, y: np.ndarray,
                  cfg: EntropyConfig | None = None) -> float:
    """Joint Shannon entropy (nats) of the pair histogram of ``x`` and ``y``."""
    cfg = cfg or EntropyConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(
            f"joint_entropy: vectors of shapes {x.shape} and {y.shape}"
        )
    codes = kernels.bin_codes(np.stack([x, y]), cfg.bins)
    return float(kernels.joint_entropy_matrix(codes, cfg.bins)[0, 1])


def build_adjacency(features: np.ndarray,
                    cfg: EntropyConfig | None = None) -> np.ndarray:
    """Dense (N, N) non-negative adjacency from per-node feature vectors.

    Entries involving a zero-energy node are set to 0 rather than erroring;
    the diagonal is 0 unless ``cfg.self_loops``.
    """
    cfg = cfg or EntropyConfig()
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise DimensionError(
            f"build_adjacency: need an (N>=2, n) matrix, got {features.shape}"
        )
    codes = kernels.bin_codes(features, cfg.bins)
    marg = kernels.marginal_entropies(codes, cfg.bins)
    joint = kernels.joint_entropy_matrix(codes, cfg.bins)

    exponent = marg[:, None] + marg[None, :] - joint
    if np.any(exponent > EXPONENT_CLAMP):
        log.warning(
            "entropy exponent exceeded %.0f (max %.3g); clamping",
            EXPONENT_CLAMP, exponent.max(),
        )
        exponent = np.minimum(exponent, EXPONENT_CLAMP)
    gain = np.expm1(exponent)

    energy = np.einsum("ij,ij->i", features, features)
    alive = energy > 0.0
    safe_energy = np.where(alive, energy, 1.0)
    adj = (energy[:, None] / safe_energy[None, :]) * gain
    adj[~alive, :] = 0.0
    adj[:, ~alive] = 0.0
    np.fill_diagonal(adj, 1.0 if cfg.self_loops else 0.0)
    return adj


def row_normalize(adj: np.ndarray) -> np.ndarray:
    """Divide each row by its sum; all-zero rows fall back to a self-loop."""
    adj = np.asarray(adj, dtype=np.float64)
    sums = adj.sum(axis=1)
    out = np.where(sums[:, None] > 0.0, adj / np.where(sums == 0.0, 1.0, sums)[:, None], 0.0)
    dead = sums == 0.0
    if np.any(dead):
        out[dead, :] = 0.0
        out[dead, dead] = 1.0
    return out


def minmax_normalize(adj: np.ndarray) -> np.ndarray:
    """Rescale all entries into [0, 1] for visual inspection dumps."""
    lo, hi = adj.min(), adj.max()
    if hi == lo:
        return np.zeros_like(adj)
    return (adj - lo) / (hi - lo)


def write_adjacency_csv(adj: np.ndarray, tickers: list[str], path) -> None:
    """CSV matrix with a ticker header row and leading ticker column."""
    n = len(tickers)
    if adj.shape != (n, n):
        raise DimensionError(
            f"write_adjacency_csv: matrix {adj.shape} vs {n} tickers"
        )
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([""] + tickers)
        for ticker, row in zip(tickers, adj):
            writer.writerow([ticker] + [repr(float(v)) for v in row])


def load_adjacency_csv(path, expected_tickers: list[str] | None = None) -> np.ndarray:
    """Read a square adjacency CSV, with or without ticker headers."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DimensionError(f"{path}: empty adjacency file")
    has_header = rows[0][0] == "" or not _is_number(rows[0][-1])
    if has_header:
        header = rows[0][1:]
        body = [row[1:] for row in rows[1:]]
    else:
        header = None
        body = rows
    try:
        matrix = np.array([[float(v) for v in row] for row in body])
    except ValueError as exc:
        raise DimensionError(f"{path}: non-numeric adjacency entry ({exc})") from exc
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"{path}: adjacency must be square, got {matrix.shape}")
    if expected_tickers is not None:
        if matrix.shape[0] != len(expected_tickers):
            raise DimensionError(
                f"{path}: {matrix.shape[0]} rows for {len(expected_tickers)} tickers"
            )
        if header is not None and header != list(expected_tickers):
            raise DimensionError(f"{path}: ticker header does not match dataset order")
    return matrix


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False
