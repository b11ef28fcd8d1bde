"""Histogram-entropy kernels with a numba fast path and a pure-numpy fallback.

Adjacency construction needs marginal and pairwise joint entropies over all
ordered node pairs, which is O(N^2 * n) histogram work and dominates runtime
for large universes. The numba path JIT-compiles that loop; the numpy path
computes identical values with per-pair vectorized ops.

Backend selection: environment variable ``DIFFSTOCK_BACKEND`` set to
``numba``, ``numpy``, or ``auto`` (default). ``auto`` picks numba when it is
importable. Forcing ``numba`` without numba installed raises at import of the
kernel, not silently.

Both backends accumulate -p*ln(p) over occupied cells in ascending cell
order, so the degenerate identities (joint entropy of a constant signal with
y equals the entropy of y, bitwise) hold within either backend.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

_ENV_VAR = "DIFFSTOCK_BACKEND"


def backend_name() -> str:
    """Resolve the active kernel backend from the environment."""
    choice = os.environ.get(_ENV_VAR, "auto").lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(
            f"{_ENV_VAR} must be 'auto', 'numba', or 'numpy', got {choice!r}"
        )
    if choice == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if choice == "numba" and not HAVE_NUMBA:
        raise RuntimeError(f"{_ENV_VAR}=numba but numba is not installed")
    return choice


def bin_codes(values: np.ndarray, bins: int) -> np.ndarray:
    """Quantize each row into equal-width bins over the row's own [min, max].

    values: (N, n) float64. Returns (N, n) int64 codes in [0, bins).
    A constant row maps to a single code (0).
    """
    values = np.asarray(values, dtype=np.float64)
    lo = values.min(axis=1, keepdims=True)
    hi = values.max(axis=1, keepdims=True)
    span = hi - lo
    # Constant rows: span 0 -> (values - lo) is 0, so every sample lands in bin 0.
    safe = np.where(span > 0.0, span, 1.0)
    codes = np.floor((values - lo) / safe * bins).astype(np.int64)
    np.clip(codes, 0, bins - 1, out=codes)
    return codes


def _entropy_from_counts(counts: np.ndarray, n: int) -> float:
    """Shannon entropy (nats) of a count vector, occupied cells only."""
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _marginal_entropies_numpy(codes: np.ndarray, bins: int) -> np.ndarray:
    n_nodes, n = codes.shape
    out = np.empty(n_nodes)
    for i in range(n_nodes):
        out[i] = _entropy_from_counts(np.bincount(codes[i], minlength=bins), n)
    return out


def _joint_entropy_matrix_numpy(codes: np.ndarray, bins: int) -> np.ndarray:
    n_nodes, n = codes.shape
    out = np.zeros((n_nodes, n_nodes))
    for i in range(n_nodes):
        base = codes[i] * bins
        for j in range(i, n_nodes):
            counts = np.bincount(base + codes[j], minlength=bins * bins)
            h = _entropy_from_counts(counts, n)
            out[i, j] = h
            out[j, i] = h
    return out


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _entropy_one_numba(codes_row, bins, n):
        counts = np.zeros(bins, dtype=np.int64)
        for k in range(n):
            counts[codes_row[k]] += 1
        h = 0.0
        for b in range(bins):
            if counts[b] > 0:
                p = counts[b] / n
                h -= p * np.log(p)
        return h

    @njit(cache=True)
    def _marginal_entropies_numba(codes, bins):
        n_nodes, n = codes.shape
        out = np.empty(n_nodes)
        for i in range(n_nodes):
            out[i] = _entropy_one_numba(codes[i], bins, n)
        return out

    @njit(cache=True, parallel=True)
    def _joint_entropy_matrix_numba(codes, bins):
        n_nodes, n = codes.shape
        out = np.zeros((n_nodes, n_nodes))
        for i in prange(n_nodes):
            counts = np.zeros(bins * bins, dtype=np.int64)
            for j in range(i, n_nodes):
                counts[:] = 0
                for k in range(n):
                    counts[codes[i, k] * bins + codes[j, k]] += 1
                h = 0.0
                for c in range(bins * bins):
                    if counts[c] > 0:
                        p = counts[c] / n
                        h -= p * np.log(p)
                out[i, j] = h
                out[j, i] = h
        return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def marginal_entropies(codes: np.ndarray, bins: int) -> np.ndarray:
    """Per-row Shannon entropy (nats) of quantized signals, shape (N,)."""
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    if backend_name() == "numba":
        return _marginal_entropies_numba(codes, bins)
    return _marginal_entropies_numpy(codes, bins)


def joint_entropy_matrix(codes: np.ndarray, bins: int) -> np.ndarray:
    """Symmetric (N, N) matrix of pairwise joint entropies (nats).

    Entry (i, j) is the entropy of the 2-D histogram of (codes[i], codes[j])
    pairs; the diagonal equals the marginal entropies.
    """
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    if backend_name() == "numba":
        return _joint_entropy_matrix_numba(codes, bins)
    return _joint_entropy_matrix_numpy(codes, bins)
