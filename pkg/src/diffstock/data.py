"""Loading, aligning, windowing, and synthesizing per-ticker OHLCV data.

Input format: one CSV per ticker with header ``date,open,high,low,close,volume``
(or a configured subset), dates as YYYY-MM-DD. Ingestion aligns all tickers on
the combined trading calendar, drops tickers missing more than a threshold of
dates, and forward-fills the remaining gaps.

A dataset directory holds a JSON manifest plus per-day feature dumps (binary
or CSV). The synthetic generator emits the same CSV format as real data, so
every downstream code path is identical for both.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (AlignmentError, ParseError, RangeError, ValidationError)

log = logging.getLogger(__name__)

DEFAULT_INDICATORS = ["open", "high", "low", "close", "volume"]
MANIFEST_NAME = "manifest.json"
FEATURE_DIR = "features"


@dataclass
class AlignedHistory:
    """Aligned indicator history: values[i, m, d] = indicator m of ticker i on day d."""

    tickers: list[str]
    indicators: list[str]
    dates: list[str]
    values: np.ndarray
    drop_report: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.tickers)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    def universe_fingerprint(self) -> str:
        """Stable hash of (tickers, indicators, dates); checkpoints pin this."""
        import hashlib
        blob = json.dumps(
            [self.tickers, self.indicators, self.dates], separators=(",", ":")
        ).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class IndicatorWindow:
    """Per-day lookback features for every node.

    ``features`` is the z-scored (N, tau*M) matrix fed to the model; ``raw``
    keeps the unnormalized values for edge generation. Row layout is
    indicator-major: indicator 0 over days t-tau+1..t, then indicator 1, etc.
    Each per-node per-indicator block is normalized with its own in-window
    mean and sample std (ddof=1); constant blocks become all zeros.
    """

    day_index: int
    date: str
    tau: int
    features: np.ndarray
    raw: np.ndarray
    block_means: np.ndarray
    block_stds: np.ndarray


@dataclass
class SplitSpec:
    """Chronologically ordered, non-overlapping date ranges (inclusive)."""

    train: tuple[str, str]
    validation: tuple[str, str]
    test: tuple[str, str]

    def __post_init__(self):
        ranges = [self.train, self.validation, self.test]
        for lo, hi in ranges:
            if lo > hi:
                raise ValidationError(f"split range {lo}..{hi} is reversed")
        for (_, hi), (lo, _) in zip(ranges, ranges[1:]):
            if hi >= lo:
                raise ValidationError(
                    "split ranges must be ordered train < validation < test"
                )

    def range_of(self, name: str) -> tuple[str, str]:
        try:
            return {"train": self.train, "validation": self.validation,
                    "val": self.validation, "test": self.test}[name]
        except KeyError:
            raise ValidationError(f"unknown split {name!r}") from None


@dataclass
class PlantedEdge:
    leader: int
    follower: int
    lag: int
    coupling: float


@dataclass
class SyntheticMarketSpec:
    """Synthetic market with planted lead-lag dependencies.

    Log-returns are generated at unit scale (leaders are iid standard normal;
    followers add ``coupling`` times the lagged leader return plus
    ``noise_std`` times their own standard normal noise) and scaled by
    ``base_std`` when integrated into prices. ``noise_std`` is therefore
    relative to the leader return scale. Coupling 0 is accepted and plants
    nothing.
    """

    n_nodes: int
    days: int
    edges: list[PlantedEdge] = field(default_factory=list)
    noise_std: float = 0.2
    seed: int = 0
    base_std: float = 0.02
    start_price: float = 100.0
    volume_scale: float = 1e5

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValidationError("synthetic market needs at least 2 tickers")
        if self.days < 2:
            raise ValidationError("synthetic market needs at least 2 days")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        seen = set()
        for e in self.edges:
            if not (0 <= e.leader < self.n_nodes and 0 <= e.follower < self.n_nodes):
                raise ValidationError(f"edge {e} references an unknown node")
            if e.leader == e.follower:
                raise ValidationError(f"edge {e} is a self-loop")
            if not 1 <= e.lag <= 3:
                raise ValidationError(f"edge {e}: lag must be in 1..3")
            if not 0.0 <= e.coupling <= 1.0:
                raise ValidationError(f"edge {e}: coupling must be in [0, 1]")
            if (e.leader, e.follower) in seen:
                raise ValidationError(f"duplicate planted edge {e.leader}->{e.follower}")
            seen.add((e.leader, e.follower))


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


def _read_ticker_csv(path: Path, indicators: list[str]) -> pd.DataFrame:
    """Parse one per-ticker CSV; cites file and 1-based line on bad cells."""
    try:
        df = pd.read_csv(path, dtype=str, skipinitialspace=True)
    except Exception as exc:
        raise ParseError(f"{path}: unreadable CSV ({exc})") from exc
    df.columns = [c.strip().lower() for c in df.columns]
    if "date" not in df.columns:
        raise ParseError(f"{path}: missing 'date' column")
    missing = [c for c in indicators if c not in df.columns]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")

    dates = df["date"].str.strip()
    bad = ~dates.str.match(r"^\d{4}-\d{2}-\d{2}$", na=True)
    if bad.any():
        line = int(np.argmax(bad.to_numpy())) + 2  # header is line 1
        raise ParseError(f"{path}:{line}: unparseable date {dates.iloc[line - 2]!r}")

    out = pd.DataFrame({"date": dates})
    for col in indicators:
        raw = df[col].str.strip() if df[col].dtype == object else df[col]
        values = pd.to_numeric(raw, errors="coerce")
        # empty cells are gaps to fill later; non-empty non-numeric is an error
        bad = values.isna() & raw.notna() & (raw != "")
        if bad.any():
            line = int(np.argmax(bad.to_numpy())) + 2
            raise ParseError(
                f"{path}:{line}: non-numeric {col!r} value {raw.iloc[line - 2]!r}"
            )
        out[col] = values.to_numpy(dtype=np.float64)
    return out


def ingest(paths: list[Path], indicators: list[str] | None = None,
           drop_threshold: float = 0.02) -> AlignedHistory:
    """Align per-ticker CSVs onto the combined trading calendar.

    Tickers missing more than ``drop_threshold`` of the calendar are dropped
    (reported, not fatal); remaining gaps are forward-filled, with a back-fill
    for gaps before a ticker's first observation.
    """
    indicators = list(indicators or DEFAULT_INDICATORS)
    frames: dict[str, pd.DataFrame] = {}
    for path in sorted(Path(p) for p in paths):
        ticker = path.stem.upper()
        if ticker in frames:
            raise ValidationError(f"duplicate ticker file for {ticker}")
        frames[ticker] = _read_ticker_csv(path, indicators).set_index("date")
    if not frames:
        raise AlignmentError("no input files")

    calendar = sorted(set().union(*(set(df.index) for df in frames.values())))
    if not calendar:
        raise AlignmentError("no trading dates found in any input file")

    kept, dropped = {}, {}
    for ticker, df in frames.items():
        df = df[~df.index.duplicated(keep="first")]
        aligned = df.reindex(calendar)
        missing = max(int(aligned[col].isna().sum()) for col in indicators)
        frac = missing / len(calendar)
        if frac > drop_threshold:
            dropped[ticker] = round(frac, 6)
            continue
        kept[ticker] = aligned.ffill().bfill()
    if dropped:
        log.info("dropped %d tickers over the %.1f%% missing-data threshold: %s",
                 len(dropped), 100 * drop_threshold, sorted(dropped))
    if len(kept) < 2:
        raise AlignmentError(
            f"alignment left {len(kept)} tickers; need at least 2 "
            f"(dropped: {sorted(dropped)})"
        )

    tickers = sorted(kept)
    values = np.stack([
        np.stack([kept[t][col].to_numpy(dtype=np.float64) for col in indicators])
        for t in tickers
    ])
    if not np.isfinite(values).all():
        raise AlignmentError("non-finite values remain after alignment")
    report = {"dropped": dropped, "drop_threshold": drop_threshold,
              "n_input": len(frames), "n_kept": len(tickers)}
    return AlignedHistory(tickers, indicators, list(calendar), values, report)


def write_history_csvs(history: AlignedHistory, out_dir: Path) -> list[Path]:
    """Write one CSV per ticker in the ingestion format (full precision)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, ticker in enumerate(history.tickers):
        path = out_dir / f"{ticker}.csv"
        with open(path, "w", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["date"] + history.indicators)
            for d, date in enumerate(history.dates):
                writer.writerow(
                    [date] + [repr(float(v)) for v in history.values[i, :, d]]
                )
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------


def save_dataset(history: AlignedHistory, out_dir: Path,
                 feature_format: str = "binary", extra: dict | None = None) -> Path:
    """Write manifest plus per-day feature dumps (binary .f64 or .csv)."""
    if feature_format not in ("binary", "csv"):
        raise ValidationError(f"feature_format must be binary or csv, got {feature_format!r}")
    out_dir = Path(out_dir)
    feat_dir = out_dir / FEATURE_DIR
    feat_dir.mkdir(parents=True, exist_ok=True)
    n, m, _ = history.values.shape
    for d, date in enumerate(history.dates):
        day = np.ascontiguousarray(history.values[:, :, d])
        if feature_format == "binary":
            (feat_dir / f"{date}.f64").write_bytes(day.astype("<f8").tobytes())
        else:
            with open(feat_dir / f"{date}.csv", "w", newline="\n") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["ticker"] + history.indicators)
                for i, ticker in enumerate(history.tickers):
                    writer.writerow([ticker] + [repr(float(v)) for v in day[i]])
    manifest = {
        "format_version": 1,
        "tickers": history.tickers,
        "indicators": history.indicators,
        "dates": history.dates,
        "feature_format": feature_format,
        "drop_report": history.drop_report,
        "universe_fingerprint": history.universe_fingerprint(),
    }
    manifest.update(extra or {})
    with open(out_dir / MANIFEST_NAME, "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out_dir


def load_dataset(dataset_dir: Path) -> AlignedHistory:
    """Rebuild an AlignedHistory from a dataset directory."""
    dataset_dir = Path(dataset_dir)
    manifest_path = dataset_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise ValidationError(f"{dataset_dir}: not a dataset directory (no manifest)")
    manifest = json.loads(manifest_path.read_text())
    tickers = manifest["tickers"]
    indicators = manifest["indicators"]
    dates = manifest["dates"]
    fmt = manifest.get("feature_format", "binary")
    n, m = len(tickers), len(indicators)
    values = np.empty((n, m, len(dates)))
    feat_dir = dataset_dir / FEATURE_DIR
    for d, date in enumerate(dates):
        if fmt == "binary":
            blob = (feat_dir / f"{date}.f64").read_bytes()
            values[:, :, d] = np.frombuffer(blob, dtype="<f8").reshape(n, m)
        else:
            with open(feat_dir / f"{date}.csv", newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            values[:, :, d] = [[float(v) for v in row[1:]] for row in rows]
    history = AlignedHistory(tickers, indicators, dates, values,
                             manifest.get("drop_report", {}))
    return history


def load_manifest(dataset_dir: Path) -> dict:
    return json.loads((Path(dataset_dir) / MANIFEST_NAME).read_text())


# ---------------------------------------------------------------------------
# windows, labels, splits
# ---------------------------------------------------------------------------


def make_window(history: AlignedHistory, t: int, tau: int) -> IndicatorWindow:
    """Lookback window ending at day ``t`` (inclusive), z-scored per block.

    Uses only values inside the window, so nothing after day ``t`` can leak
    into the features.
    """
    if tau < 2:
        raise ValidationError(f"lookback tau must be >= 2, got {tau}")
    if t < tau - 1 or t >= history.n_days:
        raise RangeError(
            f"day index {t} with tau={tau} outside calendar of {history.n_days} days"
        )
    n, m = history.n_nodes, len(history.indicators)
    block = history.values[:, :, t - tau + 1:t + 1]  # (N, M, tau)
    raw = block.reshape(n, m * tau).copy()

    means = block.mean(axis=2)
    stds = block.std(axis=2, ddof=1)
    constant = np.all(block == block[:, :, :1], axis=2)
    safe = np.where(constant | (stds == 0.0), 1.0, stds)
    normed = (block - means[:, :, None]) / safe[:, :, None]
    normed[constant] = 0.0
    return IndicatorWindow(
        day_index=t,
        date=history.dates[t],
        tau=tau,
        features=normed.reshape(n, m * tau).copy(),
        raw=raw,
        block_means=means,
        block_stds=stds,
    )


def make_labels(history: AlignedHistory, t: int) -> np.ndarray:
    """Next-day movement labels for day ``t``: 1 if close rises, else 0 (ties 0)."""
    if t + 1 >= history.n_days or t < 0:
        raise RangeError(f"labels for day {t} need day {t + 1} in the calendar")
    try:
        close_idx = history.indicators.index("close")
    except ValueError:
        raise ValidationError("labels require a 'close' indicator") from None
    now = history.values[:, close_idx, t]
    nxt = history.values[:, close_idx, t + 1]
    return (nxt > now).astype(np.int64)


def split_day_indices(history: AlignedHistory, splits: SplitSpec, name: str,
                      tau: int) -> list[int]:
    """Day indices usable in a split: window available and day t+1 in range.

    Requiring t+1 inside the same range keeps each split's labels inside its
    own period, so no gradient can see data from a later partition.
    """
    lo, hi = splits.range_of(name)
    out = []
    for t in range(max(tau - 1, 0), history.n_days - 1):
        if lo <= history.dates[t] <= hi and lo <= history.dates[t + 1] <= hi:
            out.append(t)
    return out


# ---------------------------------------------------------------------------
# synthetic market
# ---------------------------------------------------------------------------


def _follower_order(spec: SyntheticMarketSpec) -> list[int]:
    """Topological order of followers along planted edges; rejects cycles."""
    incoming: dict[int, list[PlantedEdge]] = {}
    for e in spec.edges:
        incoming.setdefault(e.follower, []).append(e)
    order, state = [], {}

    def visit(node: int):
        if state.get(node) == 1:
            raise ValidationError("planted edges contain a cycle")
        if state.get(node) == 2 or node not in incoming:
            return
        state[node] = 1
        for e in incoming[node]:
            visit(e.leader)
        state[node] = 2
        order.append(node)

    for node in incoming:
        visit(node)
    return order


def _returns_from_base(spec: SyntheticMarketSpec, base: np.ndarray) -> np.ndarray:
    """Apply planted couplings to unit-scale base returns (leaders unchanged)."""
    returns = base.copy()
    incoming: dict[int, list[PlantedEdge]] = {}
    for e in spec.edges:
        incoming.setdefault(e.follower, []).append(e)
    for node in _follower_order(spec):
        acc = spec.noise_std * base[node]
        for e in sorted(incoming[node], key=lambda e: e.leader):
            lagged = np.zeros(base.shape[1])
            lagged[e.lag:] = returns[e.leader, :-e.lag]
            acc = acc + e.coupling * lagged
        returns[node] = acc
    return returns


def synth_market(spec: SyntheticMarketSpec) -> AlignedHistory:
    """Generate an OHLCV history with planted directed lead-lag structure.

    Deterministic per seed: the RNG draw order is fixed (base returns, start
    jitter, range noise, volume), so equal specs give byte-identical output.
    """
    rng = np.random.default_rng(spec.seed)
    n, days = spec.n_nodes, spec.days
    base = rng.standard_normal((n, days - 1))
    jitter = rng.normal(0.0, 0.05, n)
    range_noise = np.abs(rng.standard_normal((n, days)))
    volume = rng.lognormal(math.log(spec.volume_scale), 0.5, (n, days))

    returns = _returns_from_base(spec, base)

    close = np.empty((n, days))
    close[:, 0] = spec.start_price * np.exp(jitter)
    close[:, 1:] = close[:, :1] * np.exp(np.cumsum(spec.base_std * returns, axis=1))

    open_ = np.empty_like(close)
    open_[:, 0] = close[:, 0]
    open_[:, 1:] = close[:, :-1]
    spread = 0.5 * spec.base_std * close * range_noise
    high = np.maximum(open_, close) + spread
    low = np.minimum(open_, close) - spread

    dates = [d.strftime("%Y-%m-%d")
             for d in pd.bdate_range("2020-01-01", periods=days)]
    tickers = [f"S{i:03d}" for i in range(n)]
    values = np.stack([open_, high, low, close, volume], axis=1)
    return AlignedHistory(tickers, list(DEFAULT_INDICATORS), dates, values)
