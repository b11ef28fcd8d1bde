"""Ingestion, windowing, labels, splits, and the synthetic market."""

import numpy as np
import pytest

from diffstock import data
from diffstock.data import (AlignedHistory, PlantedEdge, SplitSpec,
                            SyntheticMarketSpec, ingest, make_labels, make_window,
                            synth_market)
from diffstock.errors import (AlignmentError, ParseError, RangeError,
                              ValidationError)


def write_csv(path, rows, header="date,open,high,low,close,volume"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")


def simple_rows(dates, base=100.0):
    return [f"{d},{base + i},{base + i + 1},{base + i - 1},{base + i + 0.5},{1000 + i}"
            for i, d in enumerate(dates)]


DATES = [f"2021-01-{d:02d}" for d in range(1, 21)]


class TestIngest:
    def test_identical_calendars(self, tmp_path):
        write_csv(tmp_path / "AAA.csv", simple_rows(DATES))
        write_csv(tmp_path / "BBB.csv", simple_rows(DATES, base=50))
        hist = ingest(sorted(tmp_path.glob("*.csv")))
        assert hist.tickers == ["AAA", "BBB"]
        assert hist.n_days == 20
        assert hist.drop_report["dropped"] == {}

    def test_sparse_ticker_dropped_and_reported(self, tmp_path):
        write_csv(tmp_path / "AAA.csv", simple_rows(DATES))
        write_csv(tmp_path / "BBB.csv", simple_rows(DATES, base=50))
        write_csv(tmp_path / "CCC.csv", simple_rows(DATES[:19]))  # 5% missing
        hist = ingest(sorted(tmp_path.glob("*.csv")))
        assert hist.tickers == ["AAA", "BBB"]
        assert "CCC" in hist.drop_report["dropped"]

    def test_threshold_override_keeps_sparse_ticker(self, tmp_path):
        write_csv(tmp_path / "AAA.csv", simple_rows(DATES))
        write_csv(tmp_path / "CCC.csv", simple_rows(DATES[:19]))
        hist = ingest(sorted(tmp_path.glob("*.csv")), drop_threshold=0.10)
        assert hist.tickers == ["AAA", "CCC"]
        # the gap was forward-filled with the last observed value
        i = hist.tickers.index("CCC")
        assert hist.values[i, 0, -1] == hist.values[i, 0, -2]

    def test_parse_error_cites_line(self, tmp_path):
        rows = simple_rows(DATES)
        rows[35 - 2] = "2021-02-04,1,2,3,n/a,5"  # line 36 incl. header... fixed below
        write_csv(tmp_path / "AAA.csv", rows + simple_rows(
            [f"2021-02-{d:02d}" for d in range(1, 18)]))
        with pytest.raises(ParseError) as exc:
            ingest([tmp_path / "AAA.csv"])
        assert ":35:" in str(exc.value) and "n/a" in str(exc.value)

    def test_unparseable_date_rejected(self, tmp_path):
        write_csv(tmp_path / "AAA.csv", ["01/02/2021,1,2,3,4,5"])
        with pytest.raises(ParseError):
            ingest([tmp_path / "AAA.csv"])

    def test_no_files(self):
        with pytest.raises(AlignmentError):
            ingest([])

    def test_roundtrip_write_then_ingest(self, tmp_path):
        hist = synth_market(SyntheticMarketSpec(n_nodes=3, days=30, seed=4))
        data.write_history_csvs(hist, tmp_path)
        back = ingest(sorted(tmp_path.glob("*.csv")))
        assert back.tickers == hist.tickers
        assert back.dates == hist.dates
        assert np.array_equal(back.values, hist.values)


class TestDatasetDir:
    @pytest.mark.parametrize("fmt", ["binary", "csv"])
    def test_save_load_roundtrip(self, tmp_path, fmt):
        hist = synth_market(SyntheticMarketSpec(n_nodes=4, days=12, seed=1))
        data.save_dataset(hist, tmp_path / "ds", feature_format=fmt)
        back = data.load_dataset(tmp_path / "ds")
        assert back.tickers == hist.tickers
        assert back.indicators == hist.indicators
        if fmt == "binary":
            assert np.array_equal(back.values, hist.values)
        else:
            assert np.allclose(back.values, hist.values, rtol=0, atol=0)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ValidationError):
            data.load_dataset(tmp_path)


class TestWindow:
    @pytest.fixture
    def hist(self):
        return synth_market(SyntheticMarketSpec(n_nodes=3, days=40, seed=2))

    def test_block_layout_indicator_major(self, hist):
        w = make_window(hist, 10, 4)
        m = len(hist.indicators)
        assert w.raw.shape == (3, 4 * m)
        # indicator m block of node i holds days t-3..t of that indicator
        for mi in range(m):
            block = w.raw[1, mi * 4:(mi + 1) * 4]
            assert np.array_equal(block, hist.values[1, mi, 7:11])

    def test_normalization_stats(self, hist):
        w = make_window(hist, 20, 6)
        n, m = 3, len(hist.indicators)
        feats = w.features.reshape(n, m, 6)
        assert np.abs(feats.mean(axis=2)).max() < 1e-9
        stds = feats.std(axis=2, ddof=1)
        assert ((stds > 0.999) & (stds < 1.001)).all()

    def test_constant_block_becomes_zeros(self):
        values = np.ones((2, 1, 10))
        values[1, 0] = np.arange(10.0)
        hist = AlignedHistory(["A", "B"], ["close"], [f"d{i}" for i in range(10)], values)
        w = make_window(hist, 5, 3)
        assert (w.features[0] == 0.0).all()
        assert not (w.features[1] == 0.0).all()

    def test_two_point_window_convention(self):
        # closes [10, 11]: sample std (ddof=1) is 1/sqrt(2), so the block is
        # [-1/sqrt(2), +1/sqrt(2)]
        values = np.array([[[10.0, 11.0]], [[5.0, 9.0]]])
        hist = AlignedHistory(["A", "B"], ["close"], ["d0", "d1"], values)
        w = make_window(hist, 1, 2)
        s = 1.0 / np.sqrt(2.0)
        assert np.allclose(w.features[0], [-s, s], atol=1e-12)

    def test_insufficient_history(self, hist):
        with pytest.raises(RangeError):
            make_window(hist, 0, 19)

    def test_no_lookahead(self, hist):
        w0 = make_window(hist, 10, 5)
        perturbed = AlignedHistory(hist.tickers, hist.indicators, hist.dates,
                                   hist.values.copy())
        perturbed.values[:, :, 11:] += 123.0
        w1 = make_window(perturbed, 10, 5)
        assert np.array_equal(w0.features, w1.features)
        assert np.array_equal(w0.raw, w1.raw)


class TestLabels:
    def _hist(self, closes):
        values = np.asarray(closes, dtype=float)[None, None, :]
        return AlignedHistory(["A"], ["close"], [f"d{i}" for i in range(len(closes))],
                              values)

    def test_up(self):
        assert make_labels(self._hist([100.0, 101.0]), 0) == [1]

    def test_tie_is_down(self):
        assert make_labels(self._hist([100.0, 100.0]), 0) == [0]

    def test_down(self):
        assert make_labels(self._hist([100.0, 99.5]), 0) == [0]

    def test_beyond_calendar(self):
        with pytest.raises(RangeError):
            make_labels(self._hist([1.0, 2.0]), 1)


class TestSplits:
    def test_ordering_enforced(self):
        with pytest.raises(ValidationError):
            SplitSpec(("2020-01-01", "2020-06-01"), ("2020-05-01", "2020-08-01"),
                      ("2020-09-01", "2020-12-31"))

    def test_boundary_day_needs_next_day_in_range(self):
        hist = synth_market(SyntheticMarketSpec(n_nodes=2, days=30, seed=0))
        mid = hist.dates[14]
        splits = SplitSpec((hist.dates[0], mid), (hist.dates[15], hist.dates[20]),
                           (hist.dates[21], hist.dates[-1]))
        train_idx = data.split_day_indices(hist, splits, "train", tau=3)
        # day 14's labels live on day 15 (validation), so day 14 is excluded
        assert max(train_idx) == 13
        val_idx = data.split_day_indices(hist, splits, "validation", tau=3)
        assert min(val_idx) == 15 and max(val_idx) == 19


class TestSynthMarket:
    def test_deterministic_per_seed(self, tmp_path):
        spec = SyntheticMarketSpec(n_nodes=4, days=50,
                                   edges=[PlantedEdge(0, 1, 1, 0.8)], seed=9)
        a = synth_market(spec)
        b = synth_market(SyntheticMarketSpec(n_nodes=4, days=50,
                                             edges=[PlantedEdge(0, 1, 1, 0.8)], seed=9))
        assert np.array_equal(a.values, b.values)
        da, db = tmp_path / "a", tmp_path / "b"
        data.write_history_csvs(a, da)
        data.write_history_csvs(b, db)
        for pa, pb in zip(sorted(da.iterdir()), sorted(db.iterdir())):
            assert pa.read_bytes() == pb.read_bytes()

    def test_pure_coupling_copies_lagged_returns_exactly(self):
        spec = SyntheticMarketSpec(n_nodes=4, days=60,
                                   edges=[PlantedEdge(0, 2, 2, 1.0)], noise_std=0.0,
                                   seed=3)
        base = np.random.default_rng(3).standard_normal((4, 59))
        returns = data._returns_from_base(spec, base)
        assert np.array_equal(returns[2, 2:], returns[0, :-2])
        assert (returns[2, :2] == 0.0).all()

    def test_ohlc_consistency(self):
        hist = synth_market(SyntheticMarketSpec(n_nodes=3, days=40, seed=5))
        o, h, l, c = (hist.values[:, i, :] for i in range(4))
        assert (h >= np.maximum(o, c)).all()
        assert (l <= np.minimum(o, c)).all()
        assert (l > 0).all()
        assert np.array_equal(o[:, 1:], c[:, :-1])  # open is previous close

    def test_label_balance_on_random_walk(self):
        hist = synth_market(SyntheticMarketSpec(n_nodes=5, days=1200, seed=6))
        ups = np.concatenate([make_labels(hist, t) for t in range(hist.n_days - 1)])
        assert abs(ups.mean() - 0.5) < 0.05

    def test_validation(self):
        with pytest.raises(ValidationError):
            SyntheticMarketSpec(n_nodes=1, days=30)
        with pytest.raises(ValidationError):
            SyntheticMarketSpec(n_nodes=4, days=30, edges=[PlantedEdge(0, 1, 0, 0.5)])
        with pytest.raises(ValidationError):
            SyntheticMarketSpec(n_nodes=4, days=30, edges=[PlantedEdge(0, 1, 1, 1.5)])
        with pytest.raises(ValidationError):
            SyntheticMarketSpec(n_nodes=4, days=30, edges=[PlantedEdge(0, 0, 1, 0.5)])

    def test_cycle_rejected(self):
        with pytest.raises(ValidationError):
            synth_market(SyntheticMarketSpec(
                n_nodes=4, days=30, seed=0,
                edges=[PlantedEdge(0, 1, 1, 0.5), PlantedEdge(1, 0, 1, 0.5)]))

    def test_chain_allowed(self):
        hist = synth_market(SyntheticMarketSpec(
            n_nodes=4, days=30, seed=0,
            edges=[PlantedEdge(0, 1, 1, 0.5), PlantedEdge(1, 2, 1, 0.5)]))
        assert hist.n_nodes == 4

    def test_zero_coupling_allowed(self):
        spec = SyntheticMarketSpec(n_nodes=4, days=30, seed=0,
                                   edges=[PlantedEdge(0, 1, 1, 0.0)])
        assert synth_market(spec).n_days == 30
