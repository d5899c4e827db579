import csv
import io

import numpy as np
import pytest

from r2quant import analysis, r2q, rtn
from r2quant.errors import ShapeMismatch
from r2quant.tensor import GroupScheme


class TestLayerMSE:
    def test_identical(self, rng):
        layers = [rng.standard_normal((3, 4)), rng.standard_normal((2, 2))]
        assert analysis.layer_mse(layers, layers).mean == 0.0

    def test_single_layer(self):
        rep = analysis.layer_mse([np.array([[1.0, -1.0]])], [np.zeros((1, 2))])
        assert rep.mean == 1.0

    def test_mean_of_layers(self):
        a = analysis.layer_mse([np.ones((1, 2))], [np.zeros((1, 2))]).mean
        b = analysis.layer_mse([np.full((2, 2), 3.0)], [np.zeros((2, 2))]).mean
        both = analysis.layer_mse([np.ones((1, 2)), np.full((2, 2), 3.0)], [np.zeros((1, 2)), np.zeros((2, 2))])
        assert both.mean == pytest.approx((a + b) / 2)

    def test_reorder_invariant(self, rng):
        ws = [rng.standard_normal((4, 4)) for _ in range(5)]
        qs = [analysis.fake_quantize("r2q", w) for w in ws]
        fwd = analysis.layer_mse(ws, qs).mean
        rev = analysis.layer_mse(ws[::-1], qs[::-1]).mean
        assert fwd == pytest.approx(rev, rel=1e-15)
        assert all(e >= 0 for _, e in analysis.layer_mse(ws, qs).per_layer_mse)

    def test_mismatch(self):
        with pytest.raises(ShapeMismatch):
            analysis.layer_mse([np.ones((1, 2))], [np.ones((2, 1))])
        with pytest.raises(ShapeMismatch):
            analysis.layer_mse([np.ones((1, 2))], [])


class TestOccupancy:
    def test_rtn_heavy_tail(self):
        occ = analysis.occupancy(rtn.quantize_rtn([[0.01, -0.02, 0.015, 5.0]]))
        assert occ.counts.max() == 3
        assert occ.counts.shape == (1, 4)

    def test_r2q_balanced(self):
        occ = analysis.occupancy(r2q.quantize([[0.5, 0.5, -0.5, -0.5]]))
        assert sorted(occ.counts[0].tolist()) == [0, 0, 2, 2]

    def test_r2q_constant(self):
        occ = analysis.occupancy(r2q.quantize([[0.2, 0.2, 0.2]]))
        assert sorted(occ.counts[0].tolist()) == [0, 0, 0, 3]

    def test_levels_match_codebook(self, rng):
        t = r2q.quantize(rng.standard_normal((3, 16)), 8)
        occ = analysis.occupancy(t)
        w_hat = r2q.dequantize(t).reshape(-1, 8)
        for i, row in enumerate(w_hat):
            book = r2q.codebook(t, i)
            for lev, count in enumerate(occ.counts[i]):
                assert np.sum(row == book[lev]) >= count

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_counts_sum_to_group_size(self, rng, k):
        m = rng.standard_normal((4, 32))
        for t in (r2q.quantize(m, 8), rtn.quantize_rtn(m, 8, k)):
            occ = analysis.occupancy(t)
            np.testing.assert_array_equal(occ.counts.sum(axis=1), 8)
            assert np.all(occ.counts >= 0)


class TestCompressionRatio:
    def test_r2q_per_channel_4096(self):
        cr = analysis.compression_ratio((4096, 4096), GroupScheme(), "r2q")
        assert cr == (2 * 4096**2 + 2 * 32 * 4096) / (16 * 4096**2)
        assert 0.125 <= cr <= 0.130

    def test_asymptote(self):
        shape = (1, 2**20)
        assert analysis.compression_ratio(shape, GroupScheme(), "r2q") == pytest.approx(2 / 16, rel=1e-4)

    def test_rtn_16bit(self):
        cr = analysis.compression_ratio((8, 8), GroupScheme(), "rtn", k=16)
        assert cr == 1.0 + (64 * 8) / (16 * 64)

    @pytest.mark.parametrize("method", ["r2q", "rtn", "onebit"])
    def test_monotone_in_group_size(self, method):
        sizes = [1, 2, 4, 8, 16, 32, 64, -1]
        crs = [analysis.compression_ratio((16, 64), GroupScheme(g), method) for g in sizes]
        assert all(a >= b for a, b in zip(crs, crs[1:]))


class TestCompare:
    def test_four_cells(self, rng):
        m = rng.standard_normal((128, 128))
        rows = analysis.compare(m, [-1, 64], ["r2q", "rtn"])
        assert [(r.method, r.scheme) for r in rows] == [
            ("r2q", "per-channel"), ("r2q", "g64"), ("rtn", "per-channel"), ("rtn", "g64")]
        cell = {(r.method, r.scheme): r for r in rows}
        assert cell["r2q", "per-channel"].mse < cell["rtn", "per-channel"].mse
        assert cell["rtn", "g64"].stability_delta == pytest.approx(
            cell["rtn", "per-channel"].mse - cell["rtn", "g64"].mse)

    def test_constant_matrix(self):
        rows = analysis.compare(np.full((4, 8), 0.75), [-1, 4], ["r2q", "rtn"])
        for r in rows:
            assert r.mse == pytest.approx(0.0, abs=1e-20)

    def test_single_cell(self, rng):
        rows = analysis.compare(rng.standard_normal((4, 8)), [-1], ["r2q"])
        assert len(rows) == 1
        assert np.isnan(rows[0].stability_delta)

    def test_r2q_never_worse_than_coarse(self, rng):
        for dist in analysis.DISTRIBUTIONS:
            m = analysis.sample_weights(dist, (32, 64), rng=rng)
            for g in (-1, 8, 16):
                rows = analysis.compare(m, [g], ["r2q", "onebit"])
                assert rows[0].mse <= rows[1].mse * (1 + 1e-12)

    def test_csv_outputs(self, rng):
        rows = analysis.compare(rng.standard_normal((8, 16)), [-1, 8], ["r2q", "rtn-k3"])
        table = list(csv.DictReader(io.StringIO(analysis.report_csv(rows))))
        assert len(table) == 4
        assert float(table[0]["mse"]) == rows[0].mse
        long = list(csv.DictReader(io.StringIO(analysis.report_long_csv(rows))))
        assert set(long[0]) == {"method", "scheme", "layer", "metric", "value"}
        assert len(long) == 4 * 5
        assert "per-channel" in analysis.report_text(rows)


class TestSamplers:
    @pytest.mark.parametrize("dist", analysis.DISTRIBUTIONS)
    def test_deterministic(self, dist):
        a = analysis.sample_weights(dist, (3, 4), seed=7)
        b = analysis.sample_weights(dist, (3, 4), seed=7)
        np.testing.assert_array_equal(a, b)
        assert np.all(np.isfinite(a))

    def test_unknown(self):
        with pytest.raises(ValueError):
            analysis.sample_weights("cauchy", (2, 2), seed=0)

    def test_parse_method(self):
        assert analysis.parse_method("RTN-k4") == ("rtn", 4)
        with pytest.raises(ValueError):
            analysis.parse_method("gptq")
