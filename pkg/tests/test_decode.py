import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pitchnet.bins import CREPE_GRID, DEFAULT_GRID, BinGrid
from pitchnet.data import synth_corpus
from pitchnet.decode import (
    COARSE_THRESHOLDS,
    PitchTrack,
    Posteriorgram,
    decode_argmax,
    decode_local_expected_value,
    f1_at_thresholds,
    periodicity_entropy,
    periodicity_max,
    read_track,
    search_threshold,
    voicing,
    write_track,
)
from pitchnet.evaluation import voicing_f1

SMALL = BinGrid(50, 100.0, 20.0)


def rows(*dists, grid=DEFAULT_GRID):
    return Posteriorgram(np.array(dists, dtype=np.float64), grid)


def one_hot(k, p=1440):
    row = np.zeros(p)
    row[k] = 1.0
    return row


def random_posteriorgram(rng, n, grid=SMALL, sharpness=3.0):
    logits = rng.standard_normal((n, grid.num_bins)) * sharpness
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    return Posteriorgram(probs / probs.sum(axis=1, keepdims=True), grid)


class TestPosteriorgram:
    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            Posteriorgram(np.full((1, 50), 0.1), SMALL)

    def test_rejects_wrong_width(self):
        with pytest.raises(ValueError):
            Posteriorgram(np.full((1, 40), 1 / 40), SMALL)


class TestArgmax:
    def test_one_hot(self):
        assert decode_argmax(rows(one_hot(321)))[0] == DEFAULT_GRID.center(321)

    def test_uniform_goes_to_lowest(self):
        assert decode_argmax(rows(np.full(1440, 1 / 1440)))[0] == DEFAULT_GRID.center(0)

    def test_two_equal_peaks(self):
        row = np.zeros(1440)
        row[[10, 900]] = 0.5
        assert decode_argmax(rows(row))[0] == DEFAULT_GRID.center(10)


class TestLocalExpectedValue:
    @pytest.mark.parametrize("window", [1, 5, 19])
    def test_one_hot(self, window):
        for k in (0, 8, 700, 1439):
            assert decode_local_expected_value(rows(one_hot(k)), window)[0] == pytest.approx(DEFAULT_GRID.center(k), rel=1e-12)

    def test_symmetric_triangle(self):
        row = np.zeros(1440)
        row[495:506] = 6 - np.abs(np.arange(-5, 6))
        row /= row.sum()
        assert decode_local_expected_value(rows(row))[0] == pytest.approx(DEFAULT_GRID.center(500), rel=1e-14)

    def test_two_bin_closed_form(self):
        row = np.zeros(1440)
        row[100], row[101] = 0.6, 0.4
        # 31 * 2^((100.4 * 5) / 1200) = 41.42786719419... (mpmath)
        expected = DEFAULT_GRID.center(100) * 2 ** (0.4 * 5 / 1200)
        assert expected == pytest.approx(41.4278671941925, rel=1e-12)
        assert abs(decode_local_expected_value(rows(row), 19)[0] - expected) < 1e-9

    def test_mass_outside_window_ignored(self):
        row = np.zeros(1440)
        row[500], row[1200] = 0.7, 0.3
        assert decode_local_expected_value(rows(row))[0] == pytest.approx(DEFAULT_GRID.center(500), rel=1e-14)

    def test_truncated_at_edge(self):
        row = np.zeros(1440)
        row[0], row[1] = 0.5, 0.5 - 1e-9
        row[2] = 1e-9
        value = decode_local_expected_value(rows(row))[0]
        assert DEFAULT_GRID.center(0) < value < DEFAULT_GRID.center(1)

    def test_window_one_equals_argmax(self, rng):
        post = random_posteriorgram(rng, 1000)
        np.testing.assert_array_equal(decode_local_expected_value(post, 1), decode_argmax(post))

    def test_rejects_even_window(self):
        with pytest.raises(ValueError):
            decode_local_expected_value(rows(one_hot(3)), 4)

    def test_output_in_range(self, rng):
        f0 = decode_local_expected_value(random_posteriorgram(rng, 500))
        assert f0.min() >= SMALL.fmin and f0.max() <= SMALL.fmax

    def test_reduces_banding(self):
        # Ideal posteriorgrams: a 25-cent Gaussian bump at the exact pitch.
        # Requantizing onto 20-cent grids at a sweep of offsets compounds
        # quantization error for argmax more than for the local average.
        grid = DEFAULT_GRID
        f0 = np.concatenate([c.pitch[c.voiced] for c in synth_corpus(5, seed=11)])
        position = (1200 * np.log2(f0 / grid.fmin)) / grid.cents_per_bin
        bins = np.arange(grid.num_bins)
        probs = np.exp(-0.5 * ((bins[None, :] - position[:, None]) / 5.0) ** 2)
        post = Posteriorgram(probs / probs.sum(axis=1, keepdims=True), grid)
        local, peak = decode_local_expected_value(post), decode_argmax(post)
        local_err, peak_err = [], []
        for offset in np.arange(0.5, 20.0, 1.0):
            shifted = BinGrid(360, CREPE_GRID.fmin * 2 ** (offset / 1200), 20.0)
            for estimate, out in ((local, local_err), (peak, peak_err)):
                requantized = shifted.centers()[shifted.quantize(estimate)]
                out.append(np.mean(np.abs(1200 * np.log2(requantized / f0))))
        assert np.all(np.array(local_err) <= np.array(peak_err))
        assert np.mean(local_err) < np.mean(peak_err)


class TestPeriodicity:
    def test_one_hot(self):
        post = rows(one_hot(5))
        assert periodicity_max(post)[0] == 1.0
        assert periodicity_entropy(post)[0] == pytest.approx(1.0, abs=1e-12)

    def test_uniform(self):
        post = rows(np.full(1440, 1 / 1440))
        assert periodicity_max(post)[0] == pytest.approx(1 / 1440)
        assert periodicity_entropy(post)[0] == pytest.approx(0.0, abs=1e-12)

    def test_two_peaks(self):
        row = np.zeros(1440)
        row[[200, 800]] = 0.5
        post = rows(row)
        assert periodicity_max(post)[0] == 0.5
        # 1 - ln 2 / ln 1440 = 0.90468795258... (mpmath)
        assert periodicity_entropy(post)[0] == pytest.approx(0.904687952583, abs=1e-9)

    @given(arrays(np.float64, 12, elements=st.floats(0, 1)), st.floats(0, 1))
    def test_bounds_and_mixing(self, raw, lam):
        if raw.sum() <= 1e-6:
            raw = np.ones(12)
        p = raw / raw.sum()
        mixed = (1 - lam) * p + lam / 12
        grid = BinGrid(12, 100.0, 10.0)
        h = periodicity_entropy(Posteriorgram(np.stack([p, mixed]), grid))
        assert np.all((0 <= h) & (h <= 1))
        assert h[1] <= h[0] + 1e-12
        m = periodicity_max(Posteriorgram(np.stack([p, mixed]), grid))
        assert np.all((0 <= m) & (m <= 1))

    def test_entropy_extremes_only_at_extremes(self, rng):
        post = random_posteriorgram(rng, 200, sharpness=1.0)
        h = periodicity_entropy(post)
        assert np.all((h > 1e-6) & (h < 1 - 1e-6))


class TestVoicing:
    def test_strict(self):
        np.testing.assert_array_equal(voicing([0.4, 0.5, 0.6], 0.5), [False, False, True])

    def test_zero_threshold(self):
        np.testing.assert_array_equal(voicing([0.0, 1e-9, 1.0], 0.0), [False, True, True])

    def test_one_threshold(self):
        assert not voicing([0.0, 0.5, 1.0], 1.0).any()

    def test_range(self):
        with pytest.raises(ValueError):
            voicing([0.5], 1.5)


def sweep(periodicity, reference, step=1e-4):
    alphas = np.arange(0.0, 1.0 + step / 2, step)
    return f1_at_thresholds(periodicity, reference, alphas).max()


class TestThresholdSearch:
    def test_coarse_grid(self):
        assert len(COARSE_THRESHOLDS) == 19
        assert 0.0 in COARSE_THRESHOLDS and 0.9 in COARSE_THRESHOLDS and 2**-9 in COARSE_THRESHOLDS

    def test_f1_vectorized_matches_direct(self, rng):
        h = rng.random(300)
        ref = rng.random(300) < 0.6
        alphas = np.concatenate([rng.random(40), h[:10], [0.0, 1.0]])
        fast = f1_at_thresholds(h, ref, alphas)
        for a, f in zip(alphas, fast):
            assert f == pytest.approx(voicing_f1(voicing(h, a), ref)[0], rel=1e-12)

    def test_separable(self, rng):
        labels = rng.random(500) < 0.5
        alpha, f1 = search_threshold(labels.astype(float), labels)
        assert f1 == 1.0 and 0 <= alpha < 1

    def test_inverted(self, rng):
        labels = rng.random(500) < 0.6
        # periodicity is high exactly where the reference is unvoiced
        h = 0.25 + 0.5 * (~labels)
        alpha, f1 = search_threshold(h, labels)
        baseline = 2 * labels.mean() / (1 + labels.mean())
        assert f1 == pytest.approx(sweep(h, labels), abs=1e-12)
        assert f1 == pytest.approx(baseline, abs=1e-12)

    def test_never_below_coarse(self, rng):
        for _ in range(20):
            labels = rng.random(1000) < rng.uniform(0.2, 0.8)
            h = np.clip(rng.normal(0.3 + 0.4 * labels, 0.2), 0, 1)
            _, f1 = search_threshold(h, labels)
            assert f1 >= f1_at_thresholds(h, labels, COARSE_THRESHOLDS).max()

    def test_unimodal_landscape_matches_sweep(self, rng):
        for trial in range(10):
            labels = rng.random(2000) < 0.7
            h = np.clip(rng.normal(0.35 + 0.3 * labels, 0.08), 0, 1)
            _, f1 = search_threshold(h, labels)
            assert f1 >= sweep(h, labels) - 0.002

    def test_degenerate(self):
        with pytest.raises(ValueError):
            search_threshold([0.1, 0.9], [True, True])
        with pytest.raises(ValueError):
            search_threshold([0.1, 0.9], [False, False])


class TestTrackCsv:
    def test_roundtrip_six_decimals(self, tmp_path, rng):
        n = 200
        track = PitchTrack(
            np.round(np.arange(n) * 0.01, 6), np.round(rng.uniform(31, 1900, n), 6),
            np.round(rng.random(n), 6), rng.random(n) < 0.5,
        )
        write_track(tmp_path / "t.csv", track)
        back = read_track(tmp_path / "t.csv")
        for col in ("times", "f0", "periodicity", "voiced"):
            np.testing.assert_array_equal(getattr(back, col), getattr(track, col))
        write_track(tmp_path / "u.csv", back)
        assert (tmp_path / "t.csv").read_bytes() == (tmp_path / "u.csv").read_bytes()

    def test_header(self, tmp_path):
        write_track(tmp_path / "t.csv", PitchTrack([0.0], [100.0], [0.5], [True]))
        assert (tmp_path / "t.csv").read_text() == "time_sec,f0_hz,periodicity,voiced\n0.000000,100.000000,0.500000,1\n"

    def test_bad_header(self, tmp_path):
        (tmp_path / "t.csv").write_text("a,b\n")
        with pytest.raises(ValueError):
            read_track(tmp_path / "t.csv")
