import numpy as np
import pytest

from pitchnet.audio import AudioBuffer
from pitchnet.bins import BinGrid
from pitchnet.data import synth_corpus
from pitchnet.decode import read_track
from pitchnet.audio import write_wav
from pitchnet.inference import Estimator, predict_corpus
from pitchnet.network import init_params, tiny_config

GRID = BinGrid(32, 31.0, 40.0)


@pytest.fixture(scope="module")
def estimator():
    return Estimator(init_params(tiny_config(), seed=0), GRID)


class TestEstimator:
    def test_track_shape(self, estimator, rng):
        track = estimator.estimate(AudioBuffer(rng.standard_normal(8000), 8000))
        assert len(track) == 101
        np.testing.assert_allclose(track.times[:3], [0.0, 0.01, 0.02])
        assert np.all((track.periodicity >= 0) & (track.periodicity <= 1))
        assert track.f0.min() >= GRID.fmin and track.f0.max() <= GRID.fmax

    def test_resamples(self, estimator, rng):
        track = estimator.estimate(AudioBuffer(rng.standard_normal(16000), 16000))
        assert len(track) == 101

    def test_threads_agree(self, rng):
        params = init_params(tiny_config(), seed=0)
        buf = AudioBuffer(rng.standard_normal(40000), 8000)
        one = Estimator(params, GRID, chunk_frames=32).estimate(buf)
        four = Estimator(params, GRID, threads=4, chunk_frames=32).estimate(buf)
        np.testing.assert_array_equal(one.f0, four.f0)
        np.testing.assert_array_equal(one.periodicity, four.periodicity)

    def test_chunking_invariant(self, rng):
        params = init_params(tiny_config(), seed=0)
        buf = AudioBuffer(rng.standard_normal(20000), 8000)
        a = Estimator(params, GRID, chunk_frames=7).estimate(buf)
        b = Estimator(params, GRID, chunk_frames=500).estimate(buf)
        np.testing.assert_allclose(a.periodicity, b.periodicity, rtol=1e-5, atol=1e-6)

    def test_process_file(self, estimator, tmp_path, rng):
        write_wav(tmp_path / "a.wav", AudioBuffer(rng.standard_normal(4000), 8000))
        assert estimator.process_file(tmp_path / "a.wav", tmp_path / "a.csv") == 0.5
        assert len(read_track(tmp_path / "a.csv")) == 51

    def test_invalid(self):
        params = init_params(tiny_config(), seed=0)
        for kwargs in ({"decoder": "viterbi"}, {"periodicity": "x"}, {"threshold": 2.0}, {"hop_ms": 0}, {"threads": 0}):
            with pytest.raises(ValueError):
                Estimator(params, GRID, **kwargs)

    def test_hop_must_match_corpus(self, estimator):
        clips = synth_corpus(1, seed=0, duration=1.0)
        assert len(predict_corpus(estimator, clips).f0) == len(clips[0].pitch)
        with pytest.raises(ValueError):
            predict_corpus(Estimator(estimator.params, GRID, hop_ms=5), clips)
