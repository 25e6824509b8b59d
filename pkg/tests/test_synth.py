import numpy as np
import pytest

from unitime.data import read_csv
from unitime.synth import (
    GeneratorSpec, SynthError, default_suite, generate, generate_array, parse_generator_file, write_suite,
)


def test_clean_sinusoid_has_period_24_autocorrelation_peak():
    x = generate_array(GeneratorSpec("seasonal", 1, 2400, periods=(24.0,), noise_std=0.0))[:, 0]
    x = x - x.mean()
    ac = np.array([np.dot(x[:-k], x[k:]) / np.dot(x, x) for k in range(1, 60)])
    assert int(np.argmax(ac[:40])) + 1 == 24
    assert ac[23] > 0.98


def test_random_walk_increment_std():
    x = generate_array(GeneratorSpec("random-walk", 1, 10_001, noise_std=0.3, seed=4))
    sd = np.diff(x[:, 0]).std()
    assert abs(sd - 0.3) / 0.3 < 0.05


def test_random_walk_drift_shows_in_increment_mean():
    x = generate_array(GeneratorSpec("random-walk", 2, 10_001, trend_slope=0.05, noise_std=0.1, seed=1))
    np.testing.assert_allclose(np.diff(x, axis=0).mean(axis=0), 0.05, atol=0.005)


def test_same_seed_same_bytes(tmp_path):
    spec = GeneratorSpec("noisy-chaotic", 2, 300, seed=9)
    a = generate(spec, tmp_path / "a.csv").read_bytes()
    b = generate(spec, tmp_path / "b.csv").read_bytes()
    assert a == b


def test_channels_are_phase_shifted():
    x = generate_array(GeneratorSpec("seasonal", 3, 500, noise_std=0.0))
    assert not np.allclose(x[:, 0], x[:, 1])


def test_kinds_distinguishable_by_simple_statistics():
    season = generate_array(GeneratorSpec("seasonal", 1, 2400, periods=(24.0,), noise_std=0.1))[:, 0]
    spectrum = np.abs(np.fft.rfft(season - season.mean()))
    assert int(np.argmax(spectrum)) == 2400 // 24
    walk = generate_array(GeneratorSpec("random-walk", 1, 2400, noise_std=0.1))[:, 0]
    assert np.diff(walk).var() == pytest.approx(0.01, rel=0.1)
    assert np.diff(season).var() > 0.01 * 2


def test_default_suite_shapes(tmp_path):
    specs = write_suite(tmp_path, default_suite(0))
    assert [(s.name, s.channels, s.lookback, s.horizon, s.stride) for s in specs] == [
        ("D1", 3, 96, 48, 16), ("D2", 5, 64, 24, 8), ("D3", 2, 36, 12, 4)]
    for s in specs:
        arr = read_csv(s.csv_path, s.channels)
        assert arr.shape == (1500, s.channels)
        assert arr.shape[0] >= s.lookback + s.horizon + 100


def test_generator_file_parsing():
    specs = parse_generator_file("[x]\nkind = seasonal\nchannels = 2\nrows = 400\nperiods = 24, 12\n")
    assert specs["x"].periods == (24.0, 12.0)
    with pytest.raises(SynthError, match="unknown keys"):
        parse_generator_file("[x]\nkind = seasonal\nchannels = 2\nrows = 400\ncolour = red\n")


def test_invalid_spec():
    with pytest.raises(SynthError):
        GeneratorSpec("sawtooth", 1, 10)
    with pytest.raises(SynthError):
        GeneratorSpec("seasonal", 1, 10, periods=())
