import struct

import numpy as np
import pytest

import selab


def seb_bytes(data, hop=320, rate=16000, version=1, magic=b"SEB1"):
    layers, frames, dim = data.shape
    header = magic + struct.pack("<6I", version, layers, frames, dim, hop, rate)
    return header + data.astype("<f4").tobytes()


def test_encode_matches_byte_layout():
    data = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4) / 7
    assert selab.encode_seb(data, hop_samples=320, sample_rate=16000) == seb_bytes(data)


def test_decode_reads_header_and_layer_major_payload():
    data = np.random.default_rng(0).standard_normal((13, 5, 6)).astype(np.float32)
    out = selab.decode_seb(seb_bytes(data, hop=160, rate=8000))
    assert out["hop_samples"] == 160
    assert out["sample_rate"] == 8000
    np.testing.assert_array_equal(out["data"], data)


def test_file_round_trip(tmp_path):
    data = np.random.default_rng(1).standard_normal((4, 49, 64)).astype(np.float32)
    path = tmp_path / "clip.seb"
    selab.save_embeddings(str(path), data)
    assert path.read_bytes() == seb_bytes(data)
    back = selab.load_embeddings(str(path))
    np.testing.assert_array_equal(back["data"], data)


@pytest.mark.parametrize(
    "payload",
    [
        seb_bytes(np.zeros((1, 2, 3), np.float32), magic=b"SEB2"),
        seb_bytes(np.zeros((1, 2, 3), np.float32), version=2),
        seb_bytes(np.zeros((1, 2, 3), np.float32))[:-1],
        seb_bytes(np.zeros((1, 2, 3), np.float32)) + b"\0",
        seb_bytes(np.zeros((1, 2, 3), np.float32))[:10],
        seb_bytes(np.full((1, 2, 3), np.nan, np.float32)),
    ],
    ids=["magic", "version", "truncated", "trailing", "short-header", "nan"],
)
def test_malformed_files_are_rejected(payload):
    with pytest.raises(selab.FormatError):
        selab.decode_seb(payload)


def test_missing_file_raises():
    with pytest.raises(selab.SelabError):
        selab.load_embeddings("/nonexistent/clip.seb")


def test_frame_count_matches_exporter_grid():
    for n in (400, 16000, 16719, 48000):
        assert selab.frame_count(n) == (n - 400) // 320 + 1


def numpy_sisdr(est, ref):
    est = est.astype(np.float64)
    ref = ref.astype(np.float64)
    target = (est @ ref) / (ref @ ref) * ref
    return 10 * np.log10((target @ target) / ((est - target) @ (est - target)))


def test_stft_round_trip_interior():
    x = np.random.default_rng(2).uniform(-1, 1, 16000).astype(np.float32)
    spec = selab.stft(x)
    assert spec.shape == (49, 257)
    y = selab.istft(spec)
    assert y.shape == (15760,)
    assert numpy_sisdr(y[400:-400], x[400:15360]) > 40


def test_sisdr_unit_example():
    assert selab.sisdr(np.array([1, 1], np.float32), np.array([1, 0], np.float32)) == 0.0


def test_sisdr_agrees_with_numpy():
    rng = np.random.default_rng(3)
    ref = rng.standard_normal(8000).astype(np.float32)
    est = ref + 0.3 * rng.standard_normal(8000).astype(np.float32)
    assert selab.sisdr(est, ref) == pytest.approx(numpy_sisdr(est, ref), abs=1e-6)


def test_lag_correlation_of_identical_frames():
    frames = np.tile(np.sin(np.arange(32) * 0.3), (100, 1)).astype(np.float32)
    values, skipped = selab.lag_correlation(frames, 60.0)
    assert skipped == 0
    assert len(values) == 97
    np.testing.assert_allclose(values, 1.0, atol=1e-12)
    np.testing.assert_array_equal(selab.lag_distance(frames, 400.0), 0.0)


def test_bad_lag_is_a_config_error():
    with pytest.raises(selab.ConfigError):
        selab.lag_correlation(np.ones((10, 4), np.float32), 30.0)


def test_box_stats_median():
    assert selab.box_stats([3.0, 1.0, 2.0])["median"] == 2.0


def test_manifest_stems(tmp_path):
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("a/clean.wav\tb/noise.wav\t-5\n")
    (stem, clean, noise), = selab.manifest_stems(str(manifest))
    assert clean.endswith("clean.wav")
    assert noise.endswith("noise.wav")
    assert stem
