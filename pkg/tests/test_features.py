import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vcc.errors import CorruptFileError, DimensionError, FormatError
from vcc.features import FeatureSequence, load_features, save_features


def random_fs(n, ap=3, mc=7, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureSequence((rng.uniform(size=n) > 0.5).astype(np.float32), rng.normal(5, 0.2, n),
                           rng.uniform(0, 1, (n, ap)), rng.standard_normal((n, mc)), 0.005, 22050.0)


@settings(max_examples=25)
@given(n=st.integers(0, 50), ap=st.integers(1, 6), mc=st.integers(1, 30), seed=st.integers(0, 999))
def test_roundtrip(n, ap, mc, seed):
    fs = random_fs(n, ap, mc, seed)
    back = FeatureSequence.from_bytes(fs.to_bytes())
    ref = fs.to_float32()
    for name in ("uv", "lf0", "ap", "mcep"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ref, name).reshape(getattr(back, name).shape))
    assert (back.frame_shift, back.source_rate) == (0.005, 22050.0)
    assert back.digest() == fs.digest()


def test_file_roundtrip(tmp_path):
    fs = random_fs(30)
    save_features(tmp_path / "a.vcft", fs)
    assert load_features(tmp_path / "a.vcft").to_bytes() == fs.to_bytes()
    assert not list(tmp_path.glob("*.tmp"))


def test_stream_mismatch():
    with pytest.raises(DimensionError):
        FeatureSequence(np.ones(4), np.ones(3), np.ones((4, 2)), np.ones((4, 5)), 0.005, 16000)


def test_bad_magic():
    data = bytearray(random_fs(3).to_bytes())
    data[:4] = b"XXXX"
    with pytest.raises(FormatError):
        FeatureSequence.from_bytes(bytes(data))


def test_bad_version():
    data = bytearray(random_fs(3).to_bytes())
    data[4] = 7
    with pytest.raises(FormatError):
        FeatureSequence.from_bytes(bytes(data))


@pytest.mark.parametrize("cut", [5, 30, -4])
def test_truncated(cut):
    with pytest.raises(CorruptFileError):
        FeatureSequence.from_bytes(random_fs(4).to_bytes()[:cut])


def test_as_matrix_and_replace():
    fs = random_fs(6, ap=2, mc=4)
    m = fs.as_matrix()
    assert m.shape == (6, 1 + 1 + 2 + 4)
    np.testing.assert_array_equal(m[:, 1], fs.lf0)
    other = fs.replace(lf0=fs.lf0 + 1)
    np.testing.assert_array_equal(other.uv, fs.uv)
    np.testing.assert_array_equal(other.lf0, fs.lf0 + 1)
    assert other.hop == pytest.approx(110.25)
